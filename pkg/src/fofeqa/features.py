"""Text preprocessing and fixed-size feature blocks shared by the detectors."""

from __future__ import annotations

import math
import re
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from .errors import FileFormatError, InvalidParameterError
from .fofe import Vocab

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_NON_ALNUM_RE = re.compile(r"[^a-z0-9]+")

UNK_TOKEN = "<unk>"
ENTITY_TOKEN = "<e>"


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation, keeping punctuation."""
    return _TOKEN_RE.findall(text.lower())


def tokenize_with_offsets(text: str) -> list[tuple[str, int, int]]:
    """Tokens plus their (start, end) character offsets in the original text."""
    return [(m.group().lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def normalize_name(text: str) -> str:
    """Canonical alias key: lowercased tokens joined by single spaces."""
    return " ".join(tokenize(text))


def split_predicate(predicate: str) -> list[str]:
    """Break a dotted predicate into its words, e.g. a.b.c_d -> [a, b, c, d]."""
    return [w for w in re.split(r"[._]+", predicate.lower()) if w]


def chain_words(chain: Sequence[str]) -> list[str]:
    """Pool the words of every predicate in an inferential chain."""
    words: list[str] = []
    for predicate in chain:
        words.extend(split_predicate(predicate))
    return words


def chain_text(chain: Sequence[str]) -> str:
    return " ".join(chain_words(chain))


def _trigram_set(text: str, n: int) -> set[str]:
    grams: set[str] = set()
    for word in _NON_ALNUM_RE.sub(" ", text.lower()).split():
        for i in range(len(word) - n + 1):
            grams.add(word[i : i + n])
    return grams


def trigram_jaccard(a: str, b: str, n: int = 3) -> float:
    """Jaccard similarity between within-word character n-gram sets.

    Non-alphanumeric characters act as word boundaries; words shorter than n
    contribute nothing.  Two empty sets count as identical (similarity 1).
    """
    ga, gb = _trigram_set(a, n), _trigram_set(b, n)
    union = ga | gb
    if not union:
        return 1.0
    return len(ga & gb) / len(union)


def char_ngram_overlap(question: str, chain: Sequence[str], n: int = 3) -> float:
    """Character n-gram overlap between a question and a chain's word bag."""
    return trigram_jaccard(question, chain_text(chain), n=n)


class TfidfModel:
    """Smooth-idf, L2-normalized tf-idf over token bags with a capped term index.

    idf(t) = ln((1 + n_docs) / (1 + df(t))) + 1; the index keeps the
    ``max_terms`` most document-frequent terms; terms outside the fitted index
    are dropped at transform time.
    """

    def __init__(self, max_terms: int = 2000):
        if max_terms < 1:
            raise InvalidParameterError("max_terms must be >= 1")
        self.max_terms = max_terms
        self.terms_: list[str] | None = None
        self.index_: dict[str, int] | None = None
        self.idf_: np.ndarray | None = None
        self.n_docs_: int = 0

    @property
    def dim(self) -> int:
        if self.terms_ is None:
            raise InvalidParameterError("tf-idf model is not fitted")
        return len(self.terms_)

    def fit(self, corpus: Iterable[Sequence[str]]) -> "TfidfModel":
        docs = [list(bag) for bag in corpus]
        if not docs:
            raise InvalidParameterError("tf-idf corpus must be non-empty")
        df: Counter[str] = Counter()
        for bag in docs:
            df.update(set(bag))
        ranked = sorted(df.items(), key=lambda kv: (-kv[1], kv[0]))[: self.max_terms]
        self.terms_ = [t for t, _ in ranked]
        self.index_ = {t: i for i, t in enumerate(self.terms_)}
        self.n_docs_ = len(docs)
        self.idf_ = np.array(
            [math.log((1 + self.n_docs_) / (1 + df[t])) + 1.0 for t in self.terms_],
            dtype=np.float64,
        )
        return self

    def transform(self, bag: Sequence[str]) -> np.ndarray:
        if self.terms_ is None:
            raise InvalidParameterError("tf-idf model is not fitted")
        vec = np.zeros(len(self.terms_), dtype=np.float64)
        for term, count in Counter(bag).items():
            idx = self.index_.get(term)
            if idx is not None:
                vec[idx] = count * self.idf_[idx]
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    def fit_transform(self, corpus: Iterable[Sequence[str]]) -> np.ndarray:
        docs = [list(bag) for bag in corpus]
        self.fit(docs)
        return np.stack([self.transform(bag) for bag in docs])


def fit_tfidf(corpus: Iterable[Sequence[str]], max_terms: int = 2000) -> TfidfModel:
    """Fit a tf-idf model over a corpus of token bags."""
    return TfidfModel(max_terms=max_terms).fit(corpus)


def transform_relation(model: TfidfModel, chain: Sequence[str]) -> np.ndarray:
    """tf-idf vector of the pooled word bag of an inferential chain."""
    return model.transform(chain_words(chain))


def build_vocab(kb, examples=(), extra_tokens: Sequence[str] = ()) -> Vocab:
    """Vocabulary from KB text plus question tokens, with reserved specials.

    The specials <unk> and <e> occupy the first two slots; all other tokens
    are sorted, which makes the vocabulary deterministic for a given KB and
    training set.
    """
    seen: set[str] = set()
    for entity in kb.entities.values():
        for name in entity.names:
            seen.update(tokenize(name))
        if entity.description:
            seen.update(tokenize(entity.description))
    for fact in kb.facts:
        seen.update(split_predicate(fact.predicate))
    for example in examples:
        seen.update(tokenize(example.question))
    specials = [UNK_TOKEN, ENTITY_TOKEN, *extra_tokens]
    ordered = specials + sorted(seen - set(specials))
    return Vocab(ordered, unk_token=UNK_TOKEN)


def init_embedding(vocab_size: int, dim: int, rng: np.random.Generator,
                   scale: float = 0.1) -> np.ndarray:
    if vocab_size < 1 or dim < 1:
        raise InvalidParameterError("embedding dimensions must be positive")
    return rng.uniform(-scale, scale, size=(vocab_size, dim))


def load_embeddings_text(path, vocab: Vocab, embedding: np.ndarray) -> int:
    """Overwrite embedding rows from a text file of ``token v1 .. vd`` lines.

    Tokens absent from the vocabulary are skipped; vocabulary tokens absent
    from the file keep their current (randomly initialized) rows.  Returns
    the number of rows loaded.
    """
    dim = embedding.shape[1]
    loaded = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise FileFormatError(path, line_no,
                                      f"expected {dim + 1} fields, got {len(parts)}")
            token = parts[0]
            if token not in vocab:
                continue
            try:
                embedding[vocab.id_of(token)] = [float(x) for x in parts[1:]]
            except ValueError as exc:
                raise FileFormatError(path, line_no, f"bad float: {exc}") from exc
            loaded += 1
    return loaded
