"""Relation (inferential chain) detection over question patterns.

The question's mention is collapsed to the reserved <e> token; the net scores
a pattern against a chain from the forward and backward forgetting codes of
the pattern, the tf-idf vector of the chain's word bag, and the character
trigram overlap between pattern and chain words.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import neural
from .features import (ENTITY_TOKEN, TfidfModel, char_ngram_overlap,
                       init_embedding, tokenize, transform_relation)
from .fofe import Vocab, encode, encode_reversed, project
from .kb import Chain, Kb

logger = logging.getLogger(__name__)

Span = tuple[int, int]


@dataclass
class RelationCandidate:
    chain: Chain
    rel_score: float


def make_pattern(tokens: list[str], span: Span) -> list[str]:
    """Collapse the mention span to a single <e> token."""
    s, e = span
    return tokens[:s] + [ENTITY_TOKEN] + tokens[e:]


def relation_features(pattern_tokens: list[str], chain: Chain, alpha: float,
                      vocab: Vocab, embedding: np.ndarray,
                      tfidf_rel: TfidfModel) -> np.ndarray:
    """Projected forward/backward pattern codes, chain tf-idf, overlap scalar."""
    ids = vocab.encode(pattern_tokens)
    fwd = project(encode(ids, alpha, vocab.size), embedding)
    bwd = project(encode_reversed(ids, alpha, vocab.size), embedding)
    dense = np.concatenate([
        transform_relation(tfidf_rel, chain),
        [char_ngram_overlap(" ".join(pattern_tokens), chain)],
    ])
    return np.concatenate([fwd, bwd, dense])


class RelationDetector(BaseEstimator):
    """Hinge-trained scorer of (question pattern, chain) pairs."""

    N_BLOCKS = 2

    def __init__(self, alpha=0.8, embed_dim=32, hidden=(64, 64), dropout=0.0,
                 gamma=0.1, lr=0.01, lr_decay=0.95, epochs=30, neg_cap=50,
                 tfidf_max_terms=2000, seed=0):
        self.alpha = alpha
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.dropout = dropout
        self.gamma = gamma
        self.lr = lr
        self.lr_decay = lr_decay
        self.epochs = epochs
        self.neg_cap = neg_cap
        self.tfidf_max_terms = tfidf_max_terms
        self.seed = seed

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("RelationDetector is not fitted yet")

    def _chain_dense(self, pattern_text: str, chain: Chain) -> np.ndarray:
        key = (pattern_text, chain)
        vec = self._dense_cache.get(key)
        if vec is None:
            vec = np.concatenate([
                transform_relation(self.tfidf_rel_, chain),
                [char_ngram_overlap(pattern_text, chain)],
            ])
            self._dense_cache[key] = vec
        return vec

    def fit(self, examples, kb: Kb, vocab: Vocab,
            tfidf_rel: TfidfModel | None = None) -> "RelationDetector":
        """Rank the gold chain above the other chains of the gold entity."""
        cfg = neural.TrainConfig(gamma=self.gamma, lr=self.lr, lr_decay=self.lr_decay,
                                 epochs=self.epochs, dropout=self.dropout,
                                 seed=self.seed, neg_cap=self.neg_cap)
        rng = np.random.default_rng(self.seed)
        self.vocab_ = vocab
        if tfidf_rel is None:
            from .linker import fit_kb_tfidf

            _, tfidf_rel = fit_kb_tfidf(kb, self.tfidf_max_terms)
        self.tfidf_rel_ = tfidf_rel
        self._dense_cache = {}

        self.embedding_ = init_embedding(vocab.size, self.embed_dim, rng)
        dims = [self.N_BLOCKS * self.embed_dim + tfidf_rel.dim + 1, *self.hidden, 1]
        self.net_ = neural.Mlp.init(dims, rng, dropout=self.dropout)
        self.loss_history_ = []

        items = []
        for ex in examples:
            tokens = tokenize(ex.question)
            span = ex.token_span()
            if span is None:
                logger.warning("mention span does not cover tokens, skipping: %r",
                               ex.question)
                continue
            gold = tuple(ex.chain)
            chains = kb.relations_of(ex.entity_id) if ex.entity_id in kb else set()
            if gold not in chains:
                logger.warning("gold chain %s absent from relations of %s, skipping",
                               gold, ex.entity_id)
                continue
            pattern = make_pattern(tokens, span)
            items.append((vocab.encode(pattern), " ".join(pattern), gold,
                          sorted(chains - {gold})))

        for epoch in range(self.epochs):
            lr = cfg.lr_at(epoch)
            total = 0.0
            for idx in rng.permutation(len(items)):
                ids, text, gold, negatives = items[idx]
                if not negatives:
                    continue
                chosen = negatives
                if len(chosen) > self.neg_cap:
                    pick = rng.choice(len(chosen), size=self.neg_cap, replace=False)
                    chosen = [chosen[i] for i in sorted(pick)]
                total += self._step(ids, text, gold, chosen, lr, rng)
            self.loss_history_.append(total)
        return self

    def _step(self, ids, pattern_text, gold, negatives, lr, rng):
        fwd = encode(ids, self.alpha, self.vocab_.size)
        bwd = encode_reversed(ids, self.alpha, self.vocab_.size)
        codes = [fwd, bwd]
        pattern_vec = np.concatenate([project(c, self.embedding_) for c in codes])
        batch = neural.RankingBatch(
            positive=np.concatenate([pattern_vec, self._chain_dense(pattern_text, gold)]),
            negatives=[np.concatenate([pattern_vec, self._chain_dense(pattern_text, c)])
                       for c in negatives],
        )
        result = neural.backward(self.net_, batch, self.gamma,
                                 train_mode=True, rng=rng)
        neural.sgd_step(self.net_.params, result.grads, lr)
        d = self.embed_dim
        updates = []
        for dx in [result.dx_positive, *result.dx_negatives]:
            for i, code in enumerate(codes):
                updates.append((code, dx[i * d:(i + 1) * d]))
        neural.apply_embedding_updates(self.embedding_, updates, lr)
        return result.loss

    def rel_score(self, pattern_tokens: list[str], chain: Chain) -> float:
        """Scalar similarity between a question pattern and a chain."""
        self._check_fitted()
        x = relation_features(pattern_tokens, tuple(chain), self.alpha,
                              self.vocab_, self.embedding_, self.tfidf_rel_)
        score, _ = self.net_.forward(x)
        return score

    def score_chains(self, pattern_tokens: list[str],
                     chains) -> list[RelationCandidate]:
        scored = [RelationCandidate(chain=tuple(c),
                                    rel_score=self.rel_score(pattern_tokens, tuple(c)))
                  for c in chains]
        scored.sort(key=lambda r: (-r.rel_score, r.chain))
        return scored

    def best_chain(self, pattern_tokens: list[str], chains) -> Chain | None:
        """Argmax chain; ties break toward the lexicographically smaller chain."""
        scored = self.score_chains(pattern_tokens, chains)
        return scored[0].chain if scored else None
