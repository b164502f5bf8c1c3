"""Entity linking: score (question context, KB entity) pairs and re-rank.

The linker net consumes four projected forgetting codes of the mention's
contexts concatenated with static entity features (quantized fact count,
tf-idf of the description, tf-idf of the pooled relation words).  Training
minimizes the pairwise hinge loss against all other entities sharing the
mention's alias; re-ranking adds the mention probability and the best
relation score per entity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import neural
from .errors import UnknownEntityError
from .features import TfidfModel, init_embedding, split_predicate, tokenize
from .fofe import FofeCode, Vocab, encode, encode_reversed, project
from .kb import FACT_BUCKETS, Kb

logger = logging.getLogger(__name__)

Span = tuple[int, int]


@dataclass
class EntityCandidate:
    entity_id: str
    link_score: float
    fact_count: int
    rerank_score: float | None = None


def context_codes(ids: list[int], span: Span, alpha: float, size: int) -> list[FofeCode]:
    """Left context codes (with/without the mention) and reversed right ones."""
    s, e = span
    return [
        encode(ids[:e], alpha, size),
        encode(ids[:s], alpha, size),
        encode_reversed(ids[s:], alpha, size),
        encode_reversed(ids[e:], alpha, size),
    ]


def build_context_features(ids: list[int], span: Span, alpha: float,
                           embedding: np.ndarray) -> np.ndarray:
    """Concatenated projections of the four context codes."""
    return np.concatenate([project(c, embedding)
                           for c in context_codes(ids, span, alpha, embedding.shape[0])])


def entity_relation_bag(kb: Kb, entity_id: str) -> list[str]:
    """Word bag pooled from the predicates of every chain of the entity."""
    predicates = sorted({p for chain in kb.relations_of(entity_id) for p in chain})
    bag: list[str] = []
    for predicate in predicates:
        bag.extend(split_predicate(predicate))
    return bag


def build_entity_features(entity_id: str, kb: Kb, tfidf_desc: TfidfModel,
                          tfidf_rel: TfidfModel) -> np.ndarray:
    """Fact-count one-hot plus description and relation tf-idf blocks."""
    entity = kb.entities.get(entity_id)
    if entity is None:
        raise UnknownEntityError(entity_id)
    desc = tokenize(entity.description) if entity.description else []
    return np.concatenate([
        kb.fact_count_feature(entity_id),
        tfidf_desc.transform(desc),
        tfidf_rel.transform(entity_relation_bag(kb, entity_id)),
    ])


def fit_kb_tfidf(kb: Kb, max_terms: int = 2000) -> tuple[TfidfModel, TfidfModel]:
    """Description model over all entity descriptions, relation model over all
    relation word bags in the KB; both deterministic for a fixed KB."""
    desc_corpus = [tokenize(e.description)
                   for e in kb.entities.values() if e.description]
    if not desc_corpus:
        desc_corpus = [[]]
    rel_corpus = [split_predicate(p) for p in sorted({f.predicate for f in kb.facts})]
    if not rel_corpus:
        rel_corpus = [[]]
    return (TfidfModel(max_terms=max_terms).fit(desc_corpus),
            TfidfModel(max_terms=max_terms).fit(rel_corpus))


class EntityLinker(BaseEstimator):
    """Hinge-trained scorer of (question contexts, entity) pairs."""

    N_BLOCKS = 4

    def __init__(self, alpha=0.95, embed_dim=32, hidden=(64, 64), dropout=0.0,
                 gamma=0.1, lr=0.01, lr_decay=0.95, epochs=30, neg_cap=50,
                 candidate_cap=100, tfidf_max_terms=2000, seed=0):
        self.alpha = alpha
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.dropout = dropout
        self.gamma = gamma
        self.lr = lr
        self.lr_decay = lr_decay
        self.epochs = epochs
        self.neg_cap = neg_cap
        self.candidate_cap = candidate_cap
        self.tfidf_max_terms = tfidf_max_terms
        self.seed = seed

    # -- features ----------------------------------------------------------

    def _entity_features(self, entity_id: str, kb: Kb) -> np.ndarray:
        cache_kb, cache = getattr(self, "_feature_cache", (None, None))
        if cache_kb is not kb:
            cache = {}
            self._feature_cache = (kb, cache)
        vec = cache.get(entity_id)
        if vec is None:
            vec = build_entity_features(entity_id, kb, self.tfidf_desc_, self.tfidf_rel_)
            cache[entity_id] = vec
        return vec

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("EntityLinker is not fitted yet")

    # -- fitting -----------------------------------------------------------

    def fit(self, examples, kb: Kb, vocab: Vocab,
            tfidf_desc: TfidfModel | None = None,
            tfidf_rel: TfidfModel | None = None) -> "EntityLinker":
        cfg = neural.TrainConfig(gamma=self.gamma, lr=self.lr, lr_decay=self.lr_decay,
                                 epochs=self.epochs, dropout=self.dropout,
                                 seed=self.seed, neg_cap=self.neg_cap)
        rng = np.random.default_rng(self.seed)
        self.vocab_ = vocab
        if tfidf_desc is None or tfidf_rel is None:
            fitted_desc, fitted_rel = fit_kb_tfidf(kb, self.tfidf_max_terms)
            tfidf_desc = tfidf_desc or fitted_desc
            tfidf_rel = tfidf_rel or fitted_rel
        self.tfidf_desc_ = tfidf_desc
        self.tfidf_rel_ = tfidf_rel
        self._feature_cache = (None, None)

        self.embedding_ = init_embedding(vocab.size, self.embed_dim, rng)
        dense_dim = FACT_BUCKETS + tfidf_desc.dim + tfidf_rel.dim
        dims = [self.N_BLOCKS * self.embed_dim + dense_dim, *self.hidden, 1]
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
            mention = " ".join(tokens[span[0]:span[1]])
            candidates = kb.lookup_entities(mention)
            if not candidates:
                logger.warning("mention %r has no KB match, skipping item", mention)
                continue
            negatives = sorted(candidates - {ex.entity_id})
            codes = context_codes(vocab.encode(tokens), span, self.alpha, vocab.size)
            items.append((codes, ex.entity_id, negatives))

        for epoch in range(self.epochs):
            lr = cfg.lr_at(epoch)
            total = 0.0
            for idx in rng.permutation(len(items)):
                codes, gold, negatives = items[idx]
                if not negatives:
                    continue
                chosen = negatives
                if len(chosen) > self.neg_cap:
                    pick = rng.choice(len(chosen), size=self.neg_cap, replace=False)
                    chosen = [chosen[i] for i in sorted(pick)]
                total += self._step(codes, gold, chosen, kb, lr, rng)
            self.loss_history_.append(total)
        return self

    def _step(self, codes, gold, negatives, kb, lr, rng):
        ctx = np.concatenate([project(c, self.embedding_) for c in codes])
        batch = neural.RankingBatch(
            positive=np.concatenate([ctx, self._entity_features(gold, kb)]),
            negatives=[np.concatenate([ctx, self._entity_features(n, kb)])
                       for n in negatives],
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

    # -- scoring -----------------------------------------------------------

    def link_score(self, tokens: list[str], span: Span, entity_id: str, kb: Kb) -> float:
        """Scalar similarity between the mention's contexts and one entity."""
        self._check_fitted()
        ids = self.vocab_.encode(tokens)
        ctx = build_context_features(ids, span, self.alpha, self.embedding_)
        x = np.concatenate([ctx, self._entity_features(entity_id, kb)])
        score, _ = self.net_.forward(x)
        return score

    def candidates_for(self, mention: str, kb: Kb) -> list[str]:
        """Alias matches capped at candidate_cap, most-connected entities first."""
        found = kb.lookup_entities(mention)
        ranked = sorted(found, key=lambda e: (-kb.entities[e].fact_count, e))
        return ranked[: self.candidate_cap]

    def rank(self, tokens: list[str], span: Span, kb: Kb) -> list[EntityCandidate]:
        """Score every candidate entity of the span's alias."""
        self._check_fitted()
        mention = " ".join(tokens[span[0]:span[1]])
        ids = self.vocab_.encode(tokens)
        ctx = build_context_features(ids, span, self.alpha, self.embedding_)
        out = []
        for entity_id in self.candidates_for(mention, kb):
            x = np.concatenate([ctx, self._entity_features(entity_id, kb)])
            score, _ = self.net_.forward(x)
            out.append(EntityCandidate(entity_id=entity_id, link_score=score,
                                       fact_count=kb.entities[entity_id].fact_count))
        out.sort(key=lambda c: (-c.link_score, -c.fact_count, c.entity_id))
        return out


def rerank(candidates: list[EntityCandidate], mention_prob: float,
           relation_scorer, pattern_tokens: list[str], kb: Kb) -> list[EntityCandidate]:
    """Combine mention, linking and best-relation scores per candidate.

    rerank_score = mention_prob + link_score + max over the entity's chains of
    the relation score (0 for entities with no relations); exact ties break
    toward the larger fact count, then the lexicographically smaller id.
    """
    out = []
    for cand in candidates:
        chains = sorted(kb.relations_of(cand.entity_id))
        best = 0.0
        if chains:
            best = max(relation_scorer.rel_score(pattern_tokens, chain)
                       for chain in chains)
        out.append(EntityCandidate(
            entity_id=cand.entity_id,
            link_score=cand.link_score,
            fact_count=cand.fact_count,
            rerank_score=mention_prob + cand.link_score + best,
        ))
    out.sort(key=lambda c: (-c.rerank_score, -c.fact_count, c.entity_id))
    return out
