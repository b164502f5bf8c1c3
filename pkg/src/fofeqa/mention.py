"""Topic subject mention discovery over all word segments of a question.

Every contiguous span up to ``max_span`` tokens is scored by a small
feedforward net on five projected forgetting codes (left context with and
without the span, reversed right context with and without the span, and the
span itself); spans that match no KB alias are discarded and the survivors
are thresholded and ranked.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import neural
from .errors import InvalidParameterError
from .features import init_embedding, tokenize
from .fofe import FofeCode, Vocab, encode, encode_reversed, project

logger = logging.getLogger(__name__)

Span = tuple[int, int]


@dataclass
class MentionCandidate:
    span: Span
    text: str
    prob: float


def enumerate_spans(n_tokens: int, max_span: int) -> list[Span]:
    """All contiguous spans of length <= max_span, shortest first, left to right."""
    if max_span < 1:
        raise InvalidParameterError("max_span must be >= 1")
    spans: list[Span] = []
    for length in range(1, max_span + 1):
        for start in range(0, n_tokens - length + 1):
            spans.append((start, start + length))
    return spans


def span_codes(ids: list[int], span: Span, alpha: float, size: int) -> list[FofeCode]:
    """The five context/span codes scored for one candidate span."""
    s, e = span
    return [
        encode(ids[:e], alpha, size),            # left context incl. span
        encode(ids[:s], alpha, size),            # left context excl. span
        encode_reversed(ids[s:], alpha, size),   # right context incl. span, reversed
        encode_reversed(ids[e:], alpha, size),   # right context excl. span, reversed
        encode(ids[s:e], alpha, size),           # the span itself
    ]


class MentionDetector(BaseEstimator):
    """Binary span classifier: probability of being the topic subject mention."""

    N_BLOCKS = 5

    def __init__(self, alpha=0.8, embed_dim=32, hidden=(64, 64), dropout=0.0,
                 lr=0.01, lr_decay=0.95, epochs=30, max_span=7, theta=0.7,
                 random_negatives=5, seed=0):
        self.alpha = alpha
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.dropout = dropout
        self.lr = lr
        self.lr_decay = lr_decay
        self.epochs = epochs
        self.max_span = max_span
        self.theta = theta
        self.random_negatives = random_negatives
        self.seed = seed

    # -- fitting -----------------------------------------------------------

    def fit(self, examples, kb, vocab: Vocab) -> "MentionDetector":
        """Train on gold spans vs. other KB-matching spans plus sampled noise."""
        cfg = neural.TrainConfig(lr=self.lr, lr_decay=self.lr_decay,
                                 epochs=self.epochs, dropout=self.dropout,
                                 seed=self.seed)
        rng = np.random.default_rng(self.seed)
        self.vocab_ = vocab
        self.embedding_ = init_embedding(vocab.size, self.embed_dim, rng)
        dims = [self.N_BLOCKS * self.embed_dim, *self.hidden, 1]
        self.net_ = neural.Mlp.init(dims, rng, dropout=self.dropout)
        self.loss_history_ = []

        items = []
        for ex in examples:
            tokens = tokenize(ex.question)
            gold = ex.token_span()
            if gold is None:
                logger.warning("mention span does not cover tokens, skipping: %r",
                               ex.question)
                continue
            ids = vocab.encode(tokens)
            matching, other = [], []
            for span in enumerate_spans(len(tokens), self.max_span):
                if span == gold:
                    continue
                if kb.lookup_entities(" ".join(tokens[span[0]:span[1]])):
                    matching.append(span)
                else:
                    other.append(span)
            items.append((ids, gold, matching, other))

        for epoch in range(self.epochs):
            lr = cfg.lr_at(epoch)
            total = 0.0
            for idx in rng.permutation(len(items)):
                ids, gold, matching, other = items[idx]
                negatives = list(matching)
                if other and self.random_negatives > 0:
                    k = min(self.random_negatives, len(other))
                    negatives += [other[i] for i in
                                  rng.choice(len(other), size=k, replace=False)]
                total += self._step(ids, gold, negatives, lr, rng)
            self.loss_history_.append(total)
        return self

    def _step(self, ids, gold, negatives, lr, rng):
        grads = self.net_.zero_grads()
        emb_updates = []
        loss = 0.0
        for span, label in [(gold, 1.0)] + [(s, 0.0) for s in negatives]:
            codes = span_codes(ids, span, self.alpha, self.vocab_.size)
            x = np.concatenate([project(c, self.embedding_) for c in codes])
            logit, cache = self.net_.forward(x, train_mode=True, rng=rng)
            p = neural.stable_sigmoid(logit)
            eps = 1e-12
            loss -= label * np.log(p + eps) + (1 - label) * np.log(1 - p + eps)
            g, dx = self.net_.backward(cache, p - label)
            for acc, gi in zip(grads, g):
                acc += gi
            d = self.embed_dim
            for i, code in enumerate(codes):
                emb_updates.append((code, dx[i * d:(i + 1) * d]))
        neural.sgd_step(self.net_.params, grads, lr)
        neural.apply_embedding_updates(self.embedding_, emb_updates, lr)
        return loss

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("MentionDetector is not fitted yet")

    # -- scoring -----------------------------------------------------------

    def score_span(self, tokens: list[str], span: Span) -> float:
        """Sigmoid probability that the span is the topic subject mention."""
        self._check_fitted()
        ids = self.vocab_.encode(tokens)
        codes = span_codes(ids, span, self.alpha, self.vocab_.size)
        x = np.concatenate([project(c, self.embedding_) for c in codes])
        logit, _ = self.net_.forward(x)
        return float(neural.stable_sigmoid(logit))

    def detect(self, question, kb, theta: float | None = None) -> list[MentionCandidate]:
        """KB-matching spans above the threshold, ranked by probability.

        Ties break toward the longer span, then the leftmost one.
        """
        self._check_fitted()
        theta = self.theta if theta is None else theta
        if not (0 <= theta <= 1):
            raise InvalidParameterError("theta must lie in [0, 1]")
        tokens = tokenize(question) if isinstance(question, str) else list(question)
        out = []
        for span in enumerate_spans(len(tokens), self.max_span):
            text = " ".join(tokens[span[0]:span[1]])
            if not kb.lookup_entities(text):
                continue
            prob = self.score_span(tokens, span)
            if prob > theta:
                out.append(MentionCandidate(span=span, text=text, prob=prob))
        out.sort(key=lambda c: (-c.prob, -(c.span[1] - c.span[0]), c.span[0]))
        return out

    def predict(self, question, kb, theta: float | None = None) -> list[MentionCandidate]:
        return self.detect(question, kb, theta=theta)
