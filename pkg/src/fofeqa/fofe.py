"""Fixed-size forgetting encoding of token sequences.

A sequence w_1..w_T over a vocabulary of size V is folded into a single
V-dimensional vector by the recursion

    z_0 = 0,   z_t = alpha * z_{t-1} + onehot(w_t),

so the coordinate of token i ends up holding sum(alpha**(T-t)) over the
positions t where w_t == i.  For alpha < 0.5 the map is invertible by a
greedy peel-off of the most recent token; this module provides the encoder,
a reversed-order variant, the greedy decoder, and the projection of a code
through an embedding matrix.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidParameterError, NotAValidCodeError, UnsupportedAlphaError

# slack for the ">= 1" test of the greedy decoder
DECODE_EPS = 1e-9
# below this a float coordinate counts as zero
_ZERO_TOL = 1e-9


class Vocab:
    """Dense string-to-index mapping with a reserved unknown token."""

    def __init__(self, tokens: Sequence[str], unk_token: str = "<unk>"):
        self.tokens = list(tokens)
        self._index: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok in self._index:
                raise InvalidParameterError(f"duplicate vocab token: {tok!r}")
            self._index[tok] = i
        if unk_token not in self._index:
            raise InvalidParameterError(f"unk token {unk_token!r} missing from vocab")
        self.unk_token = unk_token
        self.unk_id = self._index[unk_token]

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def from_file(cls, path, unk_token: str = "<unk>") -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line != "\n"]
        return cls(tokens, unk_token=unk_token)


@dataclass(frozen=True)
class FofeCode:
    """Sparse encoding of a token sequence.

    ``indices``/``coeffs`` give the nonzero coordinates of the code in vocab
    space.  When the code came from :func:`encode`, ``exponents`` additionally
    records, per index, which powers of alpha sum up to the coefficient; the
    decoder uses that structure to run the greedy inversion in exact
    arithmetic (pure float64 coefficients cannot represent 1 + alpha**k once
    alpha**k falls under half an ulp, which random sequences with repeated
    tokens do hit for small alpha).  Codes rebuilt from plain dense vectors
    carry ``exponents=None`` and decode on floats.
    """

    size: int
    alpha: float
    indices: np.ndarray
    coeffs: np.ndarray
    exponents: tuple[tuple[int, ...], ...] | None = None

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.size, dtype=np.float64)
        if self.indices.size:
            dense[self.indices] = self.coeffs
        return dense

    @property
    def is_zero(self) -> bool:
        return self.indices.size == 0

    @classmethod
    def from_dense(cls, values, alpha: float) -> "FofeCode":
        _check_alpha(alpha)
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1:
            raise InvalidParameterError("code values must be a 1-d vector")
        if np.any(values < 0):
            raise InvalidParameterError("code values must be non-negative")
        idx = np.flatnonzero(values > _ZERO_TOL)
        return cls(
            size=int(values.shape[0]),
            alpha=float(alpha),
            indices=idx.astype(np.int64),
            coeffs=values[idx].copy(),
        )


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha < 1.0):
        raise InvalidParameterError(f"forgetting factor must lie in (0, 1), got {alpha}")


def encode(ids: Sequence[int], alpha: float, size: int) -> FofeCode:
    """Encode a sequence of vocab ids; the last token carries weight 1."""
    _check_alpha(alpha)
    exps: dict[int, list[int]] = {}
    T = len(ids)
    for t, raw in enumerate(ids):
        tok = int(raw)
        if not (0 <= tok < size):
            raise InvalidParameterError(f"token id {tok} outside vocab of size {size}")
        exps.setdefault(tok, []).append(T - 1 - t)
    indices = np.array(sorted(exps), dtype=np.int64)
    coeffs = np.array(
        [np.power(alpha, np.asarray(exps[i], dtype=np.float64)).sum() for i in indices],
        dtype=np.float64,
    )
    exponents = tuple(tuple(exps[i]) for i in indices)
    return FofeCode(size=int(size), alpha=float(alpha), indices=indices, coeffs=coeffs,
                    exponents=exponents)


def encode_reversed(ids: Sequence[int], alpha: float, size: int) -> FofeCode:
    """Encode the sequence read right-to-left (first token carries weight 1)."""
    return encode(list(reversed(list(ids))), alpha, size)


def decode(code: FofeCode) -> list[int]:
    """Recover the unique token sequence whose encoding equals ``code``.

    Greedy inversion: while the code is nonzero, exactly one coordinate is
    >= 1 (its token was last); emit it, subtract 1, divide everything by
    alpha and repeat.  Only alpha < 0.5 is supported: there the residual tail
    sums to alpha/(1-alpha) < 1, which makes the ">= 1" coordinate unique.
    """
    if code.alpha >= 0.5:
        raise UnsupportedAlphaError(
            f"greedy decoding needs alpha < 0.5, got {code.alpha}"
        )
    _check_alpha(code.alpha)
    if code.exponents is not None:
        return _decode_exact(code)
    return _decode_dense(code)


def _decode_exact(code: FofeCode) -> list[int]:
    # With the power structure kept by encode(), each greedy step is exact:
    # a coordinate is >= 1 iff it contains the alpha**0 term (the tail is
    # < 1 for alpha < 0.5), subtracting 1 removes that term, and dividing by
    # alpha shifts every remaining exponent down by one.
    position_of: dict[int, int] = {}
    total = 0
    for idx, exps in zip(code.indices, code.exponents):
        for k in exps:
            total += 1
            if k < 0 or k in position_of:
                raise NotAValidCodeError("coefficients are not distinct powers of alpha")
            position_of[k] = int(idx)
    if total and (max(position_of) != total - 1 or len(position_of) != total):
        raise NotAValidCodeError("exponents do not cover positions 0..T-1")
    return [position_of[k] for k in range(total - 1, -1, -1)]


def _decode_dense(code: FofeCode) -> list[int]:
    alpha = code.alpha
    vals = {int(i): float(v) for i, v in zip(code.indices, code.coeffs) if v > _ZERO_TOL}
    if not vals:
        return []
    min_coeff = min(vals.values())
    max_steps = max(1, int(math.log(min_coeff) / math.log(alpha)) + 2)
    out: list[int] = []
    for _ in range(max_steps):
        if not vals:
            break
        ready = [i for i, v in vals.items() if v >= 1.0 - DECODE_EPS]
        if len(ready) != 1:
            raise NotAValidCodeError(
                f"expected exactly one coordinate >= 1, found {len(ready)}"
            )
        tok = ready[0]
        out.append(tok)
        rest = vals[tok] - 1.0
        if rest <= _ZERO_TOL:
            del vals[tok]
        else:
            vals[tok] = rest
        vals = {i: v / alpha for i, v in vals.items() if v > _ZERO_TOL}
    if vals:
        raise NotAValidCodeError("residual mass left after the maximum step count")
    out.reverse()
    return out


def project(code: FofeCode, embedding: np.ndarray) -> np.ndarray:
    """Return code^T . embedding, i.e. the alpha-weighted sum of token rows."""
    embedding = np.asarray(embedding)
    if embedding.ndim != 2 or embedding.shape[0] != code.size:
        raise InvalidParameterError(
            f"embedding must have {code.size} rows, got shape {embedding.shape}"
        )
    if code.indices.size == 0:
        return np.zeros(embedding.shape[1], dtype=np.float64)
    return code.coeffs @ embedding[code.indices]
