"""Minimal feedforward scoring engine.

Dense layers with ReLU hiddens, inverted dropout, a scalar linear output,
analytic backpropagation, pairwise hinge ranking loss, and plain SGD.  All
math is float64 numpy on single vectors; training batches are per-question.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import FileFormatError, InvalidParameterError, TrainingDivergedError

_MAGIC = b"FQNM"
_VERSION = 1


def stable_sigmoid(z: float) -> float:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class TrainConfig:
    """Hyperparameters shared by the ranking trainers."""

    gamma: float = 0.1
    lr: float = 0.01
    lr_decay: float = 0.95
    epochs: int = 30
    dropout: float = 0.0
    seed: int = 0
    neg_cap: int = 50

    def __post_init__(self):
        if self.gamma <= 0:
            raise InvalidParameterError("margin gamma must be > 0")
        if self.lr <= 0:
            raise InvalidParameterError("learning rate must be > 0")
        if not (0 < self.lr_decay <= 1):
            raise InvalidParameterError("lr_decay must lie in (0, 1]")
        if not (0 <= self.dropout < 1):
            raise InvalidParameterError("dropout must lie in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay**epoch


@dataclass
class RankingBatch:
    """One positive feature vector and its competing negatives."""

    positive: np.ndarray
    negatives: list[np.ndarray] = field(default_factory=list)


class Mlp:
    """Fully-connected ReLU net with a single linear output unit."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray],
                 dropout: float = 0.0):
        if not weights or len(weights) != len(biases):
            raise InvalidParameterError("weights and biases must align")
        for i in range(1, len(weights)):
            if weights[i].shape[0] != weights[i - 1].shape[1]:
                raise InvalidParameterError("layer dimensions do not chain")
        if weights[-1].shape[1] != 1:
            raise InvalidParameterError("final layer must output a scalar")
        if not (0 <= dropout < 1):
            raise InvalidParameterError("dropout must lie in [0, 1)")
        self.weights = weights
        self.biases = biases
        self.dropout = dropout

    @classmethod
    def init(cls, dims: Sequence[int], rng: np.random.Generator,
             dropout: float = 0.0) -> "Mlp":
        """Symmetric uniform init in +-sqrt(6 / (fan_in + fan_out))."""
        if len(dims) < 2 or dims[-1] != 1:
            raise InvalidParameterError("dims must end in a scalar output")
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out, dtype=np.float64))
        return cls(weights, biases, dropout=dropout)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def zero_grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.params]

    def forward(self, x: np.ndarray, train_mode: bool = False,
                rng: np.random.Generator | None = None):
        """Score an input vector; returns (score, cache) for backprop.

        In train mode inverted dropout scales the kept hidden units by
        1/(1-p) so eval mode needs no rescaling; eval mode is deterministic.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise InvalidParameterError(
                f"input must have shape ({self.input_dim},), got {x.shape}"
            )
        use_dropout = train_mode and self.dropout > 0
        if use_dropout and rng is None:
            raise InvalidParameterError("train-mode forward with dropout needs an rng")
        a = x
        layers = []
        n = len(self.weights)
        for i in range(n - 1):
            z = a @ self.weights[i] + self.biases[i]
            h = np.maximum(z, 0.0)
            mask = None
            if use_dropout:
                mask = (rng.random(h.shape) >= self.dropout) / (1.0 - self.dropout)
                h = h * mask
            layers.append((a, z, mask))
            a = h
        z = a @ self.weights[-1] + self.biases[-1]
        layers.append((a, z, None))
        return float(z[0]), layers

    def backward(self, cache, dscore: float):
        """Gradients of dscore * score w.r.t. parameters and the input."""
        grads = self.zero_grads()
        a_last, _, _ = cache[-1]
        dz = np.array([dscore], dtype=np.float64)
        grads[-2] += np.outer(a_last, dz)
        grads[-1] += dz
        da = self.weights[-1] @ dz
        for i in range(len(self.weights) - 2, -1, -1):
            a_in, z, mask = cache[i]
            if mask is not None:
                da = da * mask
            dz = da * (z > 0)
            grads[2 * i] += np.outer(a_in, dz)
            grads[2 * i + 1] += dz
            da = self.weights[i] @ dz
        return grads, da


def hinge_rank_loss(pos_score: float, neg_score: float, gamma: float) -> float:
    """max(0, gamma + neg - pos); zero once the positive clears the margin."""
    return max(0.0, gamma + neg_score - pos_score)


@dataclass
class HingeGradients:
    """Result of backpropagating a ranking batch through a net."""

    loss: float
    grads: list[np.ndarray]
    dx_positive: np.ndarray
    dx_negatives: list[np.ndarray]


def backward(net: Mlp, batch: RankingBatch, gamma: float,
             train_mode: bool = False,
             rng: np.random.Generator | None = None) -> HingeGradients:
    """Gradients of the summed hinge ranking loss over a batch.

    Negatives already beaten by at least the margin contribute nothing; the
    positive path accumulates -1 per violating negative.
    """
    pos_score, pos_cache = net.forward(batch.positive, train_mode, rng)
    grads = net.zero_grads()
    dx_pos = np.zeros(net.input_dim, dtype=np.float64)
    dx_negs: list[np.ndarray] = []
    loss = 0.0
    for x_neg in batch.negatives:
        neg_score, neg_cache = net.forward(x_neg, train_mode, rng)
        margin = hinge_rank_loss(pos_score, neg_score, gamma)
        loss += margin
        dx_neg = np.zeros(net.input_dim, dtype=np.float64)
        if margin > 0:
            g_neg, dx_neg = net.backward(neg_cache, 1.0)
            g_pos, dxp = net.backward(pos_cache, -1.0)
            for acc, gn, gp in zip(grads, g_neg, g_pos):
                acc += gn + gp
            dx_pos += dxp
        dx_negs.append(dx_neg)
    return HingeGradients(loss=loss, grads=grads, dx_positive=dx_pos,
                          dx_negatives=dx_negs)


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
    """In-place theta <- theta - lr * grad; rejects non-finite gradients."""
    if len(params) != len(grads):
        raise InvalidParameterError("parameter and gradient lists must align")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise InvalidParameterError("gradient shape mismatch")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient encountered")
        p -= lr * g


def apply_embedding_updates(embedding: np.ndarray, updates, lr: float) -> None:
    """SGD rows of an embedding table through sparse codes.

    ``updates`` is a sequence of (code, dblock) pairs where dblock is the
    gradient of the loss w.r.t. the projected block code^T . E.
    """
    for code, dblock in updates:
        if code.indices.size == 0:
            continue
        if not np.all(np.isfinite(dblock)):
            raise TrainingDivergedError("non-finite embedding gradient")
        np.subtract.at(embedding, code.indices,
                       lr * np.outer(code.coeffs, dblock))


def save_model(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write a versioned byte-exact container: header, JSON meta, raw <f8 data."""
    names = list(arrays)
    meta = dict(meta)
    meta["arrays"] = [[name, list(arrays[name].shape)] for name in names]
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def load_model(path):
    """Read a container written by save_model; returns (arrays, meta)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise FileFormatError(path, 0, "bad magic, not a model container")
        version, meta_len = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise FileFormatError(path, 0, f"unsupported container version {version}")
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for name, shape in meta["arrays"]:
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise FileFormatError(path, 0, f"truncated array {name!r}")
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise FileFormatError(path, 0, "trailing bytes after arrays")
    return arrays, meta
