"""Small multi-label 1-D CNN with hand-written backpropagation.

Architecture: Conv1D(rows -> C, kernel k, same padding) -> ReLU -> MaxPool(2)
-> Dense(hidden) -> ReLU -> Dense(K).  Each output is an independent
sigmoid trained with binary cross-entropy.  Parameters travel as one flat
float64 vector; ``ArchSpec.layout`` fixes the ordering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError

MAX_PARAMS = 50_000


@dataclass(frozen=True)
class ArchSpec:
    input_len: int
    outputs: int
    in_rows: int = 1
    conv_channels: int = 8
    kernel: int = 5
    hidden: int = 32

    def __post_init__(self):
        if self.input_len < 2 or self.input_len % 2:
            raise ConfigError("input_len must be even and >= 2")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError("kernel must be a positive odd integer")
        if min(self.outputs, self.in_rows, self.conv_channels, self.hidden) < 1:
            raise ConfigError("layer sizes must be positive")
        if self.num_params > MAX_PARAMS:
            raise ConfigError(f"architecture has {self.num_params} parameters (> {MAX_PARAMS})")

    @classmethod
    def for_mode(cls, mode: str, window: int, channels: int, **kw) -> "ArchSpec":
        rows = {"iq": 2, "freq": 1}.get(mode)
        if rows is None:
            raise ConfigError(f"unknown feature mode {mode!r}")
        return cls(input_len=window, outputs=channels, in_rows=rows, **kw)

    @property
    def flat_len(self) -> int:
        return (self.input_len // 2) * self.conv_channels

    @property
    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        return [
            ("conv_w", (self.conv_channels, self.in_rows, self.kernel)),
            ("conv_b", (self.conv_channels,)),
            ("dense1_w", (self.flat_len, self.hidden)),
            ("dense1_b", (self.hidden,)),
            ("dense2_w", (self.hidden, self.outputs)),
            ("dense2_b", (self.outputs,)),
        ]

    @property
    def num_params(self) -> int:
        return sum(math.prod(shape) for _, shape in self.layout)

    def offsets(self) -> dict[str, slice]:
        out, pos = {}, 0
        for name, shape in self.layout:
            size = math.prod(shape)
            out[name] = slice(pos, pos + size)
            pos += size
        return out

    def unflatten(self, params: np.ndarray) -> dict[str, np.ndarray]:
        """Views into ``params`` keyed by layer name."""
        params = np.asarray(params)
        if params.shape != (self.num_params,):
            raise ShapeError(f"expected {self.num_params} parameters, got {params.shape}")
        offs = self.offsets()
        return {name: params[offs[name]].reshape(shape) for name, shape in self.layout}

    def flatten(self, weights: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(weights[name], dtype=float).reshape(-1) for name, _ in self.layout])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    per_channel_accuracy: np.ndarray
    per_channel_loss: np.ndarray

    @property
    def loss(self) -> float:
        return float(np.mean(self.per_channel_loss))


def init_params(arch: ArchSpec, seed: int) -> np.ndarray:
    """He-uniform for the ReLU layers, LeCun-uniform for the output layer, zero biases."""
    rng = np.random.default_rng(seed)
    fan_in = {
        "conv_w": arch.in_rows * arch.kernel,
        "dense1_w": arch.flat_len,
        "dense2_w": arch.hidden,
    }
    parts = []
    for name, shape in arch.layout:
        if name.endswith("_b"):
            parts.append(np.zeros(math.prod(shape)))
            continue
        gain = 3.0 if name == "dense2_w" else 6.0
        limit = math.sqrt(gain / fan_in[name])
        parts.append(rng.uniform(-limit, limit, size=math.prod(shape)))
    return np.concatenate(parts)


def _as_batch(arch: ArchSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(arch.in_rows, -1)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (arch.in_rows, arch.input_len):
        raise ShapeError(f"input shape {x.shape[1:]} != {(arch.in_rows, arch.input_len)}")
    return x


def _forward(arch: ArchSpec, params: np.ndarray, x: np.ndarray):
    w = arch.unflatten(params)
    b, rows, length = x.shape
    pad = arch.kernel // 2
    xp = np.zeros((b, rows, length + 2 * pad))
    xp[:, :, pad:pad + length] = x
    # cols[b, t, r*k + j] = xp[b, r, t + j]
    cols = sliding_window_view(xp, arch.kernel, axis=2).transpose(0, 2, 1, 3).reshape(b, length, rows * arch.kernel)
    wc = w["conv_w"].reshape(arch.conv_channels, rows * arch.kernel)
    z1 = cols @ wc.T + w["conv_b"]
    a1 = np.maximum(z1, 0.0)
    pairs = a1.reshape(b, length // 2, 2, arch.conv_channels)
    pick = pairs[:, :, 0, :] >= pairs[:, :, 1, :]  # ties -> first element
    flat = np.where(pick, pairs[:, :, 0, :], pairs[:, :, 1, :]).reshape(b, -1)
    z2 = flat @ w["dense1_w"] + w["dense1_b"]
    a2 = np.maximum(z2, 0.0)
    out = a2 @ w["dense2_w"] + w["dense2_b"]
    cache = (w, cols, z1, pick, flat, z2, a2)
    return out, cache


def forward(arch: ArchSpec, params: np.ndarray, x) -> np.ndarray:
    """Logits ``(B, K)`` for a batch ``(B, rows, N)``; a single example gives ``(K,)``."""
    single = np.ndim(x) <= 2
    out, _ = _forward(arch, params, _as_batch(arch, x))
    return out[0] if single else out


def _bce(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, logits) - y * logits


def _check_batch(x, y):
    if len(x) == 0:
        raise ValueError("empty batch")
    if len(x) != len(y):
        raise ShapeError("features and labels differ in length")


def loss(arch: ArchSpec, params: np.ndarray, x, y) -> float:
    """Mean binary cross-entropy over examples and channels."""
    _check_batch(x, y)
    logits = forward(arch, params, _as_batch(arch, x))
    return float(np.mean(_bce(logits, np.asarray(y, dtype=float))))


def loss_and_grad(arch: ArchSpec, params: np.ndarray, x, y) -> tuple[float, np.ndarray]:
    _check_batch(x, y)
    x = _as_batch(arch, x)
    y = np.asarray(y, dtype=float)
    out, (w, cols, z1, pick, flat, z2, a2) = _forward(arch, params, x)
    b, length = x.shape[0], arch.input_len
    value = float(np.mean(_bce(out, y)))

    d_out = (1.0 / (1.0 + np.exp(-out)) - y) / out.size
    g_w2 = a2.T @ d_out
    g_b2 = d_out.sum(axis=0)
    d_z2 = (d_out @ w["dense2_w"].T) * (z2 > 0)
    g_w1 = flat.T @ d_z2
    g_b1 = d_z2.sum(axis=0)
    d_pooled = (d_z2 @ w["dense1_w"].T).reshape(b, length // 2, arch.conv_channels)
    d_pairs = np.stack([d_pooled * pick, d_pooled * ~pick], axis=2)
    d_z1 = d_pairs.reshape(b, length, arch.conv_channels) * (z1 > 0)
    g_wc = (d_z1.reshape(-1, arch.conv_channels).T @ cols.reshape(b * length, -1)).reshape(w["conv_w"].shape)
    g_bc = d_z1.sum(axis=(0, 1))
    grad = np.concatenate([g_wc.ravel(), g_bc, g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])
    return value, grad


def grad(arch: ArchSpec, params: np.ndarray, x, y) -> np.ndarray:
    return loss_and_grad(arch, params, x, y)[1]


def sgd_epochs(arch: ArchSpec, params: np.ndarray, x, y, cfg: TrainConfig) -> np.ndarray:
    """Mini-batch SGD for ``cfg.epochs`` epochs; returns a new vector.

    Batches are drawn from a per-epoch permutation seeded by ``cfg.seed``.
    Within a batch, examples are processed in ascending index order, so a
    single full batch reproduces ``params - lr * grad`` exactly.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0:
        raise ValueError("empty dataset")
    params = np.array(params, dtype=float, copy=True)
    if cfg.learning_rate == 0 or cfg.epochs == 0:
        return params
    rng = np.random.default_rng(cfg.seed)
    m = len(x)
    for _ in range(cfg.epochs):
        order = rng.permutation(m)
        for start in range(0, m, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            _, g = loss_and_grad(arch, params, x[idx], y[idx])
            params -= cfg.learning_rate * g
    return params


def predict(arch: ArchSpec, params: np.ndarray, x) -> np.ndarray:
    """0/1 predictions; probability 0.5 (logit 0) maps to 1."""
    return (forward(arch, params, x) >= 0.0).astype(np.uint8)


def _canonical_order(x: np.ndarray) -> np.ndarray:
    flat = x.reshape(len(x), -1)
    return np.lexsort(flat.T[::-1])


def evaluate(arch: ArchSpec, params: np.ndarray, x, y) -> EvalResult:
    """Accuracy and per-channel accuracy/loss.

    Rows are put into a content-defined order before the forward pass and
    losses are summed with ``math.fsum``, so the result does not depend on
    dataset order down to the last bit.
    """
    x = _as_batch(arch, x)
    y = np.asarray(y, dtype=float)
    _check_batch(x, y)
    order = _canonical_order(x)
    x, y = x[order], y[order]
    logits = forward(arch, params, x)
    correct = (logits >= 0.0) == (y >= 0.5)
    per_acc = correct.sum(axis=0) / len(x)
    terms = _bce(logits, y)
    per_loss = np.array([math.fsum(terms[:, k]) / len(x) for k in range(terms.shape[1])])
    return EvalResult(float(correct.sum() / correct.size), per_acc, per_loss)


# ---------------------------------------------------------------------------
# serialization: "FSSW1 len" then one float per line


def save_params(path, params: np.ndarray) -> None:
    params = np.asarray(params, dtype=float)
    lines = [f"FSSW1 {params.size}"] + [repr(float(v)) for v in params]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_params(path) -> np.ndarray:
    lines = Path(path).read_text(encoding="ascii").split()
    if len(lines) < 2 or lines[0] != "FSSW1":
        raise ConfigError(f"{path}: not an FSSW1 parameter file", line=1)
    n = int(lines[1])
    values = np.array([float(v) for v in lines[2:]])
    if values.size != n:
        raise ShapeError(f"{path}: header says {n} values, found {values.size}")
    return values
