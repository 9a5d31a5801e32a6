"""Label-poisoning attacks on malicious clients and the attack success rate."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, UndefinedMetricError
from .fl_core import ratio_count
from .model import ArchSpec, predict
from .rng import stream

ATTACK_KINDS = ("flip", "set_busy", "set_idle", "random")
# CLI spellings
ATTACK_ALIASES = {"flip": "flip", "busy": "set_busy", "idle": "set_idle", "random": "random"}


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "flip"
    targeted_channels: tuple[int, ...] | None = None  # None: every channel
    malicious_ratio: float = 0.3
    seed: int = 0

    def __post_init__(self):
        kind = ATTACK_ALIASES.get(self.kind, self.kind)
        if kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.targeted_channels is not None:
            chans = tuple(sorted({int(c) for c in self.targeted_channels}))
            if not chans:
                raise ConfigError("targeted_channels must be non-empty")
            if chans[0] < 0:
                raise ConfigError("channel indices must be >= 0")
            object.__setattr__(self, "targeted_channels", chans)
        if not 0.0 <= self.malicious_ratio <= 1.0:
            raise ConfigError("malicious_ratio must lie in [0, 1]")

    def mask(self, channels: int) -> np.ndarray:
        """Boolean length-K mask of attacked channels."""
        m = np.zeros(channels, dtype=bool)
        if self.targeted_channels is None:
            m[:] = True
        else:
            if self.targeted_channels[-1] >= channels:
                raise ConfigError(f"channel {self.targeted_channels[-1]} out of range for K={channels}")
            m[list(self.targeted_channels)] = True
        return m


def assign_malicious(num_clients: int, ratio: float, seed: int) -> np.ndarray:
    """Sorted ids of the ``floor(N * R_M)`` clients that stay malicious for the whole run."""
    count = ratio_count(num_clients, ratio)
    return np.sort(stream(seed, "malicious").permutation(num_clients)[:count])


def assign_attackers(num_clients: int, specs: Sequence[AttackSpec], seed: int) -> list[np.ndarray]:
    """Disjoint malicious id sets, one per attack, carved from a single permutation."""
    counts = [ratio_count(num_clients, s.malicious_ratio) for s in specs]
    if sum(counts) > num_clients:
        raise ConfigError("malicious ratios add up to more than the client population")
    perm = stream(seed, "malicious").permutation(num_clients)
    out, pos = [], 0
    for c in counts:
        out.append(np.sort(perm[pos:pos + c]))
        pos += c
    return out


def poison_labels(labels, spec: AttackSpec, client_id: int = 0) -> np.ndarray:
    """Poisoned copy of ``labels`` (shape ``(K,)`` or ``(M, K)``); untargeted channels untouched."""
    labels = np.asarray(labels)
    out = labels.copy()
    mask = np.broadcast_to(spec.mask(labels.shape[-1]), labels.shape)
    if spec.kind == "flip":
        new = 1 - labels
    elif spec.kind == "set_busy":
        new = np.ones_like(labels)
    elif spec.kind == "set_idle":
        new = np.zeros_like(labels)
    else:
        new = stream(spec.seed, "attack", client_id).integers(0, 2, size=labels.shape).astype(labels.dtype)
    out[mask] = new[mask]
    return out


def asr(arch: ArchSpec, params: np.ndarray, x, y, source: int, target: int, channel: int) -> float:
    """Fraction of examples labeled ``source`` on ``channel`` that the model predicts as ``target``."""
    y = np.asarray(y)
    sel = y[:, channel] == source
    if not sel.any():
        raise UndefinedMetricError(f"no example has label {source} on channel {channel}")
    pred = predict(arch, params, np.asarray(x)[sel])[:, channel]
    return float(np.mean(pred == target))
