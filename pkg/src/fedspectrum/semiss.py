"""Semi-supervised federated sensing on unlabeled client data.

The server (FC) pre-trains on a small labeled set, clients pseudo-label their
own windows with the global model, correct the least plausible pseudo-labels
using per-band energy, and train locally.  After each aggregation the server
fine-tunes on its labeled set again.

Correction budget per channel ``k`` (the "soft threshold"):

    C1 = floor(R_C * err_k * n0_k)     0 -> 1 flips, highest-energy pseudo-zeros
    C0 = floor(R_C * err_k * n1_k)     1 -> 0 flips, lowest-energy pseudo-ones

where ``err_k`` is the current global model's error on the labeled set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .fl_core import (
    Aggregate,
    ClientUpdate,
    FLConfig,
    FLResult,
    Shard,
    local_seed,
    local_update,
    run_rounds,
)
from .model import ArchSpec, TrainConfig, evaluate, forward, init_params, sgd_epochs
from .rng import derive_seed


@dataclass(frozen=True)
class SemiConfig:
    labeled_size: int = 200
    fc_pretrain_epochs: int = 100
    fc_finetune_epochs: int = 2
    correction_ratio: float = 0.3
    fl: FLConfig = field(default_factory=FLConfig)
    # False skips the correction step entirely (plain pseudo-labeling)
    correction: bool = True

    def __post_init__(self):
        if self.labeled_size < 1:
            raise ConfigError("labeled_size must be >= 1")
        if not 0.0 <= self.correction_ratio <= 1.0:
            raise ConfigError("correction_ratio must lie in [0, 1]")
        if self.fc_pretrain_epochs < 0 or self.fc_finetune_epochs < 0:
            raise ConfigError("FC epochs must be >= 0")


@dataclass(frozen=True)
class CorrectionCounts:
    c0: np.ndarray  # per channel, 1 -> 0 flips
    c1: np.ndarray  # per channel, 0 -> 1 flips

    def pairs(self) -> list[list[int]]:
        return [[int(a), int(b)] for a, b in zip(self.c0, self.c1)]


def fc_update(arch: ArchSpec, params: np.ndarray, labeled: Shard, epochs: int, train: TrainConfig, seed: int) -> np.ndarray:
    """Supervised SGD on the server's labeled set."""
    if len(labeled) == 0:
        raise ValueError("labeled set is empty")
    cfg = TrainConfig(train.learning_rate, train.batch_size, epochs, seed)
    return sgd_epochs(arch, params, labeled.x, labeled.y, cfg)


def pseudo_label(arch: ArchSpec, params: np.ndarray, x) -> np.ndarray:
    """Per-example, per-channel 0/1 labels; probability exactly 0.5 maps to 1."""
    if len(x) == 0:
        raise ValueError("cannot pseudo-label an empty shard")
    return (forward(arch, params, np.asarray(x, dtype=float)) >= 0.0).astype(np.uint8)


def correction_counts(error_rate, ratio: float, pseudo: np.ndarray) -> CorrectionCounts:
    err = np.asarray(error_rate, dtype=float)
    if np.any(err < 0) or np.any(err > 1):
        raise ValueError("error rates must lie in [0, 1]")
    pseudo = np.asarray(pseudo)
    n1 = pseudo.sum(axis=0).astype(int)
    n0 = len(pseudo) - n1
    c1 = np.array([math.floor(ratio * e * n + 1e-9) for e, n in zip(err, n0)], dtype=int)
    c0 = np.array([math.floor(ratio * e * n + 1e-9) for e, n in zip(err, n1)], dtype=int)
    return CorrectionCounts(c0, c1)


def correct_labels(pseudo: np.ndarray, energies: np.ndarray, counts: CorrectionCounts) -> np.ndarray:
    """Flip the lowest-energy pseudo-ones and highest-energy pseudo-zeros on each channel.

    Candidates are ranked by ``(energy, index)`` ascending; counts larger than
    a pool are clamped to it.
    """
    pseudo = np.asarray(pseudo)
    energies = np.asarray(energies, dtype=float)
    out = pseudo.copy()
    index = np.arange(len(pseudo))
    for k in range(pseudo.shape[1]):
        order = np.lexsort((index, energies[:, k]))
        ones = order[pseudo[order, k] == 1]
        zeros = order[pseudo[order, k] == 0]
        c0 = min(max(int(counts.c0[k]), 0), len(ones))
        c1 = min(max(int(counts.c1[k]), 0), len(zeros))
        out[ones[:c0], k] = 0
        if c1:
            out[zeros[-c1:], k] = 1
    return out


def fc_error_rates(arch: ArchSpec, params: np.ndarray, labeled: Shard) -> np.ndarray:
    return 1.0 - evaluate(arch, params, labeled.x, labeled.y).per_channel_accuracy


def pretrain(arch: ArchSpec, cfg: SemiConfig, labeled: Shard, train: TrainConfig, params: np.ndarray | None = None) -> np.ndarray:
    seed = cfg.fl.seed
    if params is None:
        params = init_params(arch, derive_seed(seed, "init"))
    return fc_update(arch, params, labeled, cfg.fc_pretrain_epochs, train, derive_seed(seed, "fc-pretrain"))


def run_semiss(
    arch: ArchSpec,
    cfg: SemiConfig,
    shards: Sequence[Shard],
    labeled: Shard,
    train: TrainConfig,
    test: Shard | None = None,
    aggregate: Aggregate | None = None,
    poisoned: Mapping[int, np.ndarray] | None = None,
    params: np.ndarray | None = None,
    workers: int | None = None,
) -> FLResult:
    """Semi-supervised rounds: pseudo-label, correct, train locally, aggregate, fine-tune.

    Client shards carry ground-truth labels only for reporting pseudo-label
    accuracy; honest clients never train on them.  Clients listed in
    ``poisoned`` train directly on the given labels.
    """
    fl = cfg.fl
    if len(shards) != fl.num_clients:
        raise ConfigError(f"{len(shards)} shards for {fl.num_clients} clients")
    if any(len(s) == 0 for s in shards):
        raise ValueError("every client shard must be non-empty")
    if any(s.energy is None for s in shards):
        raise ValueError("client shards need band energies for label correction")
    poisoned = dict(poisoned or {})
    params = pretrain(arch, cfg, labeled, train, params)

    def prepare(global_params: np.ndarray, t: int) -> dict:
        err = fc_error_rates(arch, global_params, labeled)
        return {"fc_error_rates": [float(e) for e in err], "_err": err}

    def train_client(cid: int, global_params: np.ndarray, t: int, context: dict) -> ClientUpdate:
        shard = shards[cid]
        tc = TrainConfig(train.learning_rate, train.batch_size, fl.local_epochs, local_seed(fl, t, cid))
        if cid in poisoned:
            return ClientUpdate(cid, t, local_update(arch, global_params, shard.x, poisoned[cid], tc))
        labels = pseudo_label(arch, global_params, shard.x)
        info = {"pseudo_correct": int((labels == shard.y).sum()), "labels_total": int(labels.size)}
        if cfg.correction:
            counts = correction_counts(context["_err"], cfg.correction_ratio, labels)
            labels = correct_labels(labels, shard.energy, counts)
            info["counts"] = counts
        return ClientUpdate(cid, t, local_update(arch, global_params, shard.x, labels, tc), info=info)

    def finish(global_params: np.ndarray, t: int) -> np.ndarray:
        return fc_update(arch, global_params, labeled, cfg.fc_finetune_epochs, train, derive_seed(fl.seed, "fc-finetune", t))

    def summarize(updates: list[ClientUpdate], context: dict) -> dict:
        honest = [u for u in updates if "pseudo_correct" in u.info]
        k = arch.outputs
        c0 = sum((u.info["counts"].c0 for u in honest if "counts" in u.info), np.zeros(k, dtype=int))
        c1 = sum((u.info["counts"].c1 for u in honest if "counts" in u.info), np.zeros(k, dtype=int))
        total = sum(u.info["labels_total"] for u in honest)
        acc = sum(u.info["pseudo_correct"] for u in honest) / total if total else float("nan")
        return {
            "corrections_applied": CorrectionCounts(c0, c1).pairs(),
            "pseudo_label_accuracy": acc,
        }

    return run_rounds(arch, params, fl, train_client, test=test, aggregate=aggregate, prepare=prepare,
                      finish=finish, summarize=summarize, malicious=poisoned.keys(), workers=workers)
