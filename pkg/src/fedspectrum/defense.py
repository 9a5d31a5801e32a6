"""Robust aggregation baselines and the vaccine-based clustering defense.

Baselines: coordinate-wise median, trimmed mean and FLTrust.  The vaccine
defense distills "pseudo-malicious" updates at the server by training the
current global model on deliberately poisoned copies of its labeled set.
Those updates are pinned as fixed centroids of a k-means run over all client
updates; only the one cluster that contains no vaccine is aggregated.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attacks import AttackSpec, poison_labels
from .errors import ClusteringError, ConfigError
from .fl_core import (
    Aggregate,
    Aggregation,
    ClientUpdate,
    DetectionReport,
    FLResult,
    Shard,
    _stack,
    fedavg,
    sorted_mean,
)
from .model import ArchSpec, TrainConfig, evaluate, sgd_epochs
from .rng import derive_seed
from .semiss import SemiConfig, fc_update, run_semiss

log = logging.getLogger(__name__)

DEFENSE_KINDS = ("none", "median", "trmean", "fltrust", "ssvax")
CLUSTER_METRICS = ("params_delta", "lpc", "apc")
KMEANS_MAX_ITER = 100


# ---------------------------------------------------------------------------
# baseline aggregators


def median_agg(updates: Sequence[np.ndarray]) -> np.ndarray:
    """Coordinate-wise median; an even count averages the two central values."""
    return np.median(_stack(updates), axis=0)


def trmean_agg(updates: Sequence[np.ndarray], trim: int) -> np.ndarray:
    """Coordinate-wise mean after dropping the ``trim`` largest and smallest values."""
    stacked = _stack(updates)
    n = len(stacked)
    if trim < 0 or 2 * trim >= n:
        raise ValueError(f"cannot trim {trim} from each side of {n} updates")
    ordered = np.sort(stacked, axis=0)
    return sorted_mean(ordered[trim:n - trim])


def fltrust_weights(updates: Sequence[np.ndarray], server_update, global_params) -> tuple[np.ndarray, np.ndarray]:
    """Clipped cosine trust scores and deltas rescaled to the server delta's norm."""
    g = np.asarray(global_params, dtype=float)
    deltas = _stack(updates) - g
    s = np.asarray(server_update, dtype=float) - g
    s_norm = np.linalg.norm(s)
    norms = np.linalg.norm(deltas, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = np.where(norms > 0, deltas @ s / (safe * s_norm), 0.0) if s_norm > 0 else np.zeros(len(deltas))
    trust = np.maximum(cos, 0.0)
    scaled = deltas * (s_norm / safe)[:, None]
    return trust, scaled


def fltrust_agg(updates: Sequence[np.ndarray], server_update, global_params) -> np.ndarray:
    g = np.asarray(global_params, dtype=float)
    s = np.asarray(server_update, dtype=float) - g
    if np.linalg.norm(s) == 0:  # also catches deltas whose norm underflows
        log.warning("server delta is zero; FLTrust falls back to FedAvg")
        return fedavg(updates)
    trust, scaled = fltrust_weights(updates, server_update, g)
    total = trust.sum()
    if total == 0:
        return g + s
    return g + (trust @ scaled) / total


# ---------------------------------------------------------------------------
# vaccines and fixed-centroid clustering


@dataclass(frozen=True)
class VaccineSpec:
    kind: str = "flip"
    targeted_channels: tuple[int, ...] | None = None
    count: int = 1
    epochs: int = 1

    def __post_init__(self):
        AttackSpec(self.kind, self.targeted_channels)  # validates kind and channels
        object.__setattr__(self, "kind", AttackSpec(self.kind).kind)
        if self.targeted_channels is not None:
            object.__setattr__(self, "targeted_channels", tuple(sorted({int(c) for c in self.targeted_channels})))
        if self.count < 1:
            raise ConfigError("vaccine count must be >= 1")
        if self.epochs < 1:
            raise ConfigError("vaccine epochs must be >= 1")

    def attack(self, seed: int) -> AttackSpec:
        return AttackSpec(self.kind, self.targeted_channels, 0.0, seed)


def distill_vaccines(
    arch: ArchSpec,
    global_params: np.ndarray,
    labeled: Shard,
    spec: VaccineSpec,
    train: TrainConfig,
    seed: int,
) -> list[np.ndarray]:
    """``spec.count`` pseudo-malicious updates trained from the global model on poisoned labels."""
    if len(labeled) == 0:
        raise ValueError("labeled set is empty")
    out = []
    for j in range(spec.count):
        s = derive_seed(seed, j)
        y = poison_labels(labeled.y, spec.attack(s), client_id=j)
        cfg = TrainConfig(train.learning_rate, train.batch_size, spec.epochs, s)
        out.append(sgd_epochs(arch, global_params, labeled.x, y, cfg))
    return out


@dataclass
class ClusterResult:
    assignment: np.ndarray  # cluster id per point
    centroids: np.ndarray  # fixed centroids first, free centroid last
    iterations: int
    converged: bool

    @property
    def free_id(self) -> int:
        return len(self.centroids) - 1

    def sizes(self) -> list[int]:
        return np.bincount(self.assignment, minlength=len(self.centroids)).tolist()


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)  # first minimum -> lowest cluster id


def kmeans_fixed(points, fixed_centroids, max_iter: int = KMEANS_MAX_ITER) -> ClusterResult:
    """k-means with ``len(fixed_centroids)`` pinned centroids plus one free centroid.

    The free centroid starts at the mean of all points and is the only one
    that moves.  Iteration stops when assignments repeat or after
    ``max_iter`` passes.  An empty free cluster keeps its previous centroid.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    fixed = np.atleast_2d(np.asarray(fixed_centroids, dtype=float))
    if len(points) == 0 or len(fixed) == 0:
        raise ValueError("need at least one point and one fixed centroid")
    if points.shape[1] != fixed.shape[1]:
        raise ValueError(f"dimension mismatch: points {points.shape[1]}, centroids {fixed.shape[1]}")
    centroids = np.vstack([fixed, points.mean(axis=0)])
    free = len(fixed)
    assignment = _assign(points, centroids)
    converged = False
    it = 1
    while it < max_iter:
        members = points[assignment == free]
        if len(members):
            centroids[free] = members.mean(axis=0)
        new = _assign(points, centroids)
        it += 1
        if np.array_equal(new, assignment):
            converged = True
            break
        assignment = new
    return ClusterResult(assignment, centroids, it, converged)


def detection_metrics(kept, malicious) -> DetectionReport:
    """Confusion counts where "positive" means flagged (not kept)."""
    kept = np.asarray(kept, dtype=bool)
    mal = np.asarray(malicious, dtype=bool)
    if kept.shape != mal.shape:
        raise ValueError("kept mask and malicious flags differ in length")
    return DetectionReport(
        tp=int(np.sum(mal & ~kept)),
        fp=int(np.sum(~mal & ~kept)),
        fn=int(np.sum(mal & kept)),
        tn=int(np.sum(~mal & kept)),
    )


def cluster_features(arch: ArchSpec, vectors: np.ndarray, global_params: np.ndarray, metric: str, labeled: Shard | None) -> np.ndarray:
    """One feature row per parameter vector for the chosen clustering metric."""
    if metric == "params_delta":
        delta = vectors - global_params
        norms = np.linalg.norm(delta, axis=1, keepdims=True)
        return np.divide(delta, norms, out=np.zeros_like(delta), where=norms > 0)
    if labeled is None:
        raise ValueError(f"metric {metric!r} needs the labeled set")
    rows = []
    for v in vectors:
        r = evaluate(arch, v, labeled.x, labeled.y)
        rows.append(r.per_channel_loss if metric == "lpc" else r.per_channel_accuracy)
    return np.array(rows)


@dataclass
class FilterOutcome:
    kept: list[int]
    clusters: ClusterResult
    detection: DetectionReport
    benign_cluster: int
    skipped: bool


def ssvax_filter(
    arch: ArchSpec,
    updates: Sequence[ClientUpdate],
    vaccines: Sequence[np.ndarray],
    global_params: np.ndarray,
    metric: str = "params_delta",
    labeled: Shard | None = None,
) -> FilterOutcome:
    """Cluster updates around pinned vaccines and keep the vaccine-free cluster.

    Vaccines are clustered alongside the updates.  The benign cluster must be
    the only cluster without a vaccine; anything else raises
    ``ClusteringError``.  An empty benign cluster sets ``skipped``.
    """
    if not updates or not vaccines:
        raise ValueError("need at least one update and one vaccine")
    if metric not in CLUSTER_METRICS:
        raise ConfigError(f"unknown clustering metric {metric!r}")
    n, k = len(updates), len(vaccines)
    vectors = np.vstack([_stack([u.params for u in updates]), _stack(vaccines)])
    feats = cluster_features(arch, vectors, np.asarray(global_params, dtype=float), metric, labeled)
    result = kmeans_fixed(feats, feats[n:])
    vaccine_clusters = set(result.assignment[n:].tolist())
    clean = [c for c in range(k + 1) if c not in vaccine_clusters]
    if len(clean) != 1:
        raise ClusteringError(f"{len(clean)} clusters contain no vaccine")
    benign = clean[0]
    kept = [i for i in range(n) if result.assignment[i] == benign]
    mask = np.zeros(n, dtype=bool)
    mask[kept] = True
    report = detection_metrics(mask, [u.is_malicious for u in updates])
    return FilterOutcome(kept, result, report, benign, skipped=not kept)


# ---------------------------------------------------------------------------
# configuration and round-level aggregation rules


@dataclass(frozen=True)
class DefenseConfig:
    kind: str = "none"
    trmean_trim: int = 0
    metric: str = "params_delta"

    def __post_init__(self):
        if self.kind not in DEFENSE_KINDS:
            raise ConfigError(f"unknown defense {self.kind!r}")
        metric = self.metric.lower()
        if metric not in CLUSTER_METRICS:
            raise ConfigError(f"unknown clustering metric {self.metric!r}")
        object.__setattr__(self, "metric", metric)
        if self.trmean_trim < 0:
            raise ConfigError("trmean_trim must be >= 0")


def _kept_report(kept: np.ndarray, updates: Sequence[ClientUpdate]) -> DetectionReport:
    return detection_metrics(kept, [u.is_malicious for u in updates])


def make_aggregator(
    defense: DefenseConfig,
    arch: ArchSpec,
    train: TrainConfig,
    seed: int,
    labeled: Shard | None = None,
    vaccines: Sequence[VaccineSpec] = (),
    local_epochs: int = 1,
) -> Aggregate | None:
    """Round-level aggregation rule for ``defense``; ``None`` means plain FedAvg."""
    kind = defense.kind
    if kind == "none":
        return None
    if kind == "median":
        return lambda g, ups, t: Aggregation(median_agg([u.params for u in ups]))
    if kind == "trmean":
        trim = defense.trmean_trim
        return lambda g, ups, t: Aggregation(trmean_agg([u.params for u in ups], trim))
    if labeled is None:
        raise ConfigError(f"defense {kind!r} needs a labeled server set")
    if kind == "fltrust":
        def fltrust_rule(g, ups, t):
            server = fc_update(arch, g, labeled, local_epochs, train, derive_seed(seed, "fltrust", t))
            params = [u.params for u in ups]
            trust, _ = fltrust_weights(params, server, g)
            kept = trust > 0
            return Aggregation(
                fltrust_agg(params, server, g),
                kept=np.flatnonzero(kept).tolist(),
                detection=_kept_report(kept, ups),
                info={"trust": [float(x) for x in trust]},
            )
        return fltrust_rule
    if not vaccines:
        raise ConfigError("ssvax needs at least one vaccine")

    def ssvax_rule(g, ups, t):
        vax = []
        for i, spec in enumerate(vaccines):
            vax.extend(distill_vaccines(arch, g, labeled, spec, train, derive_seed(seed, "vaccine", t, i)))
        out = ssvax_filter(arch, ups, vax, g, defense.metric, labeled)
        params = g.copy() if out.skipped else fedavg([ups[i].params for i in out.kept])
        n = len(ups)
        info = {
            "cluster_sizes": out.clusters.sizes(),
            "benign_cluster": out.benign_cluster,
            "skipped": out.skipped,
            "assignments": out.clusters.assignment[:n].tolist(),
        }
        return Aggregation(params, kept=out.kept, detection=out.detection, detection_info=info,
                           info={"filter_skipped": out.skipped})
    return ssvax_rule


def run_ssvax(
    arch: ArchSpec,
    cfg: SemiConfig,
    shards: Sequence[Shard],
    labeled: Shard,
    train: TrainConfig,
    vaccines: Sequence[VaccineSpec],
    metric: str = "params_delta",
    test: Shard | None = None,
    poisoned=None,
    workers: int | None = None,
) -> FLResult:
    """Semi-supervised training with the vaccine filter in place of FedAvg."""
    rule = make_aggregator(DefenseConfig("ssvax", metric=metric), arch, train, cfg.fl.seed, labeled, vaccines)
    return run_semiss(arch, cfg, shards, labeled, train, test=test, aggregate=rule, poisoned=poisoned, workers=workers)
