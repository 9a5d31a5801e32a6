"""Cross-device federated training: client sampling, local SGD and FedAvg.

``run_rounds`` is the shared round loop.  The supervised protocol, the
semi-supervised protocol and every defense plug into it through small
callables, so all of them sample clients, derive seeds and report metrics in
exactly the same way.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .model import ArchSpec, EvalResult, TrainConfig, evaluate, init_params, sgd_epochs
from .rng import derive_seed, stream
from .signal import SpectrumDataset

THREADS_ENV = "FEDSPECTRUM_THREADS"


def ratio_count(total: int, ratio: float) -> int:
    """``floor(total * ratio)`` without losing 0.7 * 100 to rounding."""
    return int(math.floor(total * ratio + 1e-9))


@dataclass(frozen=True)
class FLConfig:
    num_clients: int = 100
    select_ratio: float = 0.1
    rounds: int = 100
    local_epochs: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if not 0 < self.select_ratio <= 1:
            raise ConfigError("select_ratio must lie in (0, 1]")
        if self.num_selected < 1:
            raise ConfigError("num_clients * select_ratio selects no client")
        if self.rounds < 0 or self.local_epochs < 1:
            raise ConfigError("rounds must be >= 0 and local_epochs >= 1")

    @property
    def num_selected(self) -> int:
        return ratio_count(self.num_clients, self.select_ratio)


@dataclass(frozen=True, eq=False)
class Shard:
    """Model-ready data held by one party: features, labels, band energies."""

    x: np.ndarray
    y: np.ndarray
    energy: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.x)

    @classmethod
    def from_dataset(cls, dataset: SpectrumDataset, mode: str) -> "Shard":
        return cls(dataset.features(mode), dataset.labels.astype(float), dataset.band_energy)

    def subset(self, index) -> "Shard":
        return Shard(self.x[index], self.y[index], None if self.energy is None else self.energy[index])

    def with_labels(self, y: np.ndarray) -> "Shard":
        return Shard(self.x, np.asarray(y, dtype=float), self.energy)


def split_shards(pool: Shard, num_clients: int) -> list[Shard]:
    """Contiguous even split; the first ``len % num_clients`` clients get one extra example."""
    if len(pool) < num_clients:
        raise ConfigError(f"{len(pool)} examples cannot feed {num_clients} clients")
    return [pool.subset(idx) for idx in np.array_split(np.arange(len(pool)), num_clients)]


@dataclass(eq=False)
class ClientUpdate:
    client_id: int
    round: int
    params: np.ndarray
    # evaluation-only metadata; aggregation rules only ever see ``params``
    is_malicious: bool = False
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DetectionReport:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def fnr(self) -> float:
        return self.fn / (self.fn + self.tp) if self.fn + self.tp else 0.0

    @property
    def fpr(self) -> float:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else 0.0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class Aggregation:
    params: np.ndarray
    kept: list[int] | None = None  # indices into the round's updates
    detection: DetectionReport | None = None
    info: dict = field(default_factory=dict)  # merged into the round report
    detection_info: dict = field(default_factory=dict)  # merged into the detection record


@dataclass
class RoundReport:
    round: int
    test_accuracy: float
    per_channel_accuracy: list[float]
    selected_ids: list[int]
    malicious_selected_ratio: float
    extra: dict = field(default_factory=dict)
    detection: DetectionReport | None = None
    kept_ids: list[int] | None = None
    detection_info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "round": self.round,
            "test_accuracy": self.test_accuracy,
            "per_channel_accuracy": self.per_channel_accuracy,
            "selected_ids": self.selected_ids,
            "malicious_selected_ratio": self.malicious_selected_ratio,
        }
        out.update(self.extra)
        return out

    def detection_dict(self) -> dict | None:
        if self.detection is None:
            return None
        d = self.detection
        out = {
            "round": self.round,
            "tp": d.tp,
            "fp": d.fp,
            "fn": d.fn,
            "tn": d.tn,
            "fnr": d.fnr,
            "fpr": d.fpr,
            "kept_ids": self.kept_ids,
        }
        out.update(self.detection_info)
        return out


@dataclass
class FLResult:
    params: np.ndarray
    reports: list[RoundReport]
    initial_params: np.ndarray


def select_clients(round: int, cfg: FLConfig) -> np.ndarray:
    """Sorted ids of the ``N_S`` clients sampled without replacement in ``round``."""
    rng = stream(cfg.seed, "select", round)
    return np.sort(rng.choice(cfg.num_clients, size=cfg.num_selected, replace=False))


def local_seed(cfg: FLConfig, round: int, client_id: int) -> int:
    return derive_seed(cfg.seed, "local", round, client_id)


def local_update(arch: ArchSpec, global_params: np.ndarray, x, y, train: TrainConfig) -> np.ndarray:
    """Copy the global model and run ``train.epochs`` epochs of SGD on one shard."""
    if len(x) == 0:
        raise ValueError("empty shard")
    return sgd_epochs(arch, global_params, x, y, train)


def _stack(updates: Sequence[np.ndarray]) -> np.ndarray:
    if len(updates) == 0:
        raise ValueError("no updates to aggregate")
    lengths = {np.shape(u) for u in updates}
    if len(lengths) != 1:
        raise ValueError(f"update length mismatch: {sorted(lengths)}")
    return np.stack([np.asarray(u, dtype=float) for u in updates])


def sorted_mean(stacked: np.ndarray) -> np.ndarray:
    """Column means of ``(n, d)`` values, independent of row order.

    Columns are sorted and summed as offsets from their minimum, which makes
    the mean of identical rows exact.
    """
    ordered = np.sort(stacked, axis=0)
    low = ordered[0]
    return low + (ordered - low).sum(axis=0) / len(ordered)


def fedavg(updates: Sequence[np.ndarray]) -> np.ndarray:
    """Unweighted coordinate-wise mean; bit-identical under reordering of ``updates``."""
    return sorted_mean(_stack(updates))


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


TrainClient = Callable[[int, np.ndarray, int, dict], ClientUpdate]
Aggregate = Callable[[np.ndarray, list[ClientUpdate], int], Aggregation]


def fedavg_rule(global_params: np.ndarray, updates: list[ClientUpdate], round: int) -> Aggregation:
    return Aggregation(fedavg([u.params for u in updates]), kept=list(range(len(updates))))


def run_rounds(
    arch: ArchSpec,
    params: np.ndarray,
    cfg: FLConfig,
    train_client: TrainClient,
    test: "Shard | None" = None,
    aggregate: Aggregate | None = None,
    prepare: Callable[[np.ndarray, int], dict] | None = None,
    finish: Callable[[np.ndarray, int], np.ndarray] | None = None,
    summarize: Callable[[list[ClientUpdate], dict], dict] | None = None,
    malicious: Iterable[int] = (),
    workers: int | None = None,
) -> FLResult:
    """Generic select -> train -> aggregate -> finish loop over ``cfg.rounds`` rounds."""
    aggregate = aggregate or fedavg_rule
    malicious = frozenset(int(m) for m in malicious)
    workers = worker_count() if workers is None else workers
    initial = np.array(params, copy=True)
    reports: list[RoundReport] = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(1, cfg.rounds + 1):
            ids = [int(i) for i in select_clients(t, cfg)]
            context = prepare(params, t) if prepare else {}
            jobs = [(cid, params, t, context) for cid in ids]
            if pool is None:
                updates = [train_client(*job) for job in jobs]
            else:
                updates = list(pool.map(lambda job: train_client(*job), jobs))
            for u in updates:
                u.is_malicious = u.client_id in malicious
            agg = aggregate(params, updates, t)
            params = agg.params
            if finish:
                params = finish(params, t)
            extra = {k: v for k, v in context.items() if not k.startswith("_")}
            if summarize:
                extra.update(summarize(updates, context))
            extra.update(agg.info)
            result: EvalResult | None = None
            if test is not None:
                result = evaluate(arch, params, test.x, test.y)
            reports.append(
                RoundReport(
                    round=t,
                    test_accuracy=result.accuracy if result else float("nan"),
                    per_channel_accuracy=[float(a) for a in result.per_channel_accuracy] if result else [],
                    selected_ids=ids,
                    malicious_selected_ratio=sum(i in malicious for i in ids) / len(ids),
                    extra=extra,
                    detection=agg.detection,
                    kept_ids=None if agg.kept is None else [updates[i].client_id for i in agg.kept],
                    detection_info=agg.detection_info,
                )
            )
    finally:
        if pool is not None:
            pool.shutdown()
    return FLResult(params, reports, initial)


def run_supervised_fl(
    arch: ArchSpec,
    cfg: FLConfig,
    shards: Sequence[Shard],
    train: TrainConfig,
    test: Shard | None = None,
    aggregate: Aggregate | None = None,
    poisoned: Mapping[int, np.ndarray] | None = None,
    params: np.ndarray | None = None,
    workers: int | None = None,
) -> FLResult:
    """Plain supervised FLSS: every client trains on its (possibly poisoned) labels."""
    if len(shards) != cfg.num_clients:
        raise ConfigError(f"{len(shards)} shards for {cfg.num_clients} clients")
    if any(len(s) == 0 for s in shards):
        raise ValueError("every client shard must be non-empty")
    poisoned = dict(poisoned or {})
    if params is None:
        params = init_params(arch, derive_seed(cfg.seed, "init"))

    def train_client(cid: int, global_params: np.ndarray, t: int, context: dict) -> ClientUpdate:
        shard = shards[cid]
        y = poisoned.get(cid, shard.y)
        tc = TrainConfig(train.learning_rate, train.batch_size, cfg.local_epochs, local_seed(cfg, t, cid))
        return ClientUpdate(cid, t, local_update(arch, global_params, shard.x, y, tc))

    return run_rounds(arch, params, cfg, train_client, test=test, aggregate=aggregate,
                      malicious=poisoned.keys(), workers=workers)
