"""Run one experiment end to end and write its artifacts.

Artifacts in the output directory:

- ``rounds.jsonl``: one object per round (accuracy, per-channel accuracy,
  selected ids, malicious fraction, protocol extras).
- ``detection.jsonl``: one object per round when a filtering defense runs
  (confusion counts, rates, kept ids, cluster sizes).
- ``params.txt``: final parameter vector (FSSW1 format).
- ``summary.csv``: one row with the columns in ``SUMMARY_FIELDS``.
- ``config.ini``: the fully rendered configuration.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..attacks import AttackSpec, asr, assign_attackers, poison_labels
from ..defense import make_aggregator
from ..errors import ConfigError, UndefinedMetricError
from ..fl_core import FLResult, RoundReport, Shard, split_shards, run_supervised_fl
from ..model import ArchSpec, save_params
from ..rng import derive_seed
from ..semiss import run_semiss
from ..signal import SpectrumDataset, generate_dataset, read_dataset
from .config import ExperimentConfig, render_config

SUMMARY_FIELDS = (
    "name",
    "rounds",
    "final_accuracy",
    "rounds_to_99",
    "mean_fnr_last20",
    "mean_fpr_last20",
    "late_fnr",
    "late_fpr",
    "asr",
)
LATE_WINDOW = 20
TARGET_ACCURACY = 0.99


@dataclass
class DataSplit:
    pool: SpectrumDataset
    test: SpectrumDataset
    labeled: SpectrumDataset


@dataclass
class RunOutcome:
    config: ExperimentConfig
    result: FLResult
    summary: dict
    attack_of: dict[int, str] = field(default_factory=dict)

    @property
    def reports(self) -> list[RoundReport]:
        return self.result.reports


def build_data(cfg: ExperimentConfig) -> DataSplit:
    """Client pool, holdout and server labeled set.

    Generated data uses independent sub-seeds of the master seed.  A file
    pool is split from the end: the last ``test_size`` records form the
    holdout and the ``labeled_size`` before them the labeled set.
    """
    d, seed = cfg.data, cfg.seed
    size = cfg.semi.labeled_size
    if d.path is None:
        return DataSplit(
            generate_dataset(cfg.generator(derive_seed(seed, "pool"), d.pool_size)),
            generate_dataset(cfg.generator(derive_seed(seed, "test"), d.test_size)),
            generate_dataset(cfg.generator(derive_seed(seed, "labeled"), size, d.labeled_activity)),
        )
    ds = read_dataset(d.path)
    if (ds.channels, ds.window) != (d.channels, d.window):
        raise ConfigError(f"{d.path}: K={ds.channels} N={ds.window} does not match data.channels/window")
    pool_end = len(ds) - d.test_size - size
    if pool_end < cfg.fl.num_clients:
        raise ConfigError(f"{d.path}: {len(ds)} records cannot cover holdout, labeled set and clients")
    return DataSplit(ds[:pool_end], ds[len(ds) - d.test_size:], ds[pool_end:len(ds) - d.test_size])


def _attack_asr(arch: ArchSpec, params, test: Shard, spec: AttackSpec) -> float | None:
    pairs = {"set_busy": [(0, 1)], "set_idle": [(1, 0)]}.get(spec.kind, [(0, 1), (1, 0)])
    values = []
    for k in np.flatnonzero(spec.mask(arch.outputs)):
        for src, dst in pairs:
            try:
                values.append(asr(arch, params, test.x, test.y, src, dst, int(k)))
            except UndefinedMetricError:
                pass
    return float(np.mean(values)) if values else None


def rounds_to_target(reports, target: float = TARGET_ACCURACY) -> int | None:
    return next((r.round for r in reports if r.test_accuracy >= target), None)


def late_rates(reports, window: int = LATE_WINDOW) -> dict:
    """Mean of per-round rates and pooled rates over the last ``window`` rounds."""
    dets = [r.detection for r in reports[-window:] if r.detection is not None]
    if not dets:
        return {"mean_fnr_last20": None, "mean_fpr_last20": None, "late_fnr": None, "late_fpr": None}
    tp, fp, fn, tn = (sum(getattr(d, a) for d in dets) for a in ("tp", "fp", "fn", "tn"))
    return {
        "mean_fnr_last20": float(np.mean([d.fnr for d in dets])),
        "mean_fpr_last20": float(np.mean([d.fpr for d in dets])),
        "late_fnr": fn / (fn + tp) if fn + tp else 0.0,
        "late_fpr": fp / (fp + tn) if fp + tn else 0.0,
    }


def execute(cfg: ExperimentConfig, workers: int | None = None) -> RunOutcome:
    """Run ``cfg`` in memory."""
    arch, fl, train = cfg.arch(), cfg.fl_config(), cfg.train_config()
    mode = cfg.model.mode
    data = build_data(cfg)
    shards = split_shards(Shard.from_dataset(data.pool, mode), fl.num_clients)
    test = Shard.from_dataset(data.test, mode)
    labeled = Shard.from_dataset(data.labeled, mode)

    specs = cfg.attack_specs()
    poisoned, attack_of = {}, {}
    for spec, ids in zip(specs, assign_attackers(fl.num_clients, specs, cfg.seed)):
        for cid in ids:
            cid = int(cid)
            poisoned[cid] = poison_labels(shards[cid].y, spec, cid)
            attack_of[cid] = spec.kind

    aggregate = make_aggregator(cfg.defense_config(), arch, train, cfg.seed, labeled,
                                cfg.vaccine_specs(), fl.local_epochs)
    if cfg.semi.protocol == "semi":
        result = run_semiss(arch, cfg.semi_config(), shards, labeled, train, test=test,
                            aggregate=aggregate, poisoned=poisoned, workers=workers)
    else:
        result = run_supervised_fl(arch, fl, shards, train, test=test, aggregate=aggregate,
                                   poisoned=poisoned, workers=workers)

    reports = result.reports
    summary = {
        "name": cfg.experiment.name,
        "rounds": len(reports),
        "final_accuracy": reports[-1].test_accuracy if reports else None,
        "rounds_to_99": rounds_to_target(reports),
        **late_rates(reports),
        "asr": _attack_asr(arch, result.params, test, specs[0]) if specs else None,
    }
    return RunOutcome(cfg, result, summary, attack_of)


def _clean(value):
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return None if math.isnan(value) else float(value)
    return value


def _jsonl(records) -> str:
    return "".join(json.dumps(_clean(r), separators=(",", ":")) + "\n" for r in records)


def round_records(outcome: RunOutcome) -> list[dict]:
    return [r.to_dict() for r in outcome.reports]


def detection_records(outcome: RunOutcome) -> list[dict]:
    out = []
    for r in outcome.reports:
        rec = r.detection_dict()
        if rec is not None:
            rec["selected_kinds"] = [outcome.attack_of.get(i, "benign") for i in r.selected_ids]
            out.append(rec)
    return out


def _csv_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_summary(path: Path, rows, extra_fields=()) -> None:
    fields = tuple(extra_fields) + SUMMARY_FIELDS
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_csv_value(row.get(f)) for f in fields])


def write_outputs(outcome: RunOutcome, out_dir) -> Path:
    out = Path(out_dir)
    o = outcome.config.output
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(render_config(outcome.config), encoding="utf-8")
        (out / o.rounds_file).write_text(_jsonl(round_records(outcome)), encoding="utf-8")
        if outcome.config.defense.kind != "none":
            (out / o.detection_file).write_text(_jsonl(detection_records(outcome)), encoding="utf-8")
        save_params(out / o.params_file, outcome.result.params)
        write_summary(out / o.summary_file, [outcome.summary])
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return out


def run_experiment(cfg: ExperimentConfig, out_dir, workers: int | None = None) -> RunOutcome:
    outcome = execute(cfg, workers)
    write_outputs(outcome, out_dir)
    return outcome
