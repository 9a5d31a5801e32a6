"""Named experiment presets.

Two surrogate datasets stand in for the captured ones:

- ``SDR``: 4 channels, 32-sample windows, 7 dB band SNR, 10,000-window pool.
- ``LTE``: 16 channels, 64-sample windows, 12 dB band SNR, 20,000-window pool.

Both draw a per-window noise floor from a 10 dB range, which keeps plain
energy detection well below the learned detector.  Every preset uses
N=100 clients, R_S=0.1, T=100 and E=2 unless its description says otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigError
from .config import (
    AttackSection,
    DataSection,
    DefenseSection,
    ExperimentConfig,
    ExperimentSection,
    SemiSection,
    TrainSection,
    VaccineSection,
)
from .runner import RunOutcome, execute, write_outputs, write_summary

SDR = ExperimentConfig(
    data=DataSection(channels=4, window=32, snr_db=7.0, noise_spread_db=10.0, pool_size=10_000),
    train=TrainSection(learning_rate=0.2),
    semi=SemiSection(fc_pretrain_epochs=10),
)
LTE = ExperimentConfig(
    data=DataSection(channels=16, window=64, snr_db=12.0, noise_spread_db=10.0, pool_size=20_000),
    train=TrainSection(learning_rate=0.1),
    semi=SemiSection(fc_pretrain_epochs=10),
)
VACCINE_EPOCHS = 2  # same local budget as a client


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    variants: tuple[tuple[str, ExperimentConfig], ...]


def _named(base: ExperimentConfig, name: str, **changes) -> ExperimentConfig:
    return base.replace(experiment=ExperimentSection(name, base.seed), **changes)


def _vax(kind="flip", channels=None) -> tuple[VaccineSection, ...]:
    return (VaccineSection(kind, channels, epochs=VACCINE_EPOCHS),)


def _attack(kind="flip", ratio=0.3, channels=None) -> tuple[AttackSection, ...]:
    return (AttackSection(kind, channels, ratio),)


def _semi(base: ExperimentConfig) -> ExperimentConfig:
    return base.replace(semi__protocol="semi")


def _fig5(base: ExperimentConfig, prefix: str) -> tuple:
    return tuple(
        (mode, _named(base, f"{prefix}-{mode}", model__mode=mode)) for mode in ("freq", "iq")
    )


def _fig6() -> tuple:
    base = SDR.replace(data__pool_size=50_000)
    return (
        ("supervised", _named(base, "fig6-supervised")),
        ("semiss", _named(_semi(base), "fig6-semiss")),
    )


def _table3() -> tuple:
    base = _semi(LTE)
    return tuple(
        (f"rc-{rc}", _named(base, f"table3-rc-{rc}", semi__correction_ratio=rc)) for rc in (0.3, 1.0, 0.0)
    )


def _fig7() -> tuple:
    attacked = SDR.replace(attacks=_attack("flip", 0.3))
    return (
        ("clean", _named(SDR, "fig7-clean")),
        ("median", _named(attacked, "fig7-median", defense=DefenseSection("median"))),
        ("trmean", _named(attacked, "fig7-trmean", defense=DefenseSection("trmean", trmean_trim=3))),
        ("ssvax", _named(attacked, "fig7-ssvax", defense=DefenseSection("ssvax"), vaccines=_vax("flip"))),
    )


def _fig8(kind: str, ratio: float, metric: str) -> tuple:
    base = _semi(LTE)
    return (
        ("clean", _named(base, f"fig8-{kind}-clean")),
        ("ssvax", _named(base, f"fig8-{kind}-ssvax", attacks=_attack(kind, ratio),
                         defense=DefenseSection("ssvax", metric=metric), vaccines=_vax(kind))),
    )


TABLE4_CHANNELS = (8, 6, 4, 2, 1)
TABLE4_RATIOS = (0.5, 0.3, 0.1)
TABLE4_VACCINE = tuple(range(8))


def _table4() -> tuple:
    base = _semi(LTE).replace(defense=DefenseSection("ssvax"), vaccines=_vax("flip", TABLE4_VACCINE))
    out = []
    for ratio in TABLE4_RATIOS:
        for n in TABLE4_CHANNELS:
            name = f"ch{n}-rm{ratio}"
            out.append((name, _named(base, f"table4-{name}", attacks=_attack("flip", ratio, tuple(range(n))))))
    return tuple(out)


def _fig10() -> tuple:
    base = _semi(LTE).replace(attacks=_attack("flip", 0.3, (0,)), defense=DefenseSection("ssvax"),
                              vaccines=_vax("flip", (0,)))
    out = [
        (metric, _named(base, f"fig10-{metric}", defense=DefenseSection("ssvax", metric=metric)))
        for metric in ("params_delta", "lpc", "apc")
    ]
    out.append(("fltrust", _named(base, "fig10-fltrust", defense=DefenseSection("fltrust"), vaccines=())))
    return tuple(out)


def _appendix_a() -> tuple:
    base = _semi(SDR)
    out = []
    for covered in (4, 2, 1):
        activity = tuple(0.5 if k < covered else 0.0 for k in range(4))
        out.append((f"freq-{covered}of4", _named(base, f"appendixA-freq-{covered}of4",
                                                   semi__labeled_size=10, data__labeled_activity=activity)))
    out.append(("iq-4of4", _named(base, "appendixA-iq-4of4", model__mode="iq")))
    return tuple(out)


def _appendix_b() -> tuple:
    attacks = (AttackSection("flip", None, 0.1), AttackSection("set_busy", None, 0.1), AttackSection("random", None, 0.1))
    cfg = _semi(LTE).replace(attacks=attacks, defense=DefenseSection("ssvax"),
                             vaccines=_vax("flip") + _vax("set_busy"))
    return (("multivax", _named(cfg, "appendixB-multivax")),)


def _dense() -> tuple:
    base = _semi(LTE).replace(fl__num_clients=500)
    return (
        ("clean", _named(base, "dense500-clean")),
        ("ssvax", _named(base, "dense500-ssvax", attacks=_attack("flip", 0.3),
                         defense=DefenseSection("ssvax"), vaccines=_vax("flip"))),
    )


def _build() -> dict[str, Preset]:
    items = [
        Preset("fig5-freq-vs-iq", "Supervised FL on SDR surrogate: frequency vs raw IQ features.",
               _fig5(SDR, "fig5-sdr")),
        Preset("fig5-lte-freq-vs-iq", "Supervised FL on LTE surrogate: frequency vs raw IQ features.",
               _fig5(LTE, "fig5-lte")),
        Preset("fig6-semiss", "SDR surrogate with a 50,000-window pool: SemiSS with |D^S|=200 (0.4%) "
               "against fully supervised FL.", _fig6()),
        Preset("table3-correction", "SemiSS on LTE surrogate with correction ratio 0.3, 1.0 and 0.",
               _table3()),
        Preset("fig7-median-breakdown", "Supervised FL on SDR surrogate under 30% label flipping: "
               "median, trimmed mean (N_M=3) and SSVax against an attack-free run.", _fig7()),
        Preset("fig8-flip", "SemiSS on LTE surrogate, untargeted flipping at R_M=0.3, flip vaccine, "
               "update-delta clustering.", _fig8("flip", 0.3, "params_delta")),
        Preset("fig8-busy", "SemiSS on LTE surrogate, untargeted set-busy at R_M=0.7, set-busy vaccine, "
               "per-channel accuracy clustering.", _fig8("set_busy", 0.7, "apc")),
        Preset("table4-sweep", "Targeted flipping on 8/6/4/2/1 of 16 channels at R_M 0.5/0.3/0.1; "
               "one vaccine flipping channels 0-7; update-delta clustering.", _table4()),
        Preset("fig10-single-channel", "Flipping on 1 of 16 channels with a matching vaccine: "
               "update-delta, LPC and APC clustering, plus FLTrust.", _fig10()),
        Preset("appendixA-fc-distributions", "SemiSS on SDR surrogate with labeled sets covering "
               "4, 2 or 1 of the channels (|D^S|=10), plus raw IQ with |D^S|=200.", _appendix_a()),
        Preset("appendixB-multivax", "Flip, set-busy and random attackers (10% each) against flip and "
               "set-busy vaccines.", _appendix_b()),
        Preset("dense500", "fig8-flip with 500 clients (50 sampled per round).", _dense()),
    ]
    return {p.name: p for p in items}


PRESETS = _build()


def presets() -> dict[str, Preset]:
    return dict(PRESETS)


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; try 'preset list'") from None


def run_preset(name: str, out_dir=None, rounds: int | None = None, workers: int | None = None,
               only: str | None = None) -> dict[str, RunOutcome]:
    """Run every variant (or just ``only``); write per-variant dirs and a combined summary."""
    preset = get_preset(name)
    variants = [(v, c) for v, c in preset.variants if only is None or v == only]
    if not variants:
        raise ConfigError(f"preset {name!r} has no variant {only!r}")
    outcomes: dict[str, RunOutcome] = {}
    for variant, cfg in variants:
        if rounds is not None:
            cfg = cfg.replace(fl__rounds=rounds)
        outcome = execute(cfg, workers)
        outcomes[variant] = outcome
        if out_dir is not None:
            write_outputs(outcome, Path(out_dir) / variant)
    if out_dir is not None:
        rows = [{"preset": name, "variant": v, **o.summary} for v, o in outcomes.items()]
        write_summary(Path(out_dir) / "summary.csv", rows, extra_fields=("preset", "variant"))
    return outcomes
