"""Command-line entry point.

    fedspectrum gen  --channels 4 --window 32 --snr 7 --count 1000 --seed 0 --out pool.fssd
    fedspectrum run  experiment.ini --out runs/exp [--attack flip ...]
    fedspectrum preset list
    fedspectrum preset run fig8-flip --out runs/fig8

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..attacks import ATTACK_ALIASES
from ..errors import ConfigError
from ..signal import GeneratorConfig, generate_dataset, write_dataset
from .config import AttackSection, DefenseSection, VaccineSection, parse_config
from .presets import presets, run_preset
from .runner import run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _channels(text: str):
    if text.lower() == "all":
        return None
    try:
        return tuple(int(c) for c in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'all' or comma-separated ints, got {text!r}") from None


def _probs(text: str):
    parts = [float(p) for p in text.split(",")]
    return parts[0] if len(parts) == 1 else tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedspectrum", description="Federated spectrum-sensing simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a surrogate dataset file")
    gen.add_argument("-o", "--out", "--output", dest="output", required=True)
    gen.add_argument("--channels", type=int, default=4)
    gen.add_argument("--window", type=int, default=32)
    gen.add_argument("--snr", type=float, default=0.0, help="band SNR in dB")
    gen.add_argument("--activity", type=_probs, default=0.5, help="busy probability, one or K values")
    gen.add_argument("--count", "--num", dest="num", type=int, default=1000)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--noise-spread", type=float, default=0.0, help="noise-floor range in dB")
    gen.add_argument("--snr-spread", type=float, default=0.0, help="per-channel SNR range in dB")

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", help="config file ('-' reads stdin)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--rounds", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--attack", choices=sorted(ATTACK_ALIASES))
    run.add_argument("--target-channels", type=_channels, default=None)
    run.add_argument("--malicious-ratio", type=float)
    run.add_argument("--defense", choices=["none", "median", "trmean", "fltrust", "ssvax"])
    run.add_argument("--trim", type=int, help="trimmed-mean N_M")
    run.add_argument("--vaccine", choices=sorted(ATTACK_ALIASES))
    run.add_argument("--vaccine-channels", type=_channels, default=None)
    run.add_argument("--cluster-metric", choices=["params_delta", "lpc", "apc"])

    preset = sub.add_parser("preset", help="list or run presets")
    psub = preset.add_subparsers(dest="preset_command", required=True)
    psub.add_parser("list", help="list preset names and descriptions")
    prun = psub.add_parser("run", help="run a preset")
    prun.add_argument("name")
    prun.add_argument("--out", required=True)
    prun.add_argument("--rounds", type=int, help="override T for a quick run")
    prun.add_argument("--variant", help="run a single variant")
    return parser


def _apply_overrides(cfg, args):
    changes = {}
    if args.rounds is not None:
        changes["fl__rounds"] = args.rounds
    if args.seed is not None:
        changes["experiment__seed"] = args.seed
    if args.attack or args.target_channels is not None or args.malicious_ratio is not None:
        first = cfg.attacks[0] if cfg.attacks else AttackSection()
        attack = AttackSection(
            ATTACK_ALIASES[args.attack] if args.attack else first.kind,
            args.target_channels if args.target_channels is not None else first.targeted_channels,
            first.malicious_ratio if args.malicious_ratio is None else args.malicious_ratio,
        )
        changes["attacks"] = (attack,) + tuple(cfg.attacks[1:])
    if args.defense or args.trim is not None or args.cluster_metric:
        d = cfg.defense
        changes["defense"] = DefenseSection(
            args.defense or d.kind,
            d.trmean_trim if args.trim is None else args.trim,
            args.cluster_metric or d.metric,
        )
    if args.vaccine or args.vaccine_channels is not None:
        first = cfg.vaccines[0] if cfg.vaccines else VaccineSection()
        vax = VaccineSection(
            ATTACK_ALIASES[args.vaccine] if args.vaccine else first.kind,
            args.vaccine_channels if args.vaccine_channels is not None else first.targeted_channels,
            first.count,
            first.epochs,
        )
        changes["vaccines"] = (vax,) + tuple(cfg.vaccines[1:])
    return cfg.replace(**changes) if changes else cfg


def _cmd_gen(args) -> int:
    cfg = GeneratorConfig(
        channels=args.channels, window=args.window, snr_db=args.snr, activity_prob=args.activity,
        seed=args.seed, num_examples=args.num, noise_spread_db=args.noise_spread, snr_spread_db=args.snr_spread,
    )
    write_dataset(args.output, generate_dataset(cfg))
    print(f"wrote {args.num} windows to {args.output}")
    return EXIT_OK


def _cmd_run(args) -> int:
    text = sys.stdin.read() if args.config == "-" else Path(args.config).read_text(encoding="utf-8")
    cfg = _apply_overrides(parse_config(text), args)
    outcome = run_experiment(cfg, args.out)
    _print_summary([outcome.summary])
    return EXIT_OK


def _cmd_preset(args) -> int:
    if args.preset_command == "list":
        for name, p in presets().items():
            print(f"{name:28s} {len(p.variants):2d} run(s)  {p.description}")
        return EXIT_OK
    outcomes = run_preset(args.name, args.out, rounds=args.rounds, only=args.variant)
    _print_summary([{"name": v, **o.summary} for v, o in outcomes.items()])
    return EXIT_OK


def _print_summary(rows) -> None:
    for row in rows:
        acc = row.get("final_accuracy")
        r99 = row.get("rounds_to_99")
        fnr = row.get("late_fnr")
        parts = [f"{row['name']}: final accuracy {acc:.4f}" if acc is not None else f"{row['name']}: no rounds"]
        parts.append(f"rounds to 99% {r99 if r99 is not None else '-'}")
        if fnr is not None:
            parts.append(f"late FNR {fnr:.3f} FPR {row['late_fpr']:.3f}")
        print(", ".join(parts))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"gen": _cmd_gen, "run": _cmd_run, "preset": _cmd_preset}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # surfaced as a runtime failure with its message
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
