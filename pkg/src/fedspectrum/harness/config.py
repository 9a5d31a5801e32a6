"""Experiment configuration: a small INI-like text format.

Layout::

    # comment
    [data]
    channels = 16
    snr_db = 12.0

    [attack]          # may repeat; each header starts a new attack
    kind = flip
    targeted_channels = 0,1,2

    defense.kind = ssvax   # dotted keys address a section from anywhere

Unknown sections or keys, malformed lines and invalid values raise
``ConfigError`` carrying the offending line number.  ``render`` writes every
field explicitly, and ``parse(render(cfg)) == cfg``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Callable

from ..attacks import AttackSpec
from ..defense import DefenseConfig, VaccineSpec
from ..errors import ConfigError
from ..fl_core import FLConfig
from ..model import ArchSpec, TrainConfig
from ..semiss import SemiConfig
from ..signal import GeneratorConfig

PROTOCOLS = ("supervised", "semi")
FEATURE_MODES = ("freq", "iq")


@dataclass(frozen=True)
class DataSection:
    channels: int = 4
    window: int = 32
    snr_db: float = 0.0
    activity_prob: float | tuple[float, ...] = 0.5
    noise_spread_db: float = 0.0
    snr_spread_db: float = 0.0
    symbols: int = 2
    pool_size: int = 10_000
    test_size: int = 2_000
    # activity of the server's labeled set; None reuses activity_prob
    labeled_activity: float | tuple[float, ...] | None = None
    # pool read from an FSSD1 file instead of being generated
    path: str | None = None


@dataclass(frozen=True)
class ModelSection:
    mode: str = "freq"
    conv_channels: int = 8
    kernel: int = 5
    hidden: int = 32


@dataclass(frozen=True)
class TrainSection:
    learning_rate: float = 1e-3
    batch_size: int = 32


@dataclass(frozen=True)
class FLSection:
    num_clients: int = 100
    select_ratio: float = 0.1
    rounds: int = 100
    local_epochs: int = 2


@dataclass(frozen=True)
class SemiSection:
    protocol: str = "supervised"
    labeled_size: int = 200
    fc_pretrain_epochs: int = 100
    fc_finetune_epochs: int = 2
    correction_ratio: float = 0.3
    correction: bool = True


@dataclass(frozen=True)
class AttackSection:
    kind: str = "flip"
    targeted_channels: tuple[int, ...] | None = None
    malicious_ratio: float = 0.3


@dataclass(frozen=True)
class DefenseSection:
    kind: str = "none"
    trmean_trim: int = 0
    metric: str = "params_delta"


@dataclass(frozen=True)
class VaccineSection:
    kind: str = "flip"
    targeted_channels: tuple[int, ...] | None = None
    count: int = 1
    epochs: int = 1


@dataclass(frozen=True)
class ExperimentSection:
    name: str = "experiment"
    seed: int = 0


@dataclass(frozen=True)
class OutputSection:
    rounds_file: str = "rounds.jsonl"
    detection_file: str = "detection.jsonl"
    params_file: str = "params.txt"
    summary_file: str = "summary.csv"


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    fl: FLSection = field(default_factory=FLSection)
    semi: SemiSection = field(default_factory=SemiSection)
    attacks: tuple[AttackSection, ...] = ()
    defense: DefenseSection = field(default_factory=DefenseSection)
    vaccines: tuple[VaccineSection, ...] = ()
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        validate(self)

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with whole sections or ``section__field`` values swapped."""
        direct = {k: v for k, v in sections.items() if "__" not in k}
        nested: dict[str, dict] = {}
        for key, value in sections.items():
            if "__" in key:
                sec, name = key.split("__", 1)
                nested.setdefault(sec, {})[name] = value
        for sec, values in nested.items():
            direct[sec] = dataclasses.replace(direct.get(sec, getattr(self, sec)), **values)
        return dataclasses.replace(self, **direct)

    # -- typed views used by the runner --------------------------------

    @property
    def seed(self) -> int:
        return self.experiment.seed

    def arch(self) -> ArchSpec:
        m = self.model
        return ArchSpec.for_mode(m.mode, self.data.window, self.data.channels,
                                 conv_channels=m.conv_channels, kernel=m.kernel, hidden=m.hidden)

    def fl_config(self) -> FLConfig:
        f = self.fl
        return FLConfig(f.num_clients, f.select_ratio, f.rounds, f.local_epochs, self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.train.learning_rate, self.train.batch_size)

    def semi_config(self) -> SemiConfig:
        s = self.semi
        return SemiConfig(s.labeled_size, s.fc_pretrain_epochs, s.fc_finetune_epochs, s.correction_ratio,
                          self.fl_config(), s.correction)

    def generator(self, seed: int, num_examples: int, activity=None) -> GeneratorConfig:
        d = self.data
        return GeneratorConfig(
            channels=d.channels, window=d.window, snr_db=d.snr_db,
            activity_prob=d.activity_prob if activity is None else activity,
            seed=seed, num_examples=num_examples, symbols=d.symbols,
            snr_spread_db=d.snr_spread_db, noise_spread_db=d.noise_spread_db,
        )

    def attack_specs(self) -> list[AttackSpec]:
        return [AttackSpec(a.kind, a.targeted_channels, a.malicious_ratio, self.seed) for a in self.attacks]

    def defense_config(self) -> DefenseConfig:
        d = self.defense
        return DefenseConfig(d.kind, d.trmean_trim, d.metric)

    def vaccine_specs(self) -> list[VaccineSpec]:
        return [VaccineSpec(v.kind, v.targeted_channels, v.count, v.epochs) for v in self.vaccines]


# ---------------------------------------------------------------------------
# value codecs


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _probs(text: str):
    parts = [float(p) for p in text.split(",")]
    return parts[0] if len(parts) == 1 else tuple(parts)


def _opt_probs(text: str):
    return None if text in ("", "same") else _probs(text)


def _channels(text: str):
    if text.lower() == "all":
        return None
    return tuple(int(p) for p in text.split(","))


def _opt_str(text: str):
    return text or None


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    return str(value)


def _render_channels(value) -> str:
    return "all" if value is None else _render(value)


_PARSERS: dict[type, dict[str, Callable[[str], Any]]] = {
    DataSection: {"activity_prob": _probs, "labeled_activity": _opt_probs, "path": _opt_str},
    AttackSection: {"targeted_channels": _channels},
    VaccineSection: {"targeted_channels": _channels},
    SemiSection: {"correction": _bool},
}
_BASIC = {"int": int, "float": float, "str": str, "bool": _bool}

SECTIONS: dict[str, type] = {
    "experiment": ExperimentSection,
    "data": DataSection,
    "model": ModelSection,
    "train": TrainSection,
    "fl": FLSection,
    "semi": SemiSection,
    "attack": AttackSection,
    "defense": DefenseSection,
    "vaccine": VaccineSection,
    "output": OutputSection,
}
REPEATED = {"attack": "attacks", "vaccine": "vaccines"}


def _converter(cls: type, name: str) -> Callable[[str], Any]:
    special = _PARSERS.get(cls, {})
    if name in special:
        return special[name]
    f = next(f for f in dataclasses.fields(cls) if f.name == name)
    return _BASIC[str(f.type)]


def documented_defaults() -> dict[str, dict[str, Any]]:
    """Every section's keys with their default values."""
    return {sec: {f.name: f.default for f in dataclasses.fields(cls)} for sec, cls in SECTIONS.items()}


# ---------------------------------------------------------------------------
# parse / render


class _Builder:
    def __init__(self):
        self.single: dict[str, dict] = {}
        self.repeated: dict[str, list[dict]] = {"attack": [], "vaccine": []}
        self.lines: dict[tuple[str, str], int] = {}

    def target(self, section: str, new: bool = False) -> dict:
        if section in REPEATED:
            items = self.repeated[section]
            if new or not items:
                items.append({})
            return items[-1] if new else items[0]
        return self.single.setdefault(section, {})


def parse_config(text: str) -> ExperimentConfig:
    b = _Builder()
    current: str | None = None
    current_values: dict | None = None
    section_line: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith(";"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", line=lineno)
            current = line[1:-1].strip().lower()
            if current not in SECTIONS:
                raise ConfigError(f"unknown section [{current}]", line=lineno)
            current_values = b.target(current, new=current in REPEATED)
            section_line[current] = lineno
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
            section = section.lower()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section in key {key!r}", line=lineno)
            values = b.target(section)
            section_line.setdefault(section, lineno)
        elif current is None:
            raise ConfigError(f"key {key!r} outside any section", line=lineno)
        else:
            section, name, values = current, key, current_values
        cls = SECTIONS[section]
        if name not in {f.name for f in dataclasses.fields(cls)}:
            raise ConfigError(f"unknown key {section}.{name}", line=lineno)
        try:
            values[name] = _converter(cls, name)(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{name}: {exc}", line=lineno) from None
        b.lines[(section, name)] = lineno

    def build(section: str, values: dict):
        try:
            return SECTIONS[section](**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), line=section_line.get(section)) from None

    kwargs = {sec: build(sec, vals) for sec, vals in b.single.items()}
    for sec, attr in REPEATED.items():
        kwargs[attr] = tuple(build(sec, vals) for vals in b.repeated[sec])
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError as exc:
        if exc.line is not None:
            raise
        hint = _line_hint(str(exc), b.lines, section_line)
        raise ConfigError(str(exc), line=hint) from None


def _line_hint(message: str, lines: dict, section_line: dict) -> int | None:
    """Best guess at the line behind a cross-field error: dotted key, then key, then section."""
    ordered = sorted(lines.items(), key=lambda kv: kv[1])
    for match in (lambda s, n: f"{s}.{n}" in message, lambda s, n: n in message, lambda s, n: s in message):
        for (section, name), lineno in ordered:
            if match(section, name):
                return lineno
    return min(section_line.values(), default=None)


def render_config(cfg: ExperimentConfig) -> str:
    out: list[str] = []

    def emit(section: str, obj):
        out.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            text = _render_channels(value) if f.name == "targeted_channels" else _render(value)
            if f.name == "labeled_activity" and value is None:
                text = "same"
            out.append(f"{f.name} = {text}")
        out.append("")

    for section in ("experiment", "data", "model", "train", "fl", "semi"):
        emit(section, getattr(cfg, section))
    for a in cfg.attacks:
        emit("attack", a)
    emit("defense", cfg.defense)
    for v in cfg.vaccines:
        emit("vaccine", v)
    emit("output", cfg.output)
    return "\n".join(out)


# ---------------------------------------------------------------------------
# cross-field validation


def validate(cfg: ExperimentConfig) -> None:
    d = cfg.data
    if cfg.model.mode not in FEATURE_MODES:
        raise ConfigError(f"model.mode must be one of {FEATURE_MODES}")
    if cfg.semi.protocol not in PROTOCOLS:
        raise ConfigError(f"semi.protocol must be one of {PROTOCOLS}")
    if d.pool_size < 1 or d.test_size < 1:
        raise ConfigError("data.pool_size and data.test_size must be >= 1")
    if d.path is None:
        cfg.generator(0, d.pool_size).validate()
        if d.labeled_activity is not None:
            cfg.generator(0, 1, d.labeled_activity).validate()
    if d.path is None and d.pool_size < cfg.fl.num_clients:
        raise ConfigError(f"data.pool_size {d.pool_size} < fl.num_clients {cfg.fl.num_clients}")
    cfg.arch()
    fl = cfg.fl_config()
    cfg.train_config()
    cfg.semi_config()
    specs = cfg.attack_specs()
    for s in specs:
        s.mask(d.channels)
    if sum(a.malicious_ratio for a in cfg.attacks) > 1.0 + 1e-12:
        raise ConfigError("attack malicious_ratio values add up to more than 1")
    defense = cfg.defense_config()
    if defense.kind == "trmean" and 2 * defense.trmean_trim >= fl.num_selected:
        raise ConfigError(f"defense.trmean_trim needs 2*N_M < N_S = {fl.num_selected}")
    vaccines = cfg.vaccine_specs()
    if defense.kind == "ssvax" and not vaccines:
        raise ConfigError("defense.kind = ssvax requires a [vaccine] section")
    if defense.kind != "ssvax" and vaccines:
        raise ConfigError("[vaccine] sections are only valid with defense.kind = ssvax")
    for v in vaccines:
        v.attack(0).mask(d.channels)
