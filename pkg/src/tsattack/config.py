"""Run configuration: an INI file with ``run``, ``dataset``, ``model``, ``attack``
and ``eval`` sections.  See ``configs/`` for annotated examples."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from pathlib import Path

from .attacks import METHODS, AttackConfig
from .data import GOOGLE_STOCK_SCHEMA, HOUSEHOLD_POWER_SCHEMA, SYNTH_KINDS, CsvSchema
from .errors import ConfigError
from .models import ModelConfig, TrainConfig
from .targets import AttackTargetSpec

PRESETS = {"household_power": HOUSEHOLD_POWER_SCHEMA, "google_stock": GOOGLE_STOCK_SCHEMA}
TARGET_LABELS = ("dta-up", "dta-down", "ata", "tta-up", "tta-down", "tta-amp")
PAPER_EPSILONS = (0.01, 0.1, 0.5, 1.0, 1.5)


@dataclass
class DatasetSection:
    source: str = "synthetic"
    synthetic_kind: str = "ar1"
    length: int = 1200
    noise: float = 1.0
    phi: float = 0.8
    period: float = 24.0
    path: Path | None = None
    schema: CsvSchema | None = None
    resample: str | None = None
    window: int = 5
    train_fraction: float = 0.8


@dataclass
class AttackSection:
    methods: tuple[str, ...] = METHODS
    targets: tuple[str, ...] = TARGET_LABELS
    epsilons: tuple[float, ...] = PAPER_EPSILONS
    tau: float = 0.9
    tau_quantile: float | None = None  # when set, tau = this quantile of clean test predictions
    tta_window: tuple[int, int] = (50, 100)
    clip: str = "upper"
    untargeted: bool = True
    control: bool = False
    n_iter: int = 40
    step: float | None = None
    initial_step: float | None = None
    momentum: float = 0.75
    rho: float = 0.75
    step_mode: str = "sign"

    @property
    def all_epsilons(self) -> tuple[float, ...]:
        return ((0.0,) if self.control else ()) + tuple(self.epsilons)

    def target_spec(self, label: str) -> AttackTargetSpec:
        w = tuple(self.tta_window)
        c = self.clip
        specs = {
            "dta-up": lambda: AttackTargetSpec("DTA", 1),
            "dta-down": lambda: AttackTargetSpec("DTA", -1),
            "ata": lambda: AttackTargetSpec("ATA", tau=self.tau, clip=c),
            "tta-up": lambda: AttackTargetSpec("TTA", 1, window=w, inner="DTA"),
            "tta-down": lambda: AttackTargetSpec("TTA", -1, window=w, inner="DTA"),
            "tta-amp": lambda: AttackTargetSpec("TTA", tau=self.tau, window=w, inner="ATA", clip=c),
            "untargeted": lambda: AttackTargetSpec("UNTARGETED"),
        }
        if label not in specs:
            raise ConfigError(f"attack.targets: unknown target {label!r}")
        return specs[label]()

    def attack_config(self, method: str, epsilon: float) -> AttackConfig:
        return AttackConfig(method=method, epsilon=epsilon, n_iter=self.n_iter, step=self.step,
                            initial_step=self.initial_step, momentum=self.momentum,
                            rho=self.rho, step_mode=self.step_mode)


@dataclass
class EvalSection:
    group_size: int = 5
    bins: int = 20
    table_epsilon: float = 0.1
    reference: str = "truth"


@dataclass
class RunConfig:
    dataset: DatasetSection
    model: ModelConfig
    train: TrainConfig
    attack: AttackSection
    eval: EvalSection
    output: Path
    seed: int = 0
    source_text: str = ""
    source_path: Path | None = None


def _list(text: str) -> list[str]:
    return [t.strip() for t in text.replace("\n", ",").split(",") if t.strip()]


class _Section:
    """Typed accessors that name the offending key in every error."""

    def __init__(self, cp: configparser.ConfigParser, name: str):
        self.name = name
        self.data = cp[name] if cp.has_section(name) else {}

    def _raw(self, key, default):
        return self.data.get(key, default) if self.data else default

    def str(self, key, default=None):
        v = self._raw(key, default)
        return v.strip() if isinstance(v, str) else v

    def int(self, key, default):
        v = self._raw(key, None)
        try:
            return default if v is None else int(v)
        except ValueError:
            raise ConfigError(f"{self.name}.{key}: expected an integer, got {v!r}") from None

    def float(self, key, default):
        v = self._raw(key, None)
        try:
            out = default if v is None else float(v)
        except ValueError:
            raise ConfigError(f"{self.name}.{key}: expected a number, got {v!r}") from None
        if out is not None and not math.isfinite(out):
            raise ConfigError(f"{self.name}.{key}: must be finite")
        return out

    def bool(self, key, default):
        v = self._raw(key, None)
        if v is None:
            return default
        lowered = v.strip().lower()
        if lowered in ("1", "yes", "true", "on"):
            return True
        if lowered in ("0", "no", "false", "off"):
            return False
        raise ConfigError(f"{self.name}.{key}: expected yes/no, got {v!r}")

    def list(self, key, default):
        v = self._raw(key, None)
        return tuple(default) if v is None else tuple(_list(v))

    def floats(self, key, default):
        try:
            return tuple(float(x) for x in self.list(key, default))
        except ValueError:
            raise ConfigError(f"{self.name}.{key}: expected a list of numbers") from None


def parse_config(text: str, base_dir: Path | None = None, source_path: Path | None = None
                 ) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    base_dir = base_dir or Path.cwd()
    known = {"run", "dataset", "model", "attack", "eval"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")

    run = _Section(cp, "run")
    seed = run.int("seed", 0)
    output = Path(run.str("output", "runs/default"))
    if not output.is_absolute():
        output = base_dir / output

    ds = _Section(cp, "dataset")
    dsec = DatasetSection(
        source=ds.str("source", "synthetic"),
        synthetic_kind=ds.str("synthetic_kind", "ar1"),
        length=ds.int("length", 1200),
        noise=ds.float("noise", 1.0),
        phi=ds.float("phi", 0.8),
        period=ds.float("period", 24.0),
        resample=ds.str("resample", None) or None,
        window=ds.int("window", 5),
        train_fraction=ds.float("train_fraction", 0.8),
    )
    if dsec.source == "synthetic":
        if dsec.synthetic_kind not in SYNTH_KINDS:
            raise ConfigError(f"dataset.synthetic_kind: unknown kind {dsec.synthetic_kind!r}")
    elif dsec.source == "csv":
        p = ds.str("path")
        if not p:
            raise ConfigError("dataset.path: required when source = csv")
        path = Path(p)
        dsec.path = path if path.is_absolute() else base_dir / path
        if not dsec.path.is_file():
            raise ConfigError(f"dataset.path: file not found: {dsec.path}")
        dsec.schema = _schema(ds)
    else:
        raise ConfigError(f"dataset.source: expected synthetic or csv, got {dsec.source!r}")
    if not 0 < dsec.train_fraction < 1:
        raise ConfigError("dataset.train_fraction: must lie in (0, 1)")

    m = _Section(cp, "model")
    model = ModelConfig(kind=m.str("kind", "gru"), window=dsec.window, num_features=1,
                        hidden=m.int("hidden", 32), seed=seed)
    train = TrainConfig(epochs=m.int("epochs", 50), learning_rate=m.float("learning_rate", 1e-3),
                        patience=m.int("patience", 5), val_fraction=m.float("val_fraction", 0.1),
                        batch_size=m.int("batch_size", 32))

    a = _Section(cp, "attack")
    tw = a.list("tta_window", (50, 100))
    try:
        tta_window = (int(tw[0]), int(tw[1]))
    except (ValueError, IndexError):
        raise ConfigError(f"attack.tta_window: expected two integers, got {tw}") from None
    asec = AttackSection(
        methods=a.list("methods", METHODS),
        targets=a.list("targets", TARGET_LABELS),
        epsilons=a.floats("epsilons", PAPER_EPSILONS),
        tau=a.float("tau", 0.9),
        tau_quantile=a.float("tau_quantile", None),
        tta_window=tta_window,
        clip=a.str("clip", "upper"),
        untargeted=a.bool("untargeted", True),
        control=a.bool("control", False),
        n_iter=a.int("n_iter", 40),
        step=a.float("step", None),
        initial_step=a.float("initial_step", None),
        momentum=a.float("momentum", 0.75),
        rho=a.float("rho", 0.75),
        step_mode=a.str("step_mode", "sign"),
    )
    if asec.tau_quantile is not None and not 0 <= asec.tau_quantile <= 1:
        raise ConfigError("attack.tau_quantile: must lie in [0, 1]")
    if not asec.epsilons:
        raise ConfigError("attack.epsilons: must not be empty")
    for meth in asec.methods:
        if meth not in METHODS:
            raise ConfigError(f"attack.methods: unknown method {meth!r}")
    for label in asec.targets:
        asec.target_spec(label)
    for eps in asec.all_epsilons:
        asec.attack_config(asec.methods[0], eps)

    e = _Section(cp, "eval")
    esec = EvalSection(group_size=e.int("group_size", 5), bins=e.int("bins", 20),
                       table_epsilon=e.float("table_epsilon", 0.1),
                       reference=e.str("reference", "truth"))
    if esec.reference not in ("truth", "clean"):
        raise ConfigError("eval.reference: expected truth or clean")
    if esec.group_size < 1 or esec.bins < 1:
        raise ConfigError("eval.group_size and eval.bins must be >= 1")

    return RunConfig(dsec, model, train, asec, esec, output, seed, text, source_path)


def _schema(ds: _Section) -> CsvSchema:
    preset = ds.str("preset", None)
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"dataset.preset: unknown preset {preset!r}")
        base = PRESETS[preset]
    else:
        base = None
    fields = {
        "feature_columns": list(ds.list("feature_columns", base.feature_columns if base else ())),
        "target_column": ds.str("target_column", base.target_column if base else None),
        "timestamp_columns": list(ds.list("timestamp_columns",
                                          base.timestamp_columns if base else ("timestamp",))),
        "timestamp_format": ds.str("timestamp_format", base.timestamp_format if base else None),
        "separator": ds.str("separator", base.separator if base else ","),
    }
    if not fields["feature_columns"]:
        raise ConfigError("dataset.feature_columns: required for csv input")
    if not fields["target_column"]:
        raise ConfigError("dataset.target_column: required for csv input")
    if fields["separator"] == "\\t":
        fields["separator"] = "\t"
    return CsvSchema(**fields)


def load_config(path, seed: int | None = None, output: str | Path | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(encoding="utf-8"), path.parent.resolve(), path)
    if seed is not None:
        cfg.seed = seed
        cfg.model.seed = seed
    if output is not None:
        cfg.output = Path(output)
    return cfg
