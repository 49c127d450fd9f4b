"""Flat run configuration: ``key = value`` files plus command-line overrides."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .model import ScoreConfig
from .train import DATASET_DEFAULTS, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data: str = ""
    out: str = "run"
    preset: str = "jf17k"
    dim: int = 50
    k: float = 1.0
    # None means "take the preset value"
    eta: float | None = None
    beta: int | None = None
    nneg: int | None = None
    nepoch: int | None = None
    patience: int = 3
    eval_every: int = 10
    seed: int = 0
    corruption: str = "uniform"
    workers: int = 1
    scoring_variant: str = "full"
    aggregation_combine: str = "addition"
    aggregation_reduce: str = "min"
    tasks: str = "head,tail,relation,affiliated"
    tie_policy: str = "optimistic"

    def __post_init__(self):
        if self.preset not in DATASET_DEFAULTS:
            raise ConfigError(f"preset must be one of {sorted(DATASET_DEFAULTS)}")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.k <= 0:
            raise ConfigError("k must be > 0")

    def train_config(self) -> TrainConfig:
        base = DATASET_DEFAULTS[self.preset]
        pick = lambda name: base[name] if getattr(self, name) is None else getattr(self, name)  # noqa: E731
        try:
            return TrainConfig(
                eta=float(pick("eta")), beta=int(pick("beta")), nneg=int(pick("nneg")),
                nepoch=int(pick("nepoch")), patience=self.patience, seed=self.seed,
                eval_every=self.eval_every, corruption=self.corruption, workers=self.workers,
            )
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def score_config(self) -> ScoreConfig:
        try:
            return ScoreConfig(self.scoring_variant, self.aggregation_combine, self.aggregation_reduce)
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def task_list(self) -> list[str]:
        return [t.strip() for t in self.tasks.split(",") if t.strip()]


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, raw):
    if raw is None:
        return None
    ftype = str(_FIELDS[name].type)
    try:
        if ftype.startswith("int"):
            return int(raw)
        if ftype.startswith("float"):
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return str(raw)


def parse_config_text(text: str) -> dict:
    out = {}
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"line {no}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def build_run_config(config_file: str | None = None, overrides: dict | None = None) -> RunConfig:
    """File values first, then non-None overrides."""
    values = {}
    if config_file:
        try:
            values.update(parse_config_text(Path(config_file).read_text(encoding="utf-8")))
        except OSError as err:
            raise ConfigError(f"cannot read config {config_file}: {err.strerror}") from None
    for key, value in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        if value is not None:
            values[key] = _coerce(key, value)
    return RunConfig(**values)


def dump_run_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {'' if v is None else v}\n" for k, v in asdict(cfg).items() if v is not None)
