"""Pipeline configuration: strict JSON parsing, defaults and hashing."""

from __future__ import annotations

import dataclasses
import difflib
import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .acoustic import CONTEXT, DEFAULT_AM_TRAIN, Variant
from .bottleneck import DEFAULT_BN_REGRESSION_TRAIN, DEFAULT_BN_TRAIN, BottleneckConfig
from .corpus import DEFAULT_SNRS, MOTOR_CONDITIONS
from .framing import DEFAULT_FRAMING, FramingParams
from .nn import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusSection:
    utterances: int = 200
    split_fractions: tuple = (0.8, 0.1, 0.1)
    dir: str | None = None  # use an existing corpus instead of generating one


@dataclass(frozen=True)
class AmSection:
    width: int = 512
    hidden_layers: int = 5


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    framing: FramingParams = DEFAULT_FRAMING
    context: int = CONTEXT
    corpus: CorpusSection = CorpusSection()
    snr_list: tuple = DEFAULT_SNRS
    motors: tuple = tuple(MOTOR_CONDITIONS)
    variants: tuple = tuple(v.value for v in Variant)
    train: TrainConfig = DEFAULT_AM_TRAIN
    bn_train: TrainConfig = DEFAULT_BN_TRAIN
    bn_regression_train: TrainConfig = DEFAULT_BN_REGRESSION_TRAIN
    bn: BottleneckConfig = BottleneckConfig()
    am: AmSection = AmSection()
    output_dir: str | None = None
    source: str | None = field(default=None, compare=False)  # file the config came from

    def __post_init__(self):
        if self.context < 1 or self.context % 2 == 0:
            raise ConfigError(f"context must be a positive odd number, got {self.context}")
        if not self.snr_list:
            raise ConfigError("snr_list must not be empty")
        for m in self.motors:
            if m not in MOTOR_CONDITIONS:
                raise ConfigError(f"unknown motor condition {m!r}; expected one of {sorted(MOTOR_CONDITIONS)}")
        for v in self.variants:
            try:
                Variant(v)
            except ValueError:
                raise ConfigError(f"unknown variant {v!r}; expected one of {[x.value for x in Variant]}") from None

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            if f.name == "source":
                continue
            v = getattr(self, f.name)
            if dataclasses.is_dataclass(v):
                v = {k: _plain(x) for k, x in dataclasses.asdict(v).items() if not (k == "seed" and isinstance(v, TrainConfig))}
            d[f.name] = _plain(v)
        return d

    def hash(self) -> str:
        """Digest of everything that affects results (the output location does not)."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def train_config(self, which: str = "train") -> TrainConfig:
        """A training section with the global seed filled in."""
        return dataclasses.replace(getattr(self, which), seed=self.seed)


def _plain(v):
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, enum.Enum):
        return v.value
    return v


# ---------------------------------------------------------------------------
# strict parsing
# ---------------------------------------------------------------------------

_SECTIONS = {
    "framing": FramingParams,
    "corpus": CorpusSection,
    "train": TrainConfig,
    "bn_train": TrainConfig,
    "bn_regression_train": TrainConfig,
    "bn": BottleneckConfig,
    "am": AmSection,
}
_OPTIONAL = {"dir", "output_dir", "pretrain"}
_EXCLUDED = {TrainConfig: {"seed"}, PipelineConfig: {"source"}}


def _unknown_key(key: str, allowed, where: str) -> ConfigError:
    hint = difflib.get_close_matches(key, list(allowed), n=1, cutoff=0.5)
    msg = f"unknown key {key!r} in {where}"
    if hint:
        msg += f"; did you mean {hint[0]!r}?"
    return ConfigError(msg)


def _coerce(value, default, key: str, where: str):
    """Check ``value`` against the type of the field's default."""
    def bad(expected):
        return ConfigError(f"{where}.{key}: expected {expected}, got {type(value).__name__} {value!r}")

    if value is None:
        if key in _OPTIONAL:
            return None
        raise bad("a value")
    if key in _OPTIONAL and default is None:
        if key == "pretrain":
            if not isinstance(value, bool):
                raise bad("true, false or null")
            return value
        if not isinstance(value, str):
            raise bad("a path string")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise bad("true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("a number")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise bad("a list")
        if default and all(isinstance(x, float) for x in default):
            if any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in value):
                raise bad("a list of numbers")
            return tuple(float(x) for x in value)
        return tuple(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise bad("a string")
        return value
    raise bad(type(default).__name__)


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    fields = [f for f in dataclasses.fields(cls) if f.name not in _EXCLUDED.get(cls, ())]
    names = {f.name: f for f in fields}
    for key in data:
        if key not in names:
            raise _unknown_key(key, names, where)
    kwargs = {}
    for name, f in names.items():
        if name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError(f"missing required key {name!r} in {where}")
            continue
        value = data[name]
        if name in _SECTIONS and cls is PipelineConfig:
            kwargs[name] = _build(_SECTIONS[name], value, name)
            continue
        default = f.default if f.default is not dataclasses.MISSING else 0  # only the integer seed is required
        kwargs[name] = _coerce(value, default, name, where)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict, base_dir=None) -> PipelineConfig:
    cfg = _build(PipelineConfig, data, "config")
    if cfg.corpus.dir is not None:
        path = Path(cfg.corpus.dir)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        if not path.exists():
            raise ConfigError(f"corpus.dir {str(path)!r} does not exist")
        cfg = dataclasses.replace(cfg, corpus=dataclasses.replace(cfg.corpus, dir=str(path)))
    return cfg


def parse_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    cfg = config_from_dict(data, base_dir=path.parent)
    return dataclasses.replace(cfg, source=str(path))


def serialize_config(cfg: PipelineConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
