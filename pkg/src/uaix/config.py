"""Run configuration: a sectioned INI file with typed keys, plus ``section.key=value`` overrides.

Every section is optional and falls back to its defaults; unknown sections and
unknown keys are errors. Example::

    [run]
    seed = 3
    [posterior]
    variant = ensemble
    members = 10
    [uai]
    alphas = 5, 50, 95
"""
import configparser
import dataclasses
from dataclasses import dataclass, field, fields, replace
from typing import Tuple

from .errors import ConfigError


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out: str = "uaix-out"
    threads: int = 0  # 0 keeps the library defaults


@dataclass(frozen=True)
class DataSection:
    source: str = "synth"  # synth | idx
    train_size: int = 5000
    image_size: int = 28
    channels: int = 3
    area_low: float = 0.2
    area_high: float = 0.3
    idx_images: str = ""
    idx_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""

    def __post_init__(self):
        _choice("data.source", self.source, ("synth", "idx"))
        if self.train_size < 1:
            raise ConfigError("data.train_size must be positive")


@dataclass(frozen=True)
class NetSection:
    arch: str = "lenet"
    dropout: str = "auto"  # auto (on for mcdropout) | true | false
    rate2d: float = 0.25
    rate1d: float = 0.5

    def __post_init__(self):
        _choice("net.arch", self.arch, ("lenet",))
        _choice("net.dropout", self.dropout, ("auto", "true", "false"))


@dataclass(frozen=True)
class TrainerSection:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 10
    lr_step: int = 7
    lr_gamma: float = 0.1
    weight_decay: float = 0.0
    holdout_fraction: float = 0.1


@dataclass(frozen=True)
class PosteriorSection:
    variant: str = "mcdropout"  # mcdropout | ensemble | laplace
    members: int = 10
    member_epochs: int = 0  # ensemble members' epochs; 0 uses trainer.epochs
    prior_precision: float = 0.1

    def __post_init__(self):
        _choice("posterior.variant", self.variant, ("mcdropout", "ensemble", "laplace"))
        if self.members < 1:
            raise ConfigError("posterior.members must be positive")


@dataclass(frozen=True)
class AttributionSection:
    method: str = "lrp-eps"
    lrp_eps: float = 0.01
    ig_steps: int = 64

    def __post_init__(self):
        _choice("attribution.method", self.method, ("gradient", "absgradient", "ixg", "lrp-eps", "ig"))


@dataclass(frozen=True)
class UaiSection:
    n: int = 50
    alphas: Tuple[float, ...] = (5.0, 95.0)
    eps: float = 0.05
    enumerate: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("uai.n must be positive")
        if not all(0 <= a <= 100 for a in self.alphas):
            raise ConfigError("uai.alphas must lie in [0, 100]")


@dataclass(frozen=True)
class SpraySection:
    k_nn: int = 10
    pool: int = 2
    max_k: int = 15
    n: int = 100  # relevance samples clustered per image
    images: int = 1  # how many evaluation images to cluster


@dataclass(frozen=True)
class EvalSection:
    size: int = 500
    heatmaps: int = 4  # evaluation images exported as heatmaps
    scale: int = 8  # heatmap pixel upscaling

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError("eval.size must be positive")


SECTIONS = {
    "run": RunSection,
    "data": DataSection,
    "net": NetSection,
    "trainer": TrainerSection,
    "posterior": PosteriorSection,
    "attribution": AttributionSection,
    "uai": UaiSection,
    "spray": SpraySection,
    "eval": EvalSection,
}


def _choice(name, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{name} must be one of {', '.join(allowed)}; got {value!r}")


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    net: NetSection = field(default_factory=NetSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    posterior: PosteriorSection = field(default_factory=PosteriorSection)
    attribution: AttributionSection = field(default_factory=AttributionSection)
    uai: UaiSection = field(default_factory=UaiSection)
    spray: SpraySection = field(default_factory=SpraySection)
    eval: EvalSection = field(default_factory=EvalSection)

    def with_values(self, values):
        """A copy with ``{(section, key): text}`` applied."""
        grouped = {}
        for (sec, key), text in values.items():
            grouped.setdefault(sec, {})[key] = text
        out = self
        for sec, kv in grouped.items():
            if sec not in SECTIONS:
                raise ConfigError(f"unknown section [{sec}]")
            cls = SECTIONS[sec]
            types = {f.name: f for f in fields(cls)}
            parsed = {}
            for key, text in kv.items():
                if key not in types:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]; allowed: {', '.join(types)}")
                parsed[key] = _parse(f"{sec}.{key}", types[key], text)
            out = replace(out, **{sec: replace(getattr(out, sec), **parsed)})
        return out

    def to_ini(self, skip=()):
        """INI text of every value except the ``(section, key)`` pairs in ``skip``."""
        lines = []
        for sec in SECTIONS:
            lines.append(f"[{sec}]")
            for f in fields(SECTIONS[sec]):
                if (sec, f.name) in skip:
                    continue
                lines.append(f"{f.name} = {_format(getattr(getattr(self, sec), f.name))}")
            lines.append("")
        return "\n".join(lines)


def _parse(name, f, text):
    text = text.strip()
    default = f.default
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(text)
            return low in ("true", "yes", "1", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            elem = type(default[0])
            return tuple(elem(t) for t in text.split(",") if t.strip())
        return text
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {type(default).__name__}") from None


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)
    return str(v)


def parse_overrides(items):
    """``["uai.n=20", ...]`` -> ``{("uai", "n"): "20"}``."""
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        sec, dot, name = key.strip().partition(".")
        if not sep or not dot or not sec or not name:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        out[(sec, name)] = value
    return out


def load_config(path=None, overrides=(), base=None):
    """Defaults (or ``base``), then the file at ``path``, then ``section.key=value`` overrides."""
    cfg = base or RunConfig()
    values = {}
    if path is not None:
        cp = configparser.ConfigParser(
            interpolation=None, inline_comment_prefixes=("#",), comment_prefixes=("#",), default_section="\0"
        )
        cp.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from None
        for sec in cp.sections():
            if sec not in SECTIONS:
                raise ConfigError(f"{path}: unknown section [{sec}]")
            for key, text in cp.items(sec):
                values[(sec, key)] = text
    values.update(parse_overrides(overrides))
    try:
        return cfg.with_values(values)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from None


def as_dict(cfg):
    return dataclasses.asdict(cfg)
