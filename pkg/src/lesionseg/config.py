"""``key = value`` run configuration shared by every CLI subcommand."""

from __future__ import annotations

from collections import OrderedDict
from pathlib import Path

from .augment import DEFAULT_DIHEDRAL_CHOICES, DIHEDRAL_INVERSE, INT_PARAMS, KIND_DEFAULTS, AugConfig, KindConfig
from .ensemble import DEFAULT_TTA
from .metrics import LossWeights
from .net.unet import UNetConfig
from .synthdata import SynthSpec
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_range(text):
    vals = [float(v) for v in text.split(",")]
    if len(vals) == 1:
        return (vals[0], vals[0])
    if len(vals) != 2:
        raise ValueError(f"expected 'lo,hi' or a single value, got {text!r}")
    return tuple(vals)


def _parse_names(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (parser, default)
SCHEMA = OrderedDict()


def _key(name, parser, default):
    SCHEMA[name] = (parser, default)


_key("data.input_size", int, 224)
for _f in ("count", "size", "fg_min", "fg_max", "bg_min", "bg_max", "seed"):
    _key(f"synth.{_f}", int, getattr(SynthSpec(), _f))
for _f in ("axis_min", "axis_max", "noise"):
    _key(f"synth.{_f}", float, getattr(SynthSpec(), _f))
_key("split.k", int, 5)
_key("split.bins", int, 5)
_key("split.seed", int, 0)
_key("unet.base_filters", int, 16)
_key("unet.depth", int, 3)
_key("unet.hypercolumn", _parse_bool, False)
_key("unet.bn_eps", float, 1e-5)
_key("unet.bn_momentum", float, 0.1)
_key("train.epochs_per_cycle", int, 10)
_key("train.cycles", int, 3)
_key("train.lr_max", float, 0.1)
_key("train.lr_min", float, 0.001)
_key("train.momentum", float, 0.9)
_key("train.batch_size", int, 4)
_key("train.fold", int, 0)
_key("train.seed", int, 0)
_key("loss.w1", float, 0.5)
_key("loss.w2", float, 0.5)
_key("loss.smooth", float, 1.0)
_key("aug.seed", int, 0)
for _kind, (_p, _ranges) in KIND_DEFAULTS.items():
    _key(f"aug.{_kind}.enabled", _parse_bool, True)
    _key(f"aug.{_kind}.p", float, _p)
    for _param, _r in _ranges.items():
        _key(f"aug.{_kind}.{_param}", _parse_range, tuple(float(v) for v in _r))
_key("aug.dihedral.elements", _parse_names, DEFAULT_DIHEDRAL_CHOICES)
_key("post.threshold", float, 0.5)
_key("post.erode", int, 2)
_key("post.dilate", int, 2)
_key("post.largest_only", _parse_bool, False)
_key("score.tau", float, 0.65)
_key("score.empty_value", float, 1.0)
_key("tta.set", _parse_names, DEFAULT_TTA)


def describe_keys() -> str:
    """One ``key = default`` line per configuration key."""
    return "\n".join(f"  {k} = {_fmt(d)}" for k, (_, d) in SCHEMA.items())


class RunConfig:
    def __init__(self, values=None):
        self.values = OrderedDict((k, d) for k, (_, d) in SCHEMA.items())
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key, raw):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        if isinstance(raw, str):
            try:
                value = parser(raw)
            except ValueError as e:
                raise ConfigError(f"bad value for {key}: {e}") from None
        else:
            value = raw
        self.values[key] = value

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_text(cls, text, source="<config>"):
        rc = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            try:
                rc.set(key.strip(), value.strip())
            except ConfigError as e:
                raise ConfigError(f"{source}:{lineno}: {e}") from None
        return rc

    @classmethod
    def from_file(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        return cls.from_text(text, str(path))

    def to_text(self):
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.values.items())

    # -- builders -------------------------------------------------------

    def synth_spec(self) -> SynthSpec:
        fields = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("synth.")}
        return SynthSpec(**fields)

    def unet_config(self) -> UNetConfig:
        return UNetConfig(self["unet.base_filters"], self["unet.depth"], self["unet.hypercolumn"],
                          self["unet.bn_eps"], self["unet.bn_momentum"])

    def aug_config(self) -> AugConfig:
        kinds = {}
        for kind, (_, ranges) in KIND_DEFAULTS.items():
            parsed = {}
            for param in ranges:
                lo, hi = self[f"aug.{kind}.{param}"]
                if (kind, param) in INT_PARAMS:
                    lo, hi = int(round(lo)), int(round(hi))
                parsed[param] = (lo, hi)
            kinds[kind] = KindConfig(self[f"aug.{kind}.enabled"], self[f"aug.{kind}.p"], parsed)
        elements = self["aug.dihedral.elements"]
        for e in elements:
            if e not in DIHEDRAL_INVERSE:
                raise ConfigError(f"unknown dihedral element {e!r}")
        return AugConfig(kinds=kinds, dihedral_choices=elements, seed=self["aug.seed"])

    def train_config(self) -> TrainConfig:
        size = self["data.input_size"]
        return TrainConfig(
            epochs_per_cycle=self["train.epochs_per_cycle"],
            cycles=self["train.cycles"],
            lr_max=self["train.lr_max"],
            lr_min=self["train.lr_min"],
            momentum=self["train.momentum"],
            batch_size=self["train.batch_size"],
            fold=self["train.fold"],
            seed=self["train.seed"],
            input_size=(size, size),
            loss=LossWeights(self["loss.w1"], self["loss.w2"]),
            dice_smooth=self["loss.smooth"],
            unet=self.unet_config(),
            aug=self.aug_config(),
        )

    def tta_set(self):
        tta = self["tta.set"]
        for e in tta:
            if e not in DIHEDRAL_INVERSE:
                raise ConfigError(f"unknown TTA element {e!r}")
        return tta
