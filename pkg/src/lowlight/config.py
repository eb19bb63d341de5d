"""INI run configuration: ``[train]``, ``[loss]``, ``[net]`` and ``[dehaze]``
sections of ``key = value`` lines.

Example::

    [train]
    epochs = 200
    crop_size = 64
    seed = 3

    [loss]
    alpha = 1.0
    beta = 1.0

    [net]
    depth = 3
    base_width = 8

Keys left out keep their defaults; unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

from .contrast import DehazeParams
from .errors import InvalidArgumentError
from .losses import LossConfig
from .net import NetSpec
from .train import TrainConfig

# fields whose default is None but which take ints when set
_OPTIONAL_INT = {"lr_switch_epoch", "guided_radius"}


@dataclass(frozen=True)
class NetShape:
    """The CFA-independent part of a NetSpec."""

    depth: int = 3
    base_width: int = 8

    def spec_for(self, cfa_kind: str) -> NetSpec:
        return NetSpec.for_cfa(cfa_kind, self.depth, self.base_width)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=200, crop_size=64))
    net: NetShape = field(default_factory=NetShape)
    dehaze: DehazeParams = field(default_factory=DehazeParams)

    @property
    def loss(self) -> LossConfig:
        return self.train.loss

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, train=replace(self.train, seed=seed))

    def with_loss(self, **changes) -> "RunConfig":
        return replace(self, train=replace(self.train, loss=replace(self.train.loss, **changes)))

    def sections(self) -> dict[str, dict]:
        train = {f.name: getattr(self.train, f.name) for f in dataclasses.fields(self.train) if f.name != "loss"}
        return {
            "train": train,
            "loss": dataclasses.asdict(self.loss),
            "net": dataclasses.asdict(self.net),
            "dehaze": dataclasses.asdict(self.dehaze),
        }


def _coerce(section: str, key: str, text: str, default):
    try:
        if key in _OPTIONAL_INT:
            return None if text.strip().lower() in ("", "none") else int(text)
        if isinstance(default, bool):
            return configparser.ConfigParser.BOOLEAN_STATES[text.strip().lower()]
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except (ValueError, KeyError):
        raise InvalidArgumentError(f"[{section}] {key}: cannot parse {text!r}") from None
    raise InvalidArgumentError(f"[{section}] {key}: unsupported field")


def _apply(section: str, obj, values: dict):
    known = {f.name for f in dataclasses.fields(obj)} - {"loss"}
    changes = {}
    for key, text in values.items():
        if key not in known:
            raise InvalidArgumentError(f"[{section}] unknown key {key!r}; expected one of {sorted(known)}")
        changes[key] = _coerce(section, key, text, getattr(obj, key))
    return replace(obj, **changes)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidArgumentError(f"malformed config: {exc}") from None
    cfg = base or RunConfig()
    unknown = set(parser.sections()) - {"train", "loss", "net", "dehaze"}
    if unknown:
        raise InvalidArgumentError(f"unknown config sections {sorted(unknown)}")
    get = lambda name: dict(parser.items(name)) if parser.has_section(name) else {}
    loss = _apply("loss", cfg.loss, get("loss"))
    train = _apply("train", replace(cfg.train, loss=loss), get("train"))
    net = _apply("net", cfg.net, get("net"))
    dehaze = _apply("dehaze", cfg.dehaze, get("dehaze"))
    return RunConfig(train, net, dehaze)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for name, values in cfg.sections().items():
        parser[name] = {k: "none" if v is None else repr(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
