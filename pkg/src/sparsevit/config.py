"""Flat ``key = value`` experiment configuration, hashing and seeded substreams."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import zlib
from dataclasses import dataclass, fields

import numpy as np

MODEL_KEYS = ("channels", "depths", "exponents", "head_dim", "mlp_ratio", "fuse_dim",
              "input_size", "uniform_rate")


class ConfigError(ValueError):
    pass


def _ints(v) -> tuple:
    return tuple(int(x) for x in str(v).replace(",", " ").split())


def _floats(v) -> tuple:
    return tuple(float(x) for x in str(v).replace(",", " ").split())


@dataclass
class Config:
    # model
    channels: tuple = (32, 64, 96, 128)
    depths: tuple = (2, 2, 8, 4)
    exponents: tuple = (3, 1)
    head_dim: int = 32
    mlp_ratio: int = 4
    fuse_dim: int = 128
    input_size: int = 256
    uniform_rate: int = 0
    # training
    seed: int = 0
    epochs: int = 10
    batch_size: int = 4
    lr: float = 1e-3    # from scratch, 10 epochs; the reference schedule uses 1e-4
    lr_min: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 0
    train_limit: int = 0
    # data synthesis
    n_train: int = 512
    n_val: int = 64
    n_test: int = 64
    n_test_hard: int = 64
    area_min: float = 0.02
    area_max: float = 0.4
    host_sigma: tuple = (0.004, 0.012)
    donor_sigma: tuple = (0.035, 0.06)
    host_pattern: tuple = (0.0, 0.008)
    donor_pattern: tuple = (0.02, 0.04)
    # evaluation
    threshold: float = 0.5
    jpeg_qualities: tuple = (90, 70, 50, 30)
    blur_kernels: tuple = (3, 5, 7)
    noise_sigmas: tuple = (0.02, 0.05, 0.1)

    def __post_init__(self):
        if len(self.channels) != 4 or len(self.depths) != 4:
            raise ConfigError("channels and depths need four entries (one per stage)")
        if len(self.exponents) != 2:
            raise ConfigError("exponents needs two entries (stage 3 and stage 4)")
        for c in self.channels[2:]:
            if c % self.head_dim:
                raise ConfigError(f"transformer channels {c} not divisible by head_dim {self.head_dim}")
        if self.input_size % 32:
            raise ConfigError(f"input_size {self.input_size} must be divisible by 32")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")

    def model_dict(self) -> dict:
        return {k: getattr(self, k) for k in MODEL_KEYS}

    def model_hash(self) -> str:
        return hashlib.sha256(_canonical(self.model_dict()).encode()).hexdigest()[:16]

    def replace(self, **kw) -> "Config":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        return _canonical({f.name: getattr(self, f.name) for f in fields(self)})


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _canonical(d: dict) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(d.items()))


def _coerce(name: str, raw: str):
    default = Config.__dataclass_fields__[name].default
    try:
        if isinstance(default, tuple):
            return _floats(raw) if isinstance(default[0], float) else _ints(raw)
        if isinstance(default, float):
            return float(raw)
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse(text: str, require_model: bool = True, **overrides) -> Config:
    """Parse flat config text; ``#`` starts a comment. Unknown keys are rejected.

    ``overrides`` (raw strings or typed values) replace keys from the text.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",),
                                   delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    items = dict(cp["config"])
    items.update({k: v for k, v in overrides.items() if v is not None})
    known = set(Config.__dataclass_fields__)
    unknown = sorted(set(items) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if require_model:
        missing = [k for k in MODEL_KEYS if k not in items]
        if missing:
            raise ConfigError(f"config is missing model keys: {', '.join(missing)}")
    values = {k: _coerce(k, v) if isinstance(v, str) else v for k, v in items.items()}
    return Config(**values)


def load(path, require_model: bool = True, **overrides) -> Config:
    with open(path) as fh:
        return parse(fh.read(), require_model=require_model, **overrides)


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose; stable when other streams change."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


DESK = Config()
REFERENCE = Config(channels=(64, 128, 320, 512), depths=(5, 8, 20, 7), exponents=(3, 1),
               head_dim=32, fuse_dim=512, input_size=512, batch_size=16, epochs=200, lr=1e-4)
