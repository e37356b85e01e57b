"""Run configuration: a flat key-value text format that round-trips losslessly,
rejects unknown keys, and hashes canonically for reproducibility manifests.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: str = "hjb-d100"
    scheme: str = "implicit"
    dim: int | None = None          # overrides the preset dimension
    dt: float | None = None
    n_paths: int | None = None      # K, training paths; twice as many are simulated
    degree: int | None = None
    rank: int | None = None
    max_rank: int | None = None     # enables greedy rank adaptation up to this cap
    interval_a: float | None = None
    interval_b: float | None = None
    seed: int = 0
    delta: float = 1e-4             # ALS no-change tolerance
    c_eta: float = 1.0              # regularization constant
    gamma1: float = 1e-4
    gamma2: float = 1e-5
    max_sweeps: int = 25
    fp_max_iters: int = 50
    warm_start: bool = True
    dump_paths: bool = False

    def __post_init__(self):
        for name in ("dt",):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigError(f"{name} must be positive, got {v}")
        for name in ("n_paths", "degree", "rank", "max_rank", "max_sweeps", "fp_max_iters"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"{name} must be nonnegative, got {v}")
        if (self.interval_a is None) != (self.interval_b is None):
            raise ConfigError("interval_a and interval_b must be set together")
        if self.interval_a is not None and not self.interval_a < self.interval_b:
            raise ConfigError("interval_a must be below interval_b")
        for name in ("delta", "c_eta", "gamma1", "gamma2"):
            v = getattr(self, name)
            if name == "c_eta":
                if v < 0:
                    raise ConfigError("c_eta must be nonnegative")
            elif v <= 0:
                raise ConfigError(f"{name} must be positive")

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key '{key}'")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key '{key}'")
            values[key] = _parse(val.strip(), key)
        return cls(**values)

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_INT_KEYS = {"dim", "n_paths", "degree", "rank", "max_rank", "seed",
             "max_sweeps", "fp_max_iters"}
_FLOAT_KEYS = {"dt", "interval_a", "interval_b", "delta", "c_eta", "gamma1", "gamma2"}
_BOOL_KEYS = {"warm_start", "dump_paths"}


def _parse(text: str, key: str):
    if text == "none":
        return None
    if key in _BOOL_KEYS:
        if text in ("true", "false"):
            return text == "true"
        raise ConfigError(f"key '{key}': expected true/false, got {text!r}")
    try:
        if key in _INT_KEYS:
            return int(text)
        if key in _FLOAT_KEYS:
            return float(text)
    except ValueError:
        raise ConfigError(f"key '{key}': cannot parse {text!r}") from None
    return text
