"""Declarative experiment configuration (TOML).

Frequencies (``omega``, ramp ``delta``, fit guesses and bounds on omega) are
read in the units named by ``units``: ``"hz"`` multiplies them by 2*pi,
``"rad"`` takes them as angular frequencies.  Times are in seconds.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import sys
import types
import typing
from dataclasses import dataclass, field
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


class Experiment(str, enum.Enum):
    AB_DYNAMICS = "AB_DYNAMICS"
    AB_GROUND_STATE_SWEEP = "AB_GROUND_STATE_SWEEP"
    LADDER_1ES = "LADDER_1ES"
    LADDER_2ES = "LADDER_2ES"
    CERTIFY_SWEEP = "CERTIFY_SWEEP"
    FIT = "FIT"


@dataclass
class ModelSection:
    n_sites: int | None = None
    omega: float = 350.0
    phi: float = math.pi / 2
    epsilon: float = 0.0
    gauge: str = "STAGGERED"


@dataclass
class InitialSection:
    occupied: list[int] | None = None


@dataclass
class GridSection:
    """Explicit ``values`` or a ``start``/``stop``/``num`` linspace."""

    values: list[float] | None = None
    start: float | None = None
    stop: float | None = None
    num: int | None = None

    def resolve(self, name: str) -> list[float]:
        if self.values is not None:
            if any(x is not None for x in (self.start, self.stop, self.num)):
                raise ConfigError(f"{name}: give either values or start/stop/num, not both")
            out = [float(v) for v in self.values]
        elif None in (self.start, self.stop, self.num):
            raise ConfigError(f"{name}: needs values or all of start, stop, num")
        else:
            if self.num < 1:
                raise ConfigError(f"{name}.num must be >= 1")
            if self.num == 1:
                out = [float(self.start)]
            else:
                step = (self.stop - self.start) / (self.num - 1)
                out = [self.start + i * step for i in range(self.num)]
        if not out:
            raise ConfigError(f"{name}: empty list")
        if not all(math.isfinite(v) for v in out):
            raise ConfigError(f"{name}: values must be finite")
        return out


@dataclass
class RampSection:
    T: float = 0.01
    delta_over_omega: float = 4.0
    delta: float | None = None
    site: int = 1
    tol: float = 1e-8
    steps: int = 64


@dataclass
class CertifySection:
    f_threshold: float = 0.7
    alpha: float = 0.05
    shots_budget: int = 12000
    trials: int = 200
    states: list[str] = field(default_factory=lambda: ["ground", "excited", "ramp"])


@dataclass
class FitSection:
    system: str = "AB_RING"
    free: list[str] = field(default_factory=lambda: ["omega"])
    protocol: str = "QUENCH"
    post_select_m: int | None = None
    data: list[str] | None = None
    guess: dict[str, float] = field(default_factory=dict)
    bounds: dict[str, list[float]] = field(default_factory=dict)
    grid_points: int = 21
    phis: list[float] | None = None
    ramp_steps: int = 256


@dataclass
class OutputSection:
    dir: str = "out"
    plots: bool = False


@dataclass
class ExperimentConfig:
    experiment: Experiment
    seed: int = 0
    units: str = "hz"
    shots: int = 0
    workers: int = 1
    model: ModelSection = field(default_factory=ModelSection)
    initial: InitialSection = field(default_factory=InitialSection)
    times: GridSection | None = None
    ramp: RampSection = field(default_factory=RampSection)
    sweep: GridSection | None = None
    certify: CertifySection = field(default_factory=CertifySection)
    fit: FitSection = field(default_factory=FitSection)
    output: OutputSection = field(default_factory=OutputSection)

    # ------------------------------------------------------------ unit helpers

    @property
    def freq_scale(self) -> float:
        return 2 * math.pi if self.units == "hz" else 1.0

    @property
    def omega(self) -> float:
        """Model omega in rad/s."""
        return self.model.omega * self.freq_scale

    @property
    def ramp_delta(self) -> float:
        if self.ramp.delta is not None:
            return self.ramp.delta * self.freq_scale
        return self.ramp.delta_over_omega * self.omega

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, enum.Enum):
                return v.value
            if dataclasses.is_dataclass(v):
                return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
            if isinstance(v, dict):
                return {k: conv(x) for k, x in v.items()}
            if isinstance(v, list):
                return [conv(x) for x in v]
            return v

        return conv(self)


# ---------------------------------------------------------------- parsing


def _check_type(value: Any, hint, path: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, getattr(types, "UnionType", typing.Union)):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _check_type(value, inner[0], path)
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table")
        return _build(hint, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return [_check_type(v, args[0], f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table")
        return {str(k): _check_type(v, args[1], f"{path}.{k}") for k, v in value.items()}
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{path}: must be finite")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(hint, type) and issubclass(hint, enum.Enum):
        try:
            return hint(str(value).upper())
        except ValueError:
            choices = ", ".join(m.value for m in hint)
            raise ConfigError(f"{path}: {value!r} is not one of {choices}") from None
    raise TypeError(f"unsupported config type {hint!r}")


def _build(cls, raw: dict, path: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"{where}: unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        where = f"{path}.{f.name}" if path else f.name
        if f.name in raw:
            kwargs[f.name] = _check_type(raw[f.name], hints[f.name], where)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(f"{where}: required")
    return cls(**kwargs)


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.units not in ("hz", "rad"):
        raise ConfigError("units: must be 'hz' or 'rad'")
    if cfg.shots < 0:
        raise ConfigError("shots: must be >= 0")
    if cfg.workers < 1:
        raise ConfigError("workers: must be >= 1")
    if cfg.model.omega <= 0:
        raise ConfigError("model.omega: must be > 0")
    if cfg.model.epsilon < 0:
        raise ConfigError("model.epsilon: must be >= 0")
    if cfg.model.gauge.upper() not in ("STAGGERED", "UNIFORM"):
        raise ConfigError("model.gauge: must be STAGGERED or UNIFORM")
    if cfg.ramp.T <= 0:
        raise ConfigError("ramp.T: must be > 0")
    if not 0 < cfg.certify.f_threshold < 1:
        raise ConfigError("certify.f_threshold: must lie in (0, 1)")
    if not 0 < cfg.certify.alpha < 1:
        raise ConfigError("certify.alpha: must lie in (0, 1)")
    if cfg.certify.shots_budget < 1 or cfg.certify.trials < 1:
        raise ConfigError("certify: shots_budget and trials must be >= 1")
    bad = set(cfg.certify.states) - {"ground", "excited", "ramp"}
    if bad:
        raise ConfigError(f"certify.states: unknown state kinds {sorted(bad)}")
    exp = cfg.experiment
    needs_times = (Experiment.AB_DYNAMICS, Experiment.LADDER_1ES, Experiment.LADDER_2ES)
    if exp in needs_times or (exp is Experiment.FIT and not cfg.fit.data):
        if cfg.times is None:
            raise ConfigError("times: required for this experiment")
        times = cfg.times.resolve("times")
        if any(t < 0 for t in times):
            raise ConfigError("times: must be >= 0")
    if exp in (Experiment.AB_GROUND_STATE_SWEEP, Experiment.CERTIFY_SWEEP):
        if cfg.sweep is None:
            raise ConfigError("sweep: required for this experiment")
        cfg.sweep.resolve("sweep")
    if exp is Experiment.FIT:
        f = cfg.fit
        if f.system.upper() not in ("AB_RING", "LADDER"):
            raise ConfigError("fit.system: must be AB_RING or LADDER")
        if f.protocol.upper() not in ("QUENCH", "RAMP"):
            raise ConfigError("fit.protocol: must be QUENCH or RAMP")
        if not f.free or set(f.free) - {"omega", "epsilon"}:
            raise ConfigError("fit.free: must be a non-empty subset of [omega, epsilon]")
        if set(f.guess) - {"omega", "epsilon"} or set(f.bounds) - {"omega", "epsilon"}:
            raise ConfigError("fit.guess/fit.bounds: only omega and epsilon are allowed")
        for k, b in f.bounds.items():
            if len(b) != 2 or not b[0] < b[1]:
                raise ConfigError(f"fit.bounds.{k}: expected [low, high] with low < high")
        if not f.data and cfg.shots < 1:
            raise ConfigError("shots: synthetic fit data needs shots >= 1")


def parse_value(text: str) -> Any:
    """Parse an override value as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(raw: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r}: expected key=value")
    key, text = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {assignment!r}: empty key")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key}: {p} is not a table")
    node[parts[-1]] = parse_value(text.strip())


def from_mapping(raw: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, raw, "")
    cfg.units = cfg.units.lower()
    _validate(cfg)
    return cfg


def load_config(path: str, overrides: list[str] | None = None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    for ov in overrides or []:
        apply_override(raw, ov)
    return from_mapping(raw)
