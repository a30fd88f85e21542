"""Model parameters, payoffs, scale/speed data and the risk-neutral transform."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Union

import numpy as np

ArrayLike = Union[float, np.ndarray]

PARAM_KEYS = ("mu", "sigma", "rho", "zeta", "r")


class ModelError(ValueError):
    """Raised when parameters or payoffs violate a model invariant."""


class NoELMMError(ModelError):
    """Raised when a risk-neutral measure is requested for a nonzero rate."""


@dataclass(frozen=True)
class ModelParams:
    mu: float = 0.0
    sigma: float = 0.25
    rho: float = 1.0
    zeta: float = 10.0
    r: float = 0.0

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        unknown = set(data) - set(PARAM_KEYS)
        if unknown:
            raise ModelError(f"unknown model parameter key(s): {', '.join(sorted(unknown))}")
        return validate(cls(**{k: float(v) for k, v in data.items()}))

    @classmethod
    def from_json(cls, path: str | Path) -> "ModelParams":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "ModelParams":
        return validate(replace(self, **changes))


def validate(params: ModelParams) -> ModelParams:
    """Return ``params`` unchanged, or raise :class:`ModelError` naming the broken invariant."""
    for name in PARAM_KEYS:
        if not math.isfinite(getattr(params, name)):
            raise ModelError(f"{name} must be finite")
    if params.sigma <= 0:
        raise ModelError("sigma must be positive")
    if params.zeta <= 0:
        raise ModelError("zeta must be positive")
    if params.rho < 0:
        raise ModelError("rho must be nonnegative")
    return params


@dataclass(frozen=True)
class ScaleSpeed:
    """Scale density, absolutely continuous speed density and the speed atom at zeta.

    The speed measure is ``m(dx) = speed_density(x) dx + atom_mass * delta_zeta`` with
    generator ``(1/2) d/dm d/ds``, so that the diffusion spends ``rho * L^zeta`` time at zeta.
    """

    params: ModelParams
    atom_mass: float

    @property
    def exponent(self) -> float:
        return -2.0 * self.params.mu / self.params.sigma**2

    def scale_density(self, x: ArrayLike) -> ArrayLike:
        return np.power(x, self.exponent)

    def scale(self, x: ArrayLike) -> ArrayLike:
        """Scale function normalised by ``s(1) = 0``."""
        a = self.exponent + 1.0
        if abs(a) < 1e-14:
            return np.log(x)
        return (np.power(x, a) - 1.0) / a

    def speed_density(self, x: ArrayLike) -> ArrayLike:
        x = np.asarray(x, dtype=float)
        return 1.0 / (self.scale_density(x) * self.params.sigma**2 * x**2)


def scale_speed(params: ModelParams) -> ScaleSpeed:
    validate(params)
    s_zeta = params.zeta ** (-2.0 * params.mu / params.sigma**2)
    return ScaleSpeed(params=params, atom_mass=params.rho / s_zeta)


def to_risk_neutral(params: ModelParams) -> ModelParams:
    """Driftless sticky dynamics under the equivalent local martingale measure.

    The Girsanov kernel ``mu / sigma`` removes the drift and leaves ``(sigma, rho, zeta)``
    untouched. No such measure exists when ``r != 0``.
    """
    validate(params)
    if params.r != 0:
        raise NoELMMError("no ELMM exists for r != 0")
    if params.mu == 0:
        return params
    return replace(params, mu=0.0)


PAYOFF_KINDS = ("call", "put", "constant", "identity", "custom")


@dataclass(frozen=True)
class Payoff:
    """Terminal payoff ``h``.

    ``custom`` payoffs are tabulated on ``grid`` and linearly interpolated; outside the grid
    they are extended linearly from the end segments.
    """

    kind: str
    strike: float | None = None
    level: float | None = None
    grid: tuple[float, ...] = field(default=(), repr=False)
    values: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if self.kind not in PAYOFF_KINDS:
            raise ModelError(f"unknown payoff kind {self.kind!r}")
        if self.kind in ("call", "put"):
            if self.strike is None or not self.strike > 0:
                raise ModelError("call/put strike must be positive")
        if self.kind == "constant" and (self.level is None or not math.isfinite(self.level)):
            raise ModelError("constant payoff needs a finite level")
        if self.kind == "custom":
            g = np.asarray(self.grid, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if g.ndim != 1 or g.size < 2 or g.shape != v.shape:
                raise ModelError("custom payoff needs matching grid and values with >= 2 points")
            if np.any(g <= 0) or np.any(np.diff(g) <= 0):
                raise ModelError("custom payoff grid must be positive and strictly increasing")
            if not np.all(np.isfinite(v)):
                raise ModelError("custom payoff must be finite on its grid")

    @classmethod
    def call(cls, strike: float) -> "Payoff":
        return cls("call", strike=float(strike))

    @classmethod
    def put(cls, strike: float) -> "Payoff":
        return cls("put", strike=float(strike))

    @classmethod
    def constant(cls, level: float) -> "Payoff":
        return cls("constant", level=float(level))

    @classmethod
    def identity(cls) -> "Payoff":
        return cls("identity")

    @classmethod
    def tabulated(cls, grid, values) -> "Payoff":
        return cls("custom", grid=tuple(map(float, grid)), values=tuple(map(float, values)))

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], grid) -> "Payoff":
        g = np.asarray(grid, dtype=float)
        return cls.tabulated(g, fn(g))

    def __call__(self, x: ArrayLike) -> ArrayLike:
        return eval_payoff(self, x)

    @property
    def is_convex(self) -> bool:
        if self.kind != "custom":
            return True
        g = np.asarray(self.grid)
        v = np.asarray(self.values)
        slopes = np.diff(v) / np.diff(g)
        scale = max(1.0, float(np.max(np.abs(slopes))))
        return bool(np.all(np.diff(slopes) >= -1e-10 * scale))

    @property
    def replicable(self) -> bool:
        """False when a tabulated payoff grows faster than linearly at the top of its grid."""
        if self.kind != "custom":
            return True
        g = np.asarray(self.grid)
        v = np.asarray(self.values)
        tail = max(4, g.size // 5)
        gt, vt = g[-tail:], v[-tail:]
        if gt.size < 4 or gt[-1] / gt[0] < 1.0 + 1e-9:
            return True
        # x^p has derivative elasticity p - 1; linear growth keeps the derivative flat
        d = np.abs(np.diff(vt) / np.diff(gt))
        mid = 0.5 * (gt[1:] + gt[:-1])
        half = d.size // 2
        d0, d1 = np.mean(d[:half]), np.mean(d[half:])
        if d0 <= 0:
            return d1 <= 0
        elasticity = np.log(d1 / d0) / np.log(np.mean(mid[half:]) / np.mean(mid[:half]))
        return bool(elasticity <= 0.1)


def eval_payoff(h: Payoff, x: ArrayLike) -> ArrayLike:
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0)):
        raise ModelError("payoff argument must be positive")
    if h.kind == "call":
        out = np.maximum(xa - h.strike, 0.0)
    elif h.kind == "put":
        out = np.maximum(h.strike - xa, 0.0)
    elif h.kind == "constant":
        out = np.full_like(xa, h.level)
    elif h.kind == "identity":
        out = xa.copy()
    else:
        g = np.asarray(h.grid)
        v = np.asarray(h.values)
        out = np.interp(xa, g, v)
        lo, hi = xa < g[0], xa > g[-1]
        out = np.where(lo, v[0] + (xa - g[0]) * (v[1] - v[0]) / (g[1] - g[0]), out)
        out = np.where(hi, v[-1] + (xa - g[-1]) * (v[-1] - v[-2]) / (g[-1] - g[-2]), out)
    return float(out) if np.ndim(x) == 0 else out


def payoff_from_dict(data: dict) -> Payoff:
    kind = data.get("kind", "call")
    if kind in ("call", "put"):
        return Payoff(kind, strike=float(data["strike"]))
    if kind == "constant":
        return Payoff.constant(data["level"])
    if kind == "identity":
        return Payoff.identity()
    if kind == "custom":
        return Payoff.tabulated(data["grid"], data["values"])
    raise ModelError(f"unknown payoff kind {kind!r}")
