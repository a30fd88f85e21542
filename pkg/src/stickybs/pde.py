"""Finite-difference solver for the sticky pricing equation and its mollified smooth analogue.

The backward equation ``v_t = -(sigma^2 x^2 / 2) v_xx`` is solved in raw price space on a
grid that holds ``zeta`` as a node. At that node the discrete equation is the interface
condition ``v_t(t, zeta) = -(v_x(t, zeta+) - v_x(t, zeta-)) / (2 rho)`` with three-point
one-sided difference quotients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from stickybs.model import ModelError, ModelParams, Payoff, eval_payoff, validate


class GridError(ModelError):
    pass


def price_grid(
    zeta: float,
    n_nodes: int = 801,
    lo: float | None = None,
    hi: float | None = None,
    refine_halfwidth: float = 0.0,
    refine_step: float | None = None,
) -> np.ndarray:
    """Log-spaced nodes on ``[lo, hi]`` (default ``[zeta/8, 8 zeta]``) with ``zeta`` inserted.

    With ``refine_halfwidth > 0`` the window ``[zeta - w, zeta + w]`` is replaced by a uniform
    mesh of spacing ``refine_step``.
    """
    lo = zeta / 8.0 if lo is None else lo
    hi = 8.0 * zeta if hi is None else hi
    if not 0 < lo < zeta < hi:
        raise GridError("grid bounds must satisfy 0 < lo < zeta < hi")
    x = np.geomspace(lo, hi, n_nodes)
    j = int(np.argmin(np.abs(x - zeta)))
    x[j] = zeta
    if refine_halfwidth > 0:
        w = refine_halfwidth
        h = refine_step if refine_step is not None else w / 16.0
        m = max(1, int(np.ceil(w / h)))
        inner = zeta + np.linspace(-w, w, 2 * m + 1)
        outer = x[(x < zeta - w * (1 + 1e-9)) | (x > zeta + w * (1 + 1e-9))]
        # drop outer nodes closer to the window than half its step
        outer = outer[np.abs(np.abs(outer - zeta) - w) > 0.5 * h]
        x = np.union1d(outer, inner)
        x[int(np.argmin(np.abs(x - zeta)))] = zeta
    return x


@dataclass(frozen=True)
class GridSpec:
    x_nodes: np.ndarray
    t_steps: int = 2000
    theta: float = 0.5
    rannacher_steps: int = 2

    def __post_init__(self) -> None:
        x = np.asarray(self.x_nodes, dtype=float)
        object.__setattr__(self, "x_nodes", x)
        if x.ndim != 1 or x.size < 5:
            raise GridError("need at least 5 price nodes")
        if x[0] <= 0 or np.any(np.diff(x) <= 0):
            raise GridError("price nodes must be positive and strictly increasing")
        if self.t_steps < 1:
            raise GridError("t_steps must be >= 1")
        if not 0.0 <= self.theta <= 1.0:
            raise GridError("theta must lie in [0, 1]")

    @classmethod
    def default(cls, zeta: float, n_nodes: int = 801, t_steps: int = 2000, **kw) -> "GridSpec":
        return cls(price_grid(zeta, n_nodes), t_steps=t_steps, **kw)

    def zeta_index(self, zeta: float) -> int | None:
        j = int(np.argmin(np.abs(self.x_nodes - zeta)))
        if abs(self.x_nodes[j] - zeta) <= 1e-12 * max(1.0, zeta):
            return j
        return None


def _deriv_weights(x0: float, nodes: np.ndarray) -> np.ndarray:
    """Weights of the first derivative at ``x0`` of the Lagrange interpolant through ``nodes``."""
    n = len(nodes)
    w = np.zeros(n)
    for k in range(n):
        others = [nodes[m] for m in range(n) if m != k]
        denom = np.prod([nodes[k] - o for o in others])
        # derivative of prod_{m != k}(x - x_m) at x0
        total = 0.0
        for i in range(len(others)):
            total += np.prod([x0 - others[m] for m in range(len(others)) if m != i])
        w[k] = total / denom
    return w


def one_sided_weights(x: np.ndarray, j: int, side: str) -> tuple[np.ndarray, np.ndarray]:
    """Indices and weights of the three-point one-sided first derivative at node ``j``."""
    idx = np.array([j, j + 1, j + 2]) if side == "right" else np.array([j - 2, j - 1, j])
    return idx, _deriv_weights(x[j], x[idx])


def _central_weights(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    hl = x[1:-1] - x[:-2]
    hr = x[2:] - x[1:-1]
    return -hr / (hl * (hl + hr)), (hr - hl) / (hl * hr), hl / (hr * (hl + hr))


def _generator(x: np.ndarray, half_var: np.ndarray, j_zeta: int | None, rho: float) -> sp.csr_matrix:
    """Generator matrix; rows 0 and n-1 are left empty (boundary closures handled separately)."""
    n = x.size
    hl = x[1:-1] - x[:-2]
    hr = x[2:] - x[1:-1]
    c = half_var[1:-1] * 2.0 / (hl + hr)
    rows = np.repeat(np.arange(1, n - 1), 3)
    cols = (np.arange(1, n - 1)[:, None] + np.array([-1, 0, 1])[None, :]).ravel()
    vals = np.column_stack([c / hl, -c * (1.0 / hl + 1.0 / hr), c / hr]).ravel()
    L = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tolil()
    if j_zeta is not None and rho > 0:
        if j_zeta < 2 or j_zeta > n - 3:
            raise GridError("zeta needs two grid nodes on each side")
        L[j_zeta, :] = 0.0
        ir, wr = one_sided_weights(x, j_zeta, "right")
        il, wl = one_sided_weights(x, j_zeta, "left")
        for i, w in zip(ir, wr):
            L[j_zeta, i] += w / (2.0 * rho)
        for i, w in zip(il, wl):
            L[j_zeta, i] -= w / (2.0 * rho)
    return L.tocsr()


def _boundary_rows(x: np.ndarray) -> sp.csr_matrix:
    """Zero-curvature closure: each end value is the linear extrapolation of its two neighbours."""
    n = x.size
    B = sp.lil_matrix((n, n))
    for i0, i1, i2 in ((0, 1, 2), (n - 1, n - 2, n - 3)):
        lam = (x[i0] - x[i1]) / (x[i1] - x[i2])
        B[i0, i0] = 1.0
        B[i0, i1] = -(1.0 + lam)
        B[i0, i2] = lam
    return B.tocsr()


def _march(
    x: np.ndarray,
    half_var: np.ndarray,
    j_zeta: int | None,
    rho: float,
    terminal: np.ndarray,
    grid: GridSpec,
    maturity: float,
) -> np.ndarray:
    n = x.size
    L = _generator(x, half_var, j_zeta, rho)
    B = _boundary_rows(x)
    interior = sp.diags(np.r_[0.0, np.ones(n - 2), 0.0])
    I = sp.identity(n, format="csr")
    dt = maturity / grid.t_steps

    def stepper(theta: float):
        lhs = (interior @ (I - theta * dt * L) + B).tocsc()
        rhs = (interior @ (I + (1.0 - theta) * dt * L)).tocsr()
        return splu(lhs), rhs

    values = np.empty((grid.t_steps + 1, n))
    values[-1] = terminal
    implicit = stepper(1.0)
    main = stepper(grid.theta) if grid.theta != 1.0 else implicit
    v = terminal.astype(float)
    for k in range(grid.t_steps):
        lu, rhs = implicit if k < grid.rannacher_steps else main
        v = lu.solve(rhs @ v)
        values[grid.t_steps - 1 - k] = v
    return values


@dataclass(frozen=True)
class PriceSurface:
    """Solved price grid ``values[t_index, x_index]`` with one-sided derivatives at zeta."""

    grid: GridSpec
    maturity: float
    zeta: float
    values: np.ndarray
    dx_left_at_zeta: np.ndarray
    dx_right_at_zeta: np.ndarray
    sticky: bool
    deltas: np.ndarray = field(repr=False)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.maturity, self.grid.t_steps + 1)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x_nodes

    @property
    def zeta_index(self) -> int | None:
        return self.grid.zeta_index(self.zeta)

    @property
    def _kink(self) -> int | None:
        return self.zeta_index if self.sticky else None

    def _level(self, t: float) -> tuple[int, int, float]:
        if not -1e-12 <= t <= self.maturity * (1 + 1e-12):
            raise GridError(f"t={t} outside [0, {self.maturity}]")
        u = np.clip(t / self.maturity, 0.0, 1.0) * self.grid.t_steps
        k0 = min(int(np.floor(u + 1e-9)), self.grid.t_steps)
        frac = u - k0
        if frac < 1e-9:
            return k0, k0, 0.0
        return k0, k0 + 1, frac

    def _check_x(self, x: np.ndarray) -> None:
        if np.any(x < self.x[0]) or np.any(x > self.x[-1]):
            raise GridError("price outside surface domain")

    def price_at_level(self, k: int, x) -> np.ndarray:
        """Piecewise cubic Hermite interpolation of level ``k`` using nodal deltas."""
        xa = np.atleast_1d(np.asarray(x, dtype=float))
        self._check_x(xa)
        xs = self.x
        i = np.clip(np.searchsorted(xs, xa, side="right") - 1, 0, xs.size - 2)
        h = xs[i + 1] - xs[i]
        s = (xa - xs[i]) / h
        v0, v1 = self.values[k, i], self.values[k, i + 1]
        d0, d1 = self._cell_deltas(k, i)
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        out = h00 * v0 + h10 * h * d0 + h01 * v1 + h11 * h * d1
        return out if np.ndim(x) else float(out[0])

    def _cell_deltas(self, k: int, i: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d0 = self.deltas[k, i].copy()
        d1 = self.deltas[k, i + 1].copy()
        j = self._kink
        if j is not None:
            # the cell ending at zeta sees the left derivative there
            d1 = np.where(i + 1 == j, self.dx_left_at_zeta[k], d1)
        return d0, d1

    def delta_at_level(self, k: int, x) -> np.ndarray:
        """Hedge ratio at level ``k``: linear in each cell, right derivative exactly at zeta."""
        xa = np.atleast_1d(np.asarray(x, dtype=float))
        self._check_x(xa)
        xs = self.x
        i = np.clip(np.searchsorted(xs, xa, side="right") - 1, 0, xs.size - 2)
        s = (xa - xs[i]) / (xs[i + 1] - xs[i])
        d0, d1 = self._cell_deltas(k, i)
        out = (1 - s) * d0 + s * d1
        return out if np.ndim(x) else float(out[0])

    def price(self, t: float, x):
        k0, k1, f = self._level(t)
        p = self.price_at_level(k0, x)
        return p if f == 0 else (1 - f) * p + f * self.price_at_level(k1, x)

    def delta(self, t: float, x: float) -> tuple[float, float]:
        """``(left, right)`` derivative; equal away from zeta."""
        k0, k1, f = self._level(t)
        j = self._kink
        if j is not None and abs(x - self.zeta) <= 1e-12 * self.zeta:
            lft = (1 - f) * self.dx_left_at_zeta[k0] + f * self.dx_left_at_zeta[k1]
            rgt = (1 - f) * self.dx_right_at_zeta[k0] + f * self.dx_right_at_zeta[k1]
            return float(lft), float(rgt)
        d = self.delta_at_level(k0, x)
        if f:
            d = (1 - f) * d + f * self.delta_at_level(k1, x)
        return float(d), float(d)

    def to_rows(self):
        """Long format ``(t, x, v, dv_left, dv_right)`` rows."""
        j = self._kink
        for k, t in enumerate(self.times):
            for i, x in enumerate(self.x):
                dl = dr = self.deltas[k, i]
                if j is not None and i == j:
                    dl, dr = self.dx_left_at_zeta[k], self.dx_right_at_zeta[k]
                yield t, x, self.values[k, i], dl, dr


def _nodal_deltas(x: np.ndarray, values: np.ndarray, j: int | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    wm, w0, wp = _central_weights(x)
    d = np.empty_like(values)
    d[:, 1:-1] = wm * values[:, :-2] + w0 * values[:, 1:-1] + wp * values[:, 2:]
    d[:, 0] = (values[:, 1] - values[:, 0]) / (x[1] - x[0])
    d[:, -1] = (values[:, -1] - values[:, -2]) / (x[-1] - x[-2])
    if j is None:
        return d, d[:, 0] * np.nan, d[:, 0] * np.nan
    ir, wr = one_sided_weights(x, j, "right")
    il, wl = one_sided_weights(x, j, "left")
    right = values[:, ir] @ wr
    left = values[:, il] @ wl
    d[:, j] = right
    return d, left, right


def _terminal(payoff: Payoff, x: np.ndarray) -> np.ndarray:
    v = np.asarray(eval_payoff(payoff, x), dtype=float)
    if not np.all(np.isfinite(v)):
        raise ModelError("payoff is not finite on the grid")
    return v


def solve_pricing(params: ModelParams, payoff: Payoff, grid: GridSpec, maturity: float) -> PriceSurface:
    """Arbitrage-free price surface of ``payoff`` under the sticky risk-neutral dynamics.

    The drift is irrelevant (pricing happens under the martingale measure); ``r`` must be 0.
    """
    validate(params)
    if params.r != 0:
        raise ModelError("pricing equation requires r = 0")
    if maturity <= 0:
        raise ModelError("maturity must be positive")
    x = grid.x_nodes
    j = grid.zeta_index(params.zeta)
    if params.rho > 0 and j is None:
        raise GridError("zeta must be a grid node when rho > 0")
    half_var = 0.5 * params.sigma**2 * x**2
    values = _march(x, half_var, j, params.rho, _terminal(payoff, x), grid, maturity)
    deltas, left, right = _nodal_deltas(x, values, j if params.rho > 0 else None)
    return PriceSurface(
        grid=grid,
        maturity=float(maturity),
        zeta=params.zeta,
        values=values,
        dx_left_at_zeta=left,
        dx_right_at_zeta=right,
        sticky=params.rho > 0,
        deltas=deltas,
    )


def _bump_profile(u: np.ndarray) -> np.ndarray:
    """C^2 polynomial bump on [-1, 1] with unit integral."""
    return np.where(np.abs(u) < 1.0, (35.0 / 32.0) * (1.0 - u**2) ** 3, 0.0)


@dataclass(frozen=True)
class MollifiedModel:
    """Smooth local-volatility model whose speed density carries the sticky atom.

    ``1 / a_n(x)^2 = 1 / (sigma x)^2 + rho * bump_n(x)`` where ``a_n`` is the absolute
    diffusion coefficient; ``sigma_n(x) = a_n(x) / x`` is the relative local volatility.
    """

    params: ModelParams
    n: int
    support_width: float

    def bump(self, x) -> np.ndarray:
        eps = self.support_width
        return _bump_profile((np.asarray(x, dtype=float) - self.params.zeta) / eps) / eps

    def added_speed(self, x) -> np.ndarray:
        return self.params.rho * self.bump(x)

    def sigma_n(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        s = self.params.sigma
        added = self.added_speed(x)
        inv_a2 = 1.0 / (s * x) ** 2 + added
        return np.where(added > 0, np.sqrt(1.0 / inv_a2) / x, s)

    def window(self) -> tuple[float, float]:
        z, e = self.params.zeta, self.support_width
        return z - e, z + e


def mollify(params: ModelParams, n: int) -> MollifiedModel:
    validate(params)
    if n < 1:
        raise ModelError("mollification index must be >= 1")
    return MollifiedModel(params=params, n=int(n), support_width=params.zeta / (4.0 * n))


MIN_WINDOW_NODES = 8


def smooth_grid(model: MollifiedModel, n_nodes: int = 801, nodes_per_window: int = 32) -> np.ndarray:
    eps = model.support_width
    return price_grid(model.params.zeta, n_nodes, refine_halfwidth=eps, refine_step=2 * eps / nodes_per_window)


def solve_smooth(model: MollifiedModel, payoff: Payoff, grid: GridSpec, maturity: float) -> PriceSurface:
    """Price surface in the mollified local-volatility model (no interface row, smooth in x)."""
    params = model.params
    if params.r != 0:
        raise ModelError("pricing equation requires r = 0")
    x = grid.x_nodes
    lo, hi = model.window()
    inside = int(np.count_nonzero((x > lo) & (x < hi)))
    if params.rho > 0 and inside < MIN_WINDOW_NODES:
        raise GridError(
            f"mollification window holds {inside} nodes; at least {MIN_WINDOW_NODES} required "
            f"(spacing <= {(hi - lo) / (MIN_WINDOW_NODES + 1):.4g})"
        )
    if params.rho == 0:
        half_var = 0.5 * params.sigma**2 * x**2  # same arithmetic as the plain solver
    else:
        half_var = 0.5 * (model.sigma_n(x) * x) ** 2
    values = _march(x, half_var, None, 0.0, _terminal(payoff, x), grid, maturity)
    deltas, _, _ = _nodal_deltas(x, values, None)
    nan = np.full(values.shape[0], np.nan)
    j = grid.zeta_index(params.zeta)
    left = right = nan if j is None else deltas[:, j]
    return PriceSurface(
        grid=grid,
        maturity=float(maturity),
        zeta=params.zeta,
        values=values,
        dx_left_at_zeta=left,
        dx_right_at_zeta=right,
        sticky=False,
        deltas=deltas,
    )


def price_delta_curves(surface: PriceSurface, x: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """t = 0 price and left/right delta curves on the grid nodes (or on ``x``)."""
    if x is None:
        x = surface.x
        v = surface.values[0]
        dl = surface.deltas[0].copy()
        dr = surface.deltas[0].copy()
        j = surface.zeta_index
        if j is not None and surface.sticky:
            dl[j], dr[j] = surface.dx_left_at_zeta[0], surface.dx_right_at_zeta[0]
        return {"x": x, "price": v, "delta_left": dl, "delta_right": dr}
    v = surface.price_at_level(0, x)
    d = surface.delta_at_level(0, x)
    return {"x": np.asarray(x), "price": v, "delta_left": d, "delta_right": d}


SolveFn = Callable[[ModelParams, Payoff, GridSpec, float], PriceSurface]


def _fd_weights(x0: float, nodes: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at ``x0`` from ``nodes``."""
    d = np.asarray(nodes, dtype=float) - x0
    m = d.size
    V = np.vander(d, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(V, rhs)


def interface_residual(surface: PriceSurface, params: ModelParams, k: int = 0) -> tuple[float, float]:
    """Mismatch at time level ``k`` between ``(sigma^2 zeta^2 / 2) v_xx(zeta-)`` (and ``zeta+``)
    and ``(1 / (2 rho))`` times the delta jump, using three-point one-sided differences."""
    if not surface.sticky or params.rho <= 0:
        raise ModelError("interface residual needs a sticky surface")
    x, j = surface.x, surface.zeta_index
    v = surface.values[k]
    jump = surface.dx_right_at_zeta[k] - surface.dx_left_at_zeta[k]
    target = jump / (2.0 * params.rho)
    coef = 0.5 * params.sigma**2 * params.zeta**2
    out = []
    for idx in (np.array([j - 2, j - 1, j]), np.array([j, j + 1, j + 2])):
        vxx = float(v[idx] @ _fd_weights(x[j], x[idx], 2))
        out.append(abs(coef * vxx - target))
    return out[0], out[1]
