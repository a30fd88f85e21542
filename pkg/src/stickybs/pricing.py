"""Closed-form Black–Scholes reference, Monte Carlo prices under the martingale measure,
and numerical checks of price monotonicity and of the lognormal kernel's time behaviour."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from stickybs.model import ModelError, ModelParams, Payoff, eval_payoff, to_risk_neutral, validate
from stickybs.pde import GridSpec, solve_pricing
from stickybs.sim import (
    SimConfig,
    build_chain,
    chain_grid,
    gbm_ensemble,
    stmca_ensemble,
    time_change_ensemble,
)


def _bs_d1(s0: float, K: float, T: float, sigma: float) -> float:
    if min(s0, K, T, sigma) <= 0:
        raise ModelError("s0, K, T and sigma must be positive")
    return (math.log(s0 / K) + 0.5 * sigma**2 * T) / (sigma * math.sqrt(T))


def bs_call_price(s0: float, K: float, T: float, sigma: float) -> float:
    """Black–Scholes call value at zero rate."""
    d1 = _bs_d1(s0, K, T, sigma)
    d2 = d1 - sigma * math.sqrt(T)
    return float(s0 * norm.cdf(d1) - K * norm.cdf(d2))


def bs_call_delta(s0: float, K: float, T: float, sigma: float) -> float:
    return float(norm.cdf(_bs_d1(s0, K, T, sigma)))


def bs_call_price_vec(s: np.ndarray, K: float, tau: np.ndarray, sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``(price, delta)``; ``tau = 0`` returns the payoff and its right derivative."""
    s = np.asarray(s, dtype=float)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), s.shape)
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), s.shape)
    vol = sig * np.sqrt(tau)
    live = vol > 0
    safe = np.where(live, vol, 1.0)
    d1 = (np.log(s / K) + 0.5 * safe**2) / safe
    price = np.where(live, s * norm.cdf(d1) - K * norm.cdf(d1 - safe), np.maximum(s - K, 0.0))
    delta = np.where(live, norm.cdf(d1), (s >= K).astype(float))
    return price, delta


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    seed: int
    scheme: str

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.std_error

    @classmethod
    def from_samples(cls, samples: np.ndarray, seed: int, scheme: str) -> "McEstimate":
        x = np.asarray(samples, dtype=float)
        if x.size < 2:
            raise ModelError("need at least two samples")
        se = float(np.std(x, ddof=1) / math.sqrt(x.size))
        return cls(mean=float(np.mean(x)), std_error=se, n_paths=int(x.size), seed=seed, scheme=scheme)


def terminal_values(
    params: ModelParams,
    s0: float,
    T: float,
    n_paths: int,
    seed: int,
    scheme: str = "time_change",
    config: SimConfig = SimConfig(),
) -> np.ndarray:
    """``S_T`` samples of the given scheme (dynamics exactly as in ``params``)."""
    if T == 0:
        return np.full(n_paths, float(s0))
    if scheme == "gbm_exact":
        return gbm_ensemble(params, s0, np.array([0.0, T]), n_paths, seed).terminal
    if scheme == "time_change":
        return time_change_ensemble(params, s0, T, config.n_base_steps, n_paths, seed, n_out=1,
                                    local_time=config.local_time).terminal
    if scheme == "stmca":
        chain = build_chain(params, chain_grid(params.zeta, config.chain_nodes))
        return stmca_ensemble(chain, s0, T, n_paths, seed, n_out=1).terminal
    raise ModelError(f"unknown scheme {scheme!r}")


def price_mc(
    params: ModelParams,
    payoff: Payoff,
    s0: float,
    T: float,
    n_paths: int,
    seed: int,
    scheme: str = "time_change",
    config: SimConfig = SimConfig(),
) -> McEstimate:
    """Monte Carlo estimate of ``E^Q[h(S_T)]``."""
    q = to_risk_neutral(params)
    if payoff.kind == "constant":
        return McEstimate(mean=float(payoff.level), std_error=0.0, n_paths=n_paths, seed=seed, scheme=scheme)
    s_T = terminal_values(q, s0, T, n_paths, seed, scheme, config)
    return McEstimate.from_samples(eval_payoff(payoff, s_T), seed, scheme)


def martingale_check(
    params: ModelParams,
    s0: float,
    T: float,
    n_paths: int,
    seed: int,
    scheme: str | None = None,
    config: SimConfig = SimConfig(),
) -> McEstimate:
    """Estimate of ``E^Q[S_T] - s0``; ``rho = 0`` defaults to the exact lognormal scheme."""
    q = to_risk_neutral(params)
    scheme = scheme or ("gbm_exact" if q.rho == 0 else "time_change")
    s_T = terminal_values(q, s0, T, n_paths, seed, scheme, config)
    return McEstimate.from_samples(s_T - s0, seed, scheme)


def app_price(params: ModelParams, payoff: Payoff, s0: float, T: float, grid: GridSpec | None = None) -> float:
    """Arbitrage-free price from the sticky pricing equation; intrinsic value at ``T = 0``."""
    q = to_risk_neutral(params)
    if T == 0:
        return float(eval_payoff(payoff, s0))
    grid = grid or GridSpec.default(q.zeta)
    return float(solve_pricing(q, payoff, grid, T).price(0.0, s0))


# --------------------------------------------------------------------------- #
# monotonicity
# --------------------------------------------------------------------------- #

NOISE_REL = 1e-3


@dataclass(frozen=True)
class MonotonicityReport:
    rho_list: tuple[float, ...]
    T_list: tuple[float, ...]
    prices: np.ndarray  # shape (len(rho_list), len(T_list))
    violations: tuple[str, ...]
    noise: tuple[str, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return not self.violations


def _compare(a: float, b: float, label: str, violations: list, noise: list, tol_abs: float) -> None:
    """Record ``a >= b`` failures; gaps under the relative noise floor are only noted."""
    gap = b - a
    if gap <= tol_abs:
        return
    if gap <= NOISE_REL * max(abs(a), abs(b)):
        noise.append(f"{label}: gap {gap:.3g}")
    else:
        violations.append(f"{label}: gap {gap:.3g}")


def monotonicity_suite(
    params_base: ModelParams,
    payoff: Payoff,
    s0: float,
    T_list,
    rho_list,
    grid: GridSpec | None = None,
    tol_abs: float = 1e-10,
) -> MonotonicityReport:
    """Prices over ``rho_list x T_list`` and the ordering flags: nonincreasing along rho and
    nondecreasing along T hold for every convex payoff."""
    if not payoff.is_convex:
        raise ModelError("monotonicity suite requires a convex payoff")
    rho_list = tuple(float(r) for r in rho_list)
    T_list = tuple(float(t) for t in T_list)
    prices = np.array(
        [[app_price(params_base.with_(rho=r), payoff, s0, T, grid) for T in T_list] for r in rho_list]
    )
    violations: list[str] = []
    noise: list[str] = []
    order_r = np.argsort(rho_list)
    order_t = np.argsort(T_list)
    for jt in range(len(T_list)):
        for a, b in zip(order_r[:-1], order_r[1:]):
            _compare(prices[a, jt], prices[b, jt], f"T={T_list[jt]}: rho {rho_list[a]} -> {rho_list[b]}",
                     violations, noise, tol_abs)
    for ir in range(len(rho_list)):
        for a, b in zip(order_t[:-1], order_t[1:]):
            _compare(prices[ir, b], prices[ir, a], f"rho={rho_list[ir]}: T {T_list[a]} -> {T_list[b]}",
                     violations, noise, tol_abs)
    return MonotonicityReport(rho_list, T_list, prices, tuple(violations), tuple(noise))


# --------------------------------------------------------------------------- #
# lognormal kernel times speed density
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class KernelPoint:
    t: float
    x: float
    y: float
    value: float
    dvalue_dt: float


def _kernel(t, x, y, mu, sigma):
    nu = mu - 0.5 * sigma**2
    z = np.log(y / x) - nu * t
    value = np.exp(-(z**2) / (2 * sigma**2 * t)) / (y * sigma * np.sqrt(2 * np.pi * t))
    # d/dt log value; note dz/dt = -nu
    dlog = -0.5 / t + z**2 / (2 * sigma**2 * t**2) + z * nu / (sigma**2 * t)
    return value, value * dlog, dlog


def kernel_time_derivative(t: float, x: float, y: float, mu: float, sigma: float) -> KernelPoint:
    """Lognormal transition density times GBM speed density, as a density in ``y``, and its
    exact time derivative."""
    if min(t, x, y, sigma) <= 0:
        raise ModelError("t, x, y and sigma must be positive")
    v, dv, _ = _kernel(float(t), float(x), float(y), float(mu), float(sigma))
    return KernelPoint(t=float(t), x=float(x), y=float(y), value=float(v), dvalue_dt=float(dv))


def kernel_sign_grid(ts: np.ndarray, ys: np.ndarray, x: float, mu: float, sigma: float) -> np.ndarray:
    """``dvalue_dt > 0`` on the ``(t, y)`` product grid, read off the log-derivative so that
    underflow of the density in the far tails does not hide the sign."""
    _, _, dlog = _kernel(ts[:, None], x, ys[None, :], mu, sigma)
    return dlog > 0


def find_monotone_tail(
    x: float, T: float, mu: float, sigma: float, n_t: int = 100, n_y: int = 4001, width: float = 12.0
) -> tuple[float, float]:
    """Bounds ``(y_lo, y_hi)`` outside which the sampled time derivative is positive for every
    ``t`` in ``[T/100, T]``.

    The sweep covers ``log(y/x)`` within ``|mu - sigma^2/2| T + width * sigma * sqrt(T)``; the
    bounds are the first grid points beyond the outermost nonpositive sample.
    """
    if min(x, T, sigma) <= 0:
        raise ModelError("x, T and sigma must be positive")
    nu = mu - 0.5 * sigma**2
    half = abs(nu) * T + width * sigma * math.sqrt(T)
    ys = x * np.exp(np.linspace(-half, half, n_y))
    ts = np.linspace(T / 100.0, T, n_t)
    pos = kernel_sign_grid(ts, ys, x, mu, sigma).all(axis=0)
    bad = np.flatnonzero(~pos)
    if bad.size == 0:
        raise ModelError("no nonpositive region found; sweep too coarse")
    lo, hi = bad[0] - 1, bad[-1] + 1
    if lo < 0 or hi >= ys.size:
        raise ModelError("monotone tail search failed: region reaches the sweep edge")
    if not (pos[: lo + 1].all() and pos[hi:].all()):
        raise ModelError("monotone tail search failed: sign pattern not two-sided")
    return float(ys[lo]), float(ys[hi])
