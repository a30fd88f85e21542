"""Discrete delta-hedging backtests and the model-mismatch experiments.

A hedge model supplies ``(price, delta)`` for arrays of spot prices at a given time. The
backtest starts with the model premium in cash, rebalances at ``t_i = i T / N`` and settles
against the realised payoff at ``T``; its terminal value is the tracking error.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from stickybs.model import ModelError, ModelParams, Payoff, eval_payoff, to_risk_neutral
from stickybs.pde import GridSpec, PriceSurface, mollify, smooth_grid, solve_pricing, solve_smooth
from stickybs.pricing import bs_call_price_vec
from stickybs.sim import PathEnsemble, PathSample, SimConfig, simulate_ensemble

MODEL_KINDS = ("bs_true_sigma", "bs_realized_sigma", "sticky", "smooth_mollified")
MODEL_LABELS = {"bs_true_sigma": 1, "bs_realized_sigma": 2, "sticky": 3, "smooth_mollified": "smooth"}


def realized_vol(log_prices, n: float, T_prime: float) -> float:
    """Square root of the summed squared log-increments of the window, over ``sqrt(T_prime)``.

    ``n`` is the sampling rate; the window should hold ``floor(n T_prime) + 1`` samples, but any
    sample count of at least two is accepted.
    """
    lp = np.asarray(log_prices, dtype=float)
    if lp.ndim != 1 or lp.size < 2:
        raise ModelError("realized volatility needs at least two samples")
    if T_prime <= 0 or n <= 0:
        raise ModelError("window length and sampling rate must be positive")
    return float(math.sqrt(np.sum(np.diff(lp) ** 2) / T_prime))


# --------------------------------------------------------------------------- #
# hedge models
# --------------------------------------------------------------------------- #


def _bs_value(payoff: Payoff, s: np.ndarray, tau, sigma) -> tuple[np.ndarray, np.ndarray]:
    if payoff.kind == "identity":
        return s.copy(), np.ones_like(s)
    if payoff.kind == "constant":
        return np.full_like(s, payoff.level), np.zeros_like(s)
    if payoff.kind in ("call", "put"):
        c, d = bs_call_price_vec(s, payoff.strike, tau, sigma)
        if payoff.kind == "put":
            return c - s + payoff.strike, d - 1.0
        return c, d
    raise ModelError(f"closed-form models do not price {payoff.kind!r} payoffs")


def _surface_eval(surface: PriceSurface, t: float, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Price and delta at time ``t``, continued linearly beyond the price grid."""
    x = surface.x
    inside = np.clip(s, x[0], x[-1])
    k0, k1, f = surface._level(t)
    p = surface.price_at_level(k0, inside)
    d = surface.delta_at_level(k0, inside)
    if f:
        p = (1 - f) * p + f * surface.price_at_level(k1, inside)
        d = (1 - f) * d + f * surface.delta_at_level(k1, inside)
    return p + d * (s - inside), d


@dataclass(frozen=True)
class HedgeModel:
    """Pricing and delta source for the hedger.

    ``bs_true_sigma`` uses the closed form at the true volatility, ``bs_realized_sigma`` the
    closed form at a per-path realised volatility, ``sticky`` the sticky price surface and
    ``smooth_mollified`` the surface of the mollified local-volatility model of index ``n``.
    """

    kind: str
    sigma: float
    surface: PriceSurface | None = field(default=None, repr=False)
    n: int | None = None
    history_window: float | None = None
    history_rate: float = 200.0

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ModelError(f"unknown hedge model {self.kind!r}")
        if self.kind in ("sticky", "smooth_mollified") and self.surface is None:
            raise ModelError(f"{self.kind} model needs a price surface")
        if self.kind == "bs_realized_sigma" and not (self.history_window and self.history_window > 0):
            raise ModelError("bs_realized_sigma needs a positive history window")

    @property
    def label(self) -> str:
        return self.kind if self.n is None else f"{self.kind}({self.n})"

    def evaluate(self, payoff: Payoff, t: float, T: float, s: np.ndarray, sigma=None) -> tuple[np.ndarray, np.ndarray]:
        s = np.asarray(s, dtype=float)
        if self.surface is not None:
            return _surface_eval(self.surface, t, s)
        return _bs_value(payoff, s, T - t, self.sigma if sigma is None else sigma)


def make_model(
    kind: str,
    params: ModelParams,
    payoff: Payoff,
    T: float,
    n: int | None = None,
    grid: GridSpec | None = None,
    history_window: float | None = None,
    history_rate: float = 200.0,
) -> HedgeModel:
    """Bind the model's price source to the true parameters ``params`` (risk-neutral)."""
    q = to_risk_neutral(params)
    if kind == "bs_true_sigma":
        return HedgeModel(kind, q.sigma)
    if kind == "bs_realized_sigma":
        return HedgeModel(kind, q.sigma, history_window=history_window or T / 2, history_rate=history_rate)
    if kind == "sticky":
        surf = solve_pricing(q, payoff, grid or GridSpec.default(q.zeta), T)
        return HedgeModel(kind, q.sigma, surface=surf)
    if kind == "smooth_mollified":
        n = 4 if n is None else int(n)
        if q.rho == 0:
            surf = solve_pricing(q, payoff, grid or GridSpec.default(q.zeta), T)
        else:
            mm = mollify(q, n)
            g = grid or GridSpec(smooth_grid(mm))
            surf = solve_smooth(mm, payoff, g, T)
        return HedgeModel(kind, q.sigma, surface=surf, n=n)
    raise ModelError(f"unknown hedge model {kind!r}")


# --------------------------------------------------------------------------- #
# backtest
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class HedgeRecord:
    """Backtest of one or many paths. Arrays are ``(n_paths, N)`` for deltas and
    ``(n_paths, N + 1)`` for portfolio values; the last portfolio value is the tracking error."""

    deltas: np.ndarray
    portfolio: np.ndarray
    premium: np.ndarray
    max_wealth_jump: float

    @property
    def tracking_error(self) -> np.ndarray:
        return self.portfolio[:, -1]


def _rebalance_index(times: np.ndarray, T: float, N: int) -> np.ndarray:
    if N < 1:
        raise ModelError("N must be >= 1")
    if times[-1] < T * (1 - 1e-12):
        raise ModelError("path does not cover [0, T]")
    target = np.arange(N + 1) * (T / N)
    idx = np.searchsorted(times, target - 1e-9 * T, side="left")
    if np.any(idx >= times.size) or np.any(np.abs(times[np.minimum(idx, times.size - 1)] - target) > 1e-9 * T):
        raise ModelError("path grid does not contain the rebalancing times; refine the path grid")
    return idx


def backtest_values(
    times: np.ndarray,
    values: np.ndarray,
    model: HedgeModel,
    payoff: Payoff,
    T: float,
    N: int,
    sigma_path: np.ndarray | None = None,
) -> HedgeRecord:
    """Vectorised delta hedge over the rows of ``values``.

    At each ``t_i`` (i < N) the position is reset to the model delta and the cash account
    funds the change; the portfolio value is cash plus stock minus the model price. At ``T``
    the price is the realised payoff.
    """
    values = np.atleast_2d(values)
    idx = _rebalance_index(np.asarray(times), T, N)
    S = values[:, idx]
    n_paths = S.shape[0]
    t_i = np.arange(N + 1) * (T / N)
    deltas = np.empty((n_paths, N))
    portfolio = np.empty((n_paths, N + 1))
    price0, delta = model.evaluate(payoff, 0.0, T, S[:, 0], sigma_path)
    premium = np.asarray(price0, dtype=float).copy()
    cash = premium.copy()
    old = np.zeros(n_paths)
    jump = 0.0
    for i in range(N):
        if i:
            price, delta = model.evaluate(payoff, t_i[i], T, S[:, i], sigma_path)
        else:
            price = price0
        before = cash + old * S[:, i]
        cash = cash - (delta - old) * S[:, i]
        jump = max(jump, float(np.max(np.abs(cash + delta * S[:, i] - before))))
        portfolio[:, i] = cash + delta * S[:, i] - price
        deltas[:, i] = delta
        old = delta
    portfolio[:, N] = cash + old * S[:, N] - eval_payoff(payoff, S[:, N])
    return HedgeRecord(deltas=deltas, portfolio=portfolio, premium=premium, max_wealth_jump=jump)


def hedge_backtest(path: PathSample, model: HedgeModel, payoff: Payoff, T: float, N: int,
                   sigma_path: float | None = None) -> HedgeRecord:
    sp = None if sigma_path is None else np.array([sigma_path])
    if model.kind == "bs_realized_sigma" and sp is None:
        raise ModelError("bs_realized_sigma needs the path's realised volatility")
    return backtest_values(path.times, path.values[None, :], model, payoff, T, N, sp)


# --------------------------------------------------------------------------- #
# experiments
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class HedgeReport:
    model: str
    rho: float
    N: int
    n_paths: int
    seed: int
    premium_used: float
    app_price: float
    mp: float
    mu_hat: float
    sigma_hat: float
    std_error: float
    rms: float
    record: HedgeRecord = field(repr=False)

    @property
    def tracking_error(self) -> np.ndarray:
        return self.record.tracking_error

    def variance_gap(self) -> float:
        n = self.n_paths
        return abs(self.rms**2 - self.mu_hat**2 - self.sigma_hat**2 * (n - 1) / n)


def _stats(eps: np.ndarray) -> tuple[float, float, float, float]:
    n = eps.size
    mu = float(np.mean(eps))
    sd = float(np.std(eps, ddof=1)) if n > 1 else 0.0
    return mu, sd, sd / math.sqrt(n), float(math.sqrt(np.mean(eps**2)))


@dataclass(frozen=True)
class ExperimentPaths:
    """Hedging paths shared across models and rebalancing counts, plus the per-path volatility
    estimated from an independent history window (used by the realised-volatility model)."""

    ensemble: PathEnsemble
    realized_sigma: np.ndarray | None


def simulate_experiment_paths(
    params_true: ModelParams,
    s0: float,
    T: float,
    n_paths: int,
    seed: int,
    n_steps: int = 2000,
    scheme: str = "time_change",
    history_window: float | None = None,
    history_rate: float = 200.0,
    config: SimConfig = SimConfig(),
) -> ExperimentPaths:
    """Paths under the martingale measure on ``n_steps`` uniform steps.

    For the realised-volatility model each path gets a history of length ``history_window``
    sampled ``history_rate`` times per unit time: an independent sticky path from ``s0``
    (seeded from ``seed + 1``) read backwards so that it ends at ``s0``.
    """
    q = to_risk_neutral(params_true)
    ens = simulate_ensemble(q, s0, T, n_paths, seed, scheme=scheme, n_out=n_steps, config=config)
    rs = None
    if history_window:
        m = max(1, int(math.floor(history_rate * history_window)))
        hist = simulate_ensemble(q, s0, history_window, n_paths, seed + 1, scheme=scheme, n_out=m, config=config)
        logs = np.log(hist.values[:, ::-1])
        rs = np.sqrt(np.sum(np.diff(logs, axis=1) ** 2, axis=1) / history_window)
    return ExperimentPaths(ensemble=ens, realized_sigma=rs)


def run_experiment(
    params_true: ModelParams,
    model: HedgeModel,
    payoff: Payoff,
    s0: float,
    T: float,
    N: int,
    n_paths: int,
    seed: int,
    paths: ExperimentPaths | None = None,
    app: float | None = None,
    premium_override: float | None = None,
    n_steps: int = 2000,
    grid: GridSpec | None = None,
) -> HedgeReport:
    """Backtest ``model`` on sticky paths of ``params_true`` and aggregate the tracking errors.

    ``app`` defaults to the sticky pricing-equation value at ``(0, s0)``. A ``premium_override``
    replaces the model's initial price in the cash account (to replicate a biased premium).
    """
    q = to_risk_neutral(params_true)
    if paths is None:
        hw = model.history_window if model.kind == "bs_realized_sigma" else None
        paths = simulate_experiment_paths(q, s0, T, n_paths, seed, n_steps=max(n_steps, N),
                                          history_window=hw, history_rate=model.history_rate)
    ens = paths.ensemble
    sig = paths.realized_sigma if model.kind == "bs_realized_sigma" else None
    if model.kind == "bs_realized_sigma" and sig is None:
        raise ModelError("bs_realized_sigma needs paths with a history window")
    rec = backtest_values(ens.times, ens.values, model, payoff, T, N, sig)
    if premium_override is not None:
        shift = premium_override - rec.premium
        rec = HedgeRecord(
            deltas=rec.deltas,
            portfolio=rec.portfolio + shift[:, None],
            premium=np.full_like(rec.premium, premium_override),
            max_wealth_jump=rec.max_wealth_jump,
        )
    if app is None:
        app = float(solve_pricing(q, payoff, grid or GridSpec.default(q.zeta), T).price(0.0, s0))
    # a common premium is used as is, so that a correctly specified model has MP = 0 exactly
    same = bool(np.all(rec.premium == rec.premium[0]))
    premium_used = float(rec.premium[0]) if same else float(np.mean(rec.premium))
    mu, sd, se, rms = _stats(rec.tracking_error)
    return HedgeReport(
        model=model.label,
        rho=q.rho,
        N=int(N),
        n_paths=ens.n_paths,
        seed=seed,
        premium_used=premium_used,
        app_price=float(app),
        mp=premium_used - float(app),
        mu_hat=mu,
        sigma_hat=sd,
        std_error=se,
        rms=rms,
        record=rec,
    )


@dataclass(frozen=True)
class SweepResult:
    reports: tuple[HedgeReport, ...]
    slope: float

    @property
    def N_list(self) -> tuple[int, ...]:
        return tuple(r.N for r in self.reports)


def loglog_slope(N_list: Sequence[int], sigma_hat: Sequence[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(N_list, float)), np.log(np.asarray(sigma_hat, float)), 1)[0])


def granularity_sweep(
    params_true: ModelParams,
    model: HedgeModel,
    payoff: Payoff,
    s0: float,
    T: float,
    N_list: Sequence[int],
    n_paths: int,
    seed: int,
    paths: ExperimentPaths | None = None,
    app: float | None = None,
    premium_override: float | None = None,
) -> SweepResult:
    """One report per ``N`` on a common set of paths, and the log-log slope of ``sigma_hat``."""
    N_list = tuple(int(n) for n in N_list)
    n_steps = int(np.lcm.reduce(N_list))
    q = to_risk_neutral(params_true)
    if paths is None:
        hw = model.history_window if model.kind == "bs_realized_sigma" else None
        paths = simulate_experiment_paths(q, s0, T, n_paths, seed, n_steps=n_steps,
                                          history_window=hw, history_rate=model.history_rate)
    if app is None:
        app = float(solve_pricing(q, payoff, GridSpec.default(q.zeta), T).price(0.0, s0))
    reports = tuple(
        run_experiment(q, model, payoff, s0, T, N, n_paths, seed, paths=paths, app=app,
                       premium_override=premium_override)
        for N in N_list
    )
    return SweepResult(reports=reports, slope=loglog_slope(N_list, [r.sigma_hat for r in reports]))


# --------------------------------------------------------------------------- #
# table emitters
# --------------------------------------------------------------------------- #

GRANULARITY_COLUMNS = ("rho", "N", "premium", "mu_hat", "sigma_hat")
MISMATCH_COLUMNS = ("model", "rho", "premium", "app", "mp", "mu_hat", "sigma_hat")


def _spread(r: HedgeReport, dispersion: str) -> float:
    if dispersion == "std":
        return r.sigma_hat
    if dispersion == "std_error":
        return r.std_error
    raise ModelError("dispersion must be 'std' or 'std_error'")


def granularity_rows(reports: Sequence[HedgeReport], dispersion: str = "std") -> list[dict]:
    return [
        {"rho": r.rho, "N": r.N, "premium": r.premium_used, "mu_hat": r.mu_hat, "sigma_hat": _spread(r, dispersion)}
        for r in reports
    ]


def mismatch_rows(reports: Sequence[HedgeReport], dispersion: str = "std") -> list[dict]:
    return [
        {
            "model": MODEL_LABELS.get(r.model.split("(")[0], r.model),
            "rho": r.rho,
            "premium": r.premium_used,
            "app": r.app_price,
            "mp": r.mp,
            "mu_hat": r.mu_hat,
            "sigma_hat": _spread(r, dispersion),
        }
        for r in reports
    ]


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}" if v != 0 else "0"
    return str(v)


def write_table(rows: Sequence[dict], columns: Sequence[str], file: str | Path) -> Path:
    file = Path(file)
    with file.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
    return file
