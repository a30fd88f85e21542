"""Arbitrage from stickiness when the riskless rate is nonzero.

Holding ``H_t = sgn(-r) e^{rt} 1{S_t = zeta}`` units of the asset while the price sits at
the threshold earns the carry of the discounted position, ``|r| zeta dt``, without price risk.
Over ``[0, t]`` this sums to ``|r| zeta * occupation_t = |r| rho zeta L_t``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from stickybs.model import ModelError, ModelParams, validate
from stickybs.sim import PathSample, build_chain, chain_grid, stmca_ensemble


def discounted_path(path: PathSample, r: float) -> PathSample:
    """Prices multiplied by ``e^{-rt}``; local and occupation time are kept as they are."""
    if r == 0:
        return path
    return PathSample(
        times=path.times,
        values=path.values * np.exp(-r * path.times),
        local_time_zeta=path.local_time_zeta,
        occupation_zeta=path.occupation_zeta,
        seed=path.seed,
        scheme=path.scheme,
        path_id=path.path_id,
    )


@dataclass(frozen=True)
class ArbRun:
    path: PathSample
    strategy_values: np.ndarray
    payoff_curve: np.ndarray
    theoretical_curve: np.ndarray

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.payoff_curve)

    @property
    def terminal_gain(self) -> float:
        return float(self.payoff_curve[-1])

    @property
    def terminal_theoretical(self) -> float:
        return float(self.theoretical_curve[-1])

    def rows(self):
        return zip(self.path.times, self.strategy_values, self.payoff_curve, self.theoretical_curve)


def _check_rate(params: ModelParams) -> None:
    validate(params)
    if params.r == 0:
        raise ModelError("strategy degenerates; no arbitrage exists when r = 0")


def _gains(times: np.ndarray, values: np.ndarray, params: ModelParams, tol: float):
    """Strategy values and left-endpoint gains along the last axis.

    With ``rho = 0`` the level carries no occupation time, so the indicator vanishes almost
    everywhere and the strategy is identically zero; a discrete path can still sit on a grid
    node equal to zeta, which is not time spent at the threshold.
    """
    r = params.r
    at = (np.abs(values - params.zeta) <= tol) & (params.rho > 0)
    H = np.where(at, math.copysign(1.0, -r) * np.exp(r * times), 0.0)
    disc = values * np.exp(-r * times)
    gains = np.zeros_like(values)
    np.cumsum(H[..., :-1] * np.diff(disc, axis=-1), axis=-1, out=gains[..., 1:])
    return H, gains


def arbitrage_gains(path: PathSample, params: ModelParams, tol: float | None = None) -> ArbRun:
    """Run the threshold strategy on ``path`` and compare with ``|r| rho zeta L_t``.

    ``tol`` decides when the path is at zeta; the default accepts only values equal to zeta up
    to round-off, which is how both path schemes emit the threshold.
    """
    _check_rate(params)
    tol = 1e-12 * params.zeta if tol is None else tol
    H, gains = _gains(path.times, path.values, params, tol)
    theo = abs(params.r) * params.rho * params.zeta * path.local_time_zeta
    return ArbRun(path=path, strategy_values=H, payoff_curve=gains, theoretical_curve=theo)


@dataclass(frozen=True)
class ArbSummary:
    """Terminal results of the strategy over an ensemble."""

    terminal_gain: np.ndarray
    terminal_theoretical: np.ndarray
    touched: np.ndarray
    min_increment: np.ndarray
    departures: np.ndarray
    step_tolerance: float

    def path_tolerance(self, k: float = 4.0) -> np.ndarray:
        """``k`` standard deviations of the summed departure noise: each move off zeta adds a
        mean-zero gain of about one spatial step."""
        return k * self.step_tolerance * np.sqrt(self.departures)

    @property
    def within_tolerance(self) -> np.ndarray:
        return self.terminal_gain >= -self.path_tolerance()

    @property
    def mean_relative_gap(self) -> float:
        theo = float(np.mean(self.terminal_theoretical))
        return abs(float(np.mean(self.terminal_gain)) - theo) / theo

    @property
    def fraction_positive_touched(self) -> float:
        t = self.touched
        return float(np.mean(self.terminal_gain[t] > 0)) if t.any() else float("nan")


def arbitrage_ensemble(
    params: ModelParams,
    s0: float,
    T: float,
    n_paths: int,
    seed: int,
    chain_nodes: int = 3201,
    batch: int = 16,
) -> ArbSummary:
    """Strategy on chain paths sampled finer than the shortest holding time, so every move
    of the walk is seen. The per-step tolerance for gain increments is the largest spatial
    step adjacent to zeta, the size of one departure from the threshold."""
    _check_rate(params)
    chain = build_chain(params, chain_grid(params.zeta, chain_nodes))
    dt = 0.5 * float(np.min(chain.hold_time))
    n_out = max(1, int(math.ceil(T / dt)))
    jz = chain.zeta_index
    step_tol = float(max(chain.grid[jz + 1] - chain.grid[jz], chain.grid[jz] - chain.grid[jz - 1]))
    gains, theo, touched, min_inc, dep = [], [], [], [], []
    for start in range(0, n_paths, batch):
        m = min(batch, n_paths - start)
        ens = stmca_ensemble(chain, s0, T, m, seed, n_out=n_out, first_path=start)
        H, g = _gains(ens.times, ens.values, params, 1e-12 * params.zeta)
        gains.append(g[:, -1])
        theo.append(abs(params.r) * params.rho * params.zeta * ens.local_time_zeta[:, -1])
        touched.append((H != 0).any(axis=1))
        min_inc.append(np.min(np.diff(g, axis=1), axis=1))
        dep.append(np.sum((H[:, :-1] != 0) & (np.diff(ens.values, axis=1) != 0), axis=1))
    return ArbSummary(
        terminal_gain=np.concatenate(gains),
        terminal_theoretical=np.concatenate(theo),
        touched=np.concatenate(touched),
        min_increment=np.concatenate(min_inc),
        departures=np.concatenate(dep),
        step_tolerance=step_tol,
    )


ARB_HEADER = ("t", "H", "gain", "theoretical")


def write_arb_csv(run: ArbRun, file: str | Path) -> Path:
    file = Path(file)
    with file.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ARB_HEADER)
        for row in run.rows():
            w.writerow([repr(float(v)) for v in row])
    return file

