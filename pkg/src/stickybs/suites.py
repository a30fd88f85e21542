"""Invariant checks run by ``stickybs suites``; each check reports a measured value against a
tolerance and the outcome."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from stickybs.arb import arbitrage_ensemble
from stickybs.hedge import make_model, run_experiment
from stickybs.model import ModelParams, Payoff, eval_payoff
from stickybs.pde import GridSpec, interface_residual, solve_pricing
from stickybs.pricing import (
    find_monotone_tail,
    kernel_sign_grid,
    kernel_time_derivative,
    martingale_check,
    monotonicity_suite,
    price_mc,
)
from stickybs.sim import SimConfig, simulate_ensemble


@dataclass(frozen=True)
class SuiteCheck:
    name: str
    parameter_point: dict
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "parameter_point": self.parameter_point,
            "value": float(self.value),
            "tolerance": float(self.tolerance),
            "pass": bool(self.passed),
        }
        if self.detail:
            d["detail"] = self.detail
        return d


@dataclass(frozen=True)
class SuiteSettings:
    s0: float = 10.0
    strike: float = 10.0
    maturity: float = 10.0
    n_paths: int = 20000
    hedge_paths: int = 200
    arb_paths: int = 200
    seed: int = 2024
    mc_sigma: float | None = None  # when set, the Monte Carlo side uses this volatility
    sim: SimConfig = field(default_factory=SimConfig)


def _point(params: ModelParams, **extra) -> dict:
    d = params.to_dict()
    d.update(extra)
    return d


def check_martingale(params: ModelParams, st: SuiteSettings) -> SuiteCheck:
    est = martingale_check(params, st.s0, st.maturity, st.n_paths, st.seed, config=st.sim)
    return SuiteCheck("martingale", _point(params, n_paths=st.n_paths, scheme=est.scheme),
                      abs(est.mean), 3 * est.std_error, abs(est.mean) <= 3 * est.std_error)


def check_put_call_parity(strike: float) -> SuiteCheck:
    x = np.geomspace(strike / 20, strike * 20, 2001)
    gap = np.max(np.abs(eval_payoff(Payoff.call(strike), x) - eval_payoff(Payoff.put(strike), x) - (x - strike)))
    tol = 1e-12 * strike
    return SuiteCheck("put_call_payoff_parity", {"strike": strike}, gap, tol, gap <= tol)


def check_variance_decomposition(params: ModelParams, st: SuiteSettings) -> SuiteCheck:
    pay = Payoff.call(st.strike)
    model = make_model("sticky", params, pay, st.maturity)
    rep = run_experiment(params, model, pay, st.s0, st.maturity, 100, st.hedge_paths, st.seed, n_steps=200)
    gap = rep.variance_gap()
    tol = 1e-10 * max(1.0, rep.rms**2)
    return SuiteCheck("variance_decomposition", _point(params, N=100, n_paths=st.hedge_paths), gap, tol, gap <= tol)


def check_interface_refinement(params: ModelParams, st: SuiteSettings, nodes=(201, 401, 801)) -> SuiteCheck:
    pay = Payoff.call(st.strike)
    res = []
    for n in nodes:
        surf = solve_pricing(params, pay, GridSpec.default(params.zeta, n, t_steps=500), st.maturity)
        res.append(max(interface_residual(surf, params)))
    ratios = [a / b for a, b in zip(res[:-1], res[1:])]
    worst = min(ratios)
    return SuiteCheck("pde_interface_refinement", _point(params, nodes=list(nodes)), worst, 1.5, worst >= 1.5,
                      detail="residuals " + ", ".join(f"{r:.3g}" for r in res))


def check_kernel_tail(x: float, T: float, mu: float, sigma: float) -> SuiteCheck:
    lo, hi = find_monotone_tail(x, T, mu, sigma)
    ts = np.linspace(T / 100, T, 100)
    ys = np.r_[np.geomspace(x * 1e-4, lo, 400), np.geomspace(hi, x * 1e4, 400)]
    bad = int(np.count_nonzero(~kernel_sign_grid(ts, ys, x, mu, sigma)))
    return SuiteCheck("kernel_tail_sign", {"x": x, "T": T, "mu": mu, "sigma": sigma, "y_lo": lo, "y_hi": hi},
                      bad, 0, bad == 0)


def check_kernel_derivative(x: float, mu: float, sigma: float) -> SuiteCheck:
    worst = 0.0
    for t in (0.5, 2.0, 7.0):
        for y in (0.6 * x, x, 1.7 * x):
            k = kernel_time_derivative(t, x, y, mu, sigma)
            h = 1e-5 * t
            fd = (kernel_time_derivative(t + h, x, y, mu, sigma).value
                  - kernel_time_derivative(t - h, x, y, mu, sigma).value) / (2 * h)
            worst = max(worst, abs(fd - k.dvalue_dt) / max(abs(k.dvalue_dt), 1e-12))
    return SuiteCheck("kernel_derivative_fd", {"x": x, "mu": mu, "sigma": sigma}, worst, 1e-4, worst <= 1e-4)


def check_pde_mc(params: ModelParams, st: SuiteSettings) -> SuiteCheck:
    pay = Payoff.call(st.strike)
    pde = float(solve_pricing(params.with_(mu=0.0), pay, GridSpec.default(params.zeta), st.maturity).price(0.0, st.s0))
    mc_params = params if st.mc_sigma is None else params.with_(sigma=st.mc_sigma)
    est = price_mc(mc_params, pay, st.s0, st.maturity, st.n_paths, st.seed, config=st.sim)
    tol = max(3 * est.std_error, 0.01 * abs(pde))
    gap = abs(est.mean - pde)
    return SuiteCheck("pde_mc_agreement", _point(params, mc_sigma=mc_params.sigma, n_paths=st.n_paths),
                      gap, tol, gap <= tol, detail=f"pde {pde:.5f} mc {est.mean:.5f} se {est.std_error:.5f}")


def check_occupation(params: ModelParams, st: SuiteSettings, n_paths: int = 1000) -> SuiteCheck:
    ens = simulate_ensemble(params, st.s0, st.maturity, n_paths, st.seed, n_out=1000, config=st.sim)
    ratio = float(np.mean(ens.occupation_zeta[:, -1]) / np.mean(ens.local_time_zeta[:, -1]))
    gap = abs(ratio / params.rho - 1.0)
    return SuiteCheck("occupation_identity", _point(params, n_paths=n_paths), gap, 0.1, gap <= 0.1,
                      detail=f"occupation/local time {ratio:.4f}")


def check_monotonicity(params: ModelParams, st: SuiteSettings) -> SuiteCheck:
    rep = monotonicity_suite(params, Payoff.call(st.strike), st.s0, (1.0, 5.0, 10.0), (0.0, 1.0, 2.0))
    return SuiteCheck("price_monotonicity", _point(params, T_list=[1, 5, 10], rho_list=[0, 1, 2]),
                      len(rep.violations), 0, rep.ok, detail="; ".join(rep.violations))


def check_arbitrage(params: ModelParams, st: SuiteSettings) -> SuiteCheck:
    arb = params.with_(r=-0.05)
    s = arbitrage_ensemble(arb, st.s0, st.maturity, st.arb_paths, st.seed, chain_nodes=1601)
    ok = bool(s.within_tolerance.all()) and s.mean_relative_gap <= 0.15
    return SuiteCheck("arbitrage_identity", _point(arb, n_paths=st.arb_paths), s.mean_relative_gap, 0.15, ok,
                      detail=f"positive on {s.fraction_positive_touched:.3f} of touching paths")


def run_suites(params: ModelParams, st: SuiteSettings = SuiteSettings(),
               log: Callable[[str], None] | None = None) -> list[SuiteCheck]:
    q = params.with_(mu=0.0, r=0.0)
    # checks of sticky features need rho > 0
    qs = q if q.rho > 0 else q.with_(rho=1.0)
    steps: list[Callable[[], SuiteCheck]] = [
        lambda: check_put_call_parity(st.strike),
        lambda: check_kernel_derivative(st.s0, q.mu, q.sigma),
        lambda: check_kernel_tail(st.s0, st.maturity, q.mu, q.sigma),
        lambda: check_martingale(qs, st),
        lambda: check_martingale(q.with_(rho=0.0), st),
        lambda: check_interface_refinement(qs, st),
        lambda: check_monotonicity(q, st),
        lambda: check_variance_decomposition(qs, st),
        lambda: check_occupation(qs, st),
        lambda: check_pde_mc(qs, st),
        lambda: check_arbitrage(qs, st),
    ]
    out = []
    for step in steps:
        c = step()
        if log:
            log(f"{'PASS' if c.passed else 'FAIL'} {c.name}: value={c.value:.4g} tol={c.tolerance:.4g} {c.detail}")
        out.append(c)
    return out
