from __future__ import annotations

import math

import numpy as np
import pytest

from stickybs.arb import ARB_HEADER, arbitrage_ensemble, arbitrage_gains, discounted_path, write_arb_csv
from stickybs.model import ModelError, ModelParams
from stickybs.sim import PathSample, build_chain, chain_grid, output_grid, simulate_stmca

ARB = ModelParams(mu=0.0, sigma=0.25, rho=1.0, zeta=10.0, r=-0.05)


def _const_path(level: float, T: float = 5.0, n: int = 50) -> PathSample:
    t = output_grid(T, n)
    z = np.zeros_like(t)
    return PathSample(times=t, values=np.full_like(t, level), local_time_zeta=z, occupation_zeta=z, seed=0,
                      scheme="stmca")


@pytest.fixture(scope="module")
def chain_path():
    ch = build_chain(ARB, chain_grid(ARB.zeta, 1601))
    n_out = int(math.ceil(10.0 / (0.5 * ch.hold_time.min())))
    return simulate_stmca(ch, 10.0, 10.0, seed=7, n_out=n_out)


def test_discount_identity_when_rate_zero():
    p = _const_path(12.0)
    assert discounted_path(p, 0.0) is p


def test_discounted_constant_path_decays():
    p = _const_path(10.0)
    d = discounted_path(p, 0.03)
    assert np.allclose(d.values, 10.0 * np.exp(-0.03 * p.times), rtol=1e-15)
    assert d.values[-1] == p.values[-1] * np.exp(-0.03 * p.times[-1])
    assert d.local_time_zeta is p.local_time_zeta


def test_zero_rate_is_rejected():
    with pytest.raises(ModelError, match="no arbitrage exists when r = 0"):
        arbitrage_gains(_const_path(10.0), ARB.with_(r=0.0))
    with pytest.raises(ModelError, match="r = 0"):
        arbitrage_ensemble(ARB.with_(r=0.0), 10.0, 1.0, 2, seed=0)


def test_no_gain_away_from_threshold():
    run = arbitrage_gains(_const_path(11.0), ARB)
    assert np.all(run.strategy_values == 0)
    assert np.all(run.payoff_curve == 0)


def test_constant_path_at_threshold_earns_carry():
    # holding e^{rt} units of zeta e^{-rt}, short the asset for r < 0: gain is |r| zeta t to first order
    p = _const_path(10.0, T=1.0, n=1000)
    run = arbitrage_gains(p, ARB)
    assert run.terminal_gain == pytest.approx(0.05 * 10.0 * 1.0, rel=1e-3)


def test_strategy_support_and_nonnegative_increments(chain_path):
    run = arbitrage_gains(chain_path, ARB)
    at = chain_path.values == ARB.zeta
    assert np.all(run.strategy_values[~at] == 0)
    inc = run.increments
    assert np.all(inc[~at[:-1]] == 0)
    # a step leaving zeta moves the discounted price by about one grid step
    ch_step = 1.5 * np.max(np.abs(np.diff(chain_path.values)))
    assert np.all(inc >= -ch_step)


def test_arb_csv(tmp_path, chain_path):
    run = arbitrage_gains(chain_path, ARB)
    lines = write_arb_csv(run, tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == ",".join(ARB_HEADER) == "t,H,gain,theoretical"
    assert len(lines) == chain_path.times.size + 1


@pytest.fixture(scope="module")
def ensembles():
    return {r: arbitrage_ensemble(ARB.with_(r=r), 10.0, 10.0, 150, seed=11, chain_nodes=1601) for r in (-0.05, 0.05)}


def test_ensemble_gain_matches_local_time_identity(ensembles):
    s = ensembles[-0.05]
    assert np.all(s.within_tolerance)
    assert s.fraction_positive_touched >= 0.95
    assert s.mean_relative_gap <= 0.15


def test_gain_law_depends_on_absolute_rate(ensembles):
    a, b = ensembles[-0.05], ensembles[0.05]
    # same seeds give the same paths; the theoretical curves agree exactly
    assert np.array_equal(a.terminal_theoretical, b.terminal_theoretical)
    ga, gb = a.terminal_gain, b.terminal_gain
    se = math.sqrt(ga.var(ddof=1) / ga.size + gb.var(ddof=1) / gb.size)
    assert abs(ga.mean() - gb.mean()) <= 3 * se + 0.05 * ga.mean()
    assert b.mean_relative_gap <= 0.15


def test_no_gain_without_stickiness():
    s = arbitrage_ensemble(ARB.with_(rho=0.0), 10.0, 10.0, 20, seed=12, chain_nodes=801)
    assert np.all(s.terminal_gain == 0)
    assert np.all(s.terminal_theoretical == 0)
    assert not s.touched.any()
