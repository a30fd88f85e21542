from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from stickybs.model import ModelError, ModelParams
from stickybs.sim import (
    SimConfig,
    build_chain,
    chain_grid,
    estimate_local_time,
    gbm_ensemble,
    output_grid,
    read_path_csv,
    sample_base_local_time,
    simulate_ensemble,
    simulate_gbm_exact,
    simulate_stmca,
    stmca_ensemble,
    time_change_ensemble,
    time_change_of,
    time_change_sticky,
    write_ensemble_csv,
    write_path_csv,
)

REF = ModelParams(mu=0.0, sigma=0.25, rho=1.0, zeta=10.0, r=0.0)
GBM = REF.with_(rho=0.0)


# --------------------------------------------------------------------------- exact GBM


def test_gbm_vanishing_volatility_is_constant():
    p = GBM.with_(sigma=1e-12)
    path = simulate_gbm_exact(p, 10.0, output_grid(5.0, 50), seed=1)
    assert np.allclose(path.values, 10.0, rtol=1e-6)
    assert np.all(path.occupation_zeta == 0)


def test_gbm_is_a_martingale():
    ens = gbm_ensemble(GBM, 10.0, np.array([0.0, 10.0]), 100_000, seed=3)
    st = ens.terminal
    se = st.std(ddof=1) / math.sqrt(st.size)
    assert abs(st.mean() - 10.0) <= 3 * se


def test_gbm_log_returns_are_normal():
    ens = gbm_ensemble(GBM, 10.0, np.array([0.0, 1.0]), 100_000, seed=4)
    lr = np.log(ens.terminal / 10.0)
    n = lr.size
    # asymptotic standard errors of sample skewness and excess kurtosis
    assert abs(stats.skew(lr)) <= 4 * math.sqrt(6 / n)
    assert abs(stats.kurtosis(lr)) <= 4 * math.sqrt(24 / n)
    assert lr.mean() == pytest.approx(-0.5 * 0.25**2, abs=4 * 0.25 / math.sqrt(n))


def test_gbm_rejects_sticky_parameters():
    with pytest.raises(ModelError, match="use sticky scheme"):
        simulate_gbm_exact(REF, 10.0, output_grid(1.0, 10), seed=0)


# --------------------------------------------------------------------------- local time


def test_local_time_zero_when_level_not_visited():
    v = 10.0 + np.abs(np.sin(np.linspace(0, 20, 500))) + 0.5
    assert np.all(estimate_local_time(v, 10.0) == 0)


def _brownian(n_paths, n_steps, T, seed):
    rng = np.random.default_rng(seed)
    w = np.zeros((n_paths, n_steps + 1))
    np.cumsum(rng.standard_normal((n_paths, n_steps)) * math.sqrt(T / n_steps), axis=1, out=w[:, 1:])
    return w


def test_brownian_local_time_mean():
    w = _brownian(100_000, 400, 1.0, seed=5)
    lt = estimate_local_time(w, 0.0)[:, -1]
    assert lt.mean() == pytest.approx(math.sqrt(2 / math.pi), rel=0.05)


def test_local_time_stable_under_refinement():
    w = _brownian(20_000, 800, 1.0, seed=6)
    fine = estimate_local_time(w, 0.0)[:, -1]
    coarse = estimate_local_time(w[:, ::2], 0.0)[:, -1]
    se = math.sqrt(fine.var(ddof=1) / fine.size + coarse.var(ddof=1) / coarse.size)
    assert abs(fine.mean() - coarse.mean()) <= 3 * se


def test_local_time_nondecreasing_from_zero():
    w = _brownian(50, 300, 1.0, seed=7)
    lt = estimate_local_time(w, 0.1)
    assert np.all(lt[:, 0] == 0)
    assert np.all(np.diff(lt, axis=1) >= 0)


def test_bridge_local_time_has_brownian_mean():
    # log-price local time of a driftless bridge, summed over steps, matches sqrt(2T/pi)
    rng = np.random.default_rng(8)
    n, steps, T = 40_000, 50, 1.0
    log_z = np.zeros((n, steps + 1))
    np.cumsum(rng.standard_normal((n, steps)) * math.sqrt(T / steps), axis=1, out=log_z[:, 1:])
    inc = sample_base_local_time(log_z, 1.0, 1.0, T / steps, 1.0 - rng.random((n, steps)))
    assert inc.sum(axis=1).mean() == pytest.approx(math.sqrt(2 * T / math.pi), rel=0.02)


# --------------------------------------------------------------------------- time change


def test_time_change_without_stickiness_returns_base_path():
    p = GBM
    path = time_change_sticky(p, 10.0, 2.0, 400, seed=11, n_out=400)
    z, _, tc = time_change_of(p, 10.0, 2.0, 400, seed=11)
    assert np.allclose(path.values, z, rtol=1e-12)
    assert np.array_equal(tc.A_values, tc.base_times)
    assert np.all(path.occupation_zeta == 0)


def test_time_change_invariants():
    z, lt, tc = time_change_of(REF, 10.0, 10.0, 4000, seed=12)
    A, bt = tc.A_values, tc.base_times
    assert np.all(np.diff(A) >= 0)
    assert np.all(A >= bt)
    assert np.any(A > bt)
    inc = np.flatnonzero(np.diff(lt) == 0)  # base steps with no local time: A increases strictly
    t = bt[inc[:200] + 1]
    assert np.allclose(tc.gamma(A[inc[:200] + 1]), t, atol=1e-9)


def test_time_change_occupation_matches_local_time():
    ens = simulate_ensemble(REF, 10.0, 10.0, 1000, seed=13, scheme="time_change")
    ratio = ens.occupation_zeta[:, -1].mean() / ens.local_time_zeta[:, -1].mean()
    assert ratio == pytest.approx(REF.rho, rel=0.1)


def test_time_change_sticks_on_almost_every_path():
    ens = simulate_ensemble(REF, 10.0, 10.0, 1000, seed=14, scheme="time_change")
    frac = np.mean(ens.values == REF.zeta, axis=1)
    assert np.mean(frac > 0) >= 0.99


def test_time_change_path_invariants():
    ens = time_change_ensemble(REF, 10.0, 5.0, 2000, 20, seed=15, n_out=250)
    assert np.all(np.diff(ens.times) > 0) and ens.times[0] == 0
    assert np.all(ens.values > 0)
    assert np.all(ens.values[:, 0] == 10.0)
    for arr in (ens.local_time_zeta, ens.occupation_zeta):
        assert np.all(arr[:, 0] == 0)
        assert np.all(np.diff(arr, axis=1) >= -1e-12)


@pytest.mark.parametrize("horizon, n_base", [(0.0, 100), (-1.0, 100), (1.0, 1)])
def test_time_change_argument_checks(horizon, n_base):
    with pytest.raises(ModelError):
        time_change_sticky(REF, 10.0, horizon, n_base, seed=0)


# --------------------------------------------------------------------------- chain


def test_chain_symmetric_on_uniform_grid():
    grid = np.linspace(5.0, 15.0, 41)
    ch = build_chain(REF, grid)
    assert np.allclose(ch.up_prob[1:-1], 0.5)
    assert np.all(ch.hold_time > 0)


def test_chain_atom_hold_uniform_grid():
    grid = np.linspace(5.0, 15.0, 41)
    h = grid[1] - grid[0]
    sticky, plain = build_chain(REF, grid), build_chain(GBM, grid)
    jz = sticky.zeta_index
    # exit time of (zeta - h, zeta + h) grows by rho * E[L_exit] and E[L_exit] = E|S_exit - zeta| = h
    assert sticky.atom_hold == pytest.approx(REF.rho * h, rel=1e-12)
    assert sticky.hold_time[jz] - plain.hold_time[jz] == pytest.approx(REF.rho * h, rel=1e-12)
    assert np.allclose(np.delete(sticky.hold_time, jz), np.delete(plain.hold_time, jz))
    assert plain.atom_hold == 0.0


def test_chain_plain_hold_matches_exit_time():
    # GBM with mu = 0 exits (a, b) from x in expected time 2 int G(x,y) dy / (sigma y)^2
    grid = np.array([8.0, 10.0, 12.5])
    ch = build_chain(GBM, grid)
    a, x, b = grid
    from scipy.integrate import quad

    def green(y):
        return (min(x, y) - a) * (b - max(x, y)) / (b - a)

    exact = 2 * quad(lambda y: green(y) / (GBM.sigma * y) ** 2, a, b, points=[x])[0]
    assert ch.hold_time[1] == pytest.approx(exact, rel=1e-10)


def test_chain_requires_zeta_node():
    with pytest.raises(ModelError, match="zeta"):
        build_chain(REF, np.linspace(5.1, 15.3, 40))


def test_chain_zero_horizon():
    ch = build_chain(REF)
    p = simulate_stmca(ch, 10.0, 0.0, seed=1)
    assert p.values.tolist() == [10.0]
    assert p.times.tolist() == [0.0]


def test_chain_matches_gbm_without_stickiness():
    ch = build_chain(GBM, chain_grid(GBM.zeta, 801))
    a = stmca_ensemble(ch, 10.0, 10.0, 100_000, seed=21, n_out=1).terminal
    b = gbm_ensemble(GBM, 10.0, np.array([0.0, 10.0]), 100_000, seed=22).terminal
    se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    assert abs(a.mean() - b.mean()) <= 3 * se


def test_chain_occupation_matches_local_time():
    ens = simulate_ensemble(REF, 10.0, 10.0, 2000, seed=23, scheme="stmca")
    ratio = ens.occupation_zeta[:, -1].mean() / ens.local_time_zeta[:, -1].mean()
    assert ratio == pytest.approx(REF.rho, rel=0.1)


def test_sticky_schemes_reduce_to_gbm_in_law():
    b = gbm_ensemble(GBM, 10.0, np.array([0.0, 10.0]), 10_000, seed=31).terminal
    for scheme in ("time_change", "stmca"):
        a = simulate_ensemble(GBM, 10.0, 10.0, 10_000, seed=32, scheme=scheme, n_out=10).terminal
        assert stats.ks_2samp(a, b).pvalue > 0.01


# --------------------------------------------------------------------------- determinism and export


@pytest.mark.parametrize("scheme", ["time_change", "stmca", "gbm_exact"])
def test_ensembles_are_deterministic(scheme):
    p = GBM if scheme == "gbm_exact" else REF
    a = simulate_ensemble(p, 10.0, 2.0, 8, seed=41, scheme=scheme, n_out=50)
    b = simulate_ensemble(p, 10.0, 2.0, 8, seed=41, scheme=scheme, n_out=50)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.occupation_zeta, b.occupation_zeta)


def test_paths_do_not_depend_on_ensemble_size():
    a = simulate_ensemble(REF, 10.0, 2.0, 3, seed=42, n_out=50)
    b = simulate_ensemble(REF, 10.0, 2.0, 7, seed=42, n_out=50)
    assert np.array_equal(a.values, b.values[:3])


def test_csv_round_trip(tmp_path):
    path = simulate_ensemble(REF, 10.0, 1.0, 1, seed=43, n_out=20).path(0)
    f = write_path_csv(path, tmp_path / "p.csv")
    assert f.read_text().splitlines()[0] == "t,s,local_time,occupation"
    back = read_path_csv(f)
    assert np.array_equal(back.values, path.values)
    assert np.array_equal(back.occupation_zeta, path.occupation_zeta)


def test_ensemble_csv_has_path_id(tmp_path):
    ens = simulate_ensemble(REF, 10.0, 1.0, 3, seed=44, n_out=5)
    lines = write_ensemble_csv(ens, tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "path_id,t,s,local_time,occupation"
    assert len(lines) == 1 + 3 * 6
    assert {ln.split(",")[0] for ln in lines[1:]} == {"0", "1", "2"}


def test_unknown_scheme():
    with pytest.raises(ModelError):
        simulate_ensemble(REF, 10.0, 1.0, 1, seed=0, scheme="euler", config=SimConfig())
