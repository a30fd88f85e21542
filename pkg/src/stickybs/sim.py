"""Sample paths of sticky geometric Brownian motion.

Two independent constructions are provided:

* ``time_change``: a plain GBM ``Z`` is slowed down by ``A(t) = t + rho * L_t^zeta(Z)``
  and the sticky path is ``S_t = Z_{gamma(t)}`` with ``gamma`` the right-inverse of ``A``.
* ``stmca``: a random walk on a price grid whose transition probabilities and holding
  times come from the scale function and speed measure (including the atom at zeta).

Every path draws from its own generator seeded by ``(master_seed, path_index)``, so an
ensemble is reproducible and does not depend on the order in which paths are produced.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numba
import numpy as np

from stickybs.model import ModelError, ModelParams, scale_speed, validate

SCHEMES = ("time_change", "stmca", "gbm_exact")


@dataclass(frozen=True)
class PathSample:
    times: np.ndarray
    values: np.ndarray
    local_time_zeta: np.ndarray
    occupation_zeta: np.ndarray
    seed: int
    scheme: str
    path_id: int = 0

    def __len__(self) -> int:
        return self.times.size

    @property
    def terminal(self) -> float:
        return float(self.values[-1])

    def rows(self) -> Iterable[tuple[float, float, float, float]]:
        return zip(self.times, self.values, self.local_time_zeta, self.occupation_zeta)


@dataclass(frozen=True)
class PathEnsemble:
    """Paths on a shared output grid; arrays are ``(n_paths, n_times)``."""

    times: np.ndarray
    values: np.ndarray
    local_time_zeta: np.ndarray
    occupation_zeta: np.ndarray
    seed: int
    scheme: str
    path_ids: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        if self.path_ids is None:
            object.__setattr__(self, "path_ids", np.arange(self.values.shape[0]))

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]

    def path(self, i: int) -> PathSample:
        return PathSample(
            times=self.times,
            values=self.values[i],
            local_time_zeta=self.local_time_zeta[i],
            occupation_zeta=self.occupation_zeta[i],
            seed=self.seed,
            scheme=self.scheme,
            path_id=int(self.path_ids[i]),
        )

    def __iter__(self):
        return (self.path(i) for i in range(self.n_paths))


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(path_index)]))


def path_seed32(seed: int, path_index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(path_index)]).generate_state(1, np.uint32)[0])


def estimate_local_time(values: np.ndarray, zeta: float) -> np.ndarray:
    """Running discrete Tanaka estimate of the local time at ``zeta`` along the last axis.

    Each increment ``|S_{i+1} - zeta| - sgn(S_i - zeta)(S_{i+1} - zeta)`` is nonnegative;
    round-off below zero is clamped.
    """
    v = np.asarray(values, dtype=float) - zeta
    inc = np.abs(v[..., 1:]) - np.sign(v[..., :-1]) * v[..., 1:]
    inc = np.maximum(inc, 0.0)
    out = np.zeros_like(v)
    np.cumsum(inc, axis=-1, out=out[..., 1:])
    return out


def _check_times(times: np.ndarray) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size < 1:
        raise ModelError("times must be a nonempty 1-d array")
    if np.any(np.diff(t) <= 0):
        raise ModelError("times must be strictly increasing")
    return t


def output_grid(horizon: float, n_out: int) -> np.ndarray:
    return np.linspace(0.0, horizon, n_out + 1)


# --------------------------------------------------------------------------- #
# exact GBM (rho = 0)
# --------------------------------------------------------------------------- #


def _gbm_values(params: ModelParams, s0: float, times: np.ndarray, normals: np.ndarray) -> np.ndarray:
    dt = np.diff(times)
    drift = (params.mu - 0.5 * params.sigma**2) * dt
    logs = np.cumsum(drift + params.sigma * np.sqrt(dt) * normals, axis=-1)
    out = np.empty(normals.shape[:-1] + (times.size,))
    out[..., 0] = s0
    out[..., 1:] = s0 * np.exp(logs)
    return out


def simulate_gbm_exact(params: ModelParams, s0: float, times, seed: int, path_index: int = 0) -> PathSample:
    validate(params)
    if params.rho != 0:
        raise ModelError("use sticky scheme: gbm_exact requires rho = 0")
    t = _check_times(times)
    z = path_rng(seed, path_index).standard_normal(t.size - 1)
    values = _gbm_values(params, s0, t, z)
    return PathSample(
        times=t,
        values=values,
        local_time_zeta=estimate_local_time(values, params.zeta),
        occupation_zeta=np.zeros_like(t),
        seed=seed,
        scheme="gbm_exact",
        path_id=path_index,
    )


def gbm_ensemble(params: ModelParams, s0: float, times, n_paths: int, seed: int) -> PathEnsemble:
    validate(params)
    if params.rho != 0:
        raise ModelError("use sticky scheme: gbm_exact requires rho = 0")
    t = _check_times(times)
    z = np.stack([path_rng(seed, i).standard_normal(t.size - 1) for i in range(n_paths)])
    values = _gbm_values(params, s0, t, z)
    return PathEnsemble(
        times=t,
        values=values,
        local_time_zeta=estimate_local_time(values, params.zeta),
        occupation_zeta=np.zeros_like(values),
        seed=seed,
        scheme="gbm_exact",
    )


# --------------------------------------------------------------------------- #
# time change of a GBM
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class TimeChange:
    """``A(t) = t + rho L_t(Z)`` on the base grid, with its right-inverse ``gamma``."""

    base_times: np.ndarray
    A_values: np.ndarray

    def gamma(self, t) -> np.ndarray:
        """Right-inverse located by the leftmost index with ``A >= t``. Within a base step the
        inverse is flat over the sticky stretch (placed first) and then has unit slope."""
        ta = np.atleast_1d(np.asarray(t, dtype=float))
        A, bt = self.A_values, self.base_times
        tol = 1e-12 * max(1.0, float(A[-1]))
        k = np.clip(np.searchsorted(A, ta - tol, side="left"), 0, A.size - 1)
        km1 = np.maximum(k - 1, 0)
        step = bt[k] - bt[km1]
        stick = A[k] - A[km1] - step
        g = np.where(k == 0, bt[0], bt[km1] + np.clip(ta - A[km1] - stick, 0.0, step))
        return g if np.ndim(t) else float(g[0])


def sample_base_local_time(
    log_z: np.ndarray, zeta: float, sigma: float, dt: float, uniforms: np.ndarray
) -> np.ndarray:
    """Per-step local time at ``zeta`` of ``Z = exp(log_z)``, drawn exactly from the law of the
    Brownian bridge between consecutive log-prices.

    Given endpoints at distances ``d0, d1`` from the level and increment ``D``, the bridge local
    time ``l`` of the log-price satisfies ``P(l > y) = exp(-((d0 + d1 + y)^2 - D^2) / (2 sigma^2 dt))``.
    The price local time is ``zeta`` times the log-price local time.
    """
    u = np.log(zeta)
    d0 = np.abs(log_z[..., :-1] - u)
    d1 = np.abs(log_z[..., 1:] - u)
    D = log_z[..., 1:] - log_z[..., :-1]
    ell = np.sqrt(D**2 - 2.0 * sigma**2 * dt * np.log(uniforms)) - (d0 + d1)
    return zeta * np.maximum(ell, 0.0)


def _time_change_block(
    params: ModelParams,
    s0: float,
    horizon: float,
    n_base: int,
    tau: np.ndarray,
    rngs: list[np.random.Generator],
    local_time: str,
) -> tuple[np.ndarray, np.ndarray]:
    dt = horizon / n_base
    sig = params.sigma
    normals = np.stack([g.standard_normal(n_base) for g in rngs])
    uniforms = np.stack([g.random(n_base) for g in rngs]) if local_time == "bridge" else None
    log_z = np.empty((len(rngs), n_base + 1))
    log_z[:, 0] = np.log(s0)
    np.cumsum((params.mu - 0.5 * sig**2) * dt + sig * np.sqrt(dt) * normals, axis=1, out=log_z[:, 1:])
    log_z[:, 1:] += log_z[:, :1]
    z = np.exp(log_z)
    z[:, 0] = s0
    if params.rho == 0:
        inc = np.zeros((len(rngs), n_base))
    elif local_time == "bridge":
        # uniforms in (0, 1]
        inc = sample_base_local_time(log_z, params.zeta, sig, dt, 1.0 - uniforms)
    else:
        inc = np.diff(estimate_local_time(z, params.zeta), axis=1)
    base_t = np.arange(n_base + 1) * dt
    C = np.empty_like(z)  # cumulative sticky time rho * L
    C[:, 0] = 0.0
    np.cumsum(params.rho * inc, axis=1, out=C[:, 1:])
    A = C + base_t
    values = np.empty((len(rngs), tau.size))
    occ = np.empty_like(values)
    for p in range(len(rngs)):
        Ap = A[p]
        tol = 1e-12 * max(1.0, Ap[-1])
        k = np.clip(np.searchsorted(Ap, tau - tol, side="left"), 0, n_base)
        km1 = np.maximum(k - 1, 0)
        # within base step k the sticky stretch of length rho * l_k comes first, then the
        # diffusive part ending at Z_k
        into = tau - Ap[km1]
        stick = C[p, k] - C[p, km1]
        sticky = (k > 0) & (stick > tol) & (into <= stick + tol)
        values[p] = np.where(sticky, params.zeta, z[p, k])
        occ[p] = np.where(k == 0, 0.0, C[p, km1] + np.clip(into, 0.0, stick))
    return values, occ


def _out_grid(horizon: float, n_base: int, n_out: int | None) -> np.ndarray:
    n_out = n_base if n_out is None else int(n_out)
    if n_out < 1:
        raise ModelError("n_out must be >= 1")
    if n_base % n_out == 0:
        return (np.arange(n_out + 1) * (n_base // n_out)) * (horizon / n_base)
    return output_grid(horizon, n_out)


def time_change_ensemble(
    params: ModelParams,
    s0: float,
    horizon: float,
    n_base_steps: int,
    n_paths: int,
    seed: int,
    n_out: int | None = None,
    local_time: str = "bridge",
    chunk: int = 1024,
    first_path: int = 0,
) -> PathEnsemble:
    """Ensemble of time-changed GBM paths on a uniform output grid of ``n_out`` steps.

    ``local_time`` selects how the base local time is built: ``"bridge"`` draws it exactly
    from the bridge law between grid points, ``"tanaka"`` uses the discrete Tanaka sum.
    """
    validate(params)
    if horizon <= 0:
        raise ModelError("horizon must be positive")
    if n_base_steps < 2:
        raise ModelError("n_base_steps must be >= 2")
    if local_time not in ("bridge", "tanaka"):
        raise ModelError(f"unknown local time method {local_time!r}")
    tau = _out_grid(horizon, n_base_steps, n_out)
    values = np.empty((n_paths, tau.size))
    occ = np.empty_like(values)
    for start in range(0, n_paths, chunk):
        stop = min(n_paths, start + chunk)
        rngs = [path_rng(seed, first_path + i) for i in range(start, stop)]
        values[start:stop], occ[start:stop] = _time_change_block(
            params, s0, horizon, n_base_steps, tau, rngs, local_time
        )
    return PathEnsemble(
        times=tau,
        values=values,
        local_time_zeta=estimate_local_time(values, params.zeta),
        occupation_zeta=occ,
        seed=seed,
        scheme="time_change",
        path_ids=np.arange(first_path, first_path + n_paths),
    )


def time_change_sticky(
    params: ModelParams,
    s0: float,
    horizon: float,
    n_base_steps: int,
    seed: int,
    n_out: int | None = None,
    path_index: int = 0,
    local_time: str = "bridge",
) -> PathSample:
    ens = time_change_ensemble(
        params, s0, horizon, n_base_steps, 1, seed, n_out=n_out, local_time=local_time, first_path=path_index
    )
    return ens.path(0)


def time_change_of(params: ModelParams, s0: float, horizon: float, n_base_steps: int, seed: int,
                   path_index: int = 0) -> tuple[np.ndarray, np.ndarray, TimeChange]:
    """Base path ``Z``, its local time and the time change ``A`` for one path (bridge method)."""
    validate(params)
    g = path_rng(seed, path_index)
    dt = horizon / n_base_steps
    normals = g.standard_normal(n_base_steps)
    uniforms = g.random(n_base_steps)
    sig = params.sigma
    log_z = np.log(s0) + np.r_[0.0, np.cumsum((params.mu - 0.5 * sig**2) * dt + sig * np.sqrt(dt) * normals)]
    inc = sample_base_local_time(log_z, params.zeta, sig, dt, 1.0 - uniforms)
    lt = np.r_[0.0, np.cumsum(inc)]
    base_t = np.arange(n_base_steps + 1) * dt
    z = np.exp(log_z)
    z[0] = s0
    return z, lt, TimeChange(base_times=base_t, A_values=base_t + params.rho * lt)


# --------------------------------------------------------------------------- #
# space-time Markov chain approximation
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class ChainSpec:
    """Random walk on ``grid``: step right with ``up_prob``, wait ``hold_time`` at each node.

    ``atom_hold`` is the part of the holding time at the zeta node due to the speed atom.
    End nodes reflect.
    """

    grid: np.ndarray
    up_prob: np.ndarray
    hold_time: np.ndarray
    zeta_index: int
    atom_hold: float
    params: ModelParams

    @property
    def atom_share(self) -> float:
        return self.atom_hold / self.hold_time[self.zeta_index]

    def snap(self, s0: float) -> int:
        return int(np.argmin(np.abs(self.grid - s0)))


def chain_grid(zeta: float, n_nodes: int = 801, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Log-spaced nodes on ``[zeta/16, 16 zeta]`` by default, with ``zeta`` placed exactly."""
    lo = zeta / 16.0 if lo is None else lo
    hi = 16.0 * zeta if hi is None else hi
    x = np.geomspace(lo, hi, n_nodes)
    x[int(np.argmin(np.abs(x - zeta)))] = zeta
    return x


_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def _green_speed_integral(ss, a: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``2 * int_a^b G(x, y) m_ac(dy)`` with the natural-scale Green function of ``(a, b)``."""
    s = ss.scale
    sa, sx, sb = s(a), s(x), s(b)
    total = np.zeros_like(x)
    for lo, hi, left in ((a, x, True), (x, b, False)):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        y = mid[:, None] + half[:, None] * _GL_X[None, :]
        sy = s(y)
        if left:
            g = (sy - sa[:, None]) * (sb - sx)[:, None]
        else:
            g = (sx - sa)[:, None] * (sb[:, None] - sy)
        g /= (sb - sa)[:, None]
        total += half * np.sum(_GL_W[None, :] * g * ss.speed_density(y), axis=1)
    return 2.0 * total


def build_chain(params: ModelParams, grid=None) -> ChainSpec:
    """Transition data on ``grid`` from the scale function and speed measure.

    At an interior node ``x`` with neighbours ``a < x < b`` the walk moves right with
    probability ``(s(x) - s(a)) / (s(b) - s(a))`` and waits the expected exit time of
    ``(a, b)``, ``2 * int G(x, y) m(dy)``. At zeta the atom adds ``2 * atom_mass * G(zeta, zeta)``.
    """
    validate(params)
    x = chain_grid(params.zeta) if grid is None else np.asarray(grid, dtype=float)
    if x.ndim != 1 or x.size < 3 or np.any(np.diff(x) <= 0) or x[0] <= 0:
        raise ModelError("chain grid must be positive and strictly increasing with >= 3 nodes")
    hits = np.flatnonzero(np.abs(x - params.zeta) <= 1e-12 * params.zeta)
    if hits.size != 1 or hits[0] in (0, x.size - 1):
        raise ModelError("zeta must be an interior node of the chain grid")
    jz = int(hits[0])
    ss = scale_speed(params)
    a, xi, b = x[:-2], x[1:-1], x[2:]
    sa, sx, sb = ss.scale(a), ss.scale(xi), ss.scale(b)
    up = np.empty(x.size)
    up[1:-1] = (sx - sa) / (sb - sa)
    up[0], up[-1] = 1.0, 0.0
    hold = np.empty(x.size)
    hold[1:-1] = _green_speed_integral(ss, a, xi, b)
    hold[0], hold[-1] = hold[1], hold[-2]
    s = ss.scale
    g_zz = (s(x[jz]) - s(x[jz - 1])) * (s(x[jz + 1]) - s(x[jz])) / (s(x[jz + 1]) - s(x[jz - 1]))
    atom_hold = 2.0 * ss.atom_mass * g_zz
    hold[jz] += atom_hold
    return ChainSpec(grid=x, up_prob=up, hold_time=hold, zeta_index=jz, atom_hold=float(atom_hold), params=params)


@numba.njit(cache=True)
def _walk(x, up, hold, share, jz, i0, tau, seeds, values, occ):  # pragma: no cover - compiled
    n_tau = tau.size
    for p in range(seeds.size):
        np.random.seed(seeds[p])
        i = i0
        c = 0.0
        o = 0.0
        j = 0
        while j < n_tau:
            c_next = c + hold[i]
            while j < n_tau and tau[j] < c_next:
                values[p, j] = x[i]
                if i == jz:
                    occ[p, j] = o + share * (tau[j] - c)
                else:
                    occ[p, j] = o
                j += 1
            if i == jz:
                o += share * hold[i]
            c = c_next
            if np.random.random() < up[i]:
                i += 1
            else:
                i -= 1


def stmca_ensemble(
    chain: ChainSpec,
    s0: float,
    horizon: float,
    n_paths: int,
    seed: int,
    n_out: int = 1000,
    first_path: int = 0,
) -> PathEnsemble:
    """Ensemble of chain paths, sampled piecewise-constantly on a uniform output grid."""
    if horizon < 0:
        raise ModelError("horizon must be nonnegative")
    i0 = chain.snap(s0)
    tau = np.zeros(1) if horizon == 0 else output_grid(horizon, n_out)
    seeds = np.array([path_seed32(seed, first_path + i) for i in range(n_paths)], dtype=np.int64)
    values = np.empty((n_paths, tau.size))
    occ = np.empty_like(values)
    _walk(chain.grid, chain.up_prob, chain.hold_time, chain.atom_share, chain.zeta_index, i0, tau, seeds, values, occ)
    return PathEnsemble(
        times=tau,
        values=values,
        local_time_zeta=estimate_local_time(values, chain.params.zeta),
        occupation_zeta=occ,
        seed=seed,
        scheme="stmca",
        path_ids=np.arange(first_path, first_path + n_paths),
    )


def simulate_stmca(chain: ChainSpec, s0: float, horizon: float, seed: int, n_out: int = 1000,
                   path_index: int = 0) -> PathSample:
    return stmca_ensemble(chain, s0, horizon, 1, seed, n_out=n_out, first_path=path_index).path(0)


# --------------------------------------------------------------------------- #
# dispatch and export
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class SimConfig:
    """Resolution knobs shared by the ensemble dispatcher."""

    n_base_steps: int = 4000
    base_per_output: int = 16
    chain_nodes: int = 801
    local_time: str = "bridge"


def simulate_ensemble(
    params: ModelParams,
    s0: float,
    horizon: float,
    n_paths: int,
    seed: int,
    scheme: str = "time_change",
    n_out: int = 1000,
    config: SimConfig = SimConfig(),
) -> PathEnsemble:
    if scheme not in SCHEMES:
        raise ModelError(f"unknown scheme {scheme!r}")
    if scheme == "gbm_exact":
        return gbm_ensemble(params, s0, output_grid(horizon, n_out), n_paths, seed)
    if scheme == "time_change":
        # keep many base steps per output step so the output path resolves the local time
        n_base = max(config.n_base_steps, config.base_per_output * n_out)
        n_base = int(np.ceil(n_base / n_out) * n_out)
        return time_change_ensemble(params, s0, horizon, n_base, n_paths, seed, n_out=n_out,
                                    local_time=config.local_time)
    chain = build_chain(params, chain_grid(params.zeta, config.chain_nodes))
    return stmca_ensemble(chain, s0, horizon, n_paths, seed, n_out=n_out)


CSV_HEADER = ("t", "s", "local_time", "occupation")


def write_path_csv(path: PathSample, file: str | Path) -> Path:
    file = Path(file)
    with file.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for row in path.rows():
            w.writerow([repr(float(v)) for v in row])
    return file


def write_ensemble_csv(ens: PathEnsemble, file: str | Path) -> Path:
    file = Path(file)
    with file.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("path_id",) + CSV_HEADER)
        for p in ens:
            for row in p.rows():
                w.writerow([p.path_id] + [repr(float(v)) for v in row])
    return file


def read_path_csv(file: str | Path, seed: int = 0, scheme: str = "time_change") -> PathSample:
    data = np.loadtxt(file, delimiter=",", skiprows=1, ndmin=2)
    return PathSample(
        times=data[:, 0], values=data[:, 1], local_time_zeta=data[:, 2], occupation_zeta=data[:, 3],
        seed=seed, scheme=scheme,
    )
