"""Command-line experiment runner.

Every command reads one JSON config (optional), applies flag overrides, and writes CSV/JSON
files into the output directory. Outputs depend only on the config and the seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from stickybs.arb import arbitrage_ensemble, arbitrage_gains, write_arb_csv
from stickybs.hedge import (
    GRANULARITY_COLUMNS,
    MISMATCH_COLUMNS,
    granularity_rows,
    granularity_sweep,
    make_model,
    mismatch_rows,
    run_experiment,
    simulate_experiment_paths,
    write_table,
)
from stickybs.model import ModelError, ModelParams, Payoff
from stickybs.pde import GridSpec, price_delta_curves, price_grid, solve_pricing
from stickybs.sim import SCHEMES, SimConfig, build_chain, chain_grid, simulate_stmca, time_change_sticky
from stickybs.sim import simulate_gbm_exact, write_path_csv
from stickybs.suites import SuiteSettings, run_suites
from stickybs.svg import line_plot

log = logging.getLogger("stickybs")


@dataclass(frozen=True)
class GridConfig:
    n_nodes: int = 801
    t_steps: int = 2000
    theta: float = 0.5
    lo: float | None = None
    hi: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelParams = field(default_factory=ModelParams)
    s0: float = 10.0
    strike: float = 10.0
    maturity: float = 10.0
    grid: GridConfig = field(default_factory=GridConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    scheme: str = "time_change"
    n_out: int = 1000
    rho_list: tuple[float, ...] = (0.0, 1.0, 2.0)
    rho_scale: float = 1.0
    N_list: tuple[int, ...] = (10, 100, 250, 1000, 2000)
    N: int = 2000
    n_paths: int = 1000
    seed: int = 2024
    out: str = "out"
    smooth_n: int = 4
    history_window: float | None = None
    history_rate: float = 200.0
    premium_override: float | None = None
    dispersion: str = "std"
    arb_r: float = -0.05
    arb_chain_nodes: int = 3201
    curve_range: tuple[float, float] = (2.5, 25.0)
    svg: bool = False
    surface: bool = False
    mc_sigma: float | None = None

    def pde_grid(self, zeta: float) -> GridSpec:
        g = self.grid
        return GridSpec(price_grid(zeta, g.n_nodes, g.lo, g.hi), t_steps=g.t_steps, theta=g.theta)

    def model_rhos(self) -> list[tuple[float, float]]:
        """``(nominal, model)`` stickiness pairs; the model value is ``rho_scale * nominal``."""
        return [(float(r), float(r) * self.rho_scale) for r in self.rho_list]


def _sub(cls, data: dict, where: str):
    names = {f.name for f in fields(cls)}
    bad = sorted(set(data) - names)
    if bad:
        raise ModelError(f"unknown config key(s) in {where}: {', '.join(bad)}")
    return cls(**data)


def config_from_dict(data: dict) -> ExperimentConfig:
    names = {f.name for f in fields(ExperimentConfig)}
    bad = sorted(set(data) - names)
    if bad:
        raise ModelError(f"unknown config key(s): {', '.join(bad)}")
    kw = dict(data)
    if "model" in kw:
        kw["model"] = ModelParams.from_dict(kw["model"])
    if "grid" in kw:
        kw["grid"] = _sub(GridConfig, kw["grid"], "grid")
    if "sim" in kw:
        kw["sim"] = _sub(SimConfig, kw["sim"], "sim")
    for key in ("rho_list", "N_list", "curve_range"):
        if key in kw:
            kw[key] = tuple(kw[key])
    cfg = ExperimentConfig(**kw)
    if cfg.scheme not in SCHEMES:
        raise ModelError(f"unknown scheme {cfg.scheme!r}")
    if cfg.rho_scale <= 0:
        raise ModelError("rho_scale must be positive")
    return cfg


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return config_from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------- #
# commands
# --------------------------------------------------------------------------- #


def _out(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(obj, file: Path) -> Path:
    file.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return file


def _fmt(v: float) -> str:
    return repr(float(v))


def cmd_simulate(cfg: ExperimentConfig) -> list[Path]:
    """One sticky path and one plain GBM path from the same seed."""
    out = _out(cfg)
    p = cfg.model
    T = cfg.maturity
    if cfg.scheme == "stmca":
        chain = build_chain(p, chain_grid(p.zeta, cfg.sim.chain_nodes))
        sticky = simulate_stmca(chain, cfg.s0, T, cfg.seed, n_out=cfg.n_out)
    elif p.rho == 0 or cfg.scheme == "gbm_exact":
        sticky = simulate_gbm_exact(p.with_(rho=0.0), cfg.s0, np.linspace(0, T, cfg.n_out + 1), cfg.seed)
    else:
        n_base = max(cfg.sim.n_base_steps, cfg.sim.base_per_output * cfg.n_out)
        n_base = -(-n_base // cfg.n_out) * cfg.n_out
        sticky = time_change_sticky(p, cfg.s0, T, n_base, cfg.seed, n_out=cfg.n_out, local_time=cfg.sim.local_time)
    plain = simulate_gbm_exact(p.with_(rho=0.0), cfg.s0, sticky.times, cfg.seed)
    files = [write_path_csv(sticky, out / "sticky_path.csv"), write_path_csv(plain, out / "gbm_path.csv")]
    if cfg.svg:
        svg = line_plot({"sticky": (sticky.times, sticky.values), "gbm": (plain.times, plain.values)},
                        "t", "S", hlines=[p.zeta])
        files.append(out / "paths.svg")
        files[-1].write_text(svg)
    log.info("terminal occupation at zeta %.4f", sticky.occupation_zeta[-1])
    return files


def cmd_price_curves(cfg: ExperimentConfig) -> list[Path]:
    """t = 0 price and delta curves for each stickiness in ``rho_list``."""
    out = _out(cfg)
    files = []
    pay = Payoff.call(cfg.strike)
    lo, hi = cfg.curve_range
    plots_p, plots_d = {}, {}
    for nominal, rho in cfg.model_rhos():
        q = cfg.model.with_(rho=rho, mu=0.0, r=0.0)
        surf = solve_pricing(q, pay, cfg.pde_grid(q.zeta), cfg.maturity)
        c = price_delta_curves(surf)
        keep = (c["x"] >= lo) & (c["x"] <= hi)
        f = out / f"curves_rho{nominal:g}.csv"
        with f.open("w") as fh:
            fh.write("x,price,delta_left,delta_right\n")
            for row in zip(c["x"][keep], c["price"][keep], c["delta_left"][keep], c["delta_right"][keep]):
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        files.append(f)
        plots_p[f"rho={nominal:g}"] = (c["x"][keep], c["price"][keep])
        plots_d[f"rho={nominal:g}"] = (c["x"][keep], c["delta_right"][keep])
        if cfg.surface:
            sf = out / f"surface_rho{nominal:g}.csv"
            with sf.open("w") as fh:
                fh.write("t,x,v,dv_left,dv_right\n")
                for row in surf.to_rows():
                    fh.write(",".join(_fmt(v) for v in row) + "\n")
            files.append(sf)
    if cfg.svg:
        for name, data, ylab in (("prices.svg", plots_p, "price"), ("deltas.svg", plots_d, "delta")):
            (out / name).write_text(line_plot(data, "x", ylab, vlines=[cfg.model.zeta]))
            files.append(out / name)
    return files


def _app(cfg: ExperimentConfig, q: ModelParams) -> float:
    pay = Payoff.call(cfg.strike)
    return float(solve_pricing(q, pay, cfg.pde_grid(q.zeta), cfg.maturity).price(0.0, cfg.s0))


def cmd_tables(cfg: ExperimentConfig, which: int) -> list[Path]:
    """Hedging tables: 1 = sticky model across N, 2 = model mismatch at N, 3 = smooth model across N."""
    out = _out(cfg)
    pay = Payoff.call(cfg.strike)
    T = cfg.maturity
    rows = []
    for nominal, rho in cfg.model_rhos():
        q = cfg.model.with_(rho=rho, mu=0.0, r=0.0)
        app = _app(cfg, q)
        log.info("table %d: rho=%g (model %g), app %.5f", which, nominal, rho, app)
        if which in (1, 3):
            n_steps = int(np.lcm.reduce(cfg.N_list))
            paths = simulate_experiment_paths(q, cfg.s0, T, cfg.n_paths, cfg.seed, n_steps=n_steps,
                                              scheme=cfg.scheme, config=cfg.sim)
            kind = "sticky" if which == 1 else "smooth_mollified"
            m = make_model(kind, q, pay, T, n=cfg.smooth_n, grid=cfg.pde_grid(q.zeta) if which == 1 else None)
            sw = granularity_sweep(q, m, pay, cfg.s0, T, cfg.N_list, cfg.n_paths, cfg.seed, paths=paths, app=app,
                                   premium_override=cfg.premium_override)
            for r in granularity_rows(sw.reports, cfg.dispersion):
                r["rho"] = nominal
                rows.append(r)
            log.info("  sigma_hat slope vs N: %.3f", sw.slope)
        elif which == 2:
            hw = cfg.history_window or T / 2
            paths = simulate_experiment_paths(q, cfg.s0, T, cfg.n_paths, cfg.seed, n_steps=cfg.N,
                                              scheme=cfg.scheme, history_window=hw,
                                              history_rate=cfg.history_rate, config=cfg.sim)
            reps = []
            for kind in ("bs_true_sigma", "bs_realized_sigma", "sticky"):
                m = make_model(kind, q, pay, T, grid=cfg.pde_grid(q.zeta), history_window=hw,
                               history_rate=cfg.history_rate)
                reps.append(run_experiment(q, m, pay, cfg.s0, T, cfg.N, cfg.n_paths, cfg.seed, paths=paths, app=app))
            for r in mismatch_rows(reps, cfg.dispersion):
                r["rho"] = nominal
                rows.append(r)
        else:
            raise ModelError("table must be 1, 2 or 3")
    if which == 2:
        rows.sort(key=lambda r: (r["model"], r["rho"]))
        return [write_table(rows, MISMATCH_COLUMNS, out / "table2.csv")]
    return [write_table(rows, GRANULARITY_COLUMNS, out / f"table{which}.csv")]


def cmd_arbitrage(cfg: ExperimentConfig) -> list[Path]:
    """Strategy on one chain path (CSV) and an ensemble summary (JSON)."""
    out = _out(cfg)
    p = cfg.model.with_(r=cfg.arb_r)
    chain = build_chain(p, chain_grid(p.zeta, cfg.arb_chain_nodes))
    n_out = int(np.ceil(cfg.maturity / (0.5 * chain.hold_time.min())))
    path = simulate_stmca(chain, cfg.s0, cfg.maturity, cfg.seed, n_out=n_out)
    run = arbitrage_gains(path, p)
    stride = max(1, n_out // 5000)
    thin = type(run)(
        path=type(path)(path.times[::stride], path.values[::stride], path.local_time_zeta[::stride],
                        path.occupation_zeta[::stride], path.seed, path.scheme),
        strategy_values=run.strategy_values[::stride],
        payoff_curve=run.payoff_curve[::stride],
        theoretical_curve=run.theoretical_curve[::stride],
    )
    files = [write_arb_csv(thin, out / "arbitrage_path.csv")]
    s = arbitrage_ensemble(p, cfg.s0, cfg.maturity, cfg.n_paths, cfg.seed, chain_nodes=cfg.arb_chain_nodes)
    summary = {
        "params": p.to_dict(),
        "n_paths": cfg.n_paths,
        "mean_gain": float(np.mean(s.terminal_gain)),
        "mean_theoretical": float(np.mean(s.terminal_theoretical)),
        "mean_relative_gap": s.mean_relative_gap,
        "fraction_positive_touched": s.fraction_positive_touched,
        "all_within_tolerance": bool(s.within_tolerance.all()),
        "step_tolerance": s.step_tolerance,
    }
    files.append(_write_json(summary, out / "arbitrage_summary.json"))
    if cfg.svg:
        (out / "arbitrage.svg").write_text(
            line_plot({"gain": (thin.path.times, thin.payoff_curve), "theory": (thin.path.times, thin.theoretical_curve)},
                      "t", "gain"))
        files.append(out / "arbitrage.svg")
    return files


def cmd_suites(cfg: ExperimentConfig) -> tuple[int, Path]:
    out = _out(cfg)
    st = SuiteSettings(s0=cfg.s0, strike=cfg.strike, maturity=cfg.maturity, seed=cfg.seed,
                       n_paths=max(cfg.n_paths, 2), mc_sigma=cfg.mc_sigma, sim=cfg.sim)
    checks = run_suites(cfg.model, st, log=log.info)
    report = {"checks": [c.to_dict() for c in checks], "all_pass": all(c.passed for c in checks)}
    f = _write_json(report, out / "suites.json")
    return (0 if report["all_pass"] else 1), f


# --------------------------------------------------------------------------- #
# entry point
# --------------------------------------------------------------------------- #


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stickybs", description="Sticky Black-Scholes pricing and hedging experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    common.add_argument("--quiet", action="store_true", help="only report warnings and errors")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="sticky and plain sample paths")
    sub.add_parser("curves", parents=[common], help="t=0 price and delta curves")
    t = sub.add_parser("table", parents=[common], help="hedging tables")
    t.add_argument("--which", type=int, choices=(1, 2, 3), required=True)
    sub.add_parser("arbitrage", parents=[common], help="threshold arbitrage when r != 0")
    sub.add_parser("suites", parents=[common], help="invariant checks; nonzero exit on failure")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config)
        over = {k: v for k, v in (("seed", args.seed), ("out", args.out), ("n_paths", args.paths)) if v is not None}
        cfg = replace(cfg, **over)
        if args.command == "simulate":
            files = cmd_simulate(cfg)
        elif args.command == "curves":
            files = cmd_price_curves(cfg)
        elif args.command == "table":
            files = cmd_tables(cfg, args.which)
        elif args.command == "arbitrage":
            files = cmd_arbitrage(cfg)
        else:
            code, f = cmd_suites(cfg)
            print(f)
            return code
    except (ModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
