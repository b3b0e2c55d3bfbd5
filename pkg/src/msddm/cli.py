"""Command-line front end.

Exit codes: 0 success, 1 computation-domain error, 2 configuration error.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .aggregate import FptResult, analyze
from .config import ConfigError, RunConfig, load_config
from .core import Boundary, DomainError
from .io import write_csv, write_json
from .montecarlo import empirical_metrics, ks_distance, ks_threshold, simulate
from .ou import ou_fpt_distribution
from .reward import optimize_threshold, reward_curve, threshold_surface
from .stages import ConsistencyError, DegenerateModelError

__all__ = ["main"]

_BOUNDARY_NAME = {Boundary.UPPER: "upper", Boundary.LOWER: "lower"}


class _Writer:
    def __init__(self, cfg: RunConfig):
        self.dir = cfg.output_dir
        self.formats = cfg.formats
        self.written: list[Path] = []

    def _ready(self, fmt: str) -> bool:
        if fmt not in self.formats:
            return False
        self.dir.mkdir(parents=True, exist_ok=True)
        return True

    def json(self, name: str, obj) -> None:
        if self._ready("json"):
            self.written.append(write_json(self.dir / name, obj))

    def csv(self, name: str, header, rows) -> None:
        if self._ready("csv"):
            self.written.append(write_csv(self.dir / name, header, rows))


def _result_scalars(res: FptResult) -> dict:
    return {
        "overall_er": res.overall_er,
        "overall_mdt": res.overall_mdt,
        "cond_mdt_upper": res.cond_mdt_upper,
        "cond_mdt_lower": res.cond_mdt_lower,
        "p_upper": res.p_upper,
        "p_lower": res.p_lower,
        "atoms": [{"time": a.time, "mass": a.mass, "boundary": _BOUNDARY_NAME[a.boundary]}
                  for a in res.atoms],
    }


def _per_stage(res: FptResult) -> list[dict]:
    return [
        {
            "t_start": m.t_start,
            "t_end": m.t_end,
            "er": m.er_i,
            "p_decide": m.p_decide,
            "mdt": m.mdt_i,
            "cond_mdt_upper": m.cond_mdt_upper,
            "cond_mdt_lower": m.cond_mdt_lower,
            "atom_upper": m.atom_upper,
            "atom_lower": m.atom_lower,
            "survival": m.survival,
        }
        for m in res.per_stage
    ]


def _cdf_rows(res: FptResult):
    """Grid rows plus one flagged row per atom time (merged when they coincide)."""
    times = list(res.times)
    flags = [0] * len(times)
    for a in res.atoms:
        hit = [k for k, t in enumerate(times) if abs(t - a.time) <= 1e-9 * max(1.0, a.time)]
        if hit:
            flags[hit[0]] = 1
        else:
            times.append(a.time)
            flags.append(1)
    order = np.argsort(times, kind="stable")
    t = np.asarray(times)[order]
    up = res.cdf_at(t, Boundary.UPPER)
    lo = res.cdf_at(t, Boundary.LOWER)
    cond_up = up / res._cascade.p_upper if res._cascade.p_upper > 0 else np.full_like(t, math.nan)
    cond_lo = lo / res._cascade.p_lower if res._cascade.p_lower > 0 else np.full_like(t, math.nan)
    total = np.clip(up + lo, 0.0, 1.0)
    for k, i in enumerate(order):
        yield (t[k], total[k], min(cond_up[k], 1.0), min(cond_lo[k], 1.0), flags[i])


def _emit_fpt(cfg: RunConfig, out: _Writer, res: FptResult, command: str, extra: dict) -> None:
    doc = {"command": command, "model": cfg.resolved_model(), "grid_size": cfg.grid_size}
    doc.update(extra)
    doc.update(_result_scalars(res))
    out.json("metrics.json", doc)
    out.csv("cdf.csv", ("t", "cdf", "cdf_upper", "cdf_lower", "atom"), _cdf_rows(res))


def cmd_metrics(cfg: RunConfig, out: _Writer) -> None:
    res = analyze(cfg.model_spec(), cfg.grid_size, cfg.time_grid)
    _emit_fpt(cfg, out, res, "metrics", {"per_stage": _per_stage(res)})


def cmd_ou(cfg: RunConfig, out: _Writer) -> None:
    res = ou_fpt_distribution(cfg.ou_model(), cfg.pieces, cfg.grid_size, cfg.time_grid)
    _emit_fpt(cfg, out, res, "ou", {"pieces": cfg.pieces, "segments": len(res.per_stage)})


def _sim_header(cfg: RunConfig) -> dict:
    sc = cfg.sim_config()
    return {"n_paths": sc.n_paths, "dt": sc.dt, "seed": sc.seed, "max_time": sc.max_time,
            "crossing": sc.crossing}


def _empirical_doc(emp) -> dict:
    return {
        "n_paths": emp.n,
        "n_censored": emp.n_censored,
        "n_upper": emp.n_upper,
        "n_lower": emp.n_lower,
        "er": emp.er,
        "er_se": emp.er_se,
        "mdt": emp.mdt,
        "mdt_se": emp.mdt_se,
        "cond_mdt_upper": emp.cond_mdt_upper,
        "cond_mdt_upper_se": emp.cond_mdt_upper_se,
        "cond_mdt_lower": emp.cond_mdt_lower,
        "cond_mdt_lower_se": emp.cond_mdt_lower_se,
    }


def cmd_simulate(cfg: RunConfig, out: _Writer) -> None:
    outcomes = simulate(cfg.any_model(), cfg.sim_config())
    out.csv("outcomes.csv", ("path_id", "decision_time", "boundary", "censored"), outcomes.rows())
    out.json("simulation.json", {
        "command": "simulate",
        "model": cfg.resolved_model(),
        "simulation": _sim_header(cfg),
        "empirical": _empirical_doc(empirical_metrics(outcomes)),
    })


def _zscore(analytic: float, estimate: float, se: float) -> float:
    return (estimate - analytic) / se if se > 0 else math.nan


def cmd_compare(cfg: RunConfig, out: _Writer) -> None:
    model = cfg.any_model()
    if cfg.has_leak:
        res = ou_fpt_distribution(model, cfg.pieces, cfg.grid_size)
    else:
        res = analyze(model, cfg.grid_size)
    emp = empirical_metrics(simulate(model, cfg.sim_config()))
    coef = cfg.ks_coefficient
    curves = {}
    for name, ecdf, b, n in (("cdf", emp.ecdf, None, emp.n),
                             ("cdf_upper", emp.ecdf_upper, Boundary.UPPER, emp.n_upper),
                             ("cdf_lower", emp.ecdf_lower, Boundary.LOWER, emp.n_lower)):
        if n == 0:
            curves[name] = {"n": 0, "statistic": None, "threshold": None, "pass": None}
            continue
        if b is None:
            right = lambda t: res.cdf_at(t)  # noqa: E731
            left = lambda t: res.cdf_left(t)  # noqa: E731
        else:
            p = res.p_upper if b is Boundary.UPPER else res.p_lower
            right = lambda t, b=b, p=p: res.cdf_at(t, b) / p  # noqa: E731
            left = lambda t, b=b: res.cdf_left(t, b, conditional=True)  # noqa: E731
        stat = ks_distance(ecdf, right, left)
        thr = ks_threshold(n, coef)
        curves[name] = {"n": n, "statistic": stat, "threshold": thr, "pass": bool(stat < thr)}
    metrics = {}
    for key, analytic, est, se in (
            ("er", res.overall_er, emp.er, emp.er_se),
            ("mdt", res.overall_mdt, emp.mdt, emp.mdt_se),
            ("cond_mdt_upper", res.cond_mdt_upper, emp.cond_mdt_upper, emp.cond_mdt_upper_se),
            ("cond_mdt_lower", res.cond_mdt_lower, emp.cond_mdt_lower, emp.cond_mdt_lower_se)):
        metrics[key] = {"analytic": analytic, "monte_carlo": est, "se": se,
                        "z": _zscore(analytic, est, se)}
    passed = all(c["pass"] is not False for c in curves.values())
    out.json("compare.json", {
        "command": "compare",
        "model": cfg.resolved_model(),
        "simulation": _sim_header(cfg),
        "ks_coefficient": coef,
        "ks": curves,
        "metrics": metrics,
        "empirical": _empirical_doc(emp),
        "pass": passed,
    })


def cmd_reward(cfg: RunConfig, out: _Writer) -> None:
    rc = cfg.reward_config()
    spec = cfg.model_spec(need_thresholds=False)
    zs, rr = reward_curve(spec, rc)
    opt = optimize_threshold(spec, rc)
    out.csv("reward_curve.csv", ("z", "rr"), zip(zs, rr))
    out.json("reward.json", {
        "command": "reward",
        "stages": [{"t_start": s.start_time, "drift": s.drift, "diffusion": s.diffusion}
                   for s in spec.stages],
        "x0": spec.x0,
        "reward": {"t_nd": rc.t_nd, "z_min": rc.z_min, "z_max": rc.z_max, "resolution": rc.resolution},
        "z_star": opt.z_star,
        "rr_star": opt.rr_star,
        "at_boundary": opt.at_boundary,
        "n_local_maxima": len(opt.local_maxima),
        "local_maxima": [{"z": z, "rr": r} for z, r in opt.local_maxima],
    })


def cmd_surface(cfg: RunConfig, out: _Writer) -> None:
    rc = cfg.reward_config()
    a1, t1 = cfg.surface_grids()
    s = cfg.section("surface")
    a2, sigma, x0 = s.get("a2", 0.5), s.get("sigma", 0.1), s.get("x0", 0.0)
    surf = threshold_surface(a1, t1, rc, a2=a2, sigma=sigma, x0=x0)
    header = ["a1\\t1"] + [format(float(t), ".17g") for t in t1]
    out.csv("surface_matrix.csv", header,
            ([a] + list(row) for a, row in zip(surf.a1, surf.z_star)))
    out.csv("surface_long.csv", ("a1", "t1", "z_star", "rr_star", "n_local_maxima"), surf.rows())
    out.json("surface.json", {
        "command": "surface",
        "a2": a2,
        "sigma": sigma,
        "x0": x0,
        "reward": {"t_nd": rc.t_nd, "z_min": rc.z_min, "z_max": rc.z_max, "resolution": rc.resolution},
        "a1": surf.a1,
        "t1": surf.t1,
        "z_star": surf.z_star,
        "failed_cells": [{"a1_index": i, "t1_index": j, "error": msg}
                         for (i, j), msg in sorted(surf.errors.items())],
    })


COMMANDS = {
    "metrics": (cmd_metrics, "first-passage metrics and CDF of a multistage DDM"),
    "simulate": (cmd_simulate, "Monte-Carlo outcomes and empirical summary"),
    "compare": (cmd_compare, "analytic CDFs against Monte-Carlo ECDFs (KS test)"),
    "reward": (cmd_reward, "reward-rate curve and its local maxima"),
    "surface": (cmd_surface, "optimal threshold over a grid of (a1, t1)"),
    "ou": (cmd_ou, "first-passage metrics of a multistage Ornstein-Uhlenbeck model"),
}


def _add_flags(p: argparse.ArgumentParser, default) -> None:
    p.add_argument("--config", default=default, help="path to the JSON config")
    p.add_argument("--out", default=default, help="output directory (overrides output.directory)")
    p.add_argument("--seed", type=int, default=default, help="simulation seed (overrides simulation.seed)")
    p.add_argument("--grid", type=int, default=default, help="density grid size")
    p.add_argument("--pieces", type=int, default=default, help="OU pieces per stage")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msddm", description="Multistage drift-diffusion analyses.")
    _add_flags(parser, None)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        _add_flags(sub.add_parser(name, help=help_text, description=help_text), argparse.SUPPRESS)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.config is None:
        print("msddm: config error: --config is required", file=sys.stderr)
        return 2
    overrides = {"directory": args.out, "seed": args.seed, "grid_size": args.grid,
                 "pieces": args.pieces}
    try:
        cfg = load_config(args.config, overrides)
        writer = _Writer(cfg)
        COMMANDS[args.command][0](cfg, writer)
    except ConfigError as exc:
        print(f"msddm: config error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, ConsistencyError, DegenerateModelError, ArithmeticError) as exc:
        print(f"msddm: computation error: {exc}", file=sys.stderr)
        return 1
    for path in writer.written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
