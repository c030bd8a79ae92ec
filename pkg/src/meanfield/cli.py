"""``meanfield`` command-line entry point.

Usage::

    meanfield --config run.toml [--out DIR] [--workers N] [--seed S]

Every run writes ``manifest.toml`` next to its outputs. The manifest holds the
fully resolved configuration and can itself be passed to ``--config`` to
reproduce the run's CSV files byte for byte.

Exit status: 0 success, 1 validation error, 2 numerical failure, 3 failed
acceptance threshold.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import tomli_w

from . import __version__
from .config import RunConfig, build_model, initial_condition, load_config, wlan_rates
from .equilibria import find_fixed_points
from .errors import NumericalError, ValidationError
from .export import (
    spectrum_block,
    write_csv,
    write_fixed_points,
    write_flow,
    write_table,
    write_tagged_paths,
    write_text,
    write_trajectory,
)
from .flow import detect_limit_cycle, integrate, residual_check
from .limits import decoupling_test, level4_marginal_test, lln_test
from .particles import DEFAULT_GRID_POINTS, replica_stream, simulate_tagged
from .wlan import BackoffParameters, cross_level_check, solve_gamma_star

log = logging.getLogger("meanfield")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_THRESHOLD = 0, 1, 2, 3


def write_manifest(out: Path, cfg: RunConfig, workers: int) -> Path:
    doc = cfg.to_dict()
    doc["output"]["dir"] = str(out)
    doc["manifest"] = {"tool": "meanfield", "version": __version__, "seed": cfg.seed, "workers": workers}
    path = out / "manifest.toml"
    with path.open("wb") as fh:
        tomli_w.dump(doc, fh)
    return path


def _verdict(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


# --- commands ----------------------------------------------------------------
# Each returns True when every configured threshold passed.


def _cmd_simulate(cfg, model, out, workers):
    p = cfg.params
    init = initial_condition(model, p["init"], p["N"])
    grid = np.linspace(0.0, p["T"], p["grid_points"] or DEFAULT_GRID_POINTS)
    traj, paths = simulate_tagged(
        model, p["N"], init, p["T"], cfg.seed, p["tagged"], max_jumps=p["max_jumps"], grid=grid
    )
    if traj.complete:
        write_trajectory(out / "trajectory.csv", traj)
    rows = ([t, *(c / traj.N)] for t, c in zip(traj.grid_times, traj.grid_counts))
    write_csv(out / "trajectory_grid.csv", ["time", *model.labels], rows)
    if paths:
        write_tagged_paths(out / "tagged_paths.csv", paths)
    write_text(out / "report.txt", "\n".join([
        f"N: {traj.N}",
        f"T: {p['T']!r}",
        f"jumps: {traj.n_jumps}",
        f"complete_jump_record: {traj.complete}",
        "final: " + ", ".join(f"{s}={x:.12g}" for s, x in zip(model.labels, traj.final)),
    ]))
    return True


def _cmd_integrate(cfg, model, out, workers):
    p = cfg.params
    flow = integrate(model, initial_condition(model, p["init"]), p["T"],
                     atol=p["atol"], rtol=p["rtol"], max_step=p.get("max_step"))
    write_flow(out / "flow.csv", flow, list(model.labels))
    write_text(out / "report.txt", "\n".join([
        f"steps_accepted: {flow.info.get('accepted')}",
        f"steps_rejected: {flow.info.get('rejected')}",
        f"residual_check: {residual_check(model, flow):.6g}",
        "final: " + ", ".join(f"{s}={x:.12g}" for s, x in zip(model.labels, flow.final)),
    ]))
    return True


def _cmd_fixed_points(cfg, model, out, workers):
    p = cfg.params
    reports = find_fixed_points(model, n_starts=p["n_starts"], seed=cfg.seed, tol=p["tol"])
    write_fixed_points(out / "fixed_points.csv", reports, list(model.labels))
    write_text(out / "spectrum.txt", spectrum_block(reports, model.labels))
    return True


def _cmd_wlan_gamma(cfg, model, out, workers):
    params = BackoffParameters(tuple(wlan_rates(cfg.model)))
    rep = solve_gamma_star(params, tol=cfg.params["tol"])
    write_csv(
        out / "gamma.csv",
        ["gamma_star", "beta_at_gamma_star", "iterations", "bracket_width_final", "uniqueness_guaranteed"],
        [[rep.gamma_star, rep.beta_at_gamma_star, rep.iterations, rep.bracket_width_final,
          rep.uniqueness_guaranteed]],
    )
    lines = [
        f"gamma_star: {rep.gamma_star!r}",
        f"beta_at_gamma_star: {rep.beta_at_gamma_star!r}",
        f"iterations: {rep.iterations}",
        f"bracket_width_final: {rep.bracket_width_final:.3e}",
        f"uniqueness_guaranteed: {rep.uniqueness_guaranteed}",
    ]
    if rep.extra_sign_changes:
        lines.append("extra_sign_changes: " + ", ".join(f"{g:.12g}" for g in rep.extra_sign_changes))
    write_text(out / "report.txt", "\n".join(lines))
    return True


def _cross_block(rep, label="") -> list[str]:
    return [
        f"[cross_check{label}]",
        f"gamma_star: {rep.gamma_star!r}",
        f"beta_at_gamma_star: {rep.beta_at_gamma_star!r}",
        f"attempt_rate: {rep.attempt_rate!r}",
        f"attempt_residual: {rep.attempt_residual:.3e}",
        f"collision_residual: {rep.collision_residual:.3e}",
        f"result: {_verdict(rep.passed)}",
        "",
    ]


def _cmd_cross_check(cfg, model, out, workers):
    p = cfg.params
    if p["c0_list"] or p["K_list"]:
        if not (p["c0_list"] and p["K_list"]):
            raise ValidationError("a sweep needs both c0_list and K_list")
        rows, lines, ok = [], [], True
        for c0 in p["c0_list"]:
            for K in p["K_list"]:
                rep = cross_level_check(BackoffParameters.exponential_backoff(float(c0), int(K)),
                                        tol=p["tol"], n_starts=p["n_starts"], seed=cfg.seed)
                rows.append([float(c0), int(K), rep.gamma_star, rep.attempt_residual,
                             rep.collision_residual, _verdict(rep.passed)])
                lines += _cross_block(rep, f".c0={c0}.K={K}")
                ok &= rep.passed
        write_csv(out / "sweep.csv",
                  ["c0", "K", "gamma_star", "attempt_residual", "collision_residual", "result"], rows)
    else:
        rep = cross_level_check(BackoffParameters(tuple(wlan_rates(cfg.model))),
                                tol=p["tol"], n_starts=p["n_starts"], seed=cfg.seed)
        lines, ok = _cross_block(rep), rep.passed
        write_csv(out / "cross_check.csv",
                  ["gamma_star", "beta_at_gamma_star", "attempt_rate", "attempt_residual",
                   "collision_residual", "result"],
                  [[rep.gamma_star, rep.beta_at_gamma_star, rep.attempt_rate, rep.attempt_residual,
                    rep.collision_residual, _verdict(rep.passed)]])
    write_text(out / "report.txt", "\n".join(lines))
    return ok


def _table_report(table, checks) -> str:
    lines = [f"statistic: {table.statistic_name}", f"horizon: {table.horizon!r}",
             f"replicas: {table.replicas}"]
    lines += [f"{k}: {v!r}" for k, v in table.extras.items()]
    lines += [f"{_verdict(ok)} {desc}" for desc, ok in checks]
    return "\n".join(lines)


def _cmd_lln(cfg, model, out, workers):
    p = cfg.params
    table = lln_test(model, initial_condition(model, p["init"]), p["T"], p["N_list"], p["replicas"],
                     cfg.seed, grid_points=p["grid_points"], workers=workers)
    stat = table.statistic
    checks = [
        (f"statistic at N={p['N_list'][-1]} < {p['threshold']}", stat[-1] < p["threshold"]),
        ("statistic strictly decreasing in N", bool(np.all(np.diff(stat) < 0))),
    ]
    if len(stat) > 1:
        checks.append((f"ratio first/last > {p['ratio_threshold']}", stat[0] / stat[-1] > p["ratio_threshold"]))
    write_table(out / "lln.csv", table)
    write_text(out / "report.txt", _table_report(table, checks))
    return all(ok for _, ok in checks)


def _cmd_decoupling(cfg, model, out, workers):
    p = cfg.params
    table = decoupling_test(model, initial_condition(model, p["init"]), p["T"], p["N_list"],
                            p["replicas"], cfg.seed, workers=workers)
    stat = table.statistic
    checks = [(f"statistic at N={p['N_list'][-1]} < {p['threshold']}", stat[-1] < p["threshold"])]
    if len(stat) > 1:
        checks.append(("statistic at largest N below smallest N", stat[-1] < stat[0]))
    write_table(out / "decoupling.csv", table)
    write_text(out / "report.txt", _table_report(table, checks))
    return all(ok for _, ok in checks)


def _cmd_level4(cfg, model, out, workers):
    p = cfg.params
    table = level4_marginal_test(model, initial_condition(model, p["init"]), p["T"], p["replicas"],
                                 cfg.seed, grid_points=p["grid_points"], workers=workers)
    checks = [(f"statistic < {p['threshold']} at every grid time",
               bool(np.all(table.statistic < p["threshold"])))]
    write_table(out / "level4.csv", table)
    write_text(out / "report.txt", _table_report(table, checks))
    return all(ok for _, ok in checks)


def _cmd_limit_cycle(cfg, model, out, workers):
    p = cfg.params
    starts = [initial_condition(model, s) for s in p["init"]]
    rng = replica_stream(cfg.seed, 0)
    starts += list(rng.dirichlet(np.ones(model.n_states), size=p["n_random_starts"]))
    if not starts:
        raise ValidationError("limit-cycle needs init starts or n_random_starts > 0")
    rows, lines = [], []
    for k, nu in enumerate(starts):
        res = detect_limit_cycle(model, nu, p["T_max"], transient_fraction=p["transient_fraction"],
                                 point_tol=p["point_tol"], cycle_tol=p["cycle_tol"])
        period = res.cycle.period if res.cycle else float("nan")
        t_end = res.cycle.transient_end if res.cycle else float("nan")
        point = res.point if res.point is not None else np.full(model.n_states, np.nan)
        rows.append([k, res.verdict, period, t_end, res.tail_diameter, *nu, *point])
        lines += [f"[start.{k}]", f"verdict: {res.verdict}"]
        if res.cycle:
            loop = out / f"loop_{k}.csv"
            write_flow(loop, res.cycle.representative_loop, list(model.labels))
            lines += [f"period: {period!r}", f"loop_csv: {loop.name}", f"transient_end: {t_end!r}"]
        lines.append("")
    header = ["start", "verdict", "period", "transient_end", "tail_diameter",
              *(f"init_{s}" for s in model.labels), *(f"point_{s}" for s in model.labels)]
    write_csv(out / "limit_sets.csv", header, rows)
    write_text(out / "report.txt", "\n".join(lines))
    return True


COMMANDS = {
    "simulate": _cmd_simulate,
    "integrate": _cmd_integrate,
    "fixed-points": _cmd_fixed_points,
    "wlan-gamma": _cmd_wlan_gamma,
    "cross-check": _cmd_cross_check,
    "lln": _cmd_lln,
    "decoupling": _cmd_decoupling,
    "level4": _cmd_level4,
    "limit-cycle": _cmd_limit_cycle,
}


def run(cfg: RunConfig, out_dir=None, workers: int = 1) -> int:
    """Execute one configured command and return its exit status."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    try:
        model = build_model(cfg.model)
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, cfg, workers)
        ok = COMMANDS[cfg.command](cfg, model, out, workers)
    except ValidationError as exc:
        log.error("validation error: %s", exc)
        return EXIT_VALIDATION
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    if not ok:
        log.error("acceptance threshold failed; see %s", out / "report.txt")
        return EXIT_THRESHOLD
    log.info("wrote %s", out)
    return EXIT_OK


def _seed_arg(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meanfield", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", required=True, help="TOML run configuration (or a manifest)")
    parser.add_argument("--out", help="output directory (overrides [output] dir)")
    parser.add_argument("--workers", type=int, default=1, help="max concurrent replicas")
    parser.add_argument("--seed", type=_seed_arg, help="override the configured seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.workers < 1:
        log.error("validation error: --workers must be >= 1")
        return EXIT_VALIDATION
    try:
        cfg = load_config(args.config)
    except ValidationError as exc:
        log.error("validation error: %s", exc)
        return EXIT_VALIDATION
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_VALIDATION
    if args.seed is not None:
        cfg.seed = args.seed
    return run(cfg, args.out, args.workers)


if __name__ == "__main__":
    sys.exit(main())
