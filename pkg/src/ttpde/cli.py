"""Command line entry points: solve a preset end to end, emit Monte Carlo
reference values, sweep a hyperparameter axis, and replay metrics from
checkpoints."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__,bsde, metrics, reference, sde
from .als import ALSConfig, RankPolicy
from .config import ConfigError, RunConfig
from .problems import UnknownPresetError, get_problem


def _apply_overrides(problem, cfg: RunConfig):
    preset = problem.preset
    updates = {}
    if cfg.dt is not None:
        updates["dt"] = cfg.dt
    if cfg.n_paths is not None:
        updates["n_train"] = cfg.n_paths
    if cfg.degree is not None:
        updates["degree"] = cfg.degree
    if cfg.rank is not None:
        updates["rank"] = cfg.rank
    if cfg.max_rank is not None:
        updates["max_rank"] = cfg.max_rank
    if cfg.interval_a is not None:
        updates["interval"] = (cfg.interval_a, cfg.interval_b)
    if updates:
        preset = dataclasses.replace(preset, **updates)
        problem = dataclasses.replace(problem, preset=preset)
    return problem


def _backward_config(cfg: RunConfig, problem) -> bsde.BackwardConfig:
    d = problem.d
    policy = None
    if cfg.max_rank is not None:
        policy = RankPolicy.adaptive((cfg.max_rank,) * (d - 1))
    elif cfg.rank is not None:
        policy = RankPolicy.fixed((cfg.rank,) * (d - 1))
    als = ALSConfig(
        max_sweeps=cfg.max_sweeps,
        no_change_tol=cfg.delta,
        reg_constant=cfg.c_eta,
        rank_policy=policy,
        seed=cfg.seed,
    )
    return bsde.BackwardConfig(
        scheme=cfg.scheme,
        als=als,
        fp_max_iters=cfg.fp_max_iters,
        gamma1=cfg.gamma1,
        gamma2=cfg.gamma2,
        warm_start=cfg.warm_start,
        init_seed=cfg.seed,
    )


def run(cfg: RunConfig, out_dir=None, checkpoints: bool = True):
    """Simulate, solve backward, evaluate, and (optionally) write artifacts.

    Returns the EvaluationReport; raises on solver failure.
    """
    t_start = time.perf_counter()
    problem = get_problem(cfg.preset, cfg.dim)
    problem = _apply_overrides(problem, cfg)
    dt = problem.preset.dt
    n_steps = int(round(problem.T / dt))
    if abs(n_steps * dt - problem.T) > 1e-9:
        raise ConfigError(f"dt={dt} does not divide the horizon T={problem.T}")
    k_train = problem.preset.n_train
    paths = sde.simulate(problem, n_steps, 2 * k_train, dt, cfg.seed)
    basis = bsde.prepare_basis(problem, paths)
    back_cfg = _backward_config(cfg, problem)
    solution = bsde.solve_backward(problem, paths, back_cfg, basis=basis)
    ref_value = reference.point_reference(problem)
    ref_field = reference.make_reference_field(problem, paths.t)
    report = metrics.evaluate_run(
        solution,
        problem,
        paths,
        reference_fn=ref_field,
        ref_value=ref_value,
        wall_time=time.perf_counter() - t_start,
        config_hash=cfg.hash(),
    )
    report.extra["preset"] = problem.name
    report.extra["scheme"] = cfg.scheme
    report.extra["seed"] = cfg.seed
    report.extra["basis_interval"] = [basis.a, basis.b]
    report.extra["degree"] = basis.degree
    report.extra["ranks"] = [list(f.tt.ranks) for f in (solution.steps[0],)][0]
    report.extra["fp_iterations_mean"] = float(
        np.mean([s.fp_iterations for s in solution.diagnostics])
    ) if solution.diagnostics else 0.0
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(report.to_json())
        with open(out / "per_step.csv", "w", newline="") as fh:
            metrics.write_per_step_csv(
                [(n, t, r, m) for n, (t, r, m) in enumerate(report.per_step)], fh
            )
        manifest = {
            "config": cfg.to_text(),
            "config_hash": cfg.hash(),
            "seed": cfg.seed,
            "build": f"ttpde {__version__} / numpy {np.__version__}",
            "preset": problem.name,
            "basis_interval": [basis.a, basis.b],
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
        if checkpoints:
            bsde.save_solution(out / "checkpoints", solution,
                               {"config_hash": cfg.hash(), "preset": problem.name,
                                "seed": cfg.seed})
        if cfg.dump_paths:
            with open(out / "paths.csv", "w", newline="") as fh:
                sde.dump_csv(paths, fh)
    return report


def _add_override_flags(p):
    p.add_argument("--scheme", choices=["explicit", "implicit"])
    p.add_argument("--dim", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--paths", type=int, dest="n_paths",
                   help="number of training paths K (2K are simulated)")
    p.add_argument("--degree", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--max-rank", type=int, dest="max_rank")
    p.add_argument("--interval", nargs=2, type=float, metavar=("A", "B"))
    p.add_argument("--seed", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--c-eta", type=float, dest="c_eta")
    p.add_argument("--gamma1", type=float)
    p.add_argument("--gamma2", type=float)
    p.add_argument("--max-sweeps", type=int, dest="max_sweeps")
    p.add_argument("--fp-max-iters", type=int, dest="fp_max_iters")
    p.add_argument("--no-warm-start", action="store_true")
    p.add_argument("--dump-paths", action="store_true")


def _config_from_args(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = RunConfig.from_text(Path(args.config).read_text())
    else:
        cfg = RunConfig()
    if getattr(args, "preset", None):
        cfg.preset = args.preset
    for name in ("scheme", "dim", "dt", "n_paths", "degree", "rank", "max_rank",
                 "seed", "delta", "c_eta", "gamma1", "gamma2", "max_sweeps",
                 "fp_max_iters"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if getattr(args, "interval", None):
        cfg.interval_a, cfg.interval_b = args.interval
    if getattr(args, "no_warm_start", False):
        cfg.warm_start = False
    if getattr(args, "dump_paths", False):
        cfg.dump_paths = True
    cfg.__post_init__()  # re-validate after overrides
    return cfg


def _cmd_solve(args) -> int:
    cfg = _config_from_args(args)
    report = run(cfg, out_dir=args.out, checkpoints=not args.no_checkpoints)
    print(report.to_json())
    return 0


def _cmd_reference(args) -> int:
    problem = get_problem(args.preset, args.dim)
    x = problem.x0
    if problem.kind in ("hjb", "double_well"):
        est = reference.hjb_mc_reference(problem, x, t=args.t,
                                         n_samples=args.samples, seed=args.seed)
    elif problem.kind == "unbounded":
        est = reference.ReferenceEstimate(
            reference.unbounded_analytic(x, args.t, problem.d, problem.T), 0.0, 0
        )
    elif problem.kind == "allen_cahn" and problem.ref_value is not None:
        est = reference.ReferenceEstimate(problem.ref_value, 0.0, 0)
    else:
        print(f"no reference available for preset '{args.preset}'", file=sys.stderr)
        return 2
    print(json.dumps({"value": est.value, "std_error": est.std_error,
                      "n_samples": est.n_samples}))
    return 0


def _cmd_sweep(args) -> int:
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in values:
        cfg = _config_from_args(args)
        if args.axis == "degree":
            cfg.degree = int(v)
        else:
            cfg.dim = int(v)
        sub = out / f"{args.axis}_{v}" if out else None
        report = run(cfg, out_dir=sub, checkpoints=False)
        rows.append({
            args.axis: v,
            "v0": report.v0,
            "rel_error_x0": report.rel_error_x0,
            "pde_loss": report.pde_loss,
            "ref_loss": report.ref_loss,
            "wall_time": report.wall_time,
        })
        print(f"{args.axis}={v}: v0={report.v0:.6g} "
              f"rel_err={report.rel_error_x0} pde_loss={report.pde_loss:.3e}")
    if out:
        with open(out / "sweep.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return 0


def _cmd_replay(args) -> int:
    run_dir = Path(args.run)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    cfg = RunConfig.from_text(manifest["config"])
    problem = get_problem(cfg.preset, cfg.dim)
    problem = _apply_overrides(problem, cfg)
    dt = problem.preset.dt
    n_steps = int(round(problem.T / dt))
    paths = sde.simulate(problem, n_steps, 2 * problem.preset.n_train, dt, cfg.seed)
    solution = bsde.load_solution(run_dir / "checkpoints", problem)
    ref_value = reference.point_reference(problem)
    ref_field = reference.make_reference_field(problem, paths.t)
    report = metrics.evaluate_run(solution, problem, paths, reference_fn=ref_field,
                                  ref_value=ref_value, config_hash=cfg.hash())
    report.extra["preset"] = problem.name
    report.extra["replayed_from"] = str(run_dir)
    (run_dir / "summary_replay.json").write_text(report.to_json())
    print(report.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttpde",
        description="Tensor-train regression solver for parabolic PDEs "
                    "via backward SDEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run a preset end to end")
    p_solve.add_argument("--preset", help="problem id, e.g. hjb-d100")
    p_solve.add_argument("--config", help="flat key=value config file")
    p_solve.add_argument("--out", help="output directory for artifacts")
    p_solve.add_argument("--no-checkpoints", action="store_true")
    _add_override_flags(p_solve)
    p_solve.set_defaults(func=_cmd_solve)

    p_ref = sub.add_parser("reference", help="reference value at x0 as JSON")
    p_ref.add_argument("--preset", required=True)
    p_ref.add_argument("--dim", type=int)
    p_ref.add_argument("--samples", type=int, default=1_000_000)
    p_ref.add_argument("--seed", type=int, default=0)
    p_ref.add_argument("--t", type=float, default=0.0)
    p_ref.set_defaults(func=_cmd_reference)

    p_sweep = sub.add_parser("sweep", help="run a preset across an axis")
    p_sweep.add_argument("--preset", required=True)
    p_sweep.add_argument("--axis", choices=["degree", "dimension"], required=True)
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated list, e.g. 0,1,2,3")
    p_sweep.add_argument("--out")
    p_sweep.add_argument("--config")
    _add_override_flags(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_replay = sub.add_parser("replay", help="recompute metrics from checkpoints")
    p_replay.add_argument("--run", required=True, help="directory of a solve run")
    p_replay.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UnknownPresetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver failures: nonzero exit with diagnostic
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
