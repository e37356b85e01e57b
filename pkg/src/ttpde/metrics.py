"""Evaluation losses over solved trajectories: squared PDE residual along the
sampled paths (finite-difference time derivative, analytic space derivatives)
and relative deviations from a reference solution.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .bsde import Solution
from .problems import PDEProblem
from .sde import SamplePaths


@dataclass
class EvaluationReport:
    v0: float
    rel_error_x0: float | None
    pde_loss: float
    pde_loss_train: float
    ref_loss: float | None
    ref_loss_train: float | None
    per_step: list = field(default_factory=list)  # (t_n, mean rel err, mean value)
    wall_time: float = 0.0
    config_hash: str = ""
    excluded_reference_points: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "v0": self.v0,
            "rel_error_x0": self.rel_error_x0,
            "pde_loss": self.pde_loss,
            "pde_loss_train": self.pde_loss_train,
            "ref_loss": self.ref_loss,
            "ref_loss_train": self.ref_loss_train,
            "per_step": [list(map(float, row)) for row in self.per_step],
            "wall_time": self.wall_time,
            "config_hash": self.config_hash,
            "excluded_reference_points": self.excluded_reference_points,
            **self.extra,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, **kw)


def _subset_rows(paths: SamplePaths, subset: str) -> np.ndarray:
    half = paths.n_paths // 2
    if subset == "train":
        return np.arange(half)
    if subset == "test":
        return np.arange(half, 2 * half)
    if subset == "all":
        return np.arange(paths.n_paths)
    raise ValueError(f"unknown subset '{subset}'")


def pde_loss(solution: Solution, problem: PDEProblem, paths: SamplePaths,
             subset: str = "test") -> float:
    """Mean squared PDE residual over steps 1..N at the sampled states.

    The time derivative uses a forward difference (backward at the final
    step); space derivatives are analytic. The first step is excluded since
    all paths share the same initial state there.
    """
    rows = _subset_rows(paths, subset)
    n_steps = paths.n_steps
    dt = paths.dt
    total = 0.0
    count = 0
    for n in range(1, n_steps + 1):
        pts = paths.x[rows, n, :]
        t_n = paths.t[n]
        f_n = solution.steps[n]
        vals = f_n.values(pts)
        if n < n_steps:
            dt_term = (solution.steps[n + 1].values(pts) - vals) / dt
        else:
            dt_term = (vals - solution.steps[n - 1].values(pts)) / dt
        grad = f_n.gradient(pts)
        second = problem.sigma.generator_quadratic(f_n, pts, t_n)
        drift_term = np.sum(problem.drift(pts, t_n) * grad, axis=1)
        z = problem.sigma.transpose_apply(pts, t_n, grad)
        resid = dt_term + second + drift_term + problem.h(pts, t_n, vals, z)
        total += float(np.sum(resid**2))
        count += resid.size
    return total / count


REF_EXCLUSION = 1e-12


def _relative_errors(solution, reference_fn, paths, rows):
    """Per-step arrays |(V_n - V_ref)/V_ref| with near-zero references dropped."""
    per_step = []
    excluded = 0
    for n in range(paths.n_steps + 1):
        pts = paths.x[rows, n, :]
        vals = solution.steps[n].values(pts)
        ref = np.asarray(reference_fn(pts, float(paths.t[n])))
        keep = np.abs(ref) >= REF_EXCLUSION
        excluded += int(np.sum(~keep))
        per_step.append(np.abs((vals[keep] - ref[keep]) / ref[keep]))
    return per_step, excluded


def reference_loss(solution: Solution, reference_fn, paths: SamplePaths,
                   subset: str = "test"):
    """Mean relative deviation from the reference over all steps and paths.

    Returns (loss, number of excluded near-zero reference points).
    """
    rows = _subset_rows(paths, subset)
    per_step, excluded = _relative_errors(solution, reference_fn, paths, rows)
    flat = np.concatenate(per_step)
    return float(np.mean(flat)), excluded


def mean_relative_error_curve(solution: Solution, reference_fn, paths: SamplePaths,
                              subset: str = "test"):
    """Per-step mean relative error: list of (t_n, mean |rel err|)."""
    rows = _subset_rows(paths, subset)
    per_step, _ = _relative_errors(solution, reference_fn, paths, rows)
    return [
        (float(paths.t[n]), float(np.mean(e)) if e.size else np.nan)
        for n, e in enumerate(per_step)
    ]


def per_step_table(solution: Solution, paths: SamplePaths, reference_fn=None,
                   subset: str = "test"):
    """Rows (n, t_n, mean relative error or nan, mean value) for CSV export."""
    rows = _subset_rows(paths, subset)
    curve = None
    if reference_fn is not None:
        curve = mean_relative_error_curve(solution, reference_fn, paths, subset)
    table = []
    for n in range(paths.n_steps + 1):
        pts = paths.x[rows, n, :]
        mean_val = float(np.mean(solution.steps[n].values(pts)))
        rel = curve[n][1] if curve is not None else float("nan")
        table.append((n, float(paths.t[n]), rel, mean_val))
    return table


def write_per_step_csv(table, file) -> None:
    writer = csv.writer(file)
    writer.writerow(["n", "t", "mean_rel_err", "mean_value"])
    for row in table:
        writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


def evaluate_run(solution: Solution, problem: PDEProblem, paths: SamplePaths,
                 reference_fn=None, ref_value=None, wall_time: float = 0.0,
                 config_hash: str = "") -> EvaluationReport:
    """Assemble the full report: point value, losses on both path halves, and
    the per-step error curve when a field reference exists."""
    v0 = solution.v0(problem.x0)
    rel = None
    if ref_value is not None and ref_value != 0:
        rel = abs((v0 - ref_value) / ref_value)
    loss_test = pde_loss(solution, problem, paths, "test")
    loss_train = pde_loss(solution, problem, paths, "train")
    ref_test = ref_train = None
    excluded = 0
    if reference_fn is not None:
        ref_test, excluded = reference_loss(solution, reference_fn, paths, "test")
        ref_train, _ = reference_loss(solution, reference_fn, paths, "train")
    table = per_step_table(solution, paths, reference_fn, "test")
    return EvaluationReport(
        v0=float(v0),
        rel_error_x0=None if rel is None else float(rel),
        pde_loss=loss_test,
        pde_loss_train=loss_train,
        ref_loss=ref_test,
        ref_loss_train=ref_train,
        per_step=[(t, r, m) for (_, t, r, m) in table],
        wall_time=wall_time,
        config_hash=config_hash,
        excluded_reference_points=excluded,
    )
