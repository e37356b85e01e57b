"""Backward drivers: starting from the terminal condition, regress each time
step's value function onto the TT ansatz, either explicitly (nonlinearity
evaluated at the known next step) or implicitly (frozen-coefficient fixed
point within each step).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor_train as ttm
from .als import ALSConfig, RankPolicy, RegressionData, adapt_ranks, solve as als_solve
from .basis import BasisSet, build_basis, interval_from_samples
from .problems import PDEProblem
from .sde import SamplePaths
from .tt_function import TTFunction


@dataclass
class BackwardConfig:
    scheme: str = "implicit"  # "explicit" | "implicit"
    als: ALSConfig = field(default_factory=ALSConfig)
    fp_max_iters: int = 50
    gamma1: float = 1e-4   # relative coefficient-change stop
    gamma2: float = 1e-5   # relative value+gradient change stop on test points
    warm_start: bool = True
    init_seed: int = 0
    init_scale: float = 1e-2

    def __post_init__(self):
        if self.scheme not in ("explicit", "implicit"):
            raise ValueError(f"unknown scheme '{self.scheme}'")
        if self.gamma1 <= 0 or self.gamma2 <= 0:
            raise ValueError("gamma1 and gamma2 must be positive")
        if self.fp_max_iters < 1:
            raise ValueError("fp_max_iters must be at least 1")


@dataclass
class StepDiagnostics:
    n: int
    t: float
    fp_iterations: int
    fp_residuals: list
    fp_converged: bool
    als_sweeps: list
    train_rms: float
    test_rms: float
    pinv_solves: int
    wall_time: float


@dataclass
class Solution:
    steps: list            # N+1 TTFunctions; entry N is exactly c_g * g with c_g = 1
    diagnostics: list      # one StepDiagnostics per solved step, n descending
    basis: BasisSet
    t: np.ndarray
    dt: float

    def v0(self, x0) -> float:
        return self.steps[0].evaluate(x0)


def _rms(v) -> float:
    return float(np.sqrt(np.mean(v**2))) if len(v) else 0.0


def _cap_ranks(ranks, m: int, d: int) -> tuple:
    """Clip a rank tuple at the representable bond dimensions."""
    return tuple(
        int(min(r, m ** (i + 1), m ** (d - i - 1))) for i, r in enumerate(ranks)
    )


def _terminal_function(problem: PDEProblem, basis: BasisSet, ranks) -> TTFunction:
    tt = ttm.zero_tt((basis.size,) * problem.d, ranks)
    return TTFunction(tt=tt, basis=basis, c_g=1.0, g=problem.terminal)


def _constant_tt(basis: BasisSet, d: int, ranks, value: float, rng, noise: float):
    """TT representing the constant `value` up to relative noise on every core,
    so alternating updates start at the right amplitude scale."""
    width = basis.b - basis.a
    # constant 1 = prod_i sqrt(width) * phi_1(x_i); spread the amplitude evenly
    amp = np.sqrt(width) * (abs(value) ** (1.0 / d) if value != 0.0 else noise)
    cores = []
    r = (1,) + tuple(ranks) + (1,)
    for i in range(d):
        core = np.zeros((r[i], basis.size, r[i + 1]))
        core[0, 0, 0] = -amp if (i == 0 and value < 0) else amp
        core += noise * amp * rng.standard_normal(core.shape)
        cores.append(core)
    return ttm.TensorTrain(cores)


def _initial_guess(prev: TTFunction, cfg: BackwardConfig, n: int, ranks,
                   mean_residual: float = 0.0) -> TTFunction:
    """Warm start from the previous step. A zero TT (the terminal function) or
    a cold start is replaced by a TT near the constant `mean_residual` (the
    part of the target the g term does not explain); starting near zero
    instead leaves alternating updates on a long plateau."""
    if cfg.warm_start and ttm.frobenius_norm(prev.tt) > 0.0:
        return prev
    rng = np.random.default_rng((cfg.init_seed, n))
    c_g = prev.c_g if cfg.warm_start else 0.0
    if prev.g is None:
        c_g = 0.0
    tt = _constant_tt(prev.basis, prev.tt.order, ranks, mean_residual, rng,
                      cfg.init_scale)
    return TTFunction(tt=tt, basis=prev.basis, c_g=c_g, g=prev.g)


def prepare_basis(problem: PDEProblem, paths: SamplePaths, degree=None,
                  interval=None) -> BasisSet:
    """Basis from the preset interval, or from the sampled state range when the
    preset leaves the interval open."""
    degree = problem.preset.degree if degree is None else degree
    if interval is None:
        interval = problem.preset.interval
    if interval is None:
        interval = interval_from_samples(paths.x)
    return build_basis(interval[0], interval[1], degree)


def solve_backward(problem: PDEProblem, paths: SamplePaths, cfg: BackwardConfig,
                   basis: BasisSet | None = None) -> Solution:
    """Run the chosen scheme over all time steps of the simulated paths."""
    if paths.dim != problem.d:
        raise ValueError("paths and problem dimension differ")
    if basis is None:
        basis = prepare_basis(problem, paths)
    n_steps = paths.n_steps
    dt = paths.dt
    sqrt_dt = np.sqrt(dt)
    d = problem.d
    policy = cfg.als.rank_policy
    if policy is None:
        if problem.preset.max_rank is not None:
            policy = RankPolicy.adaptive((problem.preset.max_rank,) * (d - 1))
        else:
            policy = RankPolicy.fixed((problem.preset.rank,) * (d - 1))
    m = basis.size
    if policy.kind == "adaptive":
        start_ranks = _cap_ranks((problem.preset.rank,) * (d - 1), m, d)
    else:
        start_ranks = _cap_ranks(policy.ranks, m, d)
    als_cfg = replace(cfg.als, rank_policy=policy)

    half = paths.n_paths // 2
    train_idx = np.arange(half)
    test_idx = np.arange(half, 2 * half)

    steps = [None] * (n_steps + 1)
    steps[n_steps] = _terminal_function(problem, basis, start_ranks)
    diagnostics = []
    v_next = steps[n_steps]
    adapt_pending = policy.kind == "adaptive"

    for n in range(n_steps - 1, -1, -1):
        t0 = time.perf_counter()
        x_now = paths.x[:, n, :]
        x_next = paths.x[:, n + 1, :]
        t_now = paths.t[n]
        t_next = paths.t[n + 1]
        vals_next, grad_next = v_next.values_and_gradient(x_next)
        z_next = problem.sigma.transpose_apply(x_next, t_next, grad_next)

        # amplitude for cold inits: the target mean beyond what c_g * g explains
        mean_res = float(np.mean(vals_next[train_idx]))
        if v_next.g is not None:
            mean_res -= v_next.c_g * float(
                np.mean(problem.terminal.value(x_now[train_idx]))
            )
        init = _initial_guess(v_next, cfg, n, start_ranks, mean_residual=mean_res)
        fp_residuals = []
        sweeps = []
        pinv = 0
        fp_converged = True

        if cfg.scheme == "explicit":
            target = vals_next + problem.h(x_next, t_next, vals_next, z_next) * dt
            data = RegressionData(x_now, target, train_idx, test_idx)
            if adapt_pending:
                v_now, rep = adapt_ranks(init, data, als_cfg)
                adapt_pending = False
            else:
                v_now, rep = als_solve(data, init, als_cfg)
            sweeps.append(rep.sweeps)
            pinv += rep.pinv_solves
            train_rms, test_rms = rep.train_rms[-1], rep.test_rms[-1]
            fp_iters = 0
        else:
            v_k = init
            y, grad = v_k.values_and_gradient(x_now)
            rep = None
            fp_converged = False
            fp_iters = 0
            for k in range(cfg.fp_max_iters):
                z = problem.sigma.transpose_apply(x_now, t_now, grad)
                target = (
                    vals_next
                    + problem.h(x_now, t_now, y, z) * dt
                    - np.sum(z * paths.xi[:, n, :], axis=1) * sqrt_dt
                )
                data = RegressionData(x_now, target, train_idx, test_idx)
                if adapt_pending:
                    v_new, rep = adapt_ranks(v_k, data, als_cfg)
                    adapt_pending = False
                else:
                    v_new, rep = als_solve(data, v_k, als_cfg)
                sweeps.append(rep.sweeps)
                pinv += rep.pinv_solves
                fp_iters = k + 1
                y_new, grad_new = v_new.values_and_gradient(x_now)
                fp_residuals.append(_rms((y_new - y)[test_idx]))
                coef_norm = v_k.coefficient_norm()
                coef_change = (
                    v_new.coefficient_distance(v_k) / coef_norm
                    if coef_norm > 0
                    else np.inf
                )
                dh1_num = np.sqrt(
                    np.sum((y_new - y)[test_idx] ** 2)
                    + np.sum((grad_new - grad)[test_idx] ** 2)
                )
                dh1_den = np.sqrt(
                    np.sum(y[test_idx] ** 2) + np.sum(grad[test_idx] ** 2)
                )
                h1_change = dh1_num / dh1_den if dh1_den > 0 else np.inf
                v_k, y, grad = v_new, y_new, grad_new
                if coef_change < cfg.gamma1 or h1_change < cfg.gamma2:
                    fp_converged = True
                    break
            v_now = v_k
            train_rms, test_rms = rep.train_rms[-1], rep.test_rms[-1]

        steps[n] = v_now
        v_next = v_now
        diagnostics.append(
            StepDiagnostics(
                n=n,
                t=float(t_now),
                fp_iterations=fp_iters,
                fp_residuals=fp_residuals,
                fp_converged=fp_converged,
                als_sweeps=sweeps,
                train_rms=train_rms,
                test_rms=test_rms,
                pinv_solves=pinv,
                wall_time=time.perf_counter() - t0,
            )
        )
    return Solution(steps=steps, diagnostics=diagnostics, basis=basis,
                    t=paths.t.copy(), dt=dt)


def solve_explicit(problem, paths, cfg: BackwardConfig | None = None, **kw) -> Solution:
    cfg = cfg or BackwardConfig()
    return solve_backward(problem, paths, replace(cfg, scheme="explicit"), **kw)


def solve_implicit(problem, paths, cfg: BackwardConfig | None = None, **kw) -> Solution:
    cfg = cfg or BackwardConfig()
    return solve_backward(problem, paths, replace(cfg, scheme="implicit"), **kw)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_solution(out_dir, solution: Solution, manifest_extra: dict | None = None):
    """One binary TT per step plus a JSON manifest with c_g values and basis."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for n, f in enumerate(solution.steps):
        ttm.save(f.tt, out / f"step_{n:05d}.tt")
    manifest = {
        "n_steps": len(solution.steps) - 1,
        "dt": solution.dt,
        "t": [float(v) for v in solution.t],
        "c_g": [float(f.c_g) for f in solution.steps],
        "basis": {
            "a": solution.basis.a,
            "b": solution.basis.b,
            "degree": solution.basis.degree,
        },
    }
    manifest.update(manifest_extra or {})
    (out / "checkpoint.json").write_text(json.dumps(manifest, indent=2))


def load_solution(out_dir, problem: PDEProblem) -> Solution:
    out = Path(out_dir)
    manifest = json.loads((out / "checkpoint.json").read_text())
    basis = build_basis(manifest["basis"]["a"], manifest["basis"]["b"],
                        manifest["basis"]["degree"])
    steps = []
    for n in range(manifest["n_steps"] + 1):
        tt = ttm.load(out / f"step_{n:05d}.tt")
        steps.append(
            TTFunction(tt=tt, basis=basis, c_g=manifest["c_g"][n], g=problem.terminal)
        )
    return Solution(
        steps=steps,
        diagnostics=[],
        basis=basis,
        t=np.asarray(manifest["t"]),
        dt=float(manifest["dt"]),
    )
