"""Independent reference solutions: exponential-transform Monte Carlo for
quadratic-cost problems, a factorized 1-D finite-difference solver for the
non-interacting double well, and the closed-form unbounded solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl
from scipy.special import gammaln, roots_genlaguerre

from .problems import PDEProblem, _unbounded_analytic_parts


class RefinementError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReferenceEstimate:
    value: float
    std_error: float
    n_samples: int


_EXP_TRANSFORM_KINDS = ("hjb", "double_well")


def _check_exp_transform(problem: PDEProblem):
    if problem.kind not in _EXP_TRANSFORM_KINDS:
        raise ValueError(
            f"exponential-transform reference needs the quadratic-cost "
            f"nonlinearity; problem kind is '{problem.kind}'"
        )


class _LogMeanExp:
    """Streaming -log(mean(exp(logs))) with a delta-method standard error."""

    def __init__(self):
        self.shift = -np.inf
        self.s1 = 0.0  # sum exp(l - shift)
        self.s2 = 0.0  # sum exp(2(l - shift))
        self.n = 0

    def add(self, logs: np.ndarray):
        m = float(np.max(logs))
        if m > self.shift:
            scale = np.exp(self.shift - m) if np.isfinite(self.shift) else 0.0
            self.s1 *= scale
            self.s2 *= scale**2
            self.shift = m
        e = np.exp(logs - self.shift)
        self.s1 += float(e.sum())
        self.s2 += float((e**2).sum())
        self.n += logs.size

    def result(self) -> ReferenceEstimate:
        mean = self.s1 / self.n
        var = max(self.s2 / self.n - mean**2, 0.0)
        se_mean = np.sqrt(var / self.n)
        value = -(self.shift + np.log(mean))
        return ReferenceEstimate(float(value), float(se_mean / mean), self.n)


def hjb_mc_reference(
    problem: PDEProblem,
    x,
    t: float = 0.0,
    n_samples: int = 1_000_000,
    seed: int = 0,
    dt: float | None = None,
    chunk: int = 200_000,
) -> ReferenceEstimate:
    """-log E[exp(-g(X_T)) | X_t = x] by Monte Carlo over forward paths.

    Driftless problems use the one-shot Gaussian law of X_T; otherwise the
    path is Euler-stepped at `dt` (default 2e-3 time units).
    """
    _check_exp_transform(problem)
    x = np.asarray(x, dtype=np.float64)
    tau = problem.T - t
    if tau < 0:
        raise ValueError("t beyond the horizon")
    if tau == 0.0:
        g0 = float(problem.terminal.value(x[None, :])[0])
        return ReferenceEstimate(g0, 0.0, 0)
    rng = np.random.Generator(np.random.Philox(seed))
    acc = _LogMeanExp()
    one_shot = problem.kind == "hjb"  # zero drift, constant isotropic sigma
    d = problem.d
    if not one_shot:
        dt = dt if dt is not None else 2e-3
        n_steps = max(1, int(np.ceil(tau / dt)))
        dt = tau / n_steps
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        if one_shot:
            xt = x + problem.sigma.scale * np.sqrt(tau) * rng.standard_normal((m, d))
        else:
            xt = np.tile(x, (m, 1))
            s = t
            for _ in range(n_steps):
                xi = rng.standard_normal((m, d))
                xt = xt + problem.drift(xt, s) * dt + problem.sigma.apply(xt, s, xi) * np.sqrt(dt)
                s += dt
        acc.add(-problem.terminal.value(xt))
        done += m
    return acc.result()


# ---------------------------------------------------------------------------
# deterministic field for the flat quadratic-cost problem
# ---------------------------------------------------------------------------


class RadialHopfColeField:
    """V(x, t) = -log E[exp(-g(x + sigma sqrt(T-t) xi))] evaluated by Gaussian
    quadrature, exploiting that g depends on x only through |x|.

    With u = |x| and c = sigma sqrt(T-t), |x + c xi|^2 has the law
    (u + c Z)^2 + c^2 S with Z standard normal and S chi-square with d-1
    degrees of freedom; both factors get a dedicated quadrature rule.
    """

    def __init__(self, problem: PDEProblem, n_hermite: int = 48, n_laguerre: int = 64):
        if problem.kind != "hjb":
            raise ValueError("radial field only applies to the flat quadratic-cost problem")
        self.problem = problem
        self.d = problem.d
        self.scale = problem.sigma.scale
        z, wh = np.polynomial.hermite_e.hermegauss(n_hermite)
        self.z = z
        self.wh = wh / np.sqrt(2.0 * np.pi)
        if self.d > 1:
            k = (self.d - 1) / 2.0
            ys, wl = roots_genlaguerre(n_laguerre, k - 1.0)
            self.s = 2.0 * ys
            self.wl = wl / np.exp(gammaln(k))
        else:
            self.s = np.array([0.0])
            self.wl = np.array([1.0])

    def __call__(self, pts, t: float, chunk: int = 512) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        tau = self.problem.T - t
        if tau <= 1e-14:
            out = self.problem.terminal.value(pts)
            return out[0] if single else out
        c = self.scale * np.sqrt(tau)
        u = np.sqrt(np.sum(pts**2, axis=1))
        out = np.empty(len(u))
        for lo in range(0, len(u), chunk):
            uu = u[lo:lo + chunk, None, None]
            r2 = (uu + c * self.z[None, :, None]) ** 2 + c**2 * self.s[None, None, :]
            vals = 1.0 / (0.5 + 0.5 * r2)
            out[lo:lo + chunk] = -np.log(
                np.einsum("i,j,nij->n", self.wh, self.wl, vals, optimize=True)
            )
        return out[0] if single else out


# ---------------------------------------------------------------------------
# non-interacting double well: product of 1-D finite-difference solves
# ---------------------------------------------------------------------------


def _cn_solve_1d(c_diag, nu, half_sig2, terminal_times, a, b, nx, n_substeps):
    """Backward Crank-Nicolson for psi_t + half_sig2 psi'' + b(x) psi' = 0 with
    homogeneous Neumann walls; returns (grid, psi snapshots at terminal_times).

    terminal_times must be increasing and end at T; snapshots come back indexed
    like terminal_times.
    """
    x = np.linspace(a, b, nx)
    h = x[1] - x[0]
    drift = -4.0 * c_diag * x * (x**2 - 1.0)
    lo = half_sig2 / h**2 - drift / (2 * h)
    di = np.full(nx, -2.0 * half_sig2 / h**2)
    up = half_sig2 / h**2 + drift / (2 * h)
    gen = sp.diags([lo[1:], di, up[:-1]], [-1, 0, 1], format="lil")
    gen[0, 1] = 2.0 * half_sig2 / h**2
    gen[-1, -2] = 2.0 * half_sig2 / h**2
    gen = sp.csc_matrix(gen)
    eye = sp.identity(nx, format="csc")
    psi = np.exp(-nu * (x - 1.0) ** 2)
    times = np.asarray(terminal_times, dtype=np.float64)
    out = np.empty((len(times), nx))
    out[-1] = psi
    solver_cache = {}
    for j in range(len(times) - 1, 0, -1):
        span = times[j] - times[j - 1]
        dt = span / n_substeps
        key = round(dt, 15)
        if key not in solver_cache:
            solver_cache[key] = (
                spl.factorized((eye - dt / 2 * gen).tocsc()),
                (eye + dt / 2 * gen).tocsc(),
            )
        solve, rhs_op = solver_cache[key]
        for _ in range(n_substeps):
            psi = solve(rhs_op @ psi)
        out[j - 1] = psi
    return x, out


class SeparableDoubleWellReference:
    """Reference field for diagonal couplings: the exponential transform
    factorizes over dimensions, so V(x, t) = -sum_i log psi_i(x_i, t) with each
    psi_i a 1-D parabolic solve."""

    def __init__(self, problem: PDEProblem, t_grid, nx: int = 2001, n_substeps: int = 4,
                 check_refinement: bool = True):
        if problem.kind != "double_well":
            raise ValueError("separable reference applies to double-well problems")
        C = problem.params["C"]
        if np.any(np.abs(C - np.diag(np.diag(C))) > 0):
            raise ValueError("separable reference needs a diagonal coupling matrix")
        self.problem = problem
        self.t_grid = np.asarray(t_grid, dtype=np.float64)
        if abs(self.t_grid[-1] - problem.T) > 1e-12:
            raise ValueError("t_grid must end at the horizon T")
        a, b = problem.preset.interval
        ext = 0.25 * (b - a)  # extend the basis interval by 50% total width
        half_sig2 = 0.5 * problem.sigma.scale**2
        nu = problem.params["nu"]
        cdiag = np.diag(C)
        self._tables = {}
        for ci, vi in zip(cdiag, nu):
            key = (float(ci), float(vi))
            if key in self._tables:
                continue
            grid, snaps = _cn_solve_1d(ci, vi, half_sig2, self.t_grid,
                                       a - ext, b + ext, nx, n_substeps)
            if check_refinement:
                grid2, snaps2 = _cn_solve_1d(ci, vi, half_sig2, self.t_grid,
                                             a - ext, b + ext, (nx - 1) // 2 + 1,
                                             max(1, n_substeps // 2))
                probe = np.linspace(a, b, 17)
                v1 = np.interp(probe, grid, snaps[0])
                v2 = np.interp(probe, grid2, snaps2[0])
                worst = float(np.max(np.abs(np.log(v1) - np.log(v2))))
                # refined-vs-coarse gap bounds the truncation error of the fine
                # solve from above (second-order scheme: fine error ~ gap / 3)
                if worst > 3e-6:
                    raise RefinementError(
                        f"finite-difference reference not converged: refinement "
                        f"gap {worst:.2e} exceeds 3e-6"
                    )
            self._tables[key] = (grid, snaps)
        self._keys = [
            (float(ci), float(vi)) for ci, vi in zip(cdiag, nu)
        ]

    def _time_index(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.t_grid - t)))
        if abs(self.t_grid[j] - t) > 1e-9:
            raise ValueError(f"t={t} not on the reference time grid")
        return j

    def __call__(self, pts, t: float) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        j = self._time_index(t)
        out = np.zeros(pts.shape[0])
        for i, key in enumerate(self._keys):
            grid, snaps = self._tables[key]
            out -= np.log(np.interp(pts[:, i], grid, snaps[j]))
        return out[0] if single else out


def separable_fd_reference(problem: PDEProblem, x, t: float = 0.0,
                           n_time: int = 200) -> float:
    """Finite-difference value at one point for diagonal double-well problems."""
    t_grid = np.linspace(t, problem.T, n_time + 1)
    field = SeparableDoubleWellReference(problem, t_grid)
    return float(field(np.asarray(x, dtype=np.float64), t))


# ---------------------------------------------------------------------------
# closed form for the unbounded-solution benchmark
# ---------------------------------------------------------------------------


def unbounded_analytic(x, t: float, d: int, T: float = 1.0):
    """(T-t)/d * sum_i (sin(x_i) 1_{x_i<0} + x_i 1_{x_i>=0}) + cos(sum_i i x_i)."""
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    v = _unbounded_analytic_parts(pts, t, d, T)[0]
    return float(v[0]) if single else v


# ---------------------------------------------------------------------------
# dispatch helpers used by metrics and the CLI
# ---------------------------------------------------------------------------


def point_reference(problem: PDEProblem, mc_samples: int = 2_000_000, seed: int = 1234):
    """Best available scalar reference for V(x0, 0), or None."""
    if problem.ref_value is not None:
        return float(problem.ref_value)
    if problem.kind == "hjb":
        return float(RadialHopfColeField(problem)(problem.x0, 0.0))
    if problem.kind == "double_well":
        C = problem.params["C"]
        if np.all(np.abs(C - np.diag(np.diag(C))) == 0):
            return separable_fd_reference(problem, problem.x0, 0.0)
        return hjb_mc_reference(problem, problem.x0, 0.0, mc_samples, seed).value
    if problem.kind == "unbounded":
        return unbounded_analytic(problem.x0, 0.0, problem.d, problem.T)
    return None


def make_reference_field(problem: PDEProblem, t_grid):
    """Callable (pts, t) -> reference values on the solve's time grid, or None
    when the problem has no full-field reference."""
    if problem.kind == "hjb":
        return RadialHopfColeField(problem)
    if problem.kind == "double_well":
        C = problem.params["C"]
        if np.all(np.abs(C - np.diag(np.diag(C))) == 0):
            return SeparableDoubleWellReference(problem, t_grid)
        return None
    if problem.kind == "unbounded":
        d, T = problem.d, problem.T
        return lambda pts, t: unbounded_analytic(pts, t, d, T)
    return None
