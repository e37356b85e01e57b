"""Benchmark parabolic PDEs: coefficient functions, terminal conditions with
analytic derivatives, and per-problem solver presets.

Every problem is the tuple (d, T, drift b, diffusion sigma, nonlinearity h,
terminal g, start x0). Coefficient callables are vectorized over rows of an
(n, d) point array and are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# pinned seeds for the randomly drawn problem coefficients
DOUBLE_WELL_COUPLING_SEED = 761923
CIR_COEFFICIENT_SEED = 144001


# ---------------------------------------------------------------------------
# diffusion coefficients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IsotropicDiffusion:
    """sigma(x, t) = scale * Id."""

    scale: float
    dim: int

    def matrix(self, x, t=0.0) -> np.ndarray:
        return self.scale * np.eye(self.dim)

    def apply(self, x, t, xi) -> np.ndarray:
        return self.scale * xi

    def transpose_apply(self, x, t, v) -> np.ndarray:
        return self.scale * v

    def generator_quadratic(self, f, pts, t) -> np.ndarray:
        """(1/2) sum_ij (sigma sigma^T)_ij d_i d_j f at the points."""
        return 0.5 * self.scale**2 * f.laplacian(pts)


@dataclass(frozen=True)
class RankOneDiffusion:
    """sigma(x, t) = w(x) e_1^T for a state-dependent factor w, so that
    (sigma sigma^T)(x) = w(x) w(x)^T. A single Brownian coordinate drives
    every state dimension."""

    factor: object  # callable (n, d) -> (n, d)
    dim: int

    def matrix(self, x, t=0.0) -> np.ndarray:
        w = self.factor(np.asarray(x, dtype=np.float64)[None, :])[0]
        m = np.zeros((self.dim, self.dim))
        m[:, 0] = w
        return m

    def apply(self, x, t, xi) -> np.ndarray:
        return self.factor(x) * xi[:, :1]

    def transpose_apply(self, x, t, v) -> np.ndarray:
        out = np.zeros_like(v)
        out[:, 0] = np.sum(self.factor(x) * v, axis=1)
        return out

    def generator_quadratic(self, f, pts, t) -> np.ndarray:
        return 0.5 * f.quad_form(pts, self.factor(pts))


# ---------------------------------------------------------------------------
# terminal conditions with closed-form derivatives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TerminalCondition:
    value: object
    grad: object = None
    laplacian: object = None
    quad_form: object = None  # (pts, w) -> sum_ij w_i w_j d_i d_j g
    hessian: object = None    # single point -> (d, d)


def log_quadratic_terminal() -> TerminalCondition:
    """g(x) = log(1/2 + 1/2 |x|^2)."""

    def q(pts):
        return 0.5 + 0.5 * np.sum(pts**2, axis=1)

    return TerminalCondition(
        value=lambda pts: np.log(q(pts)),
        grad=lambda pts: pts / q(pts)[:, None],
        laplacian=lambda pts: pts.shape[1] / q(pts) - np.sum(pts**2, axis=1) / q(pts) ** 2,
        quad_form=lambda pts, w: np.sum(w**2, axis=1) / q(pts)
        - np.sum(w * pts, axis=1) ** 2 / q(pts) ** 2,
        hessian=lambda x: np.eye(len(x)) / (0.5 + 0.5 * x @ x)
        - np.outer(x, x) / (0.5 + 0.5 * x @ x) ** 2,
    )


def shifted_quadratic_terminal(nu: np.ndarray) -> TerminalCondition:
    """g(x) = sum_i nu_i (x_i - 1)^2."""
    nu = np.asarray(nu, dtype=np.float64)
    return TerminalCondition(
        value=lambda pts: np.sum(nu * (pts - 1.0) ** 2, axis=1),
        grad=lambda pts: 2.0 * nu * (pts - 1.0),
        laplacian=lambda pts: np.full(pts.shape[0], 2.0 * nu.sum()),
        quad_form=lambda pts, w: 2.0 * np.sum(nu * w**2, axis=1),
        hessian=lambda x: np.diag(2.0 * nu),
    )


def constant_terminal(c: float = 1.0) -> TerminalCondition:
    return TerminalCondition(
        value=lambda pts: np.full(pts.shape[0], c),
        grad=lambda pts: np.zeros_like(pts),
        laplacian=lambda pts: np.zeros(pts.shape[0]),
        quad_form=lambda pts, w: np.zeros(pts.shape[0]),
        hessian=lambda x: np.zeros((len(x), len(x))),
    )


def weighted_cosine_terminal(d: int) -> TerminalCondition:
    """g(x) = cos(sum_i i * x_i)."""
    idx = np.arange(1, d + 1, dtype=np.float64)

    def wl(pts):
        return pts @ idx

    return TerminalCondition(
        value=lambda pts: np.cos(wl(pts)),
        grad=lambda pts: -np.sin(wl(pts))[:, None] * idx,
        laplacian=lambda pts: -np.cos(wl(pts)) * np.sum(idx**2),
        quad_form=lambda pts, w: -np.cos(wl(pts)) * (w @ idx) ** 2,
        hessian=lambda x: -np.cos(x @ idx) * np.outer(idx, idx),
    )


def inverse_quadratic_terminal() -> TerminalCondition:
    """g(x) = (2 + (2/5) |x|^2)^(-1)."""

    def q(pts):
        return 2.0 + 0.4 * np.sum(pts**2, axis=1)

    return TerminalCondition(
        value=lambda pts: 1.0 / q(pts),
        grad=lambda pts: -0.8 * pts / q(pts)[:, None] ** 2,
        laplacian=lambda pts: -0.8 * pts.shape[1] / q(pts) ** 2
        + 1.28 * np.sum(pts**2, axis=1) / q(pts) ** 3,
        quad_form=lambda pts, w: -0.8 * np.sum(w**2, axis=1) / q(pts) ** 2
        + 1.28 * np.sum(w * pts, axis=1) ** 2 / q(pts) ** 3,
        hessian=lambda x: -0.8 * np.eye(len(x)) / (2.0 + 0.4 * x @ x) ** 2
        + 1.28 * np.outer(x, x) / (2.0 + 0.4 * x @ x) ** 3,
    )


# ---------------------------------------------------------------------------
# problems and presets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverPreset:
    dt: float
    n_train: int          # K, the number of training paths
    degree: int
    rank: int = 1
    max_rank: int | None = None   # adaptive rank cap; None means fixed rank
    interval: tuple | None = None  # basis interval; None derives it from samples


@dataclass(frozen=True, eq=False)
class PDEProblem:
    name: str
    kind: str
    d: int
    T: float
    drift: object
    sigma: object
    h: object
    terminal: TerminalCondition
    x0: np.ndarray
    preset: SolverPreset
    ref_value: float | None = None
    params: dict = field(default_factory=dict)


def _half_square_norm_h(pts, t, y, z):
    return -0.5 * np.sum(z**2, axis=1)


def hjb(d: int = 100) -> PDEProblem:
    """Control value function with quadratic cost: b = 0, sigma = sqrt(2) Id,
    h = -|z|^2/2, g = log(1/2 + |x|^2/2)."""
    return PDEProblem(
        name=f"hjb-d{d}",
        kind="hjb",
        d=d,
        T=1.0,
        drift=lambda pts, t: np.zeros_like(pts),
        sigma=IsotropicDiffusion(np.sqrt(2.0), d),
        h=_half_square_norm_h,
        terminal=log_quadratic_terminal(),
        x0=np.zeros(d),
        preset=SolverPreset(dt=0.01, n_train=2000, degree=0, rank=1, interval=(-6.0, 6.0)),
    )


def double_well(C: np.ndarray, nu: np.ndarray, sigma_scale: float = np.sqrt(2.0),
                T: float = 0.5, x0=None, preset: SolverPreset | None = None,
                name: str = "double-well") -> PDEProblem:
    """HJB dynamics with drift -grad Psi, Psi(x) = sum_ij C_ij (x_i^2-1)(x_j^2-1)."""
    C = np.asarray(C, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    d = C.shape[0]
    S = C + C.T

    def drift(pts, t):
        u = pts**2 - 1.0
        return -2.0 * pts * (u @ S.T)

    if x0 is None:
        x0 = -np.ones(d)
    if preset is None:
        preset = SolverPreset(dt=0.01, n_train=2000, degree=3, rank=2, interval=(-3.0, 3.0))
    return PDEProblem(
        name=name,
        kind="double_well",
        d=d,
        T=T,
        drift=drift,
        sigma=IsotropicDiffusion(float(sigma_scale), d),
        h=_half_square_norm_h,
        terminal=shifted_quadratic_terminal(nu),
        x0=np.asarray(x0, dtype=np.float64),
        preset=preset,
        params={"C": C, "nu": nu},
    )


def double_well_diagonal(d: int = 50) -> PDEProblem:
    return double_well(
        C=0.1 * np.eye(d),
        nu=np.full(d, 0.05),
        T=0.5,
        name=f"double-well-diag-d{d}",
        preset=SolverPreset(dt=0.01, n_train=2000, degree=3, rank=2, interval=(-3.0, 3.0)),
    )


def double_well_interacting(d: int = 20) -> PDEProblem:
    rng = np.random.default_rng(DOUBLE_WELL_COUPLING_SEED)
    C = np.eye(d) + rng.normal(0.0, np.sqrt(0.1), size=(d, d))
    return double_well(
        C=C,
        nu=np.full(d, 0.5),
        T=0.3,
        name=f"double-well-inter-d{d}",
        preset=SolverPreset(
            dt=0.01, n_train=2000, degree=7, rank=1, max_rank=6, interval=(-8.0, 2.0)
        ),
    )


def cir(d: int = 100, a=None, b=None, gamma=None) -> PDEProblem:
    """Bond price under mean-reverting square-root dynamics; the diffusion is
    the rank-one factorization sigma(x) = w(x) e_1^T with w_i = gamma_i *
    sqrt(max(x_i, 0)), which reproduces the cross-derivative coefficients
    sqrt(x_i x_j) gamma_i gamma_j of the generator."""
    if a is None or b is None or gamma is None:
        rng = np.random.default_rng(CIR_COEFFICIENT_SEED)
        a = rng.uniform(0.0, 1.0, d) if a is None else a
        b = rng.uniform(0.0, 1.0, d) if b is None else b
        gamma = rng.uniform(0.0, 1.0, d) if gamma is None else gamma
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)

    def factor(pts):
        return gamma * np.sqrt(np.maximum(pts, 0.0))

    return PDEProblem(
        name=f"cir-d{d}",
        kind="cir",
        d=d,
        T=1.0,
        drift=lambda pts, t: a * (b - pts),
        sigma=RankOneDiffusion(factor, d),
        h=lambda pts, t, y, z: -np.max(pts, axis=1) * y,
        terminal=constant_terminal(1.0),
        x0=np.ones(d),
        preset=SolverPreset(dt=0.01, n_train=1000, degree=3, rank=1, interval=(-0.2, 6.0)),
        params={"a": a, "b": b, "gamma": gamma},
    )


def _unbounded_analytic_parts(pts, t, d, T):
    idx = np.arange(1, d + 1, dtype=np.float64)
    wl = pts @ idx
    neg = pts < 0
    p = np.where(neg, np.sin(pts), pts).sum(axis=1)
    p1 = np.where(neg, np.cos(pts), 1.0)
    p2 = np.where(neg, -np.sin(pts), 0.0)
    cosw = np.cos(wl)
    sinw = np.sin(wl)
    v = (T - t) / d * p + cosw
    dt_v = -p / d
    sum_grad = (T - t) / d * p1.sum(axis=1) - sinw * idx.sum()
    lap = (T - t) / d * p2.sum(axis=1) - cosw * np.sum(idx**2)
    return v, dt_v, sum_grad, lap


def unbounded(d: int = 10) -> PDEProblem:
    """Benchmark with a known unbounded analytic solution; the source term k
    is the closed form obtained by substituting that solution into the PDE."""
    T = 1.0

    def k(pts, t):
        v, dt_v, sum_grad, lap = _unbounded_analytic_parts(pts, t, d, T)
        return -(dt_v + lap / (2.0 * d) + v * sum_grad / (2.0 * d) + v**2 / 2.0)

    def h(pts, t, y, z):
        return k(pts, t) + y / (2.0 * np.sqrt(d)) * np.sum(z, axis=1) + y**2 / 2.0

    x0 = np.full(d, 0.5)
    v0 = float(_unbounded_analytic_parts(x0[None, :], 0.0, d, T)[0][0])
    return PDEProblem(
        name=f"unbounded-d{d}",
        kind="unbounded",
        d=d,
        T=T,
        drift=lambda pts, t: np.zeros_like(pts),
        sigma=IsotropicDiffusion(1.0 / np.sqrt(d), d),
        h=h,
        terminal=weighted_cosine_terminal(d),
        x0=x0,
        preset=SolverPreset(dt=0.001, n_train=1000, degree=6, rank=1, interval=None),
        ref_value=v0,
    )


def allen_cahn(d: int = 100) -> PDEProblem:
    """Cubic reaction term on the heat semigroup; the point reference at x0
    is the published branching-diffusion value, treated as a constant."""
    return PDEProblem(
        name="allen-cahn" if d == 100 else f"allen-cahn-d{d}",
        kind="allen_cahn",
        d=d,
        T=0.3,
        drift=lambda pts, t: np.zeros_like(pts),
        sigma=IsotropicDiffusion(np.sqrt(2.0), d),
        h=lambda pts, t, y, z: y - y**3,
        terminal=inverse_quadratic_terminal(),
        x0=np.zeros(d),
        preset=SolverPreset(dt=0.01, n_train=1000, degree=0, rank=1, interval=None),
        ref_value=0.052802 if d == 100 else None,
    )


# ---------------------------------------------------------------------------
# preset registry
# ---------------------------------------------------------------------------

_FAMILIES = {
    "hjb": hjb,
    "double-well-diag": double_well_diagonal,
    "double-well-inter": double_well_interacting,
    "cir": cir,
    "unbounded": unbounded,
    "allen-cahn": allen_cahn,
}

_DEFAULT_DIMS = {
    "hjb": 100,
    "double-well-diag": 50,
    "double-well-inter": 20,
    "cir": 100,
    "unbounded": 10,
    "allen-cahn": 100,
}


class UnknownPresetError(KeyError):
    pass


def preset_ids() -> list:
    return [f"{fam}-d{_DEFAULT_DIMS[fam]}" if fam != "allen-cahn" else "allen-cahn"
            for fam in _FAMILIES]


def get_problem(preset_id: str, dim: int | None = None) -> PDEProblem:
    """Look up a problem by id such as 'hjb-d100' or 'allen-cahn'; a '-d<k>'
    suffix overrides the dimension."""
    name = preset_id.strip().lower()
    fam, d = name, None
    for family in _FAMILIES:
        if name == family:
            fam, d = family, None
            break
        if name.startswith(family + "-d"):
            tail = name[len(family) + 2:]
            if tail.isdigit():
                fam, d = family, int(tail)
                break
    else:
        raise UnknownPresetError(
            f"unknown preset '{preset_id}'; known families: {sorted(_FAMILIES)}"
        )
    if dim is not None:
        d = dim
    if d is None:
        d = _DEFAULT_DIMS[fam]
    return _FAMILIES[fam](d)
