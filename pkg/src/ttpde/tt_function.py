"""Function approximants: TT coefficients contracted against the 1-d basis,
plus an optional additive multiple of the terminal condition g.

    V(x) = sum_{i1..id} c[i1,...,id] phi_{i1}(x_1) ... phi_{id}(x_d) + c_g g(x)

All evaluation routines are vectorized over points (rows of an (n, d) array);
first and second space derivatives are analytic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .basis import BasisSet
from .tensor_train import TensorTrain, frobenius_norm, tt_distance, tt_inner


class CapabilityError(RuntimeError):
    """A required derivative handle of g is missing."""


def _as_points(x, d):
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.shape[1] != d:
        raise ValueError(f"points have dimension {pts.shape[1]}, expected {d}")
    return pts, single


@dataclass(frozen=True, eq=False)
class TTFunction:
    tt: TensorTrain
    basis: BasisSet
    c_g: float = 0.0
    g: object = None  # terminal-condition bundle with value/grad/... handles

    def __post_init__(self):
        if self.g is None and self.c_g != 0.0:
            raise ValueError("c_g must be 0 when no g term is attached")
        for m in self.tt.mode_sizes:
            if m != self.basis.size:
                raise ValueError(
                    f"mode size {m} does not match basis size {self.basis.size}"
                )

    @property
    def dim(self) -> int:
        return self.tt.order

    def with_tt(self, tt: TensorTrain, c_g=None) -> "TTFunction":
        return replace(self, tt=tt, c_g=self.c_g if c_g is None else float(c_g))

    # -- evaluation ---------------------------------------------------------

    def _phis(self, pts, order=0):
        """Per-dimension basis data at the points: list of (n, m) arrays."""
        vals, d1, d2 = [], [], []
        for i in range(self.dim):
            v, a, b = self.basis.eval(pts[:, i])
            vals.append(v)
            if order >= 1:
                d1.append(a)
            if order >= 2:
                d2.append(b)
        return vals, d1, d2

    def values(self, x) -> np.ndarray:
        pts, single = _as_points(x, self.dim)
        phis, _, _ = self._phis(pts)
        out = _chain_values(self.tt.cores, phis)
        if self.c_g:
            out = out + self.c_g * self.g.value(pts)
        return out[0] if single else out

    def evaluate(self, x) -> float:
        return float(self.values(np.asarray(x, dtype=np.float64)))

    def gradient(self, x) -> np.ndarray:
        pts, single = _as_points(x, self.dim)
        phis, dphis, _ = self._phis(pts, order=1)
        left, right = _stacks(self.tt.cores, phis)
        n = pts.shape[0]
        out = np.empty((n, self.dim))
        for i, core in enumerate(self.tt.cores):
            out[:, i] = _mode_contraction(left[i], core, dphis[i], right[i])
        if self.c_g:
            self._require_g("grad")
            out = out + self.c_g * self.g.grad(pts)
        return out[0] if single else out

    def values_and_gradient(self, x):
        pts, single = _as_points(x, self.dim)
        phis, dphis, _ = self._phis(pts, order=1)
        left, right = _stacks(self.tt.cores, phis)
        vals = _mode_contraction(left[0], self.tt.cores[0], phis[0], right[0])
        n = pts.shape[0]
        grad = np.empty((n, self.dim))
        for i, core in enumerate(self.tt.cores):
            grad[:, i] = _mode_contraction(left[i], core, dphis[i], right[i])
        if self.c_g:
            self._require_g("grad")
            vals = vals + self.c_g * self.g.value(pts)
            grad = grad + self.c_g * self.g.grad(pts)
        if single:
            return vals[0], grad[0]
        return vals, grad

    def laplacian(self, x) -> np.ndarray:
        pts, single = _as_points(x, self.dim)
        phis, _, d2phis = self._phis(pts, order=2)
        left, right = _stacks(self.tt.cores, phis)
        n = pts.shape[0]
        out = np.zeros(n)
        for i, core in enumerate(self.tt.cores):
            out += _mode_contraction(left[i], core, d2phis[i], right[i])
        if self.c_g:
            self._require_g("laplacian")
            out = out + self.c_g * self.g.laplacian(pts)
        return out[0] if single else out

    def quad_form(self, x, w) -> np.ndarray:
        """sum_ij w_i w_j (d_i d_j V)(x) for per-point weight rows w."""
        pts, single = _as_points(x, self.dim)
        w = np.asarray(w, dtype=np.float64)
        if single:
            w = w[None, :]
        phis, dphis, d2phis = self._phis(pts, order=2)
        n = pts.shape[0]
        # generating-function pass: slot k accumulates terms with k derivative
        # insertions; mode factor phi + eps*w_i*phi' + eps^2*(w_i^2/2)*phi''
        s0 = np.ones((n, 1))
        s1 = np.zeros((n, 1))
        s2 = np.zeros((n, 1))
        for i, core in enumerate(self.tt.cores):
            a0 = np.einsum("nm,amb->nab", phis[i], core, optimize=True)
            a1 = np.einsum("nm,amb->nab", w[:, i, None] * dphis[i], core, optimize=True)
            a2 = np.einsum(
                "nm,amb->nab", (0.5 * w[:, i, None] ** 2) * d2phis[i], core, optimize=True
            )
            s2 = _bmm(s2, a0) + _bmm(s1, a1) + _bmm(s0, a2)
            s1 = _bmm(s1, a0) + _bmm(s0, a1)
            s0 = _bmm(s0, a0)
        out = 2.0 * s2[:, 0]
        if self.c_g:
            self._require_g("quad_form")
            out = out + self.c_g * self.g.quad_form(pts, w)
        return out[0] if single else out

    def hessian(self, x) -> np.ndarray:
        """Full matrix of second derivatives at a single point."""
        x = np.asarray(x, dtype=np.float64)
        pts = x[None, :]
        phis, dphis, d2phis = self._phis(pts, order=2)
        d = self.dim
        out = np.empty((d, d))
        for i in range(d):
            for j in range(i, d):
                rows = list(phis)
                if i == j:
                    rows[i] = d2phis[i]
                else:
                    rows[i] = dphis[i]
                    rows[j] = dphis[j]
                out[i, j] = out[j, i] = _chain_values(self.tt.cores, rows)[0]
        if self.c_g:
            self._require_g("hessian")
            out = out + self.c_g * self.g.hessian(x)
        return out

    # -- local bases for alternating optimization ---------------------------

    def local_basis(self, i: int, x) -> np.ndarray:
        """Basis of the least-squares subproblem for core i at point x.

        Entries are L[a] * phi_k(x_i) * R[b] flattened in core order (a, k, b),
        followed by g(x) when a g term is attached. The dot product with
        (vec(core_i), c_g) reproduces the function value.
        """
        if not 0 <= i < self.dim:
            raise IndexError(f"core index {i} out of range for dimension {self.dim}")
        pts, single = _as_points(x, self.dim)
        phis, _, _ = self._phis(pts)
        left, right = _stacks(self.tt.cores, phis)
        cols = np.einsum(
            "na,nm,nb->namb", left[i], phis[i], right[i], optimize=True
        ).reshape(pts.shape[0], -1)
        if self.g is not None:
            cols = np.hstack([cols, self.g.value(pts)[:, None]])
        return cols[0] if single else cols

    def coefficient_vector(self, i: int) -> np.ndarray:
        """vec(core_i) extended by c_g; pairs with local_basis."""
        v = self.tt.cores[i].reshape(-1)
        if self.g is not None:
            v = np.concatenate([v, [self.c_g]])
        return v

    # -- coefficient-space norms --------------------------------------------

    def coefficient_norm(self) -> float:
        return float(np.hypot(frobenius_norm(self.tt), self.c_g))

    def coefficient_distance(self, other: "TTFunction") -> float:
        return float(np.hypot(tt_distance(self.tt, other.tt), self.c_g - other.c_g))

    def _require_g(self, attr):
        if getattr(self.g, attr, None) is None:
            raise CapabilityError(f"terminal condition lacks a '{attr}' handle")


def _bmm(l, t):
    # (n, a) x (n, a, b) -> (n, b)
    return np.matmul(l[:, None, :], t)[:, 0, :]


def _chain_values(cores, phis) -> np.ndarray:
    n = phis[0].shape[0]
    l = np.ones((n, 1))
    for core, phi in zip(cores, phis):
        l = _bmm(l, np.einsum("nm,amb->nab", phi, core, optimize=True))
    return l[:, 0]


def _stacks(cores, phis):
    """Left environments L[i] (n, r_{i-1}) and right environments R[i] (n, r_i)."""
    d = len(cores)
    n = phis[0].shape[0]
    left = [None] * d
    left[0] = np.ones((n, 1))
    for i in range(d - 1):
        t = np.einsum("nm,amb->nab", phis[i], cores[i], optimize=True)
        left[i + 1] = _bmm(left[i], t)
    right = [None] * d
    right[d - 1] = np.ones((n, 1))
    for i in range(d - 1, 0, -1):
        t = np.einsum("nm,amb->nab", phis[i], cores[i], optimize=True)
        right[i - 1] = np.matmul(t, right[i][:, :, None])[:, :, 0]
    return left, right


def _mode_contraction(l, core, phi, r) -> np.ndarray:
    t = np.einsum("nm,amb->nab", phi, core, optimize=True)
    return np.einsum("na,nab,nb->n", l, t, r, optimize=True)
