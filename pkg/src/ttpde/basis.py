"""One-dimensional polynomial ansatz functions, orthonormal in H^2(a, b).

The inner product is <f, g> = int_a^b (f g + f' g' + f'' g'') dx with unit
weights. Construction runs modified Gram-Schmidt on monomials with one
re-orthogonalization pass; all inner products use closed-form monomial
integrals, no quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DEGREE = 12
GRAM_TOL = 1e-8


class ConditioningError(RuntimeError):
    pass


def _monomial_integral(k: int, a: float, b: float) -> float:
    return (b ** (k + 1) - a ** (k + 1)) / (k + 1)


def h2_monomial_gram(a: float, b: float, degree: int) -> np.ndarray:
    """H^2(a,b) Gram matrix of the monomials 1, x, ..., x^degree."""
    n = degree + 1
    g = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            s = _monomial_integral(i + j, a, b)
            if i >= 1 and j >= 1:
                s += i * j * _monomial_integral(i + j - 2, a, b)
            if i >= 2 and j >= 2:
                s += i * (i - 1) * j * (j - 1) * _monomial_integral(i + j - 4, a, b)
            g[i, j] = s
    return g


@dataclass(frozen=True, eq=False)
class BasisSet:
    """m = degree+1 polynomials, orthonormal in H^2(a, b).

    coeffs[k] holds the monomial coefficients (low order first) of the k-th
    function; the matrix is lower-triangular.
    """

    a: float
    b: float
    degree: int
    coeffs: np.ndarray

    @property
    def size(self) -> int:
        return self.degree + 1

    @property
    def interval(self) -> tuple:
        return (self.a, self.b)

    def eval(self, x):
        """Values, first and second derivatives at x (scalar or 1-d array).

        Returns three arrays of shape (..., m); derivatives are the exact
        analytic derivatives of the polynomials.
        """
        x = np.asarray(x, dtype=np.float64)
        n = self.degree + 1
        pw = np.ones(x.shape + (n,))
        for k in range(1, n):
            pw[..., k] = pw[..., k - 1] * x
        vals = pw @ self.coeffs.T
        d1 = pw[..., : n - 1] @ self._dcoeffs.T if n > 1 else np.zeros_like(vals)
        d2 = pw[..., : n - 2] @ self._d2coeffs.T if n > 2 else np.zeros_like(vals)
        return vals, d1, d2

    def eval_values(self, x):
        return self.eval(x)[0]

    @property
    def _dcoeffs(self):
        c = self.coeffs
        return c[:, 1:] * np.arange(1, c.shape[1])

    @property
    def _d2coeffs(self):
        c = self.coeffs
        k = np.arange(2, c.shape[1])
        return c[:, 2:] * (k * (k - 1))

    def gram_error(self) -> float:
        """Worst deviation of the H^2 Gram matrix from the identity."""
        g = h2_monomial_gram(self.a, self.b, self.degree)
        gram = self.coeffs @ g @ self.coeffs.T
        return float(np.max(np.abs(gram - np.eye(self.size))))


def build_basis(a: float, b: float, degree: int) -> BasisSet:
    """Construct the H^2(a,b)-orthonormal polynomial basis of the given degree."""
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if degree > MAX_DEGREE:
        raise ValueError(f"degree {degree} exceeds supported maximum {MAX_DEGREE}")
    a, b = float(a), float(b)
    n = degree + 1
    gram = h2_monomial_gram(a, b, degree)

    def inner(u, v):
        return u @ gram @ v

    c = np.eye(n)
    for _ in range(2):  # MGS plus one re-orthogonalization pass
        for k in range(n):
            for j in range(k):
                c[k] -= inner(c[k], c[j]) * c[j]
            nrm = np.sqrt(inner(c[k], c[k]))
            if not np.isfinite(nrm) or nrm <= 0:
                raise ConditioningError(
                    f"Gram-Schmidt broke down at degree {k} on ({a}, {b})"
                )
            c[k] /= nrm
    basis = BasisSet(a=a, b=b, degree=degree, coeffs=c)
    err = basis.gram_error()
    if err > GRAM_TOL:
        raise ConditioningError(
            f"H^2 Gram matrix deviates from identity by {err:.3e} "
            f"(tolerance {GRAM_TOL:.0e}) on ({a}, {b}) at degree {degree}"
        )
    return basis


def interval_from_samples(samples: np.ndarray, margin: float = 0.1) -> tuple:
    """Basis interval from the range of simulated states, padded by `margin`
    times the range on each side."""
    lo = float(np.min(samples))
    hi = float(np.max(samples))
    span = hi - lo
    if span <= 0:
        span = max(abs(lo), 1.0)
    return (lo - margin * span, hi + margin * span)
