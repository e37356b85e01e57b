"""Alternating least squares for sampled regression in the TT format.

Sweeps update one core at a time by solving the regularized normal equations
of the local least-squares problem; the terminal condition g can ride along
as one extra column of every local design matrix. Orthogonality is maintained
around the active core so the Frobenius regularizer acts on the full
coefficient tensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .tensor_train import TensorTrain
from .tt_function import TTFunction, _bmm


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class RankPolicy:
    kind: str  # "fixed" or "adaptive"
    ranks: tuple

    @staticmethod
    def fixed(ranks) -> "RankPolicy":
        return RankPolicy("fixed", tuple(int(r) for r in ranks))

    @staticmethod
    def adaptive(max_ranks) -> "RankPolicy":
        return RankPolicy("adaptive", tuple(int(r) for r in max_ranks))


@dataclass
class ALSConfig:
    max_sweeps: int = 25
    no_change_tol: float = 1e-4   # sweep-to-sweep residual change threshold
    reg_constant: float = 1.0     # regularization strength relative to residual
    rank_policy: RankPolicy | None = None
    include_g: bool = True
    cond_limit: float = 1e12
    track_objective: bool = False
    seed: int = 0                 # noise seed for rank-adaptation padding


@dataclass
class RegressionData:
    points: np.ndarray   # (J, d)
    targets: np.ndarray  # (J,)
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.train_idx = np.asarray(self.train_idx, dtype=np.intp)
        self.test_idx = np.asarray(self.test_idx, dtype=np.intp)
        if self.points.ndim != 2 or self.targets.shape != (self.points.shape[0],):
            raise DataError("points must be (J, d) with matching J-vector targets")
        if self.points.shape[0] < 2:
            raise DataError("need at least 2 samples for a train/test split")
        if np.any(~np.isfinite(self.targets)):
            raise DataError("NaN or infinite value in regression targets")
        a, b = set(self.train_idx.tolist()), set(self.test_idx.tolist())
        if a & b or len(self.train_idx) != len(self.test_idx):
            raise DataError("train and test sets must be disjoint halves of equal size")

    @staticmethod
    def split_half(points, targets) -> "RegressionData":
        """First half of the rows trains, second half tests."""
        j = np.asarray(points).shape[0]
        half = j // 2
        return RegressionData(
            points, targets, np.arange(half), np.arange(half, 2 * half)
        )


@dataclass
class ALSReport:
    sweeps: int = 0
    train_rms: list = field(default_factory=list)  # per sweep
    test_rms: list = field(default_factory=list)
    pinv_solves: int = 0
    converged: bool = False
    objective_pairs: list = field(default_factory=list)  # (before, after) per solve


def _rms(v) -> float:
    return float(np.sqrt(np.mean(v**2))) if len(v) else 0.0


def _solve_local(a_train, r_train, eta, cond_limit):
    """Ridge solution of min ||A c - r||^2 + eta ||c||^2; returns (c, used_pinv)."""
    gram = a_train.T @ a_train
    m = gram.shape[0]
    if eta > 0:
        gram = gram + eta * np.eye(m)
    rhs = a_train.T @ r_train
    try:
        c, low = scipy.linalg.cho_factor(gram, lower=False, check_finite=False)
        anorm = np.abs(gram).sum(axis=0).max()
        rcond = lapack.dpocon(c, anorm, uplo=b"U")[0]
        if rcond > 1.0 / cond_limit:
            return scipy.linalg.cho_solve((c, low), rhs, check_finite=False), False
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        pass
    # ill-conditioned or singular: exact ridge via SVD of the design matrix
    u, s, vt = np.linalg.svd(a_train, full_matrices=False)
    if eta > 0:
        w = s / (s**2 + eta)
    else:
        cutoff = s[0] * 1e-14 if s.size else 0.0
        w = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return vt.T @ (w * (u.T @ r_train)), True


def _transfer(phi, core):
    return np.einsum("nm,amb->nab", phi, core, optimize=True)


def _qr_push_right(cores, i):
    rl, m, rr = cores[i].shape
    q, r = np.linalg.qr(cores[i].reshape(rl * m, rr))
    cores[i] = q.reshape(rl, m, q.shape[1])
    cores[i + 1] = np.tensordot(r, cores[i + 1], axes=(1, 0))


def _qr_push_left(cores, i):
    rl, m, rr = cores[i].shape
    q, r = np.linalg.qr(cores[i].reshape(rl, m * rr).T)
    cores[i] = q.T.reshape(q.shape[1], m, rr)
    cores[i - 1] = np.tensordot(cores[i - 1], r.T, axes=(2, 0))


class _Sweeper:
    """Mutable state of one ALS run: working cores, c_g, per-point basis data.

    Internally the basis is rescaled by sqrt(b - a) per dimension (and the
    cores inversely), i.e. coefficients live in the gauge of the
    measure-normalized interval. The represented functions are unchanged, but
    the Frobenius ridge then penalizes O(1) coefficients for O(1) functions
    in every dimension d; in the raw gauge the constant function alone has
    coefficient norm (b-a)^(d/2), which would let the regularizer crush it."""

    def __init__(self, data: RegressionData, init: TTFunction, cfg: ALSConfig):
        self.cfg = cfg
        self.data = data
        self.basis = init.basis
        self.g = init.g if cfg.include_g and init.g is not None else None
        self.cg = float(init.c_g) if self.g is not None else 0.0
        self.scale = np.sqrt(self.basis.b - self.basis.a)
        self.cores = [np.array(c) / self.scale for c in init.tt.cores]
        self.d = len(self.cores)
        pts = data.points
        self.phis = [
            self.scale * self.basis.eval_values(pts[:, i]) for i in range(self.d)
        ]
        self.gcol = self.g.value(pts) if self.g is not None else None
        self.train = data.train_idx
        self.test = data.test_idx
        self.r = data.targets
        # canonicalize: right-orthogonal cores after position 0
        for i in range(self.d - 1, 0, -1):
            _qr_push_left(self.cores, i)

    def model_values(self) -> np.ndarray:
        n = self.data.points.shape[0]
        l = np.ones((n, 1))
        for core, phi in zip(self.cores, self.phis):
            l = _bmm(l, _transfer(phi, core))
        vals = l[:, 0]
        if self.g is not None:
            vals = vals + self.cg * self.gcol
        return vals

    def _design(self, left, i, right):
        a = np.einsum(
            "na,nm,nb->namb", left, self.phis[i], right, optimize=True
        ).reshape(self.data.points.shape[0], -1)
        if self.g is not None:
            a = np.hstack([a, self.gcol[:, None]])
        return a

    def _local_step(self, a, i, eta, report):
        shape = self.cores[i].shape
        m_i = shape[0] * shape[1] * shape[2]
        if self.cfg.track_objective:
            before = self._objective(a, i, eta)
        c, used_pinv = _solve_local(a[self.train], self.r[self.train], eta, self.cfg.cond_limit)
        if used_pinv:
            report.pinv_solves += 1
        self.cores[i] = c[:m_i].reshape(shape)
        if self.g is not None:
            self.cg = float(c[m_i])
        if self.cfg.track_objective:
            report.objective_pairs.append((before, self._objective(a, i, eta)))
        return a @ c

    def _objective(self, a, i, eta):
        c = self.cores[i].reshape(-1)
        if self.g is not None:
            c = np.concatenate([c, [self.cg]])
        res = a[self.train] @ c - self.r[self.train]
        return float(res @ res + eta * (c @ c))

    def forward_pass(self, eta, report):
        right = [None] * self.d
        right[self.d - 1] = np.ones((self.data.points.shape[0], 1))
        for i in range(self.d - 1, 0, -1):
            t = _transfer(self.phis[i], self.cores[i])
            right[i - 1] = np.matmul(t, right[i][:, :, None])[:, :, 0]
        left = np.ones((self.data.points.shape[0], 1))
        vals = None
        for i in range(self.d):
            a = self._design(left, i, right[i])
            vals = self._local_step(a, i, eta, report)
            if i < self.d - 1:
                _qr_push_right(self.cores, i)
                left = _bmm(left, _transfer(self.phis[i], self.cores[i]))
        return vals

    def backward_pass(self, eta, report):
        left = [None] * self.d
        left[0] = np.ones((self.data.points.shape[0], 1))
        for i in range(self.d - 1):
            left[i + 1] = _bmm(left[i], _transfer(self.phis[i], self.cores[i]))
        right = np.ones((self.data.points.shape[0], 1))
        vals = None
        for i in range(self.d - 1, -1, -1):
            a = self._design(left[i], i, right)
            vals = self._local_step(a, i, eta, report)
            if i > 0:
                _qr_push_left(self.cores, i)
                t = _transfer(self.phis[i], self.cores[i])
                right = np.matmul(t, right[:, :, None])[:, :, 0]
        return vals

    def result(self, init: TTFunction) -> TTFunction:
        cores = [c * self.scale for c in self.cores]
        return init.with_tt(TensorTrain(cores), c_g=self.cg)


def solve(data: RegressionData, init: TTFunction, cfg: ALSConfig):
    """Alternate core updates (forward then backward per sweep) until the
    train or test residual stalls. Returns (fitted function, report)."""
    if init.tt.order != data.points.shape[1]:
        raise DataError(
            f"init has {init.tt.order} cores but points have dimension "
            f"{data.points.shape[1]}"
        )
    sweeper = _Sweeper(data, init, cfg)
    report = ALSReport()
    resid0 = sweeper.model_values() - data.targets
    w = _rms(resid0[data.train_idx])
    prev_train = w
    prev_test = _rms(resid0[data.test_idx])
    for sweep in range(cfg.max_sweeps):
        eta = cfg.reg_constant * w
        sweeper.forward_pass(eta, report)
        vals = sweeper.backward_pass(eta, report)
        resid = vals - data.targets
        train = _rms(resid[data.train_idx])
        test = _rms(resid[data.test_idx])
        report.sweeps = sweep + 1
        report.train_rms.append(train)
        report.test_rms.append(test)
        tol = cfg.no_change_tol
        if (
            prev_train <= 0.0
            or prev_test <= 0.0
            or abs(train - prev_train) / prev_train < tol
            or abs(test - prev_test) / prev_test < tol
        ):
            report.converged = True
            break
        prev_train, prev_test = train, test
        w = train
    return sweeper.result(init), report


def _pad_bond(f: TTFunction, bond: int, rng) -> TTFunction:
    """Grow bond `bond` (between cores bond and bond+1) by one, filling the new
    slices with small noise relative to the core scale."""
    cores = [np.array(c) for c in f.tt.cores]
    lhs, rhs = cores[bond], cores[bond + 1]
    scale_l = 1e-6 * (float(np.linalg.norm(lhs)) / np.sqrt(lhs.size) or 1.0)
    scale_r = 1e-6 * (float(np.linalg.norm(rhs)) / np.sqrt(rhs.size) or 1.0)
    pad_l = scale_l * rng.standard_normal((lhs.shape[0], lhs.shape[1], 1))
    pad_r = scale_r * rng.standard_normal((1, rhs.shape[1], rhs.shape[2]))
    cores[bond] = np.concatenate([lhs, pad_l], axis=2)
    cores[bond + 1] = np.concatenate([rhs, pad_r], axis=0)
    return f.with_tt(TensorTrain(cores))


def adapt_ranks(f: TTFunction, data: RegressionData, cfg: ALSConfig):
    """Greedy rank growth: after a converged fixed-rank pass, raise the bond
    whose one-sweep trial reduces the train residual most; keep the increment
    only if the test residual improves by at least 2%."""
    if cfg.rank_policy is None or cfg.rank_policy.kind != "adaptive":
        raise ValueError("adapt_ranks requires an adaptive rank policy")
    max_ranks = cfg.rank_policy.ranks
    best_f, best_rep = solve(data, f, cfg)
    rng = np.random.default_rng(cfg.seed)
    one_sweep_cfg = replace(cfg, max_sweeps=1, track_objective=False)
    while True:
        ranks = best_f.tt.ranks
        bonds = [b for b in range(len(ranks)) if ranks[b] < max_ranks[b]]
        if not bonds:
            break
        base_train = best_rep.train_rms[-1]
        trial_scores = []
        for b in bonds:
            trial = _pad_bond(best_f, b, rng)
            _, rep1 = solve(data, trial, one_sweep_cfg)
            trial_scores.append((base_train - rep1.train_rms[-1], b))
        gain, bond = max(trial_scores)
        if gain <= 0:
            break
        cand, cand_rep = solve(data, _pad_bond(best_f, bond, rng), cfg)
        if cand_rep.test_rms[-1] <= 0.98 * best_rep.test_rms[-1]:
            best_f, best_rep = cand, cand_rep
        else:
            break
    return best_f, best_rep
