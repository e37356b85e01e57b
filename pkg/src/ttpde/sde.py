"""Euler-Maruyama simulation of the forward process, keeping the Gaussian
increments for backward regression.

Sampling uses a Philox counter-based generator keyed by the run seed, so the
same seed reproduces identical paths within one build.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class SimulationError(RuntimeError):
    def __init__(self, path, step, state):
        self.path = path
        self.step = step
        self.state = state
        super().__init__(
            f"non-finite state at path {path}, step {step}: {np.asarray(state)}"
        )


@dataclass(frozen=True, eq=False)
class SamplePaths:
    x: np.ndarray    # (K, N+1, d) states
    xi: np.ndarray   # (K, N, d) standard-normal increments
    dt: float
    t: np.ndarray    # (N+1,) time grid
    seed: int

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def n_steps(self) -> int:
        return self.x.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.x.shape[2]


def _step(problem, x, t, xi, sqrt_dt, dt):
    return x + problem.drift(x, t) * dt + problem.sigma.apply(x, t, xi) * sqrt_dt


def simulate(problem, n_steps: int, n_paths: int, dt: float, seed: int) -> SamplePaths:
    """Simulate n_paths trajectories of n_steps Euler-Maruyama steps."""
    if n_paths < 2:
        raise ValueError("need at least 2 paths for a train/test split")
    if abs(n_steps * dt - problem.T) > 1e-12:
        raise ValueError(
            f"n_steps * dt = {n_steps * dt} does not match horizon T = {problem.T}"
        )
    d = problem.d
    rng = np.random.Generator(np.random.Philox(seed))
    x = np.empty((n_paths, n_steps + 1, d))
    xi = np.empty((n_paths, n_steps, d))
    x[:, 0, :] = problem.x0
    t = np.arange(n_steps + 1) * dt
    sqrt_dt = np.sqrt(dt)
    for n in range(n_steps):
        xi[:, n, :] = rng.standard_normal((n_paths, d))
        nxt = _step(problem, x[:, n, :], t[n], xi[:, n, :], sqrt_dt, dt)
        bad = ~np.isfinite(nxt).all(axis=1)
        if bad.any():
            k = int(np.argmax(bad))
            raise SimulationError(k, n + 1, nxt[k])
        x[:, n + 1, :] = nxt
    return SamplePaths(x=x, xi=xi, dt=float(dt), t=t, seed=int(seed))


def replay_matches(paths: SamplePaths, problem) -> bool:
    """Recompute every transition from the stored states and increments and
    compare bitwise against the stored next states."""
    sqrt_dt = np.sqrt(paths.dt)
    for n in range(paths.n_steps):
        nxt = _step(problem, paths.x[:, n, :], paths.t[n], paths.xi[:, n, :], sqrt_dt, paths.dt)
        if not np.array_equal(nxt, paths.x[:, n + 1, :]):
            return False
    return True


def dump_csv(paths: SamplePaths, file) -> None:
    """Write paths as rows (k, n, t, x_1, ..., x_d)."""
    writer = csv.writer(file)
    d = paths.dim
    writer.writerow(["k", "n", "t"] + [f"x_{i + 1}" for i in range(d)])
    for k in range(paths.n_paths):
        for n in range(paths.n_steps + 1):
            writer.writerow(
                [k, n, repr(float(paths.t[n]))] + [repr(float(v)) for v in paths.x[k, n]]
            )
