"""Inner MAP solves.

Each conditioned integrator step minimizes

    0.5 * ||y - A(x)||^2 + (lambda/2) * ||x - anchor||^2

where the anchor is the unconditional denoiser output.  The production path is
a fixed number of Adam iterations (no early stopping, so evaluation counts stay
exact); a dense closed-form solver covers linear operators as a test oracle and
as a fast exact path for small problems.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .measurements import Observation

__all__ = [
    "MapProblem",
    "AdamConfig",
    "map_objective",
    "map_gradient",
    "solve_map",
    "solve_map_linear_exact",
]


@dataclass
class MapProblem:
    observation: Observation
    anchor: np.ndarray
    lam: float

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=float)
        if self.lam < 0.0:
            raise ValueError("lambda must be >= 0")
        if self.anchor.shape[-1] != self.observation.model.n_in:
            raise ValueError("anchor dimension does not match operator input")


@dataclass(frozen=True)
class AdamConfig:
    eta: float
    n_steps: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    def __post_init__(self):
        if self.eta < 0.0:
            raise ValueError("eta must be >= 0")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


def map_objective(p: MapProblem, x):
    """0.5 ||y - A(x)||^2 + (lambda/2) ||x - anchor||^2, batched over rows."""
    x = np.asarray(x, dtype=float)
    r = p.observation.model.apply(x) - p.observation.y
    dx = x - p.anchor
    return 0.5 * np.sum(r * r, axis=-1) + 0.5 * p.lam * np.sum(dx * dx, axis=-1)


def map_gradient(p: MapProblem, x):
    """Exact gradient: vjp(A, x, A(x) - y) + lambda (x - anchor)."""
    x = np.asarray(x, dtype=float)
    model = p.observation.model
    r = model.apply(x) - p.observation.y
    return model.vjp(x, r) + p.lam * (x - p.anchor)


def solve_map(p: MapProblem, init, cfg: AdamConfig):
    """Run exactly cfg.n_steps Adam iterations from init.

    Deterministic; moment buffers start at zero for every solve.  Raises on a
    non-finite objective so silent divergence cannot leak into a sampler chain.
    """
    x = np.array(init, dtype=float, copy=True)
    model = p.observation.model
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2 = cfg.beta1, cfg.beta2
    # divergence is detected by the finiteness check below, so intermediate
    # overflow warnings carry no extra information
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, cfg.n_steps + 1):
            r = model.apply(x) - p.observation.y
            g = model.vjp(x, r) + p.lam * (x - p.anchor)
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            mhat = m / (1.0 - b1**t)
            vhat = v / (1.0 - b2**t)
            x = x - cfg.eta * mhat / (np.sqrt(vhat) + cfg.eps_adam)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(
            f"MAP solve diverged: non-finite iterate after {cfg.n_steps} Adam steps "
            f"(eta={cfg.eta}, lambda={p.lam})"
        )
    return x


def solve_map_linear_exact(p: MapProblem, matrix: np.ndarray | None = None):
    """Closed form (A^T A + lambda I)^{-1} (A^T y + lambda * anchor).

    Requires a linear operator; the dense matrix is taken from the model unless
    supplied (callers looping over noise levels can pass a cached copy).
    Batched anchors share one Cholesky factorization.
    """
    model = p.observation.model
    if matrix is None:
        matrix = model.as_matrix()
    n = matrix.shape[1]
    h = matrix.T @ matrix + p.lam * np.eye(n)
    rhs = p.observation.y @ matrix + p.lam * p.anchor
    if p.lam == 0.0 and np.linalg.matrix_rank(matrix) < n:
        raise np.linalg.LinAlgError("singular system: lambda = 0 with rank-deficient A")
    factor = cho_factor(h)
    return cho_solve(factor, np.asarray(rhs, dtype=float).T).T
