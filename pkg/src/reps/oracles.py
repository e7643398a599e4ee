"""Ground-truth posteriors for validating samplers.

Two oracles: the conjugate closed form for Gaussian priors with linear
operators, and a brute-force quadrature table on a 1-d or 2-d lattice for
anything else (including nonlinear operators with multi-modal posteriors).

Grid cells are integrated by midpoint supersampling rather than evaluated at
cell centers: posteriors narrower than a cell would otherwise bias cell
masses, which shows up directly in total-variation comparisons.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "GridSpec",
    "GridOracle",
    "gaussian_linear_posterior",
    "grid_posterior",
    "compare_samples",
    "prior_moments",
]


def prior_moments(prior):
    """(mean, covariance) of a prior; mixtures use the law of total covariance."""
    base = getattr(prior, "base", None)
    if base is not None:
        return prior_moments(base)
    if hasattr(prior, "components"):
        w = prior.weights
        means = np.stack([c.mean for c in prior.components])
        mean = w @ means
        cov = np.zeros((prior.dim, prior.dim))
        for wk, c in zip(w, prior.components):
            d = c.mean - mean
            cov += wk * (c.cov + np.outer(d, d))
        return mean, cov
    return prior.mean.copy(), prior.cov.copy()


def gaussian_linear_posterior(prior, A, y, sigma_n: float):
    """Exact posterior N(mu_post, Sigma_post) for y = A x + noise.

    Sigma_post = (Sigma^-1 + A^T A / sigma_n^2)^-1
    mu_post    = Sigma_post (Sigma^-1 mu + A^T y / sigma_n^2)
    """
    if sigma_n <= 0.0:
        raise ValueError("sigma_n must be positive")
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    mean, cov = prior.mean, prior.cov
    prec_prior = np.linalg.inv(cov)  # raises LinAlgError on singular prior
    prec = prec_prior + A.T @ A / (sigma_n * sigma_n)
    cov_post = np.linalg.inv(prec)
    cov_post = 0.5 * (cov_post + cov_post.T)
    mu_post = cov_post @ (prec_prior @ mean + A.T @ y / (sigma_n * sigma_n))
    return mu_post, cov_post


@dataclass
class GridSpec:
    """Lattice description; bounds default to prior mean +/- 6 std per dimension."""

    bounds: Optional[list] = None
    resolution: int = 128
    supersample: int = 4

    def __post_init__(self):
        if self.resolution < 64:
            raise ValueError("resolution must be >= 64 per dimension")
        if self.supersample < 1:
            raise ValueError("supersample must be >= 1")


class GridOracle:
    """Normalized posterior table on a rectangular lattice (d <= 2)."""

    def __init__(self, edges: list, table: np.ndarray):
        self.edges = [np.asarray(e, dtype=float) for e in edges]
        self.table = np.asarray(table, dtype=float)
        self.dim = len(self.edges)
        if self.dim > 2:
            raise ValueError("grid oracle supports d <= 2 only")
        total = self.table.sum()
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"table is not normalized: sum = {total}")
        self.midpoints = [0.5 * (e[:-1] + e[1:]) for e in self.edges]

    def _mesh(self):
        if self.dim == 1:
            return self.midpoints[0][:, None]
        X, Y = np.meshgrid(self.midpoints[0], self.midpoints[1], indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def mean(self) -> np.ndarray:
        pts = self._mesh()
        return self.table.ravel() @ pts

    def cov(self) -> np.ndarray:
        pts = self._mesh()
        m = self.mean()
        diff = pts - m
        return (diff * self.table.ravel()[:, None]).T @ diff

    def mode(self) -> np.ndarray:
        idx = np.unravel_index(np.argmax(self.table), self.table.shape)
        return np.array([self.midpoints[k][idx[k]] for k in range(self.dim)])

    def sample(self, n: int, rng) -> np.ndarray:
        """Categorical draw over cells with uniform jitter inside each cell."""
        flat = self.table.ravel()
        cells = rng.choice(flat.size, size=n, p=flat)
        idx = np.unravel_index(cells, self.table.shape)
        out = np.empty((n, self.dim))
        for k in range(self.dim):
            e = self.edges[k]
            lo = e[idx[k]]
            w = e[idx[k] + 1] - e[idx[k]]
            out[:, k] = lo + w * rng.random(n)
        return out

    def tv_to_samples(self, samples) -> float:
        """TV between the sample histogram (on this grid) and the table.

        Sample mass outside the grid counts fully against the oracle, which has
        none there.
        """
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        hist, _ = np.histogramdd(samples, bins=self.edges)
        p = hist / samples.shape[0]
        inside = p.sum()
        return 0.5 * (np.abs(p - self.table).sum() + (1.0 - inside))


def _auto_bounds(prior):
    mean, cov = prior_moments(prior)
    std = np.sqrt(np.diag(cov))
    return [(m - 6.0 * s, m + 6.0 * s) for m, s in zip(mean, std)]


def grid_posterior(prior, model, obs, grid_spec: GridSpec) -> GridOracle:
    """Brute-force posterior table proportional to p(x) N(y; A(x), sigma_n^2 I).

    Each cell mass is the average posterior density over supersample^d interior
    midpoints times the cell volume (plain midpoint quadrature per cell).
    """
    d = model.n_in
    if d > 2:
        raise ValueError("grid oracle supports d <= 2 only")
    if model.sigma_n <= 0.0:
        raise ValueError("grid posterior needs sigma_n > 0")
    bounds = grid_spec.bounds if grid_spec.bounds is not None else _auto_bounds(prior)
    if len(bounds) != d:
        raise ValueError("bounds do not match dimension")
    nb = grid_spec.resolution
    ss = grid_spec.supersample
    edges = [np.linspace(lo, hi, nb + 1) for lo, hi in bounds]
    # fine lattice of nb*ss midpoints per dimension
    fine = []
    for (lo, hi) in bounds:
        h = (hi - lo) / (nb * ss)
        fine.append(lo + (np.arange(nb * ss) + 0.5) * h)
    if d == 1:
        pts = fine[0][:, None]
    else:
        X, Y = np.meshgrid(fine[0], fine[1], indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    log_prior = prior.logpdf_smoothed(pts, 0.0)
    resid = model.apply(pts) - obs.y
    log_lik = -0.5 * np.sum(resid * resid, axis=1) / (model.sigma_n**2)
    log_post = log_prior + log_lik
    peak = np.max(log_post)
    if not np.isfinite(peak):
        raise ValueError("posterior vanishes on the whole grid")
    dens = np.exp(log_post - peak)
    if d == 1:
        cell = dens.reshape(nb, ss).mean(axis=1)
    else:
        cell = dens.reshape(nb, ss, nb, ss).mean(axis=(1, 3))
    total = cell.sum()
    if total <= 0.0:
        raise ValueError("measurement incompatible with grid bounds")
    return GridOracle(edges=edges, table=cell / total)


def compare_samples(samples, oracle) -> dict:
    """Moment errors (and TV for grid oracles) of a sample cloud vs an oracle.

    oracle is either a GridOracle or a (mean, covariance) pair.  Covariance
    error is Frobenius, relative to the oracle covariance norm.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] < 100:
        raise ValueError("need at least 100 samples")
    s_mean = samples.mean(axis=0)
    s_cov = np.cov(samples.T, bias=True).reshape(samples.shape[1], samples.shape[1])
    if isinstance(oracle, GridOracle):
        o_mean, o_cov = oracle.mean(), oracle.cov()
        tv = oracle.tv_to_samples(samples)
    else:
        o_mean, o_cov = oracle
        tv = None
    out = {
        "mean_err": float(np.linalg.norm(s_mean - o_mean)),
        "cov_frob_err": float(np.linalg.norm(s_cov - o_cov) / np.linalg.norm(o_cov)),
    }
    if tv is not None:
        out["tv"] = float(tv)
    return out
