"""Reverse-process integrators.

Four drivers share the same step primitives: the unconditioned probability-flow
ODE, the measurement-conditioned ODE, the conditioned SDE (Euler-Maruyama), and
the restart driver that interleaves conditioned-ODE legs with re-noising.

Chains are vectorized: state x has shape (n_chains, d) and every chain evolves
independently under one shared RNG stream.  NFE counts denoiser evaluations
only; measurement-operator apply/vjp pairs are tallied separately.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .map_solver import AdamConfig, MapProblem, solve_map, solve_map_linear_exact
from .priors import denoise_at
from .schedules import StepGrid, ode_grid, restart_grid

__all__ = [
    "SamplerState",
    "RepsConfig",
    "RunResult",
    "uncond_ode_step",
    "cond_ode_step",
    "cond_sde_step",
    "restart",
    "uncond_ode_sample",
    "cond_ode_sample",
    "cond_sde_sample",
    "reps_sample",
    "restarts_for_budget",
    "conjugate_lambda",
]

LambdaLike = Union[float, Callable[[float], float]]


@dataclass
class SamplerState:
    """Mutable per-run bookkeeping: current iterate, level, and evaluation counts."""

    x: np.ndarray
    sigma: float
    nfe_denoiser: int = 0
    nfe_measurement: int = 0
    rng: Optional[np.random.Generator] = None


@dataclass
class RunResult:
    samples: np.ndarray
    snapshots: list = field(default_factory=list)
    nfe_denoiser: int = 0
    nfe_measurement: int = 0
    metrics: Optional[dict] = None


@dataclass
class RepsConfig:
    """All restart-driver knobs.

    lam may be a scalar or a callable sigma -> lambda evaluated at each step's
    starting level; exact_linear swaps the Adam inner solve for the dense
    closed form (linear operators only).
    """

    n_restarts: int
    sigma_restart: float
    map: AdamConfig
    lam: LambdaLike
    ode_steps_per_leg: int = 10
    sigma_min_restart: float = 0.1
    rho_ode: float = 7.0
    rho_restart: float = 15.0
    sigma_max: float = 100.0
    sigma_zero: float = 0.01
    final_step_to_zero: bool = False
    exact_linear: bool = False

    def __post_init__(self):
        if self.n_restarts < 0:
            raise ValueError("n_restarts must be >= 0")
        if self.sigma_restart < self.sigma_min_restart:
            raise ValueError("sigma_restart must be >= sigma_min_restart")
        if not callable(self.lam) and self.lam < 0.0:
            raise ValueError("lambda must be >= 0")

    @property
    def nfe_denoiser(self) -> int:
        return (self.n_restarts + 1) * self.ode_steps_per_leg


def restarts_for_budget(nfe_budget: int, ode_steps_per_leg: int,
                        include_initial_leg: bool = False) -> int:
    """Restart count for a target denoiser budget.

    With include_initial_leg=False (default), budget B buys B/steps restart
    legs on top of the initial descent, so the exact count is B + steps
    (the convention behind "1k" runs reporting 1010 evaluations).  With
    include_initial_leg=True the initial leg spends part of the budget and the
    exact count equals B.
    """
    if nfe_budget % ode_steps_per_leg != 0:
        raise ValueError("budget must be divisible by ode_steps_per_leg")
    n_legs = nfe_budget // ode_steps_per_leg
    return n_legs - 1 if include_initial_leg else n_legs


def conjugate_lambda(tau: float, sigma_n: float) -> Callable[[float], float]:
    """Level-dependent weight sigma_n^2 (1/sigma^2 + 1/tau^2).

    For an isotropic Gaussian prior with std tau, the MAP solve with this
    lambda equals the exact conditional denoiser E[x0 | x_sigma, y], making the
    conditioned ODE exact up to discretization.
    """
    if tau <= 0.0 or sigma_n <= 0.0:
        raise ValueError("tau and sigma_n must be positive")

    def lam(sigma: float) -> float:
        return sigma_n * sigma_n * (1.0 / (sigma * sigma) + 1.0 / (tau * tau))

    return lam


def _lam_value(lam: LambdaLike, sigma: float) -> float:
    return float(lam(sigma)) if callable(lam) else float(lam)


def uncond_ode_step(prior, x, sigma_from: float, sigma_to: float):
    """x + ((s_f - s_t)/s_f) (denoise(x, s_f) - x); one denoiser evaluation."""
    if not sigma_from >= sigma_to >= 0.0:
        raise ValueError("need sigma_from >= sigma_to >= 0")
    if sigma_from == sigma_to:
        return np.array(x, copy=True)
    x0 = denoise_at(prior, x, sigma_from)
    if sigma_to == 0.0:
        return x0
    h = (sigma_from - sigma_to) / sigma_from
    return x + h * (x0 - x)


def _x0_map(prior, model, obs, x, sigma, lam_val, map_cfg, exact_linear, matrix):
    """Conditioned denoiser: MAP solve anchored at the unconditional denoiser."""
    anchor = denoise_at(prior, x, sigma)
    problem = MapProblem(observation=obs, anchor=anchor, lam=lam_val)
    if exact_linear:
        return solve_map_linear_exact(problem, matrix=matrix), 0
    return solve_map(problem, anchor, map_cfg), map_cfg.n_steps


def cond_ode_step(prior, model, obs, x, sigma_from: float, sigma_to: float,
                  lam: LambdaLike, map_cfg: AdamConfig,
                  exact_linear: bool = False, matrix=None):
    if not sigma_from >= sigma_to >= 0.0:
        raise ValueError("need sigma_from >= sigma_to >= 0")
    if sigma_from == sigma_to:
        return np.array(x, copy=True)
    lam_val = _lam_value(lam, sigma_from)
    x0m, _ = _x0_map(prior, model, obs, x, sigma_from, lam_val, map_cfg,
                     exact_linear, matrix)
    if sigma_to == 0.0:
        return x0m
    h = (sigma_from - sigma_to) / sigma_from
    return x + h * (x0m - x)


def cond_sde_step(prior, model, obs, x, sigma_from: float, sigma_to: float,
                  lam: LambdaLike, map_cfg: AdamConfig, rng,
                  exact_linear: bool = False, matrix=None):
    """Euler-Maruyama step: doubled drift plus sqrt(2 s_f (s_f - s_t)) noise."""
    if not sigma_from >= sigma_to >= 0.0:
        raise ValueError("need sigma_from >= sigma_to >= 0")
    if sigma_from == sigma_to:
        return np.array(x, copy=True)
    lam_val = _lam_value(lam, sigma_from)
    x0m, _ = _x0_map(prior, model, obs, x, sigma_from, lam_val, map_cfg,
                     exact_linear, matrix)
    h = (sigma_from - sigma_to) / sigma_from
    z = rng.standard_normal(np.shape(x))
    return x + 2.0 * h * (x0m - x) + np.sqrt(2.0 * sigma_from * (sigma_from - sigma_to)) * z


def restart(x0, sigma_r: float, rng):
    """Re-noise a (near-)clean sample: x0 + sigma_r * z."""
    if sigma_r < 0.0:
        raise ValueError("sigma_r must be >= 0")
    if sigma_r == 0.0:
        return np.array(x0, copy=True)
    return x0 + sigma_r * rng.standard_normal(np.shape(x0))


def _leg_levels(sigma_start: float, sigma_zero: float, n_steps: int, rho: float,
                final_step_to_zero: bool) -> np.ndarray:
    levels = ode_grid(sigma_start, sigma_zero, n_steps, rho).levels.copy()
    if final_step_to_zero:
        levels[-1] = 0.0
    return levels


def _grid_levels(grid) -> np.ndarray:
    if isinstance(grid, StepGrid):
        return np.asarray(grid.levels, dtype=float)
    return np.asarray(grid, dtype=float)


def _init_chains(prior, sigma_start: float, rng, n_chains: int) -> np.ndarray:
    return rng.standard_normal((n_chains, prior.dim)) * sigma_start


def _run_cond_leg(prior, model, obs, state: SamplerState, levels, lam, map_cfg,
                  exact_linear, matrix, stochastic, snapshots, verbose):
    for i in range(len(levels) - 1):
        s_f, s_t = levels[i], levels[i + 1]
        lam_val = _lam_value(lam, s_f)
        x0m, n_meas = _x0_map(prior, model, obs, state.x, s_f, lam_val, map_cfg,
                              exact_linear, matrix)
        h = (s_f - s_t) / s_f
        if stochastic:
            z = state.rng.standard_normal(state.x.shape)
            state.x = state.x + 2.0 * h * (x0m - state.x) \
                + np.sqrt(2.0 * s_f * (s_f - s_t)) * z
        elif s_t == 0.0:
            state.x = x0m
        else:
            state.x = state.x + h * (x0m - state.x)
        state.sigma = s_t
        state.nfe_denoiser += 1
        state.nfe_measurement += n_meas
        if verbose and snapshots is not None:
            snapshots.append((float(s_t), state.x.copy()))


def uncond_ode_sample(prior, grid, rng, n_chains: int = 1) -> RunResult:
    """Integrate the unconditional probability-flow ODE over a level grid."""
    levels = _grid_levels(grid)
    x = _init_chains(prior, levels[0], rng, n_chains)
    state = SamplerState(x=x, sigma=float(levels[0]), rng=rng)
    for i in range(len(levels) - 1):
        state.x = uncond_ode_step(prior, state.x, levels[i], levels[i + 1])
        state.nfe_denoiser += 1
        state.sigma = float(levels[i + 1])
    return RunResult(samples=state.x, snapshots=[(state.sigma, state.x.copy())],
                     nfe_denoiser=state.nfe_denoiser, nfe_measurement=0)


def cond_ode_sample(prior, model, obs, grid, lam: LambdaLike, map_cfg: AdamConfig,
                    rng, n_chains: int = 1, exact_linear: bool = False,
                    verbose_snapshots: bool = False) -> RunResult:
    """Single conditioned-ODE pass from the top of the grid down."""
    levels = _grid_levels(grid)
    matrix = model.as_matrix() if exact_linear else None
    x = _init_chains(prior, levels[0], rng, n_chains)
    state = SamplerState(x=x, sigma=float(levels[0]), rng=rng)
    snapshots: list = []
    _run_cond_leg(prior, model, obs, state, levels, lam, map_cfg, exact_linear,
                  matrix, stochastic=False, snapshots=snapshots,
                  verbose=verbose_snapshots)
    snapshots.append((state.sigma, state.x.copy()))
    return RunResult(samples=state.x, snapshots=snapshots,
                     nfe_denoiser=state.nfe_denoiser,
                     nfe_measurement=state.nfe_measurement)


def cond_sde_sample(prior, model, obs, grid, lam: LambdaLike, map_cfg: AdamConfig,
                    rng, n_chains: int = 1, exact_linear: bool = False,
                    verbose_snapshots: bool = False) -> RunResult:
    """Single conditioned-SDE pass (continuous noise injection, no restarts)."""
    levels = _grid_levels(grid)
    matrix = model.as_matrix() if exact_linear else None
    x = _init_chains(prior, levels[0], rng, n_chains)
    state = SamplerState(x=x, sigma=float(levels[0]), rng=rng)
    snapshots: list = []
    _run_cond_leg(prior, model, obs, state, levels, lam, map_cfg, exact_linear,
                  matrix, stochastic=True, snapshots=snapshots,
                  verbose=verbose_snapshots)
    snapshots.append((state.sigma, state.x.copy()))
    return RunResult(samples=state.x, snapshots=snapshots,
                     nfe_denoiser=state.nfe_denoiser,
                     nfe_measurement=state.nfe_measurement)


def reps_sample(prior, model, obs, cfg: RepsConfig, rng, n_chains: int = 1,
                verbose_snapshots: bool = False) -> RunResult:
    """Restart driver.

    One conditioned-ODE leg from sigma_max down to sigma_zero, then for each
    annealed restart level (largest first): re-noise the leg output and run a
    fresh conditioned-ODE leg back down.  Snapshots record the state after each
    leg, keyed by the level the leg started from.  The restart treats the leg
    output as clean; the sigma_zero residual is deliberately ignored.
    """
    matrix = model.as_matrix() if cfg.exact_linear else None
    x = _init_chains(prior, cfg.sigma_max, rng, n_chains)
    state = SamplerState(x=x, sigma=cfg.sigma_max, rng=rng)
    snapshots: list = []
    levels = _leg_levels(cfg.sigma_max, cfg.sigma_zero, cfg.ode_steps_per_leg,
                         cfg.rho_ode, cfg.final_step_to_zero)
    _run_cond_leg(prior, model, obs, state, levels, cfg.lam, cfg.map,
                  cfg.exact_linear, matrix, stochastic=False,
                  snapshots=snapshots, verbose=verbose_snapshots)
    snapshots.append((cfg.sigma_max, state.x.copy()))
    if cfg.n_restarts >= 1:
        anneal = restart_grid(cfg.sigma_restart, cfg.sigma_min_restart,
                              cfg.n_restarts, cfg.rho_restart)
        for sigma_r in anneal.levels:
            state.x = restart(state.x, float(sigma_r), rng)
            state.sigma = float(sigma_r)
            levels = _leg_levels(float(sigma_r), cfg.sigma_zero,
                                 cfg.ode_steps_per_leg, cfg.rho_ode,
                                 cfg.final_step_to_zero)
            _run_cond_leg(prior, model, obs, state, levels, cfg.lam, cfg.map,
                          cfg.exact_linear, matrix, stochastic=False,
                          snapshots=snapshots, verbose=verbose_snapshots)
            snapshots.append((float(sigma_r), state.x.copy()))
    return RunResult(samples=state.x, snapshots=snapshots,
                     nfe_denoiser=state.nfe_denoiser,
                     nfe_measurement=state.nfe_measurement)
