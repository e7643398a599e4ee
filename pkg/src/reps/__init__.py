"""Restart posterior sampling for inverse problems with analytic diffusion priors.

The library pairs measurement-conditioned reverse-diffusion integrators (ODE,
SDE, and the restart driver) with exact score models and brute-force posterior
oracles, so sampler output can be validated against ground truth instead of
eyeballed.
"""
from .map_solver import (
    AdamConfig,
    MapProblem,
    map_gradient,
    map_objective,
    solve_map,
    solve_map_linear_exact,
)
from .measurements import (
    MeasurementModel,
    Observation,
    load_kernel,
    load_mask,
    make_task,
    observe,
)
from .metrics import MetricReport, mse, psnr, ssim
from .oracles import (
    GridOracle,
    GridSpec,
    compare_samples,
    gaussian_linear_posterior,
    grid_posterior,
)
from .priors import (
    GaussianPrior,
    GmmPrior,
    PerturbedScore,
    denoise_at,
    load_prior,
    score_at,
)
from .samplers import (
    RepsConfig,
    RunResult,
    SamplerState,
    cond_ode_sample,
    cond_ode_step,
    cond_sde_sample,
    cond_sde_step,
    conjugate_lambda,
    reps_sample,
    restart,
    restarts_for_budget,
    uncond_ode_sample,
    uncond_ode_step,
)
from .schedules import NoiseSchedule, StepGrid, ode_grid, polynomial_level, restart_grid

__version__ = "0.1.0"
