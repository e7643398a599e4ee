"""Experiment runner behind the CLI.

Parses INI experiment configs, runs seeded (method x budget x seed) sweeps,
and writes a results CSV plus optional comparison figures.  Every run owns a
counter-based RNG stream keyed by (master_seed, seed, stream, ...) so sweeps
are reproducible run-for-run and safe to execute concurrently.

Stream layout per seed: 0 draws the ground truth, 1 draws measurement noise,
2 feeds the sampler (suffixed by method and budget indices), 3 builds
randomized tasks.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import plots
from .map_solver import AdamConfig
from .measurements import make_task, observe
from .metrics import MetricReport, mse, psnr, ssim
from .oracles import GridSpec, gaussian_linear_posterior, grid_posterior
from .priors import GaussianPrior, PerturbedScore, load_prior
from .samplers import (
    RepsConfig,
    cond_ode_sample,
    cond_sde_sample,
    conjugate_lambda,
    reps_sample,
    restarts_for_budget,
)
from .schedules import ode_grid

__all__ = [
    "ExperimentConfig",
    "RunRecord",
    "load_config",
    "run_experiment",
    "ablate_ode_steps",
    "emit_outputs",
    "emit_ablation",
    "read_records",
    "resolve_out_dir",
]

STREAM_TRUTH = 0
STREAM_OBS = 1
STREAM_SAMPLER = 2
STREAM_TASK = 3

CSV_COLUMNS = ["method", "task", "nfe", "seed", "psnr", "ssim", "mse",
               "post_mean_err", "tv", "wall_s", "error"]

OUT_ENV_VAR = "REPS_OUT"

KNOWN_METHODS = ("ode", "sde", "reps")


@dataclass
class ExperimentConfig:
    name: str
    methods: list
    nfe_budgets: list
    seeds: list
    master_seed: int
    chains: int
    prior_fixture: str
    perturb_eps: float
    perturb_seed: int
    task_name: str
    dims: tuple
    sigma_n: Optional[float]
    task_params: dict
    lam: object
    eta: Optional[float]
    map_steps: Optional[int]
    sigma_restart: Optional[float]
    ode_steps_per_leg: int
    sigma_min_restart: float
    rho_ode: float
    rho_restart: float
    sigma_max: float
    sigma_zero: float
    final_step_to_zero: bool
    exact_linear: bool
    include_initial_leg: bool
    oracle_kind: str
    oracle_bounds: Optional[list]
    oracle_resolution: int
    oracle_supersample: int
    peak: float
    ssim_window: int
    out: Optional[str]
    config_hash: str = ""

    def __post_init__(self):
        if not self.methods or not self.nfe_budgets or not self.seeds:
            raise ValueError("need at least one method, one budget, and one seed")
        for m in self.methods:
            if m not in KNOWN_METHODS:
                raise ValueError(f"unknown method {m!r}")
        if not Path(self.prior_fixture).exists():
            raise FileNotFoundError(self.prior_fixture)
        for key, val in self.task_params.items():
            if key.endswith("file") and not Path(val).exists():
                raise FileNotFoundError(val)
        if not self.config_hash:
            self.config_hash = _hash_config(self)


def _hash_config(cfg: ExperimentConfig) -> str:
    """Order-independent hash of the scientific fields (output path excluded)."""
    payload = {}
    for key, val in vars(cfg).items():
        if key in ("out", "config_hash"):
            continue
        if isinstance(val, tuple):
            val = list(val)
        payload[key] = val
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _parse_scalar(text: str):
    t = text.strip()
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        pass
    if t.lower() in ("true", "yes", "on"):
        return True
    if t.lower() in ("false", "no", "off"):
        return False
    return t


def _parse_list(text: str):
    return [_parse_scalar(t) for t in text.split(",") if t.strip()]


def _parse_bounds(text: str):
    if text.strip().lower() == "auto":
        return None
    out = []
    for part in text.split(","):
        lo, hi = part.split(":")
        out.append((float(lo), float(hi)))
    return out


def load_config(path) -> ExperimentConfig:
    """Read an INI experiment description; paths resolve relative to the file."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as fh:
        parser.read_file(fh)
    base = path.parent

    exp = parser["experiment"] if parser.has_section("experiment") else {}
    prior_sec = parser["prior"] if parser.has_section("prior") else {}
    task_sec = parser["task"] if parser.has_section("task") else {}
    samp = parser["sampler"] if parser.has_section("sampler") else {}
    orac = parser["oracle"] if parser.has_section("oracle") else {}

    fixture = str((base / prior_sec.get("fixture", "")).resolve())
    task_params = {}
    for key in task_sec:
        if key in ("name", "dims", "sigma_n"):
            continue
        val = task_sec[key]
        if key.endswith("file"):
            task_params[key] = str((base / val).resolve())
        elif "," in val:
            task_params[key] = _parse_list(val)
        else:
            parsed = _parse_scalar(val)
            task_params[key] = [parsed] if key == "indices" else parsed

    lam_raw = samp.get("lambda", None)
    lam = "conjugate" if (lam_raw or "").strip() == "conjugate" else (
        float(lam_raw) if lam_raw is not None else None)

    dims_raw = task_sec.get("dims", None)
    dims = tuple(int(v) for v in _parse_list(dims_raw)) if dims_raw else None

    cfg = ExperimentConfig(
        name=exp.get("name", path.stem),
        methods=[str(m) for m in _parse_list(exp.get("methods", "reps"))],
        nfe_budgets=[int(b) for b in _parse_list(exp.get("nfe_budgets", "1000"))],
        seeds=[int(s) for s in _parse_list(exp.get("seeds", "0"))],
        master_seed=int(exp.get("master_seed", 0)),
        chains=int(exp.get("chains", 1)),
        prior_fixture=fixture,
        perturb_eps=float(prior_sec.get("perturb_eps", 0.0)),
        perturb_seed=int(prior_sec.get("perturb_seed", 2024)),
        task_name=task_sec.get("name", "identity"),
        dims=dims,
        sigma_n=float(task_sec["sigma_n"]) if "sigma_n" in task_sec else None,
        task_params=task_params,
        lam=lam,
        eta=float(samp["eta"]) if "eta" in samp else None,
        map_steps=int(samp["map_steps"]) if "map_steps" in samp else None,
        sigma_restart=float(samp["sigma_restart"]) if "sigma_restart" in samp else None,
        ode_steps_per_leg=int(samp.get("ode_steps_per_leg", 10)),
        sigma_min_restart=float(samp.get("sigma_min_restart", 0.1)),
        rho_ode=float(samp.get("rho_ode", 7.0)),
        rho_restart=float(samp.get("rho_restart", 15.0)),
        sigma_max=float(samp.get("sigma_max", 100.0)),
        sigma_zero=float(samp.get("sigma_zero", 0.01)),
        final_step_to_zero=samp.get("final_step_to_zero", "false").lower() in ("true", "yes", "on"),
        exact_linear=samp.get("exact_linear", "false").lower() in ("true", "yes", "on"),
        include_initial_leg=samp.get("include_initial_leg_in_budget", "false").lower() in ("true", "yes", "on"),
        oracle_kind=orac.get("kind", "none"),
        oracle_bounds=_parse_bounds(orac.get("bounds", "auto")),
        oracle_resolution=int(orac.get("resolution", 128)),
        oracle_supersample=int(orac.get("supersample", 4)),
        peak=float(exp.get("peak", 1.0)),
        ssim_window=int(exp.get("ssim_window", 8)),
        out=exp.get("out", None),
    )
    return cfg


@dataclass
class RunRecord:
    method: str
    task: str
    nfe: int
    seed: int
    wall_s: Optional[float] = None
    report: Optional[MetricReport] = None
    error: str = ""
    config_hash: str = ""

    def csv_row(self) -> list:
        r = self.report
        vals = {
            "method": self.method,
            "task": self.task,
            "nfe": self.nfe,
            "seed": self.seed,
            "psnr": None if r is None else r.psnr,
            "ssim": None if r is None else r.ssim,
            "mse": None if r is None else r.mse,
            "post_mean_err": None if r is None else r.posterior_mean_err,
            "tv": None if r is None else r.tv_distance,
            "wall_s": self.wall_s,
            "error": self.error or None,
        }
        out = []
        for col in CSV_COLUMNS:
            v = vals[col]
            if v is None:
                out.append("")
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        return out


def _materialize(cfg: ExperimentConfig):
    """Prior, tuned defaults, task model, and lambda object from the config."""
    prior, fixture_params = load_prior(cfg.prior_fixture)
    eta = cfg.eta if cfg.eta is not None else fixture_params.get("eta")
    map_steps = cfg.map_steps if cfg.map_steps is not None else fixture_params.get("map_steps")
    lam = cfg.lam if cfg.lam is not None else fixture_params.get("lambda")
    sigma_restart = cfg.sigma_restart if cfg.sigma_restart is not None \
        else fixture_params.get("sigma_restart")

    dims = cfg.dims if cfg.dims is not None else (prior.dim,)
    if int(np.prod(dims)) != prior.dim:
        raise ValueError("task dims do not match the prior dimension")
    params = dict(cfg.task_params)
    if cfg.sigma_n is not None:
        params["sigma_n"] = cfg.sigma_n
    task_rng = np.random.default_rng((cfg.master_seed, 0, STREAM_TASK))
    model = make_task(cfg.task_name, dims, params, rng=task_rng)

    if lam == "conjugate":
        if not isinstance(prior, GaussianPrior):
            raise ValueError("conjugate lambda needs an isotropic Gaussian prior")
        diag = np.diag(prior.cov)
        if np.max(np.abs(prior.cov - diag[0] * np.eye(prior.dim))) > 1e-12:
            raise ValueError("conjugate lambda needs an isotropic Gaussian prior")
        lam_obj = conjugate_lambda(float(np.sqrt(diag[0])), model.sigma_n)
    elif lam is None:
        if not cfg.exact_linear:
            raise ValueError("no lambda given in config or fixture file")
        lam_obj = 0.0
    else:
        lam_obj = float(lam)

    if cfg.perturb_eps > 0.0:
        prior = PerturbedScore(prior, cfg.perturb_eps, cfg.perturb_seed)

    if not cfg.exact_linear and (eta is None or map_steps is None):
        raise ValueError("Adam solves need eta and map_steps (config or fixture file)")
    map_cfg = AdamConfig(eta=float(eta), n_steps=int(map_steps)) \
        if eta is not None and map_steps is not None else None
    return prior, model, lam_obj, map_cfg, sigma_restart


def _oracle_for(cfg: ExperimentConfig, prior, model, obs):
    if cfg.oracle_kind == "none":
        return None
    base = prior.base if isinstance(prior, PerturbedScore) else prior
    if cfg.oracle_kind == "gaussian_linear":
        return gaussian_linear_posterior(base, model.as_matrix(), obs.y, model.sigma_n)
    if cfg.oracle_kind == "grid":
        spec = GridSpec(bounds=cfg.oracle_bounds, resolution=cfg.oracle_resolution,
                        supersample=cfg.oracle_supersample)
        return grid_posterior(base, model, obs, spec)
    raise ValueError(f"unknown oracle kind {cfg.oracle_kind!r}")


def _run_report(cfg: ExperimentConfig, samples, obs, oracle) -> MetricReport:
    recon = samples[0]
    truth = obs.ground_truth
    if truth is not None:
        m = mse(recon, truth)
        p = psnr(recon, truth, peak=cfg.peak)
        try:
            s = ssim(recon, truth, window=cfg.ssim_window, peak=cfg.peak)
        except ValueError:
            s = None  # signal shorter than the window
    else:
        m = p = s = None
    pme = tv = None
    if oracle is not None:
        chain_mean = samples.mean(axis=0)
        if hasattr(oracle, "table"):
            pme = float(np.linalg.norm(chain_mean - oracle.mean()))
            tv = float(oracle.tv_to_samples(samples))
        else:
            pme = float(np.linalg.norm(chain_mean - oracle[0]))
    return MetricReport(psnr=p, ssim=s, mse=m, posterior_mean_err=pme, tv_distance=tv)


def _execute(cfg, prior, model, lam_obj, map_cfg, sigma_restart,
             method, budget, seed, mi, bi, obs, oracle) -> RunRecord:
    rng = np.random.default_rng((cfg.master_seed, seed, STREAM_SAMPLER, mi, bi))
    t0 = time.perf_counter()
    try:
        if method == "reps":
            if sigma_restart is None:
                raise ValueError("reps needs sigma_restart (config or fixture file)")
            n_restarts = restarts_for_budget(budget, cfg.ode_steps_per_leg,
                                             cfg.include_initial_leg)
            rcfg = RepsConfig(
                n_restarts=n_restarts, sigma_restart=float(sigma_restart),
                map=map_cfg, lam=lam_obj,
                ode_steps_per_leg=cfg.ode_steps_per_leg,
                sigma_min_restart=cfg.sigma_min_restart,
                rho_ode=cfg.rho_ode, rho_restart=cfg.rho_restart,
                sigma_max=cfg.sigma_max, sigma_zero=cfg.sigma_zero,
                final_step_to_zero=cfg.final_step_to_zero,
                exact_linear=cfg.exact_linear)
            res = reps_sample(prior, model, obs, rcfg, rng, n_chains=cfg.chains)
        else:
            grid = ode_grid(cfg.sigma_max, cfg.sigma_zero, budget, cfg.rho_ode)
            sampler = cond_ode_sample if method == "ode" else cond_sde_sample
            res = sampler(prior, model, obs, grid, lam_obj, map_cfg, rng,
                          n_chains=cfg.chains, exact_linear=cfg.exact_linear)
        report = _run_report(cfg, res.samples, obs, oracle)
        wall = time.perf_counter() - t0
        return RunRecord(method=method, task=cfg.task_name, nfe=res.nfe_denoiser,
                         seed=seed, wall_s=wall, report=report,
                         config_hash=cfg.config_hash)
    except Exception as exc:  # per-run isolation: a failure never kills the sweep
        wall = time.perf_counter() - t0
        return RunRecord(method=method, task=cfg.task_name, nfe=budget, seed=seed,
                         wall_s=wall, report=None,
                         error=f"{type(exc).__name__}: {exc}",
                         config_hash=cfg.config_hash)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> list:
    """Run the full (method x budget x seed) sweep described by cfg."""
    prior, model, lam_obj, map_cfg, sigma_restart = _materialize(cfg)
    jobs = max(1, int(jobs))

    per_seed = {}
    for seed in cfg.seeds:
        truth_rng = np.random.default_rng((cfg.master_seed, seed, STREAM_TRUTH))
        x_true = prior.sample(1, truth_rng)[0]
        obs_rng = np.random.default_rng((cfg.master_seed, seed, STREAM_OBS))
        obs = observe(model, x_true, obs_rng)
        oracle = _oracle_for(cfg, prior, model, obs)
        per_seed[seed] = (obs, oracle)

    tasks = []
    for mi, method in enumerate(cfg.methods):
        for bi, budget in enumerate(cfg.nfe_budgets):
            for seed in cfg.seeds:
                obs, oracle = per_seed[seed]
                tasks.append((method, budget, seed, mi, bi, obs, oracle))

    def worker(args):
        method, budget, seed, mi, bi, obs, oracle = args
        return _execute(cfg, prior, model, lam_obj, map_cfg, sigma_restart,
                        method, budget, seed, mi, bi, obs, oracle)

    if jobs == 1:
        records = [worker(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(worker, tasks))
    records.sort(key=lambda r: (r.method, r.nfe, r.seed))
    return records


def ablate_ode_steps(cfg: ExperimentConfig, steps_list, total_nfe: int,
                     jobs: int = 1) -> list:
    """RePS quality versus ODE steps per restart leg at a fixed total budget.

    Each entry runs with n_restarts = total_nfe/steps - 1, so the whole budget
    (initial leg included) is exactly total_nfe.  Returns (steps, RunRecord)
    pairs.
    """
    for steps in steps_list:
        if total_nfe % int(steps) != 0:
            raise ValueError(f"total_nfe {total_nfe} not divisible by steps {steps}")
    rows = []
    for steps in steps_list:
        sub = ExperimentConfig(**{**vars(cfg),
                                  "methods": ["reps"],
                                  "nfe_budgets": [total_nfe],
                                  "ode_steps_per_leg": int(steps),
                                  "include_initial_leg": True,
                                  "config_hash": ""})
        for rec in run_experiment(sub, jobs=jobs):
            rows.append((int(steps), rec))
    return rows


def resolve_out_dir(cfg_out, cli_out=None) -> Path:
    """CLI flag wins, then the REPS_OUT environment variable, then the config."""
    if cli_out:
        return Path(cli_out)
    env = os.environ.get(OUT_ENV_VAR)
    if env:
        return Path(env)
    if cfg_out:
        return Path(cfg_out)
    return Path("reps_out")


def _aggregate(records, metric: str):
    """Mean metric over seeds per (method, nfe); skips records missing it."""
    groups = {}
    for r in records:
        if r.report is None:
            continue
        v = getattr(r.report, metric)
        if v is None or (isinstance(v, float) and math.isinf(v)):
            continue
        groups.setdefault((r.method, r.nfe), []).append(v)
    rows = [(m, nfe, float(np.mean(vs)), len(vs)) for (m, nfe), vs in sorted(groups.items())]
    return rows


_FIG_METRICS = [("psnr", "psnr"), ("post_mean_err", "posterior_mean_err"),
                ("tv", "tv_distance")]


def emit_outputs(records, out_dir, plots_enabled: bool = False) -> list:
    """Write results.csv, per-figure data tables, and optional line plots.

    Returns the manifest of written paths.  CSV cells for missing metrics are
    empty, never NaN text.
    """
    if not records:
        raise ValueError("no records to write")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []

    results = out_dir / "results.csv"
    with open(results, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(r.csv_row())
    manifest.append(str(results))

    for col, attr in _FIG_METRICS:
        rows = _aggregate(records, attr)
        if not rows:
            continue
        data = out_dir / f"fig_{col}.csv"
        with open(data, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "nfe", f"mean_{col}", "n_seeds"])
            for m, nfe, v, n in rows:
                writer.writerow([m, nfe, repr(v), n])
        manifest.append(str(data))
        if plots_enabled:
            png = out_dir / f"fig_{col}.png"
            plots.plot_metric_vs_nfe(rows, col, png)
            manifest.append(str(png))
    return manifest


def emit_ablation(rows, out_dir, plots_enabled: bool = False) -> list:
    """Write the steps-per-leg ablation table (and optional figure)."""
    if not rows:
        raise ValueError("no ablation rows to write")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    path = out_dir / "ablation.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["steps"] + CSV_COLUMNS)
        for steps, rec in rows:
            writer.writerow([steps] + rec.csv_row())
    manifest.append(str(path))
    if plots_enabled:
        png = out_dir / "fig_ablation.png"
        plots.plot_ablation(rows, png)
        manifest.append(str(png))
    return manifest


def read_records(path) -> list:
    """Parse results.csv back into RunRecords (round-trip inverse of emit)."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            def fval(key):
                return float(row[key]) if row[key] != "" else None
            has_report = any(row[k] != "" for k in ("psnr", "ssim", "mse",
                                                    "post_mean_err", "tv"))
            report = MetricReport(psnr=fval("psnr"), ssim=fval("ssim"),
                                  mse=fval("mse"),
                                  posterior_mean_err=fval("post_mean_err"),
                                  tv_distance=fval("tv")) if has_report else None
            out.append(RunRecord(method=row["method"], task=row["task"],
                                 nfe=int(row["nfe"]), seed=int(row["seed"]),
                                 wall_s=fval("wall_s"), report=report,
                                 error=row["error"]))
    return out
