"""Mode dispatch and the Monte Carlo runner.

Replication ``r`` of an experiment with master seed ``S`` draws from
``numpy.random.default_rng(replication_seed(S, r))``, where
``replication_seed`` hashes ``(S, r)`` through ``numpy.random.SeedSequence``.
Replications are independent, so results do not depend on the worker count;
they are reduced in index order.
"""

from __future__ import annotations

import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import asymptotics as asy
from .config import ExperimentConfig
from .ecf import EcfGrid, JointParams, estimate_joint, estimate_theta_known_eta, theta_names
from .io import read_trajectory_csv, write_json, write_table_csv, write_trajectory_csv, atomic_write
from .levy_noise import cumulant, sample_increments, unit_variance
from .linear_system import Trajectory, forward_filter
from .optim import EstimationError, Estimate
from .pe import combined_pe_ecf, estimate_pe, estimate_pe_with_mean

__all__ = [
    "FailureBudgetExceeded",
    "McReport",
    "replication_seed",
    "simulate_trajectory",
    "resolve_grid",
    "run_replication",
    "run",
]

log = logging.getLogger(__name__)


class FailureBudgetExceeded(RuntimeError):
    pass


def replication_seed(master_seed: int, index: int) -> int:
    """Stable 64-bit seed for replication ``index``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def simulate_trajectory(cfg: ExperimentConfig, rng: np.random.Generator, seed: int | None = None) -> Trajectory:
    dz = sample_increments(cfg.n_samples, cfg.noise, cfg.sampling, rng=rng)
    meta = {"noise": cfg.noise.as_dict(), "system": cfg.system.as_dict(), "seed": seed, "h": cfg.sampling.h}
    return forward_filter(dz, cfg.system, h=cfg.sampling.h, meta=meta)


def resolve_grid(cfg: ExperimentConfig) -> EcfGrid:
    """The configured grid, or the single point minimizing the raw-scale ratio."""
    if cfg.grid is not None:
        return cfg.grid
    u = asy.optimal_u(cfg.noise, normalize=False, h=cfg.sampling.h).u
    return EcfGrid((u,))


def _eta_grid(cfg: ExperimentConfig) -> EcfGrid:
    if cfg.eta_grid is not None:
        return cfg.eta_grid
    g = resolve_grid(cfg)
    n_eta = len(cfg.free_eta) if cfg.free_eta is not None else len(cfg.noise.param_names)
    return g if 2 * g.k >= n_eta else EcfGrid.default(20)


# --- estimators per replication -------------------------------------------------


def _vector(est: Estimate, name: str, cfg: ExperimentConfig) -> dict:
    free = cfg.free_eta if cfg.free_eta is not None else cfg.noise.param_names
    out = {}
    if name in ("pe", "ecf", "joint", "combined") and est.theta is not None:
        out.update(zip(theta_names(est.theta), est.theta.theta))
    if name in ("combined", "joint") and est.eta is not None:
        ev = dict(zip(est.eta.param_names, est.eta.to_vector()))
        out.update({n: ev[n] for n in free})
    if est.m is not None:
        out["m"] = est.m
    return {k: float(v) for k, v in out.items()}


def _run_estimator(name: str, traj: Trajectory, cfg: ExperimentConfig, grid: EcfGrid, eta_grid: EcfGrid) -> Estimate:
    box, opts = cfg.domain_box, cfg.optim
    theta0 = cfg.init_system or cfg.system
    eta0 = cfg.init_noise or cfg.noise
    if name == "pe":
        if cfg.with_mean:
            return estimate_pe_with_mean(traj, (theta0, 0.0), opts, box)
        return estimate_pe(traj, theta0, opts, box)
    if name == "ecf":
        # centred samples are Z - E[Z]; the model cf is rotated to match
        shift = cumulant(1, cfg.noise, cfg.sampling.h) if cfg.sampling.center else 0.0
        return estimate_theta_known_eta(traj, theta0, cfg.noise, grid, box, opts, shift=shift)
    if name == "combined":
        second = grid if cfg.second_pass else None
        return combined_pe_ecf(
            traj, theta0, eta0, eta_grid, opts, box,
            free_eta=cfg.free_eta, with_mean=cfg.with_mean, second_pass_grid=second,
        )
    if name == "joint":
        return estimate_joint(traj, JointParams(theta0, eta0), eta_grid, box, opts, free_eta=cfg.free_eta)
    raise ValueError(f"unknown estimator {name!r}")


def run_replication(cfg: ExperimentConfig, index: int) -> dict:
    """Simulate and estimate one replication; failures are recorded, not raised."""
    seed = replication_seed(cfg.seed, index)
    rng = np.random.default_rng(seed)
    traj = simulate_trajectory(cfg, rng, seed)
    grid, eta_grid = resolve_grid(cfg), _eta_grid(cfg)
    rec = {"index": index, "seed": seed, "status": "ok", "estimates": {}}
    for name in cfg.estimators:
        try:
            est = _run_estimator(name, traj, cfg, grid, eta_grid)
        except (EstimationError, ValueError, ArithmeticError) as exc:
            rec["status"] = "failed"
            rec["error"] = f"{name}: {type(exc).__name__}: {exc}"
            break
        rec["estimates"][name] = {
            "params": _vector(est, name, cfg),
            "iterations": est.iterations,
            "converged": est.converged,
        }
    return rec


def _run_one(args):
    cfg, index = args
    try:
        return run_replication(cfg, index)
    except Exception as exc:  # pragma: no cover - defensive: keep the pool alive
        return {"index": index, "status": "failed", "error": "".join(traceback.format_exception_only(type(exc), exc)).strip()}


def _map_replications(cfg: ExperimentConfig, workers: int) -> list[dict]:
    jobs = [(cfg, r) for r in range(cfg.n_replications)]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return sorted(results, key=lambda r: r["index"])


# --- Monte Carlo report ---------------------------------------------------------


@dataclass
class McReport:
    per_replication: list
    n_samples: int
    n_replications: int
    estimators: dict = field(default_factory=dict)
    closed_form: dict = field(default_factory=dict)

    @property
    def n_success(self) -> int:
        return sum(r["status"] == "ok" for r in self.per_replication)

    @property
    def n_failed(self) -> int:
        return self.n_replications - self.n_success

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_replications": self.n_replications,
            "n_success": self.n_success,
            "n_failed": self.n_failed,
            "estimators": self.estimators,
            "closed_form": self.closed_form,
            "per_replication": self.per_replication,
        }


def closed_form_covariances(cfg: ExperimentConfig) -> dict:
    """Asymptotic N Cov per estimator, keyed like the empirical parameter vectors."""
    grid, eta_grid = resolve_grid(cfg), _eta_grid(cfg)
    h = cfg.sampling.h
    names = theta_names(cfg.system)
    free = list(cfg.free_eta if cfg.free_eta is not None else cfg.noise.param_names)
    sp = asy.sigma_p(cfg.system)
    out = {"grid": grid.as_dict(), "eta_grid": eta_grid.as_dict()}
    zero_mean = abs(cumulant(1, cfg.noise, h)) <= 1e-12
    if not zero_mean:
        out["note"] = "closed forms need a zero-mean noise law; only the PE block is reported"
    for name in cfg.estimators:
        if name == "pe":
            if cfg.with_mean:
                continue
            out[name] = {"params": names, "cov": sp}
        elif not zero_mean:
            continue
        elif name == "ecf":
            ratio = asy.grid_ratio(grid, cfg.noise, normalize=False, h=h)
            out[name] = {"params": names, "cov": ratio * sp, "ratio": ratio}
        elif name in ("combined", "joint"):
            eg = eta_grid
            eta_cov = asy.eta_covariance(eg, cfg.noise, h, free)
            if name == "joint":
                ratio = asy.grid_ratio(eg, cfg.noise, normalize=False, h=h)
                theta_cov = ratio * sp
            elif cfg.second_pass:
                ratio = asy.grid_ratio(grid, cfg.noise, normalize=False, h=h)
                theta_cov = ratio * sp
            else:
                theta_cov = sp
            d_t, d_e = len(names), len(free)
            cov = np.zeros((d_t + d_e, d_t + d_e))
            cov[:d_t, :d_t] = theta_cov
            cov[d_t:, d_t:] = eta_cov
            out[name] = {"params": names + free, "cov": cov}
    return out


def _aggregate(records: list[dict], cfg: ExperimentConfig, closed: dict) -> dict:
    ok = [r for r in records if r["status"] == "ok"]
    truth = dict(zip(theta_names(cfg.system), cfg.system.theta))
    truth.update(zip(cfg.noise.param_names, cfg.noise.to_vector()))
    out = {}
    for name in cfg.estimators:
        if not ok:
            out[name] = {"n": 0}
            continue
        keys = list(ok[0]["estimates"][name]["params"])
        X = np.array([[r["estimates"][name]["params"][k] for k in keys] for r in ok])
        mean = X.mean(axis=0)
        if len(ok) > 1:
            cov = cfg.n_samples * np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
        else:
            cov = np.full((len(keys), len(keys)), np.nan)
        entry = {
            "params": keys,
            "n": len(ok),
            "empirical_mean": mean,
            "bias": [float(m - truth[k]) if k in truth else None for k, m in zip(keys, mean)],
            "empirical_cov_scaled": cov,
        }
        cf = closed.get(name)
        if cf is not None and list(cf["params"]) == keys:
            c = np.asarray(cf["cov"], dtype=float)
            entry["closed_form_cov"] = c
            with np.errstate(divide="ignore", invalid="ignore"):
                entry["ratio_table"] = np.where(c != 0, cov / c, np.nan)
        out[name] = entry
    return out


def mc_validate(cfg: ExperimentConfig, workers: int | None = None) -> McReport:
    workers = cfg.workers if workers is None else workers
    records = _map_replications(cfg, workers)
    report = McReport(per_replication=records, n_samples=cfg.n_samples, n_replications=cfg.n_replications)
    budget = int(np.floor(cfg.failure_budget * cfg.n_replications))
    if report.n_failed > budget:
        raise FailureBudgetExceeded(
            f"{report.n_failed} of {cfg.n_replications} replications failed (budget {budget})"
        )
    report.closed_form = closed_form_covariances(cfg)
    report.estimators = _aggregate(records, cfg, report.closed_form)
    return report


# --- other modes ----------------------------------------------------------------


def _load_or_simulate(cfg: ExperimentConfig) -> Trajectory:
    if cfg.data:
        return read_trajectory_csv(cfg.data)
    seed = replication_seed(cfg.seed, 0)
    return simulate_trajectory(cfg, np.random.default_rng(seed), seed)


def efficiency(cfg: ExperimentConfig) -> dict:
    us = np.linspace(1e-3, cfg.u_max, cfg.n_scan)
    scan = asy.efficiency_scan(cfg.noise, us, normalize=True, h=cfg.sampling.h)
    opt = asy.optimal_u(cfg.noise, (1e-3, cfg.u_max), normalize=True, h=cfg.sampling.h)
    ks = np.arange(1, cfg.k_max + 1)
    k_table = np.array([[k, asy.grid_ratio(EcfGrid.default(int(k)), cfg.noise, True, cfg.sampling.h)] for k in ks])
    summary = {
        "noise": cfg.noise.as_dict(),
        "normalized_noise": unit_variance(cfg.noise).as_dict(),
        "u_opt": opt.u,
        "ratio_min": opt.ratio,
        "unimodal": opt.unimodal,
        "k_table": {str(int(k)): float(r) for k, r in k_table},
        "best_k": int(k_table[np.argmin(k_table[:, 1]), 0]),
    }
    if cfg.system.dim and abs(cumulant(1, cfg.noise, cfg.sampling.h)) <= 1e-12:
        summary["report"] = asy.asymptotic_report(
            cfg.system, cfg.noise, resolve_grid(cfg), cfg.sampling.h, cfg.free_eta, _eta_grid(cfg)
        )
    return {"summary": summary, "scan": scan, "k_table": k_table}


def run(cfg: ExperimentConfig, workers: int | None = None, out_dir=None):
    """Execute ``cfg.mode`` and write its outputs to ``out_dir`` (default ``cfg.output_dir``)."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.raw_text:
        atomic_write(out / "config.ini", cfg.raw_text)

    if cfg.mode == "simulate":
        traj = _load_or_simulate(cfg)
        write_trajectory_csv(out / "trajectory.csv", traj)
        write_json(out / "trajectory.json", {"N": len(traj), **traj.meta})
        return traj

    if cfg.mode == "efficiency":
        res = efficiency(cfg)
        write_table_csv(out / "efficiency_scan.csv", ["u", "g", "ratio"], res["scan"])
        write_table_csv(out / "k_table.csv", ["k", "ratio"], res["k_table"])
        write_json(out / "efficiency.json", res["summary"])
        return res["summary"]

    if cfg.mode == "mc-validate":
        report = mc_validate(cfg, workers)
        write_json(out / "mc_report.json", report)
        return report

    traj = _load_or_simulate(cfg)
    grid = resolve_grid(cfg)
    if cfg.mode == "estimate-pe":
        est = _run_estimator("pe", traj, cfg, grid, _eta_grid(cfg))
    elif cfg.mode == "estimate-combined":
        est = _run_estimator("combined", traj, cfg, grid, _eta_grid(cfg))
    else:  # estimate-ecf: joint ECF started from PE theta and the box centre for eta
        est = _estimate_ecf_default_init(traj, cfg)
    write_json(out / "estimate.json", est)
    return est


def _estimate_ecf_default_init(traj: Trajectory, cfg: ExperimentConfig) -> Estimate:
    theta0 = cfg.init_system
    if theta0 is None:
        theta0 = estimate_pe(traj, cfg.system, cfg.optim, cfg.domain_box).theta
    eta0 = cfg.init_noise
    if eta0 is None:
        names = list(cfg.noise.param_names)
        free = list(cfg.free_eta) if cfg.free_eta is not None else names
        vec = cfg.noise.to_vector()
        center = cfg.domain_box.center(free)
        for n, v in zip(free, center):
            vec[names.index(n)] = v
        eta0 = type(cfg.noise).from_vector(vec)
    return estimate_joint(traj, JointParams(theta0, eta0), _eta_grid(cfg), cfg.domain_box, cfg.optim, cfg.free_eta)
