"""Prediction-error estimation of the system dynamics, and the PE -> ECF pipeline."""

from __future__ import annotations

import numpy as np

from .ecf import (
    EcfGrid,
    ParamBox,
    _admissible_theta,
    _traj_parts,
    default_box,
    estimate_eta_known_theta,
    estimate_theta_known_eta,
    theta_names,
)
from .levy_noise import NoiseModel
from .linear_system import SisoSystem, Trajectory, innovation_filter, innovation_sensitivities
from .optim import Estimate, LeftDomain, OptimOptions, gauss_newton

__all__ = [
    "pe_cost",
    "estimate_pe",
    "estimate_pe_with_mean",
    "recenter",
    "combined_pe_ecf",
]


def pe_cost(traj, theta: SisoSystem, m: float = 0.0) -> float:
    """V_P = 1/2 sum (eps[n](theta) - m)^2."""
    dy, _ = _traj_parts(traj)
    e = innovation_filter(dy, theta) - m
    return 0.5 * float(e @ e)


def _pe_fit(dy, init: SisoSystem, m0, box, opts, with_mean):
    if init.dim == 0 and not with_mean:
        raise ValueError("identity system has no dynamics to estimate")
    names = theta_names(init) + (["m"] if with_mean else [])
    x0 = np.concatenate((init.theta, [m0] if with_mean else []))
    if not box.contains(names, x0):
        raise LeftDomain(f"initial point {dict(zip(names, x0))} outside the admissible box")
    lo, hi = box.limits(names)
    p = init.dim
    stable = _admissible_theta(init)

    def fun(x):
        theta = init.with_theta(x[:p])
        eps = innovation_filter(dy, theta)
        J = innovation_sensitivities(dy, theta, order=1, eps=eps)
        if with_mean:
            eps = eps - x[p]
            J = np.hstack((J, -np.ones((dy.size, 1))))
        return eps, J

    res = gauss_newton(fun, x0, lo, hi, admissible=lambda x: stable(x[:p]), opts=opts, cost_scale=0.5)
    theta = init.with_theta(res.x[:p])
    return Estimate(
        theta=theta,
        m=float(res.x[p]) if with_mean else None,
        cost=res.cost,
        grad_norm=res.grad_norm,
        iterations=res.iterations,
        converged=res.converged,
        trace=[{"stage": "pe-mean" if with_mean else "pe", "iterations": res.iterations, "cost": res.cost}],
    )


def estimate_pe(traj, init: SisoSystem, opts: OptimOptions = OptimOptions(), box: ParamBox | None = None) -> Estimate:
    """Minimize 1/2 sum eps[n](theta)^2 by Gauss-Newton on the innovations."""
    dy, _ = _traj_parts(traj)
    return _pe_fit(dy, init, 0.0, box or default_box(init), opts, with_mean=False)


def estimate_pe_with_mean(
    traj,
    init: tuple[SisoSystem, float],
    opts: OptimOptions = OptimOptions(),
    box: ParamBox | None = None,
) -> Estimate:
    """Joint (theta, m) minimizer of 1/2 sum (eps[n](theta) - m)^2.

    At the returned point ``m`` is the sample mean of eps[n](theta_hat); it is
    re-set exactly so the normal equation in m holds to rounding.
    """
    dy, _ = _traj_parts(traj)
    theta0, m0 = init
    est = _pe_fit(dy, theta0, float(m0), box or default_box(theta0, m=True), opts, with_mean=True)
    est.m = float(np.mean(innovation_filter(dy, est.theta)))
    return est


def recenter(traj, theta: SisoSystem, m: float) -> np.ndarray:
    """dy[n] - A(theta) m with zero initial conditions."""
    dy, _ = _traj_parts(traj)
    from scipy.signal import lfilter

    return dy - lfilter(theta.ma_poly, theta.ar_poly, np.full(dy.size, m))


def combined_pe_ecf(
    traj,
    init: SisoSystem,
    init_eta: NoiseModel,
    grid: EcfGrid,
    opts: OptimOptions = OptimOptions(),
    box: ParamBox | None = None,
    *,
    free_eta=None,
    with_mean: bool = False,
    theta_known: SisoSystem | None = None,
    second_pass_grid: EcfGrid | None = None,
) -> Estimate:
    """PE for theta, then ECF for eta on the innovations of the fitted system.

    Stage 1 (skipped when ``theta_known`` is given) estimates theta, plus the
    noise mean when ``with_mean`` is set. Stage 2 fits eta with theta frozen.
    If ``second_pass_grid`` is given, stage 3 re-estimates theta by ECF with
    eta_hat taken as exact, on data recentred by the stage-1 mean estimate.
    """
    dy, h = _traj_parts(traj)
    box = box or default_box(init, init_eta, m=with_mean)
    trace = []

    if theta_known is not None:
        theta_hat, m_hat = theta_known, None
    else:
        if with_mean:
            s1 = estimate_pe_with_mean(traj, (init, 0.0), opts, box)
        else:
            s1 = estimate_pe(traj, init, opts, box)
        theta_hat, m_hat = s1.theta, s1.m
        trace += s1.trace

    s2 = estimate_eta_known_theta(traj, theta_hat, init_eta, grid, box, opts, free_eta)
    trace += s2.trace
    result = Estimate(
        theta=theta_hat,
        eta=s2.eta,
        m=m_hat,
        cost=s2.cost,
        grad_norm=s2.grad_norm,
        iterations=s2.iterations,
        converged=s2.converged,
        trace=trace,
    )
    if second_pass_grid is None:
        return result

    if m_hat is not None:
        data = Trajectory(recenter(traj, theta_hat, m_hat), h=h)
        shift = m_hat
    else:
        data, shift = Trajectory(dy, h=h), 0.0
    s3 = estimate_theta_known_eta(data, theta_hat, s2.eta, second_pass_grid, box, opts, shift=shift)
    s3.trace[0]["stage"] = "ecf-second-pass"
    trace += s3.trace
    result.theta = s3.theta
    result.cost, result.grad_norm = s3.cost, s3.grad_norm
    result.iterations, result.converged = s3.iterations, s3.converged
    return result
