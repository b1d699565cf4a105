"""Closed-form asymptotic covariances of the ECF and PE estimators.

For the ECF estimator of theta the Hessian of the asymptotic cost and the score
covariance are scalar multiples of the innovation-sensitivity Gram matrix
Gamma = E[eps_theta eps_theta^T]:

    W_theta_theta = w Gamma,   Cov(score_theta) = s Gamma,

so N Cov(theta_hat_ECF) -> (s / w^2) Gamma^{-1}. With unit-variance noise
Gamma^{-1} is the PE covariance Sigma_P. For other variances the comparable
ratio is s / (w^2 Var(Z)), which is what ``ratio`` reports throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import lfilter

from .ecf import EcfGrid
from .levy_noise import NoiseModel, char_exponent, char_fn, char_fn_eta_grad, cumulant, sample_increments, SamplingConfig, unit_variance, variance
from .linear_system import SisoSystem, forward_filter, innovation_sensitivities

__all__ = [
    "AsymptoticReport",
    "w_scalar",
    "f_aux",
    "s_scalar",
    "eta_blocks",
    "eta_covariance",
    "sensitivity_gram",
    "sigma_p",
    "efficiency_g",
    "single_term_ratio",
    "grid_ratio",
    "optimal_u",
    "efficiency_scan",
    "asymptotic_report",
]

_IMAG_TOL = 1e-12


def _real(z, scale, what):
    z = np.asarray(z)
    tol = _IMAG_TOL * max(1.0, float(scale))
    if np.max(np.abs(z.imag), initial=0.0) > tol:
        raise ArithmeticError(f"{what}: imaginary residue {np.max(np.abs(z.imag)):.3g} exceeds {tol:.1g}")
    return z.real


def w_scalar(grid: EcfGrid, eta: NoiseModel, h: float = 1.0) -> float:
    """sum K^-1_lm ((u_l^2 + u_m^2) phi(u_l) phi(-u_m) - (u_l - u_m)^2 phi(u_l - u_m))."""
    u = grid.points
    ul, um = u[:, None], u[None, :]
    terms = grid.K_inv * (
        (ul**2 + um**2) * char_fn(ul, h, eta) * char_fn(-um, h, eta) - (ul - um) ** 2 * char_fn(ul - um, h, eta)
    )
    total = terms.sum()
    return float(_real(total, np.abs(terms).sum(), "w"))


def f_aux(a, b, c, d, eta: NoiseModel, h: float = 1.0):
    """F(a,b,c,d) = ab[phi(a+b+c+d) - phi(a+b+c)phi(d) - phi(a+b+d)phi(c) + phi(a+b)phi(c)phi(d)]."""
    a, b, c, d = (np.asarray(x, dtype=float) for x in (a, b, c, d))

    def phi(x):
        return char_fn(x, h, eta)

    ab = a + b
    return a * b * (phi(ab + c + d) - phi(ab + c) * phi(d) - phi(ab + d) * phi(c) + phi(ab) * phi(c) * phi(d))


def s_scalar(grid: EcfGrid, eta: NoiseModel, h: float = 1.0) -> float:
    """Variance scalar of the theta-score: Cov(V_theta)/N = s Gamma.

    Quadruple sum over the grid of K^-1_lm K^-1_st times four F terms. The sum
    carries an overall minus sign: each F collects (i a)(i b) = -ab from the
    two derivative factors of the score.
    """
    u = grid.points
    l, m, s, t = np.ix_(u, u, u, u)
    Ki = grid.K_inv
    KK = Ki[:, :, None, None] * Ki[None, None, :, :]
    terms = KK * (
        f_aux(l, s, -m, -t, eta, h)
        + f_aux(l, -t, -m, s, eta, h)
        + f_aux(-m, s, l, -t, eta, h)
        + f_aux(-m, -t, l, s, eta, h)
    )
    total = -terms.sum()
    return float(_real(total, np.abs(terms).sum(), "s"))


def _eta_grad(grid, eta, h, free_eta):
    d_phi = char_fn_eta_grad(grid.points, h, eta)
    if free_eta is not None:
        names = list(eta.param_names)
        d_phi = d_phi[:, [names.index(n) for n in free_eta]]
    return d_phi


def eta_blocks(grid: EcfGrid, eta: NoiseModel, h: float = 1.0, free_eta=None) -> tuple[np.ndarray, np.ndarray]:
    """(W_eta_eta, per-observation covariance of the eta-score) at the true eta.

    The score covariance is E[v v^T] with
    v_j = -sum_lm K^-1_lm (phi_j(u_l) h(-u_m) + phi_j(-u_m) h(u_l)) and
    E[h(a) h(b)] = phi(a+b) - phi(a) phi(b).
    """
    u = grid.points
    Ki = grid.K_inv
    d_pos = _eta_grad(grid, eta, h, free_eta)  # phi_eta(u_l)
    d_neg = d_pos.conj()  # phi_eta(-u_l)

    # (W)_jj' = sum_lm Ki_lm (d_j(u_l) d_j'(-u_m) + d_j'(u_l) d_j(-u_m))
    A = d_pos.T @ Ki @ d_neg
    W_terms = A + A.T
    W = _real(W_terms, np.abs(d_pos).sum() ** 2 * np.abs(Ki).max(), "W_eta_eta")

    # v_j = -(sum_m beta_jm h(-u_m) + sum_l gamma_jl h(u_l))
    beta = Ki @ d_pos  # (k, dim): sum_l Ki_lm phi_j(u_l), indexed by m
    gamma_ = Ki @ d_neg  # sum_m Ki_lm phi_j(-u_m), indexed by l
    freq = np.concatenate((-u, u))
    coef = np.vstack((beta, gamma_))  # (2k, dim)
    pair = char_fn(freq[:, None] + freq[None, :], h, eta) - np.outer(char_fn(freq, h, eta), char_fn(freq, h, eta))
    cov_terms = coef.T @ pair @ coef
    cov = _real(cov_terms, np.abs(coef).sum() ** 2 * 2, "Cov(V_eta)")
    return 0.5 * (W + W.T), 0.5 * (cov + cov.T)


def eta_covariance(grid: EcfGrid, eta: NoiseModel, h: float = 1.0, free_eta=None) -> np.ndarray:
    """Asymptotic N Cov(eta_hat) = W^-1 Cov(v) W^-1 for the ECF noise fit."""
    W, cov = eta_blocks(grid, eta, h, free_eta)
    Wi = np.linalg.inv(W)
    out = Wi @ cov @ Wi
    return 0.5 * (out + out.T)


def _impulse(b, a, tol=1e-17, max_len=1_000_000):
    n = 256
    while True:
        x = np.zeros(n)
        x[0] = 1.0
        g = lfilter(b, a, x)
        if np.max(np.abs(g[-16:])) < tol * max(1.0, np.abs(g).max()) or n >= max_len:
            return g
        n *= 4


def sensitivity_gram(theta: SisoSystem) -> np.ndarray:
    """E[eps_theta eps_theta^T] at the true theta for unit-variance white noise.

    At the truth, d eps/d a_i = q^-i Z / a(q) and d eps/d c_j = -q^-j Z / c(q),
    so the Gram matrix is a sum of products of delayed impulse responses.
    """
    p, q = theta.p, theta.q
    if p + q == 0:
        raise ValueError("identity system: theta is empty")
    ga = _impulse([1.0], theta.ar_poly) if p else np.zeros(1)
    gc = _impulse([1.0], theta.ma_poly) if q else np.zeros(1)
    L = max(ga.size, gc.size) + p + q + 1
    rows = []
    for i in range(p):
        r = np.zeros(L)
        r[i + 1 : i + 1 + ga.size] = ga
        rows.append(r)
    for j in range(q):
        r = np.zeros(L)
        r[j + 1 : j + 1 + gc.size] = -gc
        rows.append(r)
    S = np.array(rows)
    return S @ S.T


def sigma_p(theta: SisoSystem, eta: NoiseModel | None = None, n_mc: int | None = None, seed: int = 0) -> np.ndarray:
    """Asymptotic PE covariance Sigma_P = (E[eps_theta eps_theta^T])^-1, unit-variance noise.

    Closed form for AR(1) (1 - a^2), exact impulse-response Gram otherwise. With
    ``n_mc`` the Gram matrix is instead a long-run average over ``n_mc`` samples
    of the (unit-variance) noise after a burn-in of 1000 steps.
    """
    if theta.dim == 0:
        raise ValueError("identity system: theta is empty")
    if n_mc is None:
        if theta.p == 1 and theta.q == 0:
            return np.array([[1.0 - theta.ar[0] ** 2]])
        gram = sensitivity_gram(theta)
    else:
        burn = 1000
        rng = np.random.default_rng(seed)
        if eta is None:
            z = rng.standard_normal(n_mc + burn)
        else:
            z = sample_increments(n_mc + burn, unit_variance(eta), SamplingConfig(), rng=rng)
        dy = forward_filter(z, theta).dy
        d_eps = innovation_sensitivities(dy, theta, order=1)[burn:]
        gram = d_eps.T @ d_eps / n_mc
    try:
        np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise ValueError("sensitivity Gram matrix is singular; theta is not identifiable") from None
    inv = np.linalg.inv(gram)
    return 0.5 * (inv + inv.T)


# --- efficiency of the single-term and multi-term ECF ---------------------------


def efficiency_g(u, eta: NoiseModel, h: float = 1.0):
    """g(u) = -(phi(2u)/phi(u)^2 + phi(-2u)/phi(-u)^2 - 2/(phi(u)phi(-u))).

    For k = 1 and K = 1, s / w^2 = g(u) / (4 u^2).
    """
    u = np.asarray(u, dtype=float)
    if np.any(u == 0):
        raise ValueError("g is undefined at u = 0")
    # with phi = exp(t psi): g = -2 exp(B) (Re exp(D) - 1), B = -2 Re t psi(u),
    # D = t psi(2u) - 2i Im t psi(u); expm1 keeps small-u values accurate
    psi1 = h * char_exponent(u, eta)
    d = h * char_exponent(2 * u, eta) - 2j * psi1.imag
    x, y = d.real, d.imag
    return -2.0 * np.exp(-2.0 * psi1.real) * (np.expm1(x) * np.cos(y) - 2.0 * np.sin(0.5 * y) ** 2)


def single_term_ratio(u, eta: NoiseModel, normalize: bool = True, h: float = 1.0):
    """Asymptotic variance ratio ECF/PE for one evaluation point.

    ``normalize=True`` first rescales the noise to unit variance (the ratio is
    then g(u)/(4u^2)). Otherwise the raw-scale ratio g(u)/(4u^2 Var) is
    returned, which is the right value for data at the model's own scale.
    """
    if normalize:
        eta = unit_variance(eta)
    u = np.asarray(u, dtype=float)
    return efficiency_g(u, eta, h) / (4.0 * u**2 * variance(eta, h))


def grid_ratio(grid: EcfGrid, eta: NoiseModel, normalize: bool = True, h: float = 1.0) -> float:
    """s / (w^2 Var) for a general grid and weighting."""
    if normalize:
        eta = unit_variance(eta)
    w = w_scalar(grid, eta, h)
    return s_scalar(grid, eta, h) / (w**2 * variance(eta, h))


def efficiency_scan(eta: NoiseModel, u, normalize: bool = True, h: float = 1.0) -> np.ndarray:
    """Rows (u, g(u), ratio) for external plotting."""
    u = np.asarray(u, dtype=float)
    model = unit_variance(eta) if normalize else eta
    return np.column_stack((u, efficiency_g(u, model, h), single_term_ratio(u, model, False, h)))


@dataclass(frozen=True)
class OptimalU:
    u: float
    ratio: float
    unimodal: bool


def optimal_u(
    eta: NoiseModel,
    search_interval=(1e-3, 3.0),
    normalize: bool = True,
    h: float = 1.0,
    n_scan: int = 3001,
) -> OptimalU:
    """Minimizer of the single-term ratio over ``search_interval``.

    A grid scan brackets the minimum and a bounded Brent search refines it.
    ``unimodal`` is False (with a warning) when the scan shows more than one
    local minimum; the global grid minimum's basin is used in that case.
    """
    lo, hi = search_interval
    lo = max(lo, 1e-3)
    if not hi > lo:
        raise ValueError("empty search interval")
    us = np.linspace(lo, hi, n_scan)
    vals = single_term_ratio(us, eta, normalize, h)
    i = int(np.argmin(vals))
    interior_min = np.flatnonzero((vals[1:-1] < vals[:-2]) & (vals[1:-1] <= vals[2:]))
    unimodal = interior_min.size <= 1
    if not unimodal:
        warnings.warn("efficiency ratio is not unimodal on the search interval", RuntimeWarning)
    a, b = us[max(i - 1, 0)], us[min(i + 1, n_scan - 1)]
    if a == b:
        return OptimalU(float(us[i]), float(vals[i]), unimodal)
    res = minimize_scalar(
        lambda x: float(single_term_ratio(x, eta, normalize, h)), bounds=(a, b), method="bounded",
        options={"xatol": 1e-10},
    )
    if res.fun < vals[i]:
        return OptimalU(float(res.x), float(res.fun), unimodal)
    return OptimalU(float(us[i]), float(vals[i]), unimodal)


@dataclass
class AsymptoticReport:
    w: float
    s: float
    ratio: float
    sigma_p: np.ndarray
    sigma_e: np.ndarray
    r_star_theta: np.ndarray
    r_star_eta: np.ndarray | None
    cov_v_eta: np.ndarray | None
    eta_cov: np.ndarray | None

    def to_dict(self) -> dict:
        def arr(x):
            return None if x is None else np.asarray(x).tolist()

        return {
            "w": self.w,
            "s": self.s,
            "ratio": self.ratio,
            "sigma_p": arr(self.sigma_p),
            "sigma_e": arr(self.sigma_e),
            "r_star_theta": arr(self.r_star_theta),
            "r_star_eta": arr(self.r_star_eta),
            "cov_v_eta": arr(self.cov_v_eta),
            "eta_cov": arr(self.eta_cov),
        }


def asymptotic_report(
    theta: SisoSystem,
    eta: NoiseModel,
    grid: EcfGrid,
    h: float = 1.0,
    free_eta=None,
    eta_grid: EcfGrid | None = None,
) -> AsymptoticReport:
    """All closed-form quantities for a zero-mean configuration.

    ``eta_grid`` (default ``grid``) is used for the noise-parameter blocks;
    these are skipped when the grid is too small to identify them.
    """
    mean = cumulant(1, eta, h)
    if abs(mean) > 1e-12:
        raise ValueError(f"theta-block formulas need zero-mean noise (mean = {mean:.3g})")
    var = variance(eta, h)
    w = w_scalar(grid, eta, h)
    s = s_scalar(grid, eta, h)
    ratio = s / (w**2 * var)
    sp = sigma_p(theta)
    gram = var * np.linalg.inv(sp)
    eg = eta_grid or grid
    n_eta = len(free_eta) if free_eta is not None else len(eta.param_names)
    if 2 * eg.k >= n_eta:
        W_eta, cov_eta = eta_blocks(eg, eta, h, free_eta)
        try:
            eta_cov = eta_covariance(eg, eta, h, free_eta)
        except np.linalg.LinAlgError:
            eta_cov = None
    else:
        W_eta = cov_eta = eta_cov = None
    return AsymptoticReport(
        w=w,
        s=s,
        ratio=ratio,
        sigma_p=sp,
        sigma_e=ratio * sp,
        r_star_theta=w * gram,
        r_star_eta=W_eta,
        cov_v_eta=cov_eta,
        eta_cov=eta_cov,
    )
