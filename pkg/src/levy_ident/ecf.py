"""Empirical characteristic function estimation for Levy-driven ARMA systems.

The innovations eps[n](theta) of the inverse filter are matched to the noise
characteristic function at grid points u_1..u_k:

    h_n(u; theta, eta) = exp(i u eps[n](theta)) - phi(u, eta)
    V_N(theta, eta)    = sum_n |K^{-1/2} h_n|^2

and V_N is minimized by Gauss-Newton on the stacked real and imaginary parts
of K^{-1/2} h_n.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .levy_noise import CgmyParams, NoiseModel, char_fn, char_fn_eta_grad
from .linear_system import (
    MARGIN_THRESHOLD,
    SisoSystem,
    Trajectory,
    innovation_filter,
    innovation_sensitivities,
    stability_margin,
)
from .optim import Estimate, LeftDomain, OptimOptions, gauss_newton

__all__ = [
    "EcfGrid",
    "JointParams",
    "ParamBox",
    "theta_names",
    "default_box",
    "score",
    "score_matrix",
    "cost",
    "cost_grad",
    "estimate_joint",
    "estimate_theta_known_eta",
    "estimate_eta_known_theta",
]


@dataclass(frozen=True, eq=False)
class EcfGrid:
    """Evaluation points and weighting matrix of the ECF cost."""

    u: tuple
    K: np.ndarray | None = None
    K_inv: np.ndarray = field(init=False, repr=False)
    K_inv_sqrt: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        u = tuple(float(x) for x in np.atleast_1d(self.u))
        if not u:
            raise ValueError("grid needs at least one point")
        if any(x == 0.0 for x in u):
            raise ValueError("grid points must be nonzero")
        if len(set(u)) != len(u):
            raise ValueError("grid points must be distinct")
        k = len(u)
        K = np.eye(k) if self.K is None else np.array(self.K, dtype=float)
        if K.shape != (k, k):
            raise ValueError(f"K must be {k}x{k}")
        if not np.allclose(K, K.T, rtol=0, atol=1e-12 * max(1.0, np.abs(K).max())):
            raise ValueError("K must be symmetric")
        try:
            np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            raise ValueError("K must be positive definite") from None
        vals, vecs = np.linalg.eigh(K)
        K_inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "K_inv", (vecs / vals) @ vecs.T)
        object.__setattr__(self, "K_inv_sqrt", K_inv_sqrt)

    @classmethod
    def default(cls, k: int) -> "EcfGrid":
        """u = (0.1, 0.2, ..., 0.1 k) with identity weighting."""
        return cls(tuple(0.1 * np.arange(1, k + 1)))

    @property
    def k(self) -> int:
        return len(self.u)

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.u)

    def as_dict(self) -> dict:
        return {"u": list(self.u), "K": self.K.tolist()}


@dataclass(frozen=True)
class JointParams:
    theta: SisoSystem
    eta: NoiseModel

    @property
    def rho(self) -> np.ndarray:
        return np.concatenate((self.theta.theta, self.eta.to_vector()))


def theta_names(sys: SisoSystem) -> list[str]:
    return [f"a{i + 1}" for i in range(sys.p)] + [f"c{j + 1}" for j in range(sys.q)]


@dataclass
class ParamBox:
    """Admissible box D_rho as ``name -> (low, high)``.

    Names are ``a1..ap``, ``c1..cq``, the noise parameter names and ``m``.
    Missing names are unbounded.
    """

    bounds: dict = field(default_factory=dict)

    def limits(self, names) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.bounds.get(n, (-np.inf, np.inf))[0] for n in names], dtype=float)
        hi = np.array([self.bounds.get(n, (-np.inf, np.inf))[1] for n in names], dtype=float)
        return lo, hi

    def contains(self, names, x) -> bool:
        lo, hi = self.limits(names)
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= lo) and np.all(x <= hi))

    def center(self, names) -> np.ndarray:
        lo, hi = self.limits(names)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box center needs finite bounds for " + ", ".join(names))
        return 0.5 * (lo + hi)


def default_box(theta: SisoSystem, eta: NoiseModel | None = None, m: bool = False) -> ParamBox:
    """A generous box around a nominal parameter.

    Coefficient i of a degree-p polynomial with all roots outside the unit disk
    is bounded by binomial(p, i). Noise parameters get a factor-of-ten range
    on the positive ones; the CGMY index Y stays on its side of 1.
    """
    b = {}
    for prefix, order in (("a", theta.p), ("c", theta.q)):
        for i in range(order):
            bound = float(comb(order, i + 1))
            b[f"{prefix}{i + 1}"] = (-bound, bound)
    if isinstance(eta, CgmyParams):
        b["C"] = (eta.C / 10, eta.C * 10)
        b["G"] = (eta.G / 10, eta.G * 10)
        b["M"] = (eta.M / 10, eta.M * 10)
        b["Y"] = (0.02, 0.98) if eta.Y < 1 else (1.02, 1.98)
    elif eta is not None:
        scale = max(abs(eta.drift), eta.sigma)
        b["drift"] = (-10 * scale, 10 * scale)
        b["sigma"] = (eta.sigma / 10, eta.sigma * 10)
        b["nu"] = (eta.nu / 10, eta.nu * 10)
    if m:
        b["m"] = (-np.inf, np.inf)
    return ParamBox(b)


# --- scores and cost ----------------------------------------------------------


def _shifted_cf(u, h, eta, shift=0.0):
    phi = char_fn(u, h, eta)
    if shift:
        phi = phi * np.exp(-1j * np.asarray(u) * shift)
    return phi


def score(u, eps_n, eta: NoiseModel, h: float = 1.0):
    """h_n(u) = exp(i u eps_n) - phi(u, eta); broadcasts over ``u`` and ``eps_n``."""
    u = np.asarray(u, dtype=float)
    return np.exp(1j * u * np.asarray(eps_n, dtype=float)) - char_fn(u, h, eta)


def score_matrix(eps, grid: EcfGrid, eta: NoiseModel, h: float = 1.0, shift: float = 0.0) -> np.ndarray:
    """(N, k) matrix of scores h_n(u_l)."""
    u = grid.points
    return np.exp(1j * np.outer(eps, u)) - _shifted_cf(u, h, eta, shift)


def _traj_parts(traj):
    if isinstance(traj, Trajectory):
        return traj.dy, traj.h
    return np.asarray(traj, dtype=float), 1.0


def cost(traj, rho: JointParams, grid: EcfGrid, shift: float = 0.0) -> float:
    """V_N = sum_n h_n^T K^{-1} conj(h_n)."""
    dy, h = _traj_parts(traj)
    eps = innovation_filter(dy, rho.theta)
    H = score_matrix(eps, grid, rho.eta, h, shift)
    return float(np.einsum("nl,lm,nm->", H, grid.K_inv, H.conj()).real)


def _residuals(dy, h, theta, eta, grid, shift, free_theta, eta_idx, jac=True):
    """Stacked real residuals of K^{-1/2} h_n and their Jacobian.

    Columns: the theta coordinates (if ``free_theta``) then the selected eta
    coordinates.
    """
    B = grid.K_inv_sqrt
    u = grid.points
    eps = innovation_filter(dy, theta)
    E = np.exp(1j * np.outer(eps, u))
    phi = _shifted_cf(u, h, eta, shift)
    R = (E - phi) @ B
    r = np.concatenate((R.real.ravel(), R.imag.ravel()))
    if not jac:
        return r, None

    cols = []
    if free_theta:
        d_eps = innovation_sensitivities(dy, theta, order=1, eps=eps)
        iuE = 1j * u * E
        for j in range(theta.dim):
            cols.append((iuE * d_eps[:, j : j + 1]) @ B)
    if len(eta_idx):
        d_phi = char_fn_eta_grad(u, h, eta)[:, eta_idx]
        if shift:
            d_phi = d_phi * np.exp(-1j * u * shift)[:, None]
        n = dy.size
        for j in range(len(eta_idx)):
            row = -(d_phi[:, j] @ B)
            cols.append(np.broadcast_to(row, (n, u.size)))
    J = np.empty((r.size, len(cols)))
    half = r.size // 2
    for c, Cj in enumerate(cols):
        J[:half, c] = Cj.real.ravel()
        J[half:, c] = Cj.imag.ravel()
    return r, J


def _eta_index(eta: NoiseModel, free_eta) -> np.ndarray:
    if free_eta is None:
        return np.arange(len(eta.param_names))
    names = list(eta.param_names)
    try:
        return np.array([names.index(n) for n in free_eta], dtype=int)
    except ValueError:
        raise ValueError(f"unknown noise parameter in {free_eta}; expected names from {names}") from None


def cost_grad(traj, rho: JointParams, grid: EcfGrid, free_eta=None, shift: float = 0.0) -> np.ndarray:
    """Gradient of V_N with respect to (theta, eta[free_eta]).

    Built from h_theta(u) = i u exp(i u eps) eps_theta and h_eta(u) = -phi_eta(u).
    """
    dy, h = _traj_parts(traj)
    idx = _eta_index(rho.eta, free_eta)
    r, J = _residuals(dy, h, rho.theta, rho.eta, grid, shift, True, idx)
    return 2.0 * (J.T @ r)


# --- estimators ---------------------------------------------------------------


def _admissible_theta(template: SisoSystem):
    def ok(theta_vec):
        return stability_margin(template.with_theta(theta_vec)) > MARGIN_THRESHOLD

    return ok


def _fit(dy, h, theta0, eta0, grid, box, opts, free_theta, free_eta, shift=0.0, stage="ecf"):
    eta_idx = np.arange(0) if free_eta == () else _eta_index(eta0, free_eta)
    eta_names = [eta0.param_names[i] for i in eta_idx]
    names = (theta_names(theta0) if free_theta else []) + eta_names
    if not names:
        raise ValueError("nothing to estimate")
    n_theta = theta0.dim if free_theta else 0
    eta_vec0 = eta0.to_vector()
    lo, hi = box.limits(names)

    x0 = np.concatenate((theta0.theta if free_theta else [], eta_vec0[eta_idx]))
    if 2 * grid.k * dy.size < x0.size:
        raise ValueError("too few residuals for the number of parameters")

    def unpack(x):
        theta = theta0.with_theta(x[:n_theta]) if free_theta else theta0
        ev = eta_vec0.copy()
        ev[eta_idx] = x[n_theta:]
        return theta, type(eta0).from_vector(ev)

    def fun(x):
        theta, eta = unpack(x)
        return _residuals(dy, h, theta, eta, grid, shift, free_theta, eta_idx)

    stable = _admissible_theta(theta0)

    def admissible(x):
        if free_theta and not stable(x[:n_theta]):
            return False
        try:
            unpack(x)
        except ValueError:
            return False
        return True

    if not box.contains(names, x0):
        raise LeftDomain(f"initial point {dict(zip(names, x0))} outside the admissible box")
    res = gauss_newton(fun, x0, lo, hi, admissible=admissible, opts=opts)
    theta, eta = unpack(res.x)
    return Estimate(
        theta=theta,
        eta=eta,
        cost=res.cost,
        grad_norm=res.grad_norm,
        iterations=res.iterations,
        converged=res.converged,
        trace=[{"stage": stage, "iterations": res.iterations, "cost": res.cost, "params": names}],
    )


def estimate_joint(
    traj,
    init: JointParams,
    grid: EcfGrid,
    box: ParamBox | None = None,
    opts: OptimOptions = OptimOptions(),
    free_eta=None,
) -> Estimate:
    """Joint ECF estimate of (theta, eta) by minimizing V_N from ``init``.

    ``free_eta`` restricts which noise parameters are estimated (the others
    stay at their ``init`` values).
    """
    dy, h = _traj_parts(traj)
    box = box or default_box(init.theta, init.eta)
    return _fit(dy, h, init.theta, init.eta, grid, box, opts, True, free_eta, stage="ecf-joint")


def estimate_theta_known_eta(
    traj,
    init_theta: SisoSystem,
    eta: NoiseModel,
    grid: EcfGrid,
    box: ParamBox | None = None,
    opts: OptimOptions = OptimOptions(),
    shift: float = 0.0,
) -> Estimate:
    """ECF estimate of theta with the noise law fixed (single-term when k = 1).

    ``shift`` multiplies the model characteristic function by exp(-i u shift),
    i.e. the noise is taken to be Z - shift.
    """
    dy, h = _traj_parts(traj)
    box = box or default_box(init_theta)
    est = _fit(dy, h, init_theta, eta, grid, box, opts, True, (), shift=shift, stage="ecf-theta")
    return est


def estimate_eta_known_theta(
    traj,
    theta_star: SisoSystem,
    init_eta: NoiseModel,
    grid: EcfGrid,
    box: ParamBox | None = None,
    opts: OptimOptions = OptimOptions(),
    free_eta=None,
) -> Estimate:
    """ECF fit of the noise parameters to the innovations of a known system."""
    dy, h = _traj_parts(traj)
    box = box or default_box(theta_star, init_eta)
    est = _fit(dy, h, theta_star, init_eta, grid, box, opts, False, free_eta, stage="ecf-eta")
    return est
