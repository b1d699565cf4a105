"""Monic ARMA(p, q) SISO filters driven by Levy increments.

The system is

    dy[n] + a_1 dy[n-1] + ... + a_p dy[n-p] = dz[n] + c_1 dz[n-1] + ... + c_q dz[n-q]

with zero initial conditions, and the parameter vector is
``theta = (a_1..a_p, c_1..c_q)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.signal import lfilter

__all__ = [
    "SisoSystem",
    "Trajectory",
    "UnstableSystemError",
    "MARGIN_THRESHOLD",
    "stability_margin",
    "forward_filter",
    "innovation_filter",
    "innovation_sensitivities",
    "stationary_tail_gap",
]

# minimum margin accepted for a parameter during estimation
MARGIN_THRESHOLD = 1e-6


class UnstableSystemError(ValueError):
    pass


@dataclass(frozen=True)
class SisoSystem:
    ar: tuple = ()
    ma: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "ar", tuple(float(a) for a in self.ar))
        object.__setattr__(self, "ma", tuple(float(c) for c in self.ma))
        if not all(np.isfinite(self.ar + self.ma)):
            raise ValueError("ARMA coefficients must be finite")

    @property
    def p(self) -> int:
        return len(self.ar)

    @property
    def q(self) -> int:
        return len(self.ma)

    @property
    def dim(self) -> int:
        return self.p + self.q

    @property
    def theta(self) -> np.ndarray:
        return np.array(self.ar + self.ma, dtype=float)

    def with_theta(self, theta) -> "SisoSystem":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have length {self.dim}")
        return SisoSystem(tuple(theta[: self.p]), tuple(theta[self.p :]))

    @property
    def ar_poly(self) -> np.ndarray:
        return np.concatenate(([1.0], self.ar))

    @property
    def ma_poly(self) -> np.ndarray:
        return np.concatenate(([1.0], self.ma))

    def as_dict(self) -> dict:
        return {"ar": list(self.ar), "ma": list(self.ma)}


@dataclass
class Trajectory:
    dy: np.ndarray
    h: float = 1.0
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.dy = np.asarray(self.dy, dtype=float)
        if self.dy.ndim != 1 or self.dy.size < 1:
            raise ValueError("trajectory must be a non-empty 1-d array")
        if not np.all(np.isfinite(self.dy)):
            raise ValueError("trajectory contains non-finite values")

    def __len__(self):
        return self.dy.size


def _min_root_modulus(coeffs) -> float:
    """Smallest |z| over roots of 1 + coeffs[0] z + coeffs[1] z^2 + ..."""
    poly = np.concatenate(([1.0], np.asarray(coeffs, dtype=float)))
    # numpy wants the highest degree first and drops leading zeros itself
    roots = np.roots(poly[::-1])
    if roots.size == 0:
        return np.inf
    return float(np.min(np.abs(roots)))


def stability_margin(sys: SisoSystem) -> float:
    """min over the AR and MA polynomials of (smallest root modulus - 1).

    Positive iff the filter and its inverse are both exponentially stable.
    Returns ``inf`` for the identity system.
    """
    return min(_min_root_modulus(sys.ar), _min_root_modulus(sys.ma)) - 1.0


def inverse_stability_margin(sys: SisoSystem) -> float:
    return _min_root_modulus(sys.ma) - 1.0


def forward_filter(dz, theta: SisoSystem, h: float = 1.0, meta: dict | None = None) -> Trajectory:
    dz = np.asarray(dz, dtype=float)
    if _min_root_modulus(theta.ar) - 1.0 <= 0:
        raise UnstableSystemError(f"AR polynomial of {theta} is not stable")
    dy = lfilter(theta.ma_poly, theta.ar_poly, dz)
    return Trajectory(dy, h=h, meta=dict(meta or {}))


def _as_array(traj) -> np.ndarray:
    return traj.dy if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)


def innovation_filter(traj, theta: SisoSystem) -> np.ndarray:
    """Innovations eps[n](theta) = A(theta)^{-1} dy[n] with zero initial conditions."""
    if inverse_stability_margin(theta) <= 0:
        raise UnstableSystemError(f"MA polynomial of {theta} is not inversely stable")
    return lfilter(theta.ar_poly, theta.ma_poly, _as_array(traj))


def _delay(x: np.ndarray, k: int) -> np.ndarray:
    if k == 0:
        return x
    out = np.zeros_like(x)
    out[k:] = x[:-k]
    return out


def innovation_sensitivities(traj, theta: SisoSystem, order: int = 1, eps: np.ndarray | None = None):
    """Exact derivatives of the zero-IC innovations with respect to theta.

    Returns ``d_eps`` of shape (N, p+q) and, for ``order=2``, also ``d2_eps`` of
    shape (N, p+q, p+q). With a(q), c(q) the AR and MA polynomials in the delay
    operator, eps = a/c dy, so

        d eps / d a_i = q^-i dy / c
        d eps / d c_j = -q^-j eps / c
        d2 eps / d a_i d c_j = -q^-(i+j) dy / c^2
        d2 eps / d c_j d c_k = 2 q^-(j+k) eps / c^2

    Delays commute with the filters under zero initial conditions, so a single
    filtered base signal per family suffices.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    dy = _as_array(traj)
    if eps is None:
        eps = innovation_filter(dy, theta)
    p, q = theta.p, theta.q
    c = theta.ma_poly
    n = dy.size

    base_a = lfilter([1.0], c, dy) if p else None
    base_c = lfilter([1.0], c, eps) if q else None
    d1 = np.empty((n, p + q))
    for i in range(p):
        d1[:, i] = _delay(base_a, i + 1)
    for j in range(q):
        d1[:, p + j] = -_delay(base_c, j + 1)
    if order == 1:
        return d1

    d2 = np.zeros((n, p + q, p + q))
    if q:
        if p:
            base_ac = -lfilter([1.0], c, base_a)
            for i in range(p):
                for j in range(q):
                    v = _delay(base_ac, i + j + 2)
                    d2[:, i, p + j] = v
                    d2[:, p + j, i] = v
        base_cc = 2.0 * lfilter([1.0], c, base_c)
        for j in range(q):
            for k in range(j, q):
                v = _delay(base_cc, j + k + 2)
                d2[:, p + j, p + k] = v
                d2[:, p + k, p + j] = v
    return d1, d2


def stationary_tail_gap(theta: SisoSystem, dz, n0: int = 0, burn_in: int | None = None, seed: int = 0) -> float:
    """Largest |difference| after index ``n0`` between zero-IC and stationary-IC outputs.

    The stationary run prepends ``burn_in`` standard normal inputs (default ten
    decay lengths of the slowest pole) so that the filter state at the start of
    ``dz`` is approximately stationary.
    """
    dz = np.asarray(dz, dtype=float)
    if theta.dim == 0:
        return 0.0
    if _min_root_modulus(theta.ar) - 1.0 <= 0:
        raise UnstableSystemError(f"AR polynomial of {theta} is not stable")
    if burn_in is None:
        rho = 1.0 / _min_root_modulus(theta.ar) if theta.p else 0.0
        decay = 1.0 / -np.log(rho) if 0 < rho < 1 else 1.0
        burn_in = max(theta.dim, int(np.ceil(10 * decay)))
    prefix = np.random.default_rng(seed).standard_normal(burn_in)
    zero_ic = lfilter(theta.ma_poly, theta.ar_poly, dz)
    stationary = lfilter(theta.ma_poly, theta.ar_poly, np.concatenate((prefix, dz)))[burn_in:]
    tail = np.abs(stationary - zero_ic)[n0:]
    return float(tail.max()) if tail.size else 0.0
