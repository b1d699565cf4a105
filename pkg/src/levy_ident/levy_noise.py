"""CGMY and Variance Gamma noise: characteristic functions, cumulants, sampling.

Both families are parametrized per unit time; an increment over an interval of
length ``t`` has characteristic function ``exp(t * psi(u))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Union

import numpy as np
from scipy.special import digamma, gamma, gammaincc

__all__ = [
    "CgmyParams",
    "VgParams",
    "NoiseModel",
    "SamplingConfig",
    "cgmy_char_exponent",
    "char_exponent",
    "char_fn",
    "char_fn_eta_grad",
    "cumulant",
    "moment",
    "variance",
    "unit_variance",
    "noise_from_dict",
    "sample_increments",
]


@dataclass(frozen=True)
class CgmyParams:
    """CGMY Levy measure ``C exp(-G|x|)/|x|^(1+Y)`` (x<0), ``C exp(-Mx)/x^(1+Y)`` (x>0)."""

    C: float
    G: float
    M: float
    Y: float

    family = "cgmy"
    param_names = ("C", "G", "M", "Y")

    def __post_init__(self):
        errs = []
        for name in ("C", "G", "M"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                errs.append(f"{name} must be > 0 (got {v})")
        if not (0.0 < self.Y < 2.0):
            errs.append(f"Y must lie in (0, 2) (got {self.Y})")
        elif self.Y == 1.0:
            errs.append("Y = 1 is a pole of Gamma(-Y)")
        if errs:
            raise ValueError("invalid CGMY parameters: " + "; ".join(errs))

    def to_vector(self) -> np.ndarray:
        return np.array([self.C, self.G, self.M, self.Y], dtype=float)

    @classmethod
    def from_vector(cls, v) -> "CgmyParams":
        return cls(*(float(x) for x in v))

    def as_dict(self) -> dict:
        return {"family": self.family, **{f.name: getattr(self, f.name) for f in fields(self)}}


@dataclass(frozen=True)
class VgParams:
    """Variance Gamma: Brownian motion with drift ``drift`` and volatility
    ``sigma`` evaluated at a gamma clock with unit mean rate and variance rate ``nu``."""

    drift: float
    sigma: float
    nu: float

    family = "vg"
    param_names = ("drift", "sigma", "nu")

    def __post_init__(self):
        errs = []
        if not np.isfinite(self.drift):
            errs.append(f"drift must be finite (got {self.drift})")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            errs.append(f"sigma must be > 0 (got {self.sigma})")
        if not (np.isfinite(self.nu) and self.nu > 0):
            errs.append(f"nu must be > 0 (got {self.nu})")
        if errs:
            raise ValueError("invalid VG parameters: " + "; ".join(errs))

    def to_vector(self) -> np.ndarray:
        return np.array([self.drift, self.sigma, self.nu], dtype=float)

    @classmethod
    def from_vector(cls, v) -> "VgParams":
        return cls(*(float(x) for x in v))

    def as_dict(self) -> dict:
        return {"family": self.family, **{f.name: getattr(self, f.name) for f in fields(self)}}


NoiseModel = Union[CgmyParams, VgParams]

_FAMILIES = {"cgmy": CgmyParams, "vg": VgParams}


def noise_from_dict(d: dict) -> NoiseModel:
    """Build a noise model from ``{"family": ..., <param>: value, ...}``.

    Values may be decimal strings (config files) or numbers.
    """
    d = dict(d)
    family = str(d.pop("family", "")).strip().lower()
    if family not in _FAMILIES:
        raise ValueError(f"unknown noise family {family!r}; expected one of {sorted(_FAMILIES)}")
    cls = _FAMILIES[family]
    missing = [p for p in cls.param_names if p not in d]
    extra = [k for k in d if k not in cls.param_names]
    if missing or extra:
        raise ValueError(f"{family}: missing parameters {missing}, unexpected {extra}")
    return cls(**{p: float(d[p]) for p in cls.param_names})


@dataclass(frozen=True)
class SamplingConfig:
    h: float = 1.0
    epsilon: float = 1e-4
    compensate_small_jumps: bool = True
    center: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"sampling interval h must be > 0 (got {self.h})")
        if not 0 < self.epsilon < 1:
            raise ValueError(f"truncation level epsilon must lie in (0, 1) (got {self.epsilon})")


# --- characteristic functions -------------------------------------------------


def cgmy_char_exponent(u, eta: CgmyParams):
    """Characteristic exponent ``psi(u)`` of CGMY per unit time.

    Principal-branch complex powers; with G, M > 0 the bases stay in the right
    half plane so the branch cut is never crossed.
    """
    u = np.asarray(u, dtype=float)
    C, G, M, Y = eta.C, eta.G, eta.M, eta.Y
    # M^Y ((1 - iu/M)^Y - 1) rather than (M - iu)^Y - M^Y: no cancellation at small u
    bracket = M**Y * _pow1m(-u / M, Y) + G**Y * _pow1m(u / G, Y)
    return C * gamma(-Y) * bracket


def _pow1m(y, Y):
    """(1 + i y)^Y - 1 for real y, accurate for small |y|."""
    log_re = 0.5 * np.log1p(y * y)
    log_im = np.arctan2(y, 1.0)
    a, b = Y * log_re, Y * log_im
    return np.expm1(a) * np.cos(b) - 2.0 * np.sin(0.5 * b) ** 2 + 1j * np.exp(a) * np.sin(b)


def _vg_log_denominator(u, eta: VgParams):
    """log(1 - i u drift nu + u^2 sigma^2 nu / 2), accurate when nu is tiny."""
    re = 0.5 * u**2 * eta.sigma**2 * eta.nu
    im = -u * eta.drift * eta.nu
    return 0.5 * np.log1p(2 * re + re**2 + im**2) + 1j * np.arctan2(im, 1.0 + re)


def char_exponent(u, model: NoiseModel):
    if isinstance(model, CgmyParams):
        return cgmy_char_exponent(u, model)
    u = np.asarray(u, dtype=float)
    return -_vg_log_denominator(u, model) / model.nu


def char_fn(u, t: float, model: NoiseModel):
    """E[exp(i u Z_t)] for the noise model; vectorized over ``u``."""
    if not t > 0:
        raise ValueError(f"t must be > 0 (got {t})")
    u = np.asarray(u, dtype=float)
    if isinstance(model, VgParams):
        return np.exp(-t / model.nu * _vg_log_denominator(u, model))
    return np.exp(t * cgmy_char_exponent(u, model))


def char_fn_eta_grad(u, t: float, model: NoiseModel):
    """Partial derivatives of ``char_fn`` with respect to the noise parameters.

    Returns a complex array of shape ``u.shape + (dim eta,)`` ordered as
    ``model.param_names``.
    """
    u = np.asarray(u, dtype=float)
    phi = char_fn(u, t, model)
    if isinstance(model, CgmyParams):
        C, G, M, Y = model.C, model.G, model.M, model.Y
        gm = gamma(-Y)
        zm, zg = M - 1j * u, G + 1j * u
        bracket = zm**Y - M**Y + zg**Y - G**Y
        d_c = gm * bracket
        d_g = C * gm * Y * (zg ** (Y - 1) - G ** (Y - 1))
        d_m = C * gm * Y * (zm ** (Y - 1) - M ** (Y - 1))
        d_bracket_y = zm**Y * np.log(zm) - M**Y * math.log(M) + zg**Y * np.log(zg) - G**Y * math.log(G)
        # d/dY Gamma(-Y) = -Gamma(-Y) digamma(-Y)
        d_y = C * gm * (d_bracket_y - digamma(-Y) * bracket)
        dpsi = np.stack([d_c, d_g, d_m, d_y], axis=-1)
        return t * phi[..., None] * dpsi

    th, sg, nu = model.drift, model.sigma, model.nu
    x = -1j * u * th * nu + 0.5 * u**2 * sg**2 * nu
    den = 1.0 + x
    d_th = 1j * u * t / den
    d_sg = -t * u**2 * sg / den
    d_nu = t * _vg_log_denominator(u, model) / nu**2 - (t / nu**2) * x / den
    dlog = np.stack([d_th, d_sg, d_nu], axis=-1)
    return phi[..., None] * dlog


# --- cumulants and moments ----------------------------------------------------


def cumulant(order: int, model: NoiseModel, t: float = 1.0) -> float:
    """Cumulant of Z_t from the analytic derivatives of the characteristic exponent."""
    if order < 1:
        raise ValueError("cumulant order must be >= 1")
    if isinstance(model, CgmyParams):
        C, G, M, Y = model.C, model.G, model.M, model.Y
        k = C * gamma(order - Y) * (M ** (Y - order) + (-1) ** order * G ** (Y - order))
        return t * float(k)
    th, sg, nu = model.drift, model.sigma, model.nu
    table = {
        1: th,
        2: sg**2 + nu * th**2,
        3: nu * th * (2 * nu * th**2 + 3 * sg**2),
        4: 3 * nu * (2 * nu**2 * th**4 + 4 * nu * sg**2 * th**2 + sg**4),
    }
    if order not in table:
        raise ValueError("VG cumulants are implemented up to order 4")
    return t * table[order]


def moment(order: int, model: NoiseModel, t: float = 1.0) -> float:
    """Raw moment E[Z_t^order] for order 1..4, from cumulants."""
    if order not in (1, 2, 3, 4):
        raise ValueError("moment order must be in {1, 2, 3, 4}")
    k1, k2, k3, k4 = (cumulant(j, model, t) for j in (1, 2, 3, 4))
    return {
        1: k1,
        2: k2 + k1**2,
        3: k3 + 3 * k2 * k1 + k1**3,
        4: k4 + 4 * k3 * k1 + 3 * k2**2 + 6 * k2 * k1**2 + k1**4,
    }[order]


def variance(model: NoiseModel, t: float = 1.0) -> float:
    return cumulant(2, model, t)


def unit_variance(model: NoiseModel) -> NoiseModel:
    """Rescale so that Var(Z_1) = 1.

    CGMY: the variance is linear in C, so only C is rescaled and the tempering
    rates are kept. VG: the law is scaled (drift and sigma by 1/std).
    """
    var = variance(model)
    if isinstance(model, CgmyParams):
        return replace(model, C=model.C / var)
    c = 1.0 / math.sqrt(var)
    return replace(model, drift=model.drift * c, sigma=model.sigma * c)


# --- sampling -----------------------------------------------------------------


def _upper_gamma(s: float, x: float) -> float:
    """Upper incomplete gamma Gamma(s, x) for s > -1, x > 0."""
    if s > 0:
        return float(gamma(s) * gammaincc(s, x))
    if s == 0:
        from scipy.special import exp1

        return float(exp1(x))
    # Gamma(s, x) = (Gamma(s+1, x) - x^s e^{-x}) / s
    return (_upper_gamma(s + 1, x) - x**s * math.exp(-x)) / s


def _cgmy_big_jump_mean(eta: CgmyParams, eps: float) -> float:
    """Integral of x nu(dx) over |x| >= eps, per unit time."""
    s = 1.0 - eta.Y
    pos = eta.M ** (eta.Y - 1) * _upper_gamma(s, eta.M * eps)
    neg = eta.G ** (eta.Y - 1) * _upper_gamma(s, eta.G * eps)
    return eta.C * (pos - neg)


def _cgmy_small_jump_variance(eta: CgmyParams, eps: float) -> float:
    """Integral of x^2 nu(dx) over |x| < eps, per unit time."""
    from scipy.special import gammainc

    a = 2.0 - eta.Y
    pos = eta.M ** (eta.Y - 2) * gammainc(a, eta.M * eps)
    neg = eta.G ** (eta.Y - 2) * gammainc(a, eta.G * eps)
    return float(eta.C * gamma(a) * (pos + neg))


# cap on Pareto proposals held in memory at once
_MAX_PROPOSALS = 2e9
_CHUNK_PROPOSALS = 4_000_000


def _sample_cgmy(n: int, eta: CgmyParams, cfg: SamplingConfig, rng: np.random.Generator) -> np.ndarray:
    h, eps, Y = cfg.h, cfg.epsilon, eta.Y
    # Jumps with |x| >= eps are proposed from the Pareto density ~ |x|^{-1-Y}
    # (rate C eps^-Y / Y per side) and thinned with probability exp(-G|x|) or exp(-M|x|).
    side_rate = eta.C * eps ** (-Y) / Y
    total_rate = 2.0 * side_rate * h
    if not np.isfinite(total_rate):
        raise ValueError("jump intensity above the truncation level is not finite")
    if n * total_rate > _MAX_PROPOSALS:
        raise ValueError(
            f"about {n * total_rate:.2g} jump proposals needed at epsilon={eps:g}; "
            "raise epsilon (the Gaussian term keeps the variance exact)"
        )

    out = np.empty(n)
    chunk = max(1, min(n, int(_CHUNK_PROPOSALS / max(total_rate, 1.0))))
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        counts = rng.poisson(total_rate, size=m)
        total = int(counts.sum())
        size = eps * (1.0 - rng.random(total)) ** (-1.0 / Y)
        # one uniform gives the side (v < 1/2) and, rescaled, the thinning draw
        v = 2.0 * rng.random(total)
        positive = v < 1.0
        v -= ~positive
        jumps = np.where(positive, size, -size)
        jumps[v >= np.exp(-np.where(positive, eta.M, eta.G) * size)] = 0.0
        csum = np.concatenate(([0.0], np.cumsum(jumps)))
        ends = np.cumsum(counts)
        out[start : start + m] = csum[ends] - csum[ends - counts]

    out -= h * _cgmy_big_jump_mean(eta, eps)
    if cfg.compensate_small_jumps:
        out += math.sqrt(h * _cgmy_small_jump_variance(eta, eps)) * rng.standard_normal(n)
    return out


def _sample_vg(n: int, eta: VgParams, cfg: SamplingConfig, rng: np.random.Generator) -> np.ndarray:
    clock = rng.gamma(shape=cfg.h / eta.nu, scale=eta.nu, size=n)
    out = eta.drift * clock + eta.sigma * np.sqrt(clock) * rng.standard_normal(n)
    # shift to zero mean; the generic mean is restored by the caller
    return out - eta.drift * cfg.h


def sample_increments(
    n: int,
    model: NoiseModel,
    cfg: SamplingConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Draw ``n`` i.i.d. increments ``Z_h`` of the noise process.

    CGMY uses a compound-Poisson construction for jumps of size at least
    ``cfg.epsilon`` plus, when ``compensate_small_jumps`` is set, a Gaussian
    with the variance of the discarded small jumps. VG is simulated exactly as
    Brownian motion at a gamma time. Samples are centred to mean zero when
    ``cfg.center`` is set; otherwise their mean is exactly ``cumulant(1) * h``.

    ``rng`` overrides ``cfg.seed`` (used by the Monte Carlo harness to hand each
    replication its own stream).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if isinstance(model, CgmyParams):
        out = _sample_cgmy(n, model, cfg, rng)
    else:
        out = _sample_vg(n, model, cfg, rng)
    if not cfg.center:
        out += cumulant(1, model, cfg.h)
    return out
