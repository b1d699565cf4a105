"""Experiment configuration: INI-style text with one section per module.

Example::

    [experiment]
    mode = mc-validate
    n_samples = 10000
    n_replications = 500
    seed = 1

    [system]
    ar = -0.5
    ma =

    [noise]
    family = cgmy
    C = 0.564
    G = 1
    M = 1
    Y = 0.5

    [grid]
    u = auto

See README.md for every key and its default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ecf import EcfGrid, ParamBox, default_box, theta_names
from .levy_noise import NoiseModel, SamplingConfig, noise_from_dict
from .linear_system import SisoSystem, stability_margin
from .optim import OptimOptions

__all__ = ["MODES", "ESTIMATORS", "ConfigError", "ExperimentConfig", "validate_config", "load_config"]

MODES = ("simulate", "estimate-pe", "estimate-ecf", "estimate-combined", "efficiency", "mc-validate")
ESTIMATORS = ("pe", "ecf", "combined", "joint")


class ConfigError(ValueError):
    """Raised with every violation found; ``errors`` lists them individually."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class ExperimentConfig:
    mode: str
    system: SisoSystem
    noise: NoiseModel
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    grid: EcfGrid | None = None  # None: single optimal point, resolved at run time
    eta_grid: EcfGrid | None = None
    n_samples: int = 10_000
    n_replications: int = 1
    seed: int = 0
    domain_box: ParamBox = field(default_factory=ParamBox)
    output_dir: str = "out"
    workers: int = 1
    estimators: tuple = ("pe", "ecf")
    free_eta: tuple | None = None
    with_mean: bool = False
    second_pass: bool = False
    failure_budget: float = 0.05
    data: str | None = None
    init_system: SisoSystem | None = None
    init_noise: NoiseModel | None = None
    optim: OptimOptions = field(default_factory=OptimOptions)
    u_max: float = 3.0
    n_scan: int = 300
    k_max: int = 20
    raw_text: str = ""

    @property
    def dim_rho(self) -> int:
        n_eta = len(self.free_eta) if self.free_eta is not None else len(self.noise.param_names)
        return self.system.dim + n_eta


def _floats(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def _names(text: str) -> tuple:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _matrix(text: str, k: int) -> np.ndarray:
    text = text.strip().lower()
    if text in ("", "identity", "i"):
        return np.eye(k)
    rows = [[float(x) for x in row.split(",") if x.strip()] for row in text.split(";") if row.strip()]
    return np.array(rows, dtype=float)


def _grid(sec, errors, label) -> EcfGrid | None:
    u_text = sec.get("u", "").strip()
    try:
        if u_text.lower() == "auto":
            return None
        if u_text:
            u = _floats(u_text)
        else:
            k = sec.getint("k", 1)
            step = sec.getfloat("step", 0.1)
            if k < 1:
                raise ValueError("k must be >= 1")
            u = list(step * np.arange(1, k + 1))
        return EcfGrid(tuple(u), _matrix(sec.get("K", ""), len(u)))
    except ValueError as exc:
        errors.append(f"[{label}] {exc}")
        return None


def validate_config(raw: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse, default and cross-check a configuration text.

    ``overrides`` may set ``mode``, ``seed``, ``workers`` or ``output_dir``
    (the CLI flags). Syntax errors are reported with their line number;
    semantic errors are collected and raised together.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str  # parameter names such as C, G, M, Y are case sensitive
    try:
        cp.read_string(raw)
    except configparser.Error as exc:
        raise ConfigError([f"parse error: {exc}"]) from None
    overrides = dict(overrides or {})
    errors: list[str] = []

    def section(name):
        return cp[name] if cp.has_section(name) else cp[cp.default_section]

    exp = section("experiment")

    def get(key, conv, default):
        if key in overrides and overrides[key] is not None:
            return overrides[key]
        if key not in exp:
            return default
        try:
            return conv(exp[key])
        except ValueError:
            errors.append(f"[experiment] {key}: cannot parse {exp[key]!r}")
            return default

    mode = get("mode", str, "")
    if mode not in MODES:
        errors.append(f"[experiment] mode: {mode!r} is not one of {', '.join(MODES)}")
    n_samples = get("n_samples", int, 10_000)
    n_reps = get("n_replications", int, 1)
    seed = get("seed", int, 0)
    workers = get("workers", int, 1)
    output_dir = get("output_dir", str, "out")
    failure_budget = get("failure_budget", float, 0.05)
    estimators = get("estimators", _names, ("pe", "ecf"))
    data = get("data", str, None)
    bad = [e for e in estimators if e not in ESTIMATORS]
    if bad:
        errors.append(f"[experiment] estimators: unknown {bad}; expected names from {ESTIMATORS}")

    system = None
    if cp.has_section("system"):
        try:
            system = SisoSystem(tuple(_floats(cp["system"].get("ar", ""))), tuple(_floats(cp["system"].get("ma", ""))))
        except ValueError as exc:
            errors.append(f"[system] {exc}")
    else:
        errors.append("[system] section is missing")
    if system is not None and stability_margin(system) <= 0:
        errors.append(f"[system] {system.as_dict()} is unstable or not inversely stable")
        system = None

    noise = None
    if cp.has_section("noise"):
        try:
            noise = noise_from_dict(dict(cp["noise"]))
        except ValueError as exc:
            errors.append(f"[noise] {exc}")
    else:
        errors.append("[noise] section is missing")

    sampling = SamplingConfig(seed=seed)
    if cp.has_section("sampling"):
        s = cp["sampling"]
        try:
            sampling = SamplingConfig(
                h=s.getfloat("h", 1.0),
                epsilon=s.getfloat("epsilon", 1e-4),
                compensate_small_jumps=s.getboolean("compensate_small_jumps", True),
                center=s.getboolean("center", True),
                seed=seed,
            )
        except ValueError as exc:
            errors.append(f"[sampling] {exc}")

    grid = _grid(cp["grid"], errors, "grid") if cp.has_section("grid") else None
    eta_grid = _grid(cp["eta_grid"], errors, "eta_grid") if cp.has_section("eta_grid") else None

    est = section("estimation")
    free_eta = _names(est["free_eta"]) if "free_eta" in est else None
    try:
        with_mean = est.getboolean("with_mean", False)
        second_pass = est.getboolean("second_pass", False)
    except ValueError as exc:
        errors.append(f"[estimation] {exc}")
        with_mean = second_pass = False
    if noise is not None and free_eta is not None:
        unknown = [n for n in free_eta if n not in noise.param_names]
        if unknown:
            errors.append(f"[estimation] free_eta: unknown noise parameters {unknown}")

    init_system = init_noise = None
    if cp.has_section("init"):
        ini = dict(cp["init"])
        try:
            if "ar" in ini or "ma" in ini:
                init_system = SisoSystem(tuple(_floats(ini.pop("ar", ""))), tuple(_floats(ini.pop("ma", ""))))
            if ini:
                init_noise = noise_from_dict({"family": noise.family if noise else "", **ini})
        except ValueError as exc:
            errors.append(f"[init] {exc}")

    optim = OptimOptions()
    if cp.has_section("optim"):
        o = cp["optim"]
        try:
            optim = OptimOptions(max_iter=o.getint("max_iter", 200), gtol=o.getfloat("gtol", 1e-8))
        except ValueError as exc:
            errors.append(f"[optim] {exc}")

    eff = section("efficiency")
    try:
        u_max = eff.getfloat("u_max", 3.0)
        n_scan = eff.getint("n_points", 300)
        k_max = eff.getint("k_max", 20)
    except ValueError as exc:
        errors.append(f"[efficiency] {exc}")
        u_max, n_scan, k_max = 3.0, 300, 20

    box = None
    if system is not None:
        box = default_box(system, noise, m=with_mean)
        if cp.has_section("domain"):
            for name, text in cp["domain"].items():
                try:
                    lo, hi = _floats(text)
                    if not lo < hi:
                        raise ValueError
                    box.bounds[name] = (lo, hi)
                except ValueError:
                    errors.append(f"[domain] {name}: expected 'low, high' with low < high, got {text!r}")
        if noise is not None:
            names = theta_names(system) + list(noise.param_names)
            x = np.concatenate((system.theta, noise.to_vector()))
            outside = [n for n, v in zip(names, x) if not box.contains([n], [v])]
            if outside:
                errors.append(f"[domain] box does not contain the configured parameters {outside}")
        for label, sys_i, eta_i in (("init", init_system, init_noise),):
            if sys_i is not None and not box.contains(theta_names(sys_i), sys_i.theta):
                errors.append(f"[{label}] system outside the domain box")
            if eta_i is not None and not box.contains(eta_i.param_names, eta_i.to_vector()):
                errors.append(f"[{label}] noise parameters outside the domain box")

    if n_reps < 1:
        errors.append("[experiment] n_replications must be >= 1")
    if workers < 1:
        errors.append("[experiment] workers must be >= 1")
    if not 0 <= failure_budget < 1:
        errors.append("[experiment] failure_budget must lie in [0, 1)")

    if errors:
        raise ConfigError(errors)

    cfg = ExperimentConfig(
        mode=mode,
        system=system,
        noise=noise,
        sampling=sampling,
        grid=grid,
        eta_grid=eta_grid,
        n_samples=n_samples,
        n_replications=n_reps,
        seed=seed,
        domain_box=box,
        output_dir=output_dir,
        workers=workers,
        estimators=tuple(estimators),
        free_eta=free_eta,
        with_mean=with_mean,
        second_pass=second_pass,
        failure_budget=failure_budget,
        data=data,
        init_system=init_system,
        init_noise=init_noise,
        optim=optim,
        u_max=u_max,
        n_scan=n_scan,
        k_max=k_max,
        raw_text=raw,
    )
    min_n = max(100, 10 * cfg.dim_rho)
    if data is None and n_samples < min_n:
        raise ConfigError([f"[experiment] n_samples must be >= {min_n} (got {n_samples})"])
    return cfg


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    return validate_config(Path(path).read_text(encoding="utf-8"), overrides)
