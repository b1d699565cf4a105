"""Shared helpers and the benchmark Monte Carlo sample.

The benchmark is AR(1) with a1 = -0.5 driven by CGMY(0.564, 1, 1, 0.5)
increments, N = 10^4, 500 independent replications. Simulating it takes
about a minute, so it is generated once per session and reused.
"""

import numpy as np
import pytest

from levy_ident.experiments import replication_seed
from levy_ident.levy_noise import CgmyParams, SamplingConfig, sample_increments
from levy_ident.linear_system import SisoSystem, forward_filter

BENCH_ETA = CgmyParams(0.564, 1.0, 1.0, 0.5)
BENCH_SYS = SisoSystem(ar=(-0.5,))
BENCH_N = 10_000
BENCH_REPS = 500
BENCH_SEED = 20240601


def poly_from_roots(roots):
    """Monic-in-constant coefficients (1, c_1, ..) of prod (1 - z / r)."""
    if len(roots) == 0:
        return ()
    coeffs = np.poly(1.0 / np.asarray(roots))  # z^d + ... with roots 1/r
    return tuple(np.real(coeffs[1:]))


def random_stable_coeffs(rng, degree, r_min=1.1, r_max=4.0):
    roots = []
    while len(roots) < degree:
        mod = rng.uniform(r_min, r_max)
        if degree - len(roots) >= 2 and rng.random() < 0.5:
            ang = rng.uniform(0.1, np.pi - 0.1)
            roots += [mod * np.exp(1j * ang), mod * np.exp(-1j * ang)]
        else:
            roots.append(mod * rng.choice([-1.0, 1.0]))
    return poly_from_roots(roots)


def random_arma(rng, p_max=3, q_max=3, min_dim=1):
    while True:
        p, q = rng.integers(0, p_max + 1), rng.integers(0, q_max + 1)
        if p + q >= min_dim:
            return SisoSystem(random_stable_coeffs(rng, p), random_stable_coeffs(rng, q))


@pytest.fixture(scope="session")
def benchmark_mc():
    """Noise increments and outputs for every benchmark replication."""
    cfg = SamplingConfig()
    dz = np.empty((BENCH_REPS, BENCH_N))
    for r in range(BENCH_REPS):
        rng = np.random.default_rng(replication_seed(BENCH_SEED, r))
        dz[r] = sample_increments(BENCH_N, BENCH_ETA, cfg, rng=rng)
    dy = np.array([forward_filter(z, BENCH_SYS).dy for z in dz])
    return {"dz": dz, "dy": dy, "system": BENCH_SYS, "eta": BENCH_ETA, "N": BENCH_N}


BENCH_ETA_GRID_K = 20
BENCH_FREE_ETA = ("C", "Y")


@pytest.fixture(scope="session")
def benchmark_u_opt():
    from levy_ident.asymptotics import optimal_u

    # raw data are not rescaled, so the ratio is minimized on the raw scale
    return optimal_u(BENCH_ETA, normalize=False).u


@pytest.fixture(scope="session")
def benchmark_estimates(benchmark_mc, benchmark_u_opt):
    """PE, single-term ECF and the PE -> ECF pipeline on every replication.

    Columns: a1 by PE, a1 by ECF (k = 1, u = u_opt, eta known), then C, Y by
    the pipeline and a1 from its second ECF pass. Failed fits are NaN.
    """
    from levy_ident.ecf import EcfGrid, estimate_theta_known_eta
    from levy_ident.optim import EstimationError
    from levy_ident.pe import combined_pe_ecf, estimate_pe

    single = EcfGrid((benchmark_u_opt,))
    eta_grid = EcfGrid.default(BENCH_ETA_GRID_K)
    out = np.full((BENCH_REPS, 5), np.nan)
    for r, dy in enumerate(benchmark_mc["dy"]):
        try:
            out[r, 0] = estimate_pe(dy, BENCH_SYS).theta.theta[0]
            out[r, 1] = estimate_theta_known_eta(dy, BENCH_SYS, BENCH_ETA, single).theta.theta[0]
            est = combined_pe_ecf(dy, BENCH_SYS, BENCH_ETA, eta_grid, free_eta=BENCH_FREE_ETA, second_pass_grid=single)
            out[r, 2:] = est.eta.C, est.eta.Y, est.theta.theta[0]
        except EstimationError:
            pass
    return out


# --- acceptance summary ---------------------------------------------------------

ACCEPTANCE_DETAILS = {}


@pytest.fixture
def record(request):
    """Store a one-line measurement for the acceptance summary."""

    def _record(text):
        ACCEPTANCE_DETAILS[request.node.nodeid] = text
        print(text)

    return _record


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" in rep.nodeid and rep.when in ("call", "setup"):
                if outcome == "passed" and rep.when != "call":
                    continue
                rows.append((rep.nodeid, "PASS" if outcome == "passed" else "FAIL"))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, status in sorted(rows, key=lambda r: r[0].split("::")[-1]):
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"{status}  {name}  {ACCEPTANCE_DETAILS.get(nodeid, '')}")
