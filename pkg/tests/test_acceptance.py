"""Acceptance criteria, one test each.

Run with ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per
criterion with the measured values is printed in the terminal summary.
"""

import time

import numpy as np
import pytest
from scipy.special import gamma

from levy_ident import asymptotics as asy
from levy_ident.cli import main
from levy_ident.ecf import EcfGrid, JointParams, cost, cost_grad
from levy_ident.levy_noise import (
    CgmyParams,
    SamplingConfig,
    VgParams,
    char_fn,
    char_fn_eta_grad,
    moment,
    sample_increments,
    unit_variance,
    variance,
)
from levy_ident.linear_system import SisoSystem, forward_filter, innovation_filter

from conftest import BENCH_ETA, BENCH_ETA_GRID_K, BENCH_FREE_ETA, BENCH_SYS, random_arma


def test_c01_filter_round_trip(record):
    rng = np.random.default_rng(1)
    cases = [(random_arma(rng), rng.standard_normal(1000)) for _ in range(100)]
    t0 = time.perf_counter()
    err = max(np.max(np.abs(innovation_filter(forward_filter(dz, sys), sys) - dz)) for sys, dz in cases)
    elapsed = time.perf_counter() - t0
    record(f"max abs error {err:.2e} (tol 1e-10), {elapsed:.3f} s for 100 systems (limit 1 s)")
    assert err <= 1e-10
    assert elapsed < 1.0


def test_c02_char_fn_consistency(record):
    z = sample_increments(100_000, BENCH_ETA, SamplingConfig(seed=2))
    u = np.round(np.arange(1, 21) * 0.1, 10)
    E = np.exp(1j * np.outer(z, u))
    ecf = E.mean(axis=0)
    phi = char_fn(u, 1.0, BENCH_ETA)
    # phi is real for this symmetric law; test both parts against their own standard errors
    z_re = np.abs(ecf.real - phi.real) / (E.real.std(axis=0) / np.sqrt(z.size))
    z_im = np.abs(ecf.imag - phi.imag) / (E.imag.std(axis=0) / np.sqrt(z.size))
    worst = max(z_re.max(), z_im.max())
    record(f"worst deviation {worst:.2f} standard errors over 20 points (limit 4)")
    assert worst < 4


def test_c03_moment_identity(record):
    m2 = moment(2, BENCH_ETA)
    closed = 0.564 * gamma(1.5) * 2
    record(f"moment(2) = {m2:.6f}, C Gamma(1.5) 2 = {closed:.6f}, |m2 - 1| = {abs(m2 - 1):.2e} (tol 5e-4)")
    assert m2 == pytest.approx(closed, rel=1e-14)
    assert abs(m2 - 1.0) <= 5e-4


def test_c04_theta_score_unbiased_for_wrong_eta(benchmark_mc, record):
    wrong = CgmyParams(1.0, 2.0, 1.5, 0.8)
    grid = EcfGrid((0.5, 1.0, 1.5))
    rho = JointParams(BENCH_SYS, wrong)
    g = np.array([cost_grad(dy, rho, grid, free_eta=())[0] for dy in benchmark_mc["dy"]])
    mean, se = g.mean(), g.std(ddof=1) / np.sqrt(g.size)
    record(f"mean theta-gradient {mean:.3f}, SE {se:.3f}, |mean|/SE = {abs(mean) / se:.2f} (limit 4), 500 x N=1e4")
    assert abs(mean) <= 4 * se


def test_c05_efficiency_curve(record):
    opt = asy.optimal_u(BENCH_ETA)
    r_small = float(asy.single_term_ratio(1e-2, BENCH_ETA))
    record(f"min ratio {opt.ratio:.4f} at u = {opt.u:.4f} (target 0.73 +- 0.02); ratio(0.01) - 1 = {r_small - 1:.2e} (tol 1e-3)")
    assert abs(opt.ratio - 0.73) <= 0.02
    assert abs(r_small - 1) <= 1e-3


def test_c06_multi_point_efficiency(record):
    table = {k: asy.grid_ratio(EcfGrid.default(k), BENCH_ETA) for k in range(1, 21)}
    best = min(table, key=lambda k: abs(table[k] - 0.688))
    record(f"closest k = {best}, ratio {table[best]:.4f}; minimum over k {min(table.values()):.4f} (target 0.688 +- 0.01)")
    assert any(abs(v - 0.688) <= 0.01 for v in table.values())


def test_c07_taylor_expansion(record):
    eta = unit_variance(BENCH_ETA)
    u = np.linspace(1e-3, 0.05, 200)
    quad = 1 - (eta.Y - 2) * (eta.Y - 3) * u**2 / (3 * eta.G**2)
    excess = np.abs(asy.single_term_ratio(u, BENCH_ETA) - quad) / (10 * u**4)
    record(f"max |ratio - quadratic| / (10 u^4) = {excess.max():.3f} over u in [1e-3, 0.05] (limit 1)")
    assert np.all(excess <= 1)


def test_c08_covariance_prediction(benchmark_estimates, benchmark_u_opt, record):
    N = 10_000
    ok = np.all(np.isfinite(benchmark_estimates[:, :2]), axis=1)
    pe, ecf = benchmark_estimates[ok, 0], benchmark_estimates[ok, 1]
    sp = asy.sigma_p(BENCH_SYS)[0, 0]
    ratio = asy.single_term_ratio(benchmark_u_opt, BENCH_ETA, normalize=False)
    pred_e = ratio * sp
    emp_e, emp_p = N * ecf.var(ddof=1), N * pe.var(ddof=1)
    record(
        f"u_opt {benchmark_u_opt:.4f}: N var ECF {emp_e:.4f} vs {pred_e:.4f} ({emp_e / pred_e - 1:+.1%}), "
        f"N var PE {emp_p:.4f} vs {sp:.4f} ({emp_p / sp - 1:+.1%}), {ok.sum()} reps (tol 15%)"
    )
    assert abs(emp_e / pred_e - 1) <= 0.15
    assert abs(emp_p / sp - 1) <= 0.15


def test_c09_r_star_block_diagonal(benchmark_mc, record):
    grid = EcfGrid((0.5, 1.0, 1.5))
    N = benchmark_mc["N"]
    x0 = BENCH_ETA.to_vector()
    step = 1e-4
    cross = np.empty((len(benchmark_mc["dy"]), x0.size))
    for r, dy in enumerate(benchmark_mc["dy"]):
        for j in range(x0.size):
            xp, xm = x0.copy(), x0.copy()
            xp[j] += step
            xm[j] -= step
            gp = cost_grad(dy, JointParams(BENCH_SYS, CgmyParams(*xp)), grid, free_eta=())[0]
            gm = cost_grad(dy, JointParams(BENCH_SYS, CgmyParams(*xm)), grid, free_eta=())[0]
            cross[r, j] = (gp - gm) / (2 * step * N)
    mean = cross.mean(axis=0)
    se = cross.std(axis=0, ddof=1) / np.sqrt(cross.shape[0])
    scores = np.abs(mean) / se
    record("W_theta_eta / SE per (C, G, M, Y): " + ", ".join(f"{s:.2f}" for s in scores) + " (limit 3)")
    assert np.all(scores <= 3)


def test_c10_combined_eta_covariance(benchmark_estimates, record):
    N = 10_000
    ok = np.all(np.isfinite(benchmark_estimates[:, 2:4]), axis=1)
    emp = N * np.cov(benchmark_estimates[ok, 2:4], rowvar=False)
    pred = asy.eta_covariance(EcfGrid.default(BENCH_ETA_GRID_K), BENCH_ETA, free_eta=BENCH_FREE_ETA)
    rel_diag = np.diag(emp) / np.diag(pred) - 1
    off = abs(emp[0, 1] - pred[0, 1]) / np.sqrt(pred[0, 0] * pred[1, 1])
    record(
        f"N Cov(C, Y): diag rel. error {rel_diag[0]:+.1%}, {rel_diag[1]:+.1%}; "
        f"off-diagonal error {off:.1%} of sqrt(pred_CC pred_YY) (tol 20%), {ok.sum()} reps"
    )
    assert np.all(np.abs(rel_diag) <= 0.20)
    assert off <= 0.20


def _random_noise(rng):
    if rng.random() < 0.6:
        Y = rng.uniform(0.1, 1.9)
        if abs(Y - 1) < 0.05:
            Y += 0.1
        return CgmyParams(rng.uniform(0.2, 2), rng.uniform(0.5, 4), rng.uniform(0.5, 4), Y)
    return VgParams(rng.uniform(-0.5, 0.5), rng.uniform(0.3, 2), rng.uniform(0.05, 1))


def test_c11_gradient_fidelity(record):
    rng = np.random.default_rng(11)
    worst_cost, worst_phi = 0.0, 0.0
    for _ in range(50):
        sys = random_arma(rng, 2, 2)
        eta = _random_noise(rng)
        grid = EcfGrid(tuple(np.sort(rng.uniform(0.1, 2.0, 3))))
        # coarse truncation: Y near 2 would otherwise need ~1e10 jump proposals
        dz = sample_increments(200, eta, SamplingConfig(epsilon=0.05, seed=int(rng.integers(2**31))))
        traj = forward_filter(dz, sys)
        rho = JointParams(sys, eta)
        g = cost_grad(traj, rho, grid)
        x = rho.rho
        fd = np.empty_like(x)
        for j in range(x.size):
            xp, xm = x.copy(), x.copy()
            step = 1e-6 * max(1.0, abs(x[j]))
            xp[j] += step
            xm[j] -= step

            def at(v):
                return cost(traj, JointParams(sys.with_theta(v[: sys.dim]), type(eta).from_vector(v[sys.dim :])), grid)

            fd[j] = (at(xp) - at(xm)) / (2 * step)
        worst_cost = max(worst_cost, np.linalg.norm(g - fd) / np.linalg.norm(fd))

        u = rng.uniform(-3, 3)
        dphi = char_fn_eta_grad(u, 1.0, eta)
        v = eta.to_vector()
        fdp = np.empty(v.size, dtype=complex)
        for j in range(v.size):
            step = 1e-6 * max(1.0, abs(v[j]))
            vp, vm = v.copy(), v.copy()
            vp[j] += step
            vm[j] -= step
            fdp[j] = (char_fn(u, 1.0, type(eta).from_vector(vp)) - char_fn(u, 1.0, type(eta).from_vector(vm))) / (2 * step)
        worst_phi = max(worst_phi, np.linalg.norm(dphi - fdp) / np.linalg.norm(fdp))
    record(f"worst relative error: cost_grad {worst_cost:.2e}, char_fn_eta_grad {worst_phi:.2e} over 50 points (tol 1e-5)")
    assert worst_cost <= 1e-5
    assert worst_phi <= 1e-5


MC_CONFIG = """
[experiment]
mode = mc-validate
n_samples = 2000
n_replications = 8
seed = 99
estimators = pe, ecf, combined

[system]
ar = -0.5

[noise]
family = cgmy
C = 0.564
G = 1
M = 1
Y = 0.5

[eta_grid]
k = 20

[estimation]
free_eta = C, Y
second_pass = true
"""


def test_c12_determinism_across_workers(tmp_path, record):
    cfg = tmp_path / "mc.ini"
    cfg.write_text(MC_CONFIG)
    outs = []
    for workers in (1, 3):
        out = tmp_path / f"w{workers}"
        assert main(["mc-validate", "--config", str(cfg), "--seed", "99", "--workers", str(workers), "--out", str(out)]) == 0
        outs.append((out / "mc_report.json").read_bytes())
    same = outs[0] == outs[1]
    record(f"workers 1 vs 3: {'byte-identical' if same else 'DIFFERENT'} ({len(outs[0])} bytes)")
    assert same
