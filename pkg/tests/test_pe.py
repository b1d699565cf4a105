import numpy as np
import pytest

from levy_ident.asymptotics import sigma_p
from levy_ident.ecf import EcfGrid, default_box, estimate_eta_known_theta
from levy_ident.levy_noise import CgmyParams, SamplingConfig, cumulant, moment, sample_increments, variance
from levy_ident.linear_system import SisoSystem, Trajectory, forward_filter, innovation_filter
from levy_ident.pe import combined_pe_ecf, estimate_pe, estimate_pe_with_mean, pe_cost, recenter

from conftest import BENCH_ETA, BENCH_SYS

SKEWED = CgmyParams(1.0, 2.0, 1.0, 0.5)


def skewed_traj(n, seed, sys=BENCH_SYS):
    dz = sample_increments(n, SKEWED, SamplingConfig(seed=seed, center=False))
    return forward_filter(dz, sys)


class TestCost:
    def test_identity(self):
        dy = np.random.default_rng(0).standard_normal(100)
        assert pe_cost(dy, SisoSystem()) == pytest.approx(0.5 * dy @ dy)

    def test_limit_at_truth(self, benchmark_mc):
        vals = np.array([pe_cost(dy, BENCH_SYS) for dy in benchmark_mc["dy"]]) / benchmark_mc["N"]
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean() - 0.5 * moment(2, BENCH_ETA)) < 3 * se

    def test_minimum_at_truth(self, benchmark_mc):
        dys = benchmark_mc["dy"][:100]
        c0 = np.mean([pe_cost(dy, BENCH_SYS) for dy in dys])
        for d in (-0.1, 0.1):
            assert c0 < np.mean([pe_cost(dy, SisoSystem(ar=(-0.5 + d,))) for dy in dys])


class TestEstimatePe:
    def test_variance_matches_sigma_p(self, benchmark_estimates, benchmark_mc):
        a = benchmark_estimates[:, 0]
        a = a[np.isfinite(a)]
        scaled = benchmark_mc["N"] * a.var(ddof=1)
        assert scaled == pytest.approx(sigma_p(BENCH_SYS)[0, 0], rel=0.15)
        assert abs(a.mean() + 0.5) < 4 * a.std(ddof=1) / np.sqrt(a.size)

    def test_init_at_truth_converges(self, benchmark_mc):
        est = estimate_pe(benchmark_mc["dy"][0], BENCH_SYS)
        assert est.converged and est.iterations <= 2

    def test_gaussian_noise(self):
        rng = np.random.default_rng(5)
        sys = SisoSystem(ar=(-0.6, 0.2), ma=(0.4,))
        traj = forward_filter(rng.standard_normal(20_000), sys)
        est = estimate_pe(traj, SisoSystem(ar=(0.0, 0.0), ma=(0.0,)))
        assert est.converged
        np.testing.assert_allclose(est.theta.theta, sys.theta, atol=0.05)

    def test_scale_invariance(self, benchmark_mc):
        dy = benchmark_mc["dy"][1]
        a = estimate_pe(dy, BENCH_SYS).theta.theta
        b = estimate_pe(7.5 * dy, BENCH_SYS).theta.theta
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_gradient_vanishes(self, benchmark_mc):
        dy = benchmark_mc["dy"][2]
        est = estimate_pe(dy, SisoSystem(ar=(0.0,)))
        assert est.grad_norm <= 1e-8 * max(1.0, est.cost)


class TestPeWithMean:
    def test_zero_mean_nested(self, benchmark_mc):
        dy = benchmark_mc["dy"][3]
        plain = estimate_pe(dy, BENCH_SYS)
        ext = estimate_pe_with_mean(dy, (BENCH_SYS, 0.0))
        assert abs(ext.m) < 4 * np.sqrt(variance(BENCH_ETA) / dy.size)
        # the two minimizers differ by O(1/N)
        assert abs(ext.theta.theta[0] - plain.theta.theta[0]) < 1e-3

    def test_normal_equation(self):
        traj = skewed_traj(5000, 1)
        est = estimate_pe_with_mean(traj, (SisoSystem(ar=(0.0,)), 0.0))
        eps = innovation_filter(traj, est.theta)
        assert abs(np.sum(eps - est.m)) < 1e-9 * np.abs(eps).sum()

    def test_identity_system(self):
        dy = np.random.default_rng(2).standard_normal(300) + 0.7
        est = estimate_pe_with_mean(dy, (SisoSystem(), 0.0))
        assert est.m == pytest.approx(dy.mean(), rel=1e-14)

    def test_skewed_mean(self):
        ms = np.array([estimate_pe_with_mean(skewed_traj(2000, 100 + r), (BENCH_SYS, 0.0)).m for r in range(100)])
        se = ms.std(ddof=1) / np.sqrt(ms.size)
        assert abs(ms.mean() - cumulant(1, SKEWED)) < 4 * se


class TestCombined:
    def test_bypass_equals_known_theta(self, benchmark_mc):
        dy = benchmark_mc["dy"][4]
        grid = EcfGrid.default(10)
        a = combined_pe_ecf(dy, BENCH_SYS, BENCH_ETA, grid, theta_known=BENCH_SYS, free_eta=("C", "Y"))
        b = estimate_eta_known_theta(dy, BENCH_SYS, BENCH_ETA, grid, default_box(BENCH_SYS, BENCH_ETA), free_eta=("C", "Y"))
        np.testing.assert_array_equal(a.eta.to_vector(), b.eta.to_vector())
        assert a.cost == b.cost

    def test_stage_trace(self, benchmark_mc):
        est = combined_pe_ecf(
            benchmark_mc["dy"][5], BENCH_SYS, BENCH_ETA, EcfGrid.default(20), free_eta=("C", "Y"), second_pass_grid=EcfGrid((1.0,))
        )
        assert [s["stage"] for s in est.trace] == ["pe", "ecf-eta", "ecf-second-pass"]

    def test_second_pass_gain(self, benchmark_estimates):
        ok = np.all(np.isfinite(benchmark_estimates), axis=1)
        stage1, second = benchmark_estimates[ok, 0], benchmark_estimates[ok, 4]
        assert second.var(ddof=1) <= stage1.var(ddof=1)

    def test_recenter(self):
        sys = SisoSystem(ar=(-0.5,))
        dz = np.random.default_rng(3).standard_normal(200)
        dy = forward_filter(dz + 0.4, sys).dy
        np.testing.assert_allclose(innovation_filter(recenter(dy, sys, 0.4), sys), dz, atol=1e-12)

    def test_skewed_with_mean_second_pass(self):
        traj = skewed_traj(10_000, 7)
        est = combined_pe_ecf(
            traj, BENCH_SYS, SKEWED, EcfGrid.default(20), with_mean=True, free_eta=("C", "Y"), second_pass_grid=EcfGrid((0.8,))
        )
        assert est.converged
        assert est.m == pytest.approx(cumulant(1, SKEWED), abs=0.1)
        assert abs(est.theta.theta[0] + 0.5) < 0.05
