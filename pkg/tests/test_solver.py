"""Alternating solver: sub-step contracts, descent chain, full-fit behavior."""

import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar
from scipy.special import expit, logit

from spotmap.core import (Dataset, FusionGraph, ModelParams, PenaltyConfig,
                          objective)
from spotmap.solver import (FitResult, SolverConfig, alpha_step,
                            beta_quad_coeffs, beta_step, default_init, fit,
                            gamma_step)

from conftest import central_diff, irls_oracle, random_instance, random_params


def gamma_oracle(offs, y, w, wdot, lam2, step=1e-4):
    """Dense-grid minimizer of one region's penalized univariate objective."""

    def loss_vec(g):
        eta = g[:, None] + offs[None, :]
        return (np.logaddexp(0.0, eta) - y[None, :] * eta) @ w

    res = minimize_scalar(lambda g: float(loss_vec(np.array([g]))[0]),
                          bounds=(-30.0, 30.0), method="bounded",
                          options={"xatol": 1e-10})
    t_tilde = float(res.x)
    hi = max(lam2, abs(t_tilde)) + 1.0
    grid = np.arange(-hi, hi + step, step)
    best_val = np.inf
    best_g = 0.0
    for start in range(0, grid.size, 20000):
        chunk = grid[start:start + 20000]
        a = np.abs(chunk)
        q = np.where(a < lam2, lam2 * a - 0.5 * chunk ** 2,
                     0.5 * lam2 * lam2)
        vals = loss_vec(chunk) + wdot * q
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val = float(vals[j])
            best_g = float(chunk[j])
    return best_g, best_val


def region_slices(ds):
    for i in range(ds.K):
        sl = slice(ds.ptr[i], ds.ptr[i + 1])
        yield i, ds.y_s[sl], ds.w_s[sl], sl


class TestAlphaStep:
    def test_matches_irls_oracle_at_fixed_offsets(self, rng):
        ds, _ = random_instance(rng, k=4, n_max=20, p_z=2, p_x=1,
                                weighted=True)
        truth = random_params(rng, ds)
        alpha = alpha_step(ds, ModelParams(alpha=np.zeros(ds.p),
                                           beta=truth.beta,
                                           gamma=truth.gamma),
                           SolverConfig(alpha_newton_tol=1e-12))
        offsets = (truth.beta + truth.gamma)[ds.reg_s]
        oracle = irls_oracle(ds.Q, ds.y_s, ds.w_s, offset=offsets)
        np.testing.assert_allclose(alpha, oracle, atol=1e-6)

    def test_balanced_data_gives_zero(self):
        # every covariate pattern carries equal weighted counts of both classes
        ds = Dataset.from_arrays(
            region_ids=["a"], locations=[[0.0]],
            region_index=[0, 0, 0, 0], outcome=[0.0, 1.0, 0.0, 1.0],
            subject_covariates=[[0.0], [0.0], [1.0], [1.0]])
        p = ModelParams(alpha=[0.0], beta=[0.0], gamma=[0.0])
        assert alpha_step(ds, p) == pytest.approx([0.0], abs=1e-12)

    def test_balanced_data_from_nonzero_start(self):
        ds = Dataset.from_arrays(
            region_ids=["a"], locations=[[0.0]],
            region_index=[0, 0, 0, 0], outcome=[0.0, 1.0, 0.0, 1.0],
            subject_covariates=[[0.0], [0.0], [1.0], [1.0]])
        p = ModelParams(alpha=[0.8], beta=[0.0], gamma=[0.0])
        assert alpha_step(ds, p, SolverConfig(alpha_newton_tol=1e-12)) == \
            pytest.approx([0.0], abs=1e-8)

    def test_zero_dimensional_covariates_noop(self, rng):
        ds, _ = random_instance(rng, k=3, p_z=0, p_x=0)
        p = ModelParams(alpha=np.zeros(0), beta=np.zeros(3), gamma=np.zeros(3))
        assert alpha_step(ds, p).shape == (0,)


class TestBetaQuadCoeffs:
    def _one_subject_per_region(self, k=3):
        return Dataset.from_arrays(
            region_ids=[f"r{i}" for i in range(k)],
            locations=[[float(i)] for i in range(k)],
            region_index=np.arange(k), outcome=np.ones(k))

    def test_curvature_quarter(self):
        ds = self._one_subject_per_region()
        p = ModelParams(alpha=np.zeros(0), beta=np.zeros(3), gamma=np.zeros(3))
        a, _ = beta_quad_coeffs(ds, p)
        np.testing.assert_allclose(a, 0.25, rtol=1e-14)

    def test_target_formula(self):
        ds = self._one_subject_per_region()
        p = ModelParams(alpha=np.zeros(0), beta=np.zeros(3), gamma=np.zeros(3))
        _, b = beta_quad_coeffs(ds, p)
        np.testing.assert_allclose(b, 2.0, rtol=1e-14)

    def test_reproduces_partial_gradient_and_hessian(self, rng):
        for _ in range(10):
            ds, _ = random_instance(rng, k=4, n_max=8, weighted=True)
            p = random_params(rng, ds)
            a, b = beta_quad_coeffs(ds, p)
            grad_expected = a * (p.beta - b)

            def beta_loss(beta):
                q = ModelParams(alpha=p.alpha, beta=beta, gamma=p.gamma)
                eta = (ds.Q @ q.alpha) + (q.beta + q.gamma)[ds.reg_s]
                return float(np.dot(ds.w_s,
                                    np.logaddexp(0.0, eta) - ds.y_s * eta))

            grad_fd = central_diff(beta_loss, p.beta)
            err = np.abs(grad_fd - grad_expected) / np.maximum(
                1.0, np.abs(grad_expected))
            assert np.max(err) < 1e-6
            # diagonal Hessian entries equal the curvatures; the second
            # difference needs a wider step to keep roundoff below truncation
            for i in range(ds.K):
                def partial(t, i=i):
                    beta = p.beta.copy()
                    beta[i] = t
                    return beta_loss(beta)
                h = 1e-3
                hess_fd = (partial(p.beta[i] + h) - 2 * partial(p.beta[i])
                           + partial(p.beta[i] - h)) / h ** 2
                assert abs(hess_fd - a[i]) / max(1.0, a[i]) < 1e-5


class TestBetaStep:
    def test_strict_descent_when_not_stationary(self, rng):
        ds, g = random_instance(rng, k=5, n_max=10)
        pen = PenaltyConfig(lambda1=0.0, lambda2=0.0)
        p = random_params(rng, ds)
        before = objective(ds, p, g, pen)
        new_beta = beta_step(ds, p, g, SolverConfig(), pen)
        after = objective(ds, ModelParams(p.alpha, new_beta, p.gamma), g, pen)
        assert after < before

    def test_fixed_point_instance(self):
        # every region at rate 1/2 exactly: beta = 0 is stationary and fused
        k, n = 4, 10
        y = np.tile([0.0, 1.0], k * n // 2)
        ds = Dataset.from_arrays(
            region_ids=[f"r{i}" for i in range(k)],
            locations=[[float(i)] for i in range(k)],
            region_index=np.repeat(np.arange(k), n), outcome=y)
        g = FusionGraph([(i, i + 1, 1.0) for i in range(k - 1)])
        pen = PenaltyConfig(lambda1=0.4, lambda2=0.0)
        p = ModelParams(alpha=np.zeros(0), beta=np.zeros(k), gamma=np.zeros(k))
        before = objective(ds, p, g, pen)
        new_beta = beta_step(ds, p, g, SolverConfig(), pen)
        after = objective(ds, ModelParams(p.alpha, new_beta, p.gamma), g, pen)
        assert before - after < 1e-10

    def test_fifty_steps_never_increase(self, rng):
        ds, g = random_instance(rng, k=6, n_max=10, weighted=True)
        pen = PenaltyConfig(lambda1=0.3, lambda2=0.2)
        p = random_params(rng, ds)
        phi = objective(ds, p, g, pen)
        for _ in range(50):
            new_beta = beta_step(ds, p, g, SolverConfig(), pen)
            p = ModelParams(p.alpha, new_beta, p.gamma)
            phi_new = objective(ds, p, g, pen)
            assert phi_new <= phi + 1e-10
            phi = phi_new


class TestGammaStep:
    def test_zero_when_loss_minimized_at_zero(self):
        y = np.tile([0.0, 1.0], 10)
        ds = Dataset.from_arrays(region_ids=["a"], locations=[[0.0]],
                                 region_index=np.zeros(20, dtype=int),
                                 outcome=y)
        p = ModelParams(alpha=np.zeros(0), beta=np.zeros(1), gamma=np.zeros(1))
        out = gamma_step(ds, p, SolverConfig(), PenaltyConfig(lambda2=0.5))
        assert out[0] == 0.0

    def test_outlier_region_takes_unpenalized_minimizer(self):
        y = np.concatenate([np.ones(90), np.zeros(10)])
        ds = Dataset.from_arrays(region_ids=["a"], locations=[[0.0]],
                                 region_index=np.zeros(100, dtype=int),
                                 outcome=y)
        p = ModelParams(alpha=np.zeros(0), beta=np.zeros(1), gamma=np.zeros(1))
        pen = PenaltyConfig(lambda2=0.1)
        out = gamma_step(ds, p, SolverConfig(), pen)
        assert out[0] == pytest.approx(logit(0.9), abs=1e-6)

        # the chosen point beats the interior grid values
        def phi(g):
            eta = g + np.zeros(100)
            loss = float(np.dot(np.ones(100),
                                np.logaddexp(0.0, eta) - y * eta))
            q = (0.1 * abs(g) - g * g / 2.0) if abs(g) < 0.1 else 0.005
            return loss + 100.0 * q

        assert phi(out[0]) < phi(0.1)
        assert phi(out[0]) == pytest.approx(
            100.0 * math.log(10.0) - 90.0 * logit(0.9) + 0.5, rel=1e-6)

    def test_huge_lambda2_returns_zero(self, rng):
        ds, _ = random_instance(rng, k=4, n_max=10)
        p = random_params(rng, ds)
        out = gamma_step(ds, p, SolverConfig(), PenaltyConfig(lambda2=1000.0))
        np.testing.assert_array_equal(out, np.zeros(ds.K))

    def test_matches_dense_grid_oracle(self, rng):
        checked = 0
        while checked < 60:
            ds, _ = random_instance(rng, k=3, n_max=12, weighted=True)
            p = random_params(rng, ds)
            lam2 = float(2.0 ** rng.uniform(-5, 2))
            pen = PenaltyConfig(lambda2=lam2)
            out = gamma_step(ds, p, SolverConfig(), pen)
            qa = ds.Q @ p.alpha
            base = qa + p.beta[ds.reg_s]
            for i in range(ds.K):
                sl = slice(ds.ptr[i], ds.ptr[i + 1])
                offs = base[sl]
                _, val = gamma_oracle(offs, ds.y_s[sl], ds.w_s[sl],
                                      float(ds.w_i_dot[i]), lam2)
                g = out[i]
                eta = g + offs
                mine = float(np.dot(ds.w_s[sl],
                                    np.logaddexp(0.0, eta) - ds.y_s[sl] * eta))
                t = abs(g)
                q = (lam2 * t - t * t / 2.0) if t < lam2 else lam2 * lam2 / 2.0
                mine += float(ds.w_i_dot[i]) * q
                assert mine <= val + 1e-6
                checked += 1


class TestFit:
    def test_plain_logistic_mle_single_region(self, rng):
        n = 200
        z = rng.binomial(1, 0.5, n).astype(float)
        y = (rng.random(n) < expit(0.4 * z - 0.2)).astype(float)
        if y.min() == y.max():
            y[:2] = [0.0, 1.0]
        ds = Dataset.from_arrays(region_ids=["a"], locations=[[0.0]],
                                 region_index=np.zeros(n, dtype=int),
                                 outcome=y, subject_covariates=z.reshape(-1, 1))
        g = FusionGraph([])
        cfg = SolverConfig(outer_tol=1e-15, max_outer_iter=5000,
                           alpha_newton_tol=1e-12)
        res = fit(ds, g, PenaltyConfig(0.0, 0.0), cfg)
        design = np.hstack([np.ones((n, 1)), z.reshape(-1, 1)])
        oracle = irls_oracle(design, y, np.ones(n))
        assert res.params.alpha[0] == pytest.approx(oracle[1], abs=1e-6)
        intercept = res.params.beta[0] + res.params.gamma[0]
        assert intercept == pytest.approx(oracle[0], abs=1e-6)

    def test_descent_chain_on_random_instances(self, rng):
        for _ in range(30):
            ds, g = random_instance(rng, k=int(rng.integers(3, 8)), n_max=12,
                                    weighted=True, missing=True)
            pen = PenaltyConfig(lambda1=float(2.0 ** rng.uniform(-2, 4)),
                                lambda2=float(2.0 ** rng.uniform(-5, 2)))
            res = fit(ds, g, pen, SolverConfig(max_outer_iter=60))
            diffs = np.diff(res.objective_trace)
            assert np.all(diffs <= 1e-10)

    def test_trace_has_three_entries_per_cycle(self, rng):
        ds, g = random_instance(rng)
        res = fit(ds, g, PenaltyConfig(0.5, 0.5))
        assert res.objective_trace.shape[0] == 1 + 3 * res.outer_iterations

    def test_large_lambda2_zeroes_gamma(self, rng):
        for _ in range(5):
            ds, g = random_instance(rng, k=5)
            res = fit(ds, g, PenaltyConfig(lambda1=1.0, lambda2=1000.0))
            assert np.count_nonzero(res.params.gamma) == 0

    def test_large_lambda1_fuses_everything(self, rng):
        from spotmap.graphfuse import fused_group_count
        for _ in range(5):
            ds, g = random_instance(rng, k=5)
            res = fit(ds, g, PenaltyConfig(lambda1=2.0 ** 16, lambda2=0.5))
            assert fused_group_count(res.params.beta, 1e-4) == 1

    def test_warm_start_reduces_iterations(self, rng):
        wins = 0
        total = 25
        for _ in range(total):
            ds, g = random_instance(rng, k=6, n_max=15)
            cfg = SolverConfig()
            first = fit(ds, g, PenaltyConfig(2.0, 0.5), cfg)
            cold = fit(ds, g, PenaltyConfig(1.0, 0.5), cfg)
            warm = fit(ds, g, PenaltyConfig(1.0, 0.5), cfg, init=first.params)
            if warm.outer_iterations < cold.outer_iterations:
                wins += 1
        assert wins >= 0.8 * total

    def test_deterministic(self, rng):
        ds, g = random_instance(rng, k=5, weighted=True)
        pen = PenaltyConfig(0.7, 0.3)
        r1 = fit(ds, g, pen)
        r2 = fit(ds, g, pen)
        assert np.array_equal(r1.params.alpha, r2.params.alpha)
        assert np.array_equal(r1.params.beta, r2.params.beta)
        assert np.array_equal(r1.params.gamma, r2.params.gamma)
        assert np.array_equal(r1.objective_trace, r2.objective_trace)
        assert r1.bic == r2.bic and r1.df == r2.df

    def test_permutation_equivariance(self, rng):
        ds, g = random_instance(rng, k=5, n_max=8)
        pen = PenaltyConfig(0.8, 0.4)
        cfg = SolverConfig(outer_tol=1e-10)
        res = fit(ds, g, pen, cfg)
        perm = rng.permutation(ds.K)
        ds_p = Dataset.from_arrays(
            region_ids=[ds.region_ids[i] for i in np.argsort(perm)],
            locations=ds.locations[np.argsort(perm)],
            region_covariates=ds.x[np.argsort(perm)],
            region_index=perm[ds.region_index], outcome=ds.y,
            observed=ds.observed, weight=ds.weight, subject_covariates=ds.z)
        res_p = fit(ds_p, g.permuted(perm), pen, cfg)
        np.testing.assert_allclose(res_p.params.beta[perm], res.params.beta,
                                   atol=1e-6)
        np.testing.assert_allclose(res_p.params.gamma[perm], res.params.gamma,
                                   atol=1e-6)
        np.testing.assert_allclose(res_p.params.alpha, res.params.alpha,
                                   atol=1e-6)

    def test_nonconvergence_flagged(self, rng):
        ds, g = random_instance(rng, k=6, n_max=10)
        res = fit(ds, g, PenaltyConfig(0.5, 0.5),
                  SolverConfig(outer_tol=1e-15, max_outer_iter=2))
        assert not res.converged
        assert res.outer_iterations == 2

    def test_default_init_clamps_extreme_rates(self):
        y = np.concatenate([np.ones(199), [0.0]])
        ds = Dataset.from_arrays(region_ids=["a"], locations=[[0.0]],
                                 region_index=np.zeros(200, dtype=int),
                                 outcome=y)
        init = default_init(ds)
        assert init.beta[0] == pytest.approx(logit(0.99))
