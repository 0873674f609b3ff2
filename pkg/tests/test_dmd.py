import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmdlik.dfm import LOG_2PI, PanelData, kalman_loglik, simulate_dfm, solve_riccati
from dmdlik.dmd import (
    ReducedVAR,
    SnapshotPair,
    build_snapshots,
    dmd_fit,
    dmd_fit_moments,
    dmd_loglik,
    snapshot_moments,
    truncated_svd,
)
from dmdlik.errors import PanelTooShort, RankTooLarge, SingularOmega

from conftest import two_factor_model


class TestSnapshots:
    def test_three_columns(self):
        Y = np.arange(6.0).reshape(2, 3)
        pair = build_snapshots(PanelData(Y))
        assert np.array_equal(pair.Y, Y[:, :2])
        assert np.array_equal(pair.Yp, Y[:, 1:])

    def test_too_short(self):
        with pytest.raises(PanelTooShort):
            build_snapshots(np.ones((2, 2)))

    def test_alignment(self, gen):
        Y = gen.standard_normal((4, 17))
        pair = build_snapshots(Y)
        for k in range(pair.J):
            assert np.array_equal(pair.Yp[:, k], Y[:, k + 1])
            assert np.array_equal(pair.Y[:, k], Y[:, k])

    def test_moments_match_products(self, gen):
        Y = gen.standard_normal((5, 40))
        pair = build_snapshots(Y)
        mom = snapshot_moments(Y)
        np.testing.assert_allclose(mom.gram, pair.Y @ pair.Y.T, atol=1e-12)
        np.testing.assert_allclose(mom.cross, pair.Yp @ pair.Y.T, atol=1e-12)
        np.testing.assert_allclose(mom.gram_p, pair.Yp @ pair.Yp.T, atol=1e-12)


class TestTruncatedSVD:
    def test_diagonal(self):
        svd = truncated_svd(np.diag([3.0, 2.0, 1.0]), 2)
        np.testing.assert_allclose(svd.S, [3, 2])
        assert svd.discarded_energy == pytest.approx(1 / 14)

    def test_rank_one(self, gen):
        u, v = gen.standard_normal(6), gen.standard_normal(9)
        Y = np.outer(u, v)
        svd = truncated_svd(Y, 1)
        np.testing.assert_allclose(svd.reconstruct(), Y, atol=1e-12)
        assert svd.discarded_energy == pytest.approx(0.0, abs=1e-14)

    def test_full_svd_oracle(self, gen):
        Y = gen.standard_normal((20, 50))
        s = np.linalg.svd(Y, compute_uv=False)
        svd = truncated_svd(Y, 5)
        err = np.linalg.norm(Y - svd.reconstruct())
        assert err == pytest.approx(np.sqrt(np.sum(s[5:] ** 2)), rel=1e-8)

    def test_too_large(self):
        with pytest.raises(RankTooLarge):
            truncated_svd(np.ones((3, 4)), 4)
        with pytest.raises(RankTooLarge):
            truncated_svd(np.ones((3, 4)), 2)  # numerical rank 1

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 12), st.integers(2, 80), st.integers(1, 5), st.integers(0, 10**6))
    def test_eckart_young_and_orthonormality(self, M, J, N, seed):
        N = min(N, M, J)
        Y = np.random.default_rng(seed).standard_normal((M, J))
        s = np.linalg.svd(Y, compute_uv=False)
        svd = truncated_svd(Y, N)
        assert np.linalg.norm(Y - svd.reconstruct()) == pytest.approx(np.sqrt(np.sum(s[N:] ** 2)), rel=1e-8, abs=1e-10)
        np.testing.assert_allclose(svd.U.T @ svd.U, np.eye(N), atol=1e-10)
        np.testing.assert_allclose(svd.V.T @ svd.V, np.eye(N), atol=1e-10)
        assert np.all(np.diff(svd.S) <= 0)


class TestFit:
    def test_exact_low_rank_dynamics(self, gen):
        M, N, J = 12, 2, 40
        Q, _ = np.linalg.qr(gen.standard_normal((M, N)))
        Bstar = Q @ np.array([[0.9, 0.2], [-0.3, 0.7]]) @ Q.T
        Y = np.empty((M, J + 1))
        Y[:, 0] = Q @ gen.standard_normal(N)
        for t in range(J):
            Y[:, t + 1] = Bstar @ Y[:, t]
        pair = build_snapshots(Y)
        var = dmd_fit(pair, N, shrinkage=1.0)
        np.testing.assert_allclose(var.B @ pair.Y, Bstar @ pair.Y, atol=1e-10)
        assert np.max(np.abs(pair.Yp - var.B @ pair.Y)) < 1e-10

    def test_full_rank_is_ols(self, gen):
        Y = gen.standard_normal((4, 4))
        Yp = gen.standard_normal((4, 4))
        var = dmd_fit(SnapshotPair(Y, Yp), 4, shrinkage=1.0)
        np.testing.assert_allclose(var.B, Yp @ np.linalg.inv(Y), atol=1e-10)

    def test_moments_route_matches(self, gen):
        p = simulate_dfm(two_factor_model(15), 400, 50, seed=2)
        a = dmd_fit(build_snapshots(p), 2)
        b = dmd_fit_moments(snapshot_moments(p), 2)
        np.testing.assert_allclose(a.B, b.B, atol=1e-9)
        np.testing.assert_allclose(a.Omega, b.Omega, rtol=1e-8, atol=1e-10)

    def test_residual_orthogonality_and_rank(self):
        p = simulate_dfm(two_factor_model(30), 600, 50, seed=3)
        pair = build_snapshots(p)
        var = dmd_fit(pair, 2)
        resid = pair.Yp - var.B @ pair.Y
        U = truncated_svd(pair.Y, 2).U
        # B Y = Yp V V', so the residuals are orthogonal to the retained right singular vectors
        assert np.max(np.abs(resid @ pair.Y.T @ U)) <= 1e-8 * np.linalg.norm(pair.Yp)
        assert np.linalg.matrix_rank(var.B) == 2

    def test_determinism(self):
        p = simulate_dfm(two_factor_model(10), 200, 20, seed=1)
        a, b = dmd_fit(build_snapshots(p), 2), dmd_fit(build_snapshots(p), 2)
        assert np.array_equal(a.B, b.B) and np.array_equal(a.Omega, b.Omega)

    def test_singular_omega(self):
        # J < M without shrinkage leaves a rank-deficient residual covariance
        p = PanelData(np.random.default_rng(0).standard_normal((20, 6)))
        var = dmd_fit(build_snapshots(p), 1, shrinkage=0.0)
        with pytest.raises(SingularOmega):
            dmd_loglik(var, p)

    def test_recovers_innovations_coefficient(self):
        m = two_factor_model(100, seed=0)
        B1 = solve_riccati(m).B1
        p = simulate_dfm(m, 10_001, 500, seed=4)
        var = dmd_fit(build_snapshots(p), 2)
        assert np.linalg.norm(var.B - B1) / np.linalg.norm(B1) < 0.05


class TestLoglik:
    def test_zero(self):
        M = 3
        var = ReducedVAR(np.zeros((M, M)), np.zeros((M, 1)), np.zeros((1, M)), np.eye(M), 1, 0.0)
        assert dmd_loglik(var, PanelData(np.zeros((M, 4)))) == pytest.approx(-3 * 1.5 * LOG_2PI)

    def test_fitted_b_is_locally_optimal(self, gen):
        p = simulate_dfm(two_factor_model(8), 3000, 100, seed=5)
        pair = build_snapshots(p)
        var = dmd_fit(pair, 2)
        base = dmd_loglik(var, p)
        for _ in range(10):
            dl = gen.standard_normal(var.left.shape)
            for sgn in (1e-3, -1e-3):
                left = var.left + sgn * dl
                pert = ReducedVAR(left @ var.right, left, var.right, var.Omega, 2, var.shrinkage)
                assert dmd_loglik(pert, p) <= base

    def test_close_to_kalman_for_large_m(self):
        m = two_factor_model(400, seed=6)
        data = simulate_dfm(m, 200, 200, seed=7)
        sim = simulate_dfm(m, 20_001, 200, seed=8)
        var = dmd_fit_moments(snapshot_moments(sim), 2)
        ll = dmd_loglik(var, data)
        exact = kalman_loglik(m, data, conditional=True)
        assert abs(ll - exact) / abs(exact) < 0.01


@pytest.mark.slow
def test_consistency_in_j():
    m = two_factor_model(100, seed=0)
    B1 = solve_riccati(m).B1
    med = []
    for J in (1_000, 10_000, 100_000):
        errs = []
        for seed in range(5):
            p = simulate_dfm(m, J + 1, 500, seed=seed)
            errs.append(np.linalg.norm(dmd_fit_moments(snapshot_moments(p), 2).B - B1))
        med.append(np.median(errs))
    assert med[0] > med[1] > med[2]
