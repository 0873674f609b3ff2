from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg, stats

from dmdlik import rng
from dmdlik.dfm import LOG_2PI, StateSpaceModel, kalman_loglik, simulate_dfm
from dmdlik.dmd import snapshot_moments
from dmdlik.errors import DimensionMismatch, InitInvalid, SingularSpectrum
from dmdlik.estimation import (
    DFMMap,
    GeneratorBinding,
    MAMap,
    MCMCConfig,
    OptConfig,
    ParameterVector,
    SpectralModel,
    approx_loglik,
    approx_loglik_eval,
    mle_fit,
    monte_carlo_study,
    rwmh_sample,
    whittle_loglik,
    whittle_loglik_eval,
)
from dmdlik.ma import JacobianSet, MARepresentation, simulate_micro_panel
from dmdlik.optimize import nelder_mead_max

from conftest import two_factor_model


def one_factor(M=100, a=0.9, scale=1.0, sigma_v=1.0):
    G = scale * rng.generator(0, rng.LOADINGS).standard_normal((M, 1))
    return StateSpaceModel([[a]], [[1.0]], G, sigma_v)


def ar_binding(base, J=20_000, seed=100, **kw):
    return GeneratorBinding("dfm", DFMMap(base, {"a": ("A[0,0]",)}), J=J, N=1, base_seed=seed, **kw)


A_BOX = [[-0.95, 0.95]]


class TestParameterVector:
    def test_basic(self):
        p = ParameterVector(("a", "b"), [0.1, 2.0], [[0, 1], [1, 3]])
        assert p.d == 2 and p.as_dict() == {"a": 0.1, "b": 2.0}
        assert p.in_bounds([0.5, 1.5]) and not p.in_bounds([1.5, 1.5])
        assert p.with_values([0.2, 2.5]).values.tolist() == [0.2, 2.5]

    def test_invalid(self):
        with pytest.raises(ValueError):
            ParameterVector(("a", "a"), [0, 0], [[-1, 1], [-1, 1]])
        with pytest.raises(ValueError):
            ParameterVector(("a",), [0], [[1, 1]])
        with pytest.raises(DimensionMismatch):
            ParameterVector(("a", "b"), [0], [[-1, 1]])

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-10, 10), st.floats(0.01, 5), st.floats(-1.0, 2.0))
    def test_values_must_lie_in_bounds(self, lo, width, frac):
        hi = lo + width
        x = lo + frac * width
        if 0.0 <= frac <= 1.0 and lo <= x <= hi:
            assert ParameterVector(("x",), [x], [[lo, hi]]).in_bounds([x])
        elif not lo <= x <= hi:
            with pytest.raises(InitInvalid):
                ParameterVector(("x",), [x], [[lo, hi]])


class TestMaps:
    def test_dfm_map(self):
        base = two_factor_model(5)
        mp = DFMMap(base, {"a": ("A[0,0]", "A[1,1]"), "s": ("sigma_v",), "g": ("G[2,1]",)})
        m = mp({"a": 0.3, "s": 0.4, "g": 7.0})
        np.testing.assert_array_equal(np.diag(m.A), [0.3, 0.3])
        assert m.sigma_v == 0.4 and m.G[2, 1] == 7.0
        assert base.A[0, 0] == 0.9

    def test_dfm_map_rejects_bad_slots(self):
        with pytest.raises(ValueError):
            DFMMap(two_factor_model(5), {"a": ("B[0,0]",)})
        with pytest.raises(DimensionMismatch):
            DFMMap(two_factor_model(5), {"a": ("A[2,0]",)})

    def test_ma_map(self, gen):
        jac = JacobianSet({"z": gen.standard_normal((4, 20)) * 0.5 ** np.arange(20)}, ("z",), rho={"z": 0.5})
        mp = MAMap(jac, {"rho": ("rho:z",), "sig": ("sigma:z",), "sv": ("sigma_v",), "lvl": ("c_ss",)})
        ma, sv = mp({"rho": 0.0, "sig": 2.0, "sv": 0.3, "lvl": 1.5})
        np.testing.assert_allclose(ma.Psi[0, :, 0], 2.0 * jac.policy["z"][:, 0])
        assert sv == 0.3 and np.all(ma.c_ss == 1.5)
        with pytest.raises(ValueError):
            MAMap(jac, {"x": ("rho:nope",)})


class TestBinding:
    @pytest.mark.parametrize("demean", [False, True])
    @pytest.mark.parametrize("sigma_v", [0.0, 0.7])
    def test_fast_moments_match_simulated_panel(self, demean, sigma_v):
        base = two_factor_model(12, sigma_v=sigma_v)
        b = GeneratorBinding("dfm", DFMMap(base, {}), J=500, N=2, base_seed=3, burn_in=50, demean=demean)
        fast = b.sim_moments({}, seed=3)
        slow = snapshot_moments(b.prepare(simulate_dfm(base, 501, 50, seed=3)))
        for name in ("gram", "cross", "gram_p"):
            ref = getattr(slow, name)
            assert np.max(np.abs(getattr(fast, name) - ref)) <= 1e-10 * np.max(np.abs(ref))

    def test_simulate_is_reproducible(self):
        b = ar_binding(one_factor(10), J=100)
        assert np.array_equal(b.simulate({"a": 0.5}, 50, 7).Y, b.simulate({"a": 0.5}, 50, 7).Y)

    def test_kind_checked(self):
        with pytest.raises(ValueError):
            GeneratorBinding("var", lambda t: None, J=10, N=1)

    def test_demean_defaults(self):
        assert ar_binding(one_factor(5), J=10).demean is False
        assert GeneratorBinding("ma", lambda t: None, J=10, N=1).demean is True


class TestApproxLoglik:
    def test_deterministic_with_crn(self):
        base = one_factor(30)
        data = simulate_dfm(base, 100, 100, seed=1)
        b = ar_binding(base, J=2000)
        assert approx_loglik({"a": 0.8}, data, b) == approx_loglik({"a": 0.8}, data, b)
        b2 = ar_binding(base, J=2000)
        assert approx_loglik({"a": 0.8}, data, b) == approx_loglik({"a": 0.8}, data, b2)

    def test_fresh_draws_without_crn(self):
        base = one_factor(30)
        data = simulate_dfm(base, 100, 100, seed=1)
        b = ar_binding(base, J=2000, common_random_numbers=False)
        assert approx_loglik({"a": 0.8}, data, b) != approx_loglik({"a": 0.8}, data, b)

    def test_unstable_is_minus_infinity(self):
        base = one_factor(10)
        data = simulate_dfm(base, 50, 50, seed=1)
        ev = approx_loglik_eval({"a": 1.0}, data, ar_binding(base, J=200))
        assert ev.value == -np.inf and ev.flag == "unstable"

    def test_singular_flag(self):
        # rank above the simulated panel's numerical rank
        base = StateSpaceModel([[0.5]], [[1.0]], np.ones((4, 1)), 0.0)
        b = GeneratorBinding("dfm", DFMMap(base, {}), J=200, N=3)
        ev = approx_loglik_eval({}, simulate_dfm(base, 50, 10, seed=0), b)
        assert ev.value == -np.inf and ev.flag == "singular"

    def test_dimension_mismatch(self):
        b = ar_binding(one_factor(10), J=200)
        with pytest.raises(DimensionMismatch):
            approx_loglik({"a": 0.5}, simulate_dfm(one_factor(11), 50, 10, seed=0), b)

    def test_close_to_kalman(self):
        m = two_factor_model(400, seed=6)
        data = simulate_dfm(m, 200, 200, seed=7)
        b = GeneratorBinding("dfm", DFMMap(m, {"a1": ("A[0,0]",)}), J=20_000, N=2, base_seed=8)
        ll = approx_loglik({"a1": 0.9}, data, b)
        exact = kalman_loglik(m, data, conditional=True)
        assert abs(ll - exact) / abs(exact) < 0.01

    def test_continuous_in_theta(self):
        base = one_factor(40)
        data = simulate_dfm(base, 150, 100, seed=2)
        b = ar_binding(base, J=5000)
        f0 = approx_loglik({"a": 0.8}, data, b)
        for sgn in (1.0, -1.0):
            big = abs(approx_loglik({"a": 0.8 + sgn * 1e-3}, data, b) - f0)
            small = abs(approx_loglik({"a": 0.8 + sgn * 1e-5}, data, b) - f0)
            assert small < big / 20

    def test_ma_binding(self, gen):
        jac = JacobianSet({"z": gen.standard_normal((6, 40)) * 0.7 ** np.arange(40)}, ("z",), rho={"z": 0.5})
        mp = MAMap(jac, {"rho": ("rho:z",)}, sigma_v=0.5, c_ss=np.ones(6))
        b = GeneratorBinding("ma", mp, J=3000, N=1, base_seed=1)
        data = b.simulate({"rho": 0.5}, 200, 9)
        ev = approx_loglik_eval({"rho": 0.5}, data, b)
        assert ev.flag == "ok" and np.isfinite(ev.value)
        assert approx_loglik_eval({"rho": 1.2}, data, b).flag == "unstable"
        assert whittle_loglik_eval({"rho": 0.5}, data, b).flag == "ok"


def _direct_whittle(Y, Psi, Sigma_e, sigma_v):
    """Sum over every nonzero Fourier frequency, each term from explicit sums."""
    M, T = Y.shape
    Y = Y - Y.mean(axis=1, keepdims=True)
    total = 0.0
    for j in range(1, T):
        w = 2 * np.pi * j / T
        d = sum(Y[:, t] * np.exp(-1j * w * t) for t in range(T))
        Hw = sum(Psi[k] * np.exp(-1j * w * k) for k in range(Psi.shape[0]))
        S = Hw @ Sigma_e @ Hw.conj().T + sigma_v**2 * np.eye(M)
        quad = np.real(d.conj() @ np.linalg.solve(S, d)) / T
        total += -0.5 * (M * LOG_2PI + np.log(np.real(np.linalg.det(S))) + quad)
    return total


class TestWhittle:
    def test_four_point_white_noise(self):
        y = np.array([1.0, -2.0, 0.5, 3.0])
        yc = y - y.mean()
        oracle = 0.0
        for j in (1, 2, 3):
            re = sum(yc[t] * np.cos(2 * np.pi * j * t / 4) for t in range(4))
            im = sum(yc[t] * np.sin(2 * np.pi * j * t / 4) for t in range(4))
            oracle += -0.5 * (LOG_2PI + (re * re + im * im) / 4)
        model = SpectralModel(MARepresentation(np.zeros((1, 1, 1))), np.eye(1), 1.0)
        assert whittle_loglik(y[None], model) == pytest.approx(oracle, rel=1e-12)

    @pytest.mark.parametrize("T", [15, 16])
    def test_matches_direct_sum(self, gen, T):
        Y = gen.standard_normal((3, T))
        Psi = gen.standard_normal((4, 3, 2))
        Se = np.array([[1.0, 0.3], [0.3, 0.5]])
        got = whittle_loglik(Y, SpectralModel(MARepresentation(Psi), Se, 0.7))
        assert got == pytest.approx(_direct_whittle(Y, Psi, Se, 0.7), rel=1e-10)

    def test_exact_observation_dense_path(self, gen):
        Y = gen.standard_normal((2, 12))
        Psi = gen.standard_normal((3, 2, 2))
        got = whittle_loglik(Y, SpectralModel(MARepresentation(Psi), np.eye(2), 0.0))
        assert got == pytest.approx(_direct_whittle(Y, Psi, np.eye(2), 0.0), rel=1e-10)

    def test_long_horizon_folds(self, gen):
        Y = gen.standard_normal((2, 8))
        Psi = gen.standard_normal((11, 2, 1))
        got = whittle_loglik(Y, SpectralModel(MARepresentation(Psi), np.eye(1), 0.4))
        assert got == pytest.approx(_direct_whittle(Y, Psi, np.eye(1), 0.4), rel=1e-10)

    def test_singular_spectrum(self, gen):
        model = SpectralModel(MARepresentation(gen.standard_normal((2, 3, 1))), np.eye(1), 0.0)
        with pytest.raises(SingularSpectrum):
            whittle_loglik(gen.standard_normal((3, 10)), model)

    def test_white_noise_matches_iid(self):
        T = 20_000
        y = np.random.default_rng(3).standard_normal(T)
        exact = np.sum(-0.5 * (LOG_2PI + y * y)) / T
        w = whittle_loglik(y[None], SpectralModel(MARepresentation(np.ones((1, 1, 1))), np.eye(1), 0.0)) / T
        assert abs(w - exact) < 0.02 * abs(exact)

    def test_ma1_gap_shrinks(self):
        gap = []
        for T in (128, 512, 2048):
            ma = MARepresentation(np.array([[[1.0]], [[0.5]]]))
            cov = np.zeros(T)
            cov[:2] = [1.25, 0.5]
            g = []
            for s in range(5):
                y = simulate_micro_panel(ma, T, seed=s).Y[0]
                exact = stats.multivariate_normal(np.zeros(T), linalg.toeplitz(cov)).logpdf(y)
                g.append(abs(whittle_loglik(y[None], SpectralModel(ma, np.eye(1), 0.0)) - exact) / T)
            gap.append(np.mean(g))
        assert gap[0] > gap[1] > gap[2]

    def test_model_checks(self):
        ma = MARepresentation(np.ones((1, 2, 2)))
        with pytest.raises(ValueError):
            SpectralModel(ma, np.array([[1.0, 2.0], [0.0, 1.0]]), 1.0)
        with pytest.raises(ValueError):
            SpectralModel(ma, -np.eye(2), 1.0)
        with pytest.raises(DimensionMismatch):
            SpectralModel(ma, np.eye(3), 1.0)


class TestMLE:
    def test_recovers_ar_coefficient(self):
        base = one_factor(100)
        est = []
        for seed in range(10):
            data = simulate_dfm(base, 200, 200, seed=seed)
            res = mle_fit(data, ar_binding(base, seed=seed + 100), ParameterVector(("a",), [0.5], A_BOX), OptConfig(ftol=1e-4, initial_step=0.05))
            assert res.converged
            est.append(res.theta.values[0])
        assert abs(np.median(est) - 0.9) < 0.05

    def test_ascent_from_truth(self):
        base = one_factor(50)
        data = simulate_dfm(base, 150, 200, seed=3)
        res = mle_fit(data, ar_binding(base, J=5000), ParameterVector(("a",), [0.9], A_BOX))
        assert res.loglik >= res.init_loglik
        assert res.trace.shape[1] == 2 and res.trace.shape[0] == res.n_evals

    def test_truth_outside_box_is_flagged(self):
        base = one_factor(50)
        data = simulate_dfm(base, 150, 200, seed=4)
        res = mle_fit(data, ar_binding(base, J=5000), ParameterVector(("a",), [0.3], [[0.0, 0.7]]), OptConfig(ftol=1e-5))
        assert res.theta.values[0] == pytest.approx(0.7, abs=1e-3)
        assert res.at_bound == ("a",)
        assert "at_bound:a" in res.flags

    def test_flat_objective_flagged(self):
        base = one_factor(20)
        b = GeneratorBinding("dfm", DFMMap(base, {"u": ()}), J=1000, N=1)
        res = mle_fit(simulate_dfm(base, 80, 50, seed=5), b, ParameterVector(("u",), [0.0], [[-1, 1]]))
        assert res.no_improvement and "no_improvement" in res.flags

    def test_forces_common_random_numbers(self):
        base = one_factor(20)
        data = simulate_dfm(base, 80, 50, seed=6)
        init = ParameterVector(("a",), [0.5], A_BOX)
        a = mle_fit(data, ar_binding(base, J=1000, common_random_numbers=False), init)
        b = mle_fit(data, ar_binding(base, J=1000), init)
        assert np.array_equal(a.trace, b.trace)

    def test_whittle_objective(self):
        base = one_factor(30)
        data = simulate_dfm(base, 400, 200, seed=7)
        b = replace(ar_binding(base, J=1000), horizon=200)
        res = mle_fit(data, b, ParameterVector(("a",), [0.5], A_BOX), OptConfig(objective="whittle", ftol=1e-5))
        assert abs(res.theta.values[0] - 0.9) < 0.05

    def test_invalid_init(self):
        base = one_factor(10)
        b = ar_binding(base, J=200)
        with pytest.raises(InitInvalid):
            mle_fit(simulate_dfm(base, 50, 20, seed=0), b, ParameterVector(("a",), [1.2], [[0.0, 1.5]]))

    def test_config_checks(self):
        with pytest.raises(ValueError):
            OptConfig(objective="grid")
        with pytest.raises(ValueError):
            OptConfig(ftol=0.0)


GAUSS_MU = np.array([1.0, -2.0])
GAUSS_COV = np.array([[1.0, 0.6], [0.6, 2.0]])


def gaussian_target(x):
    r = x - GAUSS_MU
    return -0.5 * r @ np.linalg.solve(GAUSS_COV, r)


class TestRWMH:
    def test_constant_target_is_random_walk(self):
        init = ParameterVector(("x",), [0.0], [[-100.0, 100.0]])
        res = rwmh_sample(None, None, init, MCMCConfig(steps=200, burn_in=0), target=lambda x: 0.0)
        assert res.acceptance_rate == 1.0
        steps = np.diff(np.concatenate([[0.0], res.chain[:, 0]]))
        assert np.std(steps) == pytest.approx(0.02 * 200, rel=0.15)
        assert np.all(np.abs(res.chain) <= 100)

    def test_out_of_bounds_rejected(self):
        init = ParameterVector(("x",), [0.0], [[-0.01, 0.01]])
        res = rwmh_sample(None, None, init, MCMCConfig(steps=500, burn_in=0, initial_step_scale=1.0), target=lambda x: 0.0)
        assert np.all(np.abs(res.chain) <= 0.01)
        assert res.acceptance_rate < 0.5

    def test_gaussian_target(self):
        init = ParameterVector(("x", "y"), [0.0, 0.0], [[-50, 50], [-50, 50]])
        res = rwmh_sample(None, None, init, MCMCConfig(steps=50_000, burn_in=5000, seed=0), target=gaussian_target)
        d = res.draws
        sd = np.sqrt(np.diag(GAUSS_COV))
        assert np.all(np.abs(d.mean(axis=0) - GAUSS_MU) / sd < 0.02)
        assert np.max(np.abs(np.cov(d.T) - GAUSS_COV)) / np.max(np.abs(GAUSS_COV)) < 0.05
        for k in range(2):
            assert stats.kstest(d[:, k], "norm", args=(GAUSS_MU[k], sd[k])).statistic < 0.05
        assert abs(res.acceptance_post - 0.234) < 0.05

    def test_adaptation_frozen_after_burn_in(self):
        init = ParameterVector(("x", "y"), [0.0, 0.0], [[-50, 50], [-50, 50]])
        cfg = MCMCConfig(steps=3000, burn_in=1000, seed=1)
        a = rwmh_sample(None, None, init, cfg, target=gaussian_target)
        b = rwmh_sample(None, None, init, replace(cfg, steps=6000), target=gaussian_target)
        np.testing.assert_array_equal(a.proposal_cov, b.proposal_cov)
        np.testing.assert_array_equal(a.chain, b.chain[:3000])

    def test_reproducible(self):
        init = ParameterVector(("x",), [0.0], [[-5.0, 5.0]])
        cfg = MCMCConfig(steps=300, burn_in=100, seed=3)
        a = rwmh_sample(None, None, init, cfg, target=lambda x: -x[0] ** 2)
        b = rwmh_sample(None, None, init, cfg, target=lambda x: -x[0] ** 2)
        assert np.array_equal(a.chain, b.chain)

    def test_invalid_init(self):
        init = ParameterVector(("x",), [0.0], [[-1.0, 1.0]])
        with pytest.raises(InitInvalid):
            rwmh_sample(None, None, init, MCMCConfig(steps=10, burn_in=0), target=lambda x: -np.inf)

    def test_config_checks(self):
        with pytest.raises(ValueError):
            MCMCConfig(steps=10, burn_in=10)
        with pytest.raises(ValueError):
            MCMCConfig(prior="normal")

    def test_dmd_likelihood_chain(self):
        base = one_factor(30)
        data = simulate_dfm(base, 200, 200, seed=8)
        res = rwmh_sample(data, ar_binding(base, J=2000), ParameterVector(("a",), [0.9], A_BOX), MCMCConfig(steps=300, burn_in=100))
        assert res.chain.shape == (300, 1) and np.all(np.isfinite(res.loglik))
        assert set(res.summary()) >= {"mean", "std", "acceptance_rate"}


def _level_binding(M=3):
    def level(theta):
        return MARepresentation(np.zeros((1, M, 1)), c_ss=np.full(M, theta["level"])), 0.0

    return GeneratorBinding("ma", level, J=10, N=1)


class TestMonteCarlo:
    def test_single_replication_is_the_single_fit(self):
        base = one_factor(20)
        b = ar_binding(base, J=1000)
        truth = ParameterVector(("a",), [0.9], A_BOX)
        study = monte_carlo_study(b, truth, "mle", replications=1, master_seed=5, T=80, data_burn_in=50)
        data = b.simulate(truth, 80, rng.derive_seed(5, 0, 0), 50)
        single = mle_fit(data, replace(b, base_seed=rng.derive_seed(5, 0, 1)), truth)
        assert np.array_equal(study.draws[0], single.theta.values)
        assert np.array_equal(study.mean, single.theta.values)
        assert np.all(study.std == 0)

    def test_noise_free_is_unbiased(self):
        def least_squares(data, binding, init):
            res = nelder_mead_max(lambda x: -np.mean((data.Y - x[0]) ** 2), init.values, init.lo, init.hi, ftol=1e-14)
            return res.x, res.converged

        truth = ParameterVector(("level",), [1.7], [[-5.0, 5.0]])
        init = truth.with_values([0.0])
        study = monte_carlo_study(_level_binding(), truth, least_squares, replications=3, T=20, init=init)
        assert np.all(study.converged)
        assert abs(study.bias[0]) < 1e-6

    def test_thread_count_does_not_matter(self):
        base = one_factor(20)
        b = ar_binding(base, J=1000)
        truth = ParameterVector(("a",), [0.9], A_BOX)
        kw = dict(replications=4, master_seed=2, T=60, data_burn_in=50)
        one = monte_carlo_study(b, truth, "mle", threads=1, **kw)
        many = monte_carlo_study(b, truth, "mle", threads=3, **kw)
        assert np.array_equal(one.draws, many.draws)

    def test_failures_recorded(self):
        def flaky(data, binding, init):
            if data.seed % 2:
                raise RuntimeError("boom")
            return init.values, True

        truth = ParameterVector(("level",), [1.0], [[-5.0, 5.0]])
        study = monte_carlo_study(_level_binding(), truth, flaky, replications=6, T=10)
        n_fail = sum(rng.derive_seed(0, i, 0) % 2 for i in range(6))
        assert 0 < n_fail < 6
        assert len(study.failures) == n_fail
        assert study.failure_rate == pytest.approx(n_fail / 6)
        assert np.isnan(study.draws[~study.ok]).all()
        assert study.mean[0] == 1.0
        assert "boom" in study.failures[0][1]
        assert "bias" in study.table() and study.to_dict()["replications"] == 6

    def test_requires_a_replication(self):
        truth = ParameterVector(("level",), [1.0], [[-5.0, 5.0]])
        with pytest.raises(ValueError):
            monte_carlo_study(_level_binding(), truth, "mle", replications=0)

    @pytest.mark.slow
    def test_scalar_factor_study_is_centered(self):
        base = one_factor(100)
        truth = ParameterVector(("a",), [0.9], A_BOX)
        study = monte_carlo_study(
            ar_binding(base), truth, "mle", replications=50, master_seed=11, T=200, data_burn_in=200,
            init=truth.with_values([0.5]), opt_config=OptConfig(ftol=1e-4, initial_step=0.05),
        )
        assert not study.failures and np.all(study.converged)
        assert abs(study.bias[0]) <= 2 * study.std[0] / np.sqrt(50)


@pytest.mark.slow
def test_cross_section_improves_accuracy():
    # weak loadings, so one period of the panel carries little factor information at small M
    def median_error(M):
        base = one_factor(M, scale=0.03)
        errs = []
        for seed in range(20):
            data = simulate_dfm(base, 200, 200, seed=seed)
            res = mle_fit(data, ar_binding(base, seed=seed + 100), ParameterVector(("a",), [0.5], A_BOX), OptConfig(ftol=1e-4, initial_step=0.05))
            errs.append(abs(res.theta.values[0] - 0.9))
        return np.median(errs)

    assert median_error(200) < median_error(50)
