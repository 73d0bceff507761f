import numpy as np
import pytest
from scipy import integrate, stats

from budtrial.errors import FamilyMismatchError, InvalidSpecError, MissingControlError
from budtrial.metrics import (
    KINDS,
    AsymEntropyCoprimary,
    MetricSpec,
    asym_entropy,
    beta_prob_greater,
    build_metric,
    coprimary_marginals,
    effect_class_probs,
    effect_density,
    evaluate,
    gamma_draws,
    joint_positive_prob,
    marginal_orthant_probs,
    truncated_effect_moments,
)
from budtrial.posteriors import BetaArm, DirichletArm, NormalArm, TrialHistory, best_arm_density_grid, prob_greater

from conftest import random_beta_states

BINARY_KINDS = [k for k in KINDS if k not in ("AsymEntropyBiomarker", "AsymEntropyCoprimary", "VarianceCoprimary")]


def generic_gains(metric, alpha, beta):
    """E[u(child)] - u(state) from raw values only."""
    n = alpha.shape[-1]
    p = alpha / (alpha + beta)
    out = np.empty_like(alpha)
    for a in range(n):
        e = np.eye(n)[a]
        us = metric.raw(alpha + e, beta)
        uf = metric.raw(alpha, beta + e)
        out[..., a] = p[..., a] * us + (1 - p[..., a]) * uf - metric.raw(alpha, beta)
    return out


class TestGainNonnegativity:
    @pytest.mark.parametrize("kind", BINARY_KINDS)
    def test_unclamped_gains_nonnegative(self, kind, rng):
        alpha, beta = random_beta_states(rng, 500)
        m = build_metric(MetricSpec(kind, grid=512, quad_nodes=128), "binary", (1, 1))
        g = m.gains(alpha, beta, clamp=False)
        assert g.shape == (500, 4)
        assert np.all(np.isfinite(g))
        assert g.min() > -1e-9

    def test_variance_coprimary_nonnegative(self, rng):
        counts = rng.integers(1, 15, (500, 3, 4)).astype(float)
        g = build_metric(MetricSpec("VarianceCoprimary"), "dirichlet").gains(counts, clamp=False)
        assert g.min() > -1e-12

    def test_normal_nonnegative(self, rng):
        n = rng.integers(0, 40, (500, 4))
        g = build_metric(MetricSpec("VarianceSum"), "normal").gains(1.0, np.array([2, 2, 1.5, 0.5]), n, clamp=False)
        assert g.min() > 0

    def test_clamped_mc_coprimary_nonnegative(self, rng):
        counts = rng.integers(1, 15, (500, 3, 4)).astype(float)
        m = AsymEntropyCoprimary(MetricSpec("AsymEntropyCoprimary", mc_draws=256), rng=rng)
        assert m.gains(counts).min() >= 0.0


class TestGainConsistency:
    @pytest.mark.parametrize("kind", ["VarianceSum", "EntropyOfMax"])
    def test_specialised_gains_match_children_formula(self, kind, rng):
        alpha, beta = random_beta_states(rng, 30)
        m = build_metric(MetricSpec(kind, control=kind != "EntropyOfMax"), "binary", (1, 1))
        np.testing.assert_allclose(m.gains(alpha, beta, clamp=False), generic_gains(m, alpha, beta), atol=1e-10)


class TestVarianceSum:
    def test_two_arm_root_value(self):
        # after one patient on either arm, raw utility equals -5/36 in expectation
        m = build_metric(MetricSpec("VarianceSum", offset=False), "binary", (1, 1))
        a, b = np.ones(2), np.ones(2)
        u0 = m.raw(a, b)
        np.testing.assert_allclose(u0, -2 / 12)
        np.testing.assert_allclose(u0 + m.gains(a, b, clamp=False), -5 / 36)

    def test_offset_zero_at_prior(self):
        m = build_metric(MetricSpec("VarianceSum"), "binary", (1, 1))
        np.testing.assert_allclose(m.value(np.ones(4), np.ones(4)), 0.0)

    def test_control_weight(self):
        m = build_metric(MetricSpec("VarianceSum", offset=False), "binary", (1, 1))
        np.testing.assert_allclose(m.raw(np.ones(4), np.ones(4)), -(3 + 3) / 12)

    def test_without_control(self):
        m = build_metric(MetricSpec("VarianceSum", offset=False, control=False), "binary", (1, 1))
        np.testing.assert_allclose(m.raw(np.ones(1), np.ones(1)), -1 / 12)

    def test_needs_control(self):
        m = build_metric(MetricSpec("VarianceSum"), "binary", (1, 1))
        with pytest.raises(MissingControlError):
            m.raw(np.ones(1), np.ones(1))


class TestQuadratureMetrics:
    def test_entropy_of_max_matches_grid_density(self):
        states = [BetaArm(2, 5), BetaArm(4, 4), BetaArm(7, 3)]
        m = build_metric(MetricSpec("EntropyOfMax", control=False, grid=2048), "binary")
        x, dens, w = best_arm_density_grid(states, 2048)
        ref = np.sum(w * dens * np.log(np.where(dens > 0, dens, 1)))
        got = m.raw(np.array([2.0, 4, 7]), np.array([5.0, 4, 3]))
        np.testing.assert_allclose(got, ref, atol=1e-10)

    def test_truncated_moments_match_adaptive_quadrature(self):
        a, b = np.array([3.0, 5.0]), np.array([4.0, 2.0])
        mean, second = truncated_effect_moments(a, b)

        def moment(k):
            f = lambda y, x: max(y - x, 0.0) ** k * stats.beta.pdf(x, 3, 4) * stats.beta.pdf(y, 5, 2)
            return integrate.dblquad(f, 0, 1, 0, 1, epsabs=1e-11)[0]

        np.testing.assert_allclose(mean[0], moment(1), atol=1e-8)
        np.testing.assert_allclose(second[0], moment(2), atol=1e-8)

    def test_effect_density_integrates_to_one(self):
        g, dens, gw = effect_density(np.array([3.0, 6.0]), np.array([5.0, 2.0]), 1024)
        np.testing.assert_allclose(np.sum(gw * dens), 1.0, atol=1e-3)
        mean = np.sum(gw * dens * g)
        np.testing.assert_allclose(mean, 6 / 8 - 3 / 8, atol=1e-3)

    def test_effect_class_probs_match_prob_greater(self):
        p = effect_class_probs(np.array([4.0, 7.0]), np.array([6.0, 3.0]), (0.0,))
        np.testing.assert_allclose(p[0, 1], prob_greater(BetaArm(7, 3), BetaArm(4, 6)), atol=1e-9)
        np.testing.assert_allclose(p.sum(), 1.0)

    def test_max_effect_variance_single_arm(self):
        m = build_metric(MetricSpec("MaxEffectVariance"), "binary")
        a, b = np.array([2.0, 3.0]), np.array([5.0, 1.0])
        var = BetaArm(2, 5).variance + BetaArm(3, 1).variance
        np.testing.assert_allclose(m.raw(a, b), -var, atol=1e-9)


class TestCoprimary:
    def test_marginal_orthant_probs_exact(self):
        counts = np.array([[2.0, 3, 1, 4], [5.0, 1, 2, 2]])
        p1, p2 = marginal_orthant_probs(counts)
        np.testing.assert_allclose(p1[0], prob_greater(BetaArm(6, 4), BetaArm(5, 5)), atol=1e-10)
        np.testing.assert_allclose(p2[0], prob_greater(BetaArm(7, 3), BetaArm(3, 7)), atol=1e-10)

    def test_joint_mc_bounded_by_marginals(self, rng):
        counts = np.array([[3.0, 2, 4, 1], [6.0, 1, 1, 2]])
        pj = joint_positive_prob(gamma_draws(rng, counts, 200000))
        p1, p2 = marginal_orthant_probs(counts)
        assert pj[0] <= min(p1[0], p2[0]) + 0.005
        assert pj[0] >= p1[0] + p2[0] - 1 - 0.005

    def test_joint_mc_matches_dirichlet_sampling(self, rng):
        counts = np.array([[3.0, 2, 4, 1], [6.0, 1, 1, 2]])
        pj = joint_positive_prob(gamma_draws(rng, counts, 200000))[0]
        t0 = rng.dirichlet(counts[0], 200000)
        t1 = rng.dirichlet(counts[1], 200000)
        ref = np.mean((t1[:, 0] + t1[:, 1] > t0[:, 0] + t0[:, 1]) & (t1[:, 0] + t1[:, 2] > t0[:, 0] + t0[:, 2]))
        np.testing.assert_allclose(pj, ref, atol=0.006)

    def test_beta_prob_greater_vectorised(self):
        np.testing.assert_allclose(beta_prob_greater(3, 4, 2, 2), prob_greater(BetaArm(3, 4), BetaArm(2, 2)), atol=1e-10)

    def test_common_draws_make_gains_reproducible(self, rng):
        counts = rng.integers(1, 6, (5, 3, 4)).astype(float)
        m = AsymEntropyCoprimary(MetricSpec("AsymEntropyCoprimary", mc_draws=512))
        g1 = m.gains(counts, rng=np.random.default_rng(4))
        g2 = m.gains(counts, rng=np.random.default_rng(4))
        np.testing.assert_array_equal(g1, g2)

    def test_asym_entropy(self):
        np.testing.assert_allclose(asym_entropy([0.0, 1.0, 0.5], 2.0), [0.0, 0.0, 0.25])


class TestSpecs:
    def test_unknown_kind(self):
        with pytest.raises(InvalidSpecError):
            MetricSpec("Gini")

    def test_beta_exp_must_exceed_one(self):
        with pytest.raises(InvalidSpecError):
            MetricSpec("AsymEntropyCoprimary", beta_exp=1.0)

    def test_cutpoints_increasing(self):
        with pytest.raises(InvalidSpecError):
            MetricSpec("DiscretizedVariance", cutpoints=(0.2, 0.1))

    def test_family_mismatch(self):
        with pytest.raises(FamilyMismatchError):
            build_metric(MetricSpec("EntropyOfMax"), "dirichlet")

    def test_round_trip(self):
        spec = MetricSpec("DiscretizedEntropy", cutpoints=(-0.1, 0.2), offset=True)
        assert MetricSpec.from_dict(spec.to_dict()) == spec

    def test_evaluate_history(self):
        h = TrialHistory.fresh(BetaArm(), 3).record(0, 1).record(2, 0)
        a, b = h.beta_arrays()
        m = build_metric(MetricSpec("VarianceSum"), "binary", (1, 1))
        np.testing.assert_allclose(evaluate(h, MetricSpec("VarianceSum"), (1, 1)), m.value(a, b))

    def test_evaluate_wrong_family(self):
        h = TrialHistory.fresh(DirichletArm(), 2)
        with pytest.raises(FamilyMismatchError):
            evaluate(h, MetricSpec("VarianceSum"))

    def test_normal_history(self):
        h = TrialHistory.fresh(NormalArm(1.0, 2.0), 2).record(0, 0.3)
        val = evaluate(h, MetricSpec("VarianceSum", control=False, offset=False))
        np.testing.assert_allclose(val, -(1 / (1 + 0.5) + 1.0))


class TestWorkedValues:
    def test_variance_sum_one_arm(self):
        # control Beta(2,1), arm Beta(1,1): (1/12 + 1/12) - (1/18 + 1/12)
        m = build_metric(MetricSpec("VarianceSum"), "binary", (1, 1))
        np.testing.assert_allclose(m.value(np.array([2.0, 1]), np.array([1.0, 1])), 1 / 36)

    def test_truncated_prior_variance_matches_mc(self, rng):
        m = build_metric(MetricSpec("TruncatedVarianceSum", offset=False), "binary", (1, 1))
        got = -m.raw(np.ones(2), np.ones(2))
        x = rng.random((2, 10**6))
        g = np.maximum(x[1] - x[0], 0.0)
        se = np.std((g - g.mean()) ** 2) / np.sqrt(g.size)
        assert abs(got - g.var()) < 3 * se

    def test_truncated_certainly_negative(self):
        m = build_metric(MetricSpec("TruncatedVarianceSum"), "binary", (1, 1))
        u = m.value(np.array([1e6, 1.0]), np.array([1.0, 1e6]))
        np.testing.assert_allclose(u, -m.raw(np.ones(2), np.ones(2)), atol=1e-6)

    def test_entropy_of_max_two_uniform_arms(self):
        m = build_metric(MetricSpec("EntropyOfMax", control=False, offset=False), "binary", (1, 1))
        np.testing.assert_allclose(m.raw(np.ones(2), np.ones(2)), np.log(2) - 0.5, atol=1e-5)

    def test_entropy_of_max_single_arm(self):
        m = build_metric(MetricSpec("EntropyOfMax", control=False, offset=False), "binary", (1, 1))
        np.testing.assert_allclose(m.raw(np.ones(1), np.ones(1)), 0.0, atol=1e-8)

    def test_entropy_of_max_four_arms_vs_histogram(self, rng):
        m = build_metric(MetricSpec("EntropyOfMax", control=False, offset=False), "binary", (1, 1))
        mx = rng.random((10**6, 4)).max(axis=1)
        dens, edges = np.histogram(mx, bins=400, range=(0, 1), density=True)
        w = np.diff(edges)
        ref = np.sum(w * dens * np.log(np.where(dens > 0, dens, 1)))
        assert abs(m.raw(np.ones(4), np.ones(4)) - ref) < 0.01

    def test_asym_entropy_beta6(self):
        np.testing.assert_allclose(asym_entropy(0.5, 6.0), 0.484375)

    def test_mad_fresh_uniform(self):
        m = build_metric(MetricSpec("MADSum", offset=False), "binary", (1, 1))
        np.testing.assert_allclose(m.raw(np.ones(2), np.ones(2)), -1 / 3, atol=1e-4)

    def test_discretized_entropy_point_mass(self):
        m = build_metric(MetricSpec("DiscretizedEntropy", offset=False), "binary", (1, 1))
        np.testing.assert_allclose(m.raw(np.array([1e6, 1.0]), np.array([1.0, 1e6])), 0.0, atol=1e-6)

    def test_coprimary_marginals_of_cells(self):
        b1, b2, _ = coprimary_marginals(1e7 * np.array([[0.15, 0.25, 0.4, 0.2]]))
        np.testing.assert_allclose(b1[0, 0] / b1[0].sum(), 0.40)
        np.testing.assert_allclose(b2[0, 0] / b2[0].sum(), 0.55)

    def test_fresh_coprimary_joint_quarter(self, rng):
        pj = joint_positive_prob(gamma_draws(rng, np.ones((2, 4)), 400000))[0]
        assert abs(pj - 0.25) < 0.01

    def test_coprimary_variance_vs_mc(self, rng):
        m = build_metric(MetricSpec("VarianceCoprimary", weight=1.0, offset=False), "dirichlet")
        got = m.raw(np.ones((2, 4)))
        t = rng.dirichlet(np.ones(4), (2, 10**6))
        g = t[1] - t[0]
        gam, g1, g2 = g[:, 0], g[:, 0] + g[:, 1], g[:, 0] + g[:, 2]
        ref = -(gam.var() + g1.var() + g2.var())
        np.testing.assert_allclose(got, ref, rtol=5e-3)

    def test_coprimary_variance_scaling_increases(self):
        m = build_metric(MetricSpec("VarianceCoprimary"), "dirichlet")
        c = np.array([[3.0, 2, 4, 1], [6.0, 1, 1, 2]])
        assert m.value(10 * c) > m.value(c)

    def test_coprimary_variance_point_mass(self):
        m = build_metric(MetricSpec("VarianceCoprimary", offset=False), "dirichlet")
        np.testing.assert_allclose(m.raw(1e9 * np.array([[0.2, 0.3, 0.1, 0.4]] * 2)), 0.0, atol=1e-8)

    @pytest.mark.parametrize("kind", BINARY_KINDS)
    def test_prior_state_scores_zero(self, kind):
        control = kind != "EntropyOfMax"
        m = build_metric(MetricSpec(kind, control=control, offset=True), "binary", (1, 1))
        np.testing.assert_allclose(m.value(np.ones(3), np.ones(3)), 0.0, atol=1e-12)
