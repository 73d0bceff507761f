import numpy as np
import pytest
from scipy import integrate, stats

from budtrial.errors import FamilyMismatchError, InvalidSpecError
from budtrial.posteriors import (
    BetaArm,
    DirichletArm,
    NormalArm,
    TrialHistory,
    best_arm_density,
    best_arm_density_grid,
    dirichlet_marginals,
    posterior_variance,
    prob_greater,
    prob_greater_exact,
    prob_greater_quad,
    update,
)


class TestConjugateUpdates:
    def test_beta_success_and_failure(self):
        s = update(update(BetaArm(), 1), 0)
        assert (s.alpha, s.beta) == (2.0, 2.0)

    def test_beta_rejects_non_binary(self):
        with pytest.raises(FamilyMismatchError):
            update(BetaArm(), 0.5)

    def test_normal_update_matches_formula(self):
        s = NormalArm(prior_var=2.0, outcome_var=0.5)
        for y in (1.0, 2.0, -0.5):
            s = update(s, y)
        prec = 1 / 2.0 + 3 / 0.5
        np.testing.assert_allclose(s.variance, 1 / prec)
        np.testing.assert_allclose(s.mean, (2.5 / 0.5) / prec)

    def test_dirichlet_cells(self):
        s = update(DirichletArm(), (1, 0))
        assert s.counts == (1.0, 2.0, 1.0, 1.0)
        (a1, b1), (a2, b2) = s.marginal_params
        assert (a1, b1, a2, b2) == (3.0, 2.0, 2.0, 3.0)

    def test_dirichlet_rejects_bad_cell(self):
        with pytest.raises(FamilyMismatchError):
            update(DirichletArm(), (2, 0))

    def test_invalid_parameters(self):
        with pytest.raises(InvalidSpecError):
            BetaArm(0.0, 1.0)
        with pytest.raises(InvalidSpecError):
            DirichletArm((1, 1, 1))

    def test_posterior_variance_uniform(self):
        np.testing.assert_allclose(posterior_variance(BetaArm()), 1 / 12)


class TestProbGreater:
    @pytest.mark.parametrize("a,b", [((1, 1), (1, 1)), ((3, 5), (2, 7)), ((12, 4), (9, 9)), ((30, 2), (2, 30))])
    def test_closed_form_matches_quadrature(self, a, b):
        x, y = BetaArm(*a), BetaArm(*b)
        np.testing.assert_allclose(prob_greater_exact(x, y), prob_greater_quad(x, y), atol=1e-10)

    def test_random_states_closed_form_vs_quadrature(self, rng):
        for _ in range(40):
            a1, b1, a2, b2 = rng.integers(1, 40, 4)
            x, y = BetaArm(a1, b1), BetaArm(a2, b2)
            np.testing.assert_allclose(prob_greater_exact(x, y), prob_greater_quad(x, y), atol=1e-10)

    def test_symmetry_and_complement(self):
        x, y = BetaArm(4, 6), BetaArm(7, 2)
        np.testing.assert_allclose(prob_greater(x, y) + prob_greater(y, x), 1.0, atol=1e-12)
        np.testing.assert_allclose(prob_greater(x, x), 0.5, atol=1e-12)

    def test_non_integer_uses_quadrature(self):
        x, y = BetaArm(2.5, 3.5), BetaArm(1.5, 1.5)
        val, _ = integrate.quad(lambda t: stats.beta.pdf(t, 1.5, 1.5) * stats.beta.sf(t, 2.5, 3.5), 0, 1)
        np.testing.assert_allclose(prob_greater(x, y), val, atol=1e-9)


class TestBestArmDensity:
    def test_integrates_to_one(self):
        x, dens, w = best_arm_density_grid([BetaArm(2, 5), BetaArm(4, 4), BetaArm(6, 2)], 2048)
        np.testing.assert_allclose(np.sum(w * dens), 1.0, atol=1e-5)

    def test_two_uniform_arms(self):
        # max of two uniforms has density 2x
        x = np.linspace(0.05, 0.95, 7)
        np.testing.assert_allclose(best_arm_density([BetaArm(), BetaArm()], x), 2 * x)


class TestDirichletMarginals:
    def test_marginal_means(self):
        s = dirichlet_marginals(DirichletArm((2, 3, 4, 1)))
        np.testing.assert_allclose((s.nu1, s.nu2), (0.5, 0.6))

    def test_effect_summary_is_seeded(self):
        a = dirichlet_marginals(DirichletArm((5, 2, 2, 1)), DirichletArm(), draws=2000, seed=3)
        b = dirichlet_marginals(DirichletArm((5, 2, 2, 1)), DirichletArm(), draws=2000, seed=3)
        assert a.effects == b.effects
        assert a.effects["p_E"] <= min(a.effects["p_E1"], a.effects["p_E2"])


class TestTrialHistory:
    def test_record_and_arrays(self):
        h = TrialHistory.fresh(BetaArm(), 3).record(1, 1).record(1, 0).record(2, 1)
        alpha, beta = h.beta_arrays()
        np.testing.assert_array_equal(alpha, [1, 2, 2])
        np.testing.assert_array_equal(beta, [1, 2, 1])
        assert h.t == 3
        np.testing.assert_allclose(h.allocation_props, [0, 2 / 3, 1 / 3])

    def test_family_mismatch(self):
        h = TrialHistory.fresh(NormalArm(), 2)
        with pytest.raises(FamilyMismatchError):
            h.beta_arrays()
