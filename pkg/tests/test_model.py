import math

import numpy as np
import pytest
from scipy import integrate, stats

from brease.data import ASPIRIN_PHS, TrialData
from brease.model import (
    BreaseParams,
    BreasePrior,
    ResponseTypeProbs,
    brease_eb_prior,
    conditional_density_theta1,
    default_prior,
    equal_confidence_theta1_shapes,
    from_dirichlet,
    is_equal_confidence,
    log_likelihood,
    marginal_density_theta1,
    no_harm_theta1_shapes,
    params_from_response_types,
    partial_id_bounds,
    prior_covariance,
    response_type_probs,
    risk_of_treatment,
    sample_prior,
    to_dirichlet,
    to_generalized_dirichlet,
    treated_risk,
)
from brease.numerics import DomainError, RngStream

UNIFORM = BreasePrior(0.5, 0.5, 0.5, 2, 2, 2)


class TestPriorTypes:
    @pytest.mark.parametrize("field,value", [("mu0", 0.0), ("mue", 1.0), ("ns", 0.0), ("n0", -1.0)])
    def test_invariants(self, field, value):
        kw = dict(mu0=0.5, mue=0.3, mus=0.3, n0=2, ne=1, ns=1)
        kw[field] = value
        with pytest.raises(DomainError):
            BreasePrior(**kw)

    def test_default(self):
        assert default_prior() == BreasePrior(0.5, 0.3, 0.3, 2, 1, 1)

    def test_default_domain(self):
        with pytest.raises(DomainError):
            default_prior(1.5)

    def test_json_round_trip(self):
        p = BreasePrior(0.2, 0.1, 0.7, 3.5, 0.5, 12)
        assert BreasePrior.from_json(p.to_json()) == p

    def test_json_missing_field(self):
        with pytest.raises(DomainError):
            BreasePrior.from_json('{"mu0": 0.5}')

    def test_params_domain(self):
        with pytest.raises(DomainError):
            BreaseParams(0.5, 1.2, 0.0)


class TestRiskOfTreatment:
    def test_null_treatment(self):
        assert risk_of_treatment(BreaseParams(0.3, 0, 0)) == pytest.approx(0.3)

    def test_hand_value(self):
        assert risk_of_treatment(BreaseParams(0.5, 0.4, 0.1)) == pytest.approx(0.35, abs=1e-15)

    def test_functional_independence(self):
        s = 0.37
        t = np.linspace(0.01, 0.99, 50)
        assert np.allclose(treated_risk(t, 1 - s, s), s, atol=1e-15)


class TestLikelihood:
    def test_empty(self):
        assert log_likelihood(TrialData(0, 0, 0, 0), BreaseParams(0.3, 0.2, 0.1)) == 0.0

    def test_paths_agree_on_hand_instance(self):
        d, p = TrialData(1, 2, 1, 2), BreaseParams(0.5, 0.2, 0.2)
        assert log_likelihood(d, p, "double_sum") == pytest.approx(log_likelihood(d, p), abs=1e-10)

    def test_impossible_event(self):
        assert log_likelihood(TrialData(0, 1, 1, 1), BreaseParams(0.5, 1.0, 0.0)) == -np.inf

    def test_paths_agree_random(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            N0, N1 = rng.integers(0, 21, 2)
            d = TrialData(int(rng.integers(0, N0 + 1)), int(N0), int(rng.integers(0, N1 + 1)), int(N1))
            p = BreaseParams(*rng.random(3))
            a, b = log_likelihood(d, p), log_likelihood(d, p, "double_sum")
            assert b == pytest.approx(a, abs=1e-9, rel=1e-12)

    def test_unknown_method(self):
        with pytest.raises(DomainError):
            log_likelihood(TrialData(0, 1, 0, 1), BreaseParams(0.5, 0.5, 0.5), "other")


class TestResponseTypes:
    def test_uniform_params(self):
        r = response_type_probs(BreaseParams(0.5, 0.5, 0.5))
        assert (r.p00, r.p10, r.p01, r.p11) == (0.25, 0.25, 0.25, 0.25)

    def test_margins(self):
        rng = np.random.default_rng(4)
        for t, e, s in rng.random((100, 3)):
            p = BreaseParams(t, e, s)
            r = response_type_probs(p)
            assert r.p10 + r.p11 == pytest.approx(t, abs=1e-15)
            assert r.p01 + r.p11 == pytest.approx(p.theta1, abs=1e-15)
            assert r.p00 + r.p10 + r.p01 + r.p11 == pytest.approx(1.0, abs=1e-12)

    def test_no_effect(self):
        r = response_type_probs(BreaseParams(0.4, 0.0, 0.0))
        assert r.p01 == 0 and r.p10 == 0

    def test_inverse(self):
        p = BreaseParams(0.3, 0.6, 0.05)
        q = params_from_response_types(response_type_probs(p))
        assert np.allclose([q.theta0, q.eta_e, q.eta_s], [0.3, 0.6, 0.05], atol=1e-15)

    def test_inverse_needs_interior_theta0(self):
        with pytest.raises(DomainError):
            params_from_response_types(ResponseTypeProbs(1.0, 0.0, 0.0, 0.0))


class TestPartialIdentification:
    def test_uninformative(self):
        b = partial_id_bounds(0.5, 0.5)
        assert (b.eta_e_low, b.eta_e_high, b.eta_s_low, b.eta_s_high) == (0, 1, 0, 1)

    def test_zero_treated_risk(self):
        b = partial_id_bounds(0.3, 0.0)
        assert (b.eta_e_low, b.eta_e_high, b.eta_s_low, b.eta_s_high) == (1, 1, 0, 0)

    def test_monotone_point_inside_interval(self):
        rng = np.random.default_rng(5)
        for t0, t1 in rng.random((500, 2)):
            if t1 <= t0:
                b = partial_id_bounds(t0, t1)
                assert b.eta_e_low - 1e-15 <= 1 - t1 / t0 <= b.eta_e_high + 1e-15

    def test_bounds_ordered(self):
        rng = np.random.default_rng(6)
        for t0, t1 in rng.random((500, 2)):
            b = partial_id_bounds(t0, t1)
            assert b.eta_e_low <= b.eta_e_high and b.eta_s_low <= b.eta_s_high

    def test_domain(self):
        with pytest.raises(DomainError):
            partial_id_bounds(1.0, 0.5)


class TestPriorMoments:
    def test_zero_covariance(self):
        assert prior_covariance(BreasePrior(0.3, 0.4, 0.6, 5, 2, 3)).cov == 0.0

    def test_default_values(self):
        m = prior_covariance(default_prior())
        assert m.cov == pytest.approx(0.25 * 0.4 / 3, rel=1e-12)
        assert m.cor == pytest.approx(0.4, rel=1e-12)

    def test_default_half_is_uncorrelated(self):
        assert prior_covariance(default_prior(0.5)).cor == 0.0

    def test_correlation_is_one_minus_two_mu(self):
        for mu in (0.1, 0.2, 0.45, 0.7):
            assert prior_covariance(default_prior(mu)).cor == pytest.approx(1 - 2 * mu, rel=1e-12)

    @pytest.mark.slow
    def test_monte_carlo_default(self):
        p = default_prior()
        t0, e, s = sample_prior(p, 1_000_000, RngStream(7))
        t1 = treated_risk(t0, e, s)
        prod = (t0 - t0.mean()) * (t1 - t1.mean())
        assert abs(prod.mean() - prior_covariance(p).cov) <= 3 * prod.std() / np.sqrt(prod.size)
        assert t1.var() == pytest.approx(prior_covariance(p).var1, rel=0.01)


class TestConditionalDensity:
    def test_closed_form_branches(self):
        assert conditional_density_theta1(UNIFORM, 0.25, 0.1) == pytest.approx(0.1 / (0.25 * 0.75), rel=1e-12)
        assert conditional_density_theta1(UNIFORM, 0.25, 0.5) == pytest.approx(1 / 0.75, rel=1e-12)
        assert conditional_density_theta1(UNIFORM, 0.25, 0.9) == pytest.approx(0.1 / (0.25 * 0.75), rel=1e-12)

    def test_quadrature_matches_closed_form(self):
        rng = np.random.default_rng(8)
        for t0, t1 in rng.uniform(0.01, 0.99, (50, 2)):
            a = conditional_density_theta1(UNIFORM, t0, t1)
            b = conditional_density_theta1(UNIFORM, t0, t1, method="quadrature")
            assert b == pytest.approx(a, abs=1e-8)

    def test_uniform_efficacy_fast_path(self):
        p = BreasePrior(0.5, 0.5, 0.1, 2, 2, 3)
        for t0, t1 in [(0.2, 0.1), (0.7, 0.5), (0.4, 0.9)]:
            a = conditional_density_theta1(p, t0, t1)
            b = conditional_density_theta1(p, t0, t1, method="quadrature")
            assert b == pytest.approx(a, abs=1e-8)

    @pytest.mark.slow
    def test_normalized_for_random_priors(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            p = BreasePrior(0.5, *rng.uniform(0.1, 0.9, 2), 2, *rng.uniform(1.0, 8.0, 2))
            t0 = rng.uniform(0.05, 0.95)
            kinks = sorted({min(t0, 1 - t0), max(t0, 1 - t0)})
            total = integrate.quad(
                lambda x: conditional_density_theta1(p, t0, x), 0, 1, points=kinks, epsabs=1e-10, limit=200
            )[0]
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_outside_support(self):
        assert conditional_density_theta1(UNIFORM, 0.3, 1.2) == 0.0

    def test_domain(self):
        with pytest.raises(DomainError):
            conditional_density_theta1(UNIFORM, 0.0, 0.5)


class TestMarginalDensity:
    def test_entropy_value(self):
        assert marginal_density_theta1(UNIFORM, 0.5) == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_no_harm_log(self):
        assert marginal_density_theta1(UNIFORM, 0.1, constraint="no_harm") == pytest.approx(-math.log(0.1), abs=1e-12)

    def test_quadrature_matches_entropy(self):
        for x in (0.05, 0.3, 0.5, 0.8):
            exact = -2 * (x * math.log(x) + (1 - x) * math.log(1 - x))
            assert marginal_density_theta1(UNIFORM, x, method="quadrature") == pytest.approx(exact, abs=1e-4)

    def test_quadrature_matches_no_harm(self):
        for x in (0.05, 0.3, 0.7):
            val = marginal_density_theta1(UNIFORM, x, constraint="no_harm", method="quadrature")
            assert val == pytest.approx(-math.log(x), abs=1e-4)

    @pytest.mark.slow
    def test_equal_confidence_beta(self):
        p = BreasePrior(0.4, 0.3, 0.6, 5.0, 2.0, 3.0)
        assert is_equal_confidence(p)
        a, b = equal_confidence_theta1_shapes(p)
        for x in (0.1, 0.6):
            assert marginal_density_theta1(p, x) == pytest.approx(stats.beta.pdf(x, a, b), abs=1e-4)

    @pytest.mark.slow
    def test_default_prior_is_uniform_marginal(self):
        for x in (0.1, 0.5, 0.77):
            assert marginal_density_theta1(default_prior(), x) == pytest.approx(1.0, abs=1e-4)


class TestInducedPriorDraws:
    @pytest.mark.slow
    def test_equal_confidence_ks(self):
        p = BreasePrior(0.4, 0.3, 0.6, 5.0, 2.0, 3.0)
        t0, e, s = sample_prior(p, 1_000_000, RngStream(10))
        a, b = equal_confidence_theta1_shapes(p)
        assert stats.kstest(treated_risk(t0, e, s), stats.beta(a, b).cdf).pvalue > 1e-3

    @pytest.mark.parametrize("prior", [BreasePrior(0.5, 0.3, 0.5, 4.0, 2.0, 1.0), BreasePrior(0.3, 0.2, 0.5, 2.5, 0.75, 1.0)])
    def test_no_harm_product_of_betas(self, prior):
        # Holds for non-integer shapes as well.
        t0, e, _ = sample_prior(prior, 200_000, RngStream(11))
        a, b = no_harm_theta1_shapes(prior)
        assert stats.kstest((1 - e) * t0, stats.beta(a, b).cdf).pvalue > 1e-3


class TestDirichletForms:
    def test_equal_confidence_is_plain_dirichlet(self):
        gd = to_generalized_dirichlet(BreasePrior(0.4, 0.3, 0.6, 5.0, 2.0, 3.0))
        assert np.allclose(gd.b, 1.0)

    def test_half_prior(self):
        gd = to_generalized_dirichlet(BreasePrior(0.5, 0.5, 0.5, 2, 1, 1))
        assert gd.a == (0.5, 0.5, 0.5, 0.5) and gd.b == (1.0, 1.0, 1.0, 1.0)
        assert gd.gamma.shape == (4, 4)

    def test_round_trip(self):
        alphas = (0.7, 1.3, 2.2, 0.4)
        assert np.allclose(to_dirichlet(from_dirichlet(*alphas)), alphas, rtol=1e-12)

    def test_to_dirichlet_needs_equal_confidence(self):
        with pytest.raises(DomainError):
            to_dirichlet(BreasePrior(0.5, 0.3, 0.3, 2.0, 3.0, 1.0))

    def test_generalized_density_matches_beta_product(self):
        # Ratios of the generalized Dirichlet density agree with the product of the three
        # independent beta densities times the Jacobian of the map to response types.
        p = BreasePrior(0.3, 0.2, 0.6, 3.0, 1.5, 4.0)
        gd = to_generalized_dirichlet(p)

        def log_beta_side(q: BreaseParams):
            t, e, s = q.theta0, q.eta_e, q.eta_s
            dens = (
                stats.beta.logpdf(t, *p.shapes0)
                + stats.beta.logpdf(e, *p.shapes_e)
                + stats.beta.logpdf(s, *p.shapes_s)
            )
            return dens - math.log(t * (1 - t))

        pts = [BreaseParams(0.3, 0.4, 0.2), BreaseParams(0.7, 0.1, 0.8), BreaseParams(0.5, 0.5, 0.5)]
        lhs = [gd.log_density_unnormalized(response_type_probs(q)) for q in pts]
        rhs = [log_beta_side(q) for q in pts]
        assert np.allclose(np.diff(lhs), np.diff(rhs), atol=1e-10)


class TestEmpiricalBayes:
    def test_empty_data(self):
        p = brease_eb_prior(TrialData(0, 0, 0, 0), 1)
        assert (p.mue, p.mus) == (0.5, 0.5)

    def test_aspirin(self):
        t0, t1 = 27 / 11036, 11 / 11039
        p = brease_eb_prior(ASPIRIN_PHS, 1)
        assert p.mue == pytest.approx(0.5 * ((1 - t1 / t0) + 1.0), rel=1e-12)
        assert p.mus == pytest.approx(0.5 * (t1 / (1 - t0)), rel=1e-12)
        assert (p.mu0, p.n0, p.ne, p.ns) == (0.5, 2.0, 1.0, 1.0)

    def test_zero_size(self):
        with pytest.raises(DomainError):
            brease_eb_prior(ASPIRIN_PHS, 0)
