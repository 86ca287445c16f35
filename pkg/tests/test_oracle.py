import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import betaln

from brease.comparators import IbPrior, LtPrior
from brease.data import PATHOLOGICAL, TrialData
from brease.model import BreasePrior, default_prior
from brease.numerics import DomainError
from brease.oracle import ORACLE_MODELS, QuadratureSpec, beta_rule, oracle_log_ml, oracle_posterior_marginal, rule

EMPTY = TrialData(0, 0, 0, 0)


def _prior_for(model):
    return {"IB": IbPrior(), "LT": LtPrior()}.get(model, default_prior())


class TestRules:
    @pytest.mark.parametrize("a,b", [(1, 1), (0.01, 1), (0.5, 0.5), (1.2, 2.8), (7, 0.3)])
    def test_beta_rule_integrates_density(self, a, b):
        x, w = beta_rule(a, b, 16, 8)
        assert w.sum() == pytest.approx(1.0, abs=1e-7)
        assert w @ x == pytest.approx(a / (a + b), abs=1e-7)

    def test_rule_with_breaks(self):
        # |x - 1/3| has a kink that the break point absorbs.
        x, w = rule(0.0, 1.0, 0.0, 0.0, 4, 8, breaks=(1 / 3,))
        assert w @ np.abs(x - 1 / 3) == pytest.approx((1 / 9 + 4 / 9) / 2, abs=1e-14)


class TestOracleEvidence:
    @pytest.mark.parametrize("model", ORACLE_MODELS)
    def test_empty(self, model):
        assert oracle_log_ml(EMPTY, _prior_for(model), model) == pytest.approx(0.0, abs=1e-7)

    def test_hand_formula(self):
        # ln(B(3, 3) C(2, 1)^2 / B(1, 1)) under a uniform common risk.
        exact = betaln(3, 3) + 2 * math.log(2)
        assert oracle_log_ml(TrialData(1, 2, 1, 2), default_prior(), "M0") == pytest.approx(exact, abs=1e-6)

    @pytest.mark.slow
    @pytest.mark.parametrize("model", ["M1", "no_harm", "H0_aggregated"])
    def test_panel_doubling_stable(self, model):
        d = TrialData(2, 5, 3, 6)
        spec = QuadratureSpec(tolerance=1e-7)
        a = oracle_log_ml(d, default_prior(), model, spec)
        b = oracle_log_ml(d, default_prior(), model, QuadratureSpec(panels_per_axis=64, tolerance=1e-7))
        assert abs(a - b) < 1e-6

    def test_cost_guard(self):
        with pytest.raises(DomainError):
            oracle_log_ml(TrialData(0, 30, 0, 30), default_prior(), "M0")

    def test_spec_guard(self):
        with pytest.raises(DomainError):
            QuadratureSpec(panels_per_axis=8)

    def test_unknown_model(self):
        with pytest.raises(DomainError):
            oracle_log_ml(EMPTY, default_prior(), "M9")


class TestOracleMarginal:
    @pytest.mark.parametrize("target", ["theta0", "theta1"])
    def test_empty_is_prior(self, target):
        # All shapes >= 2 keep the density smooth, so the midpoint mass is accurate.
        p = BreasePrior(0.3, 0.4, 0.2, 10, 10, 10)
        tab = oracle_posterior_marginal(EMPTY, p, target, grid=200)
        if target == "theta0":
            ref = stats.beta.pdf(tab.x, *p.shapes0)
            assert np.allclose(tab.density, ref, atol=1e-6, rtol=0)
        assert tab.mass() == pytest.approx(1.0, abs=1e-6)

    def test_singular_prior_finite(self):
        tab = oracle_posterior_marginal(EMPTY, BreasePrior(0.3, 0.4, 0.2, 5, 6, 1.5), "theta1", grid=50)
        assert np.all(np.isfinite(tab.density))
        assert tab.mass() == pytest.approx(1.0, abs=2e-3)

    def test_theta1_empty_default_is_uniform(self):
        # Convergence in theta1 is algebraic; the observed error is 1.4e-5.
        tab = oracle_posterior_marginal(EMPTY, default_prior(), "theta1", grid=40)
        assert np.allclose(tab.density, 1.0, atol=3e-5)

    @pytest.mark.slow
    @pytest.mark.parametrize("target", ["theta0", "theta1"])
    def test_pathological_normalized(self, target):
        tab = oracle_posterior_marginal(PATHOLOGICAL, BreasePrior(0.5, 0.5, 0.01, 2, 2, 1), target)
        assert tab.mass() == pytest.approx(1.0, abs=1e-4)

    def test_cost_guard(self):
        with pytest.raises(DomainError):
            oracle_posterior_marginal(TrialData(0, 1500, 0, 1500), default_prior(), "theta0")

    def test_target(self):
        with pytest.raises(DomainError):
            oracle_posterior_marginal(EMPTY, default_prior(), "eta_e")
