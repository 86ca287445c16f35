"""Marginal likelihoods and Bayes factors under the causal beta prior.

Every closed form is a (double or single) sum of beta-function ratios,
accumulated on the log scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .data import TrialData
from .model import BreasePrior, sample_prior, treated_risk
from .numerics import DomainError, NumericError, as_stream, log_beta, log_binom, log_sum_exp
from .samplers import H0Prior, as_h0_prior, exact_sample, mixture_table

MODELS = (
    "M0",
    "M1",
    "M_minus",
    "M_plus",
    "M_minus_mono",
    "M_plus_mono",
    "M_minus_sym",
    "M_plus_sym",
    "H0_aggregated",
    "IB_H0",
    "IB_H1",
    "LT_H0",
    "LT_H1",
)

# Rows of the double sum are accumulated in blocks of at most this many terms.
CHUNK_TERMS = 4_000_000


@dataclass(frozen=True)
class LogEvidence:
    log_ml: float
    model: str
    data_fingerprint: str
    mc_error: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.model not in MODELS:
            raise DomainError(f"unknown model label {self.model!r}")
        if self.mc_error < 0 or np.isnan(self.log_ml):
            raise DomainError("invalid evidence value")

    def report(self, other: "LogEvidence | None" = None) -> dict:
        bf = None
        if other is not None:
            b = bayes_factor(self, other)
            bf = {"model": other.model, "bf": b.bf, "log_bf": b.log_bf, "mc_error": b.mc_error}
        return {
            "model": self.model,
            "log_ml": self.log_ml,
            "bf_vs": bf,
            "mc_error": self.mc_error,
            "data_fingerprint": self.data_fingerprint,
        }

    def to_json(self, other: "LogEvidence | None" = None) -> str:
        return json.dumps(self.report(other), sort_keys=True)


def _log_const(data: TrialData) -> float:
    y0, N0, y1, N1 = data.counts()
    return float(log_binom(N0, y0) + log_binom(N1, y1))


def log_ml_m0(data: TrialData, prior: BreasePrior) -> LogEvidence:
    """Common risk theta0 = theta1 with the theta0 prior: a beta-binomial evidence."""
    data.checked()
    y0, N0, y1, N1 = data.counts()
    a, b = prior.shapes0
    y, N = y0 + y1, N0 + N1
    val = _log_const(data) + float(log_beta(y + a, N - y + b) - log_beta(a, b))
    return LogEvidence(val, "M0", data.fingerprint())


def log_ml_m1(data: TrialData, prior: BreasePrior, reverse: bool = False) -> LogEvidence:
    """Unconstrained evidence as a double sum over doomed (j) and preventive (k) counts.

    reverse=True accumulates the rows in the opposite order, which exists to
    check that the result does not depend on summation order.
    """
    data.checked()
    y0, N0, y1, N1 = data.counts()
    N = N0 + N1
    a0, b0 = prior.shapes0
    ae, be = prior.shapes_e
    as_, bs = prior.shapes_s
    norm = float(log_beta(a0, b0) + log_beta(ae, be) + log_beta(as_, bs))
    k = np.arange(N1 - y1 + 1)
    lbk = log_binom(N1 - y1, k)
    rows_per_block = max(1, CHUNK_TERMS // k.size)
    order = np.arange(y1 + 1)[::-1] if reverse else np.arange(y1 + 1)
    partial = []
    for start in range(0, order.size, rows_per_block):
        j = order[start : start + rows_per_block][:, None]
        terms = (
            log_binom(y1, j)
            + lbk[None, :]
            + log_beta(k + ae, j + be)
            + log_beta(y0 + j + k + a0, N - (y0 + j + k) + b0)
            + log_beta(y1 - j + as_, N1 - y1 - k + bs)
        )
        partial.append(log_sum_exp(terms))
    val = _log_const(data) + log_sum_exp(partial) - norm
    return LogEvidence(val, "M1", data.fingerprint())


def log_ml_monotone(data: TrialData, prior: BreasePrior, constraint: str) -> LogEvidence:
    """Evidence with eta_s = 0 (no_harm) or eta_e = 0 (no_benefit)."""
    data.checked()
    y0, N0, y1, N1 = data.counts()
    N = N0 + N1
    a0, b0 = prior.shapes0
    if constraint == "no_harm":
        ae, be = prior.shapes_e
        k = np.arange(N1 - y1 + 1)
        terms = (
            log_binom(N1 - y1, k)
            + log_beta(y0 + y1 + k + a0, N - (y0 + y1 + k) + b0)
            + log_beta(k + ae, y1 + be)
        )
        norm = log_beta(a0, b0) + log_beta(ae, be)
        model = "M_minus_mono"
    elif constraint == "no_benefit":
        as_, bs = prior.shapes_s
        j = np.arange(y1 + 1)
        terms = (
            log_binom(y1, j)
            + log_beta(y0 + j + a0, N - (y0 + j) + b0)
            + log_beta(y1 - j + as_, N1 - y1 + bs)
        )
        norm = log_beta(a0, b0) + log_beta(as_, bs)
        model = "M_plus_mono"
    else:
        raise DomainError("constraint must be no_harm or no_benefit")
    val = _log_const(data) + log_sum_exp(terms) - float(norm)
    return LogEvidence(val, model, data.fingerprint())


def _log_mean2(a: float, b: float) -> float:
    return log_sum_exp([a, b]) - np.log(2.0)


def log_ml_symmetrized_minus(data: TrialData, prior_forward: BreasePrior, prior_reverse: BreasePrior) -> LogEvidence:
    """Benefit hypothesis with the two arms on an equal footing.

    Averages the no-harm model built from the control arm (prior_forward on
    theta0 and eta_e) with the model built from the treated arm, in which
    theta0 = theta1 + (1 - theta1) eta_s' and prior_reverse's (mu0, n0) and
    (mus, ns) describe theta1 and eta_s'. The latter is the no-benefit model
    of the arm-swapped trial.
    """
    fwd = log_ml_monotone(data, prior_forward, "no_harm").log_ml
    rev = log_ml_monotone(data.swapped(), prior_reverse, "no_benefit").log_ml
    return LogEvidence(_log_mean2(fwd, rev), "M_minus_sym", data.fingerprint(), meta={"forward": fwd, "reverse": rev})


def log_ml_symmetrized_plus(data: TrialData, prior_forward: BreasePrior, prior_reverse: BreasePrior) -> LogEvidence:
    """Harm hypothesis counterpart of log_ml_symmetrized_minus."""
    fwd = log_ml_monotone(data, prior_forward, "no_benefit").log_ml
    rev = log_ml_monotone(data.swapped(), prior_reverse, "no_harm").log_ml
    return LogEvidence(_log_mean2(fwd, rev), "M_plus_sym", data.fingerprint(), meta={"forward": fwd, "reverse": rev})


def _log_beta3(a, b, c):
    return gammaln(a) + gammaln(b) + gammaln(c) - gammaln(a + b + c)


def log_ml_h0_aggregated(data: TrialData, prior) -> LogEvidence:
    """Null-model evidence under the aggregated Dirichlet on (p00, p10 + p01, p11)."""
    data.checked()
    h: H0Prior = as_h0_prior(prior)
    y0, N0, y1, N1 = data.counts()
    y, n_minus = y0 + y1, N0 + N1 - y0 - y1
    c00, c10, c11 = h.dirichlet
    k = np.arange(n_minus + 1)
    lbk = log_binom(n_minus, k) - k * np.log(2.0)
    rows_per_block = max(1, CHUNK_TERMS // k.size)
    partial = []
    for start in range(0, y + 1, rows_per_block):
        j = np.arange(start, min(y + 1, start + rows_per_block))[:, None]
        terms = (
            log_binom(y, j)
            - j * np.log(2.0)
            + lbk[None, :]
            + _log_beta3(n_minus + c00 - k, j + k + c10, y + c11 - j)
        )
        partial.append(log_sum_exp(terms))
    val = _log_const(data) + log_sum_exp(partial) - float(_log_beta3(c00, c10, c11))
    return LogEvidence(val, "H0_aggregated", data.fingerprint())


def _direction_event(theta0, theta1, direction):
    if direction == "benefit":
        return theta1 < theta0
    if direction == "harm":
        return theta1 > theta0
    raise DomainError("direction must be benefit or harm")


def direction_probabilities(data, prior, direction, prior_draws, posterior_draws, seed):
    """Monte Carlo prior and posterior probabilities of the direction event."""
    rng = as_stream(seed)
    child_prior, child_post = rng.spawn(2)
    t0, ee, es = sample_prior(prior, prior_draws, child_prior)
    p_prior = float(np.mean(_direction_event(t0, treated_risk(t0, ee, es), direction)))
    post = exact_sample(data, prior, posterior_draws, child_post)
    p_post = float(np.mean(_direction_event(post.theta0, post.theta1, direction)))
    return p_prior, p_post


def log_ml_directional(
    data: TrialData,
    prior: BreasePrior,
    direction: str,
    prior_draws: int = 100_000,
    posterior_draws: int = 100_000,
    seed=0,
) -> LogEvidence:
    """Evidence of the prior truncated to theta1 < theta0 (benefit) or > (harm).

    Equals the unconstrained evidence times posterior over prior probability
    of the event; both probabilities come from i.i.d. draws, and mc_error is
    the delta-method standard error of the log ratio.
    """
    if prior_draws < 10_000 or posterior_draws < 10_000:
        raise DomainError("direction probabilities need at least 10^4 draws each")
    p_prior, p_post = direction_probabilities(data, prior, direction, prior_draws, posterior_draws, seed)
    if p_prior == 0.0 or p_post == 0.0:
        raise NumericError(
            f"estimated {'prior' if p_prior == 0 else 'posterior'} probability of {direction} is 0; "
            "increase the draw count"
        )
    se = np.sqrt((1 - p_prior) / (p_prior * prior_draws) + (1 - p_post) / (p_post * posterior_draws))
    l1 = log_ml_m1(data, prior).log_ml
    model = "M_minus" if direction == "benefit" else "M_plus"
    return LogEvidence(
        l1 + np.log(p_post) - np.log(p_prior),
        model,
        data.fingerprint(),
        mc_error=float(se),
        meta={"prior_probability": p_prior, "posterior_probability": p_post},
    )


@dataclass(frozen=True)
class BayesFactor:
    bf: float
    log_bf: float
    mc_error: float


def bayes_factor(num: LogEvidence, den: LogEvidence) -> BayesFactor:
    if num.data_fingerprint != den.data_fingerprint:
        raise DomainError("evidences were computed on different data")
    log_bf = num.log_ml - den.log_ml
    with np.errstate(over="ignore"):
        bf = float(np.exp(log_bf))
    return BayesFactor(bf, log_bf, float(np.hypot(num.mc_error, den.mc_error)))


# ------------------------------------------------------ posterior moments

FUNCTIONALS = ("theta0", "eta_e", "eta_s", "risk_ratio", "risk_difference")


def analytic_posterior_moment(
    data: TrialData, prior: BreasePrior, functional: str, constraint: str | None = None
) -> float:
    """Posterior expectation from the mixture weights and component beta means."""
    if functional not in FUNCTIONALS:
        raise DomainError(f"unknown functional {functional!r}")
    table = mixture_table(data, prior, constraint)
    w = table.probabilities()
    m0 = table.a0 / (table.a0 + table.b0)
    me = table.ae / (table.ae + table.be) if table.ae is not None else np.zeros_like(m0)
    ms = table.as_ / (table.as_ + table.bs) if table.as_ is not None else np.zeros_like(m0)
    if functional == "theta0":
        return float(w @ m0)
    if functional == "eta_e":
        return float(w @ me)
    if functional == "eta_s":
        return float(w @ ms)
    if functional == "risk_difference":
        # E[theta1 - theta0] = E[eta_s] - E[theta0 eta_e] - E[theta0 eta_s]
        return float(w @ ms - w @ (m0 * me) - w @ (m0 * ms))
    # E[1/theta0] for Beta(a, b) is (a + b - 1) / (a - 1), finite only for a > 1.
    live = w > 0
    if table.as_ is not None and np.min(table.a0[live]) <= 1.0:
        raise NumericError(
            "E[eta_s / theta0 | data] diverges: need every posterior theta0 shape "
            f"y0 + mu0*n0 > 1, got {np.min(table.a0[live]):.4g}"
        )
    inv0 = np.where(table.a0 > 1.0, (table.a0 + table.b0 - 1.0) / np.maximum(table.a0 - 1.0, 1e-300), np.inf)
    e_inv = float(w @ (ms * inv0)) if table.as_ is not None else 0.0
    return float(1.0 - w @ me - w @ ms + e_inv)
