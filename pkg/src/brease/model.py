"""Baseline risk, efficacy and side-effect parameterization of a two-arm trial.

The control risk theta0 and the causal quantities eta_e (probability that
treatment prevents an event that would otherwise happen) and eta_s
(probability that treatment causes an event that would otherwise not happen)
determine the treated risk theta1 = (1 - eta_e) theta0 + eta_s (1 - theta0).
The prior puts independent mean/sample-size betas on the three.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import special

from .data import TrialData
from .numerics import (
    DomainError,
    as_stream,
    integrate_power_ends,
    integrate_power_product,
    log_binom,
    log_sum_exp,
    sample_beta,
)


@dataclass(frozen=True)
class BreasePrior:
    """theta0 ~ Beta*(mu0, n0), eta_e ~ Beta*(mue, ne), eta_s ~ Beta*(mus, ns).

    Beta*(mu, n) is Beta(mu n, (1 - mu) n).
    """

    mu0: float
    mue: float
    mus: float
    n0: float
    ne: float
    ns: float

    def __post_init__(self):
        for name in ("mu0", "mue", "mus"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise DomainError(f"{name} must lie strictly inside (0, 1), got {v}")
        for name in ("n0", "ne", "ns"):
            v = getattr(self, name)
            if not (v > 0.0 and np.isfinite(v)):
                raise DomainError(f"{name} must be positive, got {v}")

    @property
    def shapes0(self) -> tuple[float, float]:
        return (self.mu0 * self.n0, (1.0 - self.mu0) * self.n0)

    @property
    def shapes_e(self) -> tuple[float, float]:
        return (self.mue * self.ne, (1.0 - self.mue) * self.ne)

    @property
    def shapes_s(self) -> tuple[float, float]:
        return (self.mus * self.ns, (1.0 - self.mus) * self.ns)

    def replace(self, **changes) -> "BreasePrior":
        return replace(self, **changes)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "BreasePrior":
        obj = json.loads(text)
        try:
            return cls(**{k: float(obj[k]) for k in ("mu0", "mue", "mus", "n0", "ne", "ns")})
        except KeyError as e:
            raise DomainError(f"prior JSON is missing {e.args[0]}") from None


def default_prior(mu: float = 0.3) -> BreasePrior:
    """Uniform marginals on both risks, centred on no average effect."""
    if not (0.0 < mu < 1.0):
        raise DomainError(f"mu must lie strictly inside (0, 1), got {mu}")
    return BreasePrior(0.5, mu, mu, 2.0, 1.0, 1.0)


@dataclass(frozen=True)
class BreaseParams:
    theta0: float
    eta_e: float
    eta_s: float

    def __post_init__(self):
        for name in ("theta0", "eta_e", "eta_s"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise DomainError(f"{name} must lie in [0, 1], got {v}")

    @property
    def theta1(self) -> float:
        return risk_of_treatment(self)


def treated_risk(theta0, eta_e, eta_s):
    """Vectorized theta1 from (theta0, eta_e, eta_s)."""
    return (1.0 - eta_e) * theta0 + eta_s * (1.0 - theta0)


def risk_of_treatment(params: BreaseParams) -> float:
    return float(treated_risk(params.theta0, params.eta_e, params.eta_s))


@dataclass(frozen=True)
class ResponseTypeProbs:
    """Probabilities of the four (control, treated) potential-outcome pairs."""

    p00: float
    p10: float
    p01: float
    p11: float

    @property
    def theta0(self) -> float:
        return self.p10 + self.p11

    @property
    def theta1(self) -> float:
        return self.p01 + self.p11


def response_type_probs(params: BreaseParams) -> ResponseTypeProbs:
    t, e, s = params.theta0, params.eta_e, params.eta_s
    return ResponseTypeProbs(p00=(1 - s) * (1 - t), p10=e * t, p01=s * (1 - t), p11=(1 - e) * t)


def params_from_response_types(p: ResponseTypeProbs) -> BreaseParams:
    theta0 = p.p10 + p.p11
    if not (0.0 < theta0 < 1.0):
        raise DomainError("theta0 must lie strictly inside (0, 1) to recover eta_e and eta_s")
    return BreaseParams(theta0, p.p10 / theta0, p.p01 / (1.0 - theta0))


def _xlogy(k, x):
    return special.xlogy(k, x)


def log_likelihood(data: TrialData, params: BreaseParams, method: str = "direct") -> float:
    """Log of the two independent binomial likelihoods.

    method="direct" substitutes theta1 into the binomial kernel.
    method="double_sum" expands the treated-arm terms over the latent
    causal/preventive counts; it exists to cross-check the direct path.
    """
    y0, N0, y1, N1 = data.counts()
    t, e, s = params.theta0, params.eta_e, params.eta_s
    const = float(log_binom(N0, y0) + log_binom(N1, y1))
    if method == "direct":
        t1 = treated_risk(t, e, s)
        return float(
            const + _xlogy(y0, t) + _xlogy(N0 - y0, 1 - t) + _xlogy(y1, t1) + _xlogy(N1 - y1, 1 - t1)
        )
    if method != "double_sum":
        raise DomainError(f"unknown likelihood method {method!r}")
    N = N0 + N1
    j = np.arange(y1 + 1)[:, None]  # treated events from doomed subjects
    k = np.arange(N1 - y1 + 1)[None, :]  # treated non-events from preventive subjects
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = (
            log_binom(y1, j)
            + log_binom(N1 - y1, k)
            + _xlogy(y0 + j + k, t)
            + _xlogy(N - (y0 + j + k), 1 - t)
            + _xlogy(k, e)
            + _xlogy(j, 1 - e)
            + _xlogy(y1 - j, s)
            + _xlogy(N1 - y1 - k, 1 - s)
        )
    terms = np.where(np.isnan(terms), -np.inf, terms)
    return const + log_sum_exp(terms)


@dataclass(frozen=True)
class IdentificationBounds:
    eta_e_low: float
    eta_e_high: float
    eta_s_low: float
    eta_s_high: float


def partial_id_bounds(theta0: float, theta1: float) -> IdentificationBounds:
    """Sharp intervals for eta_e and eta_s given the two arm risks."""
    if not (0.0 < theta0 < 1.0):
        raise DomainError("theta0 must lie strictly inside (0, 1)")
    if not (0.0 <= theta1 <= 1.0):
        raise DomainError("theta1 must lie in [0, 1]")
    return IdentificationBounds(
        eta_e_low=max(0.0, 1.0 - theta1 / theta0),
        eta_e_high=min(1.0, (1.0 - theta1) / theta0),
        eta_s_low=max(0.0, (theta1 - theta0) / (1.0 - theta0)),
        eta_s_high=min(1.0, theta1 / (1.0 - theta0)),
    )


@dataclass(frozen=True)
class PriorMoments:
    cov: float
    var0: float
    var1: float
    cor: float


def prior_covariance(prior: BreasePrior) -> PriorMoments:
    mu0, mue, mus = prior.mu0, prior.mue, prior.mus
    var0 = mu0 * (1 - mu0) / (prior.n0 + 1)
    cov = var0 * (1 - mue - mus)
    var1 = (
        var0 * (1 - mue - mus) ** 2
        + mue * (1 - mue) / (prior.ne + 1) * (var0 + mu0**2)
        + mus * (1 - mus) / (prior.ns + 1) * (var0 + (1 - mu0) ** 2)
    )
    return PriorMoments(cov=cov, var0=var0, var1=var1, cor=cov / np.sqrt(var0 * var1))


def sample_prior(prior: BreasePrior, t: int, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """t independent prior draws of (theta0, eta_e, eta_s)."""
    rng = as_stream(rng)
    theta0 = sample_beta(*prior.shapes0, rng, size=t)
    eta_e = sample_beta(*prior.shapes_e, rng, size=t)
    eta_s = sample_beta(*prior.shapes_s, rng, size=t)
    return theta0, eta_e, eta_s


# ------------------------------------------------------------ induced priors


def _is_uniform(mu: float, n: float) -> bool:
    return abs(mu - 0.5) < 1e-15 and abs(n - 2.0) < 1e-15


def _log_beta_pdf_parts(log_x, log_1mx, a, b):
    return (a - 1.0) * log_x + (b - 1.0) * log_1mx - special.betaln(a, b)


def _uniform_uniform_conditional(theta0, theta1):
    lo, hi = min(theta0, 1 - theta0), max(theta0, 1 - theta0)
    if theta1 <= lo:
        return theta1 / (theta0 * (1 - theta0))
    if theta1 >= hi:
        return (1 - theta1) / (theta0 * (1 - theta0))
    return 1.0 / (1 - theta0) if theta0 < 0.5 else 1.0 / theta0


def _conditional_by_quadrature(prior: BreasePrior, theta0: float, theta1: float, tol: float) -> float:
    # Over eta_e the integrand is a product of powers of eta_e, 1 - eta_e,
    # eta_s = c (eta_e - e_zero) and 1 - eta_s = c (e_one - eta_e), with
    # c = theta0 / (1 - theta0); the admissible eta_e interval is where both
    # eta's lie in [0, 1].
    ae, be = prior.shapes_e
    as_, bs = prior.shapes_s
    e_zero = (theta0 - theta1) / theta0
    e_one = (1.0 - theta1) / theta0
    lo, hi = max(0.0, e_zero), min(1.0, e_one)
    if not hi > lo:
        return 0.0
    log_c = np.log(theta0) - np.log1p(-theta0)
    log_k = (as_ + bs - 2.0) * log_c - special.betaln(ae, be) - special.betaln(as_, bs)
    val = integrate_power_product(
        [0.0, 1.0, e_zero, e_one], [ae - 1.0, be - 1.0, as_ - 1.0, bs - 1.0], lo, hi, tol=tol, log_scale=log_k
    )
    return float(val / (1.0 - theta0))


def conditional_density_theta1(
    prior: BreasePrior, theta0: float, theta1: float, method: str = "auto", tol: float = 1e-10
) -> float:
    """Density of theta1 given theta0 induced by the eta_e and eta_s priors.

    method="auto" uses a closed form when eta_e is uniform; "quadrature"
    always integrates numerically.
    """
    if not (0.0 < theta0 < 1.0):
        raise DomainError("theta0 must lie strictly inside (0, 1)")
    if not (0.0 <= theta1 <= 1.0):
        return 0.0
    if method == "auto" and _is_uniform(prior.mue, prior.ne):
        if _is_uniform(prior.mus, prior.ns):
            return _uniform_uniform_conditional(theta0, theta1)
        as_, bs = prior.shapes_s
        upper = min(1.0, theta1 / (1 - theta0))
        lower = min(1.0, max(0.0, (theta1 - theta0) / (1 - theta0)))
        return float((special.betainc(as_, bs, upper) - special.betainc(as_, bs, lower)) / theta0)
    if method not in ("auto", "quadrature"):
        raise DomainError(f"unknown method {method!r}")
    return _conditional_by_quadrature(prior, theta0, theta1, tol)


def _monotone_conditional(prior: BreasePrior, theta0, theta1, constraint: str):
    theta0 = np.asarray(theta0, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if constraint == "no_harm":  # theta1 = (1 - eta_e) theta0
            a, b = prior.shapes_e
            eta = 1.0 - theta1 / theta0
            dens = np.exp(special.xlogy(a - 1, eta) + special.xlog1py(b - 1, -eta) - special.betaln(a, b)) / theta0
        elif constraint == "no_benefit":  # theta1 = theta0 + eta_s (1 - theta0)
            a, b = prior.shapes_s
            eta = (theta1 - theta0) / (1.0 - theta0)
            dens = np.exp(special.xlogy(a - 1, eta) + special.xlog1py(b - 1, -eta) - special.betaln(a, b)) / (
                1.0 - theta0
            )
        else:
            raise DomainError(f"unknown constraint {constraint!r}")
    return np.where((eta > 0) & (eta < 1), dens, 0.0)


def _entropy2(x):
    return -2.0 * (special.xlogy(x, x) + special.xlogy(1 - x, 1 - x))


def marginal_density_theta1(
    prior: BreasePrior,
    theta1: float,
    constraint: str | None = None,
    method: str = "auto",
    tol: float = 1e-9,
) -> float:
    """Prior density of theta1 after integrating theta0 out.

    constraint="no_harm" fixes eta_s = 0 and "no_benefit" fixes eta_e = 0;
    the corresponding mean/size fields of the prior are then ignored.
    Closed forms are used for the all-uniform cases when method="auto".
    """
    if not (0.0 < theta1 < 1.0):
        return 0.0
    a0, b0 = prior.shapes0
    unif0 = _is_uniform(prior.mu0, prior.n0)
    if method == "auto" and unif0:
        if constraint is None and _is_uniform(prior.mue, prior.ne) and _is_uniform(prior.mus, prior.ns):
            return float(_entropy2(theta1))
        if constraint == "no_harm" and _is_uniform(prior.mue, prior.ne):
            return float(-np.log(theta1))
        if constraint == "no_benefit" and _is_uniform(prior.mus, prior.ns):
            return float(-np.log1p(-theta1))

    def pdf0(t):
        return np.exp(special.xlogy(a0 - 1, t) + special.xlog1py(b0 - 1, -t) - special.betaln(a0, b0))

    if constraint is None:

        def f(t0):
            return np.array([conditional_density_theta1(prior, x, theta1, method="quadrature") for x in t0]) * pdf0(t0)

    else:

        def f(t0):
            return _monotone_conditional(prior, t0, theta1, constraint) * pdf0(t0)

    # Kinks at theta0 = theta1 and theta0 = 1 - theta1, where the conditional
    # density can carry power-law singularities from the eta priors.
    ae, be = prior.shapes_e
    as_, bs = prior.shapes_s
    if constraint is None:
        at_diag = min(ae - 1, 0) + min(as_ - 1, 0)
        at_anti = min(be - 1, 0) + min(bs - 1, 0)
    elif constraint == "no_harm":
        at_diag, at_anti = min(ae - 1, 0), 0.0
    else:
        at_diag, at_anti = min(as_ - 1, 0), 0.0
    expo = {0.0: min(a0 - 1, 0), 1.0: min(b0 - 1, 0)}
    expo[1.0 - theta1] = min(expo.get(1.0 - theta1, 0.0), at_anti)
    expo[theta1] = min(expo.get(theta1, 0.0), at_diag)
    if theta1 == 0.5:
        expo[0.5] = at_diag + at_anti
    cuts = sorted(expo)
    return float(
        sum(
            integrate_power_ends(f, lo, hi, max(expo[lo], -0.999), max(expo[hi], -0.999), tol=tol)
            for lo, hi in zip(cuts[:-1], cuts[1:])
        )
    )


def equal_confidence_theta1_shapes(prior: BreasePrior) -> tuple[float, float]:
    """Beta shapes of theta1 when ne = mu0 n0 and ns = (1 - mu0) n0."""
    m = (1 - prior.mue) * prior.mu0 + prior.mus * (1 - prior.mu0)
    return (m * prior.n0, (1 - m) * prior.n0)


def no_harm_theta1_shapes(prior: BreasePrior) -> tuple[float, float]:
    """Beta shapes of theta1 under eta_s = 0 when ne = mu0 n0."""
    return ((1 - prior.mue) * prior.ne, prior.mue * prior.ne + (1 - prior.mu0) * prior.n0)


def is_equal_confidence(prior: BreasePrior, rtol: float = 1e-12) -> bool:
    return bool(
        np.isclose(prior.ne, prior.mu0 * prior.n0, rtol=rtol)
        and np.isclose(prior.ns, (1 - prior.mu0) * prior.n0, rtol=rtol)
    )


# ------------------------------------------------- Dirichlet representations

GD_GAMMA = np.array([[1, 0, 1, 0], [1, 0, 0, 1], [0, 1, 1, 0], [0, 1, 0, 1]])


@dataclass(frozen=True)
class GeneralizedDirichletParams:
    """Generalized Dirichlet law of the response-type vector (p01, p00, p10, p11).

    density ∝ prod_i p_i^(a_i - 1) prod_j (sum_i gamma_ij p_i)^(b_j - 1)
    """

    a: tuple[float, float, float, float]
    b: tuple[float, float, float, float]
    gamma: np.ndarray

    def log_density_unnormalized(self, p: ResponseTypeProbs) -> float:
        vec = np.array([p.p01, p.p00, p.p10, p.p11])
        a, b = np.asarray(self.a), np.asarray(self.b)
        return float(np.sum((a - 1) * np.log(vec)) + np.sum((b - 1) * np.log(vec @ self.gamma)))


def to_generalized_dirichlet(prior: BreasePrior) -> GeneralizedDirichletParams:
    a = (prior.mus * prior.ns, (1 - prior.mus) * prior.ns, prior.mue * prior.ne, (1 - prior.mue) * prior.ne)
    b = ((1 - prior.mu0) * prior.n0 - prior.ns + 1, prior.mu0 * prior.n0 - prior.ne + 1, 1.0, 1.0)
    return GeneralizedDirichletParams(a=a, b=b, gamma=GD_GAMMA.copy())


def from_dirichlet(a00: float, a10: float, a01: float, a11: float) -> BreasePrior:
    """The mean/size prior equivalent to Dirichlet(a00, a10, a01, a11) on response types."""
    ae = a10 + a11
    as_ = a00 + a01
    return BreasePrior(mu0=ae / (ae + as_), mue=a10 / ae, mus=a01 / as_, n0=ae + as_, ne=ae, ns=as_)


def to_dirichlet(prior: BreasePrior) -> tuple[float, float, float, float]:
    """Dirichlet concentrations (a00, a10, a01, a11); requires equal confidence."""
    if not is_equal_confidence(prior, rtol=1e-9):
        raise DomainError("prior is not of Dirichlet form: need ne = mu0 n0 and ns = (1 - mu0) n0")
    return (
        (1 - prior.mus) * prior.ns,
        prior.mue * prior.ne,
        prior.mus * prior.ns,
        (1 - prior.mue) * prior.ne,
    )


# ----------------------------------------------------------- empirical Bayes


def brease_eb_prior(data: TrialData, n: float) -> BreasePrior:
    """Centre eta_e and eta_s on the midpoints of their identification intervals."""
    if not n > 0:
        raise DomainError("prior sample size n must be positive")
    y0, N0, y1, N1 = data.counts()
    t0 = (y0 + 1) / (N0 + 2)
    t1 = (y1 + 1) / (N1 + 2)
    b = partial_id_bounds(t0, t1)
    mue = 0.5 * (b.eta_e_low + b.eta_e_high)
    mus = 0.5 * (b.eta_s_low + b.eta_s_high)
    return BreasePrior(0.5, mue, mus, 2.0, float(n), float(n))
