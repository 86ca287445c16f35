"""Independent-beta (IB) and logit-transform (LT) baseline models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit, roots_hermite

from .data import TrialData
from .evidence import LogEvidence
from .numerics import DomainError, NumericError, as_stream, log_beta, log_binom, sample_beta
from .samplers import DrawSet


@dataclass(frozen=True)
class IbPrior:
    a0: float = 1.0
    b0: float = 1.0
    a1: float = 1.0
    b1: float = 1.0

    def __post_init__(self):
        if min(self.a0, self.b0, self.a1, self.b1) <= 0:
            raise DomainError("IB shape parameters must be positive")


@dataclass(frozen=True)
class LtPrior:
    mu_beta: float = 0.0
    mu_psi: float = 0.0
    sigma_beta: float = 1.0
    sigma_psi: float = 1.0

    def __post_init__(self):
        if self.sigma_beta <= 0 or self.sigma_psi <= 0:
            raise DomainError("LT prior scales must be positive")


def _comparator_draws(theta0, theta1, meta) -> DrawSet:
    nan = np.full_like(theta0, np.nan)
    return DrawSet(theta0, nan, nan, meta, theta1_override=theta1)


# ------------------------------------------------------------------ IB


def ib_posterior_sample(data: TrialData, prior: IbPrior, t: int, seed) -> DrawSet:
    data.checked()
    y0, N0, y1, N1 = data.counts()
    rng = as_stream(seed)
    r0, r1 = rng.spawn(2)
    theta0 = sample_beta(prior.a0 + y0, prior.b0 + N0 - y0, r0, size=t)
    theta1 = sample_beta(prior.a1 + y1, prior.b1 + N1 - y1, r1, size=t)
    meta = {"model": "IB", "seed": rng.seed, "method": "exact", "prior": vars(prior)}
    return _comparator_draws(theta0, theta1, meta)


def ib_bf10(data: TrialData, a: float) -> float:
    """Savage-Dickey Bayes factor of theta0 != theta1 under IB(a, a; a, a)."""
    return float(np.exp(ib_log_bf10(data, a)))


def ib_log_bf10(data: TrialData, a: float) -> float:
    if a <= 0.5:
        raise DomainError("the IB Bayes factor needs a > 1/2")
    data.checked()
    y0, N0, y1, N1 = data.counts()
    return float(
        log_beta(2 * a - 1, 2 * a - 1)
        + log_beta(a + y0, a + N0 - y0)
        + log_beta(a + y1, a + N1 - y1)
        - log_beta(2 * a + y0 + y1 - 1, 2 * a + N0 - y0 + N1 - y1 - 1)
        - 2 * log_beta(a, a)
    )


def ib_log_ml(data: TrialData, prior: IbPrior, hypothesis: str) -> LogEvidence:
    """Evidence of the IB model (H1) or of its Savage-Dickey null.

    The null conditions the IB prior on theta0 = theta1, which gives a common
    risk distributed Beta(a0 + a1 - 1, b0 + b1 - 1).
    """
    data.checked()
    y0, N0, y1, N1 = data.counts()
    const = float(log_binom(N0, y0) + log_binom(N1, y1))
    if hypothesis == "H1":
        val = (
            log_beta(prior.a0 + y0, prior.b0 + N0 - y0)
            - log_beta(prior.a0, prior.b0)
            + log_beta(prior.a1 + y1, prior.b1 + N1 - y1)
            - log_beta(prior.a1, prior.b1)
        )
    elif hypothesis == "H0":
        a, b = prior.a0 + prior.a1 - 1, prior.b0 + prior.b1 - 1
        if a <= 0 or b <= 0:
            raise DomainError("the IB null needs a0 + a1 > 1 and b0 + b1 > 1")
        val = log_beta(a + y0 + y1, b + N0 + N1 - y0 - y1) - log_beta(a, b)
    else:
        raise DomainError("hypothesis must be H0 or H1")
    return LogEvidence(const + float(val), f"IB_{hypothesis}", data.fingerprint())


# ------------------------------------------------------------------ LT

# Linear maps from (beta, psi) to the two logits.
_ARM = np.array([[1.0, -0.5], [1.0, 0.5]])


@dataclass
class LtMode:
    x: np.ndarray
    hessian: np.ndarray
    iterations: int


def _lt_terms(data: TrialData, prior: LtPrior, hypothesis: str):
    y0, N0, y1, N1 = data.counts()
    y = np.array([y0, y1], float)
    n = np.array([N0, N1], float)
    if hypothesis == "H1":
        arm = _ARM
        mu = np.array([prior.mu_beta, prior.mu_psi])
        sd = np.array([prior.sigma_beta, prior.sigma_psi])
    elif hypothesis == "H0":
        arm = _ARM[:, :1]
        mu = np.array([prior.mu_beta])
        sd = np.array([prior.sigma_beta])
    else:
        raise DomainError("hypothesis must be H0 or H1")
    return y, n, arm, mu, sd


def _lt_log_post(x, y, n, arm, mu, sd):
    """Log likelihood plus log normal prior density at points x of shape (m, d)."""
    eta = x @ arm.T
    ll = (y * log_expit(eta) + (n - y) * log_expit(-eta)).sum(axis=-1)
    z = (x - mu) / sd
    lp = -0.5 * (z**2).sum(axis=-1) - np.log(sd).sum() - 0.5 * x.shape[-1] * np.log(2 * np.pi)
    return ll + lp


def lt_mode(data: TrialData, prior: LtPrior, hypothesis: str = "H1", max_iter: int = 200) -> LtMode:
    """Newton iterations on the log-concave log posterior."""
    y, n, arm, mu, sd = _lt_terms(data, prior, hypothesis)
    pooled = (y.sum() + 0.5) / (n.sum() + 1.0)
    x = np.zeros(arm.shape[1])
    x[0] = np.log(pooled / (1 - pooled))
    prec = np.diag(1.0 / sd**2)
    for it in range(1, max_iter + 1):
        p = expit(arm @ x)
        grad = arm.T @ (y - n * p) - prec @ (x - mu)
        hess = -(arm.T * (n * p * (1 - p))) @ arm - prec
        step = np.linalg.solve(hess, grad)
        # Halve the step until the target does not decrease.
        f0 = _lt_log_post(x[None], y, n, arm, mu, sd)[0]
        scale = 1.0
        while scale > 1e-8:
            cand = x - scale * step
            if _lt_log_post(cand[None], y, n, arm, mu, sd)[0] >= f0 - 1e-12:
                break
            scale /= 2
        x = cand
        if np.max(np.abs(scale * step)) < 1e-12:
            p = expit(arm @ x)
            hess = -(arm.T * (n * p * (1 - p))) @ arm - prec
            return LtMode(x, hess, it)
    raise NumericError(f"LT mode search did not converge in {max_iter} Newton iterations (last x={x})")


def lt_log_ml(
    data: TrialData, prior: LtPrior, hypothesis: str, rel_tol: float = 1e-6, max_nodes: int = 640
) -> LogEvidence:
    """Evidence by Gauss-Hermite quadrature centred at the mode and scaled by the curvature.

    The node count doubles from 20 until successive estimates agree to rel_tol.
    """
    data.checked()
    y, n, arm, mu, sd = _lt_terms(data, prior, hypothesis)
    mode = lt_mode(data, prior, hypothesis)
    d = mode.x.size
    chol = np.linalg.cholesky(np.linalg.inv(-mode.hessian))
    f_mode = _lt_log_post(mode.x[None], y, n, arm, mu, sd)[0]
    log_jac = 0.5 * d * np.log(2.0) + np.log(np.diag(chol)).sum()
    const = float(log_binom(n[0], y[0]) + log_binom(n[1], y[1]))
    prev = None
    history = []
    m = 20
    while m <= max_nodes:
        z, w = roots_hermite(m)
        grids = np.meshgrid(*([z] * d), indexing="ij")
        zz = np.stack([g.ravel() for g in grids], axis=-1)
        ww = np.prod(np.meshgrid(*([w] * d), indexing="ij"), axis=0).ravel()
        x = mode.x + np.sqrt(2.0) * zz @ chol.T
        g = _lt_log_post(x, y, n, arm, mu, sd) - f_mode + (zz**2).sum(axis=1)
        val = f_mode + log_jac + np.log(np.sum(ww * np.exp(g)))
        history.append((m, float(val)))
        if prev is not None and abs(np.expm1(val - prev)) < rel_tol:
            return LogEvidence(const + float(val), f"LT_{hypothesis}", data.fingerprint(), meta={"nodes": m})
        prev = val
        m *= 2
    raise NumericError(f"LT quadrature did not reach relative tolerance {rel_tol}: {history}")


def lt_log_bf10(data: TrialData, prior: LtPrior) -> float:
    return lt_log_ml(data, prior, "H1").log_ml - lt_log_ml(data, prior, "H0").log_ml


@dataclass
class LtDraws:
    beta: np.ndarray
    psi: np.ndarray
    acceptance: float
    meta: dict = field(default_factory=dict)

    @property
    def theta0(self) -> np.ndarray:
        return expit(self.beta - self.psi / 2)

    @property
    def theta1(self) -> np.ndarray:
        return expit(self.beta + self.psi / 2)

    def to_drawset(self) -> DrawSet:
        return _comparator_draws(self.theta0, self.theta1, dict(self.meta))


def lt_posterior_sample(
    data: TrialData, prior: LtPrior, t: int, seed, burn_in: int = 1000, scale: float = 1.5
) -> LtDraws:
    """Independence Metropolis with a normal proposal at the mode.

    The proposal covariance is the inverse negative Hessian inflated by scale**2
    so that its tails cover the target's.
    """
    data.checked()
    y, n, arm, mu, sd = _lt_terms(data, prior, "H1")
    mode = lt_mode(data, prior, "H1")
    chol = scale * np.linalg.cholesky(np.linalg.inv(-mode.hessian))
    rng = as_stream(seed)
    gen = rng.generator
    total = t + burn_in
    z = gen.standard_normal((total, 2))
    prop = mode.x + z @ chol.T
    # Log importance ratio target / proposal; the proposal's constants cancel.
    log_r = _lt_log_post(prop, y, n, arm, mu, sd) + 0.5 * (z**2).sum(axis=1)
    log_u = np.log(gen.random(total))
    out = np.empty((total, 2))
    cur, cur_r = mode.x.copy(), _lt_log_post(mode.x[None], y, n, arm, mu, sd)[0]
    accepted = 0
    for i in range(total):
        if log_u[i] < log_r[i] - cur_r:
            cur, cur_r = prop[i], log_r[i]
            if i >= burn_in:
                accepted += 1
        out[i] = cur
    acc = accepted / t if t else 0.0
    meta = {
        "model": "LT",
        "seed": rng.seed,
        "method": "independence_mh",
        "burn_in": burn_in,
        "acceptance": acc,
        "prior": vars(prior),
    }
    return LtDraws(out[burn_in:, 0], out[burn_in:, 1], acc, meta)
