"""Posterior samplers: exact mixture sampling and data-augmentation Gibbs.

Given the latent counts C1 (treated events caused by treatment) and P1
(treated non-events prevented by treatment), the posterior of
(theta0, eta_e, eta_s) is a product of independent betas. Summing over the
latent counts gives a finite beta mixture, which the exact sampler draws from
directly; the Gibbs sampler alternates latent counts and betas instead.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .data import TrialData
from .model import BreasePrior, treated_risk
from .numerics import (
    ONE_MINUS_EPS,
    TINY,
    DomainError,
    NumericError,
    RngStream,
    _gen,
    as_stream,
    beta_variates,
    log_beta,
    log_binom,
    log_sum_exp,
    sample_beta,
    sample_dirichlet,
)

CONSTRAINTS = (None, "no_harm", "no_benefit")


@dataclass(frozen=True)
class CounterfactualCounts:
    c1: int
    p1: int


@dataclass(frozen=True)
class AggregatedCounts:
    w0: int
    w1: int


@dataclass
class DrawSet:
    """Posterior draws of (theta0, eta_e, eta_s) with run metadata."""

    theta0: np.ndarray
    eta_e: np.ndarray
    eta_s: np.ndarray
    meta: dict = field(default_factory=dict)
    theta1_override: np.ndarray | None = None

    def __post_init__(self):
        self.theta0 = np.asarray(self.theta0, dtype=float)
        self.eta_e = np.asarray(self.eta_e, dtype=float)
        self.eta_s = np.asarray(self.eta_s, dtype=float)
        if not (self.theta0.shape == self.eta_e.shape == self.eta_s.shape):
            raise DomainError("draw arrays must have equal length")

    def __len__(self) -> int:
        return self.theta0.size

    @property
    def theta1(self) -> np.ndarray:
        if self.theta1_override is not None:
            return self.theta1_override
        return treated_risk(self.theta0, self.eta_e, self.eta_s)

    def estimand(self, name: str) -> np.ndarray:
        if name == "theta0":
            return self.theta0
        if name == "theta1":
            return self.theta1
        if name == "eta_e":
            return self.eta_e
        if name == "eta_s":
            return self.eta_s
        if name == "risk_difference":
            return self.theta1 - self.theta0
        if name in ("risk_ratio", "vaccine_efficacy"):
            if np.any(self.theta0 == 0):
                raise NumericError(f"{name} is undefined for draws with theta0 = 0")
            rr = self.theta1 / self.theta0
            return rr if name == "risk_ratio" else 1.0 - rr
        raise DomainError(f"unknown estimand {name!r}")

    def to_csv(self, path) -> None:
        """Write draws as CSV plus a `<path>.json` metadata sidecar."""
        path = Path(path)
        cols = np.column_stack([self.theta0, self.eta_e, self.eta_s, self.theta1])
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("theta0,eta_e,eta_s,theta1\n")
            np.savetxt(fh, cols, delimiter=",", fmt="%.17g")
        Path(str(path) + ".json").write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n", "utf-8")

    @classmethod
    def from_csv(cls, path) -> "DrawSet":
        path = Path(path)
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        sidecar = Path(str(path) + ".json")
        meta = json.loads(sidecar.read_text("utf-8")) if sidecar.exists() else {}
        # Comparator draws carry no eta columns; theta1 is then stored, not derived.
        override = None if np.all(np.isfinite(arr[:, 1:3])) else arr[:, 3]
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], meta, override)

    @staticmethod
    def concat(parts: list["DrawSet"], meta: dict | None = None) -> "DrawSet":
        t1 = None
        if all(p.theta1_override is not None for p in parts):
            t1 = np.concatenate([p.theta1_override for p in parts])
        return DrawSet(
            np.concatenate([p.theta0 for p in parts]),
            np.concatenate([p.eta_e for p in parts]),
            np.concatenate([p.eta_s for p in parts]),
            meta if meta is not None else dict(parts[0].meta),
            t1,
        )


def _meta(seed, method, burn_in, constraint, prior, **extra) -> dict:
    out = {
        "seed": seed,
        "method": method,
        "burn_in": burn_in,
        "constraint": constraint or "none",
        "prior": asdict(prior) if isinstance(prior, (BreasePrior, H0Prior)) else prior,
    }
    out.update(extra)
    return out


# ---------------------------------------------------------------- the table


@dataclass(frozen=True)
class MixtureTable:
    """Log weights over the latent counts and the beta shapes of each component.

    Components are laid out row-major over (C1, P1). Under no_harm only C1 = 0
    is present and eta_s is fixed at 0; under no_benefit only P1 = 0 and
    eta_e is fixed at 0 (the corresponding shape arrays are None).
    """

    c1: np.ndarray
    p1: np.ndarray
    log_w: np.ndarray
    a0: np.ndarray
    b0: np.ndarray
    ae: np.ndarray | None
    be: np.ndarray | None
    as_: np.ndarray | None
    bs: np.ndarray | None
    constraint: str | None

    @property
    def log_total(self) -> float:
        return log_sum_exp(self.log_w)

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_w - self.log_total)

    def sample_components(self, t: int, rng) -> np.ndarray:
        cdf = np.cumsum(self.probabilities())
        cdf /= cdf[-1]
        u = _gen(rng).random(t)
        return np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)


def _counts(data: TrialData):
    if isinstance(data, TrialData):
        data.checked()
        return data.counts()
    raise DomainError("data must be a TrialData")


@lru_cache(maxsize=32)
def mixture_table(data: TrialData, prior: BreasePrior, constraint: str | None = None) -> MixtureTable:
    """The posterior mixture over latent counts; cached per (data, prior, constraint)."""
    if constraint not in CONSTRAINTS:
        raise DomainError(f"unknown constraint {constraint!r}")
    y0, N0, y1, N1 = _counts(data)
    N = N0 + N1
    a0p, b0p = prior.shapes0
    aep, bep = prior.shapes_e
    asp, bsp = prior.shapes_s
    c = np.arange(y1 + 1) if constraint != "no_harm" else np.zeros(1, dtype=np.int64)
    p = np.arange(N1 - y1 + 1) if constraint != "no_benefit" else np.zeros(1, dtype=np.int64)
    C, P = np.meshgrid(c, p, indexing="ij")
    C, P = C.ravel(), P.ravel()
    S = y0 + y1 - C + P  # implied events under control for the pooled sample
    a0, b0 = S + a0p, N - S + b0p
    log_w = log_beta(a0, b0)
    ae = be = as_ = bs = None
    if constraint != "no_harm":
        as_, bs = C + asp, N1 - y1 - P + bsp
        log_w = log_w + log_binom(y1, C) + log_beta(as_, bs)
    if constraint != "no_benefit":
        ae, be = P + aep, y1 - C + bep
        log_w = log_w + log_binom(N1 - y1, P) + log_beta(ae, be)
    if not np.any(np.isfinite(log_w)):
        raise NumericError("every mixture weight is zero")
    for arr in (C, P, log_w, a0, b0, ae, be, as_, bs):
        if arr is not None:
            arr.setflags(write=False)
    return MixtureTable(C, P, log_w, a0, b0, ae, be, as_, bs, constraint)


def _draw_from_table(table: MixtureTable, t: int, rng: RngStream):
    k = table.sample_components(t, rng)
    theta0 = sample_beta(table.a0[k], table.b0[k], rng)
    eta_e = sample_beta(table.ae[k], table.be[k], rng) if table.ae is not None else np.zeros(t)
    eta_s = sample_beta(table.as_[k], table.bs[k], rng) if table.as_ is not None else np.zeros(t)
    return np.atleast_1d(theta0), np.atleast_1d(eta_e), np.atleast_1d(eta_s)


def exact_sample(data: TrialData, prior: BreasePrior, t: int, seed, constraint: str | None = None) -> DrawSet:
    """t independent posterior draws via the latent-count mixture."""
    if t < 1:
        raise DomainError("t must be at least 1")
    rng = as_stream(seed)
    table = mixture_table(data, prior, constraint)
    theta0, eta_e, eta_s = _draw_from_table(table, t, rng)
    return DrawSet(theta0, eta_e, eta_s, _meta(rng.seed, "exact", 0, constraint, prior))


# ------------------------------------------------------------------ Gibbs


def _interior(x):
    return np.clip(x, TINY, ONE_MINUS_EPS)


def _safe_ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return np.clip(r, 0.0, 1.0)


def gibbs_step(y0, N0, y1, N1, theta0, eta_e, eta_s, shapes, gen, constraint=None):
    """One data-augmentation sweep for arrays of independent chains or strata.

    shapes is ((a0, b0), (ae, be), (as, bs)); each entry broadcasts against
    the chain arrays so that the hierarchical sampler can pass per-stratum
    counts with shared hyperparameters.
    """
    (a0, b0), (ae, be), (as_, bs) = shapes
    N = N0 + N1
    theta1 = treated_risk(theta0, eta_e, eta_s)
    p_causal = _safe_ratio((1.0 - theta0) * eta_s, theta1)
    p_prevent = _safe_ratio(theta0 * eta_e, 1.0 - theta1)
    C = gen.binomial(y1, p_causal) if constraint != "no_harm" else np.zeros_like(y1)
    P = gen.binomial(N1 - y1, p_prevent) if constraint != "no_benefit" else np.zeros_like(y1)
    S = y0 + y1 - C + P
    theta0 = _interior(beta_variates(S + a0, N - S + b0, gen))
    if constraint != "no_benefit":
        eta_e = _interior(beta_variates(P + ae, y1 - C + be, gen))
    if constraint != "no_harm":
        eta_s = _interior(beta_variates(C + as_, N1 - y1 - P + bs, gen))
    return theta0, eta_e, eta_s


def gibbs_sample(
    data: TrialData,
    prior: BreasePrior,
    t: int,
    seed,
    burn_in: int = 1000,
    init=(0.5, 0.5, 0.5),
    chains: int = 1,
    constraint: str | None = None,
) -> DrawSet:
    """Data-augmentation Gibbs sampler; returns t post-burn-in draws per chain.

    Chains run side by side on one stream and are concatenated chain by chain.
    A beta draw that lands exactly on 0 or 1 is moved to the nearest interior
    double so that the next binomial step stays well defined.
    """
    if t < 1 or burn_in < 0:
        raise DomainError("need t >= 1 and burn_in >= 0")
    init = tuple(float(v) for v in init)
    if not all(0.0 < v < 1.0 for v in init):
        raise DomainError("initial values must lie strictly inside (0, 1)")
    y0, N0, y1, N1 = _counts(data)
    rng = as_stream(seed)
    gen = rng.generator
    shape = (chains,)
    theta0 = np.full(shape, init[0])
    eta_e = np.full(shape, 0.0 if constraint == "no_benefit" else init[1])
    eta_s = np.full(shape, 0.0 if constraint == "no_harm" else init[2])
    shapes = (prior.shapes0, prior.shapes_e, prior.shapes_s)
    yy0, nn0, yy1, nn1 = (np.full(shape, v, dtype=np.int64) for v in (y0, N0, y1, N1))
    out = np.empty((3, t, chains))
    for it in range(burn_in + t):
        theta0, eta_e, eta_s = gibbs_step(yy0, nn0, yy1, nn1, theta0, eta_e, eta_s, shapes, gen, constraint)
        if it >= burn_in:
            out[:, it - burn_in] = theta0, eta_e, eta_s
    # chain-major order: all of chain 0, then chain 1, ...
    flat = out.transpose(0, 2, 1).reshape(3, -1)
    meta = _meta(rng.seed, "gibbs", burn_in, constraint, prior, chains=chains, init=list(init))
    return DrawSet(flat[0], flat[1], flat[2], meta)


def sample_monotone(
    data: TrialData,
    prior: BreasePrior,
    constraint: str,
    method: str,
    t: int,
    seed,
    burn_in: int = 1000,
) -> DrawSet:
    """Posterior draws under no_harm (eta_s = 0) or no_benefit (eta_e = 0).

    The prior fields of the fixed parameter are ignored.
    """
    if constraint not in ("no_harm", "no_benefit"):
        raise DomainError("constraint must be no_harm or no_benefit")
    if method == "exact":
        return exact_sample(data, prior, t, seed, constraint=constraint)
    if method == "gibbs":
        return gibbs_sample(data, prior, t, seed, burn_in=burn_in, constraint=constraint)
    raise DomainError(f"unknown method {method!r}")


# ------------------------------------------------------ aggregated null model


@dataclass(frozen=True)
class H0Prior:
    """Hyperparameters of the null model with theta0 = theta1."""

    mue: float
    mus: float
    ne: float
    ns: float

    def __post_init__(self):
        if not (0 < self.mue < 1 and 0 < self.mus < 1 and self.ne > 0 and self.ns > 0):
            raise DomainError("need mue, mus in (0, 1) and ne, ns > 0")

    @classmethod
    def from_brease(cls, prior: BreasePrior) -> "H0Prior":
        return cls(prior.mue, prior.mus, prior.ne, prior.ns)

    @property
    def dirichlet(self) -> tuple[float, float, float]:
        """Concentrations of (p00, p10*, p11), where p10* = p10 + p01."""
        return (
            (1 - self.mus) * self.ns,
            self.mue * self.ne + self.mus * self.ns,
            (1 - self.mue) * self.ne,
        )


def as_h0_prior(prior) -> H0Prior:
    if isinstance(prior, H0Prior):
        return prior
    if isinstance(prior, BreasePrior):
        return H0Prior.from_brease(prior)
    return H0Prior(*prior)


@dataclass
class H0AggregatedDraws:
    """Draws of the aggregated cells (p00, p10*, p11) and derived parameters."""

    p00: np.ndarray
    p10s: np.ndarray
    p11: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.p00.size

    @property
    def theta0(self) -> np.ndarray:
        return self.p10s / 2.0 + self.p11

    @property
    def theta1(self) -> np.ndarray:
        return self.theta0

    @property
    def eta_e(self) -> np.ndarray:
        return _safe_ratio(self.p10s, self.p10s + 2.0 * self.p11)

    @property
    def eta_s(self) -> np.ndarray:
        return _safe_ratio(self.p10s, self.p10s + 2.0 * self.p00)

    def to_drawset(self) -> DrawSet:
        return DrawSet(self.theta0, self.eta_e, self.eta_s, dict(self.meta), theta1_override=self.theta0)


def _h0_concentrations(y, n_minus, w0, w1, h: H0Prior):
    c00, c10, c11 = h.dirichlet
    return n_minus + c00 - w1, w0 + w1 + c10, y + c11 - w0


@lru_cache(maxsize=32)
def h0_table(data: TrialData, prior: H0Prior):
    """(w0, w1, log weights) of the null-model mixture."""
    y0, N0, y1, N1 = _counts(data)
    y, n_minus = y0 + y1, N0 + N1 - y0 - y1
    W0, W1 = np.meshgrid(np.arange(y + 1), np.arange(n_minus + 1), indexing="ij")
    W0, W1 = W0.ravel(), W1.ravel()
    a00, a10, a11 = _h0_concentrations(y, n_minus, W0, W1, prior)
    log_b3 = gammaln(a00) + gammaln(a10) + gammaln(a11) - gammaln(a00 + a10 + a11)
    log_w = -(W0 + W1) * np.log(2.0) + log_binom(y, W0) + log_binom(n_minus, W1) + log_b3
    return W0, W1, log_w


def sample_h0_aggregated(data: TrialData, prior, method: str, t: int, seed, burn_in: int = 1000) -> H0AggregatedDraws:
    """Posterior of the null model whose control and treated risks coincide."""
    h = as_h0_prior(prior)
    y0, N0, y1, N1 = _counts(data)
    y, n_minus = y0 + y1, N0 + N1 - y0 - y1
    rng = as_stream(seed)
    gen = rng.generator
    if method == "exact":
        W0, W1, log_w = h0_table(data, h)
        prob = np.exp(log_w - log_sum_exp(log_w))
        cdf = np.cumsum(prob)
        cdf /= cdf[-1]
        k = np.minimum(np.searchsorted(cdf, gen.random(t), side="right"), cdf.size - 1)
        alphas = np.stack(_h0_concentrations(y, n_minus, W0[k], W1[k], h), axis=-1)
        p = sample_dirichlet(alphas, rng)
        burn = 0
    elif method == "gibbs":
        p = np.empty((t, 3))
        cur = np.array(h.dirichlet) / np.sum(h.dirichlet)
        for it in range(burn_in + t):
            q0 = _safe_ratio(cur[1], cur[1] + 2.0 * cur[2])
            q1 = _safe_ratio(cur[1], cur[1] + 2.0 * cur[0])
            w0 = gen.binomial(y, q0)
            w1 = gen.binomial(n_minus, q1)
            cur = sample_dirichlet(np.array(_h0_concentrations(y, n_minus, w0, w1, h)), rng)
            cur = np.clip(cur, TINY, None)
            if it >= burn_in:
                p[it - burn_in] = cur
        burn = burn_in
    else:
        raise DomainError(f"unknown method {method!r}")
    return H0AggregatedDraws(p[:, 0], p[:, 1], p[:, 2], _meta(rng.seed, method, burn, "h0_aggregated", h))
