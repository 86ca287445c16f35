"""Stratified analyses: independent per-stratum priors, partial pooling, and population effects."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, expit, logit

from .data import StratifiedTrialData, TrialData
from .model import BreasePrior
from .numerics import DomainError, as_stream, sample_dirichlet
from .samplers import DrawSet, exact_sample, gibbs_step

COMPONENTS = ("theta0", "eta_e", "eta_s")
ACCEPT_BAND = (0.05, 0.95)
TARGET_ACCEPT = 0.44


@dataclass(frozen=True)
class HierarchicalHyperPrior:
    """Beta*(lambda, nu) priors on the stratum-level means and Gamma(shape, rate) priors on the sizes."""

    lambda0: float = 0.5
    lambdae: float = 0.5
    lambdas: float = 0.5
    nu0: float = 10.0
    nue: float = 10.0
    nus: float = 10.0
    shape0: float = 10.0
    rate0: float = 0.1
    shapee: float = 10.0
    ratee: float = 0.1
    shapes: float = 10.0
    rates: float = 0.1

    def __post_init__(self):
        if not np.all((self.lam > 0) & (self.lam < 1)):
            raise DomainError("hierarchical means lambda must lie in (0, 1)")
        if np.any(self.nu <= 0) or np.any(self.shape <= 0) or np.any(self.rate <= 0):
            raise DomainError("nu, Gamma shapes and rates must be positive")

    @property
    def lam(self) -> np.ndarray:
        return np.array([self.lambda0, self.lambdae, self.lambdas])

    @property
    def nu(self) -> np.ndarray:
        return np.array([self.nu0, self.nue, self.nus])

    @property
    def shape(self) -> np.ndarray:
        return np.array([self.shape0, self.shapee, self.shapes])

    @property
    def rate(self) -> np.ndarray:
        return np.array([self.rate0, self.ratee, self.rates])


@dataclass
class StratifiedDraws:
    labels: list[str]
    draws: list[DrawSet]
    mu_chain: np.ndarray | None = None  # (t, 3): mu0, mue, mus
    n_chain: np.ndarray | None = None  # (t, 3): n0, ne, ns
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.labels) != len(self.draws):
            raise DomainError("one draw set per stratum is required")
        if len({len(d) for d in self.draws}) > 1:
            raise DomainError("strata must have equal draw counts")

    def __len__(self):
        return len(self.draws[0])

    def __getitem__(self, label: str) -> DrawSet:
        return self.draws[self.labels.index(label)]

    def hyper_csv(self) -> str:
        if self.mu_chain is None:
            raise DomainError("no hierarchical chain recorded")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mu0", "mue", "mus", "n0", "ne", "ns"])
        for row in np.column_stack([self.mu_chain, self.n_chain]):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def _strata(data) -> tuple[list[str], list[TrialData]]:
    if isinstance(data, StratifiedTrialData):
        return data.labels, data.trials
    if isinstance(data, TrialData):
        return ["all"], [data]
    raise DomainError("expected StratifiedTrialData")


def stratified_independent(data, priors, t: int, seed) -> StratifiedDraws:
    """Exact sampling in each stratum under its own prior, on independent child streams."""
    labels, trials = _strata(data)
    if isinstance(priors, BreasePrior):
        priors = [priors] * len(trials)
    priors = list(priors)
    if len(priors) != len(trials):
        raise DomainError(f"{len(trials)} strata but {len(priors)} priors")
    rng = as_stream(seed)
    streams = rng.spawn(len(trials))
    draws = [exact_sample(d, p, t, s) for d, p, s in zip(trials, priors, streams)]
    for d in draws:
        d.meta["seed"] = rng.seed
    return StratifiedDraws(labels, draws, meta={"mode": "independent", "seed": rng.seed})


def _log_beta_pdf(x, a, b):
    return (a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - betaln(a, b)


def _hyper_log_post(params, logit_mu, log_n, hyper: HierarchicalHyperPrior):
    """Per-component log density of (logit mu, log n) given stratum parameters.

    params has shape (3, K). Includes the Jacobians of both transforms.
    """
    mu, n = expit(logit_mu), np.exp(log_n)
    like = _log_beta_pdf(params, (mu * n)[:, None], ((1 - mu) * n)[:, None]).sum(axis=1)
    lam, nu = hyper.lam, hyper.nu
    prior_mu = _log_beta_pdf(mu, lam * nu, (1 - lam) * nu) + np.log(mu) + np.log1p(-mu)
    prior_n = hyper.shape * log_n - hyper.rate * n
    return like + prior_mu + prior_n


def hierarchical_sample(
    data,
    hyper: HierarchicalHyperPrior,
    t: int,
    burn_in: int,
    seed,
    step_sizes=None,
) -> StratifiedDraws:
    """Partial pooling across strata.

    Each iteration runs one data-augmentation sweep in every stratum given the
    current (mu, n), then random-walk Metropolis updates of logit(mu) and
    log(n) for the three parameter families. Step sizes adapt toward 0.44
    acceptance during burn-in and are frozen afterwards.
    """
    labels, trials = _strata(data)
    y0, N0, y1, N1 = (np.array(c) for c in zip(*(d.counts() for d in trials)))
    k = len(trials)
    rng = as_stream(seed)
    gen = rng.generator
    step = np.full((3, 2), 0.5) if step_sizes is None else np.array(step_sizes, float).reshape(3, 2)
    if np.any(step <= 0):
        raise DomainError("step sizes must be positive")

    logit_mu = logit(hyper.lam)
    log_n = np.log(hyper.shape / hyper.rate)
    theta0, eta_e, eta_s = (np.full(k, 0.5) for _ in range(3))
    accepted = np.zeros((3, 2))
    total = t + burn_in
    out = np.empty((t, 3, k))
    mu_chain = np.empty((t, 3))
    n_chain = np.empty((t, 3))
    for it in range(total):
        mu, n = expit(logit_mu), np.exp(log_n)
        shapes = tuple((mu[c] * n[c], (1 - mu[c]) * n[c]) for c in range(3))
        theta0, eta_e, eta_s = gibbs_step(y0, N0, y1, N1, theta0, eta_e, eta_s, shapes, gen)
        params = np.stack([theta0, eta_e, eta_s])
        current = _hyper_log_post(params, logit_mu, log_n, hyper)
        for j in range(2):
            prop_mu, prop_n = logit_mu.copy(), log_n.copy()
            jump = step[:, j] * gen.standard_normal(3)
            if j == 0:
                prop_mu += jump
            else:
                prop_n += jump
            proposed = _hyper_log_post(params, prop_mu, prop_n, hyper)
            acc = np.log(gen.random(3)) < proposed - current
            logit_mu = np.where(acc, prop_mu, logit_mu)
            log_n = np.where(acc, prop_n, log_n)
            current = np.where(acc, proposed, current)
            if it < burn_in:
                step[:, j] *= np.exp((acc - TARGET_ACCEPT) / np.sqrt(it + 1))
            else:
                accepted[:, j] += acc
        if it >= burn_in:
            i = it - burn_in
            out[i] = params
            mu_chain[i] = expit(logit_mu)
            n_chain[i] = np.exp(log_n)

    rates = accepted / max(t, 1)
    warnings = [
        f"{COMPONENTS[c]} {('mean', 'size')[j]} acceptance {rates[c, j]:.3f} outside {ACCEPT_BAND}"
        for c in range(3)
        for j in range(2)
        if not ACCEPT_BAND[0] <= rates[c, j] <= ACCEPT_BAND[1]
    ]
    meta = {
        "mode": "hierarchical",
        "seed": rng.seed,
        "burn_in": burn_in,
        "acceptance": {
            COMPONENTS[c]: {"mean": float(rates[c, 0]), "size": float(rates[c, 1])} for c in range(3)
        },
        "step_sizes": step.tolist(),
        "warnings": warnings,
        "hyper": vars(hyper),
    }
    draws = [
        DrawSet(out[:, 0, x].copy(), out[:, 1, x].copy(), out[:, 2, x].copy(), {"seed": rng.seed, "stratum": lab})
        for x, lab in enumerate(labels)
    ]
    return StratifiedDraws(labels, draws, mu_chain, n_chain, meta)


# ------------------------------------------------------ population effects


@dataclass
class PopulationWeights:
    probabilities: np.ndarray  # (t, K) draws of p_x
    propensities: np.ndarray  # (K,) posterior mean treated share per stratum

    def __post_init__(self):
        if not np.allclose(self.probabilities.sum(axis=-1), 1.0, atol=1e-12):
            raise DomainError("stratum probabilities must sum to 1")


@dataclass
class PopulationEffects:
    theta0: np.ndarray
    theta1: np.ndarray
    weights: PopulationWeights

    @property
    def risk_ratio(self) -> np.ndarray:
        return self.theta1 / self.theta0

    @property
    def risk_difference(self) -> np.ndarray:
        return self.theta1 - self.theta0

    def to_drawset(self) -> DrawSet:
        nan = np.full_like(self.theta0, np.nan)
        return DrawSet(self.theta0, nan, nan, {"mode": "population"}, theta1_override=self.theta1)


def _convex(values: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Row-wise sum of values * p, pivoted at the row minimum so equal values stay exact."""
    lo, hi = values.min(axis=1), values.max(axis=1)
    mix = lo + ((values - lo[:, None]) * p).sum(axis=1)
    return np.minimum(mix, hi)


def population_effects(draws: StratifiedDraws, counts, dirichlet_concentration: float = 1.0, seed=0) -> PopulationEffects:
    """Marginal risks averaged over strata with Dirichlet(concentration + N_x) weights.

    counts is either the StratifiedTrialData behind the draws or the per-stratum
    sizes N_x. Propensities need arm sizes and are NaN when only N_x is given.
    """
    if dirichlet_concentration <= 0:
        raise DomainError("Dirichlet concentration must be positive")
    if isinstance(counts, StratifiedTrialData):
        if counts.labels != draws.labels:
            raise DomainError("counts and draws cover different strata")
        sizes = np.array([d.N for d in counts.trials], float)
        n1 = np.array([d.N1 for d in counts.trials], float)
        propensity = (1 + n1) / (2 + sizes)
    else:
        sizes = np.asarray(counts, float)
        propensity = np.full(sizes.size, np.nan)
    if sizes.size != len(draws.labels):
        raise DomainError(f"{len(draws.labels)} strata but {sizes.size} counts")
    t = len(draws)
    alpha = np.broadcast_to(dirichlet_concentration + sizes, (t, sizes.size))
    p = sample_dirichlet(alpha, as_stream(seed))
    th0 = np.column_stack([d.theta0 for d in draws.draws])
    th1 = np.column_stack([d.theta1 for d in draws.draws])
    return PopulationEffects(_convex(th0, p), _convex(th1, p), PopulationWeights(p, propensity))

