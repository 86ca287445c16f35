"""Posterior summaries and Bayes-factor sensitivity grids."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass

import numpy as np

from .data import TrialData
from .evidence import (
    bayes_factor,
    log_ml_h0_aggregated,
    log_ml_m0,
    log_ml_m1,
    log_ml_monotone,
)
from .model import BreasePrior
from .numerics import DomainError

ESTIMANDS = ("theta0", "theta1", "eta_e", "eta_s", "risk_ratio", "risk_difference", "vaccine_efficacy")
MIN_DRAWS = 100


@dataclass(frozen=True)
class EstimandSummary:
    estimand: str
    median: float
    cri_low: float
    cri_high: float
    level: float
    n_draws: int

    def __post_init__(self):
        if not self.cri_low <= self.median <= self.cri_high:
            raise DomainError("interval does not contain the median")

    def as_dict(self) -> dict:
        return {
            "estimand": self.estimand,
            "median": self.median,
            "cri_low": self.cri_low,
            "cri_high": self.cri_high,
            "level": self.level,
            "n_draws": self.n_draws,
        }


def summarize_values(values, estimand: str, level: float = 0.95) -> EstimandSummary:
    x = np.asarray(values, dtype=float)
    if x.size < MIN_DRAWS:
        raise DomainError(f"need at least {MIN_DRAWS} draws, got {x.size}")
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    if np.any(np.isnan(x)):
        raise DomainError(f"{estimand} draws contain NaN")
    tail = (1 - level) / 2
    lo, med, hi = np.quantile(x, [tail, 0.5, 1 - tail], method="linear")
    # Clamp rounding so that the interval always contains the median.
    return EstimandSummary(estimand, float(med), float(min(lo, med)), float(max(hi, med)), level, int(x.size))


def summarize(draws, estimand: str, level: float = 0.95) -> EstimandSummary:
    """Median and equal-tailed interval of an estimand over a DrawSet."""
    if estimand not in ESTIMANDS:
        raise DomainError(f"unknown estimand {estimand!r}")
    return summarize_values(draws.estimand(estimand), estimand, level)


def summarize_all(draws, level: float = 0.95, estimands=ESTIMANDS) -> dict[str, EstimandSummary]:
    out = {}
    for name in estimands:
        x = draws.estimand(name)
        if np.all(np.isnan(x)):
            continue
        out[name] = summarize_values(x, name, level)
    return out


# ----------------------------------------------------------- sensitivity

PRIOR_FIELDS = ("mu0", "mue", "mus", "n0", "ne", "ns")
EVIDENCE_MODELS = ("M0", "M1", "M_minus_mono", "M_plus_mono", "H0_aggregated")
BANDS = (1.0, 3.0, 10.0)


def evidence_for(data: TrialData, prior: BreasePrior, model: str):
    if model == "M0":
        return log_ml_m0(data, prior)
    if model == "M1":
        return log_ml_m1(data, prior)
    if model == "M_minus_mono":
        return log_ml_monotone(data, prior, "no_harm")
    if model == "M_plus_mono":
        return log_ml_monotone(data, prior, "no_benefit")
    if model == "H0_aggregated":
        return log_ml_h0_aggregated(data, prior)
    raise DomainError(f"model {model!r} has no analytic evidence; choose from {EVIDENCE_MODELS}")


def band_label(bf: float) -> str:
    """Evidence band on the 1 / 3 / 10 threshold scale, named for the favoured side."""
    side, b = ("num", bf) if bf >= 1 else ("den", 1.0 / bf)
    if b < BANDS[1]:
        strength = "weak"
    elif b < BANDS[2]:
        strength = "moderate"
    else:
        strength = "strong"
    return f"{strength}_{side}"


@dataclass(frozen=True)
class GridPoint:
    param1: str
    value1: float
    param2: str
    value2: float
    log_bf: float

    @property
    def bf(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_bf))

    @property
    def band(self) -> str:
        return band_label(self.bf)


@dataclass(frozen=True)
class SensitivityGrid:
    points: tuple[GridPoint, ...]
    shape: tuple[int, int]
    models: tuple[str, str]

    def log_bf_matrix(self) -> np.ndarray:
        return np.array([p.log_bf for p in self.points]).reshape(self.shape)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["param1", "value1", "param2", "value2", "log_bf", "bf", "band"])
        for p in self.points:
            w.writerow([p.param1, repr(p.value1), p.param2, repr(p.value2), repr(p.log_bf), repr(p.bf), p.band])
        return buf.getvalue()


def sensitivity_grid(
    data: TrialData,
    base_prior: BreasePrior,
    axis1: tuple[str, list],
    axis2: tuple[str, list],
    evidence_pair: tuple[str, str] = ("M1", "M0"),
    order=None,
) -> SensitivityGrid:
    """Bayes factor num/den over a two-parameter grid of prior settings.

    `order` optionally permutes the evaluation sequence of the row-major cells;
    the returned grid is always row-major.
    """
    (p1, v1), (p2, v2) = axis1, axis2
    for p in (p1, p2):
        if p not in PRIOR_FIELDS:
            raise DomainError(f"grid parameter must be one of {PRIOR_FIELDS}, got {p!r}")
    num, den = evidence_pair
    cells = list(itertools.product(v1, v2))
    idx = range(len(cells)) if order is None else order
    if sorted(idx) != list(range(len(cells))):
        raise DomainError("order must be a permutation of the grid cells")
    points: list[GridPoint | None] = [None] * len(cells)
    for i in idx:
        a, b = cells[i]
        prior = base_prior.replace(**{p1: float(a), p2: float(b)})
        bf = bayes_factor(evidence_for(data, prior, num), evidence_for(data, prior, den))
        points[i] = GridPoint(p1, float(a), p2, float(b), bf.log_bf)
    return SensitivityGrid(tuple(points), (len(v1), len(v2)), (num, den))
