"""Bayesian analysis of two-arm binary experiments under a causal beta prior."""

from .data import ASPIRIN_PHS, COVID_PFIZER, PATHOLOGICAL, StratifiedTrialData, TrialData
from .evidence import LogEvidence, bayes_factor, log_ml_m0, log_ml_m1
from .model import BreaseParams, BreasePrior, default_prior
from .numerics import DomainError, NumericError, RngStream
from .samplers import DrawSet, exact_sample, gibbs_sample

__version__ = "0.1.0"

__all__ = [
    "ASPIRIN_PHS",
    "COVID_PFIZER",
    "PATHOLOGICAL",
    "BreaseParams",
    "BreasePrior",
    "DomainError",
    "DrawSet",
    "LogEvidence",
    "NumericError",
    "RngStream",
    "StratifiedTrialData",
    "TrialData",
    "bayes_factor",
    "default_prior",
    "exact_sample",
    "gibbs_sample",
    "log_ml_m0",
    "log_ml_m1",
]
