"""Brute-force quadrature references for evidences and posterior marginals.

Everything here is rebuilt from the likelihood kernel and scipy special
functions; nothing is imported from the modules it is used to check.
Beta-type endpoint singularities are absorbed by substitution on the end
panels, with geometric grading toward the end when the exponent is close
to -1. Sharp likelihood peaks get extra panels inside a window around
the arm-wise maximum likelihood estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import betaln, gammaln, log_expit

from .data import TrialData
from .numerics import DomainError, NumericError

ORACLE_MODELS = ("M0", "M1", "no_harm", "no_benefit", "H0_aggregated", "IB", "LT")
MAX_N_EVIDENCE = 50
MAX_N_MARGINAL = 2000
GRADE_RATIO = 0.25
GRADE_LEVELS = 20
# Half-width of likelihood windows in binomial standard errors.
WINDOW_Z = 12.0


@dataclass(frozen=True)
class QuadratureSpec:
    panels_per_axis: int = 16
    tolerance: float = 1e-7
    max_refinements: int = 3
    order: int = 8

    def __post_init__(self):
        if self.panels_per_axis < 16:
            raise DomainError("panels_per_axis must be at least 16")
        if self.tolerance <= 0 or self.max_refinements < 0 or self.order < 2:
            raise DomainError("invalid quadrature spec")


@lru_cache(maxsize=None)
def _gl(order: int):
    t, w = np.polynomial.legendre.leggauss(order)
    return (t + 1) / 2, w / 2


def _plain(a, b, order):
    t, w = _gl(order)
    return a + (b - a) * t, (b - a) * w


def _left_singular(c, h, p, order):
    """Nodes/weights for the integral of g(x) (x - c)^p over [c, c + h], p in (-1, 0)."""
    t, w = _gl(order)
    if p + 1 >= 0.25:
        return c + h * t ** (1 / (p + 1)), h ** (p + 1) / (p + 1) * w
    xs, ws = [], []
    hi = h
    for _ in range(GRADE_LEVELS):
        lo = hi * GRADE_RATIO
        x, wx = _plain(lo, hi, order)
        xs.append(c + x)
        ws.append(wx * x**p)
        hi = lo
    xs.append(c + hi * t ** (1 / (p + 1)))
    ws.append(hi ** (p + 1) / (p + 1) * w)
    return np.concatenate(xs), np.concatenate(ws)


def _graded_left(c, h, order):
    """Geometric grading toward c for integrands with a nearby singularity."""
    xs, ws = [], []
    hi = h
    for _ in range(GRADE_LEVELS):
        lo = hi * GRADE_RATIO
        x, wx = _plain(lo, hi, order)
        xs.append(c + x)
        ws.append(wx)
        hi = lo
    x, wx = _plain(0.0, hi, order)
    xs.append(c + x)
    ws.append(wx)
    return np.concatenate(xs), np.concatenate(ws)


def _end_rule(c, h, p, order, grade):
    """Rule on [c, c + h] (h > 0) or [c + h, c] (h < 0) carrying |x - c|^p."""
    sign = 1.0 if h > 0 else -1.0
    h = abs(h)
    if p < 0:
        x, w = _left_singular(0.0, h, p, order)
    elif grade or p != int(p):
        x, w = _graded_left(0.0, h, order)
        w = w * x**p
    else:
        x, w = _plain(0.0, h, order)
        w = w * x**p
    return c + sign * x, w


def rule(c, d, p, q, panels, order, breaks=(), windows=(), grade=(False, False)):
    """Nodes and weights for the integral of g(x) (x - c)^p (d - x)^q over [c, d].

    breaks adds panel edges, windows (lo, hi[, n]) are subdivided into n
    (default `panels`) extra panels, and grade forces geometric grading at
    either end.
    """
    if not d > c:
        return np.empty(0), np.empty(0)
    edges = set(np.linspace(c, d, panels + 1).tolist())
    for b in breaks:
        if c < b < d:
            edges.add(float(b))
    for win in windows:
        lo, hi = max(win[0], c), min(win[1], d)
        n_sub = win[2] if len(win) > 2 else panels
        if hi > lo:
            edges.update(np.linspace(lo, hi, n_sub + 1).tolist())
    e = np.array(sorted(edges))
    e = e[np.concatenate([[True], np.diff(e) > 1e-15 * (d - c)])]
    e[-1] = d
    if e.size == 2:
        e = np.array([c, (c + d) / 2, d])
    xs, ws = [], []
    for i in range(e.size - 1):
        a, b = e[i], e[i + 1]
        if i == 0:
            x, w = _end_rule(c, b - c, p, order, grade[0])
            w = w * (d - x) ** q
        elif i == e.size - 2:
            x, w = _end_rule(d, a - d, q, order, grade[1])
            w = w * (x - c) ** p
        else:
            x, w = _plain(a, b, order)
            w = w * (x - c) ** p * (d - x) ** q
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def beta_rule(a, b, panels, order, windows=()):
    """Rule for expectations under Beta(a, b) on [0, 1]."""
    x, w = rule(0.0, 1.0, a - 1, b - 1, panels, order, windows=windows)
    return x, w * np.exp(-betaln(a, b))


# ---------------------------------------------------------------- kernels


def _log_kernel(theta, y, n):
    """Binomial log kernel shifted so that its maximum over theta is 0."""
    if n == 0:
        return np.zeros_like(theta)
    p = y / n
    out = np.zeros_like(theta, dtype=float)
    if y > 0:
        out = out + y * (np.log(theta) - np.log(p))
    if n - y > 0:
        out = out + (n - y) * (np.log1p(-theta) - np.log1p(-p))
    return out


def _log_kernel_max(y, n):
    p = y / n if n else 0.5
    v = 0.0
    if y > 0:
        v += y * np.log(p)
    if n - y > 0:
        v += (n - y) * np.log1p(-p)
    return v


def _log_binom(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def _window(y, n):
    if n == 0:
        return None
    p = y / n
    sd = np.sqrt(max(p * (1 - p), 1.0 / n) / n)
    return (p - WINDOW_Z * sd, p + WINDOW_Z * sd)


def _shapes(mu, n):
    return mu * n, (1 - mu) * n


# ---------------------------------------------------------------- evidences


def _m0(d, prior, panels, order):
    a, b = _shapes(prior.mu0, prior.n0)
    x, w = beta_rule(a, b, panels, order)
    return np.log(np.sum(w * np.exp(_log_kernel(x, d.y0 + d.y1, d.N))))


def _m1_like(d, prior, panels, order, constraint):
    a0, b0 = _shapes(prior.mu0, prior.n0)
    t0, w0 = beta_rule(a0, b0, panels, order)
    if constraint == "no_benefit":
        e, we = np.zeros(1), np.ones(1)
    else:
        e, we = beta_rule(*_shapes(prior.mue, prior.ne), panels, order)
    if constraint == "no_harm":
        s, ws = np.zeros(1), np.ones(1)
    else:
        s, ws = beta_rule(*_shapes(prior.mus, prior.ns), panels, order)
    l0 = _log_kernel(t0, d.y0, d.N0)
    total = 0.0
    chunk = max(1, 2_000_000 // (e.size * s.size))
    for i in range(0, t0.size, chunk):
        th = t0[i : i + chunk, None, None]
        th1 = (1 - e[None, :, None]) * th + s[None, None, :] * (1 - th)
        th1 = np.clip(th1, 1e-300, 1 - 1e-16)
        v = np.exp(l0[i : i + chunk, None, None] + _log_kernel(th1, d.y1, d.N1))
        total += np.einsum("i,j,k,ijk->", w0[i : i + chunk], we, ws, v)
    return np.log(total)


def _h0_aggregated(d, prior, panels, order):
    # (p00, p10*, p11) ~ Dir(c00, c10, c11) factorises as p11 = u ~ Beta(c11, c00 + c10)
    # and p10* = (1 - u) v with v ~ Beta(c10, c00).
    c00 = (1 - prior.mus) * prior.ns
    c10 = prior.mue * prior.ne + prior.mus * prior.ns
    c11 = (1 - prior.mue) * prior.ne
    u, wu = beta_rule(c11, c00 + c10, panels, order)
    v, wv = beta_rule(c10, c00, panels, order)
    theta = u[:, None] + (1 - u[:, None]) * v[None, :] / 2
    val = np.einsum("i,j,ij->", wu, wv, np.exp(_log_kernel(theta, d.y0 + d.y1, d.N)))
    return np.log(val)


def _ib(d, prior, panels, order, hypothesis):
    if hypothesis == "H1":
        x0, w0 = beta_rule(prior.a0, prior.b0, panels, order)
        x1, w1 = beta_rule(prior.a1, prior.b1, panels, order)
        return np.log(np.sum(w0 * np.exp(_log_kernel(x0, d.y0, d.N0)))) + np.log(
            np.sum(w1 * np.exp(_log_kernel(x1, d.y1, d.N1)))
        )
    # Null: the IB density restricted to theta0 = theta1, renormalised.
    x, w = rule(0.0, 1.0, prior.a0 + prior.a1 - 2, prior.b0 + prior.b1 - 2, panels, order)
    like = np.exp(_log_kernel(x, d.y0 + d.y1, d.N))
    return np.log(np.sum(w * like)) - np.log(np.sum(w))


def _lt(d, prior, panels, order, hypothesis):
    def normal_rule(mu, sd):
        x, w = rule(mu - 10 * sd, mu + 10 * sd, 0.0, 0.0, panels, order)
        return x, w * np.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))

    def loglik(eta, y, n):
        return y * log_expit(eta) + (n - y) * log_expit(-eta) - _log_kernel_max(y, n)

    b, wb = normal_rule(prior.mu_beta, prior.sigma_beta)
    if hypothesis == "H0":
        return np.log(np.sum(wb * np.exp(loglik(b, d.y0, d.N0) + loglik(b, d.y1, d.N1))))
    s, wsi = normal_rule(prior.mu_psi, prior.sigma_psi)
    e0 = b[:, None] - s[None, :] / 2
    e1 = b[:, None] + s[None, :] / 2
    v = np.exp(loglik(e0, d.y0, d.N0) + loglik(e1, d.y1, d.N1))
    return np.log(np.einsum("i,j,ij->", wb, wsi, v))


def _evidence_once(d, prior, model, panels, order, hypothesis):
    if model == "M0":
        return _m0(d, prior, panels, order)
    if model == "M1":
        return _m1_like(d, prior, panels, order, None)
    if model in ("no_harm", "no_benefit"):
        return _m1_like(d, prior, panels, order, model)
    if model == "H0_aggregated":
        return _h0_aggregated(d, prior, panels, order)
    if model == "IB":
        return _ib(d, prior, panels, order, hypothesis)
    if model == "LT":
        return _lt(d, prior, panels, order, hypothesis)
    raise DomainError(f"unknown oracle model {model!r}; choose from {ORACLE_MODELS}")


def oracle_log_ml(data: TrialData, prior, model: str, spec: QuadratureSpec | None = None, hypothesis: str = "H1") -> float:
    """Log evidence by direct quadrature, refined by panel doubling until stable.

    `hypothesis` selects H0 or H1 for the IB and LT comparators.
    """
    spec = spec or QuadratureSpec()
    data.checked()
    if data.N > MAX_N_EVIDENCE:
        raise DomainError(f"oracle evidences are limited to N0 + N1 <= {MAX_N_EVIDENCE}")
    if hypothesis not in ("H0", "H1"):
        raise DomainError("hypothesis must be H0 or H1")
    if model in ("M0", "H0_aggregated") or (model in ("IB", "LT") and hypothesis == "H0"):
        shift = _log_kernel_max(data.y0 + data.y1, data.N)
    else:
        shift = _log_kernel_max(data.y0, data.N0) + _log_kernel_max(data.y1, data.N1)
    if model == "LT":
        shift = 0.0  # the LT log likelihood is already shifted inside _lt
        const = _log_binom(data.N0, data.y0) + _log_binom(data.N1, data.y1) + _lt_shift(data, hypothesis)
    else:
        const = _log_binom(data.N0, data.y0) + _log_binom(data.N1, data.y1) + shift
    panels = spec.panels_per_axis
    prev = _evidence_once(data, prior, model, panels, spec.order, hypothesis)
    history = [prev]
    for _ in range(spec.max_refinements):
        panels *= 2
        cur = _evidence_once(data, prior, model, panels, spec.order, hypothesis)
        history.append(cur)
        if abs(cur - prev) < spec.tolerance:
            return float(const + cur)
        prev = cur
    raise NumericError(f"oracle for {model} did not converge: successive estimates {history}")


def _lt_shift(data, hypothesis):
    return _log_kernel_max(data.y0, data.N0) + _log_kernel_max(data.y1, data.N1)


# ------------------------------------------------------- posterior marginals


@dataclass(frozen=True)
class DensityTable:
    target: str
    x: np.ndarray
    density: np.ndarray
    log_evidence: float

    def mass(self) -> float:
        """Midpoint-rule integral of the density over the grid."""
        dx = self.x[1] - self.x[0] if self.x.size > 1 else 1.0
        return float(self.density.sum() * dx)

    def bin_probabilities(self, edges) -> np.ndarray:
        """Probability per histogram bin by integrating the density table."""
        cdf = np.concatenate([[0.0], np.cumsum(self.density) * (self.x[1] - self.x[0])])
        grid_edges = np.concatenate([[self.x[0] - (self.x[1] - self.x[0]) / 2], self.x + (self.x[1] - self.x[0]) / 2])
        return np.diff(np.interp(edges, grid_edges, cdf))


def _eta_shapes(prior):
    return _shapes(prior.mue, prior.ne), _shapes(prior.mus, prior.ns)


def _theta0_inner(theta0, d, prior, panels, order):
    """Integral over (eta_e, eta_s) of their prior times the treated-arm kernel, per theta0.

    theta0 is an array; the eta rules are shared, with the eta_s panels
    densified over every eta_s that can put theta1 inside the treated-arm
    likelihood window.
    """
    (ae, be), (as_, bs) = _eta_shapes(prior)
    win1 = _window(d.y1, d.N1)
    s_win, e_win = (), ()
    if win1 is not None:
        sd = (win1[1] - win1[0]) / (2 * WINDOW_Z)
        tmax = float(np.max(theta0))
        lo = max((win1[0] - tmax) / (1 - tmax), 0.0)
        hi = min(win1[1] / (1 - tmax), 1.0)
        s_win = ((lo, hi, max(panels, int(np.ceil(4 * max(hi - lo, 0.0) / sd)))),)
        tmin = max(float(np.min(theta0)), 1e-12)
        e_win = ((1 - win1[1] / tmin, 1 - win1[0] / max(tmax, 1e-12), panels),)
    e, we = rule(0.0, 1.0, ae - 1, be - 1, panels, order, windows=e_win)
    s, ws = rule(0.0, 1.0, as_ - 1, bs - 1, panels, order, windows=s_win)
    norm = np.exp(-betaln(ae, be) - betaln(as_, bs))
    out = np.empty(np.size(theta0))
    for i, t in enumerate(np.atleast_1d(theta0)):
        th1 = np.clip((1 - e[:, None]) * t + s[None, :] * (1 - t), 1e-300, 1 - 1e-16)
        out[i] = we @ np.exp(_log_kernel(th1, d.y1, d.N1)) @ ws
    return out * norm


@lru_cache(maxsize=None)
def _unit_rule(p, q, panels, order):
    return rule(0.0, 1.0, p, q, panels, order, grade=(True, True))


def _theta1_inner(theta1, theta0, prior, panels, order):
    """Integral over the more singular eta at fixed theta1, per theta0; the other eta is solved for.

    The inner interval is [c, dd], carrying end exponents p, q; the rule on it
    is the affine image of a graded rule on [0, 1].
    """
    (ae, be), (as_, bs) = _eta_shapes(prior)
    t0 = np.asarray(theta0, float)
    if min(ae, be) >= min(as_, bs):
        # eta_e = (eta_s - lo) (1 - theta0) / theta0; inner variable eta_s.
        lo, hi = (theta1 - t0) / (1 - t0), theta1 / (1 - t0)
        a_in, b_in, a_sv, b_sv = as_, bs, ae, be
        slope, jac = (1 - t0) / t0, 1 / t0
    else:
        # eta_s = (eta_e - lo) theta0 / (1 - theta0); inner variable eta_e.
        lo, hi = 1 - theta1 / t0, 1 - (theta1 - (1 - t0)) / t0
        a_in, b_in, a_sv, b_sv = ae, be, as_, bs
        slope, jac = t0 / (1 - t0), 1 / (1 - t0)
    c, dd = np.maximum(lo, 0.0), np.minimum(hi, 1.0)
    out = np.zeros(t0.size)
    for left_open in (True, False):
        for right_open in (True, False):
            sel = (lo <= 0) == left_open
            sel &= (hi >= 1) == right_open
            sel &= dd > c
            if not np.any(sel):
                continue
            p = a_in - 1 if left_open else a_sv - 1
            q = b_in - 1 if right_open else b_sv - 1
            u, w = _unit_rule(p, q, panels, order)
            width = (dd - c)[sel, None]
            x = c[sel, None] + width * u[None, :]
            wx = w[None, :] * width ** (1 + p + q)
            sl = slope[sel, None]
            solved = np.clip((x - lo[sel, None]) * sl, 0.0, 1.0)
            f = np.ones_like(x)
            if left_open:
                f *= solved ** (a_sv - 1)
            else:
                f *= x ** (a_in - 1) * sl ** (a_sv - 1)
            if right_open:
                f *= (1 - solved) ** (b_sv - 1)
            else:
                f *= (1 - x) ** (b_in - 1) * sl ** (b_sv - 1)
            out[sel] = jac[sel] * np.sum(wx * f, axis=1)
    return out * np.exp(-betaln(a_in, b_in) - betaln(a_sv, b_sv))


def _theta0_rule(d, prior, panels, order, breaks=(), exps=None):
    """Rule for integrals over theta0 against its prior, restricted to the control-arm window.

    exps maps interior break points to the exponent of the integrand's
    singularity there; nodes cluster toward those points.
    """
    exps = exps or {}
    a0, b0 = _shapes(prior.mu0, prior.n0)
    win = _window(d.y0, d.N0)
    lo, hi = (0.0, 1.0) if win is None else (max(win[0], 0.0), min(win[1], 1.0))
    pieces = sorted({lo, hi, *[b for b in breaks if lo < b < hi]})
    xs, ws = [], []
    for i in range(len(pieces) - 1):
        c, dd = pieces[i], pieces[i + 1]
        pl = a0 - 1 if c == 0 else exps.get(c, 0.0)
        ql = b0 - 1 if dd == 1 else exps.get(dd, 0.0)
        x, w = rule(c, dd, pl, ql, panels, order, grade=(c in exps, dd in exps))
        # Graded nodes can round onto 0 or 1; keep them strictly inside.
        x = np.clip(x, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
        # The rule carried |x - end|^exponent; replace it by the prior density so the
        # weights integrate the remaining factors with nodes clustered at the ends.
        # At the prior's own ends the carried factor cancels exactly.
        log_ratio = np.full(x.shape, -betaln(a0, b0))
        if c != 0:
            log_ratio += (a0 - 1) * np.log(x) - pl * np.log(np.maximum(x - c, 1e-300))
        if dd != 1:
            log_ratio += (b0 - 1) * np.log1p(-x) - ql * np.log(np.maximum(dd - x, 1e-300))
        xs.append(x)
        ws.append(w * np.exp(log_ratio))
    return np.concatenate(xs), np.concatenate(ws)


def _marginal_once(d, prior, target, grid_x, panels, order):
    t0, w0 = _theta0_rule(d, prior, panels, order)
    l0 = np.exp(_log_kernel(t0, d.y0, d.N0))
    z = float(np.sum(w0 * l0 * _theta0_inner(t0, d, prior, panels, order)))
    if target == "theta0":
        a0, b0 = _shapes(prior.mu0, prior.n0)
        dens0 = np.exp((a0 - 1) * np.log(grid_x) + (b0 - 1) * np.log1p(-grid_x) - betaln(a0, b0))
        vals = _theta0_inner(grid_x, d, prior, panels, order)
        return dens0 * np.exp(_log_kernel(grid_x, d.y0, d.N0)) * vals / z, z
    (ae, be), (as_, bs) = _eta_shapes(prior)
    # Near theta0 = theta1 (and theta0 = 1 - theta1) the inner integral behaves
    # like a power of the distance with these exponents.
    e_lo = min(0.0, ae + as_ - 1)
    e_hi = min(0.0, be + bs - 1)
    out = np.empty_like(grid_x)
    for i, th1 in enumerate(grid_x):
        exps = {th1: e_lo, 1 - th1: e_hi}
        x, w = _theta0_rule(d, prior, panels, order, breaks=(th1, 1 - th1), exps=exps)
        vals = _theta1_inner(th1, x, prior, panels, order)
        out[i] = np.sum(w * np.exp(_log_kernel(x, d.y0, d.N0)) * vals)
    return out * np.exp(_log_kernel(grid_x, d.y1, d.N1)) / z, z


def oracle_posterior_marginal(
    data: TrialData,
    prior,
    target: str,
    grid: int = 200,
    spec: QuadratureSpec | None = None,
    bounds: tuple[float, float] | None = None,
) -> DensityTable:
    """Posterior density of theta0 or theta1 at the midpoints of a uniform grid.

    The grid spans `bounds`, by default the likelihood window of the matching
    arm clipped to [0, 1]. Refinement doubles the panels until the density
    changes by less than spec.tolerance relative to its maximum.
    """
    spec = spec or QuadratureSpec(tolerance=1e-5, max_refinements=2)
    data.checked()
    if data.N > MAX_N_MARGINAL:
        raise DomainError(f"oracle marginals are limited to N0 + N1 <= {MAX_N_MARGINAL}")
    if target not in ("theta0", "theta1"):
        raise DomainError("target must be theta0 or theta1")
    if bounds is None:
        y, n = (data.y0, data.N0) if target == "theta0" else (data.y1, data.N1)
        win = _window(y, n)
        bounds = (0.0, 1.0) if win is None else (max(win[0], 0.0), min(win[1], 1.0))
    lo, hi = bounds
    x = lo + (np.arange(grid) + 0.5) * (hi - lo) / grid
    panels = spec.panels_per_axis
    prev, z = _marginal_once(data, prior, target, x, panels, spec.order)
    history = []
    for _ in range(spec.max_refinements):
        panels *= 2
        cur, z = _marginal_once(data, prior, target, x, panels, spec.order)
        err = float(np.max(np.abs(cur - prev)) / np.max(np.abs(cur)))
        history.append(err)
        if err < spec.tolerance:
            log_ev = (
                np.log(z)
                + _log_kernel_max(data.y0, data.N0)
                + _log_kernel_max(data.y1, data.N1)
                + _log_binom(data.N0, data.y0)
                + _log_binom(data.N1, data.y1)
            )
            return DensityTable(target, x, cur, float(log_ev))
        prev = cur
    raise NumericError(f"posterior marginal oracle did not converge: relative changes {history}")
