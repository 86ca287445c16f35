"""Special functions, log-space reductions, quadrature and random variates.

Every other module routes beta-function arithmetic and random draws through
here so that the log-space and seeding conventions live in one place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special


class DomainError(ValueError):
    """An argument lies outside the domain of the requested function."""


class NumericError(ArithmeticError):
    """A numerical routine failed to reach its accuracy target."""


# Largest double strictly below 1; used to pull draws off the upper boundary.
ONE_MINUS_EPS = 1.0 - 2.0**-53
TINY = np.finfo(float).tiny


def _positive(name, *values):
    for v in values:
        arr = np.asarray(v, dtype=float)
        if np.any(~(arr > 0)):
            raise DomainError(f"{name}: arguments must be positive, got {v!r}")


def log_beta(a, b):
    """ln B(a, b), elementwise for array arguments."""
    _positive("log_beta", a, b)
    return special.betaln(a, b)


def log_binom(n, k):
    """ln C(n, k) for integer-valued n >= k >= 0."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    if np.any(k < 0) or np.any(k > n):
        raise DomainError("log_binom: need 0 <= k <= n")
    return special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)


def log_sum_exp(terms) -> float:
    """ln sum(exp(terms)) with max-shift stabilization; -inf if every term is -inf."""
    t = np.asarray(terms, dtype=float).ravel()
    if t.size == 0:
        raise DomainError("log_sum_exp: empty sequence")
    if np.any(np.isnan(t)):
        raise DomainError("log_sum_exp: NaN term")
    if t.size == 1:
        return float(t[0])
    m = np.max(t)
    if m == -np.inf:
        return -np.inf
    if m == np.inf:
        return np.inf
    return float(m + np.log(np.sum(np.exp(t - m))))


def normalize_log_weights(log_w) -> np.ndarray:
    """Turn log weights into probabilities that sum to one."""
    lw = np.asarray(log_w, dtype=float)
    total = log_sum_exp(lw)
    if total == -np.inf:
        raise NumericError("all mixture weights are zero")
    return np.exp(lw - total)


def reg_inc_beta(x, a, b):
    """Regularized incomplete beta I_x(a, b)."""
    _positive("reg_inc_beta", a, b)
    xa = np.asarray(x, dtype=float)
    if np.any((xa < 0) | (xa > 1)):
        raise DomainError("reg_inc_beta: x must lie in [0, 1]")
    out = special.betainc(a, b, xa)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class RngStream:
    """Seeded random stream; child streams are derived through SeedSequence."""

    seed: int
    _seq: np.random.SeedSequence = field(init=False, repr=False)
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.seed is None:
            raise DomainError("a seed is required")
        self.seed = int(self.seed)
        self._seq = np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def spawn(self, k: int) -> list["RngStream"]:
        """Independent child streams, reproducible from the parent seed."""
        out = []
        for child in self._seq.spawn(k):
            s = RngStream.__new__(RngStream)
            s.seed = self.seed
            s._seq = child
            s.generator = np.random.Generator(np.random.PCG64(child))
            out.append(s)
        return out


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    return RngStream(rng)


def _gen(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return as_stream(rng).generator


def _log_gamma_variates(shape, gen: np.random.Generator) -> np.ndarray:
    # For shape < 1 use G(a) = G(a+1) * U^(1/a) evaluated on the log scale, so
    # that draws far below the smallest double still carry information.
    shape = np.asarray(shape, dtype=float)
    small = shape < 1.0
    if not small.any():
        return np.log(gen.standard_gamma(shape))
    g = gen.standard_gamma(np.where(small, shape + 1.0, shape))
    u = gen.random(shape.shape)
    with np.errstate(divide="ignore"):
        return np.log(g) + np.where(small, np.log(u) / np.where(small, shape, 1.0), 0.0)


def beta_variates(a, b, gen: np.random.Generator) -> np.ndarray:
    """Unchecked Beta(a, b) draws for internal hot loops; shapes must be positive."""
    return special.expit(_log_gamma_variates(a, gen) - _log_gamma_variates(b, gen))


def sample_log_beta_pair(a, b, rng):
    """(ln X, ln(1-X)) for X ~ Beta(a, b), exact for very small shapes."""
    gen = _gen(rng)
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    la = _log_gamma_variates(a, gen)
    lb = _log_gamma_variates(b, gen)
    d = la - lb
    return special.log_expit(d), special.log_expit(-d)


def sample_beta(a, b, rng, size=None):
    """Beta(a, b) variates; accurate for shapes down to 1e-3 and below."""
    _positive("sample_beta", a, b)
    gen = _gen(rng)
    if size is not None:
        a = np.broadcast_to(np.asarray(a, dtype=float), size)
        b = np.broadcast_to(np.asarray(b, dtype=float), size)
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    la = _log_gamma_variates(a, gen)
    lb = _log_gamma_variates(b, gen)
    out = special.expit(la - lb)
    return float(out) if out.ndim == 0 else out


def sample_binomial(n, p, rng, size=None):
    pa = np.asarray(p, dtype=float)
    if np.any(~((pa >= 0) & (pa <= 1))):
        raise DomainError("sample_binomial: p must lie in [0, 1]")
    if np.any(np.asarray(n) < 0):
        raise DomainError("sample_binomial: n must be non-negative")
    out = _gen(rng).binomial(n, pa, size=size)
    return int(out) if np.ndim(out) == 0 else out


def sample_gamma(shape, rate, rng, size=None):
    _positive("sample_gamma", shape, rate)
    out = _gen(rng).standard_gamma(shape, size=size) / np.asarray(rate, dtype=float)
    return float(out) if np.ndim(out) == 0 else out


def sample_dirichlet(alphas, rng, size=None):
    """Dirichlet draws, normalized on the log scale so tiny concentrations stay exact.

    alphas may carry leading batch dimensions; the last axis indexes components.
    """
    alphas = np.asarray(alphas, dtype=float)
    _positive("sample_dirichlet", alphas)
    if size is not None:
        alphas = np.broadcast_to(alphas, tuple(np.atleast_1d(size)) + alphas.shape[-1:])
    lg = _log_gamma_variates(alphas, _gen(rng))
    lg = lg - special.logsumexp(lg, axis=-1, keepdims=True)
    x = np.exp(lg)
    return x / x.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------- quadrature

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the n-point rule on [0, 1]."""
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = (0.5 * (x + 1.0), 0.5 * w)
    return _GL_CACHE[n]


def integrate_adaptive(f, a: float, b: float, tol: float = 1e-8, max_depth: int = 30, order: int = 15):
    """Adaptive Gauss-Legendre integration of a vectorized f over [a, b].

    Each panel is compared against the sum of its two halves; panels whose
    difference exceeds their share of the tolerance are bisected. Endpoint
    singularities of integrable type are handled by repeated splitting.
    """
    x, w = gauss_legendre(order)

    def panel(lo, hi):
        h = hi - lo
        return h * np.dot(w, f(lo + h * x))

    total = 0.0
    unresolved = 0.0
    stack = [(a, b, panel(a, b), 0)]
    while stack:
        lo, hi, whole, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left, right = panel(lo, mid), panel(mid, hi)
        err = abs(left + right - whole)
        share = tol * (hi - lo) / (b - a)
        if err <= max(share, 1e-14 * abs(left + right)):
            total += left + right
        elif depth >= max_depth:
            total += left + right
            unresolved += err
        else:
            stack.append((lo, mid, left, depth + 1))
            stack.append((mid, hi, right, depth + 1))
    if unresolved > 10.0 * tol:
        raise NumericError(
            f"quadrature on [{a:.6g}, {b:.6g}] did not converge: {unresolved:.3g} unresolved at depth {max_depth}"
        )
    if not np.isfinite(total):
        raise NumericError("quadrature produced a non-finite value")
    return float(total)


def integrate_power_ends(f, lo: float, hi: float, expo_lo: float = 0.0, expo_hi: float = 0.0, tol: float = 1e-8):
    """Integrate f over [lo, hi] when f ~ |x - end|^expo near either end (expo > -1).

    Each half of the interval is mapped through x = end ± h t^p with
    p = 1 / (1 + min(expo, 0)), which turns the power singularity into a
    bounded integrand before adaptive Gauss-Legendre is applied.
    """
    if not hi > lo:
        return 0.0
    if min(expo_lo, expo_hi) <= -1.0:
        raise DomainError("endpoint singularity is not integrable")
    mid = 0.5 * (lo + hi)
    h = mid - lo
    total = 0.0
    for end, sign, expo in ((lo, 1.0, expo_lo), (hi, -1.0, expo_hi)):
        p = 1.0 / (1.0 + min(expo, 0.0))

        def g(t, end=end, sign=sign, p=p):
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                x = end + sign * h * t**p
                val = f(x) * (h * p * t ** (p - 1.0))
            return np.where(np.isfinite(val), val, 0.0)

        total += integrate_adaptive(g, 0.0, 1.0, tol=0.5 * tol)
    return total


def integrate_power_product(points, expos, lo: float, hi: float, tol: float = 1e-10, log_scale: float = 0.0):
    """Integrate exp(log_scale) * prod_i |x - p_i|^e_i over [lo, hi].

    Every p_i must lie outside the open interval. Each half of the interval is
    integrated in w = (x - x0)^r, where x0 is the nearest singular point on
    that side and r = 1 + (its exponent); this absorbs the power law exactly
    whether the singular point sits at the end of the interval or just past it.
    """
    points = np.asarray(points, dtype=float)
    expos = np.asarray(expos, dtype=float)
    if not hi > lo:
        return 0.0
    if np.any((points > lo) & (points < hi)):
        raise DomainError("singular points must lie outside the integration interval")
    mid = 0.5 * (lo + hi)
    total = 0.0
    for sign, start, end in ((1.0, lo, mid), (-1.0, hi, mid)):
        # Reflect the upper half so that "near" points always lie below.
        pts = sign * points
        s, e = sign * start, sign * end
        below = pts <= s
        singular = below & (expos < 0)
        if np.any(singular):
            x0 = np.max(pts[singular])
            at_x0 = below & (pts == x0)
            r = 1.0 + float(np.sum(expos[at_x0]))
            if r <= 0.0:
                return np.inf
        else:
            x0, r = s, 1.0
        gap = s - x0
        w_lo = gap**r
        w_hi = (e - x0) ** r
        offs = x0 - pts  # distance from x0 to each point, signed

        def f(w, offs=offs, r=r):
            with np.errstate(divide="ignore", invalid="ignore"):
                log_u = np.log(w) / r
                u = np.exp(log_u)
                dist = np.abs(u[:, None] + offs[None, :])
                logs = np.where(offs[None, :] == 0.0, log_u[:, None], np.log(dist))
                val = logs @ expos + (1.0 / r - 1.0) * np.log(w) - np.log(r) + log_scale
                out = np.exp(val)
            return np.where(np.isfinite(out), out, 0.0)

        total += integrate_adaptive(f, w_lo, w_hi, tol=0.5 * tol)
    return total
