"""Demand models: Poisson machinery, MLE fitting and continuous densities.

The Poisson functions are scalar and pure.  Probabilities are evaluated in
log space so that large counts or large rates never overflow.  The CDF and
the quantile read one cached table, so the two can never disagree at a
boundary.
"""

from __future__ import annotations

import abc
import math
from bisect import bisect_left
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

from scipy import integrate, special

from .errors import DataError, DomainError, NumericError

#: log(k!) is tabulated up to this k; larger k fall back to ``math.lgamma``.
LOG_FACTORIAL_CAP = 10_000

#: series terms smaller than this fraction of the running total are dropped.
TAIL_RELATIVE_CUTOFF = 1e-16

#: continuous tails are integrated up to the ``1 - UPPER_TAIL_MASS`` quantile.
UPPER_TAIL_MASS = 1e-12

QUAD_RELATIVE_TOL = 1e-10

_log_factorials: list[float] = []


def log_factorial(k: int) -> float:
    if k <= LOG_FACTORIAL_CAP:
        if not _log_factorials:
            _log_factorials.extend(math.lgamma(j + 1) for j in range(LOG_FACTORIAL_CAP + 1))
        return _log_factorials[k]
    return math.lgamma(k + 1)


def _check_rate(lam) -> float:
    try:
        lam = float(lam)
    except (TypeError, ValueError):
        raise DomainError(f"Poisson rate must be a real number, got {lam!r}") from None
    if not math.isfinite(lam) or lam <= 0.0:
        raise DomainError(f"Poisson rate must be finite and > 0, got {lam!r}")
    return lam


def _check_count(k) -> int:
    if isinstance(k, bool) or not float(k).is_integer():
        raise DomainError(f"count must be an integer, got {k!r}")
    return int(k)


def _pmf(k: int, lam: float, log_lam: float) -> float:
    return math.exp(k * log_lam - lam - log_factorial(k))


def poisson_pmf(k: int, lam: float) -> float:
    """P(D = k) for D ~ Poisson(lam); 0 for negative k."""
    lam = _check_rate(lam)
    k = _check_count(k)
    if k < 0:
        return 0.0
    return _pmf(k, lam, math.log(lam))


@lru_cache(maxsize=512)
def _cdf_table(lam: float) -> tuple[float, ...]:
    """``P(D <= k)`` for k = 0 .. K; every k beyond K has CDF exactly 1.0.

    Up to the mode the table is a Neumaier-compensated forward sum.  Above it
    each entry is one minus the upper tail summed from the far end, so values
    near 1 keep full precision instead of saturating a few ulps short.
    """
    log_lam = math.log(lam)
    mode = math.floor(lam)
    lower = []
    total = comp = 0.0
    for k in range(mode + 1):
        term = _pmf(k, lam, log_lam)
        t = total + term
        if abs(total) >= abs(term):
            comp += (total - t) + term
        else:
            comp += (term - t) + total
        total = t
        lower.append(min(total + comp, 1.0))
    terms = []
    k = mode + 1
    while True:
        term = _pmf(k, lam, log_lam)
        if term < 1e-20:
            break
        terms.append(term)
        k += 1
    # tails[i] = P(D > mode + i), accumulated smallest-first
    tails = [0.0] * (len(terms) + 1)
    for i in range(len(terms) - 1, -1, -1):
        tails[i] = tails[i + 1] + terms[i]
    upper = [max(1.0 - tail, lower[-1]) for tail in tails[1:]]
    return tuple(lower + upper)


def poisson_cdf(k: int, lam: float) -> float:
    """P(D <= k) for D ~ Poisson(lam); 0 for negative k."""
    lam = _check_rate(lam)
    k = _check_count(k)
    if k < 0:
        return 0.0
    table = _cdf_table(lam)
    return table[k] if k < len(table) else 1.0


def poisson_quantile(p: float, lam: float) -> int:
    """Smallest k >= 0 with ``poisson_cdf(k, lam) >= p``."""
    lam = _check_rate(lam)
    if not 0.0 <= p < 1.0:
        raise DomainError(f"quantile level must lie in [0, 1), got {p!r}")
    if p == 0.0:
        return 0
    # the table always ends at exactly 1.0, so a match exists
    return bisect_left(_cdf_table(lam), p)


class ReciprocalTail(NamedTuple):
    """Exact reciprocal tail sum and its Poisson closed-form approximation."""

    exact: float
    approx: float

    @property
    def gap(self) -> float:
        return self.approx - self.exact


def _series(first: int, lam: float, weight) -> float:
    """Sum ``weight(k) * pmf(k)`` for k >= first, truncated at negligible terms."""
    log_lam = math.log(lam)
    terms = []
    total = 0.0
    k = first
    while True:
        term = weight(k) * _pmf(k, lam, log_lam)
        terms.append(term)
        total += term
        if k > lam and (term == 0.0 or term < TAIL_RELATIVE_CUTOFF * total):
            break
        k += 1
    return math.fsum(terms)


def exact_reciprocal_tail(q: int, lam: float) -> float:
    """Sum over k >= max(q, 1) of pmf(k) / k.  The k = 0 outcome is excluded."""
    lam = _check_rate(lam)
    q = _check_count(q)
    return _series(max(q, 1), lam, lambda k: 1.0 / k)


def index_shifted_tail(q: int, lam: float) -> float:
    """Sum over k >= q of exp(-lam) lam**(k+1) / (k+1)!, by direct series.

    Equal to ``1 - poisson_cdf(q, lam)`` after reindexing j = k + 1.
    """
    lam = _check_rate(lam)
    q = _check_count(q)
    return _series(max(q + 1, 0), lam, lambda k: 1.0)


def poisson_reciprocal_tail(q: int, lam: float) -> ReciprocalTail:
    """Reciprocal tail E[1/D; D >= q] for Poisson demand, exact and approximated.

    The approximation replaces 1/k by lam/(k+1) inside the series, which turns
    it into ``(1 - F(q)) / lam``.  Both values are returned so the error of that
    substitution can be measured.
    """
    lam = _check_rate(lam)
    q = _check_count(q)
    exact = exact_reciprocal_tail(q, lam)
    approx = (1.0 - poisson_cdf(q, lam)) / lam
    return ReciprocalTail(exact, approx)


# ---------------------------------------------------------------------------
# Windows and fitted models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SalesWindow:
    """Weekly unit sales of one SKU at one cluster, oldest week first."""

    cluster_id: str
    sku_id: str
    weekly_sales: tuple[int, ...]
    target_week: int | str | None = None

    def __post_init__(self):
        sales = tuple(self.weekly_sales)
        if not sales:
            raise DataError(f"empty sales window for ({self.cluster_id}, {self.sku_id})")
        for u in sales:
            if isinstance(u, bool) or not float(u).is_integer() or u < 0:
                raise DataError(
                    f"weekly sales must be non-negative integers, got {u!r} "
                    f"for ({self.cluster_id}, {self.sku_id})"
                )
        object.__setattr__(self, "weekly_sales", tuple(int(u) for u in sales))

    @property
    def last_week_sales(self) -> int:
        return self.weekly_sales[-1]


@dataclass(frozen=True)
class PoissonDemandModel:
    cluster_id: str
    sku_id: str
    lambda_hat: float
    n_samples: int

    def __post_init__(self):
        if not (math.isfinite(self.lambda_hat) and self.lambda_hat >= 0.0):
            raise DataError(f"lambda_hat must be finite and >= 0, got {self.lambda_hat!r}")
        if self.n_samples < 1:
            raise DataError(f"n_samples must be >= 1, got {self.n_samples!r}")

    @property
    def degenerate(self) -> bool:
        """True when the window saw no sales; such a model supports no allocation."""
        return self.lambda_hat == 0.0


def fit_poisson_mle(window: SalesWindow) -> PoissonDemandModel:
    """Maximum-likelihood Poisson rate: the plain mean of the window's sales."""
    sales: Sequence[int] = window.weekly_sales
    if len(sales) == 0:
        raise DataError(f"empty sales window for ({window.cluster_id}, {window.sku_id})")
    return PoissonDemandModel(
        cluster_id=window.cluster_id,
        sku_id=window.sku_id,
        lambda_hat=sum(sales) / len(sales),
        n_samples=len(sales),
    )


# ---------------------------------------------------------------------------
# Continuous densities
# ---------------------------------------------------------------------------


class ContinuousDensity(abc.ABC):
    """A demand density supported on (0, inf)."""

    @abc.abstractmethod
    def pdf(self, x: float) -> float: ...

    @abc.abstractmethod
    def cdf(self, x: float) -> float: ...

    @abc.abstractmethod
    def ppf(self, p: float) -> float: ...

    @property
    def median(self) -> float:
        return self.ppf(0.5)

    @property
    def lower_bound(self) -> float:
        return self.ppf(UPPER_TAIL_MASS)

    @property
    def upper_bound(self) -> float:
        return self.ppf(1.0 - UPPER_TAIL_MASS)

    def reciprocal_mean(self) -> float:
        """E[1/D].  Subclasses override with closed forms where they exist."""
        return continuous_reciprocal_tail(self, self.lower_bound)


@dataclass(frozen=True)
class LogNormal(ContinuousDensity):
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"lognormal sigma must be > 0, got {self.sigma!r}")

    def pdf(self, x):
        if x <= 0.0:
            return 0.0
        z = (math.log(x) - self.mu) / self.sigma
        return math.exp(-0.5 * z * z) / (x * self.sigma * math.sqrt(2.0 * math.pi))

    def cdf(self, x):
        if x <= 0.0:
            return 0.0
        return 0.5 * math.erfc(-(math.log(x) - self.mu) / (self.sigma * math.sqrt(2.0)))

    def ppf(self, p):
        return math.exp(self.mu + self.sigma * float(special.ndtri(p)))

    def reciprocal_mean(self):
        return math.exp(-self.mu + 0.5 * self.sigma**2)


@dataclass(frozen=True)
class Gamma(ContinuousDensity):
    """Gamma density with shape k and rate beta (mean k / beta)."""

    shape: float = 2.0
    rate: float = 1.0

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise DomainError(f"gamma shape and rate must be > 0, got {self.shape!r}, {self.rate!r}")

    def pdf(self, x):
        if x <= 0.0:
            return 0.0
        k, b = self.shape, self.rate
        return math.exp(k * math.log(b) + (k - 1.0) * math.log(x) - b * x - math.lgamma(k))

    def cdf(self, x):
        if x <= 0.0:
            return 0.0
        return float(special.gammainc(self.shape, self.rate * x))

    def ppf(self, p):
        return float(special.gammaincinv(self.shape, p)) / self.rate

    def reciprocal_mean(self):
        if self.shape <= 1.0:
            return math.inf
        return self.rate / (self.shape - 1.0)


def continuous_reciprocal_tail(density: ContinuousDensity, q: float) -> float:
    """Integral of pdf(x) / x over (q, U], U the density's upper quantile bound.

    The interval is split at the median so that nearby values of q share the
    upper piece exactly; finite differences of the tail then only see the
    error of the short lower piece.
    """
    if not q > 0:
        raise DomainError(f"tail start must be > 0, got {q!r}")
    upper = density.upper_bound
    if q >= upper:
        return 0.0

    def integrand(x):
        return density.pdf(x) / x

    cuts = [q, upper]
    m = density.median
    if q < m < upper:
        cuts = [q, m, upper]
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        value, abserr, info = _quad(integrand, a, b)
        total += value
    return max(total, 0.0)


def _quad(func, a, b):
    out = integrate.quad(func, a, b, epsabs=1e-15, epsrel=QUAD_RELATIVE_TOL, limit=200, full_output=1)
    value, abserr, info = out[0], out[1], out[2]
    failed = len(out) > 3 and out[3] and "roundoff" not in str(out[3]).lower()
    if failed or not math.isfinite(value):
        raise NumericError(
            "reciprocal tail quadrature did not converge",
            lower=a,
            upper=b,
            value=value,
            abserr=abserr,
            evaluations=info.get("neval"),
            quadpack=out[3] if len(out) > 3 else "non-finite integral",
        )
    return value, abserr, info
