"""Allocation objective, its optimality condition, and per-SKU allocation.

For one SKU with demand D, last-week sales s and trade-off weight r, the
allocation objective is

    a(q) = E[min(q, D) / D] - r * q / s
         = F(q) + q * E[1/D; D > q] - r * q / s

which is concave in q with derivative E[1/D; D > q] - r / s.  Its maximiser
solves E[1/D; D > q] = r / s.  Under Poisson demand the tail expectation is
approximated by (1 - F(q)) / lambda, giving the critical fractile solution

    q* = F^-1(1 - r * lambda / s),

defined only when r * lambda < s.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Iterable, Iterator, Sequence, Union

from .demand import (
    ContinuousDensity,
    PoissonDemandModel,
    SalesWindow,
    continuous_reciprocal_tail,
    exact_reciprocal_tail,
    fit_poisson_mle,
    poisson_cdf,
    poisson_quantile,
)
from .errors import ConfigError, DataError, NewsboyError, NoInteriorSolution, NumericError

R_MAX = 10.0

Demand = Union[PoissonDemandModel, ContinuousDensity]


def validate_r(r) -> float:
    try:
        r = float(r)
    except (TypeError, ValueError):
        raise ConfigError(f"r must be a number, got {r!r}") from None
    if not (math.isfinite(r) and 0.0 < r <= R_MAX):
        raise ConfigError(f"r must lie in (0, {R_MAX:g}], got {r!r}")
    return r


@dataclass(frozen=True)
class AllocationParams:
    r: float
    s: float
    demand: Demand

    def __post_init__(self):
        object.__setattr__(self, "r", validate_r(self.r))
        if not (math.isfinite(self.s) and self.s >= 0):
            raise DataError(f"last-week sales must be finite and >= 0, got {self.s!r}")


@dataclass(frozen=True)
class AllocationDecision:
    cluster_id: str
    sku_id: str
    q_star: int
    eligible: bool
    fractile: float | None
    lambda_hat: float
    s: int
    r: float


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


def expected_fulfilment(lam: float, q: float) -> float:
    """E[min(q, D) / D] for D ~ Poisson(lam), counting D = 0 as fully served."""
    if lam == 0.0:
        return 1.0
    n = math.floor(q)
    if n < 0:
        raise ConfigError(f"quantity must be >= 0, got {q!r}")
    served = poisson_cdf(n, lam)
    if q > 0:
        served += q * exact_reciprocal_tail(n + 1, lam)
    return served


def objective(q: float, params: AllocationParams) -> float:
    """Expected FI minus r times UI for stocking q units."""
    if q < 0:
        raise ConfigError(f"quantity must be >= 0, got {q!r}")
    if params.s <= 0:
        raise DataError("objective is undefined for zero last-week sales")
    cost = params.r * q / params.s
    demand = params.demand
    if isinstance(demand, PoissonDemandModel):
        return expected_fulfilment(demand.lambda_hat, q) - cost
    if q == 0:
        return 0.0
    return demand.cdf(q) + q * continuous_reciprocal_tail(demand, q) - cost


def objective_derivative(q: float, params: AllocationParams) -> float:
    if not isinstance(params.demand, ContinuousDensity):
        raise ConfigError("objective_derivative needs a continuous demand density")
    if not q > 0:
        raise ConfigError(f"quantity must be > 0, got {q!r}")
    if params.s <= 0:
        raise DataError("objective is undefined for zero last-week sales")
    return continuous_reciprocal_tail(params.demand, q) - params.r / params.s


def solve_continuous(params: AllocationParams, start: float | None = None) -> float:
    """Root of the objective derivative, found by bracketing and bisection.

    The bracket grows geometrically from ``start`` (the median by default)
    until the derivative changes sign.  Raises NoInteriorSolution when
    r / s >= E[1/D], in which case stocking nothing is optimal.
    """
    density = params.demand
    if not isinstance(density, ContinuousDensity):
        raise ConfigError("solve_continuous needs a continuous demand density")
    if params.s <= 0:
        raise DataError("objective is undefined for zero last-week sales")
    target = params.r / params.s
    if target >= density.reciprocal_mean():
        raise NoInteriorSolution(
            "r / s is not below E[1/D]; optimal allocation is 0",
            r_over_s=target,
            reciprocal_mean=density.reciprocal_mean(),
        )

    def slope(x):
        return objective_derivative(x, params)

    x0 = density.median if start is None else float(start)
    if not x0 > 0:
        raise ConfigError(f"bracket start must be > 0, got {start!r}")
    upper_limit = 1e3 * density.upper_bound
    lo = hi = x0
    if slope(x0) > 0:
        while slope(hi) > 0:
            lo = hi
            hi *= 2.0
            if hi > upper_limit:
                raise NumericError("bracket expansion overflowed", hi=hi, limit=upper_limit)
    else:
        while slope(lo) <= 0:
            hi = lo
            lo *= 0.5
            if lo < 1e-300:
                raise NumericError("bracket expansion underflowed", lo=lo)

    # slope(lo) > 0 >= slope(hi)
    while hi - lo >= 1e-9 * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if slope(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Poisson closed form and the batch procedure
# ---------------------------------------------------------------------------


def is_eligible(r: float, lambda_hat: float, s: float) -> bool:
    """Whether the critical fractile 1 - r * lambda_hat / s lies in (0, 1)."""
    return lambda_hat > 0 and s > 0 and r * lambda_hat < s


def solve_poisson_closed_form(params: AllocationParams) -> AllocationDecision:
    model = params.demand
    if not isinstance(model, PoissonDemandModel):
        raise ConfigError("solve_poisson_closed_form needs a fitted Poisson model")
    lam, s, r = model.lambda_hat, params.s, params.r
    if not is_eligible(r, lam, s):
        return AllocationDecision(model.cluster_id, model.sku_id, 0, False, None, lam, int(s), r)
    p = 1.0 - r * lam / s
    return AllocationDecision(
        model.cluster_id, model.sku_id, poisson_quantile(p, lam), True, p, lam, int(s), r
    )


def decide(window: SalesWindow, r: float) -> AllocationDecision:
    """Fit the window and allocate: one iteration of the batch procedure."""
    model = fit_poisson_mle(window)
    return solve_poisson_closed_form(AllocationParams(r=r, s=window.last_week_sales, demand=model))


@dataclass(frozen=True)
class AllocationFailure:
    index: int
    cluster_id: str | None
    sku_id: str | None
    message: str


@dataclass
class AllocationBatch:
    """Decisions in input order, plus the windows that could not be processed."""

    decisions: list[AllocationDecision] = field(default_factory=list)
    failures: list[AllocationFailure] = field(default_factory=list)

    def __iter__(self) -> Iterator[AllocationDecision]:
        return iter(self.decisions)

    def __len__(self) -> int:
        return len(self.decisions)

    def __getitem__(self, i):
        return self.decisions[i]


def _try_decide(window, r):
    try:
        return decide(window, r)
    except (NewsboyError, ValueError, TypeError) as exc:
        return exc


def allocate(windows: Iterable[SalesWindow], r: float, workers: int | None = None) -> AllocationBatch:
    """Allocate every window independently at trade-off weight r.

    With ``workers > 1`` windows are farmed out to a process pool; ``map``
    preserves input order so the result is identical to the sequential run.
    """
    r = validate_r(r)
    windows: Sequence[SalesWindow] = list(windows)
    job = partial(_try_decide, r=r)
    if workers and workers > 1 and len(windows) > 1:
        chunk = max(1, len(windows) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(job, windows, chunksize=chunk))
    else:
        outcomes = [job(w) for w in windows]

    batch = AllocationBatch()
    for i, (window, out) in enumerate(zip(windows, outcomes)):
        if isinstance(out, AllocationDecision):
            batch.decisions.append(out)
        else:
            batch.failures.append(
                AllocationFailure(
                    i, getattr(window, "cluster_id", None), getattr(window, "sku_id", None), str(out)
                )
            )
    return batch
