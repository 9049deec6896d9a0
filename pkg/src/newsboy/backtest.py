"""Rolling-window backtests, r-sweeps, policy comparison and synthetic worlds.

A backtest picks a target week t.  For every (cluster, SKU) the weeks
t - window_weeks .. t - 1 form the estimation window; its last week gives the
previous-week sales s, and the sales recorded in week t are taken as the
realized demand.  Missing rows are zero sales.
"""

from __future__ import annotations

import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .allocator import allocate, validate_r
from .demand import SalesWindow, fit_poisson_mle
from .errors import ConfigError, DataError
from .metrics import ClusterMetrics, WeekOutcome, cluster_metrics

DEFAULT_WINDOW_WEEKS = 9
DEFAULT_R_VALUES = (0.025, 0.05, 0.1, 0.2, 0.4)
DEFAULT_R = 0.1
POLICIES = ("newsboy", "naive_last_week", "window_mean")
#: policies whose allocation does not depend on r
R_FREE_POLICIES = frozenset({"naive_last_week", "window_mean"})
GENERATOR = "numpy.random.PCG64"


@dataclass(frozen=True, order=True)
class SalesRecord:
    cluster_id: str
    sku_id: str
    week: int
    units: int


@dataclass(frozen=True)
class BacktestConfig:
    target_week: int
    window_weeks: int = DEFAULT_WINDOW_WEEKS
    r_values: tuple[float, ...] = DEFAULT_R_VALUES
    policy: str = "newsboy"
    seed: int | None = None

    def __post_init__(self):
        if isinstance(self.window_weeks, bool) or not isinstance(self.window_weeks, int) or self.window_weeks < 1:
            raise ConfigError(f"window_weeks must be a positive integer, got {self.window_weeks!r}")
        if not isinstance(self.target_week, int) or isinstance(self.target_week, bool):
            raise ConfigError(f"target_week must be an integer week index, got {self.target_week!r}")
        r_values = tuple(validate_r(r) for r in self.r_values)
        if not r_values:
            raise ConfigError("r_values must not be empty")
        if len(set(r_values)) != len(r_values):
            raise ConfigError(f"r_values contains duplicates: {r_values}")
        object.__setattr__(self, "r_values", r_values)
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; choose from {', '.join(POLICIES)}")


@dataclass
class BacktestResult:
    """Cluster metrics for every (cluster, r) pair of one policy."""

    config: BacktestConfig
    clusters: list[str]
    metrics: dict[tuple[str, float], ClusterMetrics]
    metadata: dict = field(default_factory=dict)

    @property
    def policy(self) -> str:
        return self.config.policy

    def get(self, cluster_id: str, r: float) -> ClusterMetrics:
        return self.metrics[(cluster_id, r)]

    def column(self, r: float) -> list[ClusterMetrics]:
        return [self.metrics[(c, r)] for c in self.clusters]


@dataclass
class PolicyComparison:
    """Results of several policies evaluated on identical windows."""

    results: dict[str, BacktestResult]

    @property
    def policies(self) -> list[str]:
        return list(self.results)

    @property
    def clusters(self) -> list[str]:
        return next(iter(self.results.values())).clusters

    def __getitem__(self, policy: str) -> BacktestResult:
        return self.results[policy]


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------


def index_sales(sales: Iterable[SalesRecord]) -> dict[tuple[str, str], dict[int, int]]:
    table: dict[tuple[str, str], dict[int, int]] = defaultdict(dict)
    for rec in sales:
        series = table[(rec.cluster_id, rec.sku_id)]
        if rec.week in series:
            raise DataError(f"duplicate sales record for ({rec.cluster_id}, {rec.sku_id}, week {rec.week})")
        series[rec.week] = rec.units
    return table


def natural_key(token: str):
    """Sort key placing FDC_2 before FDC_10."""
    return [(0, int(part), "") if part.isdigit() else (1, 0, part) for part in re.split(r"(\d+)", token)]


def build_windows(
    table: Mapping[tuple[str, str], Mapping[int, int]],
    target_week: int,
    window_weeks: int,
    keep_empty: bool = False,
) -> tuple[list[SalesWindow], list[tuple[str, str]]]:
    """Estimation windows preceding ``target_week``, in (cluster, SKU) order.

    Returns the windows and the keys skipped for lack of any positive sales in
    the window (unless ``keep_empty``).
    """
    weeks = range(target_week - window_weeks, target_week)
    windows, skipped = [], []
    for key in sorted(table, key=lambda k: (natural_key(k[0]), natural_key(k[1]))):
        series = table[key]
        sales = tuple(series.get(w, 0) for w in weeks)
        if not any(sales) and not keep_empty:
            skipped.append(key)
            continue
        windows.append(SalesWindow(key[0], key[1], sales, target_week))
    return windows, skipped


def check_history(weeks: Iterable[int], target_week: int, window_weeks: int, need_target: bool = True):
    weeks = list(weeks)
    if not weeks:
        raise DataError("no sales records")
    first, last = min(weeks), max(weeks)
    earliest = first + window_weeks
    if target_week < earliest:
        raise DataError(
            f"insufficient history for target week {target_week}: a {window_weeks}-week window "
            f"needs data from week {target_week - window_weeks}; earliest usable target week is {earliest}"
        )
    if need_target and target_week > last:
        raise DataError(f"target week {target_week} has no realized sales; last recorded week is {last}")


class _Prepared(NamedTuple):
    clusters: list[str]
    windows: list[SalesWindow]
    realized: list[int]
    skipped: list[tuple[str, str]]


def _prepare(sales: Sequence[SalesRecord], config: BacktestConfig) -> _Prepared:
    table = index_sales(sales)
    check_history((w for series in table.values() for w in series), config.target_week, config.window_weeks)
    windows, skipped = build_windows(table, config.target_week, config.window_weeks)
    realized = [table[(w.cluster_id, w.sku_id)].get(config.target_week, 0) for w in windows]
    clusters = sorted({c for c, _ in table}, key=natural_key)
    return _Prepared(clusters, windows, realized, skipped)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _allocations(prep: _Prepared, policy: str, r: float, workers: int | None) -> tuple[list[int], int]:
    """Allocated units per window, and the number of ineligible SKUs."""
    if policy == "naive_last_week":
        return [w.last_week_sales for w in prep.windows], 0
    if policy == "window_mean":
        return [_round_half_up(fit_poisson_mle(w).lambda_hat) for w in prep.windows], 0
    batch = allocate(prep.windows, r, workers=workers)
    if batch.failures:
        raise DataError(f"allocation failed for {len(batch.failures)} SKUs: {batch.failures[0].message}")
    return [d.q_star for d in batch], sum(not d.eligible for d in batch)


def _evaluate(prep: _Prepared, config: BacktestConfig, workers: int | None) -> BacktestResult:
    metrics: dict[tuple[str, float], ClusterMetrics] = {}
    ineligible: dict[str, int] = {}
    cached = None
    for r in config.r_values:
        if config.policy in R_FREE_POLICIES and cached is not None:
            alloc, n_bad = cached
        else:
            alloc, n_bad = cached = _allocations(prep, config.policy, r, workers)
        ineligible[repr(r)] = n_bad
        by_cluster: dict[str, list[WeekOutcome]] = defaultdict(list)
        for w, q, d in zip(prep.windows, alloc, prep.realized):
            by_cluster[w.cluster_id].append(WeekOutcome(w.cluster_id, w.sku_id, d, q, w.last_week_sales))
        for c in prep.clusters:
            metrics[(c, r)] = cluster_metrics(by_cluster.get(c, []), cluster_id=c)
    metadata = {
        "policy": config.policy,
        "target_week": config.target_week,
        "window": [config.target_week - config.window_weeks, config.target_week - 1],
        "sku_count": len(prep.windows),
        "skipped_sku_count": len(prep.skipped),
        "ineligible_sku_count": ineligible,
    }
    return BacktestResult(config=config, clusters=list(prep.clusters), metrics=metrics, metadata=metadata)


def run_backtest(sales: Sequence[SalesRecord], config: BacktestConfig, workers: int | None = None) -> BacktestResult:
    return _evaluate(_prepare(sales, config), config, workers)


def run_policy_comparison(
    sales: Sequence[SalesRecord],
    config: BacktestConfig,
    policies: Sequence[str] = POLICIES,
    workers: int | None = None,
) -> PolicyComparison:
    """Evaluate several policies on the same windows and target week."""
    if not policies:
        raise ConfigError("at least one policy is required")
    if len(set(policies)) != len(policies):
        raise ConfigError(f"duplicate policies: {list(policies)}")
    prep = _prepare(sales, config)
    results = {}
    for policy in policies:
        cfg = BacktestConfig(config.target_week, config.window_weeks, config.r_values, policy, config.seed)
        results[policy] = _evaluate(prep, cfg, workers)
    return PolicyComparison(results)


# ---------------------------------------------------------------------------
# Synthetic worlds and Monte-Carlo checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LambdaSampler:
    """Lognormal distribution of true weekly rates, truncated to [low, high]."""

    mu: float = 0.5
    sigma: float = 1.0
    low: float = 0.1
    high: float = 50.0

    def __post_init__(self):
        if not (self.sigma > 0 and 0 < self.low < self.high):
            raise ConfigError(f"invalid lambda sampler {self}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = rng.lognormal(self.mu, self.sigma, size=n)
        bad = (out < self.low) | (out > self.high)
        while bad.any():
            out[bad] = rng.lognormal(self.mu, self.sigma, size=int(bad.sum()))
            bad = (out < self.low) | (out > self.high)
        return out


@dataclass(frozen=True)
class SyntheticWorld:
    clusters: int
    skus_per_cluster: int
    weeks: int
    seed: int = 0
    lambda_sampler: LambdaSampler = LambdaSampler()

    def __post_init__(self):
        for name in ("clusters", "skus_per_cluster", "weeks"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")


def cluster_name(i: int) -> str:
    return f"FDC_{i + 1}"


def generate_world(world: SyntheticWorld) -> list[SalesRecord]:
    """Dense weekly Poisson sales for every SKU, ordered by cluster, SKU, week."""
    rng = np.random.Generator(np.random.PCG64(world.seed))
    width = max(4, len(str(world.skus_per_cluster)))
    records = []
    for c in range(world.clusters):
        cid = cluster_name(c)
        rates = world.lambda_sampler.sample(rng, world.skus_per_cluster)
        sales = rng.poisson(rates[:, None], size=(world.skus_per_cluster, world.weeks))
        for j in range(world.skus_per_cluster):
            sid = f"SKU_{j + 1:0{width}d}"
            records.extend(SalesRecord(cid, sid, w, int(u)) for w, u in enumerate(sales[j]))
    return records


def world_rates(world: SyntheticWorld) -> list[np.ndarray]:
    """True per-SKU rates of each cluster, replaying the generator."""
    rng = np.random.Generator(np.random.PCG64(world.seed))
    rates = []
    for _ in range(world.clusters):
        lam = world.lambda_sampler.sample(rng, world.skus_per_cluster)
        rng.poisson(lam[:, None], size=(world.skus_per_cluster, world.weeks))
        rates.append(lam)
    return rates


class MonteCarloEstimate(NamedTuple):
    mean: float
    stderr: float
    samples: int


def estimate_expected_fi(lam: float, q: int, samples: int, seed: int = 0) -> MonteCarloEstimate:
    """Monte-Carlo estimate of E[min(q, D) / D], D ~ Poisson(lam), with D = 0 scored as 1."""
    if samples < 1:
        raise ConfigError(f"samples must be >= 1, got {samples!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    d = rng.poisson(lam, size=samples)
    ratio = np.ones(samples)
    pos = d > 0
    ratio[pos] = np.minimum(q, d[pos]) / d[pos]
    stderr = float(ratio.std(ddof=1) / math.sqrt(samples)) if samples > 1 else math.inf
    return MonteCarloEstimate(float(ratio.mean()), stderr, samples)
