"""Newsboy-model SKU allocation for forward warehouses.

Poisson demand is fitted per (cluster, SKU) from a window of weekly sales and
each SKU is stocked at the critical-fractile quantile that trades expected
Fulfilment Index against Utilization Index.
"""

__version__ = "0.1.0"

from .allocator import (
    AllocationBatch,
    AllocationDecision,
    AllocationParams,
    allocate,
    objective,
    objective_derivative,
    solve_continuous,
    solve_poisson_closed_form,
)
from .backtest import (
    BacktestConfig,
    BacktestResult,
    PolicyComparison,
    SalesRecord,
    SyntheticWorld,
    estimate_expected_fi,
    generate_world,
    run_backtest,
    run_policy_comparison,
)
from .demand import (
    Gamma,
    LogNormal,
    PoissonDemandModel,
    SalesWindow,
    continuous_reciprocal_tail,
    fit_poisson_mle,
    poisson_cdf,
    poisson_pmf,
    poisson_quantile,
    poisson_reciprocal_tail,
)
from .metrics import ClusterMetrics, WeekOutcome, cluster_metrics, sku_fi, sku_ui
