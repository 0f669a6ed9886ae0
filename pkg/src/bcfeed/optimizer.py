"""Exhaustive grid search over the JSC compression levels beta.

beta_t enters the rate only through a_t(beta_t) and B_{t+1}(beta_t), so the
search precomputes one 1-D table of means per term and composes the full
Cartesian grid by broadcasting.  All grid points share one sample batch; the
winner is re-estimated on an independent batch to remove selection bias.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ValidationError
from .gbc import JscTables, RatePoint, Scheme, jsc_sym_rate
from .montecarlo import McEstimate, McPlan

# validation batches use stream ``plan.stream + VALIDATION_STREAM_OFFSET``
VALIDATION_STREAM_OFFSET = 1 << 32
MAX_GRID_POINTS = 50_000_000


@dataclass(frozen=True)
class BetaGrid:
    """Log-spaced per-dimension grid 10**log_min .. 10**log_max."""

    log_min: float = -1.5
    log_max: float = 1.5
    points_per_dim: int = 60

    def __post_init__(self):
        if not (math.isfinite(self.log_min) and math.isfinite(self.log_max)):
            raise ValidationError("grid bounds must be finite")
        if not self.log_min < self.log_max:
            raise ValidationError("grid needs log_min < log_max")
        if int(self.points_per_dim) != self.points_per_dim or self.points_per_dim < 2:
            raise ValidationError("points_per_dim must be an integer >= 2")

    @property
    def values(self):
        return np.logspace(self.log_min, self.log_max, int(self.points_per_dim))

    def to_json(self):
        return {"log_min": self.log_min, "log_max": self.log_max,
                "points_per_dim": self.points_per_dim, "scale": "log"}


@dataclass(frozen=True)
class OptResult:
    """Outcome of :func:`optimize_beta`.

    ``best_rate`` is measured on the validation batch; ``search_rate`` is the
    same beta on the search batch, where it dominates every grid point.
    """

    best_betas: tuple
    best_rate: McEstimate
    search_rate: McEstimate
    alphas: tuple
    evaluations: int
    grid: BetaGrid
    table: list = field(default=None, repr=False)


def grid_rates(tables, grid):
    """JSC rate means at every point of the Cartesian beta grid.

    Returns an array with one axis per beta_1..beta_{K-1}.
    """
    K = tables.cfg.users
    g = grid.values
    n = g.shape[0]
    if n ** (K - 1) > MAX_GRID_POINTS:
        raise ValidationError(
            f"grid of {n}^{K - 1} points is too large; reduce points_per_dim")

    def along(vec, axis):
        shape = [1] * (K - 1)
        shape[axis] = n
        return vec.reshape(shape)

    a = {t: along(tables.a_mean_grid(t, g), t - 1) for t in range(1, K)}
    a[K] = tables.a_mean_grid(K, g[:1])[0]
    if np.any(a[K] <= 0) or any(np.any(a[t] <= 0) for t in range(1, K)):
        raise ArithmeticError("non-positive a_t mean on the beta grid")
    denom = np.full((n,) * (K - 1), float(K))
    prod = 1.0
    for j in range(2, K + 1):
        prod = prod * along(tables.big_b_mean_grid(j, g), j - 2) / a[j]
        denom = denom + math.comb(K, j) * prod
    return a[1] / denom


def optimize_beta(cfg, grid=None, plan=None, threads=None, dump_grid=False,
                  search_batch=None):
    """Maximize the JSC symmetric rate over a beta grid.

    Parameters
    ----------
    cfg : GbcConfig
    grid : BetaGrid, optional
        Defaults to 60 log-spaced points on [10**-1.5, 10**1.5] per beta.
    plan : McPlan, optional
        Search samples; validation uses the same size on an independent stream.
    dump_grid : bool
        Keep the full ``[(betas, rate), ...]`` table in the result.

    Returns
    -------
    OptResult
        Ties on the search batch go to the lexicographically smallest beta.
    """
    grid = grid or BetaGrid()
    plan = plan or McPlan()
    K = cfg.users
    val_plan = plan.with_stream(plan.stream + VALIDATION_STREAM_OFFSET)
    if K == 1:
        est, alphas = jsc_sym_rate(cfg, (), plan, threads=threads)
        return OptResult((), est, est, alphas, 1, grid, [((), est.mean)] if dump_grid else None)

    tables = JscTables.build(cfg, plan, search_batch, threads)
    rates = grid_rates(tables, grid)
    flat = int(np.argmax(rates))
    idx = np.unravel_index(flat, rates.shape)
    g = grid.values
    best = tuple(float(g[i]) for i in idx)
    search_rate, _ = jsc_sym_rate(cfg, best, tables=tables)
    val_rate, alphas = jsc_sym_rate(cfg, best, val_plan, threads=threads)
    table = None
    if dump_grid:
        table = [(tuple(float(g[i]) for i in ix), float(rates[ix]))
                 for ix in np.ndindex(rates.shape)]
    return OptResult(best, val_rate, search_rate, alphas, int(rates.size), grid, table)


def rate_at_fixed_beta(cfg, betas, plan=None, batch=None, threads=None):
    """Single JSC evaluation at the given betas, tagged JSC_FIXED_BETA."""
    est, alphas = jsc_sym_rate(cfg, betas, plan, batch, threads)
    return RatePoint(cfg.snr_db, Scheme.JSC_FIXED_BETA, est,
                     tuple(float(b) for b in betas), alphas)
