"""Simulation designs and the replication harness for estimator quality.

Two designs are provided: Poisson counts on a regular grid over the
unit square (one random effect per cell centroid) and Binomial
responses at uniformly sampled locations. Replicates are seeded
independently from (base_seed, replicate_index), so results do not
depend on worker count or execution order.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np
from scipy.stats import binom

from .covariance import CovarianceParams, build_bundle
from .exceptions import NumericalError
from .fitter import FitConfig, fit
from .model import Family, ModelData, family_eval

POISSON_GRID = "poisson_grid"
BINOMIAL_UNIFORM = "binomial_uniform"

TRIM_UPPER = 100.0
TRIM_LOWER = 1e-6


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation scenario: design, truth, replication plan."""

    design: str
    beta: tuple[float, float]
    theta: tuple[float, float]
    replicates: int
    base_seed: int = 0
    cells_per_dim: int = 10
    n: int = 100
    trials: int = 1
    fit_config: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.design not in (POISSON_GRID, BINOMIAL_UNIFORM):
            raise ValueError(f"unknown design {self.design!r}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.design == POISSON_GRID and self.cells_per_dim < 1:
            raise ValueError("cells_per_dim must be >= 1")
        if self.design == BINOMIAL_UNIFORM and (self.n < 1 or self.trials < 1):
            raise ValueError("n and trials must be >= 1")


@dataclass(frozen=True)
class ReplicateResult:
    index: int
    ok: bool
    error: str | None = None
    converged: bool = False
    n_iterations: int = 0
    beta_hat: np.ndarray | None = None
    se_beta: np.ndarray | None = None
    ci_lower: np.ndarray | None = None
    ci_upper: np.ndarray | None = None
    covers: np.ndarray | None = None
    tau2_hat: float = math.nan
    lambda_hat: float = math.nan
    var_u_mean: float = math.nan
    wall_time_seconds: float = math.nan


@dataclass(frozen=True)
class SummaryRow:
    """Scenario-level summary mirroring the bias/coverage/MRB table layout."""

    n_obs: int
    replicates: int
    n_failed: int
    n_trimmed: int
    bias_b0: float
    bias_b0_ci: tuple[float, float]
    bias_b1: float
    bias_b1_ci: tuple[float, float]
    coverage_b0: float
    coverage_b1: float
    mrb_tau2: float
    mrb_tau2_ci: tuple[float, float]
    mrb_lambda: float
    mrb_lambda_ci: tuple[float, float]
    mean_var_u: float
    mean_time_s: float


def grid_centroids(cells_per_dim: int) -> np.ndarray:
    """Centroids of a regular lattice on the unit square, row-major."""
    c = (np.arange(cells_per_dim) + 0.5) / cells_per_dim
    xx, yy = np.meshgrid(c, c, indexing="ij")
    return np.column_stack((xx.ravel(), yy.ravel()))


def simulate_scenario(spec: ScenarioSpec, replicate_index: int) -> tuple[ModelData, Family]:
    """Generate one replicate dataset, deterministic in (base_seed, index)."""
    rng = np.random.default_rng((spec.base_seed, replicate_index, 0))
    tau2, lam = spec.theta
    if spec.design == POISSON_GRID:
        coords = grid_centroids(spec.cells_per_dim)
        family = Family.poisson()
    else:
        coords = rng.uniform(size=(spec.n, 2))
        family = Family.binomial(np.full(spec.n, float(spec.trials)))
    n = coords.shape[0]
    z = rng.standard_normal(n)
    if tau2 > 0.0:
        bundle = build_bundle(coords, CovarianceParams.from_raw(tau2, lam))
        alpha = bundle.L @ rng.standard_normal(n)
    else:
        alpha = np.zeros(n)
    eta = spec.beta[0] + spec.beta[1] * z + alpha
    mu = family_eval(family, eta).mu
    if spec.design == POISSON_GRID:
        y = rng.poisson(mu).astype(float)
    else:
        y = rng.binomial(int(spec.trials), mu / spec.trials).astype(float)
    X = np.column_stack((np.ones(n), z))
    data = ModelData(y=y, X=X, Z=np.eye(n), coords=coords)
    return data, family


def _fit_seed(spec: ScenarioSpec, replicate_index: int) -> int:
    seq = np.random.SeedSequence((spec.base_seed, replicate_index, 1))
    return int(seq.generate_state(1, np.uint64)[0])


def run_single(spec: ScenarioSpec, replicate_index: int) -> ReplicateResult:
    """Simulate and fit one replicate, capturing failures instead of raising."""
    data, family = simulate_scenario(spec, replicate_index)
    config = replace(spec.fit_config, seed=_fit_seed(spec, replicate_index))
    truth = np.asarray(spec.beta)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = fit(data, family, config)
    except NumericalError as err:
        return ReplicateResult(index=replicate_index, ok=False, error=str(err))
    ci = result.wald_ci_beta
    covers = (ci[:, 0] <= truth) & (truth <= ci[:, 1])
    return ReplicateResult(
        index=replicate_index,
        ok=True,
        converged=result.converged,
        n_iterations=result.n_iterations,
        beta_hat=result.beta_hat,
        se_beta=result.se_beta,
        ci_lower=ci[:, 0],
        ci_upper=ci[:, 1],
        covers=covers,
        tau2_hat=result.theta_hat.tau2,
        lambda_hat=result.theta_hat.lam,
        var_u_mean=result.re_posterior_var_mean,
        wall_time_seconds=result.wall_time_seconds,
    )


def run_replications(spec: ScenarioSpec, workers: int = 1) -> list[ReplicateResult]:
    """Run all replicates, optionally across processes.

    Results are returned in replicate order and are identical for any
    worker count because every replicate derives its own random streams.
    """
    indices = range(spec.replicates)
    if workers <= 1:
        return [run_single(spec, i) for i in indices]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(partial(run_single, spec), indices))


def _median_ci(values: np.ndarray) -> tuple[float, float]:
    """Order-statistic (binomial) 95 percent interval for the median."""
    x = np.sort(values)
    n = x.size
    lo = int(binom.ppf(0.025, n, 0.5))
    hi = int(binom.isf(0.025, n, 0.5))
    return float(x[max(lo - 1, 0)]), float(x[min(hi, n - 1)])


def _trimmed(values: np.ndarray) -> tuple[np.ndarray, int]:
    keep = (values >= TRIM_LOWER) & (values <= TRIM_UPPER)
    return values[keep], int(np.sum(~keep))


def _mrb(values: np.ndarray, truth: float) -> tuple[float, tuple[float, float], int]:
    vals, n_trim = _trimmed(values)
    if vals.size == 0:
        return math.nan, (math.nan, math.nan), n_trim
    mrb = (float(np.median(vals)) / truth - 1.0) * 100.0
    lo, hi = _median_ci(vals)
    return mrb, ((lo / truth - 1.0) * 100.0, (hi / truth - 1.0) * 100.0), n_trim


def summarize_results(results: list[ReplicateResult], spec: ScenarioSpec) -> SummaryRow:
    """Aggregate replicate results into bias, coverage and MRB statistics.

    Failed replicates are excluded from every statistic and counted in
    n_failed; covariance estimates outside [TRIM_LOWER, TRIM_UPPER] are
    dropped (per parameter) before the median statistics.
    """
    ok = [r for r in results if r.ok]
    if len(ok) < 2:
        raise ValueError(f"need at least 2 successful replicates, have {len(ok)}")
    truth_beta = np.asarray(spec.beta)
    betas = np.vstack([r.beta_hat for r in ok])
    covers = np.vstack([r.covers for r in ok]).astype(float)
    errs = betas - truth_beta
    bias = errs.mean(axis=0)
    half = 1.96 * errs.std(axis=0, ddof=1) / math.sqrt(len(ok))

    tau2s = np.array([r.tau2_hat for r in ok])
    lams = np.array([r.lambda_hat for r in ok])
    mrb_t, ci_t, trim_t = _mrb(tau2s, spec.theta[0])
    mrb_l, ci_l, trim_l = _mrb(lams, spec.theta[1])

    if spec.design == POISSON_GRID:
        n_obs = spec.cells_per_dim**2
    else:
        n_obs = spec.n
    return SummaryRow(
        n_obs=n_obs,
        replicates=len(results),
        n_failed=len(results) - len(ok),
        n_trimmed=trim_t + trim_l,
        bias_b0=float(bias[0]),
        bias_b0_ci=(float(bias[0] - half[0]), float(bias[0] + half[0])),
        bias_b1=float(bias[1]),
        bias_b1_ci=(float(bias[1] - half[1]), float(bias[1] + half[1])),
        coverage_b0=float(100.0 * covers[:, 0].mean()),
        coverage_b1=float(100.0 * covers[:, 1].mean()),
        mrb_tau2=mrb_t,
        mrb_tau2_ci=ci_t,
        mrb_lambda=mrb_l,
        mrb_lambda_ci=ci_l,
        mean_var_u=float(np.mean([r.var_u_mean for r in ok])),
        mean_time_s=float(np.mean([r.wall_time_seconds for r in ok])),
    )
