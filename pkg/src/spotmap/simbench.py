"""Desk-scale simulation study: generator, oracle variants, metrics, harness.

Regions live on a line segment with three baseline prevalence levels; a
chosen fraction of regions gets a +/-2 sparse effect.  Replications use one
independent counter-based RNG stream each, so they can run in any order (or
in parallel) and still reproduce bit-identically.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.special import expit, logit

from . import solver as _solver
from . import tuning as _tuning
from .core import Dataset, FusionGraph, ModelParams, PenaltyConfig
from .errors import SpotmapError
from .weighting import logistic_irls

TRUE_ALPHA = (-0.2, 0.2)
OUTLIER_MAGNITUDE = 2.0
_BETA_LEVELS = (logit(0.4), logit(0.5), logit(0.6))
_BAND_EDGES = (35.0, 65.0)

ALL_METHODS = ("proposed", "oracle_alpha", "oracle_beta", "oracle_gamma",
               "residual_baseline")
METRICS = ("bias_alpha1", "bias_alpha2", "rmse_p", "rmse_beta", "mcc")


@dataclass(frozen=True)
class Scenario:
    """One simulation configuration."""

    n_regions: int = 20
    n_per_region: int = 50
    outlier_fraction: float = 0.0
    replications: int = 100
    seed: int = 0

    def __post_init__(self):
        count = self.n_regions * self.outlier_fraction
        if abs(count - round(count)) > 1e-9:
            raise ValueError("K * outlier_fraction must be an integer")

    @property
    def n_outliers(self) -> int:
        return int(round(self.n_regions * self.outlier_fraction))

    @property
    def name(self) -> str:
        pct = int(round(self.outlier_fraction * 100))
        return f"K{self.n_regions}n{self.n_per_region}o{pct}"


@dataclass
class GeneratedInstance:
    """Dataset, fusion graph and the generating truth."""

    dataset: Dataset
    graph: FusionGraph
    truth: ModelParams
    true_prevalence: np.ndarray


def _rng_for(scenario: Scenario, replicate_index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=scenario.seed,
                                 spawn_key=(replicate_index,))
    return np.random.Generator(np.random.Philox(seq))


def true_beta_for_locations(locations: np.ndarray) -> np.ndarray:
    """Piecewise-constant baseline levels over the three location bands."""
    beta = np.full(locations.shape[0], _BETA_LEVELS[1])
    beta[locations < _BAND_EDGES[0]] = _BETA_LEVELS[0]
    beta[locations >= _BAND_EDGES[1]] = _BETA_LEVELS[2]
    return beta


def generate(scenario: Scenario, replicate_index: int) -> GeneratedInstance:
    """Draw one instance; deterministic in (scenario.seed, replicate_index)."""
    rng = _rng_for(scenario, replicate_index)
    k = scenario.n_regions
    n = scenario.n_per_region

    locations = rng.uniform(5.0, 95.0, size=k)
    while np.unique(locations).size < k:  # probability-zero duplicate guard
        locations = rng.uniform(5.0, 95.0, size=k)
    beta = true_beta_for_locations(locations)

    gamma = np.zeros(k)
    k_o = scenario.n_outliers
    if k_o:
        chosen = rng.permutation(k)[:k_o]
        gamma[chosen[: k_o // 2]] = OUTLIER_MAGNITUDE
        gamma[chosen[k_o // 2:]] = -OUTLIER_MAGNITUDE

    x = rng.binomial(1, 0.5, size=k).astype(float)
    z = rng.binomial(1, 0.5, size=k * n).astype(float)
    region_index = np.repeat(np.arange(k, dtype=np.int64), n)
    a1, a2 = TRUE_ALPHA
    eta = a1 * z + (a2 * x + beta + gamma)[region_index]
    prob = expit(eta)
    y = (rng.random(k * n) < prob).astype(float)
    # each region needs both outcome classes; redraw degenerate regions
    for i in range(k):
        sl = slice(i * n, (i + 1) * n)
        attempts = 0
        while y[sl].min() == y[sl].max():
            y[sl] = (rng.random(n) < prob[sl]).astype(float)
            attempts += 1
            if attempts > 1000:
                raise SpotmapError(f"region {i} would not produce both classes")

    ds = Dataset.from_arrays(
        region_ids=[f"r{i:03d}" for i in range(k)],
        locations=locations.reshape(-1, 1),
        region_covariates=x.reshape(-1, 1),
        region_index=region_index, outcome=y,
        subject_covariates=z.reshape(-1, 1))

    ii, jj = np.triu_indices(k, 1)
    rho = 1.0 / np.abs(locations[ii] - locations[jj])
    graph = FusionGraph.from_arrays(ii, jj, rho, normalize=True)

    truth = ModelParams(alpha=np.array([a1, a2]), beta=beta, gamma=gamma)
    off = a2 * x + beta + gamma
    p_true = 0.5 * expit(off) + 0.5 * expit(a1 + off)
    return GeneratedInstance(dataset=ds, graph=graph, truth=truth,
                             true_prevalence=p_true)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def evaluate_fit(instance: GeneratedInstance, params: ModelParams) -> dict:
    """Bias of the covariate effects, RMSE of prevalence and of beta."""
    ds = instance.dataset
    truth = instance.truth
    eta = (ds.Q @ params.alpha if ds.p else np.zeros(ds.N))
    eta = eta + (params.beta + params.gamma)[ds.reg_s]
    p_hat_subj = expit(eta)
    p_hat = np.add.reduceat(p_hat_subj, ds.ptr[:-1]) / ds.n_i
    rmse_p = math.sqrt(float(np.mean((p_hat - instance.true_prevalence) ** 2)))
    rmse_beta = math.sqrt(float(np.mean((params.beta - truth.beta) ** 2)))
    bias1 = float(params.alpha[0] - truth.alpha[0]) if params.alpha.size else math.nan
    bias2 = float(params.alpha[1] - truth.alpha[1]) if params.alpha.size > 1 else math.nan
    return {"bias_alpha1": bias1, "bias_alpha2": bias2,
            "rmse_p": rmse_p, "rmse_beta": rmse_beta}


def mcc(tp: int, tn: int, fp: int, fn: int) -> float:
    """Matthews correlation; 0 when any denominator factor vanishes."""
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def mcc_from_flags(flagged: np.ndarray, truth: np.ndarray) -> float:
    flagged = np.asarray(flagged, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = int(np.sum(flagged & truth))
    tn = int(np.sum(~flagged & ~truth))
    fp = int(np.sum(flagged & ~truth))
    fn = int(np.sum(~flagged & truth))
    return mcc(tp, tn, fp, fn)


def residual_baseline_detect(ds: Dataset, threshold_sd: float = 2.5
                             ) -> np.ndarray:
    """Flag regions whose standardized weighted residual sum exceeds the cut.

    The reference model is a covariate-only logistic regression with an
    intercept (no region effects), so region-level deviations land in the
    residuals.
    """
    design = np.hstack([np.ones((ds.N, 1)), ds.Q])
    coef = logistic_irls(design, ds.y_s, weights=ds.w_s)
    p_hat = expit(design @ coef)
    resid = np.add.reduceat(ds.w_s * (ds.y_s - p_hat), ds.ptr[:-1])
    var = np.add.reduceat(ds.w_s ** 2 * p_hat * (1.0 - p_hat), ds.ptr[:-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        zscores = np.where(var > 0, resid / np.sqrt(var), 0.0)
    return np.abs(zscores) > threshold_sd


# ---------------------------------------------------------------------------
# Oracle variants: two blocks fixed at truth, the third optimized
# ---------------------------------------------------------------------------

def _fit_oracle_alpha(inst: GeneratedInstance, cfg) -> ModelParams:
    base = ModelParams(alpha=np.zeros(inst.dataset.p), beta=inst.truth.beta,
                       gamma=inst.truth.gamma)
    alpha = _solver.alpha_step(inst.dataset, base, cfg)
    return ModelParams(alpha=alpha, beta=inst.truth.beta,
                       gamma=inst.truth.gamma)


def _fit_oracle_beta(inst: GeneratedInstance, lambda1_values, cfg
                     ) -> ModelParams:
    """Tune lambda1 by BIC*; beta iterated to convergence at each value."""
    ds = inst.dataset
    best = None
    beta = _solver.default_init(ds).beta
    for l1 in lambda1_values:
        pen = PenaltyConfig(lambda1=l1, lambda2=0.0)
        params = ModelParams(alpha=inst.truth.alpha, beta=beta,
                             gamma=inst.truth.gamma)
        for _ in range(200):
            new_beta = _solver.beta_step(ds, params, inst.graph, cfg, pen)
            moved = float(np.max(np.abs(new_beta - params.beta)))
            params = ModelParams(alpha=params.alpha, beta=new_beta,
                                 gamma=params.gamma)
            if moved <= cfg.outer_tol:
                break
        beta = params.beta  # warm start for the next lambda1
        df = _tuning._df_from_params(params, cfg.merge_tol)
        bic = _tuning._bic_from(ds, params, df)
        if best is None or bic < best[0]:
            best = (bic, params)
    return best[1]


def _fit_oracle_gamma(inst: GeneratedInstance, lambda2_values, cfg
                      ) -> ModelParams:
    """Tune lambda2 by BIC*; the gamma step is exact in one pass."""
    ds = inst.dataset
    best = None
    for l2 in lambda2_values:
        pen = PenaltyConfig(lambda1=0.0, lambda2=l2)
        base = ModelParams(alpha=inst.truth.alpha, beta=inst.truth.beta,
                           gamma=np.zeros(ds.K))
        gamma = _solver.gamma_step(ds, base, cfg, pen)
        params = ModelParams(alpha=inst.truth.alpha, beta=inst.truth.beta,
                             gamma=gamma)
        df = _tuning._df_from_params(params, cfg.merge_tol)
        bic = _tuning._bic_from(ds, params, df)
        if best is None or bic < best[0]:
            best = (bic, params)
    return best[1]


# ---------------------------------------------------------------------------
# Study harness
# ---------------------------------------------------------------------------

@dataclass
class MethodMetrics:
    """Mean and 95% normal-approximation interval per metric."""

    estimates: Dict[str, tuple]


@dataclass
class MetricsReport:
    scenario: str
    n_replications: int
    n_failures: int
    methods: Dict[str, MethodMetrics]


@dataclass
class StudyResult:
    reports: list
    long_rows: list  # (scenario, replicate, method, metric, value)


def _summarize(values) -> tuple:
    vals = [v for v in values if not math.isnan(v)]
    n = len(vals)
    if n == 0:
        return (math.nan, math.nan, math.nan)
    mean = math.fsum(vals) / n
    if n == 1:
        return (mean, math.nan, math.nan)
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    half = 1.96 * math.sqrt(var / n)
    return (mean, mean - half, mean + half)


def _run_replicate(scenario: Scenario, rep: int, grid: _tuning.TuningGrid,
                   cfg, methods, gamma_grid_size: int) -> dict:
    inst = generate(scenario, rep)
    truth_flags = inst.truth.gamma != 0
    out = {}
    for method in methods:
        if method == "proposed":
            tr = _tuning.tune(inst.dataset, grid, cfg, graph=inst.graph,
                              gamma_grid_size=gamma_grid_size)
            params = tr.best_fit.params
            flags = params.gamma != 0
        elif method == "oracle_alpha":
            params = _fit_oracle_alpha(inst, cfg)
            flags = truth_flags
        elif method == "oracle_beta":
            params = _fit_oracle_beta(inst, grid.lambda1_values, cfg)
            flags = truth_flags
        elif method == "oracle_gamma":
            params = _fit_oracle_gamma(inst, grid.lambda2_values, cfg)
            flags = params.gamma != 0
        elif method == "residual_baseline":
            flags = residual_baseline_detect(inst.dataset)
            out[method] = {"bias_alpha1": math.nan, "bias_alpha2": math.nan,
                           "rmse_p": math.nan, "rmse_beta": math.nan,
                           "mcc": mcc_from_flags(flags, truth_flags)}
            continue
        else:
            raise ValueError(f"unknown method {method!r}")
        metrics = evaluate_fit(inst, params)
        metrics["mcc"] = mcc_from_flags(flags, truth_flags)
        out[method] = metrics
    return out


def run_study(scenarios: Sequence[Scenario], grid: _tuning.TuningGrid = None,
              cfg: _solver.SolverConfig = None, *,
              methods: Sequence[str] = ALL_METHODS, threads: int = 1,
              gamma_grid_size: int = 201) -> StudyResult:
    """Run every scenario; aggregate per-method metrics across replications.

    Replication failures are recorded and excluded.  Aggregation uses
    compensated summation in replicate order, so results do not depend on
    the execution schedule.
    """
    grid = grid or _tuning.TuningGrid.default()
    cfg = cfg or _solver.SolverConfig()
    reports = []
    long_rows = []
    for sc in scenarios:
        reps = range(sc.replications)
        results: list = [None] * sc.replications

        def work(r, _sc=sc):
            return _run_replicate(_sc, r, grid, cfg, methods, gamma_grid_size)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                futures = {r: pool.submit(work, r) for r in reps}
            for r in reps:
                try:
                    results[r] = futures[r].result()
                except SpotmapError:
                    results[r] = None
        else:
            for r in reps:
                try:
                    results[r] = work(r)
                except SpotmapError:
                    results[r] = None

        failures = sum(1 for r in results if r is None)
        per_method: Dict[str, MethodMetrics] = {}
        for method in methods:
            est = {}
            for metric in METRICS:
                vals = [res[method][metric] for res in results if res is not None]
                est[metric] = _summarize(vals)
            per_method[method] = MethodMetrics(estimates=est)
        for r, res in enumerate(results):
            if res is None:
                continue
            for method in methods:
                for metric in METRICS:
                    long_rows.append((sc.name, r, method, metric,
                                      res[method][metric]))
        reports.append(MetricsReport(scenario=sc.name,
                                     n_replications=sc.replications,
                                     n_failures=failures, methods=per_method))
    return StudyResult(reports=reports, long_rows=long_rows)


def write_summary_csv(result: StudyResult, path):
    """Table-style summary: one row per scenario, method and metric."""
    lines = ["scenario,method,metric,estimate,ci_low,ci_high"]
    for rep in result.reports:
        for method, mm in rep.methods.items():
            for metric, (est, lo, hi) in mm.estimates.items():
                lines.append(f"{rep.scenario},{method},{metric},"
                             f"{_fmt(est)},{_fmt(lo)},{_fmt(hi)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_long_csv(result: StudyResult, path):
    """Per-replication values for trend plots."""
    lines = ["scenario,replicate,method,metric,value"]
    for sc, r, method, metric, value in result.long_rows:
        lines.append(f"{sc},{r},{method},{metric},{_fmt(value)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _fmt(v: float) -> str:
    return "" if (isinstance(v, float) and math.isnan(v)) else repr(float(v))
