"""Command-line interface: ingestion, fitting, tuning, simulation, bootstrap.

Commands write machine-readable outputs only (JSON for fits, CSV for
tables).  All randomness is seeded from ``--seed``; repeated runs with the
same inputs and seed produce byte-identical files.  On any error the exit
status is nonzero and partially written outputs are removed.
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import click
import numpy as np
from scipy.special import expit

from . import simbench, tuning, weighting
from .core import Dataset, FusionGraph, ModelParams, PenaltyConfig, build_fusion_graph
from .errors import DataError, SpotmapError
from .solver import SolverConfig, FitResult, fit as solve_fit
from .tuning import TuningGrid, TuningResult, write_tuning_csv

FIT_FORMAT_VERSION = "1"


@dataclass(frozen=True)
class GraphSpec:
    """How to build the fusion graph from region coordinates."""

    distance: str = "euclidean"
    neighbor_count: Optional[int] = None
    normalize: bool = True

    def __post_init__(self):
        if self.distance not in ("euclidean", "greatcircle"):
            raise DataError(f"unknown distance {self.distance!r}")
        if self.neighbor_count is not None and self.neighbor_count < 1:
            raise DataError("neighbor count must be at least 1")


@dataclass
class ReportRow:
    """Per-region rate decomposition and outlier flag."""

    region_id: str
    n_i: int
    crude_rate: float
    baseline_rate: float
    adjusted_rate: float
    gamma_hat: float
    outlier_flag: str  # above | below | none
    detection_frequency: Optional[float] = None


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty CSV")
        return reader.fieldnames, list(reader)


def ingest(subjects_csv, regions_csv, graph: GraphSpec = GraphSpec()):
    """Load and validate the data files; build the fusion graph.

    Regions CSV: ``region_id,coord1,coord2,x_*...``.  Subjects CSV:
    ``region_id,outcome,observed,weight,z_*...`` with the weight column
    optional (defaults to 1).
    """
    rfields, rrows = _read_csv(regions_csv)
    for col in ("region_id", "coord1", "coord2"):
        if col not in rfields:
            raise DataError(f"{regions_csv}: missing column {col!r}")
    x_names = [c for c in rfields if c.startswith("x_")]
    region_ids = [row["region_id"] for row in rrows]
    if len(set(region_ids)) != len(region_ids):
        dupes = sorted({r for r in region_ids if region_ids.count(r) > 1})
        raise DataError(f"{regions_csv}: duplicate region_id {dupes}")
    locations = np.array([[float(row["coord1"]), float(row["coord2"])]
                          for row in rrows])
    x = np.array([[float(row[c]) for c in x_names] for row in rrows]
                 ).reshape(len(rrows), len(x_names))
    index_of = {rid: i for i, rid in enumerate(region_ids)}

    sfields, srows = _read_csv(subjects_csv)
    for col in ("region_id", "outcome", "observed"):
        if col not in sfields:
            raise DataError(f"{subjects_csv}: missing column {col!r}")
    z_names = [c for c in sfields if c.startswith("z_")]
    has_weight = "weight" in sfields
    n = len(srows)
    region_index = np.empty(n, dtype=np.int64)
    outcome = np.empty(n)
    observed = np.empty(n)
    weight = np.ones(n)
    z = np.empty((n, len(z_names)))
    for j, row in enumerate(srows):
        rid = row["region_id"]
        if rid not in index_of:
            raise DataError(f"{subjects_csv}: row {j + 2}: unknown region_id {rid!r}")
        region_index[j] = index_of[rid]
        outcome[j] = float(row["outcome"])
        observed[j] = float(row["observed"])
        if has_weight and row["weight"] not in ("", None):
            weight[j] = float(row["weight"])
        for m, c in enumerate(z_names):
            z[j, m] = float(row[c])

    ds = Dataset.from_arrays(
        region_ids=region_ids, locations=locations, region_covariates=x,
        region_index=region_index, outcome=outcome, observed=observed,
        weight=weight, subject_covariates=z, z_names=z_names, x_names=x_names)
    ds.validate_rates()
    g = build_fusion_graph(locations, neighbor_count=graph.neighbor_count,
                           distance=graph.distance, normalize=graph.normalize,
                           region_ids=region_ids)
    return ds, g


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def build_report(ds: Dataset, params: ModelParams, frequencies=None):
    """Crude/baseline/adjusted rates, sparse effect and flag per region."""
    crude = ds.crude_rates()
    baseline = expit(params.beta)
    eta_adj = (ds.Q @ params.alpha if ds.p else np.zeros(ds.N))
    eta_adj = eta_adj + params.beta[ds.reg_s]
    p_adj = expit(eta_adj)
    num = np.add.reduceat(ds.w_s * p_adj, ds.ptr[:-1])
    adjusted = num / ds.w_i_dot
    rows = []
    for i, rid in enumerate(ds.region_ids):
        g = float(params.gamma[i])
        flag = "above" if g > 0 else ("below" if g < 0 else "none")
        rows.append(ReportRow(
            region_id=rid, n_i=int(ds.n_i[i]), crude_rate=float(crude[i]),
            baseline_rate=float(baseline[i]), adjusted_rate=float(adjusted[i]),
            gamma_hat=g, outlier_flag=flag,
            detection_frequency=(None if frequencies is None
                                 else float(frequencies[i]))))
    return rows


def write_report_csv(rows, path):
    header = ("region_id,n_i,crude_rate,baseline_rate,adjusted_rate,"
              "gamma_hat,outlier_flag,detection_frequency")
    lines = [header]
    for r in rows:
        freq = "" if r.detection_frequency is None else repr(r.detection_frequency)
        lines.append(f"{r.region_id},{r.n_i},{r.crude_rate!r},{r.baseline_rate!r},"
                     f"{r.adjusted_rate!r},{r.gamma_hat!r},{r.outlier_flag},{freq}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report_csv(path):
    _, rows = _read_csv(path)
    out = []
    for row in rows:
        freq = row["detection_frequency"]
        out.append(ReportRow(
            region_id=row["region_id"], n_i=int(row["n_i"]),
            crude_rate=float(row["crude_rate"]),
            baseline_rate=float(row["baseline_rate"]),
            adjusted_rate=float(row["adjusted_rate"]),
            gamma_hat=float(row["gamma_hat"]),
            outlier_flag=row["outlier_flag"],
            detection_frequency=(None if freq == "" else float(freq))))
    return out


# ---------------------------------------------------------------------------
# Fit JSON
# ---------------------------------------------------------------------------

def write_fit_json(path, result: FitResult, lambda1, lambda2,
                   neighbor_count, seed):
    doc = {
        "format_version": FIT_FORMAT_VERSION,
        "alpha": result.params.alpha.tolist(),
        "beta": result.params.beta.tolist(),
        "gamma": result.params.gamma.tolist(),
        "objective_trace": result.objective_trace.tolist(),
        "converged": result.converged,
        "outer_iterations": result.outer_iterations,
        "df": result.df,
        "bic": result.bic,
        "lambda1": lambda1,
        "lambda2": lambda2,
        "neighbor_count": neighbor_count,
        "seed": seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_fit_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------

def bootstrap_detection(ds: Dataset, graph: FusionGraph, pen: PenaltyConfig,
                        b_replicates: int, seed: int,
                        cfg: SolverConfig = None, threads: int = 1):
    """Stratified bootstrap refits at fixed penalties.

    Subjects are resampled with replacement within each region (region sizes
    preserved); regions violating the two-class assumption are redrawn up to
    100 times.  Returns per-region detection frequencies and percentile
    intervals for alpha, baseline rates and adjusted rates.
    """
    cfg = cfg or SolverConfig()
    base = solve_fit(ds, graph, pen, cfg)

    def one(b: int):
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=seed, spawn_key=(b,))))
        idx = np.empty(ds.N, dtype=np.int64)
        for i in range(ds.K):
            members = np.where(ds.region_index == i)[0]
            for attempt in range(101):
                take = members[rng.integers(0, members.size, members.size)]
                yy = ds.y[take]
                ww = (ds.weight * ds.observed)[take]
                s1 = float(np.dot(ww, yy))
                stot = float(np.sum(ww))
                if stot > 0 and 0.0 < s1 < stot:
                    break
                if attempt == 100:
                    raise DataError(
                        f"bootstrap region {ds.region_ids[i]} kept violating "
                        "the (0,1) outcome-mean assumption")
            idx[members] = take
        res_ds = Dataset.from_arrays(
            region_ids=ds.region_ids, locations=ds.locations,
            region_covariates=ds.x, region_index=ds.region_index,
            outcome=ds.y[idx], observed=ds.observed[idx],
            weight=ds.weight[idx], subject_covariates=ds.z[idx],
            z_names=ds.z_names, x_names=ds.x_names)
        res = solve_fit(res_ds, graph, pen, cfg, init=base.params)
        eta_adj = (res_ds.Q @ res.params.alpha if res_ds.p else np.zeros(res_ds.N))
        eta_adj = eta_adj + res.params.beta[res_ds.reg_s]
        adj = (np.add.reduceat(res_ds.w_s * expit(eta_adj), res_ds.ptr[:-1])
               / res_ds.w_i_dot)
        return (res.params.gamma != 0, res.params.alpha,
                expit(res.params.beta), adj)

    results = [None] * b_replicates
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = {b: pool.submit(one, b) for b in range(b_replicates)}
        for b in range(b_replicates):
            results[b] = futs[b].result()
    else:
        for b in range(b_replicates):
            results[b] = one(b)

    flags = np.array([r[0] for r in results], dtype=float)
    alphas = np.array([r[1] for r in results])
    baselines = np.array([r[2] for r in results])
    adjusted = np.array([r[3] for r in results])
    freq = flags.mean(axis=0)
    pct = lambda arr: (np.percentile(arr, 2.5, axis=0),
                       np.percentile(arr, 97.5, axis=0))
    return {"base_fit": base, "frequency": freq,
            "alpha": (alphas.mean(axis=0),) + pct(alphas),
            "baseline": (baselines.mean(axis=0),) + pct(baselines),
            "adjusted": (adjusted.mean(axis=0),) + pct(adjusted)}


def write_bootstrap_csvs(ds: Dataset, boot: dict, region_path, alpha_path):
    base = boot["base_fit"]
    lines = ["region_id,gamma_hat,detection_frequency,"
             "baseline_rate,baseline_lo,baseline_hi,"
             "adjusted_rate,adjusted_lo,adjusted_hi"]
    b_mean, b_lo, b_hi = boot["baseline"]
    a_mean, a_lo, a_hi = boot["adjusted"]
    base_baseline = expit(base.params.beta)
    eta_adj = (ds.Q @ base.params.alpha if ds.p else np.zeros(ds.N))
    eta_adj = eta_adj + base.params.beta[ds.reg_s]
    base_adj = (np.add.reduceat(ds.w_s * expit(eta_adj), ds.ptr[:-1])
                / ds.w_i_dot)
    for i, rid in enumerate(ds.region_ids):
        lines.append(
            f"{rid},{float(base.params.gamma[i])!r},{float(boot['frequency'][i])!r},"
            f"{float(base_baseline[i])!r},{float(b_lo[i])!r},{float(b_hi[i])!r},"
            f"{float(base_adj[i])!r},{float(a_lo[i])!r},{float(a_hi[i])!r}")
    with open(region_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    _, lo, hi = boot["alpha"]
    lines = ["coefficient,estimate,ci_low,ci_high"]
    for m in range(base.params.alpha.shape[0]):
        lines.append(f"alpha_{m},{float(base.params.alpha[m])!r},"
                     f"{float(lo[m])!r},{float(hi[m])!r}")
    with open(alpha_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Config file (flat key-value, INI style without sections)
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    """Parse `key = value` lines; '#' and ';' start comments."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].split(";", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key = value")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def _cfg_from(config: dict) -> SolverConfig:
    kwargs = {}
    for name, conv in (("outer_tol", float), ("max_outer_iter", int),
                       ("alpha_newton_tol", float), ("line_search_tol", float),
                       ("fuse_tol", float), ("fuse_max_iter", int),
                       ("merge_tol", float)):
        if name in config:
            kwargs[name] = conv(config[name])
    return SolverConfig(**kwargs)


def _floats_list(text: str):
    return [float(tok) for tok in text.replace(",", " ").split()]


def _grid_from(config: dict, l1_opt, l2_opt, neighbor_counts) -> TuningGrid:
    l1 = (_floats_list(l1_opt) if l1_opt
          else _floats_list(config["lambda1_values"])
          if "lambda1_values" in config else tuning.default_lambda1_values())
    l2 = (_floats_list(l2_opt) if l2_opt
          else _floats_list(config["lambda2_values"])
          if "lambda2_values" in config else tuning.default_lambda2_values())
    if neighbor_counts:
        levels = [int(v) for v in _floats_list(neighbor_counts)]
    elif "neighbor_counts" in config:
        levels = [int(v) for v in _floats_list(config["neighbor_counts"])]
    else:
        levels = None
    return TuningGrid(sorted(l1, reverse=True), sorted(l2, reverse=True), levels)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _common_options(fn):
    fn = click.option("--seed", type=int, default=0, show_default=True,
                      help="Seed for all randomness.")(fn)
    fn = click.option("--threads", type=int, default=1, show_default=True,
                      help="Worker threads for independent replications.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="Flat key=value config file.")(fn)
    return fn


class _Outputs:
    """Tracks written files so failures can remove partial outputs."""

    def __init__(self):
        self.paths = []

    def declare(self, *paths):
        self.paths.extend(p for p in paths if p)

    def cleanup(self):
        for p in self.paths:
            if p and os.path.exists(p):
                os.remove(p)


def _run_guarded(outputs: _Outputs, fn):
    try:
        fn()
    except (SpotmapError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        outputs.cleanup()
        mod = type(exc).__module__.split(".")[-1]
        click.echo(f"error [{mod}.{type(exc).__name__}]: {exc}", err=True)
        sys.exit(1)


@click.group()
def main():
    """Disease mapping with simultaneous hot-spot detection."""


@main.command("fit")
@click.option("--subjects", required=True, type=click.Path(exists=True))
@click.option("--regions", required=True, type=click.Path(exists=True))
@click.option("--lambda1", type=float, required=True)
@click.option("--lambda2", type=float, required=True)
@click.option("--neighbor-count", type=int, default=None)
@click.option("--distance", type=click.Choice(["euclidean", "greatcircle"]),
              default="euclidean", show_default=True)
@click.option("--out", "out_json", required=True, type=click.Path())
@click.option("--report", "report_csv", type=click.Path(), default=None)
@_common_options
def cmd_fit(subjects, regions, lambda1, lambda2, neighbor_count, distance,
            out_json, report_csv, seed, threads, config_path):
    """Fit the model at fixed penalties; write fit JSON and a report CSV."""
    outputs = _Outputs()

    def run():
        config = load_config(config_path) if config_path else {}
        cfg = _cfg_from(config)
        ds, graph = ingest(subjects, regions,
                           GraphSpec(distance=distance,
                                     neighbor_count=neighbor_count))
        pen = PenaltyConfig(lambda1=lambda1, lambda2=lambda2)
        result = solve_fit(ds, graph, pen, cfg)
        outputs.declare(out_json, report_csv)
        write_fit_json(out_json, result, lambda1, lambda2, neighbor_count, seed)
        if report_csv:
            write_report_csv(build_report(ds, result.params), report_csv)

    _run_guarded(outputs, run)


@main.command("tune")
@click.option("--subjects", required=True, type=click.Path(exists=True))
@click.option("--regions", required=True, type=click.Path(exists=True))
@click.option("--lambda1-values", default=None,
              help="Space/comma separated; default powers of 2 in [2^-2, 2^12].")
@click.option("--lambda2-values", default=None,
              help="Space/comma separated; default powers of 2 in [2^-5, 2^2].")
@click.option("--neighbor-counts", default=None,
              help="Graph truncation levels to search, e.g. '3 5 7'.")
@click.option("--distance", type=click.Choice(["euclidean", "greatcircle"]),
              default="euclidean", show_default=True)
@click.option("--table", "table_csv", required=True, type=click.Path())
@click.option("--out", "out_json", type=click.Path(), default=None)
@click.option("--report", "report_csv", type=click.Path(), default=None)
@_common_options
def cmd_tune(subjects, regions, lambda1_values, lambda2_values,
             neighbor_counts, distance, table_csv, out_json, report_csv,
             seed, threads, config_path):
    """BIC* grid search; write the table and optionally the best fit."""
    outputs = _Outputs()

    def run():
        config = load_config(config_path) if config_path else {}
        cfg = _cfg_from(config)
        grid = _grid_from(config, lambda1_values, lambda2_values,
                          neighbor_counts)
        spec = GraphSpec(distance=distance)
        ds, graph = ingest(subjects, regions, spec)
        result = tuning.tune(ds, grid, cfg, graph=graph, distance=distance)
        outputs.declare(table_csv, out_json, report_csv)
        write_tuning_csv(result, table_csv)
        if out_json:
            write_fit_json(out_json, result.best_fit, result.best_lambda1,
                           result.best_lambda2, result.best_neighbor_count,
                           seed)
        if report_csv:
            write_report_csv(build_report(ds, result.best_fit.params),
                             report_csv)

    _run_guarded(outputs, run)


_SCENARIO_RE = re.compile(r"^K(\d+)n(\d+)(?:o(\d+))?$")


def parse_scenario(text: str, reps: int, seed: int) -> simbench.Scenario:
    m = _SCENARIO_RE.match(text)
    if not m:
        raise DataError(f"bad scenario {text!r}; expected e.g. K20n50 or K40n100o10")
    frac = int(m.group(3) or 0) / 100.0
    return simbench.Scenario(n_regions=int(m.group(1)),
                             n_per_region=int(m.group(2)),
                             outlier_fraction=frac, replications=reps,
                             seed=seed)


@main.command("simulate")
@click.option("--scenario", "scenario_names", multiple=True, required=True,
              help="Scenario name like K20n50 or K40n100o15 (repeatable).")
@click.option("--reps", type=int, default=100, show_default=True)
@click.option("--methods", default=",".join(simbench.ALL_METHODS),
              show_default=True)
@click.option("--lambda1-values", default=None)
@click.option("--lambda2-values", default=None)
@click.option("--out-dir", required=True, type=click.Path())
@_common_options
def cmd_simulate(scenario_names, reps, methods, lambda1_values,
                 lambda2_values, out_dir, seed, threads, config_path):
    """Run the simulation study; write summary and long-format CSVs."""
    outputs = _Outputs()

    def run():
        config = load_config(config_path) if config_path else {}
        cfg = _cfg_from(config)
        grid = _grid_from(config, lambda1_values, lambda2_values, None)
        scenarios = [parse_scenario(s, reps, seed) for s in scenario_names]
        method_list = tuple(m.strip() for m in methods.split(",") if m.strip())
        os.makedirs(out_dir, exist_ok=True)
        result = simbench.run_study(scenarios, grid, cfg, methods=method_list,
                                    threads=threads)
        summary = os.path.join(out_dir, "summary.csv")
        long = os.path.join(out_dir, "long.csv")
        outputs.declare(summary, long)
        simbench.write_summary_csv(result, summary)
        simbench.write_long_csv(result, long)

    _run_guarded(outputs, run)


@main.command("bootstrap")
@click.option("--subjects", required=True, type=click.Path(exists=True))
@click.option("--regions", required=True, type=click.Path(exists=True))
@click.option("--lambda1", type=float, required=True)
@click.option("--lambda2", type=float, required=True)
@click.option("--neighbor-count", type=int, default=None)
@click.option("--distance", type=click.Choice(["euclidean", "greatcircle"]),
              default="euclidean", show_default=True)
@click.option("--replicates", "-B", type=int, default=1000, show_default=True)
@click.option("--out", "region_csv", required=True, type=click.Path())
@click.option("--alpha-out", "alpha_csv", required=True, type=click.Path())
@_common_options
def cmd_bootstrap(subjects, regions, lambda1, lambda2, neighbor_count,
                  distance, replicates, region_csv, alpha_csv, seed, threads,
                  config_path):
    """Detection frequencies and percentile intervals at fixed penalties."""
    outputs = _Outputs()

    def run():
        config = load_config(config_path) if config_path else {}
        cfg = _cfg_from(config)
        ds, graph = ingest(subjects, regions,
                           GraphSpec(distance=distance,
                                     neighbor_count=neighbor_count))
        pen = PenaltyConfig(lambda1=lambda1, lambda2=lambda2)
        boot = bootstrap_detection(ds, graph, pen, replicates, seed, cfg,
                                   threads=threads)
        outputs.declare(region_csv, alpha_csv)
        write_bootstrap_csvs(ds, boot, region_csv, alpha_csv)

    _run_guarded(outputs, run)


@main.command("weights")
@click.option("--subjects", required=True, type=click.Path(exists=True))
@click.option("--regions", required=True, type=click.Path(exists=True))
@click.option("--targets", required=True, type=click.Path(exists=True))
@click.option("--cap-quantile", type=float, default=0.99, show_default=True)
@click.option("--out", "weights_csv", required=True, type=click.Path())
@click.option("--out-subjects", "subjects_out", type=click.Path(), default=None,
              help="Subjects CSV with the final weights filled in.")
@_common_options
def cmd_weights(subjects, regions, targets, cap_quantile, weights_csv,
                subjects_out, seed, threads, config_path):
    """Two-step weighting; write the per-subject weight report."""
    outputs = _Outputs()

    def run():
        ds, _ = ingest(subjects, regions)
        strata = weighting.StrataTargets.from_csv(targets)
        new_ds, report = weighting.build_final_weights(ds, strata,
                                                       cap_quantile)
        outputs.declare(weights_csv, subjects_out)
        report.write_csv(weights_csv)
        if subjects_out:
            _write_subjects_csv(new_ds, subjects_out)

    _run_guarded(outputs, run)


def _write_subjects_csv(ds: Dataset, path):
    z_names = ds.z_names or [f"z_{m}" for m in range(ds.p_z)]
    header = "region_id,outcome,observed,weight," + ",".join(z_names)
    lines = [header.rstrip(",")]
    for j in range(ds.N):
        zvals = ",".join(repr(float(v)) for v in ds.z[j])
        line = (f"{ds.region_ids[ds.region_index[j]]},{int(ds.y[j])},"
                f"{int(ds.observed[j])},{ds.weight[j]!r}")
        if zvals:
            line += "," + zvals
        lines.append(line)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


@main.command("report")
@click.option("--subjects", required=True, type=click.Path(exists=True))
@click.option("--regions", required=True, type=click.Path(exists=True))
@click.option("--fit", "fit_json", required=True, type=click.Path(exists=True))
@click.option("--out", "report_csv", required=True, type=click.Path())
@_common_options
def cmd_report(subjects, regions, fit_json, report_csv, seed, threads,
               config_path):
    """Rebuild the per-region report from a stored fit."""
    outputs = _Outputs()

    def run():
        ds, _ = ingest(subjects, regions)
        doc = read_fit_json(fit_json)
        params = ModelParams(alpha=np.asarray(doc["alpha"]),
                             beta=np.asarray(doc["beta"]),
                             gamma=np.asarray(doc["gamma"]))
        outputs.declare(report_csv)
        write_report_csv(build_report(ds, params), report_csv)

    _run_guarded(outputs, run)


if __name__ == "__main__":
    main()
