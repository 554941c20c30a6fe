"""Domain types and the weighted penalized objective.

The model expresses each subject's log-odds as a covariate part plus two
confounded region offsets: a smooth effect (regularized by an edge-weighted
total-variation penalty on a fusion graph) and a sparse effect (regularized
by a hard-thresholding penalty scaled by the region's observed weight mass).
Identifiability between the two offsets comes from the penalties alone, so
nothing here centers or constrains them.

All evaluations are pure functions of their inputs and safe for concurrent
read-only use.  The Bernoulli loss is the only family shipped; it is kept
behind the small kernel interface in :mod:`spotmap.backend` so another convex
family could be swapped in without touching the solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .backend import kernels
from .errors import DataError, GraphError

EARTH_RADIUS_KM = 6371.0


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass
class SubjectRecord:
    """One subject: outcome, observation indicator, weight and covariates."""

    region_index: int
    outcome: int
    observed: int = 1
    weight: float = 1.0
    covariates: Sequence[float] = ()


@dataclass
class RegionRecord:
    """One region: opaque id, coordinate vector and region-level covariates."""

    region_id: str
    location: Sequence[float] = ()
    covariates: Sequence[float] = ()


@dataclass
class ModelParams:
    """Coefficient vector plus the two per-region effect vectors."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).ravel()
        self.beta = np.asarray(self.beta, dtype=float).ravel()
        self.gamma = np.asarray(self.gamma, dtype=float).ravel()
        for name, arr in (("alpha", self.alpha), ("beta", self.beta),
                          ("gamma", self.gamma)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        if self.beta.shape != self.gamma.shape:
            raise ValueError("beta and gamma must have equal length")

    def copy(self) -> "ModelParams":
        return ModelParams(self.alpha.copy(), self.beta.copy(), self.gamma.copy())


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty strengths and the gamma-step grid size."""

    lambda1: float = 0.0
    lambda2: float = 0.0
    gamma_grid_size: int = 201

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("penalty strengths must be nonnegative")
        if self.gamma_grid_size < 3:
            raise ValueError("gamma_grid_size must be at least 3")


# ---------------------------------------------------------------------------
# Fusion graph
# ---------------------------------------------------------------------------

class FusionGraph:
    """Sparse symmetric edge list (i1 < i2, rho >= 0) with normalized weights.

    Zero-weight edges are dropped; with ``normalize=True`` (the default) the
    weights are rescaled so the largest equals 1.
    """

    def __init__(self, edges: Iterable[tuple] = (), *, normalize: bool = True):
        src, dst, rho = [], [], []
        seen = set()
        for i1, i2, r in edges:
            i1, i2 = int(i1), int(i2)
            r = float(r)
            if i1 == i2:
                raise GraphError(f"self-edge at region index {i1}")
            if r < 0:
                raise GraphError(f"negative fusion weight on edge ({i1}, {i2})")
            if i1 > i2:
                i1, i2 = i2, i1
            if (i1, i2) in seen:
                raise GraphError(f"duplicate edge ({i1}, {i2})")
            seen.add((i1, i2))
            if r == 0.0:
                continue
            src.append(i1)
            dst.append(i2)
            rho.append(r)
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.rho = np.asarray(rho, dtype=float)
        if normalize and self.rho.size:
            self.rho = self.rho / self.rho.max()

    @classmethod
    def from_arrays(cls, src, dst, rho, *, normalize: bool = True) -> "FusionGraph":
        return cls(zip(np.asarray(src), np.asarray(dst), np.asarray(rho)),
                   normalize=normalize)

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    def edge_list(self):
        return list(zip(self.src.tolist(), self.dst.tolist(), self.rho.tolist()))

    def max_index(self) -> int:
        if self.n_edges == 0:
            return -1
        return int(max(self.src.max(), self.dst.max()))

    def permuted(self, perm) -> "FusionGraph":
        """Graph after relabeling node i as perm[i]."""
        perm = np.asarray(perm, dtype=np.int64)
        return FusionGraph.from_arrays(perm[self.src], perm[self.dst],
                                       self.rho, normalize=False)


def haversine_km(lon1, lat1, lon2, lat2) -> float:
    """Great-circle distance between (lon, lat) points in degrees."""
    lon1, lat1, lon2, lat2 = map(np.radians, (lon1, lat1, lon2, lat2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(h))


def _pairwise_distances(locations: np.ndarray, distance: str) -> np.ndarray:
    if distance == "euclidean":
        diff = locations[:, None, :] - locations[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=2))
    if distance == "greatcircle":
        if locations.shape[1] != 2:
            raise GraphError("greatcircle distance needs (longitude, latitude)")
        lon = locations[:, 0]
        lat = locations[:, 1]
        return haversine_km(lon[:, None], lat[:, None], lon[None, :], lat[None, :])
    raise GraphError(f"unknown distance {distance!r}")


def build_fusion_graph(locations, *, neighbor_count: Optional[int] = None,
                       distance: str = "euclidean", normalize: bool = True,
                       region_ids: Optional[Sequence[str]] = None) -> FusionGraph:
    """Inverse-distance fusion graph, optionally truncated to the strongest edges.

    Every pair gets weight 1/d.  With ``neighbor_count=L`` each node retains
    its L largest weights and an edge survives when either endpoint retains
    it; the surviving weights are rescaled so the maximum is 1.
    """
    locations = np.atleast_2d(np.asarray(locations, dtype=float))
    if locations.shape[0] > 1 and locations.shape[1] == locations.shape[0] == 1:
        locations = locations.T
    k = locations.shape[0]
    if k < 2:
        return FusionGraph([])
    d = _pairwise_distances(locations, distance)
    ii, jj = np.triu_indices(k, 1)
    zero = d[ii, jj] == 0.0
    if np.any(zero):
        names = region_ids if region_ids is not None else list(range(k))
        pairs = [f"({names[a]}, {names[b]})"
                 for a, b in zip(ii[zero], jj[zero])]
        raise GraphError("coincident locations (distance 0): " + ", ".join(pairs))
    rho = np.zeros_like(d)
    rho[ii, jj] = 1.0 / d[ii, jj]
    rho[jj, ii] = rho[ii, jj]

    if neighbor_count is None:
        keep = np.ones((k, k), dtype=bool)
    else:
        if neighbor_count < 1:
            raise GraphError("neighbor_count must be at least 1")
        keep = np.zeros((k, k), dtype=bool)
        for i in range(k):
            others = np.delete(np.arange(k), i)
            # stable order: strongest first, index breaks ties deterministically
            order = others[np.lexsort((others, -rho[i, others]))]
            for j in order[:neighbor_count]:
                keep[i, j] = True
                keep[j, i] = True
    edges = [(int(a), int(b), float(rho[a, b]))
             for a, b in zip(ii, jj) if keep[a, b]]
    return FusionGraph(edges, normalize=normalize)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

class Dataset:
    """Subjects grouped by region, validated and pre-arranged for the solver.

    Subjects are kept in input order; a region-sorted view (``y_s``, ``w_s``,
    ``Q``, CSR offsets ``ptr``) is what the likelihood code consumes.  The
    effective weight ``w_s`` is weight * I(observed), so unobserved subjects
    never enter any sum.

    Raises :class:`DataError` at construction when any region's observed,
    weighted outcome mean is not strictly inside (0, 1); the per-region
    optimization steps need both outcome classes present everywhere.
    """

    def __init__(self, regions: Sequence[RegionRecord],
                 subjects: Sequence[SubjectRecord]):
        region_ids = [r.region_id for r in regions]
        locations = np.asarray([np.atleast_1d(np.asarray(r.location, dtype=float))
                                for r in regions], dtype=float)
        if locations.ndim == 1:
            locations = locations.reshape(len(regions), -1)
        x = np.asarray([np.atleast_1d(np.asarray(r.covariates, dtype=float))
                        for r in regions], dtype=float)
        if x.ndim == 1:
            x = x.reshape(len(regions), -1)
        region_index = np.asarray([s.region_index for s in subjects], dtype=np.int64)
        outcome = np.asarray([s.outcome for s in subjects], dtype=float)
        observed = np.asarray([s.observed for s in subjects], dtype=float)
        weight = np.asarray([s.weight for s in subjects], dtype=float)
        z = np.asarray([np.atleast_1d(np.asarray(s.covariates, dtype=float))
                        for s in subjects], dtype=float)
        if z.ndim == 1:
            z = z.reshape(len(subjects), -1)
        self._init_arrays(region_ids, locations, x, region_index, outcome,
                          observed, weight, z, None, None)

    @classmethod
    def from_arrays(cls, *, region_ids, locations, region_covariates=None,
                    region_index, outcome, observed=None, weight=None,
                    subject_covariates=None, z_names=None, x_names=None
                    ) -> "Dataset":
        """Array-based constructor (fast path for generators and ingestion)."""
        self = cls.__new__(cls)
        region_ids = list(region_ids)
        k = len(region_ids)
        locations = np.atleast_2d(np.asarray(locations, dtype=float))
        if locations.shape[0] != k:
            locations = locations.reshape(k, -1)
        region_index = np.asarray(region_index, dtype=np.int64)
        n = region_index.shape[0]
        x = (np.zeros((k, 0)) if region_covariates is None
             else np.asarray(region_covariates, dtype=float).reshape(k, -1))
        z = (np.zeros((n, 0)) if subject_covariates is None
             else np.asarray(subject_covariates, dtype=float).reshape(n, -1))
        outcome = np.asarray(outcome, dtype=float)
        observed = (np.ones(n) if observed is None
                    else np.asarray(observed, dtype=float))
        weight = (np.ones(n) if weight is None
                  else np.asarray(weight, dtype=float))
        self._init_arrays(region_ids, locations, x, region_index, outcome,
                          observed, weight, z, z_names, x_names)
        return self

    def _init_arrays(self, region_ids, locations, x, region_index, outcome,
                     observed, weight, z, z_names, x_names):
        if len(set(region_ids)) != len(region_ids):
            dupes = sorted({r for r in region_ids if region_ids.count(r) > 1})
            raise DataError(f"duplicate region ids: {dupes}")
        k = len(region_ids)
        n = region_index.shape[0]
        if n == 0:
            raise DataError("dataset has no subjects")
        if region_index.min(initial=0) < 0 or region_index.max(initial=-1) >= k:
            bad = np.where((region_index < 0) | (region_index >= k))[0]
            raise DataError(f"subject region_index out of range at rows {bad[:10].tolist()}")
        if not np.all(np.isin(outcome, (0.0, 1.0))):
            raise DataError("outcomes must be 0 or 1")
        if not np.all(np.isin(observed, (0.0, 1.0))):
            raise DataError("observation indicators must be 0 or 1")
        if np.any(weight <= 0) or not np.all(np.isfinite(weight)):
            raise DataError("subject weights must be positive and finite")
        if z_names is not None and len(z_names) != z.shape[1]:
            raise DataError("z_names length does not match subject covariates")
        if x_names is not None and len(x_names) != x.shape[1]:
            raise DataError("x_names length does not match region covariates")

        self.region_ids = list(region_ids)
        self.locations = locations
        self.x = x
        self.region_index = region_index
        self.y = outcome
        self.observed = observed
        self.weight = weight
        self.z = z
        self.z_names = list(z_names) if z_names is not None else None
        self.x_names = list(x_names) if x_names is not None else None

        self.K = k
        self.N = n
        self.p_z = z.shape[1]
        self.p_x = x.shape[1]
        self.p = self.p_z + self.p_x

        # region-sorted view
        order = np.argsort(region_index, kind="stable")
        self.order = order
        self.reg_s = region_index[order]
        self.y_s = np.ascontiguousarray(outcome[order])
        w_eff = weight * observed
        self.w_s = np.ascontiguousarray(w_eff[order])
        z_s = z[order]
        self.Q = np.ascontiguousarray(np.hstack([z_s, x[self.reg_s]]))
        counts = np.bincount(region_index, minlength=k)
        self.n_i = counts
        self.ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

        if np.any(counts == 0):
            empty = [region_ids[i] for i in np.where(counts == 0)[0]]
            raise DataError(f"regions with no subjects: {empty}")
        self.w_i_dot = np.add.reduceat(self.w_s, self.ptr[:-1])
        self.w_dd = float(self.w_i_dot.sum())
        if self.w_dd <= 0:
            raise DataError("total observed weight is zero")
        wy = np.add.reduceat(self.w_s * self.y_s, self.ptr[:-1])
        with np.errstate(invalid="ignore", divide="ignore"):
            self._crude = np.where(self.w_i_dot > 0, wy / self.w_i_dot, -1.0)

    def validate_rates(self):
        """Reject datasets whose per-region observed outcome mean is degenerate.

        Every solver step needs the observed, weighted outcome mean strictly
        inside (0, 1) for every region; this is checked at load time and at
        fit entry, with a diagnostic naming the offending regions.
        """
        bad = (self._crude <= 0.0) | (self._crude >= 1.0)
        if np.any(bad):
            names = [self.region_ids[i] for i in np.where(bad)[0]]
            raise DataError(
                "observed weighted outcome mean must lie strictly in (0, 1); "
                f"offending regions: {names}")

    def crude_rates(self) -> np.ndarray:
        """Observed-and-weighted outcome mean per region."""
        return self._crude.copy()

    def with_weights(self, new_weight) -> "Dataset":
        """Same data with replaced subject weights (input order)."""
        return Dataset.from_arrays(
            region_ids=self.region_ids, locations=self.locations,
            region_covariates=self.x, region_index=self.region_index,
            outcome=self.y, observed=self.observed,
            weight=np.asarray(new_weight, dtype=float),
            subject_covariates=self.z, z_names=self.z_names,
            x_names=self.x_names)

    def covariate_column(self, name: str) -> np.ndarray:
        """Per-subject values of a named subject or region covariate."""
        if self.z_names is not None and name in self.z_names:
            return self.z[:, self.z_names.index(name)]
        if self.x_names is not None and name in self.x_names:
            return self.x[self.region_index, self.x_names.index(name)]
        raise DataError(f"unknown covariate {name!r}")


# ---------------------------------------------------------------------------
# Objective pieces
# ---------------------------------------------------------------------------

def _check_dims(ds: Dataset, p: ModelParams):
    if p.alpha.shape[0] != ds.p:
        raise ValueError(
            f"alpha has length {p.alpha.shape[0]}, dataset covariates need {ds.p}")
    if p.beta.shape[0] != ds.K or p.gamma.shape[0] != ds.K:
        raise ValueError("beta/gamma length must equal the number of regions")


def linear_predictor(ds: Dataset, p: ModelParams) -> np.ndarray:
    """Per-subject linear predictor in region-sorted order."""
    _check_dims(ds, p)
    eta = (p.beta + p.gamma)[ds.reg_s]
    if ds.p:
        eta = eta + ds.Q @ p.alpha
    return eta


def neg_loglik(ds: Dataset, p: ModelParams) -> float:
    """Normalized, weighted negative Bernoulli log-likelihood."""
    eta = linear_predictor(ds, p)
    return kernels.loss_sum(eta, ds.y_s, ds.w_s) / ds.w_dd


def neg_loglik_grad(ds: Dataset, p: ModelParams):
    """Analytic gradient of :func:`neg_loglik` over (alpha, beta, gamma)."""
    eta = linear_predictor(ds, p)
    mu = expit(eta)
    wd = ds.w_s * (mu - ds.y_s)
    g_alpha = (ds.Q.T @ wd) / ds.w_dd if ds.p else np.zeros(0)
    g_region = np.add.reduceat(wd, ds.ptr[:-1]) / ds.w_dd
    return g_alpha, g_region.copy(), g_region.copy()


def fusion_penalty(beta, g: FusionGraph, lambda1: float) -> float:
    """lambda1 * sum over edges of rho * |beta_i1 - beta_i2|."""
    beta = np.asarray(beta, dtype=float)
    if g.n_edges == 0 or lambda1 == 0.0:
        if g.max_index() >= beta.shape[0]:
            raise GraphError("edge index out of range for beta")
        return 0.0
    if g.max_index() >= beta.shape[0]:
        raise GraphError("edge index out of range for beta")
    return float(lambda1 * np.dot(g.rho, np.abs(beta[g.src] - beta[g.dst])))


def hard_penalty(t, lam: float):
    """Hard-thresholding penalty: lam|t| - t^2/2 for |t| < lam, else lam^2/2."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    t = np.asarray(t, dtype=float)
    a = np.abs(t)
    out = np.where(a < lam, lam * a - 0.5 * t * t, 0.5 * lam * lam)
    return float(out) if out.ndim == 0 else out


def sparse_penalty(ds: Dataset, gamma, lambda2: float) -> float:
    """Weighted sparse-effect penalty: sum_i w_i. * q(gamma_i) / w_.."""
    q = hard_penalty(np.asarray(gamma, dtype=float), lambda2)
    return float(np.dot(ds.w_i_dot, q) / ds.w_dd)


def objective(ds: Dataset, p: ModelParams, g: FusionGraph,
              cfg: PenaltyConfig) -> float:
    """Full penalized objective: loss + fusion penalty + sparse penalty."""
    return (neg_loglik(ds, p)
            + fusion_penalty(p.beta, g, cfg.lambda1)
            + sparse_penalty(ds, p.gamma, cfg.lambda2))
