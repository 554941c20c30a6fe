"""Shared builders and independent oracles for the test suite."""

import numpy as np
import pytest
from scipy.special import expit

from spotmap.core import Dataset, FusionGraph


def random_instance(rng, k=5, n_max=10, p_z=1, p_x=1, weighted=False,
                    missing=False):
    """Random valid dataset plus a random connected fusion graph.

    Each region gets one observed subject of each outcome class up front so
    the (0, 1) outcome-mean assumption always holds.
    """
    n_i = rng.integers(2, max(3, n_max + 1), size=k)
    region_index = np.repeat(np.arange(k), n_i)
    n = int(n_i.sum())
    y = rng.integers(0, 2, size=n).astype(float)
    observed = np.ones(n)
    if missing:
        observed = (rng.random(n) < 0.8).astype(float)
    # pin both classes observed in every region
    starts = np.concatenate([[0], np.cumsum(n_i)[:-1]])
    for i in range(k):
        y[starts[i]] = 0.0
        y[starts[i] + 1] = 1.0
        observed[starts[i]] = 1.0
        observed[starts[i] + 1] = 1.0
    weight = np.ones(n)
    if weighted:
        weight = rng.uniform(0.5, 3.0, size=n)
    z = rng.normal(size=(n, p_z))
    x = rng.normal(size=(k, p_x))
    locations = rng.uniform(0.0, 100.0, size=(k, 1))
    ds = Dataset.from_arrays(
        region_ids=[f"g{i}" for i in range(k)], locations=locations,
        region_covariates=x, region_index=region_index, outcome=y,
        observed=observed, weight=weight, subject_covariates=z)
    ds.validate_rates()

    edges = []
    for i in range(1, k):
        j = int(rng.integers(0, i))
        edges.append((j, i, float(rng.uniform(0.2, 1.0))))
    extra = rng.integers(0, k * (k - 1) // 2 + 1)
    seen = {(a, b) for a, b, _ in edges}
    for _ in range(extra):
        a, b = sorted(rng.choice(k, size=2, replace=False).tolist())
        if (a, b) not in seen:
            seen.add((a, b))
            edges.append((a, b, float(rng.uniform(0.2, 1.0))))
    graph = FusionGraph(edges, normalize=True)
    return ds, graph


def random_params(rng, ds, scale=0.5):
    from spotmap.core import ModelParams

    return ModelParams(alpha=rng.normal(scale=scale, size=ds.p),
                       beta=rng.normal(scale=scale, size=ds.K),
                       gamma=rng.normal(scale=scale, size=ds.K))


def irls_oracle(design, y, w, offset=None, tol=1e-12, max_iter=200):
    """Textbook IRLS for weighted logistic regression with offsets."""
    offset = np.zeros(design.shape[0]) if offset is None else offset
    coef = np.zeros(design.shape[1])
    for _ in range(max_iter):
        eta = design @ coef + offset
        mu = expit(eta)
        grad = design.T @ (w * (y - mu))
        if np.max(np.abs(grad)) < tol * max(1.0, float(np.sum(w))):
            break
        wdiag = w * mu * (1.0 - mu)
        hess = (design * wdiag[:, None]).T @ design
        coef = coef + np.linalg.solve(hess, grad)
    return coef


def central_diff(fun, x, step=1e-5):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        out[i] = (fun(hi) - fun(lo)) / (2.0 * step)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
