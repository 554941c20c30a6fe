"""Weighted quadratic + graph-fusion subproblem solver.

Solves  min_beta  (1/(2*scale)) * sum_i a_i (beta_i - b_i)^2
                  + lambda1 * sum_edges rho * |beta_i1 - beta_i2|

via ADMM on edge differences with over-relaxation and residual balancing.
Optimality is certified by the infinity norm of a subgradient (KKT)
residual; non-convergence raises with the best iterate attached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import kernels
from .core import FusionGraph
from .errors import FuseConvergenceError

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000
DEFAULT_MERGE_TOL = 1e-4
_RELAX = 1.5
_CHECK_EVERY = 25
_FUSE_EPS = 1e-9


@dataclass(frozen=True)
class QuadFuseProblem:
    """Curvatures a, targets b, fusion graph and penalty for the beta step."""

    a: np.ndarray
    b: np.ndarray
    graph: FusionGraph
    lambda1: float
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.ascontiguousarray(self.a, dtype=float))
        object.__setattr__(self, "b", np.ascontiguousarray(self.b, dtype=float))
        if self.a.shape != self.b.shape:
            raise ValueError("a and b must have equal length")
        if np.any(self.a <= 0):
            raise ValueError("all curvatures a_i must be positive")
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be nonnegative")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.graph.max_index() >= self.a.shape[0]:
            raise ValueError("graph edge index out of range")


@dataclass
class FuseSolution:
    """Solution vector with its KKT residual and iteration count."""

    beta: np.ndarray
    kkt_residual: float
    iterations: int
    state: tuple = None  # (z, u, r) for warm starts; opaque


def fuse_objective(p: QuadFuseProblem, beta) -> float:
    """Objective value of the subproblem at ``beta``."""
    beta = np.asarray(beta, dtype=float)
    quad = 0.5 * float(np.dot(p.a, (beta - p.b) ** 2)) / p.scale
    g = p.graph
    if g.n_edges == 0:
        return quad
    return quad + p.lambda1 * float(
        np.dot(g.rho, np.abs(beta[g.src] - beta[g.dst])))


def solve_quad_fuse(p: QuadFuseProblem, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER,
                    warm_state: tuple = None) -> FuseSolution:
    """Solve the subproblem to a KKT residual of at most ``tol``.

    ``warm_state`` may carry the ``state`` attribute of a previous solution
    for a problem with the same graph; it seeds the ADMM splitting variables
    and is the main source of speed inside the alternating solver.

    Raises :class:`FuseConvergenceError` (carrying the best iterate) when
    ``max_iter`` is exhausted with residual above ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    k = p.a.shape[0]
    g = p.graph
    if p.lambda1 == 0.0 or g.n_edges == 0:
        return FuseSolution(beta=p.b.copy(), kkt_residual=0.0, iterations=0)

    c = p.a / p.scale
    e = g.n_edges
    if warm_state is not None and warm_state[0].shape[0] == e:
        z = warm_state[0].copy()
        u = warm_state[1].copy()
        r = float(warm_state[2])
        beta = warm_state[3].copy()
    else:
        beta = p.b.copy()
        z = beta[g.src] - beta[g.dst]
        u = np.zeros(e)
        r = 1.0
    best_beta = np.empty(k)
    kkt, iters, r, converged, _best_obj = kernels.admm_graph_fuse(
        c, p.b, g.src, g.dst, g.rho, p.lambda1, tol, max_iter,
        beta, z, u, r, _RELAX, _CHECK_EVERY, _FUSE_EPS, best_beta)
    if not converged:
        sol = FuseSolution(beta=best_beta, kkt_residual=float(kkt),
                           iterations=int(iters),
                           state=(z, u, r, best_beta.copy()))
        raise FuseConvergenceError(
            f"ADMM did not reach KKT residual {tol:g} in {max_iter} iterations "
            f"(residual {kkt:.3e})", solution=sol)
    sol = FuseSolution(beta=beta, kkt_residual=float(kkt), iterations=int(iters),
                       state=(z, u, r, beta.copy()))
    return sol


def fused_groups(beta, merge_tol: float = DEFAULT_MERGE_TOL):
    """Partition indices so that sorted values with gaps < merge_tol share a group."""
    if merge_tol < 0:
        raise ValueError("merge_tol must be nonnegative")
    beta = np.asarray(beta, dtype=float)
    if beta.size == 0:
        return []
    order = np.argsort(beta, kind="stable")
    groups = [[int(order[0])]]
    for prev, cur in zip(order[:-1], order[1:]):
        if beta[cur] - beta[prev] < merge_tol:
            groups[-1].append(int(cur))
        else:
            groups.append([int(cur)])
    return groups


def fused_group_count(beta, merge_tol: float = DEFAULT_MERGE_TOL) -> int:
    """Number of distinct values of beta at the merge tolerance."""
    return len(fused_groups(beta, merge_tol))
