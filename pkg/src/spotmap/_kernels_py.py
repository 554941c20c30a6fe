"""Pure NumPy implementations of the numerical kernels.

Drop-in fallback for the compiled extension ``spotmap._kernels``; the active
backend is selected at import time by :mod:`spotmap.backend`.  Signatures and
semantics must stay in lockstep with the Cython module.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit


def loss_sum(eta, y, w):
    """Weighted Bernoulli deviance sum: sum_j w_j*(log(1+e^eta_j) - y_j*eta_j)."""
    return float(np.dot(w, np.logaddexp(0.0, eta) - y * eta))


def mu_region_sums(eta, y, w, ptr):
    """Per-region sums of w*mu*(1-mu) and w*(mu-y), regions given by CSR offsets."""
    mu = expit(eta)
    curv = w * mu * (1.0 - mu)
    resid = w * (mu - y)
    starts = ptr[:-1]
    return np.add.reduceat(curv, starts), np.add.reduceat(resid, starts)


def loss_profile(gammas, offs, y, w):
    """Loss of one region evaluated at a vector of candidate offsets."""
    eta = gammas[:, None] + offs[None, :]
    return (np.logaddexp(0.0, eta) - y[None, :] * eta) @ w


def loss_derivs(gamma, offs, y, w):
    """Value, first and second derivative of one region's loss at ``gamma``."""
    eta = gamma + offs
    mu = expit(eta)
    val = float(np.dot(w, np.logaddexp(0.0, eta) - y * eta))
    d1 = float(np.dot(w, mu - y))
    d2 = float(np.dot(w, mu * (1.0 - mu)))
    return val, d1, d2


def logistic_stats(eta, y, w, q):
    """Loss, gradient and Hessian of the weighted logistic loss in q-space."""
    mu = expit(eta)
    loss = float(np.dot(w, np.logaddexp(0.0, eta) - y * eta))
    grad = q.T @ (w * (mu - y))
    wdiag = w * mu * (1.0 - mu)
    hess = (q * wdiag[:, None]).T @ q
    return loss, grad, hess


def _soft(v, thr):
    return np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)


def _kkt_residual(c, b, src, dst, rho, lam, beta, u, r, fuse_eps, dt):
    db = beta[src] - beta[dst]
    s = np.clip(r * u / lam, -1.0, 1.0)
    fixed = np.abs(db) > fuse_eps
    s[fixed] = np.sign(db[fixed])
    grad = c * (beta - b) + dt @ (lam * rho * s)
    return float(np.max(np.abs(grad)))


def _fuse_objective(c, b, src, dst, rho, lam, beta):
    quad = 0.5 * float(np.dot(c, (beta - b) ** 2))
    return quad + lam * float(np.dot(rho, np.abs(beta[src] - beta[dst])))


def admm_graph_fuse(c, b, src, dst, rho, lam, tol, max_iter, beta, z, u, r,
                    relax, check_every, fuse_eps, best_beta):
    """Edge-split ADMM for 0.5*sum c_i(beta_i-b_i)^2 + lam*sum rho_e|beta_i1-beta_i2|.

    Uses a per-edge augmentation r*rho_e so the soft threshold (lam/r) is
    uniform across edges even when the fusion weights span orders of
    magnitude; the beta system is then the rho-weighted graph Laplacian.
    Mutates ``beta``, ``z``, ``u`` and ``best_beta`` in place so callers can
    warm-start subsequent solves.  The base parameter ``r`` is rebalanced
    from the primal/dual residual ratio.  Returns
    ``(kkt, iterations, r, converged, best_objective)`` where ``kkt`` is the
    infinity norm of the stationarity residual using the current scaled dual
    variable as the subgradient certificate.
    """
    K = c.shape[0]
    E = src.shape[0]
    rows = np.concatenate([src, dst])
    cols = np.concatenate([np.arange(E), np.arange(E)])
    vals = np.concatenate([np.ones(E), -np.ones(E)])
    dt = sp.csr_matrix((vals, (rows, cols)), shape=(K, E))
    lap_w = (dt @ sp.diags(rho) @ dt.T).toarray()

    q = c * b

    def factorize(r_now):
        m = r_now * lap_w
        m[np.diag_indices(K)] += c
        return cho_factor(m, lower=True)

    factor = factorize(r)
    best_obj = _fuse_objective(c, b, src, dst, rho, lam, beta)
    best_beta[:] = beta
    kkt = np.inf
    it = 0
    while it < max_iter:
        z_prev = z.copy()
        rhs = q + r * (dt @ (rho * (z - u)))
        beta[:] = cho_solve(factor, rhs)
        db = beta[src] - beta[dst]
        db_relax = relax * db + (1.0 - relax) * z_prev
        v = db_relax + u
        z[:] = _soft(v, lam / r)
        u[:] = v - z
        it += 1
        if it % check_every == 0 or it == max_iter:
            kkt = _kkt_residual(c, b, src, dst, rho, lam, beta, u, r, fuse_eps, dt)
            obj = _fuse_objective(c, b, src, dst, rho, lam, beta)
            if obj < best_obj:
                best_obj = obj
                best_beta[:] = beta
            if kkt <= tol:
                return kkt, it, r, True, best_obj
            # residual balancing (primal vs dual), with dual rescaling
            pri = float(np.linalg.norm(np.sqrt(rho) * (db - z)))
            dua = r * float(np.linalg.norm(dt @ (rho * (z - z_prev))))
            if pri > 10.0 * dua and r < 1e12:
                r *= 2.0
                u /= 2.0
                factor = factorize(r)
            elif dua > 10.0 * pri and r > 1e-12:
                r /= 2.0
                u *= 2.0
                factor = factorize(r)
    return kkt, it, r, False, best_obj
