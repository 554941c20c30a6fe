# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled numerical kernels.

Mirror of :mod:`spotmap._kernels_py`; signatures and iteration order must
stay in lockstep so both backends satisfy the same contracts.
"""

from libc.math cimport exp, fabs, log1p, sqrt
from libc.stdint cimport int64_t

import numpy as np


cdef inline double _log1pexp(double x) nogil:
    if x > 0.0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _expit(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def loss_sum(double[::1] eta, double[::1] y, double[::1] w):
    """Weighted Bernoulli deviance sum: sum_j w_j*(log(1+e^eta_j) - y_j*eta_j)."""
    cdef Py_ssize_t j, n = eta.shape[0]
    cdef double s = 0.0
    with nogil:
        for j in range(n):
            s += w[j] * (_log1pexp(eta[j]) - y[j] * eta[j])
    return s


def mu_region_sums(double[::1] eta, double[::1] y, double[::1] w,
                   int64_t[::1] ptr):
    """Per-region sums of w*mu*(1-mu) and w*(mu-y), regions given by CSR offsets."""
    cdef Py_ssize_t k = ptr.shape[0] - 1
    curv_np = np.zeros(k)
    resid_np = np.zeros(k)
    cdef double[::1] curv = curv_np
    cdef double[::1] resid = resid_np
    cdef Py_ssize_t i, j
    cdef double mu, cs, rs
    with nogil:
        for i in range(k):
            cs = 0.0
            rs = 0.0
            for j in range(ptr[i], ptr[i + 1]):
                mu = _expit(eta[j])
                cs += w[j] * mu * (1.0 - mu)
                rs += w[j] * (mu - y[j])
            curv[i] = cs
            resid[i] = rs
    return curv_np, resid_np


def loss_profile(double[::1] gammas, double[::1] offs, double[::1] y,
                 double[::1] w):
    """Loss of one region evaluated at a vector of candidate offsets."""
    cdef Py_ssize_t t, j
    cdef Py_ssize_t m = gammas.shape[0], n = offs.shape[0]
    out_np = np.zeros(m)
    cdef double[::1] out = out_np
    cdef double g, e, s
    with nogil:
        for t in range(m):
            g = gammas[t]
            s = 0.0
            for j in range(n):
                e = g + offs[j]
                s += w[j] * (_log1pexp(e) - y[j] * e)
            out[t] = s
    return out_np


def loss_derivs(double gamma, double[::1] offs, double[::1] y, double[::1] w):
    """Value, first and second derivative of one region's loss at ``gamma``."""
    cdef Py_ssize_t j, n = offs.shape[0]
    cdef double e, mu, val = 0.0, d1 = 0.0, d2 = 0.0
    with nogil:
        for j in range(n):
            e = gamma + offs[j]
            mu = _expit(e)
            val += w[j] * (_log1pexp(e) - y[j] * e)
            d1 += w[j] * (mu - y[j])
            d2 += w[j] * mu * (1.0 - mu)
    return val, d1, d2


def logistic_stats(double[::1] eta, double[::1] y, double[::1] w,
                   double[:, ::1] q):
    """Loss, gradient and Hessian of the weighted logistic loss in q-space."""
    cdef Py_ssize_t n = eta.shape[0], p = q.shape[1]
    cdef Py_ssize_t j, a, bcol
    grad_np = np.zeros(p)
    hess_np = np.zeros((p, p))
    cdef double[::1] grad = grad_np
    cdef double[:, ::1] hess = hess_np
    cdef double loss = 0.0, mu, wd, wv, t
    with nogil:
        for j in range(n):
            mu = _expit(eta[j])
            loss += w[j] * (_log1pexp(eta[j]) - y[j] * eta[j])
            wd = w[j] * (mu - y[j])
            wv = w[j] * mu * (1.0 - mu)
            for a in range(p):
                grad[a] += wd * q[j, a]
                t = wv * q[j, a]
                for bcol in range(a, p):
                    hess[a, bcol] += t * q[j, bcol]
    for a in range(p):
        for bcol in range(a + 1, p):
            hess_np[bcol, a] = hess_np[a, bcol]
    return loss, grad_np, hess_np


cdef int _cholesky(double[:, ::1] m, Py_ssize_t k) nogil:
    """In-place lower Cholesky; returns nonzero when not positive definite."""
    cdef Py_ssize_t i, j, p
    cdef double s
    for j in range(k):
        s = m[j, j]
        for p in range(j):
            s -= m[j, p] * m[j, p]
        if s <= 0.0:
            return -1
        m[j, j] = sqrt(s)
        for i in range(j + 1, k):
            s = m[i, j]
            for p in range(j):
                s -= m[i, p] * m[j, p]
            m[i, j] = s / m[j, j]
    return 0


cdef void _chol_solve(double[:, ::1] lmat, double[::1] rhs, double[::1] out,
                      Py_ssize_t k) nogil:
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(k):
        s = rhs[i]
        for j in range(i):
            s -= lmat[i, j] * out[j]
        out[i] = s / lmat[i, i]
    for i in range(k - 1, -1, -1):
        s = out[i]
        for j in range(i + 1, k):
            s -= lmat[j, i] * out[j]
        out[i] = s / lmat[i, i]


cdef int _refactor(double[:, ::1] fac, double[:, ::1] lap, double[::1] c,
                   double r, Py_ssize_t k) nogil:
    cdef Py_ssize_t i, j
    for i in range(k):
        for j in range(k):
            fac[i, j] = r * lap[i, j]
        fac[i, i] += c[i]
    return _cholesky(fac, k)


cdef double _kkt(double[::1] c, double[::1] b, int64_t[::1] src,
                 int64_t[::1] dst, double[::1] rho, double lam,
                 double[::1] beta, double[::1] u, double r, double fuse_eps,
                 double[::1] grad) nogil:
    cdef Py_ssize_t i, e
    cdef Py_ssize_t k = c.shape[0], m = src.shape[0]
    cdef double db, s, t, out = 0.0
    for i in range(k):
        grad[i] = c[i] * (beta[i] - b[i])
    for e in range(m):
        db = beta[src[e]] - beta[dst[e]]
        if fabs(db) > fuse_eps:
            s = 1.0 if db > 0.0 else -1.0
        else:
            s = r * u[e] / lam
            if s > 1.0:
                s = 1.0
            elif s < -1.0:
                s = -1.0
        t = lam * rho[e] * s
        grad[src[e]] += t
        grad[dst[e]] -= t
    for i in range(k):
        if fabs(grad[i]) > out:
            out = fabs(grad[i])
    return out


cdef double _objective(double[::1] c, double[::1] b, int64_t[::1] src,
                       int64_t[::1] dst, double[::1] rho, double lam,
                       double[::1] beta) nogil:
    cdef Py_ssize_t i, e
    cdef double s = 0.0
    for i in range(c.shape[0]):
        s += 0.5 * c[i] * (beta[i] - b[i]) * (beta[i] - b[i])
    for e in range(src.shape[0]):
        s += lam * rho[e] * fabs(beta[src[e]] - beta[dst[e]])
    return s


def admm_graph_fuse(double[::1] c, double[::1] b, int64_t[::1] src,
                    int64_t[::1] dst, double[::1] rho, double lam,
                    double tol, long max_iter, double[::1] beta,
                    double[::1] z, double[::1] u, double r, double relax,
                    long check_every, double fuse_eps, double[::1] best_beta):
    """Edge-split ADMM; same algorithm and cadence as the NumPy fallback.

    Per-edge augmentation r*rho_e (uniform soft threshold lam/r); the beta
    system is the rho-weighted Laplacian.  Mutates beta/z/u/best_beta in
    place and returns (kkt, iterations, r, converged, best_objective).
    """
    cdef Py_ssize_t k = c.shape[0]
    cdef Py_ssize_t m = src.shape[0]
    cdef Py_ssize_t i, e
    lap_np = np.zeros((k, k))
    fac_np = np.empty((k, k))
    q_np = np.empty(k)
    rhs_np = np.empty(k)
    grad_np = np.empty(k)
    zprev_np = np.empty(m)
    cdef double[:, ::1] lap = lap_np
    cdef double[:, ::1] fac = fac_np
    cdef double[::1] q = q_np
    cdef double[::1] rhs = rhs_np
    cdef double[::1] grad = grad_np
    cdef double[::1] zprev = zprev_np
    cdef double kkt = np.inf
    cdef double db, dbr, v, thr, zn, t, pri, dua, obj, best_obj
    cdef long it = 0
    cdef bint converged = False
    cdef int status

    with nogil:
        for e in range(m):
            lap[src[e], src[e]] += rho[e]
            lap[dst[e], dst[e]] += rho[e]
            lap[src[e], dst[e]] -= rho[e]
            lap[dst[e], src[e]] -= rho[e]
        for i in range(k):
            q[i] = c[i] * b[i]
        status = _refactor(fac, lap, c, r, k)
        best_obj = _objective(c, b, src, dst, rho, lam, beta)
        for i in range(k):
            best_beta[i] = beta[i]

        while it < max_iter and status == 0:
            thr = lam / r
            for e in range(m):
                zprev[e] = z[e]
            for i in range(k):
                rhs[i] = q[i]
            for e in range(m):
                t = r * rho[e] * (z[e] - u[e])
                rhs[src[e]] += t
                rhs[dst[e]] -= t
            _chol_solve(fac, rhs, beta, k)
            for e in range(m):
                db = beta[src[e]] - beta[dst[e]]
                dbr = relax * db + (1.0 - relax) * zprev[e]
                v = dbr + u[e]
                if v > thr:
                    zn = v - thr
                elif v < -thr:
                    zn = v + thr
                else:
                    zn = 0.0
                u[e] = v - zn
                z[e] = zn
            it += 1
            if it % check_every == 0 or it == max_iter:
                kkt = _kkt(c, b, src, dst, rho, lam, beta, u, r, fuse_eps,
                           grad)
                obj = _objective(c, b, src, dst, rho, lam, beta)
                if obj < best_obj:
                    best_obj = obj
                    for i in range(k):
                        best_beta[i] = beta[i]
                if kkt <= tol:
                    converged = True
                    break
                pri = 0.0
                for e in range(m):
                    db = beta[src[e]] - beta[dst[e]] - z[e]
                    pri += rho[e] * db * db
                pri = sqrt(pri)
                for i in range(k):
                    grad[i] = 0.0
                for e in range(m):
                    t = r * rho[e] * (z[e] - zprev[e])
                    grad[src[e]] += t
                    grad[dst[e]] -= t
                dua = 0.0
                for i in range(k):
                    dua += grad[i] * grad[i]
                dua = sqrt(dua)
                if pri > 10.0 * dua and r < 1e12:
                    r *= 2.0
                    for e in range(m):
                        u[e] /= 2.0
                    status = _refactor(fac, lap, c, r, k)
                elif dua > 10.0 * pri and r > 1e-12:
                    r /= 2.0
                    for e in range(m):
                        u[e] *= 2.0
                    status = _refactor(fac, lap, c, r, k)

    if status != 0:
        raise np.linalg.LinAlgError(
            "graph-fusion system lost positive definiteness")
    return float(kkt), int(it), float(r), bool(converged), float(best_obj)
