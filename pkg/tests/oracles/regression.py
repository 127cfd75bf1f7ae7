"""Independent reference solvers used only by the tests."""
import itertools
import math

import numpy as np


def ridge_objective_loop(w, b, X, y, lam):
    total = 0.0
    for i in range(len(y)):
        pred = b
        for j in range(len(w)):
            pred += w[j] * X[i][j]
        total += (pred - y[i]) ** 2
    return lam * sum(v * v for v in w) + total


def ridge_gd(X, y, lam, fit_intercept=False, tol=1e-13, max_iter=2_000_000):
    """Accelerated gradient descent with adaptive restart on the penalized least squares."""
    n, d = X.shape
    A = np.hstack([X, np.ones((n, 1))]) if fit_intercept else X
    pen = np.r_[np.full(d, lam), [0.0] if fit_intercept else []]
    L = 2 * (np.linalg.norm(A, 2) ** 2 + pen.max())
    z = np.zeros(A.shape[1])
    v = z.copy()
    t = 1.0
    for _ in range(max_iter):
        grad = 2 * (A.T @ (A @ v - y)) + 2 * pen * v
        z_new = v - grad / L
        if np.max(np.abs(z_new - z)) < tol:
            z = z_new
            break
        t_new = (1 + math.sqrt(1 + 4 * t * t)) / 2
        v_new = z_new + (t - 1) / t_new * (z_new - z)
        if (v - z_new) @ (z_new - z) > 0:  # restart when momentum goes uphill
            t_new = 1.0
            v_new = z_new
        z, v, t = z_new, v_new, t_new
    return (z[:d], float(z[d])) if fit_intercept else (z, 0.0)


def svr_dual(beta, K, y, eps):
    return 0.5 * beta @ K @ beta + eps * np.abs(beta).sum() - y @ beta


def svr_qp_cvxopt(K, y, c, eps):
    """Solve the 2n-variable dual with cvxopt; returns beta = alpha - alpha*."""
    from cvxopt import matrix, solvers

    n = len(y)
    P = np.block([[K, -K], [-K, K]]) + 1e-12 * np.eye(2 * n)
    q = np.r_[eps - y, eps + y]
    G = np.vstack([-np.eye(2 * n), np.eye(2 * n)])
    h = np.r_[np.zeros(2 * n), np.full(2 * n, c)]
    A = np.r_[np.ones(n), -np.ones(n)][None, :]
    solvers.options.update({"show_progress": False, "abstol": 1e-12, "reltol": 1e-12, "feastol": 1e-12})
    sol = solvers.qp(matrix(P), matrix(q), matrix(G), matrix(h), matrix(A), matrix(0.0))
    a = np.array(sol["x"]).ravel()
    return a[:n] - a[n:]


def _ternary(f, lo, hi, iters=200):
    for _ in range(iters):
        m1 = lo + (hi - lo) / 3
        m2 = hi - (hi - lo) / 3
        if f(m1) <= f(m2):
            hi = m2
        else:
            lo = m1
    return (lo + hi) / 2


def svr_pairwise_cd(K, y, c, eps, sweeps=5000, tol=1e-13):
    """Exhaustive pairwise coordinate descent on beta with sum(beta) = 0, |beta| <= c."""
    n = len(y)
    beta = np.zeros(n)
    best = svr_dual(beta, K, y, eps)
    for _ in range(sweeps):
        improved = 0.0
        for i, j in itertools.permutations(range(n), 2):
            lo = max(-c - beta[i], beta[j] - c)
            hi = min(c - beta[i], beta[j] + c)
            if hi <= lo:
                continue

            def f(t):
                b = beta.copy()
                b[i] += t
                b[j] -= t
                return svr_dual(b, K, y, eps)

            t = _ternary(f, lo, hi)
            val = f(t)
            if val < best:
                improved = max(improved, best - val)
                beta[i] += t
                beta[j] -= t
                best = val
        if improved < tol:
            break
    return beta
