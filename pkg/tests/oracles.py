"""Independent brute-force oracles used by the test suite.

These deliberately avoid the algorithms under test: the TV / sparse-fused
proxes are solved through their box-constrained duals by projected gradient,
lasso problems by cyclic coordinate descent, and the low-rank-plus-sparse
fit by alternating exact minimization.
"""

import numpy as np


def diff_matrix(k):
    D = np.zeros((k - 1, k))
    for i in range(k - 1):
        D[i, i] = -1.0
        D[i, i + 1] = 1.0
    return D


def tv_prox_dual_oracle(z, lam, iters=200000, tol=1e-14):
    """argmin 0.5||w-z||^2 + lam*sum|w_{i+1}-w_i| via its dual box QP."""
    z = np.asarray(z, dtype=float)
    k = z.size
    if k == 1 or lam == 0:
        return z.copy()
    D = diff_matrix(k)
    u = np.zeros(k - 1)
    step = 1.0 / 4.0  # ||D D^T|| <= 4
    prev = u.copy()
    for it in range(iters):
        grad = D @ (D.T @ u - z)
        u = np.clip(u - step * grad, -lam, lam)
        if it % 200 == 0:
            if np.max(np.abs(u - prev)) < tol:
                break
            prev = u.copy()
    return z - D.T @ u


def sparse_fused_dual_oracle(z, lam1, lam2, iters=400000, tol=1e-15):
    """argmin 0.5||w-z||^2 + lam1||w||_1 + lam2*TV(w) via the joint dual."""
    z = np.asarray(z, dtype=float)
    k = z.size
    D = diff_matrix(k) if k > 1 else np.zeros((0, k))
    u = np.zeros(k)
    v = np.zeros(max(k - 1, 0))
    step = 1.0 / 5.0  # ||I + D^T D|| <= 5
    prev = None
    for it in range(iters):
        r = z - u - (D.T @ v if v.size else 0.0)
        u = np.clip(u + step * r, -lam1, lam1)
        if v.size:
            v = np.clip(v + step * (D @ r), -lam2, lam2)
        if it % 200 == 0:
            cur = np.concatenate([u, v])
            if prev is not None and np.max(np.abs(cur - prev)) < tol:
                break
            prev = cur
    return z - u - (D.T @ v if v.size else 0.0)


def sparse_fused_objective(w, z, lam1, lam2):
    return (
        0.5 * float(np.sum((w - z) ** 2))
        + lam1 * float(np.sum(np.abs(w)))
        + lam2 * float(np.sum(np.abs(np.diff(w))))
    )


def svt_grid_oracle(M, mu):
    """Nuclear prox via a two-stage fine grid over each singular value."""
    U, s, Vt = np.linalg.svd(np.asarray(M, dtype=float), full_matrices=False)
    out = np.zeros_like(s)
    for i, sig in enumerate(s):
        grid = np.linspace(0.0, sig + 1.0, 20001)
        vals = 0.5 * (grid - sig) ** 2 + mu * grid
        best = grid[np.argmin(vals)]
        lo = max(0.0, best - 2e-4)
        hi = best + 2e-4
        grid = np.linspace(lo, hi, 40001)
        vals = 0.5 * (grid - sig) ** 2 + mu * grid
        out[i] = grid[np.argmin(vals)]
    return (U * out) @ Vt


def cd_lasso_oracle(X, Y, lam, iters=20000, tol=1e-12):
    """Cyclic coordinate descent for min (1/N)||Y-XB||_F^2 + lam||B||_1."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    N, d = X.shape
    m = Y.shape[1]
    B = np.zeros((d, m))
    col_sq = np.sum(X * X, axis=0)
    R = Y.copy()  # residual Y - X B
    for _ in range(iters):
        delta = 0.0
        for j in range(d):
            if col_sq[j] == 0:
                continue
            rho = X[:, j] @ R + col_sq[j] * B[j]
            new = np.sign(rho) * np.maximum(np.abs(rho) - lam * N / 2.0, 0.0)
            new /= col_sq[j]
            step = new - B[j]
            if np.any(step != 0):
                R -= np.outer(X[:, j], step)
                delta = max(delta, float(np.max(np.abs(step))))
                B[j] = new
        if delta < tol:
            break
    return B


def lasso_objective(B, X, Y, lam):
    R = Y - X @ B
    return float(np.sum(R * R)) / X.shape[0] + lam * float(np.sum(np.abs(B)))


def alternating_lowrank_sparse_oracle(X, Y, lam, mu, outer=200, tol=1e-10):
    """Alternating exact minimization for the low-rank plus sparse fit,
    in design orientation (Y ~ X (L+S))."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    N, d = X.shape
    m = Y.shape[1]
    L = np.zeros((d, m))
    S = np.zeros((d, m))
    prev_obj = np.inf
    lip = 2.0 * np.linalg.eigvalsh(X.T @ X)[-1] / N
    for _ in range(outer):
        S = cd_lasso_oracle(X, Y - X @ L, lam, iters=3000, tol=1e-12)
        # exact minimization in L by proximal gradient run to stagnation
        for _ in range(5000):
            G = 2.0 * X.T @ (X @ (L + S) - Y) / N
            Z = L - G / lip
            U, sv, Vt = np.linalg.svd(Z, full_matrices=False)
            sv = np.maximum(sv - mu / lip, 0.0)
            L_new = (U * sv) @ Vt
            if np.max(np.abs(L_new - L)) < 1e-13:
                L = L_new
                break
            L = L_new
        obj = lrs_objective(L, S, X, Y, lam, mu)
        if prev_obj - obj < tol:
            break
        prev_obj = obj
    return L, S


def lrs_objective(L, S, X, Y, lam, mu):
    R = Y - X @ (L + S)
    nuc = float(np.sum(np.linalg.svd(L, compute_uv=False)))
    return (
        float(np.sum(R * R)) / X.shape[0]
        + lam * float(np.sum(np.abs(S)))
        + mu * nuc
    )


def ols(X, Y):
    """Least-squares coefficients (design orientation), zero if degenerate."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[0] == 0:
        return np.zeros((X.shape[1], Y.shape[1] if Y.ndim > 1 else 1))
    B, *_ = np.linalg.lstsq(X, Y, rcond=None)
    return B
