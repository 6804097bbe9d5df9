"""Soft-margin SVM dual solver and probability calibration primitives.

The solver is a maximal-violating-pair SMO with a second-order working-set
heuristic, fixed traversal order (deterministic), tolerance-based stopping
and a hard iteration bound. The hot loop is compiled with numba because the
hyperparameter search trains thousands of these subproblems.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

TAU = 1e-12
DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 20_000


def rbf_kernel(x: np.ndarray, z: np.ndarray | None = None, gamma: float = 1.0) -> np.ndarray:
    """exp(-gamma * ||a - b||^2) for all row pairs of x and z."""
    x = np.asarray(x, dtype=np.float64)
    z = x if z is None else np.asarray(z, dtype=np.float64)
    xx = (x * x).sum(axis=1)[:, None]
    zz = (z * z).sum(axis=1)[None, :]
    d2 = xx + zz - 2.0 * (x @ z.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


def squared_distances(x: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances; reusable across gamma values."""
    x = np.asarray(x, dtype=np.float64)
    xx = (x * x).sum(axis=1)
    d2 = xx[:, None] + xx[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


@njit(cache=True)
def smo_solve(K, y, C, tol, max_iter):  # pragma: no cover - jitted
    """Solve the C-SVC dual for one binary problem.

    K is the kernel matrix, y holds +-1 labels. Returns (alpha, bias,
    iterations). Stops when the maximal KKT violation drops below tol
    or after max_iter working-set updates.
    """
    n = K.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    while it < max_iter:
        # first element: largest -y*grad over the "up" set
        g_max = -1e300
        i = -1
        for t in range(n):
            if (y[t] > 0.0 and alpha[t] < C) or (y[t] < 0.0 and alpha[t] > 0.0):
                v = -y[t] * grad[t]
                if v > g_max:
                    g_max = v
                    i = t
        # second element: most negative second-order objective in the "low" set
        g_min = 1e300
        j = -1
        obj_min = 1e300
        for t in range(n):
            if (y[t] > 0.0 and alpha[t] > 0.0) or (y[t] < 0.0 and alpha[t] < C):
                v = -y[t] * grad[t]
                if v < g_min:
                    g_min = v
                if i >= 0:
                    b_it = g_max - v
                    if b_it > 0.0:
                        a_it = K[i, i] + K[t, t] - 2.0 * K[i, t]
                        if a_it <= 0.0:
                            a_it = TAU
                        obj = -(b_it * b_it) / a_it
                        if obj < obj_min:
                            obj_min = obj
                            j = t
        if i < 0 or j < 0 or g_max - g_min < tol:
            break
        q_ij = y[i] * y[j] * K[i, j]
        old_i = alpha[i]
        old_j = alpha[j]
        if y[i] != y[j]:
            quad = K[i, i] + K[j, j] + 2.0 * q_ij
            if quad <= 0.0:
                quad = TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0.0:
                if alpha[j] < 0.0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0.0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0.0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = K[i, i] + K[j, j] - 2.0 * q_ij
            if quad <= 0.0:
                quad = TAU
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0.0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0.0:
                    alpha[i] = 0.0
                    alpha[j] = total
        d_i = alpha[i] - old_i
        d_j = alpha[j] - old_j
        for t in range(n):
            grad[t] += y[t] * (y[i] * K[t, i] * d_i + y[j] * K[t, j] * d_j)
        it += 1

    # bias: average over free vectors, else midpoint of the feasible band
    n_free = 0
    b_sum = 0.0
    for t in range(n):
        if 0.0 < alpha[t] < C:
            n_free += 1
            b_sum += -y[t] * grad[t]
    if n_free > 0:
        bias = b_sum / n_free
    else:
        up = -1e300
        low = 1e300
        for t in range(n):
            v = -y[t] * grad[t]
            if (y[t] > 0.0 and alpha[t] < C) or (y[t] < 0.0 and alpha[t] > 0.0):
                if v > up:
                    up = v
            if (y[t] > 0.0 and alpha[t] > 0.0) or (y[t] < 0.0 and alpha[t] < C):
                if v < low:
                    low = v
        bias = (up + low) / 2.0
    return alpha, bias, it


def kkt_violation(K: np.ndarray, y: np.ndarray, alpha: np.ndarray, bias: float,
                  C: float) -> float:
    """Largest violation of the KKT optimality conditions (0 when optimal)."""
    f = K @ (alpha * y) + bias
    margins = y * f
    worst = 0.0
    for t in range(len(y)):
        a = alpha[t]
        if a < 1e-9:
            worst = max(worst, 1.0 - margins[t])
        elif a > C - 1e-9:
            worst = max(worst, margins[t] - 1.0)
        else:
            worst = max(worst, abs(margins[t] - 1.0))
    return worst


def fit_platt(decision: np.ndarray, positive: np.ndarray,
              max_iter: int = 100) -> tuple[float, float]:
    """Fit sigmoid P(+|f) = 1 / (1 + exp(A*f + B)) by regularized Newton."""
    f = np.asarray(decision, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    prior1 = int(pos.sum())
    prior0 = len(f) - prior1
    hi = (prior1 + 1.0) / (prior1 + 2.0)
    lo = 1.0 / (prior0 + 2.0)
    t = np.where(pos, hi, lo)
    a, b = 0.0, math.log((prior0 + 1.0) / (prior1 + 1.0))
    sigma = 1e-12
    eps = 1e-5

    def objective(a_, b_):
        z = a_ * f + b_
        # stable -t*log(p) - (1-t)*log(1-p)
        val = np.where(z >= 0, t * z + np.log1p(np.exp(-z)),
                       (t - 1) * z + np.log1p(np.exp(z)))
        return float(val.sum())

    fval = objective(a, b)
    for _ in range(max_iter):
        z = a * f + b
        p = np.where(z >= 0, np.exp(-z) / (1.0 + np.exp(-z)),
                     1.0 / (1.0 + np.exp(z)))
        q = 1.0 - p
        d1 = t - p
        d2 = p * q
        g1 = float((d1 * f).sum())
        g2 = float(d1.sum())
        if abs(g1) < eps and abs(g2) < eps:
            break
        h11 = float((d2 * f * f).sum()) + sigma
        h22 = float(d2.sum()) + sigma
        h21 = float((d2 * f).sum())
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= 1e-10:
            na, nb = a + step * da, b + step * db
            nval = objective(na, nb)
            if nval < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nval
                break
            step /= 2.0
        else:
            break
    return a, b


def platt_probability(decision, a: float, b: float):
    z = a * np.asarray(decision, dtype=np.float64) + b
    return np.where(z >= 0, np.exp(-z) / (1.0 + np.exp(-z)),
                    1.0 / (1.0 + np.exp(z)))


def couple_pairwise(r: np.ndarray, max_iter: int = 200, eps: float = 1e-10) -> np.ndarray:
    """Combine pairwise win probabilities r[i, j] into one distribution.

    Minimizes sum (r_ji p_i - r_ij p_j)^2 subject to sum(p) = 1 by the
    standard iterative scheme; r's diagonal is ignored.
    """
    k = r.shape[0]
    if k == 1:
        return np.ones(1)
    r = np.clip(np.asarray(r, dtype=np.float64), 1e-7, 1.0 - 1e-7)
    q = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            if i == j:
                q[i, i] = sum(r[j2, i] ** 2 for j2 in range(k) if j2 != i)
            else:
                q[i, j] = -r[j, i] * r[i, j]
    p = np.full(k, 1.0 / k)
    for _ in range(max_iter):
        max_delta = 0.0
        for t in range(k):
            qp = q @ p
            pqp = float(p @ qp)
            new_pt = (-(qp[t] - q[t, t] * p[t]) + pqp) / q[t, t]
            max_delta = max(max_delta, abs(new_pt - p[t]))
            p[t] = new_pt
            p /= p.sum()
        if max_delta < eps:
            break
    p = np.clip(p, 0.0, 1.0)
    return p / p.sum()
