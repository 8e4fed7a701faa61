"""
Univariate empirical quantiles and linear quantile regression.

Quantiles use the type-1 estimator (the ceiling order statistic), which is
the sample version of ``inf{y : F(y) >= p}``. It returns an element of the
sample, so it commutes exactly with monotone maps.

Quantile regression minimises the check loss with a majorise-minimise IRLS
warm start followed by exact simplex pivots on the basic solution, so the
reported fit is a true minimiser and not just an approximation of one.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels


class QuantileError(ValueError):
    pass


class RankDeficientError(QuantileError):
    pass


class ConvergenceError(QuantileError):
    pass


def check_level(p):
    """Validate a quantile level, returning it as a float in (0, 1)."""
    p = float(p)
    if not (0.0 < p < 1.0) or np.isnan(p):
        raise QuantileError(f"quantile level must lie in the open interval (0, 1), got {p}")
    return p


def as_sample(values):
    s = np.asarray(values, dtype=float).ravel()
    if s.size == 0:
        raise QuantileError("empty sample")
    if not np.all(np.isfinite(s)):
        raise QuantileError("sample contains NaN or infinite values")
    return s


def empirical_quantile(values, p):
    """Type-1 sample quantile: the ``ceil(n p)``-th order statistic.

    >>> empirical_quantile([3, 1, 2], 0.5)
    2.0
    """
    p = check_level(p)
    s = as_sample(values)
    k = kernels.order_index(s.size, p)
    return float(np.partition(s, k - 1)[k - 1])


def reflect_level(p):
    """Reflection rule: the level ``1 - p`` used in the opposite direction."""
    return 1.0 - check_level(p)


def transform_quantile(q_value, h):
    """Move a quantile through a monotone increasing map ``h``."""
    return h(q_value)


def check_loss(residuals, p):
    r = np.ascontiguousarray(residuals, dtype=float)
    return float(kernels.check_loss(r, float(p)))


@dataclass(frozen=True)
class QRFit:
    coefficients: np.ndarray
    level: float
    n: int
    objective: float
    iterations: int = 0
    pivots: int = 0
    basis: tuple = field(default=(), repr=False)

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coefficients


def _check_rank(X):
    n, q = X.shape
    tol_scale = max(n, q) * np.finfo(float).eps
    for j in range(q):
        sub = X[:, : j + 1]
        sv = np.linalg.svd(sub, compute_uv=False)
        if sv[-1] <= tol_scale * sv[0] or sv[0] == 0.0:
            raise RankDeficientError(f"design matrix is rank deficient at column {j}")


def _weighted_median_step(r, g, p):
    """Exact minimiser ``t`` of ``sum rho_p(r - t g)`` over t (piecewise linear, convex)."""
    nz = np.abs(g) > 1e-14 * max(1.0, np.abs(g).max())
    c = r[nz] / g[nz]
    w = np.abs(g[nz])
    # rho_p(g (c - t)) = |g| rho_{p'}(c - t) with p' = p for g > 0 and 1 - p otherwise
    pw = np.where(g[nz] > 0, p, 1.0 - p)
    order = np.argsort(c, kind="mergesort")
    c, w, pw = c[order], w[order], pw[order]
    # slope just right of c_j: sum_{i<=j} w_i (1 - p_i) - sum_{i>j} w_i p_i
    left = np.cumsum(w * (1.0 - pw))
    right = np.sum(w * pw) - np.cumsum(w * pw)
    slope = left - right
    j = int(np.searchsorted(slope, 0.0, side="left"))
    j = min(j, c.size - 1)
    return float(c[j]), np.flatnonzero(nz)[order[j]]


def _basis_from_residuals(X, r, q):
    order = np.argsort(np.abs(r), kind="mergesort")
    basis = []
    rows = np.empty((0, q))
    for i in order:
        cand = np.vstack([rows, X[i]])
        if np.linalg.matrix_rank(cand) == len(basis) + 1:
            basis.append(int(i))
            rows = cand
            if len(basis) == q:
                break
    if len(basis) < q:
        raise RankDeficientError("could not find a nonsingular basis of observations")
    return basis


def _simplex_polish(X, y, p, beta, max_pivots):
    """Walk from ``beta`` to an exact check-loss minimiser through basic solutions.

    At a basic solution the loss is separable along the edge directions
    ``+-inv(X_h) e_j``, so the vertex is optimal once no edge descends.
    """
    n, q = X.shape
    basis = _basis_from_residuals(X, y - X @ beta, q)
    Xh = X[basis]
    beta = np.linalg.solve(Xh, y[basis])
    obj = check_loss(y - X @ beta, p)
    for pivots in range(max_pivots + 1):
        r = y - X @ beta
        r[basis] = 0.0
        Xh_inv = np.linalg.inv(Xh)
        best = None
        for j in range(q):
            for sign in (1.0, -1.0):
                delta = sign * Xh_inv[:, j]
                g = X @ delta
                t, enter = _weighted_median_step(r, g, p)
                if enter in basis:
                    continue
                cand_obj = check_loss(r - t * g, p)
                if cand_obj < obj - 1e-13 * max(1.0, obj) and (best is None or cand_obj < best[0]):
                    best = (cand_obj, j, int(enter))
        if best is None:
            return beta, obj, pivots, tuple(basis)
        _, j, enter = best
        basis = list(basis)
        basis[j] = enter
        Xh = X[basis]
        beta = np.linalg.solve(Xh, y[basis])
        obj = check_loss(y - X @ beta, p)
    raise ConvergenceError(
        f"simplex polish did not terminate after {max_pivots} pivots (objective {obj:.6g})"
    )


def quantile_regression(X, y, p, tol=1e-10, max_iter=200, eps_final=1e-8):
    """Linear quantile regression of ``y`` on the columns of ``X`` at level ``p``.

    IRLS on the smoothed check loss supplies a warm start; the fit is then
    finished by exact pivots so that ``objective`` is the global minimum of
    ``sum rho_p(y - X beta)``. Ties among minimisers are resolved by wherever
    the pivots stop.
    """
    p = check_level(p)
    y = as_sample(y)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, q = X.shape
    if y.size != n:
        raise QuantileError(f"X has {n} rows but y has {y.size} values")
    if n < q:
        raise QuantileError(f"need n >= q, got n={n}, q={q}")
    _check_rank(X)

    if q == 1 and np.all(X[:, 0] == X[0, 0]):
        # intercept-only: scan the sample values directly
        c = X[0, 0]
        beta = np.array([empirical_quantile(y, p) / c])
        return QRFit(beta, p, n, check_loss(y - X @ beta, p))

    # majorise-minimise IRLS (Hunter & Lange) with shrinking smoothing
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    scale = float(np.median(np.abs(y - np.median(y)))) or float(np.std(y)) or 1.0
    eps = 1e-2 * scale
    eps_stop = eps_final * scale
    lin = (p - 0.5) * X.sum(axis=0)
    obj = check_loss(y - X @ beta, p)
    it = 0
    while it < max_iter:
        it += 1
        r = y - X @ beta
        v = 0.5 / np.maximum(np.abs(r), eps)
        G = (X * v[:, None]).T @ X
        new = np.linalg.solve(G, X.T @ (v * y) + lin)
        new_obj = check_loss(y - X @ new, p)
        rel = abs(obj - new_obj) / max(obj, 1e-300)
        beta, obj = new, new_obj
        if rel < tol:
            if eps <= eps_stop:
                break
            eps = max(eps * 0.1, eps_stop)
    if not np.all(np.isfinite(beta)):
        raise ConvergenceError(f"IRLS diverged after {it} iterations")

    beta, obj, pivots, basis = _simplex_polish(X, y, p, beta, max_pivots=50 * q + n)
    return QRFit(beta, p, n, obj, iterations=it, pivots=pivots, basis=basis)
