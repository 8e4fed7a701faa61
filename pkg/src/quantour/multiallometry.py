"""
Multivariate allometry from the first principal axis of the log covariance.

For K measurements the pairwise exponents are ratios of first-eigenvector
loadings, ``b_ij = delta_1i / delta_1j``, and ``a_ij = g_i / g_j**b_ij`` with
``g`` the geometric means. The multivariate ratio for variable ``i`` is
``R_i = Y_i**(K-1) / prod_{j != i} Y_j**b_ij``.

All logarithms are base 10.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .quantile_core import check_level, empirical_quantile


class MultiAllometryError(ValueError):
    pass


@dataclass(frozen=True)
class PCADecomposition:
    mean: np.ndarray
    eigenvectors: np.ndarray
    eigenvalues: np.ndarray
    covariance: np.ndarray

    @property
    def major_axis(self):
        return self.eigenvectors[:, 0]

    def to_dict(self):
        return {
            "mean": self.mean.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvectors": self.eigenvectors.tolist(),
        }


@dataclass(frozen=True)
class PairwiseExponents:
    b: np.ndarray
    a: np.ndarray
    geometric_means: np.ndarray

    @property
    def K(self):
        return self.b.shape[0]


@dataclass(frozen=True)
class MultiRatioCutoff:
    index: int
    level: float
    value: float


def eigh_jacobi(A, tol=1e-12, max_sweeps=100):
    """Eigenpairs of a symmetric matrix, eigenvalues in nonincreasing order."""
    A = np.ascontiguousarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise MultiAllometryError("matrix must be square")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise MultiAllometryError("matrix must be symmetric")
    w, v, _ = kernels.jacobi_eigh(A, tol, max_sweeps)
    order = np.argsort(-w, kind="mergesort")
    w, v = w[order], v[:, order]
    # each eigenvector points so that its largest-magnitude component is positive
    for k in range(v.shape[1]):
        if v[np.argmax(np.abs(v[:, k])), k] < 0:
            v[:, k] = -v[:, k]
    return w, v


def _positive_matrix(data):
    Y = np.asarray(data, dtype=float)
    if Y.ndim != 2:
        raise MultiAllometryError("data must be an n x K matrix")
    bad = ~np.all((Y > 0) & np.isfinite(Y), axis=1)
    if bad.any():
        raise MultiAllometryError(f"nonpositive value in row {int(np.flatnonzero(bad)[0])}")
    return Y


def pca_allometry(data, correlation=False):
    """PCA of the log10 data and the implied pairwise allometric exponents.

    ``correlation=True`` decomposes the correlation matrix of the logs
    instead of the covariance (size/shape separation variant).
    """
    Y = _positive_matrix(data)
    n, K = Y.shape
    if K < 2:
        raise MultiAllometryError("need at least two variables")
    if n < K + 1:
        raise MultiAllometryError(f"need at least K+1={K + 1} records, got {n}")
    Z = np.log10(Y)
    mean = Z.mean(axis=0)
    S = np.cov(Z, rowvar=False, ddof=1)
    if correlation:
        sd = np.sqrt(np.diag(S))
        if np.any(sd == 0):
            raise MultiAllometryError("a variable has zero variance")
        S = S / np.outer(sd, sd)
    w, v = eigh_jacobi(S)
    if w[0] <= 0 or (w[0] - w[1]) <= 1e-8 * w[0]:
        raise MultiAllometryError(
            f"leading eigenvalues {w[0]:.6g} and {w[1]:.6g} are not separated: major axis is ill-defined"
        )
    delta = v[:, 0]
    if np.any(np.abs(delta) < 1e-15):
        raise MultiAllometryError("a first-axis loading is zero: exponents are undefined")
    b = delta[:, None] / delta[None, :]
    g = 10.0 ** mean
    a = g[:, None] / g[None, :] ** b
    return PCADecomposition(mean, v, w, S), PairwiseExponents(b, a, g)


def multi_ratio(record, exponents, i):
    """``Y_i**(K-1) / prod_{j != i} Y_j**b_ij`` for one record (or an n x K array)."""
    Y = np.asarray(record, dtype=float)
    K = exponents.K
    if Y.shape[-1] != K:
        raise MultiAllometryError(f"record has {Y.shape[-1]} components, expected {K}")
    if not 0 <= i < K:
        raise MultiAllometryError(f"index {i} out of range for K={K}")
    if np.any(Y <= 0):
        raise MultiAllometryError("multi_ratio requires strictly positive components")
    logR = (K - 1) * np.log10(Y[..., i])
    for j in range(K):
        if j != i:
            logR = logR - exponents.b[i, j] * np.log10(Y[..., j])
    return 10.0 ** logR


def allometric_direction(exponents, i, normalise=True):
    """``(b_i1, ..., -(K-1), ..., b_iK)``, so that ``d'Z = -log10 R_i``."""
    K = exponents.K
    d = exponents.b[i].copy()
    d[i] = -(K - 1.0)
    if normalise:
        d = d / np.sqrt(np.sum(d * d))
    return d


def multi_ratio_cutoff(data, exponents, i, level):
    level = check_level(level)
    R = multi_ratio(_positive_matrix(data), exponents, i)
    return MultiRatioCutoff(i, level, empirical_quantile(R, level))


def tangent_hyperplane(exponents, i, cutoff):
    """Intercept and slopes of ``log Y_i = log Q/(K-1) + sum_{j != i} b_ij/(K-1) log Y_j``.

    Returns ``(intercept, slopes)`` where ``slopes`` maps each ``j != i`` to its
    coefficient.
    """
    K = exponents.K
    intercept = float(np.log10(cutoff.value) / (K - 1))
    slopes = {j: float(exponents.b[i, j] / (K - 1)) for j in range(K) if j != i}
    return intercept, slopes
