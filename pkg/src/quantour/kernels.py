"""
Hot numeric kernels.

Each kernel exists twice: a numba-compiled loop (``*_nb``) and a vectorised
numpy version (``*_np``). The public name binds to one of them at import time
according to ``quantour._accel.USE_NUMBA``. Both paths must agree bit for bit
on projections, so projections are always accumulated column by column in the
same order (no BLAS dot products, whose summation order is unspecified).
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit, prange


def order_index(n, p):
    """1-based rank ``ceil(n * p)`` used by the type-1 quantile.

    ``n * p`` is snapped to the nearest integer when it is within rounding
    error of one, so that e.g. ``n=10, p=0.7`` gives rank 7 and not 8.
    """
    x = n * p
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, x):
        k = int(r)
    else:
        k = int(math.ceil(x))
    return min(max(k, 1), n)


# ----------------------------------------------------------------------------
# projections and directional order statistics


def project_np(points, d):
    proj = points[:, 0] * d[0]
    for j in range(1, points.shape[1]):
        proj = proj + points[:, j] * d[j]
    return proj


@njit(cache=True)
def project_nb(points, d):
    n, K = points.shape
    out = np.empty(n)
    for i in range(n):
        s = points[i, 0] * d[0]
        for j in range(1, K):
            s = s + points[i, j] * d[j]
        out[i] = s
    return out


def directional_kth_np(points, dirs, k):
    """k-th smallest projection (1-based) of ``points`` onto every row of ``dirs``."""
    proj = points[:, 0][:, None] * dirs[:, 0][None, :]
    for j in range(1, points.shape[1]):
        proj = proj + points[:, j][:, None] * dirs[:, j][None, :]
    return np.partition(proj, k - 1, axis=0)[k - 1].copy()


@njit(cache=True, parallel=True)
def directional_kth_nb(points, dirs, k):
    n, K = points.shape
    m = dirs.shape[0]
    out = np.empty(m)
    for t in prange(m):
        proj = np.empty(n)
        for i in range(n):
            s = points[i, 0] * dirs[t, 0]
            for j in range(1, K):
                s = s + points[i, j] * dirs[t, j]
            proj[i] = s
        out[t] = np.partition(proj, k - 1)[k - 1]
    return out


# ----------------------------------------------------------------------------
# half-space membership


def halfspace_inside_np(points, dirs, offsets, tol):
    proj = points[:, 0][:, None] * dirs[:, 0][None, :]
    for j in range(1, points.shape[1]):
        proj = proj + points[:, j][:, None] * dirs[:, j][None, :]
    return np.all(proj >= offsets[None, :] - tol, axis=1)


@njit(cache=True, parallel=True)
def halfspace_inside_nb(points, dirs, offsets, tol):
    n, K = points.shape
    m = dirs.shape[0]
    out = np.empty(n, dtype=np.bool_)
    for i in prange(n):
        inside = True
        for t in range(m):
            s = points[i, 0] * dirs[t, 0]
            for j in range(1, K):
                s = s + points[i, j] * dirs[t, j]
            if s < offsets[t] - tol:
                inside = False
                break
        out[i] = inside
    return out


# ----------------------------------------------------------------------------
# check loss


def check_loss_np(r, p):
    return float(np.sum(r * (p - (r < 0))))


@njit(cache=True)
def check_loss_nb(r, p):
    s = 0.0
    for i in range(r.shape[0]):
        u = r[i]
        if u < 0:
            s += u * (p - 1.0)
        else:
            s += u * p
    return s


# ----------------------------------------------------------------------------
# symmetric eigendecomposition by cyclic Jacobi rotations


def _jacobi_loop(A, tol, max_sweeps):
    K = A.shape[0]
    a = A.copy()
    v = np.eye(K)
    sweeps = 0
    scale = 0.0
    for i in range(K):
        for j in range(K):
            scale = max(scale, abs(a[i, j]))
    if scale == 0.0:
        scale = 1.0
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(K):
            for j in range(i + 1, K):
                off = max(off, abs(a[i, j]))
        sweeps = sweep
        if off <= tol * scale:
            break
        for pi in range(K - 1):
            for qi in range(pi + 1, K):
                apq = a[pi, qi]
                if apq == 0.0:
                    continue
                app = a[pi, pi]
                aqq = a[qi, qi]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + math.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + math.sqrt(1.0 + theta * theta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                for r in range(K):
                    arp = a[r, pi]
                    arq = a[r, qi]
                    a[r, pi] = c * arp - s * arq
                    a[r, qi] = s * arp + c * arq
                for r in range(K):
                    apr = a[pi, r]
                    aqr = a[qi, r]
                    a[pi, r] = c * apr - s * aqr
                    a[qi, r] = s * apr + c * aqr
                for r in range(K):
                    vrp = v[r, pi]
                    vrq = v[r, qi]
                    v[r, pi] = c * vrp - s * vrq
                    v[r, qi] = s * vrp + c * vrq
    w = np.empty(K)
    for i in range(K):
        w[i] = a[i, i]
    return w, v, sweeps


jacobi_eigh_np = _jacobi_loop
jacobi_eigh_nb = njit(cache=True)(_jacobi_loop)


if USE_NUMBA:
    project = project_nb
    directional_kth = directional_kth_nb
    halfspace_inside = halfspace_inside_nb
    check_loss = check_loss_nb
    jacobi_eigh = jacobi_eigh_nb
else:
    project = project_np
    directional_kth = directional_kth_np
    halfspace_inside = halfspace_inside_np
    check_loss = check_loss_np
    jacobi_eigh = jacobi_eigh_np
