"""
Directional quantiles and directional quantile envelopes in the plane.

The envelope at level ``p`` is the set of points lying on the upper side of
every directional ``p``-quantile line::

    D(p) = { y : d' y >= Q_{d'Y}(p) for every unit direction d }

It is computed on a finite direction grid (plus optional extra directions)
by half-plane intersection.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .quantile_core import QuantileError, check_level, quantile_regression

MEMBERSHIP_TOL = 1e-9


class DegenerateGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Direction:
    components: tuple

    def __init__(self, components):
        c = np.asarray(components, dtype=float).ravel()
        if c.size < 2:
            raise ValueError("a direction needs at least two components")
        norm = np.sqrt(np.sum(c * c))
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("cannot normalise a zero or non-finite direction")
        object.__setattr__(self, "components", tuple(float(x) for x in c / norm))

    @property
    def vector(self):
        return np.array(self.components)

    def __neg__(self):
        return Direction(-self.vector)

    def __len__(self):
        return len(self.components)


@dataclass(frozen=True)
class HalfSpace:
    """``{y : d'y <= offset}``; the retained side of an envelope is ``d'y >= offset``."""

    direction: Direction
    offset: float

    def retains(self, point, tol=MEMBERSHIP_TOL):
        return float(np.dot(self.direction.vector, point)) >= self.offset - tol


@dataclass(frozen=True)
class Envelope:
    level: float
    vertices: np.ndarray
    directions: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)
    n_directions: int = 0
    empty: bool = False

    @property
    def generating_halfspaces(self):
        return [HalfSpace(Direction(d), float(q)) for d, q in zip(self.directions, self.offsets)]

    @property
    def empty_flag(self):
        return self.empty

    def area(self):
        if self.empty:
            return 0.0
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def centroid(self):
        return self.vertices.mean(axis=0)


def _as_points(points):
    pts = np.ascontiguousarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("points must be an n x K matrix")
    if pts.shape[0] == 0:
        raise QuantileError("empty sample")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain NaN or infinite values")
    return pts


def _as_direction_array(d, K):
    vec = d.vector if isinstance(d, Direction) else Direction(d).vector
    if vec.size != K:
        raise ValueError(f"direction has {vec.size} components but points have {K} columns")
    return vec


def direction_grid(n_directions):
    """Unit directions at angles ``2 pi k / n``, k = 0..n-1."""
    theta = 2.0 * np.pi * np.arange(n_directions) / n_directions
    return np.column_stack([np.cos(theta), np.sin(theta)])


def directional_quantile(points, d, p):
    """Type-1 ``p``-quantile of the projections ``d'y_i``."""
    p = check_level(p)
    pts = _as_points(points)
    vec = _as_direction_array(d, pts.shape[1])
    k = kernels.order_index(pts.shape[0], p)
    return float(kernels.directional_kth(pts, vec[None, :].copy(), k)[0])


def directional_quantiles(points, directions, p):
    """Vectorised :func:`directional_quantile` over the rows of ``directions``."""
    p = check_level(p)
    pts = _as_points(points)
    dirs = np.ascontiguousarray(directions, dtype=float)
    if dirs.ndim != 2 or dirs.shape[1] != pts.shape[1]:
        raise ValueError("directions must be an m x K matrix matching the points")
    k = kernels.order_index(pts.shape[0], p)
    return kernels.directional_kth(pts, dirs, k)


def _line_intersection(d1, q1, d2, q2):
    det = d1[0] * d2[1] - d1[1] * d2[0]
    return np.array([(q1 * d2[1] - q2 * d1[1]) / det, (d1[0] * q2 - d2[0] * q1) / det])


def intersect_halfplanes(directions, offsets):
    """Vertices (counter-clockwise) of ``{y : d_k'y >= q_k for all k}``.

    Deque-based half-plane intersection over the angularly sorted boundary
    lines. Returns ``None`` when the intersection is empty. The direction set
    must surround the origin (a bounded intersection).
    """
    dirs = np.asarray(directions, dtype=float)
    offs = np.asarray(offsets, dtype=float)
    # boundary direction with the retained side on its left
    ang = np.arctan2(-dirs[:, 0], dirs[:, 1])
    order = np.lexsort((-offs, ang))
    dirs, offs, ang = dirs[order], offs[order], ang[order]
    keep = np.ones(len(ang), dtype=bool)
    keep[1:] = np.abs(np.diff(ang)) > 1e-12
    dirs, offs = dirs[keep], offs[keep]

    scale = 1.0 + float(np.max(np.abs(offs)))
    eps = 1e-11 * scale

    def outside(i, pt):
        return dirs[i, 0] * pt[0] + dirs[i, 1] * pt[1] < offs[i] - eps

    def meet(i, j):
        return _line_intersection(dirs[i], offs[i], dirs[j], offs[j])

    def parallel(i, j):
        return abs(dirs[i, 0] * dirs[j, 1] - dirs[i, 1] * dirs[j, 0]) < 1e-14

    dq = []
    for i in range(len(offs)):
        while len(dq) >= 2 and outside(i, meet(dq[-1], dq[-2])):
            dq.pop()
        while len(dq) >= 2 and outside(i, meet(dq[0], dq[1])):
            dq.pop(0)
        if dq and parallel(i, dq[-1]):
            # opposite boundaries: the strip between them must be nonempty
            if offs[i] + offs[dq[-1]] > eps:
                return None
            continue
        dq.append(i)
    while len(dq) >= 3 and outside(dq[0], meet(dq[-1], dq[-2])):
        dq.pop()
    while len(dq) >= 3 and outside(dq[-1], meet(dq[0], dq[1])):
        dq.pop(0)
    if len(dq) < 3:
        return None

    verts = np.array([meet(dq[t], dq[(t + 1) % len(dq)]) for t in range(len(dq))])
    if not np.all(np.isfinite(verts)):
        return None
    # a spurious polygon from an infeasible system violates some constraint
    slack = verts @ dirs.T - offs[None, :]
    if np.any(slack < -MEMBERSHIP_TOL):
        return None
    return _dedupe(verts, scale)


def _dedupe(verts, scale):
    out = [verts[0]]
    for v in verts[1:]:
        if np.max(np.abs(v - out[-1])) > 1e-10 * scale:
            out.append(v)
    if len(out) > 1 and np.max(np.abs(out[-1] - out[0])) <= 1e-10 * scale:
        out.pop()
    return np.array(out)


def is_convex_ccw(verts, tol=1e-12):
    if len(verts) < 3:
        return False
    e = np.roll(verts, -1, axis=0) - verts
    cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    scale = float(np.max(np.abs(e))) ** 2 or 1.0
    return bool(np.all(cross >= -tol * scale))


def _collect_directions(n_directions, extra_directions):
    if n_directions < 8:
        raise ValueError(f"n_directions must be at least 8, got {n_directions}")
    dirs = direction_grid(n_directions)
    extra = [_as_direction_array(d, 2) for d in (extra_directions or ())]
    if extra:
        dirs = np.vstack([dirs, np.array(extra)])
    return np.ascontiguousarray(dirs)


def _envelope_from_offsets(p, dirs, offsets, n_directions):
    verts = intersect_halfplanes(dirs, offsets)
    if verts is None:
        return Envelope(p, np.empty((0, 2)), dirs, offsets, n_directions, empty=True)
    if len(verts) < 3:
        raise DegenerateGeometryError(
            "envelope collapses to fewer than 3 distinct vertices (degenerate geometry)"
        )
    return Envelope(p, verts, dirs, offsets, n_directions, empty=False)


def _check_envelope_level(p):
    p = check_level(p)
    if p > 0.5:
        raise ValueError(
            f"envelope level must satisfy 0 < p <= 0.5 (use the opposite direction for 1-p), got {p}"
        )
    return p


def build_envelope(points, p, n_directions=360, extra_directions=()):
    """Directional quantile envelope of a 2-D point cloud at level ``p``.

    ``extra_directions`` are added to the uniform angular grid; injecting the
    allometric direction makes the corresponding tangent line exact.
    """
    p = _check_envelope_level(p)
    pts = _as_points(points)
    if pts.shape[1] != 2:
        raise ValueError("envelopes are built for bivariate data only")
    dirs = _collect_directions(n_directions, extra_directions)
    offsets = directional_quantiles(pts, dirs, p)
    return _envelope_from_offsets(p, dirs, offsets, n_directions)


def contains(envelope, point, tol=MEMBERSHIP_TOL):
    """Membership in the envelope via its generating half-space constraints.

    Accepts a single point (returns bool) or an n x 2 array (returns a bool array).
    Boundary points count as inside.
    """
    if envelope.empty:
        raise ValueError("empty envelope")
    pts = np.asarray(point, dtype=float)
    single = pts.ndim == 1
    pts = np.ascontiguousarray(np.atleast_2d(pts))
    inside = kernels.halfspace_inside(pts, envelope.directions, envelope.offsets, tol)
    return bool(inside[0]) if single else inside


# ----------------------------------------------------------------------------
# conditional envelopes


@dataclass(frozen=True)
class GroupedDesign:
    """Intercept plus one dummy column per non-reference group."""

    labels: np.ndarray
    groups: tuple
    reference: object

    @classmethod
    def from_labels(cls, labels, reference=None, order=None):
        labels = np.asarray(labels)
        groups = tuple(order) if order is not None else tuple(sorted(set(labels.tolist())))
        missing = set(labels.tolist()) - set(groups)
        if missing:
            raise ValueError(f"labels not in group order: {sorted(missing)}")
        if reference is None:
            reference = groups[0]
        if reference not in groups:
            raise ValueError(f"reference group {reference!r} not among groups")
        return cls(labels, groups, reference)

    @property
    def others(self):
        return [g for g in self.groups if g != self.reference]

    def matrix(self):
        n = self.labels.shape[0]
        cols = [np.ones(n)] + [(self.labels == g).astype(float) for g in self.others]
        return np.column_stack(cols)

    def group_row(self, g):
        return np.array([1.0] + [1.0 if g == h else 0.0 for h in self.others])


def conditional_envelopes(points, design, p, n_directions=360, extra_directions=(),
                          log_scale=False, max_iter=30):
    """Per-group envelopes from directional quantile regressions on a dummy design.

    For every direction the projection ``d'Z`` is regressed on ``design`` at
    level ``p``; each group's offset is its fitted conditional quantile. With
    the saturated dummy design this reproduces the per-group empirical
    envelopes. ``extra_directions`` may be a list (shared) or a dict keyed by
    group. ``max_iter`` caps the IRLS warm start; exactness comes from the
    pivoting finish.
    """
    p = _check_envelope_level(p)
    pts = _as_points(points)
    if log_scale:
        if np.any(pts <= 0):
            bad = int(np.flatnonzero(np.any(pts <= 0, axis=1))[0])
            raise ValueError(f"log scale requested but row {bad} is not strictly positive")
        pts = np.log10(pts)
    if not isinstance(design, GroupedDesign):
        design = GroupedDesign.from_labels(design)
    if design.labels.shape[0] != pts.shape[0]:
        raise ValueError("design labels and points differ in length")
    sizes = {g: int(np.sum(design.labels == g)) for g in design.groups}
    small = [g for g, m in sizes.items() if m < 3]
    if small:
        raise ValueError(f"groups with fewer than 3 records: {small}")

    if isinstance(extra_directions, dict):
        shared = []
        extra_by_group = {g: [_as_direction_array(d, 2) for d in extra_directions.get(g, ())]
                          for g in design.groups}
    else:
        shared = [_as_direction_array(d, 2) for d in extra_directions]
        extra_by_group = {g: [] for g in design.groups}
    base = _collect_directions(n_directions, shared)
    all_extra = [d for g in design.groups for d in extra_by_group[g]]
    dirs = np.vstack([base] + ([np.array(all_extra)] if all_extra else []))

    X = design.matrix()
    rows = np.array([design.group_row(g) for g in design.groups])
    fitted = np.empty((len(design.groups), dirs.shape[0]))
    for t in range(dirs.shape[0]):
        proj = kernels.project(pts, np.ascontiguousarray(dirs[t]))
        fit = quantile_regression(X, proj, p, max_iter=max_iter)
        fitted[:, t] = rows @ fit.coefficients

    out = {}
    nb = base.shape[0]
    offset = nb
    extra_slices = {}
    for g in design.groups:
        m = len(extra_by_group[g])
        extra_slices[g] = (offset, offset + m)
        offset += m
    for gi, g in enumerate(design.groups):
        lo, hi = extra_slices[g]
        idx = np.r_[np.arange(nb), np.arange(lo, hi)]
        g_dirs = np.ascontiguousarray(dirs[idx])
        out[g] = _envelope_from_offsets(p, g_dirs, fitted[gi, idx].copy(), n_directions)
    return out
