"""
Bivariate allometry on the log10 scale.

The model ``y2 = a * y1**b`` becomes the line ``log10 y2 = log10 a + b log10 y1``.
The slope is estimated by standardised major axis (SMA, the default), major
axis (MA) or median regression. The allometric ratio ``R = y2 / y1**b`` has
quantiles that are the intercepts of the lines tangent to the directional
quantile envelope in the allometric direction ``(b, -1)``.
"""

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .dqe import Direction
from .quantile_core import check_level, empirical_quantile, quantile_regression

METHODS = ("SMA", "MA", "MEDIAN")


class AllometryError(ValueError):
    pass


@dataclass(frozen=True)
class AllometricFit:
    log10_a: float
    b: float
    se_log10_a: float
    se_b: float
    r: float
    n: int
    method: str
    group: object = None

    @property
    def a(self):
        return 10.0 ** self.log10_a

    @property
    def valid(self):
        return self.b > 0

    def to_dict(self):
        d = asdict(self)
        if self.group is None:
            d.pop("group")
        return d


@dataclass(frozen=True)
class RatioCutoff:
    level: float
    value: float
    se: float = 0.0
    group: object = None


@dataclass(frozen=True)
class TangentLine:
    """``log10 y2 = intercept + slope * log10 y1``."""

    intercept: float
    slope: float
    level: float
    side: str

    def __call__(self, log10_y1):
        return self.intercept + self.slope * np.asarray(log10_y1, dtype=float)


@dataclass(frozen=True)
class SlopeHomogeneityTest:
    groups: tuple
    statistic: float
    p_value: float
    slopes: tuple = ()
    method: str = "permutation"


def _normalise_method(method):
    m = str(method).upper()
    if m not in METHODS:
        raise AllometryError(f"unknown method {method!r}; expected one of {METHODS}")
    return m


def _positive_logs(y1, y2):
    y1 = np.asarray(y1, dtype=float).ravel()
    y2 = np.asarray(y2, dtype=float).ravel()
    if y1.shape != y2.shape:
        raise AllometryError(f"samples differ in length ({y1.size} vs {y2.size})")
    if y1.size < 3:
        raise AllometryError(f"need at least 3 observations, got {y1.size}")
    bad = ~((y1 > 0) & (y2 > 0) & np.isfinite(y1) & np.isfinite(y2))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise AllometryError(f"nonpositive or non-finite value at row {i}: ({y1[i]}, {y2[i]})")
    return np.log10(y1), np.log10(y2)


def _slope_ma(s11, s22, s12):
    if s12 == 0.0:
        raise AllometryError("zero covariance: major axis is parallel to a coordinate axis")
    delta = s22 - s11
    root = np.hypot(delta, 2.0 * s12)
    # two algebraically equal forms; pick the one without cancellation
    if delta >= 0:
        return (delta + root) / (2.0 * s12)
    return 2.0 * s12 / (root - delta)


def _line_fit(z1, z2, method):
    m1, m2 = z1.mean(), z2.mean()
    d1, d2 = z1 - m1, z2 - m2
    s11 = float(np.dot(d1, d1))
    if s11 <= 1e-24 * max(1.0, m1 * m1) * z1.size:
        raise AllometryError("zero variance in log10 y1: slope is undefined")
    if method == "MEDIAN":
        X = np.column_stack([np.ones(z1.size), z1])
        coef = quantile_regression(X, z2, 0.5).coefficients
        return float(coef[0]), float(coef[1])
    s22 = float(np.dot(d2, d2))
    s12 = float(np.dot(d1, d2))
    if method == "SMA":
        b = np.sqrt(s22 / s11)
        if s12 < 0:
            b = -b
    else:
        b = _slope_ma(s11, s22, s12)
    return float(m2 - b * m1), float(b)


def _bootstrap_seeds(seed, B):
    return np.random.SeedSequence(seed).spawn(B)


def fit_allometric(y1, y2, method="SMA", bootstrap=200, seed=0, group=None):
    """Fit ``y2 = a * y1**b`` on the log10 scale.

    Standard errors come from a nonparametric bootstrap with ``bootstrap``
    resamples (0 disables it); each resample draws from its own child seed so
    results do not depend on evaluation order.
    """
    method = _normalise_method(method)
    z1, z2 = _positive_logs(y1, y2)
    log10_a, b = _line_fit(z1, z2, method)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = float(np.corrcoef(z1, z2)[0, 1]) if np.std(z2) > 0 else 0.0
    if not np.isfinite(r):
        r = 0.0
    se_a = se_b = 0.0
    if bootstrap:
        n = z1.size
        draws = np.empty((bootstrap, 2))
        for t, ss in enumerate(_bootstrap_seeds(seed, bootstrap)):
            idx = np.random.default_rng(ss).integers(0, n, n)
            try:
                draws[t] = _line_fit(z1[idx], z2[idx], method)
            except AllometryError:
                draws[t] = np.nan
        ok = np.all(np.isfinite(draws), axis=1)
        if ok.sum() >= 2:
            se_a, se_b = (float(v) for v in np.std(draws[ok], axis=0, ddof=1))
    if b <= 0:
        warnings.warn(f"allometric slope b={b:.4g} is not positive; ratio classification is undefined",
                      RuntimeWarning, stacklevel=2)
    return AllometricFit(log10_a, b, se_a, se_b, r, int(z1.size), method, group)


def ratio(y1, y2, b):
    """Allometric ratio ``y2 / y1**b`` (scalar or elementwise)."""
    a1 = np.asarray(y1, dtype=float)
    a2 = np.asarray(y2, dtype=float)
    if np.any(a1 <= 0) or np.any(a2 <= 0):
        raise AllometryError("ratio requires strictly positive measurements")
    out = a2 / a1 ** b
    return float(out) if out.ndim == 0 else out


def ratio_cutoff(y1, y2, fit, level, bootstrap=200, seed=0):
    """Type-1 quantile of the allometric ratio at ``level``, with bootstrap SE.

    Each bootstrap resample refits the slope with ``fit.method`` before taking
    the ratio quantile, so the SE carries the slope uncertainty too.
    """
    level = check_level(level)
    z1, z2 = _positive_logs(y1, y2)
    y1 = np.asarray(y1, dtype=float).ravel()
    y2 = np.asarray(y2, dtype=float).ravel()
    value = empirical_quantile(ratio(y1, y2, fit.b), level)
    se = 0.0
    if bootstrap:
        n = y1.size
        vals = []
        for ss in _bootstrap_seeds(seed, bootstrap):
            idx = np.random.default_rng(ss).integers(0, n, n)
            try:
                _, b = _line_fit(z1[idx], z2[idx], fit.method)
            except AllometryError:
                continue
            vals.append(empirical_quantile(y2[idx] / y1[idx] ** b, level))
        if len(vals) >= 2:
            se = float(np.std(vals, ddof=1))
    return RatioCutoff(level, value, se, fit.group)


def allometric_direction(fit):
    """Unit vector along ``(b, -1)``; accepts a fit or a bare slope."""
    b = fit.b if isinstance(fit, AllometricFit) else float(fit)
    return Direction((b, -1.0))


def tangent_lines(fit, cutoff_low, cutoff_high):
    """Lower and upper tangent lines ``log10 y2 = log10 Q_R + b log10 y1``."""
    b = fit.b if isinstance(fit, AllometricFit) else float(fit)
    lower = TangentLine(float(np.log10(cutoff_low.value)), b, cutoff_low.level, "lower")
    upper = TangentLine(float(np.log10(cutoff_high.value)), b, cutoff_high.level, "upper")
    return lower, upper


def _weighted_slope_spread(slopes, sizes):
    w = sizes / sizes.sum()
    mean = np.sum(w * slopes)
    return float(np.sum(w * (slopes - mean) ** 2))


def slope_homogeneity(groups, method="SMA", n_permutations=999, seed=0):
    """Permutation test that all groups share one allometric slope.

    The statistic is the size-weighted variance of the group slopes; the null
    distribution permutes group labels over the pooled records after centring
    each group, so differing intercepts do not masquerade as slope differences.
    """
    method = _normalise_method(method)
    labels = list(groups)
    if len(labels) < 2:
        raise AllometryError("slope homogeneity needs at least two groups")
    small = [g for g in labels if np.asarray(groups[g][0]).size < 3]
    if small:
        raise AllometryError(f"groups with fewer than 3 records: {small}")
    z = [_positive_logs(*groups[g]) for g in labels]
    sizes = np.array([zz[0].size for zz in z], dtype=float)
    slopes = np.array([_line_fit(z1, z2, method)[1] for z1, z2 in z])
    observed = _weighted_slope_spread(slopes, sizes)

    z1_all = np.concatenate([zz[0] - zz[0].mean() for zz in z])
    z2_all = np.concatenate([zz[1] - zz[1].mean() for zz in z])
    bounds = np.cumsum(np.r_[0, sizes.astype(int)])
    exceed = 0
    done = 0
    for ss in _bootstrap_seeds(seed, n_permutations):
        perm = np.random.default_rng(ss).permutation(z1_all.size)
        try:
            ps = np.array([
                _line_fit(z1_all[perm[lo:hi]], z2_all[perm[lo:hi]], method)[1]
                for lo, hi in zip(bounds[:-1], bounds[1:])
            ])
        except AllometryError:
            continue
        done += 1
        if _weighted_slope_spread(ps, sizes) >= observed * (1.0 - 1e-12):
            exceed += 1
    p_value = (1.0 + exceed) / (1.0 + done)
    return SlopeHomogeneityTest(tuple(labels), observed, float(p_value), tuple(slopes.tolist()))
