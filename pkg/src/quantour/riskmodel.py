"""
Growth categories, ratio strata and log-link relative-risk models.

Records are classified into four BW/HC quadrants against univariate cutoffs
(strictly below the cutoff is subnormal) and into ratio strata against
allometric-ratio quantiles. Relative risks come from a log-binomial GLM,
falling back to a Poisson working model with sandwich covariance when the
log-binomial fit does not converge.
"""

import csv
import io
import warnings
from dataclasses import dataclass, field
from enum import Enum
from itertools import product

import numpy as np

from .allometry import RatioCutoff, ratio
from .cohort import DEFAULT_GA_GROUPS, ga_group_labels
from .quantile_core import check_level, empirical_quantile

Z95 = 1.959964


class RiskModelError(ValueError):
    pass


class SeparationError(RiskModelError):
    def __init__(self, column, outcome):
        super().__init__(f"separation: every outcome in cell {column!r} equals {outcome}")
        self.column = column
        self.outcome = outcome


class GrowthCategory(Enum):
    NORMAL_BW_NORMAL_HC = "I"
    SUBNORMAL_BW_NORMAL_HC = "II"
    SUBNORMAL_BW_SUBNORMAL_HC = "III"
    NORMAL_BW_SUBNORMAL_HC = "IV"

    @property
    def bw_status(self):
        return "subnormal" if self.name.startswith("SUBNORMAL_BW") else "normal"

    @property
    def hc_status(self):
        return "subnormal" if self.name.endswith("SUBNORMAL_HC") else "normal"

    @classmethod
    def from_flags(cls, sub_bw, sub_hc):
        if sub_bw:
            return cls.SUBNORMAL_BW_SUBNORMAL_HC if sub_hc else cls.SUBNORMAL_BW_NORMAL_HC
        return cls.NORMAL_BW_SUBNORMAL_HC if sub_hc else cls.NORMAL_BW_NORMAL_HC


class RatioStratum(Enum):
    NORMAL_RATIO = "normal"
    SUPRANORMAL_RATIO = "supranormal"
    SUBNORMAL_RATIO = "subnormal"


# table row order: Normal/Normal, Normal/<10th, <10th/Normal, <10th/<10th
TABLE_ORDER = (
    GrowthCategory.NORMAL_BW_NORMAL_HC,
    GrowthCategory.NORMAL_BW_SUBNORMAL_HC,
    GrowthCategory.SUBNORMAL_BW_NORMAL_HC,
    GrowthCategory.SUBNORMAL_BW_SUBNORMAL_HC,
)


# ----------------------------------------------------------------------------
# cutoffs

CUTOFF_HEADER = ("sex", "ga_group", "variable", "level", "cutoff")


def _fmt(x):
    return repr(float(x))


@dataclass
class CutoffTable:
    rows: dict
    source: str = "internal-empirical"
    _raw: dict = field(default_factory=dict, repr=False)
    _order: list = field(default_factory=list, repr=False)

    def get(self, sex, group, variable, level):
        key = (sex, group, variable, round(float(level), 12))
        try:
            return self.rows[key]
        except KeyError:
            raise RiskModelError(f"no {variable} cutoff for sex={sex} group={group} level={level}") from None

    def cells(self):
        return sorted({(k[0], k[1]) for k in self.rows})

    def to_csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CUTOFF_HEADER)
        keys = self._order or sorted(self.rows, key=lambda k: (k[0], k[1], k[2], k[3]))
        for k in keys:
            raw = self._raw.get(k)
            if raw is not None:
                w.writerow(raw)
            else:
                w.writerow([k[0], k[1], k[2], _fmt(k[3]), _fmt(self.rows[k])])
        return buf.getvalue()

    @classmethod
    def from_csv_text(cls, text, source="external-file"):
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CUTOFF_HEADER:
            raise RiskModelError(f"cutoff table header must be {','.join(CUTOFF_HEADER)}")
        rows, raw, order = {}, {}, []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(CUTOFF_HEADER):
                raise RiskModelError(f"cutoff table line {lineno}: expected 5 fields")
            sex, grp, var, lvl, val = rec
            try:
                lvl_f, val_f = float(lvl), float(val)
            except ValueError:
                raise RiskModelError(f"cutoff table line {lineno}: malformed number") from None
            if var not in ("BW", "HC"):
                raise RiskModelError(f"cutoff table line {lineno}: variable must be BW or HC")
            if not val_f > 0:
                raise RiskModelError(f"cutoff table line {lineno}: cutoff must be positive")
            key = (sex, grp, var, round(lvl_f, 12))
            if key in rows:
                raise RiskModelError(f"cutoff table line {lineno}: duplicate row for {key[:3]}")
            rows[key] = val_f
            raw[key] = rec
            order.append(key)
        return cls(rows, source, raw, order)

    @classmethod
    def load(cls, path):
        with open(path, newline="") as fh:
            return cls.from_csv_text(fh.read())


def build_cutoffs(cohort, level=0.1, groups=DEFAULT_GA_GROUPS, min_cell=20):
    """Per (sex, GA group) type-1 quantiles of BW and HC."""
    level = check_level(level)
    labels = ga_group_labels(cohort.ga_days, groups)
    cells = [(s, f"({lo},{hi}]") for s in ("F", "M") for lo, hi in groups]
    counts = {c: int(np.sum((cohort.sex == c[0]) & (labels == c[1]))) for c in cells}
    present = {c: m for c, m in counts.items() if m > 0}
    small = [f"{s}{g}(n={m})" for (s, g), m in present.items() if m < min_cell]
    if small:
        raise RiskModelError(f"cells below the minimum size {min_cell}: {', '.join(small)}")
    rows = {}
    for (s, g) in present:
        mask = (cohort.sex == s) & (labels == g)
        rows[(s, g, "BW", round(level, 12))] = empirical_quantile(cohort.bw_g[mask], level)
        rows[(s, g, "HC", round(level, 12))] = empirical_quantile(cohort.hc_cm[mask], level)
    return CutoffTable(rows)


# ----------------------------------------------------------------------------
# classification


def _slope(fit):
    return float(getattr(fit, "b", fit))


def _ratio_thresholds(ratio_cutoffs):
    """Normalise the per-group ratio cutoff spec to ``(low or None, high)``."""
    if isinstance(ratio_cutoffs, RatioCutoff):
        return None, ratio_cutoffs
    lo, hi = ratio_cutoffs
    return lo, hi


def classify(record, cutoffs, fits, ratio_cutoffs, level=0.1, groups=DEFAULT_GA_GROUPS):
    """Quadrant category and ratio stratum of one record.

    ``fits`` maps GA group -> AllometricFit (or slope); ``ratio_cutoffs`` maps
    GA group -> RatioCutoff at ``1 - p`` or a ``(low, high)`` pair.
    """
    group = ga_group_labels([record.ga_days], groups)[0]
    if group is None:
        raise RiskModelError(f"record {record.id}: gestational age outside the configured groups")
    for table, name in ((fits, "fit"), (ratio_cutoffs, "ratio cutoff")):
        if group not in table:
            raise RiskModelError(f"record {record.id}: no {name} for group {group}")
    bw_cut = cutoffs.get(record.sex, group, "BW", level)
    hc_cut = cutoffs.get(record.sex, group, "HC", level)
    category = GrowthCategory.from_flags(record.bw_g < bw_cut, record.hc_cm < hc_cut)
    R = ratio(record.bw_g, record.hc_cm, _slope(fits[group]))
    return category, _stratum(R, *_ratio_thresholds(ratio_cutoffs[group]))


def _stratum(R, low, high):
    if R > high.value:
        return RatioStratum.SUPRANORMAL_RATIO
    if low is not None and R < low.value:
        return RatioStratum.SUBNORMAL_RATIO
    return RatioStratum.NORMAL_RATIO


@dataclass
class Classification:
    ga_group: np.ndarray
    category: np.ndarray
    stratum: np.ndarray
    ratio: np.ndarray


def classify_cohort(cohort, cutoffs, fits, ratio_cutoffs, level=0.1, groups=DEFAULT_GA_GROUPS):
    """Vectorised :func:`classify` over a cohort."""
    labels = ga_group_labels(cohort.ga_days, groups)
    n = len(cohort)
    cat = np.empty(n, dtype=object)
    strat = np.empty(n, dtype=object)
    R = np.full(n, np.nan)
    if np.any(labels == None):  # noqa: E711
        i = int(np.flatnonzero(labels == None)[0])  # noqa: E711
        raise RiskModelError(f"record {cohort.id[i]}: gestational age outside the configured groups")
    for g in sorted(set(labels.tolist())):
        if g not in fits or g not in ratio_cutoffs:
            raise RiskModelError(f"no allometric fit or ratio cutoff for group {g}")
        gm = labels == g
        low, high = _ratio_thresholds(ratio_cutoffs[g])
        R[gm] = ratio(cohort.bw_g[gm], cohort.hc_cm[gm], _slope(fits[g]))
        for s in ("F", "M"):
            m = gm & (cohort.sex == s)
            if not m.any():
                continue
            sub_bw = cohort.bw_g[m] < cutoffs.get(s, g, "BW", level)
            sub_hc = cohort.hc_cm[m] < cutoffs.get(s, g, "HC", level)
            cat[m] = [GrowthCategory.from_flags(a, b) for a, b in zip(sub_bw, sub_hc)]
        strat[gm] = [_stratum(r, low, high) for r in R[gm]]
    return Classification(labels, cat, strat, R)


# ----------------------------------------------------------------------------
# GLM


@dataclass(frozen=True)
class GLMFit:
    coefficients: np.ndarray
    covariance: np.ndarray
    converged: bool
    model: str
    names: tuple
    iterations: int = 0

    @property
    def se(self):
        return np.sqrt(np.diag(self.covariance))

    def index(self, name):
        return self.names.index(name)

    def relative_risk(self, name, z=Z95):
        j = self.index(name)
        c, s = self.coefficients[j], self.se[j]
        return float(np.exp(c)), float(np.exp(c - z * s)), float(np.exp(c + z * s))


def _check_design(y, X, names):
    n, q = X.shape
    if n < q:
        raise RiskModelError(f"need at least as many records ({n}) as columns ({q})")
    if not np.all((y == 0) | (y == 1)):
        raise RiskModelError("outcomes must be 0 or 1")
    for j in range(1, q + 1):
        if np.linalg.matrix_rank(X[:, :j]) < j:
            raise RiskModelError(f"design matrix is rank deficient at column {names[j - 1]!r}")
    if np.all(y == y[0]):
        raise SeparationError(names[0], int(y[0]))
    for j in range(q):
        col = X[:, j]
        if np.all(col == 1):
            continue
        if np.all((col == 0) | (col == 1)):
            cell = y[col == 1]
            if cell.size and np.all(cell == cell[0]):
                raise SeparationError(names[j], int(cell[0]))


def _irls_log_binomial(y, X, tol, max_iter):
    beta = np.zeros(X.shape[1])
    beta[0] = np.log(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    eta = X @ beta

    def deviance(mu):
        mu = np.clip(mu, 1e-300, 1 - 1e-15)
        return -2.0 * np.sum(y * np.log(mu) + (1 - y) * np.log1p(-mu))

    mu = np.exp(eta)
    dev = deviance(mu)
    for it in range(1, max_iter + 1):
        w = mu / (1.0 - mu)
        z = eta + (y - mu) / mu
        XtW = X.T * w
        step = np.linalg.solve(XtW @ X, XtW @ z) - beta
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            eta_c = X @ cand
            if np.max(eta_c) < -1e-8:
                mu_c = np.exp(eta_c)
                dev_c = deviance(mu_c)
                if dev_c <= dev + 1e-10 * abs(dev):
                    break
            t *= 0.5
        else:
            return beta, False, it
        beta, eta, mu = cand, eta_c, mu_c
        change = abs(dev - dev_c) / (abs(dev_c) + 0.1)
        dev = dev_c
        if change < tol:
            # a fit pinned against mu = 1 has no usable information matrix
            return beta, bool(np.max(mu) < 1 - 1e-6), it
    return beta, False, max_iter


def _irls_poisson(y, X, tol, max_iter):
    beta = np.zeros(X.shape[1])
    beta[0] = np.log(max(y.mean(), 1e-6))
    dev = np.inf
    for it in range(1, max_iter + 1):
        mu = np.exp(X @ beta)
        z = X @ beta + (y - mu) / mu
        XtW = X.T * mu
        beta = np.linalg.solve(XtW @ X, XtW @ z)
        mu = np.exp(X @ beta)
        with np.errstate(divide="ignore", invalid="ignore"):
            new = 2.0 * np.sum(np.where(y > 0, y * np.log(y / mu), 0.0) - (y - mu))
        if abs(dev - new) / (abs(new) + 0.1) < tol:
            return beta, True, it
        dev = new
    return beta, False, max_iter


def fit_glm(y, X, names=None, model="auto", tol=1e-10, max_iter=100):
    """Log-link GLM for a binary outcome; ``exp(coef)`` are relative risks.

    ``model="auto"`` fits log-binomial by IRLS with step-halving and falls
    back to a Poisson working model with sandwich covariance when the
    log-binomial fit fails. The first column of ``X`` must be the intercept.
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise RiskModelError("names must match the design columns")
    if y.size != X.shape[0]:
        raise RiskModelError("outcome and design differ in length")
    _check_design(y, X, names)

    if model in ("auto", "log-binomial"):
        beta, ok, it = _irls_log_binomial(y, X, tol, max_iter)
        if ok:
            mu = np.exp(X @ beta)
            info = (X.T * (mu / (1.0 - mu))) @ X
            cov = np.linalg.inv(info)
            return GLMFit(beta, (cov + cov.T) / 2, True, "log-binomial", names, it)
        if model == "log-binomial":
            return GLMFit(beta, np.full((X.shape[1],) * 2, np.nan), False, "log-binomial", names, it)

    beta, ok, it = _irls_poisson(y, X, tol, max_iter)
    mu = np.exp(X @ beta)
    bread = np.linalg.inv((X.T * mu) @ X)
    meat = (X.T * (y - mu) ** 2) @ X
    cov = bread @ meat @ bread
    return GLMFit(beta, (cov + cov.T) / 2, ok, "poisson-robust", names, it)


# ----------------------------------------------------------------------------
# risk tables

RISK_HEADER = ("bw_status", "hc_status", "stratum", "n", "estimate", "lower", "upper",
               "is_baseline", "model_tag")


@dataclass
class RiskRow:
    category: GrowthCategory
    stratum: str
    n: int
    estimate: float
    lower: float
    upper: float
    is_baseline: bool
    model_tag: str

    @property
    def bw_status(self):
        return self.category.bw_status

    @property
    def hc_status(self):
        return self.category.hc_status


@dataclass
class RiskTable:
    rows: list

    def row(self, category, stratum=None):
        for r in self.rows:
            if r.category == category and (stratum is None or r.stratum == stratum):
                return r
        raise KeyError((category, stratum))

    def strata(self):
        seen = []
        for r in self.rows:
            if r.stratum not in seen:
                seen.append(r.stratum)
        return seen

    def to_csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RISK_HEADER)
        for r in self.rows:
            nums = ["NA" if not np.isfinite(v) else f"{v:.6f}" for v in (r.estimate, r.lower, r.upper)]
            w.writerow([r.bw_status, r.hc_status, r.stratum, r.n, *nums,
                        int(r.is_baseline), r.model_tag])
        return buf.getvalue()


def adjustment_design(sex, ga_group, terms=("sex", "ga", "interaction"), ga_levels=None):
    """Intercept-free adjustment columns (sex, GA dummies and their product)."""
    cols, names = [], []
    ga_levels = ga_levels or sorted(set(ga_group.tolist()))
    ga_dummies = [(g, (ga_group == g).astype(float)) for g in ga_levels[1:]]
    male = (sex == "M").astype(float)
    if "sex" in terms:
        cols.append(male)
        names.append("sex[M]")
    if "ga" in terms:
        for g, d in ga_dummies:
            cols.append(d)
            names.append(f"ga{g}")
    if "interaction" in terms and "sex" in terms and "ga" in terms:
        for g, d in ga_dummies:
            cols.append(male * d)
            names.append(f"sex[M]:ga{g}")
    n = sex.shape[0]
    X = np.column_stack(cols) if cols else np.empty((n, 0))
    # drop columns that are constant or redundant within this subset
    # (e.g. sex terms inside a single-sex stratum)
    keep = []
    basis = np.ones((n, 1))
    for j in range(X.shape[1]):
        if np.ptp(X[:, j]) == 0:
            continue
        cand = np.column_stack([basis, X[:, j]])
        if np.linalg.matrix_rank(cand) == cand.shape[1]:
            basis = cand
            keep.append(j)
    return X[:, keep], [names[j] for j in keep]


def _category_name(c):
    return f"cat[{c.value}]"


def _stratum_fit(died, categories, adj, adj_names, cats):
    """Fit one stratum, dropping separated dummies.

    Returns ``(fit, X, dropped categories)``. A separated adjustment dummy is
    folded into its reference level.
    """
    present = [c for c in cats[1:] if np.any(categories == c)]
    adj_keep = list(range(adj.shape[1]))
    dropped = []
    while True:
        cols = [np.ones(died.size)] + [(categories == c).astype(float) for c in present]
        cols += [adj[:, j] for j in adj_keep]
        names = ["(intercept)"] + [_category_name(c) for c in present] + [adj_names[j] for j in adj_keep]
        X = np.column_stack(cols)
        try:
            return fit_glm(died, X, names), X, dropped
        except SeparationError as err:
            hit = [c for c in present if _category_name(c) == err.column]
            if hit:
                present.remove(hit[0])
                dropped.append(hit[0])
                continue
            adj_hit = [j for j in adj_keep if adj_names[j] == err.column]
            if not adj_hit:
                raise
            warnings.warn(f"adjustment column {err.column!r} is separated; merged into its reference level",
                          RuntimeWarning, stacklevel=3)
            adj_keep.remove(adj_hit[0])


def _baseline_risk(fit, X, z=Z95):
    """Adjusted baseline risk averaged over the stratum's covariate mix."""
    Xb = X.copy()
    cat_cols = [j for j, nm in enumerate(fit.names) if nm.startswith("cat[")]
    Xb[:, cat_cols] = 0.0
    mu = np.exp(Xb @ fit.coefficients)
    m = float(mu.mean())
    grad = (Xb * mu[:, None]).mean(axis=0)
    se_log = float(np.sqrt(grad @ fit.covariance @ grad)) / m
    return m, m * np.exp(-z * se_log), m * np.exp(z * se_log)


def _empty_row(category, label, n, tag):
    return RiskRow(category, label, n, np.nan, np.nan, np.nan,
                   category == GrowthCategory.NORMAL_BW_NORMAL_HC, tag)


def risk_table(cohort, classification, strata=(), adjustment=("sex", "ga", "interaction"),
               omit_normal_bw_subnormal_hc=None):
    """Adjusted baseline risks and relative risks per stratum.

    ``strata`` is a sequence drawn from {"sex", "ratio", "htn"}; one block of
    rows is produced for each combination of levels. Categories absent from a
    stratum get no row; a stratum with no records gets one flagged row with
    N=0. With a ratio split the normal-BW/subnormal-HC row is omitted unless
    told otherwise.
    """
    strata = tuple(strata)
    unknown = set(strata) - {"sex", "ratio", "htn"}
    if unknown:
        raise RiskModelError(f"unknown stratifier(s): {sorted(unknown)}")
    if omit_normal_bw_subnormal_hc is None:
        omit_normal_bw_subnormal_hc = "ratio" in strata
    shown = [c for c in TABLE_ORDER
             if not (omit_normal_bw_subnormal_hc and c == GrowthCategory.NORMAL_BW_SUBNORMAL_HC)]
    base = GrowthCategory.NORMAL_BW_NORMAL_HC

    keys = {
        "sex": (cohort.sex, [("F", "F"), ("M", "M")]),
        # normal means R <= Q_R(1-p), so subnormal ratios fall in it too
        "ratio": (classification.stratum == RatioStratum.SUPRANORMAL_RATIO,
                  [(False, "normal"), (True, "supranormal")]),
        "htn": (cohort.maternal_htn, [(0.0, "normotensive"), (1.0, "hypertensive")]),
    }
    levels = [keys[s][1] for s in strata]
    ga_levels = sorted(set(classification.ga_group.tolist()))
    rows = []
    for combo in product(*levels) if strata else [()]:
        mask = np.ones(len(cohort), dtype=bool)
        for s, (val, _) in zip(strata, combo):
            mask &= keys[s][0] == val
        label = ";".join(f"{s}={lab}" for s, (_, lab) in zip(strata, combo)) or "all"
        sub_cat = classification.category[mask]
        died = cohort.died[mask].astype(float)
        counts = {c: int(np.sum(sub_cat == c)) for c in TABLE_ORDER}
        if died.size == 0:
            rows.append(_empty_row(base, label, 0, "empty"))
            continue
        if counts[base] == 0:
            rows.append(_empty_row(base, label, 0, "empty"))
            rows.extend(_empty_row(c, label, counts[c], "no-baseline") for c in shown[1:] if counts[c])
            continue
        adj, adj_names = adjustment_design(cohort.sex[mask], classification.ga_group[mask],
                                           adjustment, ga_levels)
        try:
            fit, X, dropped = _stratum_fit(died, sub_cat, adj, adj_names, TABLE_ORDER)
        except SeparationError:
            rows.extend(_empty_row(c, label, counts[c], "separated") for c in shown if counts[c])
            continue
        est, lo, hi = _baseline_risk(fit, X)
        rows.append(RiskRow(base, label, counts[base], est, lo, hi, True, fit.model))
        for c in shown[1:]:
            if counts[c] == 0:
                continue
            if c in dropped:
                rows.append(_empty_row(c, label, counts[c], "separated"))
            else:
                rr, lo, hi = fit.relative_risk(_category_name(c))
                rows.append(RiskRow(c, label, counts[c], rr, lo, hi, False, fit.model))
    return RiskTable(rows)


def stratum_design(cohort, classification, mask, adjustment=("sex", "ga", "interaction")):
    """Outcome, design and column names of the GLM that :func:`risk_table` fits for one stratum."""
    sub_cat = classification.category[mask]
    ga_levels = sorted(set(classification.ga_group.tolist()))
    adj, adj_names = adjustment_design(cohort.sex[mask], classification.ga_group[mask],
                                       adjustment, ga_levels)
    died = cohort.died[mask].astype(float)
    fit, X, _ = _stratum_fit(died, sub_cat, adj, adj_names, TABLE_ORDER)
    return died, X, list(fit.names)


def bootstrap_relative_risk(y, X, names, category, B=200, seed=0, level=0.95):
    """Percentile bootstrap interval for one category's relative risk."""
    col = _category_name(category) if isinstance(category, GrowthCategory) else category
    point = fit_glm(y, X, names).relative_risk(col)[0]
    n = y.size
    draws = []
    for ss in np.random.SeedSequence(seed).spawn(B):
        idx = np.random.default_rng(ss).integers(0, n, n)
        try:
            draws.append(fit_glm(y[idx], X[idx], names).relative_risk(col)[0])
        except (RiskModelError, np.linalg.LinAlgError):
            continue
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [alpha, 1.0 - alpha])
    return point, float(lo), float(hi), len(draws)
