"""
Cohort data model, CSV ingestion with exclusion accounting, and a synthetic
cohort generator with known ground truth.

The CSV schema is fixed::

    id,sex,ga_days,bw_g,hc_cm,died,maternal_htn

with ``sex`` in {F, M}, ``died`` in {0, 1} and ``maternal_htn`` in {0, 1, NA}.
"""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import optimize, stats

HEADER = ("id", "sex", "ga_days", "bw_g", "hc_cm", "died", "maternal_htn")
DEFAULT_GA_GROUPS = ((21, 23), (23, 25), (25, 27), (27, 29))
MISSING = {"", "na", "nan", "null", "none", "."}

EXCLUSION_REASONS = (
    "missing_vital_status",
    "missing_sex",
    "missing_bw",
    "implausible_bw",
    "missing_hc",
    "implausible_hc",
    "ga_out_of_window",
)


class CohortError(ValueError):
    pass


def ga_group_label(lo, hi):
    return f"({lo},{hi}]"


def ga_group_labels(ga_days, groups=DEFAULT_GA_GROUPS):
    """Map gestational age in days to ``(lo,hi]`` completed-week labels (None if outside)."""
    weeks = np.floor_divide(np.asarray(ga_days, dtype=int), 7)
    out = np.full(weeks.shape, None, dtype=object)
    for lo, hi in groups:
        out[(weeks > lo) & (weeks <= hi)] = ga_group_label(lo, hi)
    return out


@dataclass(frozen=True)
class InfantRecord:
    id: str
    sex: str
    ga_days: int
    bw_g: float
    hc_cm: float
    died: bool
    maternal_htn: object = None


@dataclass
class Cohort:
    """Column-oriented cohort. ``maternal_htn`` is float with NaN for unknown."""

    id: np.ndarray
    sex: np.ndarray
    ga_days: np.ndarray
    bw_g: np.ndarray
    hc_cm: np.ndarray
    died: np.ndarray
    maternal_htn: np.ndarray

    def __len__(self):
        return int(self.id.shape[0])

    @classmethod
    def empty(cls):
        return cls(np.array([], dtype=object), np.array([], dtype=object), np.array([], dtype=int),
                   np.array([]), np.array([]), np.array([], dtype=int), np.array([]))

    @classmethod
    def from_records(cls, records):
        records = list(records)
        if not records:
            return cls.empty()
        return cls(
            np.array([r.id for r in records], dtype=object),
            np.array([r.sex for r in records], dtype=object),
            np.array([int(r.ga_days) for r in records], dtype=int),
            np.array([float(r.bw_g) for r in records]),
            np.array([float(r.hc_cm) for r in records]),
            np.array([int(bool(r.died)) for r in records], dtype=int),
            np.array([np.nan if r.maternal_htn is None else float(r.maternal_htn) for r in records]),
        )

    def records(self):
        for i in range(len(self)):
            h = self.maternal_htn[i]
            yield InfantRecord(str(self.id[i]), str(self.sex[i]), int(self.ga_days[i]),
                               float(self.bw_g[i]), float(self.hc_cm[i]), bool(self.died[i]),
                               None if np.isnan(h) else bool(h))

    def subset(self, mask):
        return Cohort(*(getattr(self, f.name)[mask] for f in fields(self)))

    def ga_groups(self, groups=DEFAULT_GA_GROUPS):
        return ga_group_labels(self.ga_days, groups)


@dataclass
class CleaningConfig:
    bw_bounds: tuple = (100.0, 3000.0)
    hc_bounds: tuple = (10.0, 40.0)
    ga_days_window: tuple = (154, 209)


@dataclass
class CleaningReport:
    n_in: int = 0
    n_out: int = 0
    exclusions: dict = field(default_factory=lambda: {k: 0 for k in EXCLUSION_REASONS})

    def to_json(self):
        return json.dumps({"n_in": self.n_in, "n_out": self.n_out, "exclusions": self.exclusions},
                          indent=2, sort_keys=False) + "\n"


def _fmt(x):
    """Shortest round-trip text for a float; integers without a trailing .0."""
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _parse_number(text, lineno, column, integer=False):
    t = text.strip()
    if t.lower() in MISSING:
        return None
    try:
        v = float(t)
    except ValueError:
        raise CohortError(f"line {lineno}: malformed {column} value {text!r}") from None
    if not math.isfinite(v):
        return None
    if integer:
        if not v.is_integer():
            raise CohortError(f"line {lineno}: {column} must be an integer, got {text!r}")
        return int(v)
    return v


def _parse_flag(text, lineno, column):
    t = text.strip().lower()
    if t in MISSING:
        return None
    if t in ("0", "1"):
        return int(t)
    raise CohortError(f"line {lineno}: malformed {column} value {text!r} (expected 0, 1 or NA)")


def clean_rows(rows, config=None, start_line=2):
    """Apply the exclusion rules to raw string rows, in the fixed order of
    ``EXCLUSION_REASONS``. Returns ``(Cohort, CleaningReport)``."""
    config = config or CleaningConfig()
    report = CleaningReport()
    kept = []
    for lineno, row in enumerate(rows, start=start_line):
        if len(row) != len(HEADER):
            raise CohortError(f"line {lineno}: expected {len(HEADER)} fields, found {len(row)}")
        report.n_in += 1
        rid, sex, ga, bw, hc, died, htn = row
        died_v = _parse_flag(died, lineno, "died")
        ga_v = _parse_number(ga, lineno, "ga_days", integer=True)
        bw_v = _parse_number(bw, lineno, "bw_g")
        hc_v = _parse_number(hc, lineno, "hc_cm")
        htn_v = _parse_flag(htn, lineno, "maternal_htn")
        sex_v = sex.strip().upper()

        if died_v is None:
            reason = "missing_vital_status"
        elif sex_v not in ("F", "M"):
            reason = "missing_sex"
        elif bw_v is None:
            reason = "missing_bw"
        elif not config.bw_bounds[0] <= bw_v <= config.bw_bounds[1]:
            reason = "implausible_bw"
        elif hc_v is None:
            reason = "missing_hc"
        elif not config.hc_bounds[0] <= hc_v <= config.hc_bounds[1]:
            reason = "implausible_hc"
        elif ga_v is None or not config.ga_days_window[0] <= ga_v <= config.ga_days_window[1]:
            reason = "ga_out_of_window"
        else:
            reason = None
        if reason:
            report.exclusions[reason] += 1
            continue
        kept.append(InfantRecord(rid.strip(), sex_v, ga_v, bw_v, hc_v, bool(died_v),
                                 None if htn_v is None else bool(htn_v)))
    report.n_out = len(kept)
    return Cohort.from_records(kept), report


def load_csv(path, config=None):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortError(f"{path}: empty file (missing header)") from None
        if tuple(h.strip() for h in header) != HEADER:
            raise CohortError(f"{path}: header must be {','.join(HEADER)}, got {','.join(header)}")
        return clean_rows(reader, config)


def cohort_to_csv_text(cohort, extra_columns=None):
    """Render the cohort (plus optional ``{name: array}`` columns) as CSV text."""
    extra_columns = extra_columns or {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(HEADER) + list(extra_columns))
    for i in range(len(cohort)):
        h = cohort.maternal_htn[i]
        row = [cohort.id[i], cohort.sex[i], str(int(cohort.ga_days[i])), _fmt(cohort.bw_g[i]),
               _fmt(cohort.hc_cm[i]), str(int(cohort.died[i])), "NA" if np.isnan(h) else str(int(h))]
        for col in extra_columns.values():
            v = col[i]
            row.append(_fmt(v) if isinstance(v, (float, np.floating)) else str(v))
        w.writerow(row)
    return buf.getvalue()


# ----------------------------------------------------------------------------
# synthetic cohorts

CATEGORY_ORDER = (
    "NORMAL_BW_NORMAL_HC",
    "SUBNORMAL_BW_NORMAL_HC",
    "SUBNORMAL_BW_SUBNORMAL_HC",
    "NORMAL_BW_SUBNORMAL_HC",
)


@dataclass
class SyntheticSpec:
    """Ground truth for a VON-like cohort of 22-29 week preterm infants.

    Per-group sequences follow ``ga_groups``. Measurement scale is log10.
    ``category_rr`` is indexed like ``CATEGORY_ORDER``. ``interaction_rr``
    multiplies the risk of infants with subnormal BW and HC whose true
    allometric ratio is supranormal.

    Asymmetric growth restriction is modelled as a "spared" subpopulation
    (probability ``sparing_prob``, or ``htn_sparing_prob`` under maternal
    hypertension) whose log10 BW is shifted by ``sparing_log10_bw_shift``
    while log10 HC moves by only ``sparing_hc_fraction`` of the proportional
    shift ``b * sparing_log10_bw_shift`` (0 = HC fully spared).
    """

    n: int = 20000
    seed: int = 0
    ga_groups: tuple = DEFAULT_GA_GROUPS
    group_probs: tuple = (0.074, 0.236, 0.305, 0.385)
    log10_bw_mean: tuple = (2.752, 2.848, 2.964, 3.072)
    log10_bw_sd: tuple = (0.08, 0.08, 0.08, 0.08)
    male_log10_bw_shift: float = 0.02
    log10_a: object = 0.397
    b: object = 1.0 / 3.0
    ratio_noise_sd: float = 0.018
    baseline_risk: tuple = (0.22, 0.12, 0.07, 0.04)
    male_rr: float = 1.15
    category_rr: tuple = (1.0, 1.8, 2.5, 1.5)
    interaction_rr: float = 1.0
    htn_prevalence: float = 0.0
    htn_ratio_shift: float = 0.0
    htn_rr: float = 1.0
    sparing_prob: float = 0.0
    htn_sparing_prob: float = 0.0
    sparing_log10_bw_shift: float = -0.12
    sparing_hc_fraction: float = 0.0
    cutoff_level: float = 0.1
    ratio_level: float = 0.9
    block_size: int = 10000

    def per_group(self, name):
        v = getattr(self, name)
        if np.ndim(v) == 0:
            return tuple(float(v) for _ in self.ga_groups)
        return tuple(float(x) for x in v)

    def validate(self):
        G = len(self.ga_groups)
        if self.n < 0:
            raise CohortError("n must be nonnegative")
        for name in ("group_probs", "log10_bw_mean", "log10_bw_sd", "baseline_risk"):
            if len(getattr(self, name)) != G:
                raise CohortError(f"{name} needs one entry per GA group ({G})")
        for name in ("log10_a", "b"):
            if len(self.per_group(name)) != G:
                raise CohortError(f"{name} needs a scalar or one entry per GA group")
        if any(b <= 0 for b in self.per_group("b")):
            raise CohortError("allometric exponent b must be positive")
        if abs(sum(self.group_probs) - 1.0) > 1e-9 or min(self.group_probs) < 0:
            raise CohortError("group_probs must be a probability vector")
        if self.ratio_noise_sd < 0 or min(self.log10_bw_sd) <= 0:
            raise CohortError("standard deviations must be positive (ratio noise may be 0)")
        if len(self.category_rr) != 4:
            raise CohortError("category_rr needs four entries")
        for name in ("htn_prevalence", "sparing_prob", "htn_sparing_prob", "sparing_hc_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise CohortError(f"{name} must lie in [0, 1]")
        top = max(self.category_rr) * max(1.0, self.interaction_rr) * max(1.0, self.male_rr) \
            * max(1.0, self.htn_rr)
        worst = max(self.baseline_risk) * top
        if min(self.baseline_risk) <= 0 or worst >= 1.0:
            raise CohortError(f"mortality risks must lie in (0, 1); the largest implied risk is {worst:.3f}")
        return self

    def to_dict(self):
        d = asdict(self)
        d["ga_groups"] = [list(g) for g in self.ga_groups]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "ga_groups" in d:
            d["ga_groups"] = tuple(tuple(g) for g in d["ga_groups"])
        for k in ("group_probs", "log10_bw_mean", "log10_bw_sd", "baseline_risk", "category_rr"):
            if k in d:
                d[k] = tuple(d[k])
        for k in ("log10_a", "b"):
            if isinstance(d.get(k), list):
                d[k] = tuple(d[k])
        return cls(**d)


def _mixture_quantile(means, sds, weights, level):
    means, sds, weights = (np.asarray(x, dtype=float) for x in (means, sds, weights))
    keep = weights > 0
    means, sds, weights = means[keep], sds[keep], weights[keep] / weights[keep].sum()
    if np.all(sds == 0):
        order = np.argsort(means)
        cw = np.cumsum(weights[order])
        return float(means[order][np.searchsorted(cw, level - 1e-12)])
    sds = np.maximum(sds, 1e-300)

    def cdf(x):
        return float(np.sum(weights * stats.norm.cdf((x - means) / sds))) - level

    lo = float(np.min(means - 10 * sds))
    hi = float(np.max(means + 10 * sds))
    return optimize.brentq(cdf, lo, hi, xtol=1e-14, rtol=1e-14)


def _components(spec):
    """(weight, htn, spared) for the hypertension x sparing mixture."""
    out = []
    for h, wh in ((0, 1.0 - spec.htn_prevalence), (1, spec.htn_prevalence)):
        ps = spec.htn_sparing_prob if h else spec.sparing_prob
        for sp, wsp in ((0, 1.0 - ps), (1, ps)):
            if wh * wsp > 0:
                out.append((wh * wsp, h, sp))
    return out


def _bw_mean(spec, group_index, sex):
    return spec.log10_bw_mean[group_index] + (spec.male_log10_bw_shift if sex == "M" else 0.0)


def true_bw_cutoff(spec, group_index, sex, level=None):
    level = spec.cutoff_level if level is None else level
    mu = _bw_mean(spec, group_index, sex)
    comps = _components(spec)
    means = [mu + sp * spec.sparing_log10_bw_shift for _, _, sp in comps]
    sds = [spec.log10_bw_sd[group_index]] * len(comps)
    return 10.0 ** _mixture_quantile(means, sds, [w for w, _, _ in comps], level)


def true_hc_cutoff(spec, group_index, sex, level=None):
    level = spec.cutoff_level if level is None else level
    la, b = spec.per_group("log10_a")[group_index], spec.per_group("b")[group_index]
    mu = _bw_mean(spec, group_index, sex)
    sd = math.hypot(b * spec.log10_bw_sd[group_index], spec.ratio_noise_sd)
    comps = _components(spec)
    hc_shift = spec.sparing_hc_fraction * b * spec.sparing_log10_bw_shift
    means = [la + b * mu + h * spec.htn_ratio_shift + sp * hc_shift for _, h, sp in comps]
    return 10.0 ** _mixture_quantile(means, [sd] * len(comps), [w for w, _, _ in comps], level)


def theoretical_ratio_quantile(spec, level, group_index=None):
    """Quantile of the true allometric ratio ``HC / BW**b`` (natural scale).

    ``group_index=None`` mixes over GA groups with their prevalences; this
    is only meaningful when ``b`` is shared across groups.
    """
    las, bs = spec.per_group("log10_a"), spec.per_group("b")
    idx = range(len(spec.ga_groups)) if group_index is None else [group_index]
    means, weights = [], []
    for g in idx:
        wg = spec.group_probs[g] if group_index is None else 1.0
        for w, h, sp in _components(spec):
            lift = (1.0 - spec.sparing_hc_fraction) * bs[g] * spec.sparing_log10_bw_shift
            means.append(las[g] + h * spec.htn_ratio_shift - sp * lift)
            weights.append(wg * w)
    sds = [spec.ratio_noise_sd] * len(means)
    return 10.0 ** _mixture_quantile(means, sds, weights, level)


@dataclass
class SyntheticTruth:
    group_index: np.ndarray
    category: np.ndarray
    supranormal: np.ndarray
    risk: np.ndarray
    spared: np.ndarray


def _generate_block(spec, rng, n, start):
    G = len(spec.ga_groups)
    las = np.array(spec.per_group("log10_a"))
    bs = np.array(spec.per_group("b"))
    gi = rng.choice(G, size=n, p=np.asarray(spec.group_probs))
    male = rng.random(n) < 0.5
    lo_days = np.array([7 * (lo + 1) for lo, _ in spec.ga_groups])
    hi_days = np.array([7 * hi + 6 for _, hi in spec.ga_groups])
    ga = lo_days[gi] + np.floor(rng.random(n) * (hi_days[gi] - lo_days[gi] + 1)).astype(int)
    z1 = (np.asarray(spec.log10_bw_mean)[gi] + male * spec.male_log10_bw_shift
          + np.asarray(spec.log10_bw_sd)[gi] * rng.standard_normal(n))
    htn = rng.random(n) < spec.htn_prevalence
    eps = spec.ratio_noise_sd * rng.standard_normal(n) + htn * spec.htn_ratio_shift
    z2 = las[gi] + bs[gi] * z1 + eps
    spared = rng.random(n) < np.where(htn, spec.htn_sparing_prob, spec.sparing_prob)
    z1 = z1 + spared * spec.sparing_log10_bw_shift
    z2 = z2 + spared * (spec.sparing_hc_fraction * bs[gi] * spec.sparing_log10_bw_shift)
    bw = 10.0 ** z1
    hc = 10.0 ** z2

    sub_bw = np.empty(n, dtype=bool)
    sub_hc = np.empty(n, dtype=bool)
    supra = np.empty(n, dtype=bool)
    for g in range(G):
        rq = theoretical_ratio_quantile(spec, spec.ratio_level, g)
        for sx, msk in (("F", ~male), ("M", male)):
            cell = (gi == g) & msk
            sub_bw[cell] = bw[cell] < true_bw_cutoff(spec, g, sx)
            sub_hc[cell] = hc[cell] < true_hc_cutoff(spec, g, sx)
        cell = gi == g
        supra[cell] = hc[cell] / bw[cell] ** bs[g] > rq
    cat = np.where(sub_bw, np.where(sub_hc, 2, 1), np.where(sub_hc, 3, 0))
    risk = (np.asarray(spec.baseline_risk)[gi] * np.where(male, spec.male_rr, 1.0)
            * np.asarray(spec.category_rr)[cat]
            * np.where((cat == 2) & supra, spec.interaction_rr, 1.0)
            * np.where(htn, spec.htn_rr, 1.0))
    died = (rng.random(n) < risk).astype(int)
    ids = np.array([f"S{start + i + 1:07d}" for i in range(n)], dtype=object)
    sex = np.where(male, "M", "F").astype(object)
    htn_col = np.where(htn, 1.0, 0.0) if spec.htn_prevalence > 0 else np.zeros(n)
    cohort = Cohort(ids, sex, ga.astype(int), bw, hc, died, htn_col)
    return cohort, SyntheticTruth(gi, cat, supra, risk, spared)


def generate(spec, return_truth=False):
    """Draw a synthetic cohort. Deterministic given ``spec.seed``.

    Records are produced in blocks of ``spec.block_size`` with one child
    seed per block, so blocks could be generated independently.
    """
    spec.validate()
    nblocks = max(1, -(-spec.n // spec.block_size))
    seeds = np.random.SeedSequence(spec.seed).spawn(nblocks)
    parts = []
    for k, ss in enumerate(seeds):
        start = k * spec.block_size
        m = min(spec.block_size, spec.n - start)
        if m <= 0:
            break
        parts.append(_generate_block(spec, np.random.default_rng(ss), m, start))
    if not parts:
        cohort = Cohort.empty()
        truth = SyntheticTruth(np.array([], dtype=int), np.array([], dtype=int),
                               np.array([], dtype=bool), np.array([]), np.array([], dtype=bool))
    else:
        cohort = Cohort(*(np.concatenate([getattr(c, f.name) for c, _ in parts])
                          for f in fields(Cohort)))
        truth = SyntheticTruth(*(np.concatenate([getattr(t, f.name) for _, t in parts])
                                 for f in fields(SyntheticTruth)))
    return (cohort, truth) if return_truth else cohort
