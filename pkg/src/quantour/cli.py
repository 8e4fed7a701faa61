"""
Command-line pipelines: simulate | clean | fit | envelope | classify | risk.

Every command validates a RunConfig before touching data, echoes it as
``run_config.json`` into the output directory, and writes files atomically.
"""

import argparse
import csv
import io
import json
import logging
import os
import re
import sys
import tempfile
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import allometry, cohort, dqe, riskmodel, svg
from ._accel import backend_name

log = logging.getLogger("quantour")

COMMANDS = ("simulate", "clean", "fit", "envelope", "classify", "risk")
METHOD_FLAGS = {"sma": "SMA", "ma": "MA", "median": "MEDIAN"}
DEFAULT_LEVELS = {"fit": (0.9,), "envelope": (0.1,), "classify": (0.1,), "risk": (0.1,)}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    output_dir: str
    input: str = None
    levels: tuple = ()
    n_directions: int = 360
    method: str = "sma"
    seed: int = 0
    bootstrap: int = 200
    ga_groups: tuple = cohort.DEFAULT_GA_GROUPS
    cutoffs: str = "internal"
    stratify: str = None
    n: int = 20000
    by_sex: bool = False
    group_by: str = "ga"
    fit: str = None
    spec: str = None

    def validate(self):
        if self.subcommand not in COMMANDS:
            raise ConfigError(f"unknown subcommand {self.subcommand!r}")
        if self.subcommand not in ("simulate",) and not self.input:
            raise ConfigError(f"{self.subcommand} needs --input")
        if self.input and not os.path.isfile(self.input):
            raise ConfigError(f"input file not found: {self.input}")
        for lv in self.levels:
            if not 0.0 < lv < 1.0:
                raise ConfigError(f"level must lie in (0, 1), got {lv}")
        if self.subcommand in ("envelope", "classify", "risk"):
            bad = [lv for lv in self.levels if lv >= 0.5]
            if bad:
                raise ConfigError(f"{self.subcommand} levels must be below 0.5, got {bad}")
        if self.n_directions < 8:
            raise ConfigError("--directions must be at least 8")
        if self.method not in METHOD_FLAGS:
            raise ConfigError(f"--method must be one of {sorted(METHOD_FLAGS)}")
        if self.bootstrap < 0:
            raise ConfigError("--bootstrap must be nonnegative")
        if self.n < 0:
            raise ConfigError("--n must be nonnegative")
        if self.stratify not in (None, "ratio", "htn", "both"):
            raise ConfigError("--stratify must be ratio, htn or both")
        if self.group_by not in ("none", "sex", "ga", "all"):
            raise ConfigError("--group-by must be none, sex, ga or all")
        if self.cutoffs != "internal" and not os.path.isfile(self.cutoffs):
            raise ConfigError(f"cutoff file not found: {self.cutoffs}")
        for path, flag in ((self.fit, "--fit"), (self.spec, "--spec")):
            if path and not os.path.isfile(path):
                raise ConfigError(f"{flag} file not found: {path}")
        prev = None
        for lo, hi in self.ga_groups:
            if not lo < hi or (prev is not None and lo < prev):
                raise ConfigError(f"GA groups must be increasing, non-overlapping intervals; got {self.ga_groups}")
            prev = hi
        return self

    @property
    def method_name(self):
        return METHOD_FLAGS[self.method]

    def to_dict(self):
        d = asdict(self)
        d["levels"] = list(self.levels)
        d["ga_groups"] = [list(g) for g in self.ga_groups]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["levels"] = tuple(d.get("levels", ()))
        d["ga_groups"] = tuple(tuple(g) for g in d.get("ga_groups", cohort.DEFAULT_GA_GROUPS))
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def parse_ga_groups(text):
    """``"21-23,23-25"`` (or ``21:23``) -> ``((21, 23), (23, 25))``."""
    out = []
    for part in text.split(","):
        m = re.fullmatch(r"\s*(\d+)\s*[-:]\s*(\d+)\s*", part)
        if not m:
            raise argparse.ArgumentTypeError(f"bad GA group {part!r}; expected LO-HI in completed weeks")
        lo, hi = int(m.group(1)), int(m.group(2))
        if lo >= hi or (out and lo < out[-1][1]):
            raise argparse.ArgumentTypeError(f"GA groups must be increasing and non-overlapping, got {part!r}")
        out.append((lo, hi))
    return tuple(out)


# ----------------------------------------------------------------------------
# I/O helpers


def write_atomic(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _out(config, name):
    return os.path.join(config.output_dir, name)


def _num(x):
    x = float(x)
    return "NA" if not np.isfinite(x) else repr(x)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _load_cohort(config):
    data, report = cohort.load_csv(config.input)
    excluded = report.n_in - report.n_out
    if excluded:
        log.info("excluded %d of %d records on load", excluded, report.n_in)
    return data


def _safe_name(label):
    return re.sub(r"[^A-Za-z0-9]+", "_", str(label)).strip("_") or "all"


def _group_keys(data, config, group_by):
    """Per-record grouping label and the ordered label list."""
    ga = cohort.ga_group_labels(data.ga_days, config.ga_groups)
    if group_by == "none":
        keys = np.full(len(data), "all", dtype=object)
    elif group_by == "sex":
        keys = data.sex.copy()
    elif group_by == "ga":
        keys = ga
    else:
        keys = np.array([f"{s}{g}" for s, g in zip(data.sex, ga)], dtype=object)
    present = [k for k in keys.tolist() if k is not None]
    return keys, sorted(set(present))


def _method_fits(data, config, keys, labels, bootstrap):
    fits = {}
    for k, g in enumerate(labels):
        m = keys == g
        fits[g] = allometry.fit_allometric(data.bw_g[m], data.hc_cm[m], config.method_name,
                                           bootstrap=bootstrap, seed=config.seed + k, group=g)
    return fits


# ----------------------------------------------------------------------------
# commands


def cmd_simulate(config):
    spec = cohort.SyntheticSpec(n=config.n, seed=config.seed, ga_groups=config.ga_groups)
    if config.spec:
        with open(config.spec) as fh:
            overrides = json.load(fh)
        d = spec.to_dict()
        d.update(overrides)
        d["n"], d["seed"] = config.n, config.seed
        spec = cohort.SyntheticSpec.from_dict(d)
    data = cohort.generate(spec)
    write_atomic(_out(config, "cohort.csv"), cohort.cohort_to_csv_text(data))
    write_atomic(_out(config, "spec.json"), json.dumps(spec.to_dict(), indent=2) + "\n")
    return 0


def cmd_clean(config):
    data, report = cohort.load_csv(config.input)
    write_atomic(_out(config, "cohort_clean.csv"), cohort.cohort_to_csv_text(data))
    write_atomic(_out(config, "cleaning_report.json"), report.to_json())
    return 0


def cmd_fit(config):
    data = _load_cohort(config)
    levels = config.levels or DEFAULT_LEVELS["fit"]
    grouped = config.group_by != "none"
    # Table-3 order: overall, then by sex, then by GA group
    blocks = [("none", "All")]
    if config.group_by in ("sex", "all"):
        blocks.append(("sex", None))
    if config.group_by in ("ga", "all"):
        blocks.append(("ga", None))
    rows, fits_json = [], []
    header = (["group"] if grouped else []) + ["log10_a", "se_log10_a", "b", "se_b", "r", "n"]
    for lv in levels:
        header += [f"Q_R({lv:g})", f"se_Q_R({lv:g})"]
    k = 0
    for block, fixed in blocks:
        keys, labels = _group_keys(data, config, block)
        for g in labels:
            m = keys == g
            label = fixed or g
            f = allometry.fit_allometric(data.bw_g[m], data.hc_cm[m], config.method_name,
                                         bootstrap=config.bootstrap, seed=config.seed + k, group=label)
            cuts = [allometry.ratio_cutoff(data.bw_g[m], data.hc_cm[m], f, lv,
                                           bootstrap=config.bootstrap, seed=config.seed + 1000 + k)
                    for lv in levels]
            k += 1
            row = ([label] if grouped else []) + [_num(f.log10_a), _num(f.se_log10_a), _num(f.b),
                                                  _num(f.se_b), _num(f.r), str(f.n)]
            for c in cuts:
                row += [_num(c.value), _num(c.se)]
            rows.append(row)
            entry = f.to_dict() if grouped else {kk: v for kk, v in f.to_dict().items() if kk != "group"}
            entry["block"] = block
            entry["ratio_cutoffs"] = [{"level": c.level, "value": c.value, "se": c.se} for c in cuts]
            fits_json.append(entry)
    write_atomic(_out(config, "allometry.csv"), _csv_text(header, rows))
    write_atomic(_out(config, "fits.json"), json.dumps({"method": config.method_name, "fits": fits_json},
                                                       indent=2) + "\n")
    return 0


def cmd_envelope(config):
    data = _load_cohort(config)
    levels = config.levels or DEFAULT_LEVELS["envelope"]
    ga = cohort.ga_group_labels(data.ga_days, config.ga_groups)
    ga_labels = sorted({g for g in ga.tolist() if g is not None})
    subsets = [("", np.ones(len(data), dtype=bool))]
    if config.by_sex:
        subsets = [(s, data.sex == s) for s in ("F", "M")]
    if config.stratify in ("htn", "both"):
        subsets = [(f"{a}{'' if not a else ' '}{lab}".strip(), m & (data.maternal_htn == v))
                   for a, m in subsets for v, lab in ((0.0, "normotensive"), (1.0, "hypertensive"))]
    header = ["ga_group", "subset", "level", "vertex", "log10_bw", "log10_hc", "bw_g", "hc_cm", "empty"]
    rows, tang_rows = [], []
    for g in ga_labels:
        polygons, lines = [], []
        for sub, smask in subsets:
            m = (ga == g) & smask
            if m.sum() < 3:
                warnings.warn(f"group {g} {sub}: fewer than 3 records, no envelope", RuntimeWarning)
                continue
            fit = allometry.fit_allometric(data.bw_g[m], data.hc_cm[m], config.method_name, bootstrap=0)
            Z = np.column_stack([np.log10(data.bw_g[m]), np.log10(data.hc_cm[m])])
            for lv in levels:
                direction = allometry.allometric_direction(fit)
                env = dqe.build_envelope(Z, lv, config.n_directions, extra_directions=[direction.vector])
                tag = f"{sub} p={lv:g}".strip()
                if env.empty:
                    warnings.warn(f"group {g} {tag}: empty envelope", RuntimeWarning)
                    rows.append([g, sub, repr(lv), "", "NA", "NA", "NA", "NA", "1"])
                    polygons.append((tag, np.empty((0, 2))))
                    continue
                for i, (x, y) in enumerate(env.vertices):
                    rows.append([g, sub, repr(lv), str(i), repr(float(x)), repr(float(y)),
                                 repr(float(10.0 ** x)), repr(float(10.0 ** y)), "0"])
                polygons.append((tag, env.vertices))
                hi = allometry.ratio_cutoff(data.bw_g[m], data.hc_cm[m], fit, 1.0 - lv, bootstrap=0)
                lines.append((f"Q_R({1 - lv:g}) {sub}".strip(), float(np.log10(hi.value)), fit.b))
                tang_rows.append([g, sub, repr(lv), repr(fit.b), repr(hi.value), repr(float(np.log10(hi.value)))])
        chart = svg.envelope_chart(polygons, lines, title=f"GA {g} weeks")
        write_atomic(_out(config, f"envelope_{_safe_name(g)}.svg"), chart)
    write_atomic(_out(config, "envelope_vertices.csv"), _csv_text(header, rows))
    write_atomic(_out(config, "tangent_lines.csv"),
                 _csv_text(["ga_group", "subset", "level", "b", "Q_R_upper", "intercept"], tang_rows))
    return 0


def _load_fits(path):
    with open(path) as fh:
        payload = json.load(fh)
    out = {}
    for e in payload["fits"]:
        if e.get("block") == "ga":
            out[e["group"]] = allometry.AllometricFit(e["log10_a"], e["b"], e["se_log10_a"], e["se_b"],
                                                      e["r"], e["n"], e["method"], e["group"])
    if not out:
        raise ConfigError(f"{path}: no per-GA-group fits (run fit with --group-by ga or all)")
    return out


def classify_data(data, config, level):
    """Fit, cut and classify; returns (Classification, CutoffTable, fits, ratio cutoffs)."""
    if config.cutoffs == "internal":
        table = riskmodel.build_cutoffs(data, level, config.ga_groups)
    else:
        table = riskmodel.CutoffTable.load(config.cutoffs)
    keys, labels = _group_keys(data, config, "ga")
    fits = _load_fits(config.fit) if config.fit else _method_fits(data, config, keys, labels, 0)
    rcs = {}
    for g in labels:
        m = keys == g
        if g not in fits:
            raise riskmodel.RiskModelError(f"no allometric fit for group {g}")
        lo = allometry.ratio_cutoff(data.bw_g[m], data.hc_cm[m], fits[g], level, bootstrap=0)
        hi = allometry.ratio_cutoff(data.bw_g[m], data.hc_cm[m], fits[g], 1.0 - level, bootstrap=0)
        rcs[g] = (lo, hi)
    cl = riskmodel.classify_cohort(data, table, fits, rcs, level, config.ga_groups)
    bad = np.sum((cl.category == riskmodel.GrowthCategory.NORMAL_BW_SUBNORMAL_HC)
                 & (cl.stratum == riskmodel.RatioStratum.SUPRANORMAL_RATIO))
    if bad:
        warnings.warn(f"{bad} records have normal BW, subnormal HC and a supranormal ratio", RuntimeWarning)
    return cl, table, fits, rcs


def cmd_classify(config):
    data = _load_cohort(config)
    level = (config.levels or DEFAULT_LEVELS["classify"])[0]
    cl, table, fits, rcs = classify_data(data, config, level)
    extra = {
        "ga_group": cl.ga_group,
        "category": np.array([c.name for c in cl.category], dtype=object),
        "stratum": np.array([s.name for s in cl.stratum], dtype=object),
        "ratio": cl.ratio,
    }
    write_atomic(_out(config, "classified.csv"), cohort.cohort_to_csv_text(data, extra))
    write_atomic(_out(config, "cutoffs.csv"), table.to_csv_text())
    rc_rows = [[g, _num(fits[g].b), _num(lo.value), _num(hi.value)] for g, (lo, hi) in rcs.items()]
    write_atomic(_out(config, "ratio_cutoffs.csv"),
                 _csv_text(["ga_group", "b", f"Q_R({level:g})", f"Q_R({1 - level:g})"], rc_rows))
    return 0


def _read_classified(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    need = list(cohort.HEADER) + ["ga_group", "category", "stratum", "ratio"]
    if header != need:
        return None
    data, report = cohort.clean_rows([r[:len(cohort.HEADER)] for r in rows])
    if report.n_out != report.n_in:
        raise ConfigError(f"{path}: classified file contains records that fail cleaning")
    cl = riskmodel.Classification(
        np.array([r[7] for r in rows], dtype=object),
        np.array([riskmodel.GrowthCategory[r[8]] for r in rows], dtype=object),
        np.array([riskmodel.RatioStratum[r[9]] for r in rows], dtype=object),
        np.array([float(r[10]) for r in rows]),
    )
    return data, cl


def cmd_risk(config):
    loaded = _read_classified(config.input)
    if loaded is None:
        data = _load_cohort(config)
        level = (config.levels or DEFAULT_LEVELS["risk"])[0]
        cl = classify_data(data, config, level)[0]
    else:
        data, cl = loaded
    strata = {None: (), "ratio": ("ratio",), "htn": ("htn",), "both": ("ratio", "htn")}[config.stratify]
    if config.by_sex:
        strata = ("sex",) + strata
    table = riskmodel.risk_table(data, cl, strata)
    for r in table.rows:
        if r.model_tag in ("separated", "empty", "no-baseline"):
            warnings.warn(f"stratum {r.stratum}, {r.category.name}: {r.model_tag}", RuntimeWarning)
    write_atomic(_out(config, "risk_table.csv"), table.to_csv_text())
    return 0


HANDLERS = {
    "simulate": cmd_simulate,
    "clean": cmd_clean,
    "fit": cmd_fit,
    "envelope": cmd_envelope,
    "classify": cmd_classify,
    "risk": cmd_risk,
}


# ----------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="quantour",
                                     description="Directional quantile envelopes and allometric ratio cutoffs.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--input")
        p.add_argument("--output-dir", required=True)
        p.add_argument("--level", action="append", type=float, default=None)
        p.add_argument("--directions", type=int, default=360)
        p.add_argument("--method", choices=sorted(METHOD_FLAGS), default="sma")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--bootstrap", type=int, default=200)
        p.add_argument("--ga-groups", type=parse_ga_groups, default=cohort.DEFAULT_GA_GROUPS)
        p.add_argument("--cutoffs", default="internal", help="internal or a cutoff CSV file")
        p.add_argument("--stratify", choices=("ratio", "htn", "both"), default=None)
        p.add_argument("--n", type=int, default=20000, help="simulate: number of records")
        p.add_argument("--spec", help="simulate: JSON file of SyntheticSpec overrides")
        p.add_argument("--by-sex", action="store_true")
        p.add_argument("--group-by", choices=("none", "sex", "ga", "all"), default="ga")
        p.add_argument("--fit", help="classify/risk: fits.json from the fit command")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args):
    return RunConfig(
        subcommand=args.subcommand,
        output_dir=args.output_dir,
        input=args.input,
        levels=tuple(args.level or ()),
        n_directions=args.directions,
        method=args.method,
        seed=args.seed,
        bootstrap=args.bootstrap,
        ga_groups=args.ga_groups,
        cutoffs=args.cutoffs,
        stratify=args.stratify,
        n=args.n,
        by_sex=args.by_sex,
        group_by=args.group_by,
        fit=args.fit,
        spec=args.spec,
    )


def run(config):
    config.validate()
    os.makedirs(config.output_dir, exist_ok=True)
    write_atomic(_out(config, "run_config.json"), config.to_json())
    return HANDLERS[config.subcommand](config)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    previous = warnings.formatwarning
    warnings.formatwarning = lambda msg, cat, *a, **k: f"warning: {msg}\n"
    log.info("backend: %s", backend_name())
    try:
        return run(config_from_args(args))
    except (ValueError, OSError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    finally:
        warnings.formatwarning = previous


if __name__ == "__main__":
    sys.exit(main())
