import argparse
import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from quantour import cli


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, warm_kernels):
    d = tmp_path_factory.mktemp("cli")
    cwd = os.getcwd()
    os.chdir(d)
    try:
        assert cli.main(["simulate", "--output-dir", "sim", "--n", "4000", "--seed", "3"]) == 0
        assert cli.main(["fit", "--input", "sim/cohort.csv", "--output-dir", "fit", "--bootstrap", "20"]) == 0
    finally:
        os.chdir(cwd)
    return d


def test_simulate_and_clean(workdir, tmp_path):
    spec = json.loads((workdir / "sim" / "spec.json").read_text())
    assert spec["n"] == 4000 and spec["seed"] == 3
    raw = (workdir / "sim" / "cohort.csv").read_text().splitlines()
    raw.append("bad,F,170,,25,0,NA")
    raw.append("bad2,M,400,800,25,1,NA")
    src = tmp_path / "raw.csv"
    src.write_text("\n".join(raw) + "\n")
    assert cli.main(["clean", "--input", str(src), "--output-dir", str(tmp_path / "c")]) == 0
    rep = json.loads((tmp_path / "c" / "cleaning_report.json").read_text())
    assert rep["n_in"] == 4002 and rep["n_out"] == 4000
    assert rep["exclusions"]["missing_bw"] == 1 and rep["exclusions"]["ga_out_of_window"] == 1


def test_simulate_spec_overrides(tmp_path):
    overrides = tmp_path / "spec.json"
    overrides.write_text(json.dumps({"htn_prevalence": 0.3, "b": 0.3}))
    assert cli.main(["simulate", "--output-dir", str(tmp_path / "s"), "--n", "500",
                     "--spec", str(overrides)]) == 0
    spec = json.loads((tmp_path / "s" / "spec.json").read_text())
    assert spec["htn_prevalence"] == 0.3 and spec["n"] == 500
    rows = _read(tmp_path / "s" / "cohort.csv")
    assert {r["maternal_htn"] for r in rows} == {"0", "1"}


def test_fit_outputs(workdir):
    rows = _read(workdir / "fit" / "allometry.csv")
    assert rows[0]["group"] == "All"
    assert [r["group"] for r in rows[1:]] == ["(21,23]", "(23,25]", "(25,27]", "(27,29]"]
    assert abs(float(rows[0]["b"]) - 1 / 3) < 0.05
    fits = json.loads((workdir / "fit" / "fits.json").read_text())
    assert fits["method"] == "SMA"
    assert [f["group"] for f in fits["fits"]] == [r["group"] for r in rows]
    assert fits["fits"][0]["ratio_cutoffs"][0]["level"] == 0.9


@pytest.mark.parametrize("group_by,first", [("none", None), ("sex", ["All", "F", "M"]),
                                            ("all", ["All", "F", "M", "(21,23]"])])
def test_fit_group_by(workdir, tmp_path, group_by, first):
    out = tmp_path / group_by
    assert cli.main(["fit", "--input", str(workdir / "sim" / "cohort.csv"), "--output-dir", str(out),
                     "--bootstrap", "0", "--group-by", group_by, "--method", "ma"]) == 0
    rows = _read(out / "allometry.csv")
    if first is None:
        assert len(rows) == 1 and "group" not in rows[0]
    else:
        assert [r["group"] for r in rows][: len(first)] == first


def test_envelope_outputs(workdir, tmp_path):
    out = tmp_path / "env"
    assert cli.main(["envelope", "--input", str(workdir / "sim" / "cohort.csv"), "--output-dir", str(out),
                     "--level", "0.1", "--level", "0.25", "--directions", "90"]) == 0
    verts = _read(out / "envelope_vertices.csv")
    assert {r["level"] for r in verts} == {"0.1", "0.25"}
    for r in verts[:20]:
        assert float(r["bw_g"]) == pytest.approx(10 ** float(r["log10_bw"]))
    svgs = sorted(p.name for p in out.glob("*.svg"))
    assert svgs == ["envelope_21_23.svg", "envelope_23_25.svg", "envelope_25_27.svg", "envelope_27_29.svg"]
    tang = _read(out / "tangent_lines.csv")
    assert all(float(t["intercept"]) == pytest.approx(np.log10(float(t["Q_R_upper"]))) for t in tang)


def test_classify_and_risk(workdir, tmp_path):
    cls = tmp_path / "cls"
    assert cli.main(["classify", "--input", str(workdir / "sim" / "cohort.csv"), "--output-dir", str(cls),
                     "--fit", str(workdir / "fit" / "fits.json")]) == 0
    rows = _read(cls / "classified.csv")
    assert len(rows) == 4000
    assert {r["stratum"] for r in rows} <= {"NORMAL_RATIO", "SUPRANORMAL_RATIO", "SUBNORMAL_RATIO"}
    assert cli.main(["risk", "--input", str(cls / "classified.csv"), "--output-dir", str(tmp_path / "r"),
                     "--stratify", "ratio", "--by-sex"]) == 0
    risk = _read(tmp_path / "r" / "risk_table.csv")
    assert {r["stratum"] for r in risk} == {"sex=F;ratio=normal", "sex=F;ratio=supranormal",
                                             "sex=M;ratio=normal", "sex=M;ratio=supranormal"}
    # external cutoff file is used verbatim
    assert cli.main(["classify", "--input", str(workdir / "sim" / "cohort.csv"),
                     "--output-dir", str(tmp_path / "c2"), "--cutoffs", str(cls / "cutoffs.csv")]) == 0
    assert (tmp_path / "c2" / "cutoffs.csv").read_text() == (cls / "cutoffs.csv").read_text()


def test_run_config_round_trip(workdir):
    d = json.loads((workdir / "fit" / "run_config.json").read_text())
    cfg = cli.RunConfig.from_dict(d)
    assert cfg.subcommand == "fit" and cfg.to_dict() == d


@pytest.mark.parametrize("argv,msg", [
    (["fit", "--input", "missing.csv", "--output-dir", "o"], "not found"),
    (["envelope", "--input", "x.csv", "--output-dir", "o", "--level", "0.7"], "level"),
    (["fit", "--input", "x.csv", "--output-dir", "o", "--bootstrap", "-1"], "bootstrap"),
])
def test_errors_exit_nonzero(tmp_path, capsys, argv, msg, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "x.csv").write_text("id,sex,ga_days,bw_g,hc_cm,died,maternal_htn\n")
    assert cli.main(argv) == 1
    assert msg in capsys.readouterr().err


def test_parse_ga_groups():
    assert cli.parse_ga_groups("21-23,23-25") == ((21, 23), (23, 25))
    for bad in ("23-21", "21-25,23-27", "21to23"):
        with pytest.raises(argparse.ArgumentTypeError):
            cli.parse_ga_groups(bad)


def test_write_atomic(tmp_path):
    p = tmp_path / "a.txt"
    cli.write_atomic(str(p), "one")
    cli.write_atomic(str(p), "two")
    assert p.read_text() == "two" and sorted(os.listdir(tmp_path)) == ["a.txt"]


def test_threads_env_caps_numba(tmp_path):
    env = dict(os.environ, QUANTOUR_THREADS="1")
    code = "import numba, quantour; print(numba.get_num_threads())"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "1"


def test_console_script(tmp_path):
    out = subprocess.run([sys.executable, "-m", "quantour.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "simulate" in out.stdout
