import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quantour import cohort
from quantour.cohort import CohortError, SyntheticSpec
from quantour.quantile_core import empirical_quantile


def _rows(text):
    return list(csv.reader(io.StringIO(text)))[1:]


def test_ga_group_labels_use_completed_weeks():
    labels = cohort.ga_group_labels([153, 154, 161, 167, 168, 209, 210])
    assert labels.tolist() == [None, "(21,23]", "(21,23]", "(21,23]", "(23,25]", "(27,29]", None]


def test_exclusions_follow_fixed_order():
    rows = [
        ["a", "F", "170", "800", "25", "NA", "0"],     # missing vital status wins
        ["b", "", "170", "800", "25", "0", "0"],
        ["c", "M", "170", "", "25", "0", "0"],
        ["d", "M", "170", "50", "", "1", "0"],          # implausible BW before missing HC
        ["e", "M", "170", "800", "", "1", "NA"],
        ["f", "M", "170", "800", "55", "1", "NA"],
        ["g", "F", "230", "800", "25", "1", "1"],
        ["h", "f", "170", "800.5", "25.25", "0", "NA"],
    ]
    data, rep = cohort.clean_rows(rows)
    assert rep.n_in == 8 and rep.n_out == 1
    assert rep.exclusions == {"missing_vital_status": 1, "missing_sex": 1, "missing_bw": 1,
                              "implausible_bw": 1, "missing_hc": 1, "implausible_hc": 1,
                              "ga_out_of_window": 1}
    rec = next(data.records())
    assert (rec.id, rec.sex, rec.bw_g, rec.maternal_htn) == ("h", "F", 800.5, None)
    assert sum(rep.exclusions.values()) + rep.n_out == rep.n_in


@pytest.mark.parametrize("row,msg", [
    (["a", "F", "17x", "800", "25", "0", "0"], "ga_days"),
    (["a", "F", "170.5", "800", "25", "0", "0"], "integer"),
    (["a", "F", "170", "800", "25", "2", "0"], "died"),
    (["a", "F", "170", "800", "25", "0"], "expected 7 fields"),
])
def test_malformed_rows_raise_with_line_number(row, msg):
    with pytest.raises(CohortError, match=f"line 2: .*{msg}|line 2: {msg}"):
        cohort.clean_rows([row])


def test_load_csv_header_checks(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("")
    with pytest.raises(CohortError, match="empty"):
        cohort.load_csv(p)
    p.write_text("id,sex\n")
    with pytest.raises(CohortError, match="header"):
        cohort.load_csv(p)


def test_csv_round_trip(tmp_path):
    data = cohort.generate(SyntheticSpec(n=500, seed=3, htn_prevalence=0.2))
    text = cohort.cohort_to_csv_text(data)
    p = tmp_path / "c.csv"
    p.write_text(text)
    back, rep = cohort.load_csv(p)
    assert rep.n_out == len(data)
    for name in ("id", "sex", "ga_days", "bw_g", "hc_cm", "died", "maternal_htn"):
        assert np.array_equal(getattr(back, name), getattr(data, name),
                              equal_nan=name == "maternal_htn"), name
    assert cohort.cohort_to_csv_text(back) == text


def test_generator_is_deterministic_and_blockwise():
    spec = SyntheticSpec(n=2500, seed=5, block_size=1000)
    a, b = cohort.generate(spec), cohort.generate(spec)
    assert cohort.cohort_to_csv_text(a) == cohort.cohort_to_csv_text(b)
    longer = cohort.generate(SyntheticSpec(n=3000, seed=5, block_size=1000))
    # earlier blocks are unaffected by the total size
    assert np.array_equal(longer.bw_g[:2000], a.bw_g[:2000])
    assert len(cohort.generate(SyntheticSpec(n=0))) == 0


def test_truth_quantiles_match_large_sample():
    spec = SyntheticSpec(n=200_000, seed=1, sparing_prob=0.1, htn_prevalence=0.2,
                         htn_sparing_prob=0.3, htn_ratio_shift=0.01)
    data, truth = cohort.generate(spec, return_truth=True)
    labels = cohort.ga_group_labels(data.ga_days)
    g = 2
    m = (labels == "(25,27]") & (data.sex == "F")
    bw = empirical_quantile(data.bw_g[m], 0.1)
    hc = empirical_quantile(data.hc_cm[m], 0.1)
    assert bw == pytest.approx(cohort.true_bw_cutoff(spec, g, "F"), rel=0.01)
    assert hc == pytest.approx(cohort.true_hc_cutoff(spec, g, "F"), rel=0.003)
    R = data.hc_cm / data.bw_g ** (1 / 3)
    assert empirical_quantile(R, 0.9) == pytest.approx(cohort.theoretical_ratio_quantile(spec, 0.9), rel=0.002)
    assert truth.spared.mean() == pytest.approx(0.8 * 0.1 + 0.2 * 0.3, abs=0.005)
    assert np.mean(truth.supranormal) == pytest.approx(0.1, abs=0.005)


def test_mortality_follows_category_risks():
    spec = SyntheticSpec(n=100_000, seed=2)
    data, truth = cohort.generate(spec, return_truth=True)
    assert np.mean(data.died) == pytest.approx(np.mean(truth.risk), abs=0.005)
    i, iii = truth.category == 0, truth.category == 2
    assert truth.risk[iii].mean() / truth.risk[i].mean() > 1.5


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 0.99))
def test_spec_dict_round_trip(seed, p):
    spec = SyntheticSpec(n=10, seed=seed, sparing_prob=p, b=(0.3, 0.31, 0.32, 0.33))
    assert SyntheticSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("kw", [
    dict(n=-1), dict(group_probs=(0.5, 0.5, 0.5, 0.5)), dict(b=-0.1), dict(sparing_prob=1.5),
    dict(category_rr=(1.0, 2.0)), dict(baseline_risk=(0.5, 0.5, 0.5, 0.5)), dict(log10_bw_sd=(0.0, 0.1, 0.1, 0.1)),
])
def test_spec_validation(kw):
    with pytest.raises(CohortError):
        SyntheticSpec(**kw).validate()
