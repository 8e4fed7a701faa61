import math
import warnings

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st

from quantour import allometry
from quantour.allometry import AllometryError, RatioCutoff


def _data(seed, n=400, b=1 / 3, noise=0.02):
    rng = np.random.default_rng(seed)
    z1 = rng.normal(2.9, 0.12, n)
    z2 = 0.4 + b * z1 + rng.normal(0, noise, n)
    return 10 ** z1, 10 ** z2


@pytest.mark.parametrize("seed", range(5))
def test_sma_and_ma_closed_forms(seed):
    y1, y2 = _data(seed)
    z1, z2 = np.log10(y1), np.log10(y2)
    sma = allometry.fit_allometric(y1, y2, "SMA", bootstrap=0)
    assert sma.b == pytest.approx(np.std(z2) / np.std(z1), rel=1e-12)
    assert sma.log10_a == pytest.approx(z2.mean() - sma.b * z1.mean(), rel=1e-12)
    w, v = np.linalg.eigh(np.cov(z1, z2))
    ma = allometry.fit_allometric(y1, y2, "MA", bootstrap=0)
    assert ma.b == pytest.approx(v[1, 1] / v[0, 1], rel=1e-10)
    assert sma.r == pytest.approx(np.corrcoef(z1, z2)[0, 1], rel=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_median_line_matches_statsmodels_objective(seed):
    y1, y2 = _data(seed, n=201)
    z1, z2 = np.log10(y1), np.log10(y2)
    fit = allometry.fit_allometric(y1, y2, "median", bootstrap=0)
    X = sm.add_constant(z1)
    ref = sm.QuantReg(z2, X).fit(q=0.5).params

    def loss(a, b):
        return np.sum(np.abs(z2 - a - b * z1))

    assert loss(fit.log10_a, fit.b) <= loss(*ref) + 1e-12


def test_ma_is_orthogonal_least_squares():
    y1, y2 = _data(11)
    z1, z2 = np.log10(y1), np.log10(y2)
    fit = allometry.fit_allometric(y1, y2, "MA", bootstrap=0)

    def ortho(b):
        a = z2.mean() - b * z1.mean()
        return np.sum((z2 - a - b * z1) ** 2) / (1 + b * b)

    for db in (-1e-4, 1e-4):
        assert ortho(fit.b) <= ortho(fit.b + db)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(0.1, 10),
       st.sampled_from(["SMA", "MA"]))
def test_unit_change_invariance(seed, c1, c2, method):
    y1, y2 = _data(seed, n=80)
    base = allometry.fit_allometric(y1, y2, method, bootstrap=0)
    moved = allometry.fit_allometric(c1 * y1, c2 * y2, method, bootstrap=0)
    assert moved.b == pytest.approx(base.b, rel=1e-9)
    assert moved.log10_a == pytest.approx(base.log10_a + math.log10(c2) - base.b * math.log10(c1), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.95))
def test_ratio_cutoff_is_type1_quantile(seed, level):
    y1, y2 = _data(seed, n=97)
    fit = allometry.fit_allometric(y1, y2, bootstrap=0)
    cut = allometry.ratio_cutoff(y1, y2, fit, level, bootstrap=0)
    r = np.sort(y2 / y1 ** fit.b)
    k = max(1, math.ceil(97 * level - 1e-9))
    assert cut.value == r[k - 1]
    # records above the cutoff lie strictly above the tangent line
    _, upper = allometry.tangent_lines(fit, cut, cut)
    above = (y2 / y1 ** fit.b) > cut.value
    assert np.all(np.log10(y2[above]) > upper(np.log10(y1[above])))


def test_bootstrap_is_seeded_and_sensible():
    y1, y2 = _data(4, n=300)
    a = allometry.fit_allometric(y1, y2, bootstrap=100, seed=9)
    b = allometry.fit_allometric(y1, y2, bootstrap=100, seed=9)
    c = allometry.fit_allometric(y1, y2, bootstrap=100, seed=10)
    assert a == b and a.se_b != c.se_b
    # SMA slope SE from the usual large-sample formula
    approx = a.b * math.sqrt((1 - a.r ** 2) / 300)
    assert 0.7 * approx < a.se_b < 1.4 * approx
    cut = allometry.ratio_cutoff(y1, y2, a, 0.9, bootstrap=50, seed=1)
    assert cut.se > 0 and cut == allometry.ratio_cutoff(y1, y2, a, 0.9, bootstrap=50, seed=1)


def test_ratio_and_direction():
    assert allometry.ratio(390.0, 19.5, 0.4125) == pytest.approx(19.5 / 390 ** 0.4125)
    assert np.allclose(allometry.ratio([1.0, 8.0], [2.0, 2.0], 1 / 3), [2.0, 1.0])
    d = allometry.allometric_direction(0.75)
    assert np.allclose(d.vector, [0.6, -0.8])
    with pytest.raises(AllometryError):
        allometry.ratio(0.0, 1.0, 0.3)


def test_tangent_lines():
    lo, hi = allometry.tangent_lines(0.3, RatioCutoff(0.1, 1.0), RatioCutoff(0.9, 100.0))
    assert (lo.intercept, hi.intercept, lo.slope, hi.side) == (0.0, 2.0, 0.3, "upper")


def test_validation_errors():
    with pytest.raises(AllometryError):
        allometry.fit_allometric([1, 2], [1, 2])
    with pytest.raises(AllometryError):
        allometry.fit_allometric([1, 2, -3], [1, 2, 3])
    with pytest.raises(AllometryError):
        allometry.fit_allometric([1, 2, 3], [1, 2])
    with pytest.raises(AllometryError):
        allometry.fit_allometric([2, 2, 2], [1, 2, 3], bootstrap=0)
    with pytest.raises(AllometryError):
        allometry.fit_allometric([1, 2, 3], [1, 2, 3], method="OLS")
    with pytest.raises(AllometryError):
        allometry.fit_allometric([1, 2, 3], [2, 2, 2], method="MA", bootstrap=0)


def test_negative_slope_warns():
    y1 = np.array([1.0, 2.0, 4.0, 8.0])
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        fit = allometry.fit_allometric(y1, 1 / y1, bootstrap=0)
    assert not fit.valid and any("not positive" in str(x.message) for x in w)


def test_slope_homogeneity():
    rng = np.random.default_rng(5)
    same = {g: _data(s, n=150) for g, s in zip("abc", (1, 2, 3))}
    res = allometry.slope_homogeneity(same, n_permutations=199, seed=rng.integers(1000))
    assert 0 < res.p_value <= 1 and len(res.slopes) == 3
    y1, _ = _data(4, n=150)
    diff = dict(same, c=(y1, 10 ** (0.4 + 0.6 * np.log10(y1))))
    res2 = allometry.slope_homogeneity(diff, n_permutations=199, seed=0)
    assert res2.p_value == pytest.approx(1 / 200)
    with pytest.raises(AllometryError):
        allometry.slope_homogeneity({"a": same["a"]})
