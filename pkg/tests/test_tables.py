import pytest
from hypothesis import given
from hypothesis import strategies as st

from roughbsde.tables import ConvergenceTable, fit_rate


def _table(outputs, inputs=None):
    t = ConvergenceTable()
    inputs = inputs if inputs is not None else [2.0 ** -k for k in range(len(outputs))]
    for k, (a, b) in enumerate(zip(inputs, outputs)):
        t.add(k, a, b)
    return t


@given(st.floats(0.1, 3.0), st.floats(0.01, 100.0))
def test_exact_power_law_slope(rate, scale):
    h = [2.0 ** -k for k in range(5)]
    fit = fit_rate(_table([scale * x ** rate for x in h], h))
    assert fit.slope == pytest.approx(rate, abs=1e-9)
    assert fit.band[0] <= fit.slope <= fit.band[1]


def test_halving_and_quartering():
    assert fit_rate(_table([1, 0.5, 0.25, 0.125])).slope == pytest.approx(1.0)
    assert fit_rate(_table([1, 0.25, 0.0625, 0.015625])).slope == pytest.approx(2.0)


def test_fit_against_level():
    t = ConvergenceTable()
    for lvl in (1, 2, 4, 8):
        t.add(lvl, 1.0, 3.0 / lvl)
    assert fit_rate(t, against="level").slope == pytest.approx(-1.0)


def test_too_few_rows_or_nonpositive():
    with pytest.raises(ValueError):
        fit_rate(_table([1.0, 0.5]))
    with pytest.raises(ValueError):
        fit_rate(_table([1.0, 0.0, 0.1]))


def test_monotonicity_helpers(tmp_path):
    t = _table([1.0, 0.5, 0.1])
    assert t.strictly_decreasing() and t.trends_to_zero()
    assert not _table([1.0, 1.0, 0.1]).strictly_decreasing()
    t.to_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "level,input_distance,output_distance"
