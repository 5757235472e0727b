import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from roughbsde.roughpath import (
    RoughPath,
    SampledPath,
    TimeGrid,
    canonical_lift,
    dyadic_indices,
    increment_magnitudes,
    p_variation,
    path_p_variation,
    piecewise_linear_approximation,
    read_path_csv,
    read_rough_path_csv,
    reconstruct_level2,
    rough_distance,
    rough_path_metrics,
    sine_path,
    write_path_csv,
    write_rough_path_csv,
)


def brute_force_pvar(values, q):
    """Every partition of the index set, summed left to right."""
    v = np.asarray(values, dtype=float).reshape(len(values), -1)
    powered = np.sqrt(np.sum((v[None] - v[:, None]) ** 2, axis=2)) ** q
    n = len(v) - 1
    best = 0.0
    for r in range(n):
        for interior in itertools.combinations(range(1, n), r):
            chain = (0,) + interior + (n,)
            total = 0.0
            for a, b in zip(chain[:-1], chain[1:]):
                total = total + powered[a, b]
            best = max(best, total)
    return best ** (1.0 / q)


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_grid_rejects_unsorted_points():
    with pytest.raises(ValueError):
        TimeGrid([0.0, 0.5, 0.4])


def test_grid_index_lookup_and_refine():
    g = TimeGrid.uniform(1.0, 4)
    assert g.index_of(0.5) == 2
    with pytest.raises(ValueError, match="not on grid"):
        g.index_of(0.3)
    fine = g.refine(3)
    assert fine.n_cells == 12 and fine.contains(g)


def test_p_must_lie_in_two_three():
    g = TimeGrid.uniform(1.0, 2)
    with pytest.raises(ValueError):
        RoughPath(g, np.zeros((3, 1)), np.zeros((2, 1, 1)), 3.0)


def test_start_normalised_to_zero():
    g = TimeGrid.uniform(1.0, 2)
    rp = canonical_lift(SampledPath(g, np.array([[5.0], [6.0], [4.0]])), 2.5)
    assert rp.X[0, 0] == 0.0
    assert rp.X[-1, 0] == -1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(2, 20), st.integers(0, 2 ** 32 - 1))
def test_chen_relation_on_canonical_lifts(e, n, seed):
    rng = np.random.default_rng(seed)
    g = TimeGrid(np.concatenate([[0], np.cumsum(rng.uniform(0.1, 1, n))]))
    rp = canonical_lift(SampledPath(g, np.cumsum(rng.standard_normal((n + 1, e)), axis=0)), 2.5)
    for s, u, t in itertools.combinations(range(n + 1), 3):
        lhs = rp.level2_pairs(s, t) - rp.level2_pairs(s, u) - rp.level2_pairs(u, t)
        rhs = np.outer(rp.X[u] - rp.X[s], rp.X[t] - rp.X[u])
        scale = max(1.0, np.abs(rp.level2_pairs(s, t)).max(), np.abs(rhs).max())
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 15), st.integers(0, 2 ** 32 - 1))
def test_pairwise_level2_matches_cell_by_cell_sum(e, n, seed):
    rng = np.random.default_rng(seed)
    g = TimeGrid.uniform(1.0, n)
    rp = RoughPath(g, rng.standard_normal((n + 1, e)), rng.standard_normal((n, e, e)), 2.5)
    s, t = sorted(rng.integers(0, n + 1, 2))
    direct = reconstruct_level2(rp, g.points[s], g.points[t])
    assert np.allclose(rp.level2_pairs(s, t), direct, rtol=1e-12, atol=1e-12)


def test_symmetric_part_of_canonical_level2_is_half_square():
    g = TimeGrid.uniform(1.0, 7)
    rng = np.random.default_rng(0)
    rp = canonical_lift(SampledPath(g, rng.standard_normal((8, 2))), 2.5)
    XX = rp.level2_pairs(0, 7)
    dx = rp.X[7] - rp.X[0]
    assert np.allclose(XX + XX.T, np.outer(dx, dx), atol=1e-13)
    assert np.allclose(rp.bracket_cells(), 0.0, atol=1e-14)


@pytest.mark.parametrize("q", [1.0, 1.5, 2.0, 2.5])
def test_pvar_dp_equals_brute_force_exactly(backend, rng, q):
    for _ in range(20):
        n = int(rng.integers(2, 11))
        values = np.cumsum(rng.standard_normal((n, int(rng.integers(1, 4)))), axis=0)
        assert path_p_variation(values, q) == brute_force_pvar(values, q)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(2, 9), elements=finite), st.sampled_from([1.0, 1.5, 2.0, 3.0]))
def test_pvar_property_dp_equals_brute_force(values, q):
    assert path_p_variation(values, q) == brute_force_pvar(values, q)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(2, 12), elements=finite))
def test_pvar_bounds(values):
    # endpoint increment <= q-variation <= 1-variation, and q-variation decreases in q
    v1 = path_p_variation(values, 1.0)
    v2 = path_p_variation(values, 2.0)
    v3 = path_p_variation(values, 3.0)
    end = abs(values[-1] - values[0])
    assert end <= v3 * (1 + 1e-12) + 1e-12
    assert v3 <= v2 * (1 + 1e-12) + 1e-12
    assert v2 <= v1 * (1 + 1e-12) + 1e-12


def test_pvar_of_monotone_path_is_total_increment():
    values = np.array([0.0, 0.3, 0.7, 2.0])
    assert path_p_variation(values, 1.0) == pytest.approx(2.0, abs=1e-15)
    assert path_p_variation(values, 2.0) == pytest.approx(2.0, abs=1e-15)


def test_pvar_zigzag_known_value():
    # 0, 1, 0, 1: with q = 1 every up and down counts, total 3
    assert path_p_variation(np.array([0.0, 1.0, 0.0, 1.0]), 1.0) == pytest.approx(3.0)
    # with q = 2 the fine partition gives 3^(1/2)
    assert path_p_variation(np.array([0.0, 1.0, 0.0, 1.0]), 2.0) == pytest.approx(np.sqrt(3.0))


def test_pvar_rejects_small_exponent():
    with pytest.raises(ValueError):
        p_variation(np.zeros((3, 3)), 0.5)


def test_pvar_window():
    values = np.array([0.0, 1.0, 0.0, 5.0])
    inc = increment_magnitudes(values)
    assert p_variation(inc, 1.0, window=(0, 2)) == pytest.approx(2.0)


def test_metrics_of_straight_line():
    g = TimeGrid.uniform(1.0, 16)
    rp = canonical_lift(SampledPath(g, np.linspace(0, 2, 17)[:, None]), 2.5)
    m = rough_path_metrics(rp)
    assert m.p_var_level1 == pytest.approx(2.0)
    # level 2 of a straight line is (dx)^2 / 2, its p/2-variation is attained on the whole interval
    assert m.p2_var_level2 == pytest.approx(2.0, rel=1e-12)
    assert m.total == pytest.approx(4.0)


def test_distance_to_itself_is_zero_and_symmetric():
    g = TimeGrid.uniform(1.0, 8)
    a = canonical_lift(sine_path(g, 1.0), 2.5)
    b = canonical_lift(sine_path(g, 0.8), 2.5)
    assert rough_distance(a, a) == 0.0
    assert rough_distance(a, b) == pytest.approx(rough_distance(b, a))
    assert rough_distance(a, b) > 0


def test_dyadic_approximation_converges():
    g = TimeGrid.uniform(1.0, 64)
    path = sine_path(g, 1.0)
    limit = canonical_lift(path, 2.5)
    d = [rough_distance(canonical_lift(piecewise_linear_approximation(path, dyadic_indices(64, k)), 2.5), limit)
         for k in (2, 3, 4, 5, 6)]
    assert all(b < a for a, b in zip(d[:-1], d[1:]))
    assert d[-1] == 0.0


def test_dyadic_indices_need_divisible_grid():
    with pytest.raises(ValueError):
        dyadic_indices(12, 3)


def test_path_csv_round_trip(tmp_path):
    g = TimeGrid.uniform(1.0, 5)
    path = SampledPath(g, np.random.default_rng(1).standard_normal((6, 2)))
    write_path_csv(path, tmp_path / "p.csv")
    back = read_path_csv(tmp_path / "p.csv")
    assert back.grid == g
    assert np.array_equal(back.values, path.values)


def test_rough_path_csv_round_trip(tmp_path):
    g = TimeGrid.uniform(1.0, 5)
    rng = np.random.default_rng(2)
    rp = RoughPath(g, rng.standard_normal((6, 2)), rng.standard_normal((5, 2, 2)), 2.5)
    write_rough_path_csv(rp, tmp_path / "r.csv")
    back = read_rough_path_csv(tmp_path / "r.csv", 2.5)
    # cells are stored verbatim, the path through its increments
    assert np.array_equal(back.cells, rp.cells)
    assert np.allclose(back.X, rp.X, rtol=0, atol=1e-14)


def test_restrict_keeps_pairwise_values():
    g = TimeGrid.uniform(1.0, 8)
    rp = canonical_lift(sine_path(g, 1.0, dim=2), 2.5)
    idx = np.array([0, 3, 5, 8])
    sub = rp.restrict(idx)
    assert np.allclose(sub.level2_pairs(1, 3), rp.level2_pairs(3, 8), atol=1e-14)
