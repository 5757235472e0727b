import numpy as np
import pytest

from roughbsde.controlled import (
    EssBoundedControlledPath,
    StochasticControlledPath,
    check_exponents,
    controlled_distance,
    controlled_norm,
    drift_integral_audit,
    leibniz_bound_ratio,
    leibniz_martingale_part,
    leibniz_product,
    lift_drift_integral,
    riemann_integral,
    sample_points,
)
from roughbsde.models import BinomialTree, deterministic_model, martingale_decomposition
from roughbsde.roughpath import TimeGrid, canonical_lift, sine_path


@pytest.fixture
def setup():
    tree = BinomialTree(5, 1.0, 1, substeps=2)
    rough = canonical_lift(sine_path(tree.grid, 0.4), 2.5)
    Y = np.sin(tree.W) + rough.X[None]
    return tree, rough, StochasticControlledPath(Y, np.ones(Y.shape + (1,)), rough, tree)


def test_exponent_rules():
    check_exponents(2.5, 2.5, 2.5)
    with pytest.raises(ValueError):
        check_exponents(2.5, 2.0, 3.0)
    with pytest.raises(ValueError):
        check_exponents(2.5, 4.0, 4.0)


def test_sample_points_keeps_endpoints():
    idx = sample_points(3, 500, 20)
    assert idx[0] == 3 and idx[-1] == 500 and idx.size <= 20
    assert np.array_equal(sample_points(0, 5), np.arange(6))


def test_remainder_vanishes_for_the_path_itself():
    g = TimeGrid.uniform(1.0, 16)
    rough = canonical_lift(sine_path(g, 1.0), 2.5)
    scp = StochasticControlledPath(rough.X[None].copy(), np.ones((1, 17, 1, 1)), rough, deterministic_model(g))
    assert scp.remainder_norm() < 1e-15


def test_norm_is_zero_only_at_zero(setup):
    tree, rough, scp = setup
    zero = scp.scale(0.0)
    assert controlled_norm(zero).total == 0.0
    assert controlled_norm(scp).total > 0
    with pytest.raises(ValueError):
        controlled_norm(scp, K=0.5)


def test_norm_is_absolutely_homogeneous(setup):
    _, _, scp = setup
    a = controlled_norm(scp, K=2.0).total
    assert controlled_norm(scp.scale(-3.0), K=2.0).total == pytest.approx(3 * a, rel=1e-12)


def test_distance_matches_norm_of_difference_on_common_path(setup):
    tree, rough, scp = setup
    other = StochasticControlledPath(np.cos(tree.W), 0.5 * np.ones(scp.Yp.shape), rough, tree)
    d = controlled_distance(scp, other, K=1.5).total
    n = controlled_norm(scp - other, K=1.5).total
    assert d == pytest.approx(n, rel=1e-10)
    assert controlled_distance(scp, scp).total == 0.0


def test_leibniz_with_constant_coefficient(setup):
    tree, rough, scp = setup
    G = EssBoundedControlledPath.constant([[0.75]], rough)
    prod = leibniz_product(G, scp)
    assert np.allclose(prod.Y, 0.75 * scp.Y)
    assert np.allclose(prod.Yp, 0.75 * scp.Yp)
    mart = leibniz_martingale_part(G, scp)
    YM = martingale_decomposition(scp.Y, tree).values
    assert np.allclose(mart, 0.75 * YM, atol=1e-14)


def test_martingale_part_of_product_uses_right_point_coefficient():
    # deterministic time-varying G: the martingale part of GY is sum G_{k+1} dY^M_k
    tree = BinomialTree(6, 1.0, 1)
    rough = canonical_lift(sine_path(tree.grid, 0.4), 2.5)
    Y = np.exp(tree.W)
    gvals = 1.0 + tree.grid.points
    G = EssBoundedControlledPath(gvals[None, :, None, None], np.zeros((1, 7, 1, 1, 1)), rough)
    scp = StochasticControlledPath(Y, np.zeros(Y.shape + (1,)), rough, tree)
    direct = martingale_decomposition(leibniz_product(G, scp).Y, tree).values
    dYM = np.diff(martingale_decomposition(Y, tree).values, axis=1)
    right = np.concatenate([np.zeros((Y.shape[0], 1, 1)), np.cumsum(gvals[None, 1:, None] * dYM, axis=1)], axis=1)
    assert np.allclose(direct, right, atol=1e-13)
    left = leibniz_martingale_part(G, scp)
    assert not np.allclose(direct, left, atol=1e-6)


def test_leibniz_derivative_includes_coefficient_derivative(setup):
    tree, rough, scp = setup
    n = len(tree.grid)
    G = EssBoundedControlledPath(
        np.broadcast_to(rough.X[None, :, :, None], (1, n, 1, 1)).copy(), np.ones((1, n, 1, 1, 1)), rough
    )
    prod = leibniz_product(G, scp)
    assert np.allclose(prod.Yp[..., 0], rough.X[None] * scp.Yp[..., 0] + scp.Y)


def test_leibniz_bound_ratio_is_finite(setup):
    _, rough, scp = setup
    G = EssBoundedControlledPath.constant([[0.5]], rough)
    r = leibniz_bound_ratio(G, scp, K=2.0)
    assert 0 < r < np.inf


def test_coefficient_validation():
    g = TimeGrid.uniform(1.0, 2)
    rough = canonical_lift(sine_path(g), 2.5)
    with pytest.raises(ValueError):
        EssBoundedControlledPath(np.full((1, 3, 1, 1), np.nan), np.zeros((1, 3, 1, 1, 1)), rough)
    with pytest.raises(ValueError):
        EssBoundedControlledPath(np.zeros((1, 3, 1, 1)), np.zeros((1, 3, 1, 1)), rough)


def test_riemann_integral_of_constant():
    g = TimeGrid.uniform(2.0, 10)
    out = riemann_integral(np.full((3, 11), 1.5), g)
    assert np.allclose(out, 1.5 * g.points[None])


def test_drift_lift_has_zero_derivative(setup):
    tree, rough, _ = setup
    scp = lift_drift_integral(np.cos(tree.W), tree.grid, rough, tree)
    assert not np.any(scp.Yp)


def test_drift_integral_estimate_holds_with_constant_one():
    tree = BinomialTree(8, 1.0, 1)
    F = np.random.default_rng(2).standard_normal(tree.n_samples)[:, None] * (1 + tree.W[..., 0] ** 2)
    assert drift_integral_audit(F, tree.grid) <= 1.0 + 1e-12
