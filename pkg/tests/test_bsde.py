import numpy as np
import pytest

from roughbsde.bsde import (
    Driver,
    bmo_norm,
    bsde_continuity_audit,
    regime_constants,
    solve_lipschitz_bsde,
    solve_quadratic_bsde_small,
)
from roughbsde.models import BinomialTree


@pytest.fixture(scope="module")
def tree():
    return BinomialTree(8, 1.0, 1)


def test_zero_driver_gives_conditional_expectation(tree):
    xi = np.sin(tree.W[:, -1, 0])
    sol = solve_lipschitz_bsde(xi, Driver.zero(), tree)
    exact = tree.cond_exp_path(np.repeat(xi[:, None], 9, axis=1))
    assert np.allclose(sol.Y[..., 0], exact, atol=1e-15)
    assert sol.discrete_residual(Driver.zero()) < 1e-14


def test_linear_driver_against_backward_recursion(tree):
    a, c = 0.4, -0.3
    xi = np.cos(tree.W[:, -1, 0])
    sol = solve_lipschitz_bsde(xi, Driver.linear(a=a, c=c), tree)
    dt = 1.0 / 8
    y = xi.copy()
    for k in range(7, -1, -1):
        y = (tree.cond_exp(y, k) + c * dt) / (1 - a * dt)
        assert np.allclose(sol.Y[:, k, 0], y, atol=1e-12)


def test_linear_z_driver_is_a_change_of_measure():
    # f = b z, xi = W_T: the discrete solution is W_t + b (T - t)
    tree = BinomialTree(6, 1.0, 1)
    b = 0.7
    sol = solve_lipschitz_bsde(tree.W[:, -1, 0], Driver.linear(b=b), tree)
    t = tree.grid.points
    assert np.allclose(sol.Y[..., 0], tree.W[..., 0] + b * (1 - t)[None], atol=1e-13)
    assert np.allclose(sol.Z[:, :-1, 0, 0], 1.0)


def test_grid_too_coarse():
    tree = BinomialTree(2, 1.0, 1)
    with pytest.raises(ValueError, match="too coarse"):
        solve_lipschitz_bsde(np.zeros(4), Driver.linear(a=3.0), tree)


def test_regime_constants_default():
    eps, R = regime_constants(1.0)
    assert eps == pytest.approx(1 / 32) and R == pytest.approx(1 / 8)


def test_cole_hopf(tree):
    L = 0.25
    xi = 0.03 * np.tanh(tree.W[:, -1, 0])
    sol = solve_quadratic_bsde_small(xi, Driver.quadratic(L), tree)
    exact = np.log(tree.cond_exp_path(np.repeat(np.exp(2 * L * xi)[:, None], 9, axis=1))) / (2 * L)
    assert sol.converged
    assert np.max(np.abs(sol.Y[..., 0] - exact)) < 1e-6
    assert max(sol.contraction_ratios) < 0.5


def test_quadratic_and_lipschitz_solvers_agree(tree):
    # both target the same discrete equation (implicit in Y, explicit in Z)
    xi = 0.02 * np.sin(2 * tree.W[:, -1, 0])
    drv = Driver.quadratic(0.25)
    q = solve_quadratic_bsde_small(xi, drv, tree)
    lip = solve_lipschitz_bsde(xi, drv, tree)
    assert np.max(np.abs(q.Y - lip.Y)) < 1e-12
    assert q.discrete_residual(drv) < 1e-12


def test_outside_regime_raises(tree):
    with pytest.raises(ValueError, match="outside contraction regime"):
        solve_quadratic_bsde_small(np.ones(tree.n_samples), Driver.quadratic(0.25), tree)


def test_two_starts_reach_one_solution(tree):
    xi = 0.025 * np.cos(tree.W[:, -1, 0])
    drv = Driver.quadratic(0.25)
    a = solve_quadratic_bsde_small(xi, drv, tree)
    rng = np.random.default_rng(0)
    start = (0.05 * rng.standard_normal(a.Y.shape), 0.05 * rng.standard_normal(a.Z.shape))
    b = solve_quadratic_bsde_small(xi, drv, tree, initial=start)
    assert np.max(np.abs(a.Y - b.Y)) < 1e-11
    assert bmo_norm(a.Z - b.Z, tree) < 1e-11


def test_continuity_in_data(tree):
    WT = tree.W[:, -1, 0]
    xi = 0.02 * np.tanh(WT)
    limit = (xi, Driver.quadratic(0.25))
    instances = [(xi + 2.0 ** -k * 0.01 * np.cos(WT), Driver.quadratic(0.25 + 2.0 ** -k * 0.1)) for k in range(1, 5)]
    table = bsde_continuity_audit(instances, limit, tree)
    assert table.strictly_decreasing()
    assert np.all(np.diff(table.inputs) < 0)
