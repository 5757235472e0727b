import numpy as np
import pytest

from roughbsde.bsde import Driver
from roughbsde.controlled import EssBoundedControlledPath
from roughbsde.linear import (
    LinearRoughBsdeProblem,
    RoughPathTooRough,
    boundedness_audit,
    continuity_audit,
    drift_integrand,
    duality_closed_form,
    solve_linear_rough_bsde,
)
from roughbsde.models import BinomialTree
from roughbsde.roughpath import SampledPath, canonical_lift, sine_path


@pytest.fixture(scope="module")
def tree():
    return BinomialTree(4, 1.0, 1, substeps=32)


def _rough(tree, amplitude=0.5):
    return canonical_lift(sine_path(tree.grid, amplitude), 2.5)


def test_no_rough_drift_gives_conditional_expectation(tree):
    xi = np.sin(tree.W[:, -1, 0])
    sol = solve_linear_rough_bsde(LinearRoughBsdeProblem.scalar_constant(xi, 0.0, _rough(tree), tree))
    exact = tree.cond_exp_path(np.repeat(xi[:, None], len(tree.grid), axis=1))
    assert np.allclose(sol.Y[..., 0], exact, atol=1e-12)
    assert not np.any(sol.Yp)


def test_constant_source_shifts_by_path_increment(tree):
    xi = np.cos(tree.W[:, -1, 0])
    rough = _rough(tree)
    h = 0.8
    sol = solve_linear_rough_bsde(LinearRoughBsdeProblem.scalar_constant(xi, 0.0, rough, tree, h=h))
    X = rough.X[:, 0]
    exact = tree.cond_exp_path(np.repeat(xi[:, None], len(X), axis=1)) + h * (X[-1] - X)[None]
    assert np.allclose(sol.Y[..., 0], exact, atol=1e-12)
    assert np.allclose(sol.Yp, -h)


def test_duality_with_constant_coefficient(tree):
    xi = np.cos(tree.W[:, -1, 0]) + 0.5
    rough = _rough(tree, 1.0)
    sol = solve_linear_rough_bsde(LinearRoughBsdeProblem.scalar_constant(xi, 0.5, rough, tree))
    exact = duality_closed_form(xi, 0.5, rough, tree)
    assert sol.converged
    assert abs(sol.Y[0, 0, 0] - exact[0, 0]) < 1e-5
    assert sol.max_ratio < 0.5


def test_derivative_is_minus_the_drift_integrand(tree):
    rough = _rough(tree)
    X = rough.X[:, 0]
    G = EssBoundedControlledPath((0.3 + 0.2 * X).reshape(1, -1, 1, 1, 1), np.full((1, len(X), 1, 1, 1, 1), 0.2), rough)
    H = (0.1 - 0.4 * X).reshape(1, -1, 1, 1)
    Hp = np.full(H.shape + (1,), -0.4)
    xi = np.sin(tree.W[:, -1, 0])
    prob = LinearRoughBsdeProblem(xi, Driver.linear(a=0.2, b=0.1, c=0.3), G, H, Hp, rough, tree)
    sol = solve_linear_rough_bsde(prob)
    n = tree.grid.n_cells
    J, _ = drift_integrand(prob, sol.Y, sol.Yp, 0, n)
    assert np.allclose(sol.Yp, -J)
    assert sol.residual_max < 1e-10


def test_extension_and_zero_starts_agree(tree):
    xi = np.sin(tree.W[:, -1, 0])
    prob = LinearRoughBsdeProblem.scalar_constant(xi, 0.4, _rough(tree), tree, driver=Driver.linear(a=0.3), h=0.2)
    a = solve_linear_rough_bsde(prob)
    b = solve_linear_rough_bsde(prob, start="zero")
    assert np.max(np.abs(a.Y - b.Y)) < 1e-10


def test_too_rough_for_grid():
    tree = BinomialTree(2, 1.0, 1)
    rough = _rough(tree, 5.0)
    with pytest.raises(RoughPathTooRough):
        solve_linear_rough_bsde(LinearRoughBsdeProblem.scalar_constant(np.zeros(4), 0.5, rough, tree))


def test_declared_lipschitz_constant_is_audited(tree):
    drv = Driver(lambda t, y, z, k: 2.0 * y, lipschitz_L=0.5)
    prob = LinearRoughBsdeProblem.scalar_constant(np.zeros(tree.n_samples), 0.1, _rough(tree), tree, driver=drv)
    with pytest.raises(ValueError, match="assumption audit"):
        solve_linear_rough_bsde(prob)


def test_solution_csv(tree, tmp_path):
    prob = LinearRoughBsdeProblem.scalar_constant(np.ones(tree.n_samples), 0.2, _rough(tree), tree)
    sol = solve_linear_rough_bsde(prob)
    sol.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "sample,t,y_1,z_1_1"
    assert len(lines) == 1 + tree.n_samples * len(tree.grid)


def test_continuity_and_boundedness_tables():
    tree = BinomialTree(4, 1.0, 1, substeps=64)
    base = sine_path(tree.grid, 0.3)
    t = tree.grid.points
    xi = np.sin(tree.W[:, -1, 0])

    def problem(d):
        rough = canonical_lift(SampledPath(tree.grid, base.values + d * np.sin(5 * t)[:, None]), 2.5)
        return LinearRoughBsdeProblem.scalar_constant(xi + d * np.cos(tree.W[:, -1, 0]), 0.4 + d, rough, tree)

    family = [problem(2.0 ** -k) for k in range(1, 5)]
    table = continuity_audit(family, problem(0.0))
    assert table.strictly_decreasing()
    bounded = boundedness_audit(family)
    assert np.all(np.isfinite(bounded.outputs))
    assert max(bounded.outputs) < 2 * min(bounded.outputs)
