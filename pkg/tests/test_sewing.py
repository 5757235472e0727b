import numpy as np
import pytest

from roughbsde.models import BinomialTree
from roughbsde.roughpath import SampledPath, TimeGrid, canonical_lift, sine_path
from roughbsde.sewing import Germ, sew_deterministic, sew_stochastic


def _increment_germ(X):
    return Germ(lambda s, t: (X[t] - X[s])[None], adapted=False)


def test_additive_germ_telescopes_at_every_level():
    g = TimeGrid.uniform(1.0, 32)
    X = np.cos(3 * g.points)
    rep = sew_deterministic(_increment_germ(X), g, target=np.array([0, 32]), tol=0.0, max_levels=5)
    assert max(rep.refinement_errors) < 1e-14
    assert rep.values[0, -1] == pytest.approx(X[-1] - X[0], abs=1e-15)


def test_path_times_increment_germ_gives_half_square():
    g = TimeGrid.uniform(1.0, 64)
    rp = canonical_lift(sine_path(g, 1.3), 2.5)
    X = rp.X[:, 0]

    def ev(s, t):
        return (X[s] * (X[t] - X[s]) + rp.level2_pairs(s, t)[:, 0, 0])[None]

    rep = sew_deterministic(Germ(ev, adapted=False), g, target=np.array([0, 64]), tol=1e-14)
    assert rep.values[0, -1] == pytest.approx(0.5 * (X[-1] ** 2 - X[0] ** 2), abs=1e-12)


def test_riemann_germ_converges_with_refinement():
    g = TimeGrid.uniform(1.0, 1024)
    X = np.exp(g.points)

    def ev(s, t):
        return (X[s] * (X[t] - X[s]))[None]

    rep = sew_deterministic(Germ(ev, adapted=False), g, target=np.array([0, 1024]), tol=1e-6)
    assert rep.converged
    errs = rep.refinement_errors
    assert errs[-1] < errs[0]


def test_floor_uses_full_grid():
    g = TimeGrid.uniform(1.0, 8)
    X = g.points ** 2
    rep = sew_deterministic(Germ(lambda s, t: (X[s] * (X[t] - X[s]))[None], adapted=False), g, floor=True)
    assert rep.at_floor and rep.refinement_errors == []
    assert rep.values[0, -1] == pytest.approx(np.sum(X[:-1] * np.diff(X)))


def test_non_finite_germ_rejected():
    g = TimeGrid.uniform(1.0, 4)
    with pytest.raises(ValueError, match="non-finite"):
        sew_deterministic(Germ(lambda s, t: np.full((1, len(s)), np.nan), adapted=False), g)


def test_triadic_schedule_matches_dyadic_limit():
    g = TimeGrid.uniform(1.0, 81)
    X = np.sin(g.points)

    def ev(s, t):
        return (X[s] * (X[t] - X[s]) + 0.5 * (X[t] - X[s]) ** 2)[None]

    a = sew_deterministic(Germ(ev, adapted=False), g, target=np.array([0, 81]), tol=0.0, schedule="triadic")
    assert a.values[0, -1] == pytest.approx(0.5 * (X[-1] ** 2 - X[0] ** 2), abs=1e-13)


def test_martingale_germ_is_exact_and_centred():
    tree = BinomialTree(6, 1.0, 1, substeps=2)
    M = tree.cond_exp_path(np.repeat(np.cos(tree.W[:, -1, 0])[:, None], len(tree.grid), axis=1))
    rep = sew_stochastic(Germ(lambda s, t: M[:, t] - M[:, s]), tree.grid, tree, target=np.array([0, 12]))
    assert np.allclose(rep.values[:, -1], M[:, -1] - M[:, 0], atol=1e-14)
    assert rep.centering < 1e-14 and not rep.centering_flagged


def test_centering_audit_flags_biased_germ():
    tree = BinomialTree(6, 1.0, 1)
    W = tree.W[:, :, 0]
    # |dW| is not centred: E_s of its second difference is nonzero
    germ = Germ(lambda s, t: np.abs(W[:, t] - W[:, s]))
    rep = sew_stochastic(germ, tree.grid, tree, target=np.array([0, 6]))
    assert rep.centering_flagged


def test_stochastic_sewing_needs_adapted_germ():
    g = TimeGrid.uniform(1.0, 2)
    with pytest.raises(ValueError):
        sew_stochastic(Germ(lambda s, t: np.zeros((1, len(s))), adapted=False), g, None)


def test_report_csv(tmp_path):
    g = TimeGrid.uniform(1.0, 16)
    X = g.points ** 3
    rep = sew_deterministic(Germ(lambda s, t: (X[s] * (X[t] - X[s]))[None], adapted=False), g, target=np.array([0, 16]))
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "level,error" and len(lines) == len(rep.refinement_errors) + 1


def test_sampled_path_rejects_mismatched_values():
    g = TimeGrid.uniform(1.0, 3)
    with pytest.raises(ValueError):
        SampledPath(g, np.zeros((3, 1)))
