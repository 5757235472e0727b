"""Experiment runners behind the command line.

Each runner takes a validated config and an output directory, writes CSV
tables there and returns a summary dict with a boolean ``passed``.
"""

import csv
import itertools
import os

import numpy as np

from .bsde import Driver, solve_quadratic_bsde_small
from .controlled import StochasticControlledPath
from .flow import VectorField, solve_nonlinear_rough_bsde
from .integral import rough_stochastic_integrate
from .linear import LinearRoughBsdeProblem, duality_closed_form, solve_linear_rough_bsde
from .models import BinomialTree, BrownianEnsemble, simulate_brownian
from .pde import MarkovianProblem, continuity_in_X_audit, fd_pde_oracle, feynman_kac_u
from .roughpath import (
    SampledPath,
    TimeGrid,
    canonical_lift,
    dyadic_indices,
    increment_magnitudes,
    ito_brownian_lift,
    p_variation,
    sine_path,
)
from .tables import ConvergenceTable, fit_rate


def _write_rows(filename, header, rows):
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def chen_violation(rp):
    """Largest defect of Chen's relation over all grid triples s < u < t.

    Each defect is measured relative to the size of the terms it combines.
    """
    n = rp.grid.n_cells
    s, u, t = (np.array(a) for a in zip(*itertools.combinations(range(n + 1), 3)))
    st, su, ut = rp.level2_pairs(s, t), rp.level2_pairs(s, u), rp.level2_pairs(u, t)
    a, b = rp.level1_pairs(s, u), rp.level1_pairs(u, t)
    rhs = a[..., :, None] * b[..., None, :]
    norm = lambda v: np.sqrt(np.sum(v * v, axis=(-2, -1)))  # noqa: E731
    scale = np.maximum.reduce([norm(rhs), norm(st), norm(su), norm(ut)])
    defect = norm(st - su - ut - rhs)
    return float(np.max(np.where(scale > 0, defect / np.where(scale > 0, scale, 1.0), defect)))


def random_piecewise_linear(rng, max_dim, max_cells, kind="random"):
    e = int(rng.integers(1, max_dim + 1))
    n = int(rng.integers(2, max_cells + 1))
    grid = TimeGrid(np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 1.0, n))]))
    if kind == "linear":
        values = np.outer(grid.points, rng.standard_normal(e))
    else:
        values = np.cumsum(rng.standard_normal((n + 1, e)), axis=0)
    return SampledPath(grid, values)


def run_chen_check(cfg, outdir):
    p = cfg.params
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for i in range(p["n_paths"]):
        path = random_piecewise_linear(rng, p["max_dim"], p["max_cells"], p["path"])
        viol = chen_violation(canonical_lift(path, 2.5))
        rows.append((i, path.dim, path.grid.n_cells, viol))
    _write_rows(os.path.join(outdir, "chen.csv"), ["path", "dim", "cells", "max_relative_defect"], rows)
    violations = sum(r[3] > p["tol"] for r in rows)
    return {"passed": violations == 0, "violations": violations, "worst": max(r[3] for r in rows)}


def pvar_brute_force(magnitudes, q):
    """Maximum over every partition, enumerated as subsets of interior points and summed left to right."""
    powered = np.asarray(magnitudes, dtype=np.float64) ** q
    n = powered.shape[0] - 1
    best = 0.0
    for mask in range(1 << max(n - 1, 0)):
        prev, total = 0, 0.0
        for j in range(1, n):
            if mask >> (j - 1) & 1:
                total = total + powered[prev, j]
                prev = j
        best = max(best, total + powered[prev, n])
    return best ** (1.0 / q)


def run_pvar_check(cfg, outdir):
    p = cfg.params
    rng = np.random.default_rng(cfg.seed)
    rows, mismatches = [], 0
    for i in range(p["n_paths"]):
        n_pts = int(rng.integers(2, p["max_points"] + 1))
        values = np.cumsum(rng.standard_normal((n_pts, int(rng.integers(1, 4)))), axis=0)
        mags = increment_magnitudes(values)
        for q in p["exponents"]:
            dp = p_variation(mags, q)
            bf = pvar_brute_force(mags, q)
            mismatches += dp != bf
            rows.append((i, n_pts, q, dp, bf))
    _write_rows(os.path.join(outdir, "pvar.csv"), ["path", "points", "q", "dynamic_programme", "brute_force"], rows)
    return {"passed": mismatches == 0, "mismatches": int(mismatches)}


def ito_table(levels, n_samples, T, seed):
    fine = TimeGrid.uniform(T, 2 ** max(levels))
    ens = simulate_brownian(fine, n_samples, 1, seed=seed)
    table = ConvergenceTable(label="Ito integral of W against (W_T^2 - T)/2")
    for lvl in levels:
        idx = dyadic_indices(fine.n_cells, lvl)
        coarse = BrownianEnsemble(fine.subgrid(idx), ens.W[:, idx], seed=seed)
        rough = ito_brownian_lift(coarse, 2.5)
        S, n1 = coarse.W.shape[:2]
        scp = StochasticControlledPath(coarse.W.copy(), np.ones((S, n1, 1, 1)), rough, coarse, 2.5, 2.5)
        integral = rough_stochastic_integrate(scp, floor=True).values[:, -1]
        WT = coarse.W[:, -1, 0]
        err = float(np.sqrt(np.mean((integral - 0.5 * (WT ** 2 - T)) ** 2)))
        table.add(lvl, T / 2 ** lvl, err)
    return table


def run_ito_consistency(cfg, outdir):
    p = cfg.params
    table = ito_table(p["levels"], p["n_samples"], p["T"], cfg.seed)
    table.to_csv(os.path.join(outdir, "ito_rate.csv"))
    fit = fit_rate(table)
    _write_rows(os.path.join(outdir, "ito_fit.csv"), ["slope", "band_low", "band_high"], [(fit.slope, *fit.band)])
    return {"passed": p["slope_low"] <= fit.slope <= p["slope_high"], "slope": fit.slope, "band": list(fit.band)}


def run_duality(cfg, outdir):
    p = cfg.params
    tree = BinomialTree(p["steps"], 1.0, 1, substeps=p["substeps"])
    rough = canonical_lift(sine_path(tree.grid, p["amplitude"]), 2.5)
    xi = np.cos(tree.W[:, -1, 0]) + 0.5
    sol = solve_linear_rough_bsde(LinearRoughBsdeProblem.scalar_constant(xi, p["g"], rough, tree))
    exact = duality_closed_form(xi, p["g"], rough, tree)
    err0 = float(abs(sol.Y[0, 0, 0] - exact[0, 0]))
    sol.to_csv(os.path.join(outdir, "solution.csv"))
    _write_rows(
        os.path.join(outdir, "windows.csv"),
        ["start", "end", "iterations", "max_ratio"],
        [(w.start, w.end, w.iterations, float(w.max_ratio)) for w in sol.windows],
    )
    return {
        "passed": err0 <= p["tol"] and sol.converged, "error_Y0": err0,
        "error_sup": float(np.max(np.abs(sol.Y[:, :, 0] - exact))), "max_ratio": sol.max_ratio,
        "residual": sol.residual_max,
    }


def run_cole_hopf(cfg, outdir):
    p = cfg.params
    tree = BinomialTree(p["steps"], 1.0, 1)
    xi = p["xi_scale"] * np.tanh(tree.W[:, -1, 0])
    L = p["L"]
    sol = solve_quadratic_bsde_small(xi, Driver.quadratic(L), tree)
    exact = np.log(tree.cond_exp_path(np.repeat(np.exp(2 * L * xi)[:, None], len(tree.grid), axis=1))) / (2 * L)
    err = float(np.max(np.abs(sol.Y[:, :, 0] - exact)))
    ratio = max(sol.contraction_ratios, default=0.0)
    _write_rows(os.path.join(outdir, "picard.csv"), ["iteration", "distance"], list(enumerate(sol.distances, 1)))
    return {"passed": err <= p["tol"] and ratio <= p["max_ratio"], "error": err, "max_ratio": ratio}


def run_nonlinear_flow(cfg, outdir):
    p = cfg.params
    tree = BinomialTree(p["steps"], 1.0, 1, substeps=p["substeps"])
    path = sine_path(tree.grid, p["amplitude"])
    xi = p["xi_scale"] * np.tanh(tree.W[:, -1, 0])
    field = VectorField.sin_saturating([[p["drift_scale"]]])
    sol = solve_nonlinear_rough_bsde(xi, Driver.quadratic(p["L"]), field, path, tree, p["levels"], eps=p["eps"])
    sol.cauchy.to_csv(os.path.join(outdir, "cauchy.csv"))
    return {"passed": bool(sol.converged), "cauchy": [r[2] for r in sol.cauchy.rows], "bound": sol.solution_bound}


def _pde_setup(p):
    tree = BinomialTree(p["steps"], 1.0, 1, substeps=p["substeps"])
    path = sine_path(tree.grid, p["amplitude"])
    return tree, path, MarkovianProblem.heat(g=p["g"])


def run_fk_vs_fd(cfg, outdir):
    p = cfg.params
    tree, path, problem = _pde_setup(p)
    rough = canonical_lift(path, 2.5)
    xs = np.linspace(-1.0, 1.0, p["x_points"])
    fk = feynman_kac_u(problem, rough, tree, [0.0], xs)
    fd = fd_pde_oracle(problem, rough, [0.0], xs, dx=p["dx"])
    fk.to_csv(os.path.join(outdir, "u_feynman_kac.csv"))
    fd.to_csv(os.path.join(outdir, "u_finite_difference.csv"))
    gap = float(np.max(np.abs(fk.u - fd.u)))
    return {"passed": gap <= p["tol"], "max_gap": gap}


def run_pde_continuity(cfg, outdir):
    p = cfg.params
    tree, path, problem = _pde_setup(p)
    table, _ = continuity_in_X_audit(problem, path, tree, p["levels"], p["times"], np.linspace(-1, 1, p["x_points"]))
    table.to_csv(os.path.join(outdir, "continuity.csv"))
    return {"passed": table.strictly_decreasing(), "distances": [r[2] for r in table.rows]}


RUNNERS = {
    "chen-check": run_chen_check,
    "pvar-check": run_pvar_check,
    "ito-consistency": run_ito_consistency,
    "linear-rough-bsde-duality": run_duality,
    "quadratic-cole-hopf": run_cole_hopf,
    "nonlinear-flow": run_nonlinear_flow,
    "rough-pde-fk-vs-fd": run_fk_vs_fd,
    "rough-pde-continuity": run_pde_continuity,
}
