"""Markovian rough BSDEs and the rough PDE they represent.

u(t, x, X) is the value at time t of the rough BSDE whose terminal value and
sources are evaluated along a forward diffusion started at x at time t.  For
a smooth drive and one space dimension a Crank-Nicolson solve of the
classical PDE serves as an independent check.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .bsde import Driver
from .controlled import EssBoundedControlledPath
from .linear import LinearRoughBsdeProblem, solve_linear_rough_bsde
from .roughpath import canonical_lift, dyadic_indices, piecewise_linear_approximation, rough_distance
from .tables import ConvergenceTable


@dataclass
class MarkovianProblem:
    """Coefficients on arrays x of shape (S, n1).

    b(t, x) -> (S, n1); sigma(t, x) -> (S, n1, d); l(x) -> (S, n);
    f(t, x, y, z, k) -> (S, n) or None for a zero driver; G(rough) and
    H(rough) return the rough drift coefficients as
    (EssBoundedControlledPath, (H, H')); h(t, x) -> (S, n, e) or None.
    """

    b: object
    sigma: object
    l: object
    n1: int = 1
    n: int = 1
    f: object = None
    G: object = None
    H: object = None
    h: object = None
    lipschitz_f: float = 0.0

    def coefficients(self, rough):
        e = rough.dim
        if self.G is None:
            G = EssBoundedControlledPath.constant(np.zeros((self.n, e, self.n)), rough)
        else:
            G = self.G(rough)
        if self.H is None:
            H = np.zeros((1, len(rough.grid), self.n, e))
            Hp = np.zeros(H.shape + (e,))
        else:
            H, Hp = self.H(rough)
        return G, H, Hp

    @classmethod
    def heat(cls, terminal=lambda x: x ** 2, g=None):
        """Brownian forward process, zero driver, optional constant scalar rough drift g Y dX."""
        G = None
        if g is not None:
            G = lambda rough: EssBoundedControlledPath.constant(np.full((1, 1, 1), float(g)), rough)  # noqa: E731
        return cls(
            b=lambda t, x: np.zeros_like(x),
            sigma=lambda t, x: np.ones(x.shape + (1,)),
            l=terminal,
            G=G,
        )


def coefficient_audit(problem, model, n_probes=32, scale=2.0, h=1e-6, seed=0):
    """Spot values and Lipschitz quotients of b and sigma on random probes."""
    rng = np.random.default_rng(seed)
    t = model.grid.points[rng.integers(0, model.grid.n_cells, n_probes)]
    x = scale * rng.standard_normal((n_probes, problem.n1))
    dx = h * rng.standard_normal((n_probes, problem.n1))
    worst_b, worst_s, bound = 0.0, 0.0, 0.0
    for ti, xi, di in zip(t, x, dx):
        xa, xb = xi[None], (xi + di)[None]
        nd = np.linalg.norm(di)
        worst_b = max(worst_b, float(np.linalg.norm(problem.b(ti, xb) - problem.b(ti, xa)) / nd))
        worst_s = max(worst_s, float(np.linalg.norm(problem.sigma(ti, xb) - problem.sigma(ti, xa)) / nd))
        bound = max(bound, float(np.abs(problem.sigma(ti, xa)).max()))
    ok = all(np.isfinite(v) for v in (worst_b, worst_s, bound))
    return {"lipschitz_b": worst_b, "lipschitz_sigma": worst_s, "sigma_bound": bound, "passed": ok}


def simulate_forward_sde(problem, start, x, model):
    """Euler scheme with the model's increments, frozen at x up to grid index ``start``."""
    S = model.n_samples
    n = model.grid.n_cells
    x = np.broadcast_to(np.asarray(x, dtype=np.float64).reshape(-1), (S, problem.n1))
    out = np.empty((S, n + 1, problem.n1))
    out[:, : start + 1] = x[:, None]
    cur = x.copy()
    pts, dt = model.grid.points, model.grid.dt
    for k in range(start, n):
        drift = problem.b(pts[k], cur)
        vol = problem.sigma(pts[k], cur)
        cur = cur + drift * dt[k] + np.einsum("sad,sd->sa", vol, model.dW[:, k])
        out[:, k + 1] = cur
    return out


def _bsde_for_start(problem, rough, model, start, x, coeffs, solve_kwargs):
    path = simulate_forward_sde(problem, start, x, model)
    G, H, Hp = coeffs
    xi = problem.l(path[:, -1])
    if problem.h is not None:
        hv = np.stack([problem.h(t, path[:, k]) for k, t in enumerate(model.grid.points)], axis=1)
        H = H + hv
        Hp = np.broadcast_to(Hp, H.shape + (rough.dim,)).copy()
    if problem.f is None:
        driver = Driver.zero()
    else:
        driver = Driver(lambda t, y, z, k: problem.f(t, path[:, k], y, z, k), problem.lipschitz_f, name="markovian")
    prob = LinearRoughBsdeProblem(xi, driver, G, H, Hp, rough, model)
    return solve_linear_rough_bsde(prob, **solve_kwargs), path


@dataclass
class RoughPdeSolution:
    times: np.ndarray
    xs: np.ndarray
    u: np.ndarray  # (len(times), len(xs), n)
    provenance: str
    spread: float = 0.0

    def at(self, t, x):
        i = int(np.argmin(np.abs(self.times - t)))
        j = int(np.argmin(np.abs(self.xs - x)))
        return self.u[i, j]

    def to_csv(self, filename):
        with open(filename, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x"] + [f"u_{a + 1}" for a in range(self.u.shape[2])])
            for i, t in enumerate(self.times):
                for j, x in enumerate(self.xs):
                    w.writerow([repr(float(t)), repr(float(x))] + [repr(float(v)) for v in self.u[i, j]])


def feynman_kac_u(problem, rough, model, times, xs, **solve_kwargs):
    """u(t, x) = Y_t for the BSDE driven from x at time t; one solve per grid point.

    ``xs`` are scalars for n1 = 1 or rows of length n1.  ``spread`` reports
    the largest sample-to-sample range of Y_t, zero up to rounding on a tree.
    """
    times = np.asarray(times, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    coeffs = problem.coefficients(rough)
    u = np.empty((times.size, xs.shape[0], problem.n))
    spread = 0.0
    for i, t in enumerate(times):
        k = model.grid.index_of(t)
        for j, x in enumerate(xs):
            if k == model.grid.n_cells:
                u[i, j] = problem.l(np.atleast_2d(x).reshape(1, problem.n1))[0]
                continue
            try:
                sol, _ = _bsde_for_start(problem, rough, model, k, x, coeffs, solve_kwargs)
            except (ValueError, RuntimeError) as exc:
                raise type(exc)(f"at (t={t}, x={x}): {exc}") from exc
            Yt = sol.Y[:, k]
            u[i, j] = Yt.mean(axis=0)
            spread = max(spread, float(np.max(Yt.max(axis=0) - Yt.min(axis=0))))
    return RoughPdeSolution(times, xs, u, "feynman-kac", spread)


def markov_consistency(problem, rough, model, start_x, times, **solve_kwargs):
    """Largest gap between Y_t along the forward path from x at 0 and u(t, S_t) recomputed afresh."""
    coeffs = problem.coefficients(rough)
    sol, path = _bsde_for_start(problem, rough, model, 0, start_x, coeffs, solve_kwargs)
    worst = 0.0
    for t in times:
        k = model.grid.index_of(t)
        states = path[:, k]
        uniq, inv = np.unique(np.round(states, 12), axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        for j, x in enumerate(uniq):
            sub, _ = _bsde_for_start(problem, rough, model, k, x, coeffs, solve_kwargs)
            worst = max(worst, float(np.max(np.abs(sol.Y[inv == j, k] - sub.Y[0, k]))))
    return worst


def _cn_matrices(x, dt, drift, diff, react):
    """Banded (I - dt/2 A) and the explicit operator (I + dt/2 A) on interior points."""
    dx = x[1] - x[0]
    lower = diff / dx ** 2 - drift / (2 * dx)
    main = -2 * diff / dx ** 2 + react
    upper = diff / dx ** 2 + drift / (2 * dx)
    ab = np.zeros((3, x.size - 2))
    ab[0, 1:] = -0.5 * dt * upper[:-1]
    ab[1] = 1 - 0.5 * dt * main
    ab[2, :-1] = -0.5 * dt * lower[1:]
    return ab, (lower, main, upper)


def fd_pde_oracle(problem, rough, times, xs, x_range=(-6.0, 6.0), dx=1e-2, steps_per_cell=8):
    """Crank-Nicolson for u_t + b u_x + sigma^2 u_xx / 2 + f + (G u + H + h) X' = 0, u(T) = l.

    One space dimension, scalar u, and the drive's derivative taken as
    constant on each grid cell.  The far-field boundary is Dirichlet with
    value l.  f is treated explicitly at the previous time level.
    """
    if problem.n1 != 1 or problem.n != 1:
        raise ValueError("the finite-difference oracle is one-dimensional")
    grid = rough.grid
    lo, hi = x_range
    m = int(round((hi - lo) / dx))
    x = lo + dx * np.arange(m + 1)
    X = x[:, None]
    G, H, Hp = problem.coefficients(rough)
    del Hp
    if G.G.shape[0] != 1 or H.shape[0] != 1:
        raise ValueError("the oracle needs deterministic rough drift coefficients")
    u = problem.l(X)[:, 0].astype(np.float64)
    boundary = (u[0], u[-1])
    store = {grid.n_cells: u.copy()}
    worst_cfl = 0.0
    for k in range(grid.n_cells - 1, -1, -1):
        h_cell = grid.dt[k] / steps_per_cell
        xdot = (rough.X[k + 1] - rough.X[k]) / grid.dt[k]
        for s in range(steps_per_cell):
            t_mid = grid.points[k + 1] - (s + 0.5) * h_cell
            b = problem.b(t_mid, X)[:, 0]
            sig = problem.sigma(t_mid, X)[:, 0, :]
            diff = 0.5 * np.sum(sig ** 2, axis=1)
            g = 0.5 * (G.G[0, k] + G.G[0, k + 1])
            react = float(np.einsum("akb,k->", g, xdot)) * np.ones_like(x)
            src = np.einsum("ak,k->", 0.5 * (H[0, k] + H[0, k + 1]), xdot) * np.ones_like(x)
            if problem.h is not None:
                src = src + np.einsum("sak,k->s", problem.h(t_mid, X), xdot)
            if problem.f is not None:
                ux = np.gradient(u, dx)
                z = (sig * ux[:, None])[:, None, :]
                src = src + problem.f(t_mid, X, u[:, None], z, k)[:, 0]
            worst_cfl = max(worst_cfl, float(np.max(diff)) * h_cell / dx ** 2)
            ab, (lower, main, upper) = _cn_matrices(x, h_cell, b[1:-1], diff[1:-1], react[1:-1])
            rhs = u[1:-1] + 0.5 * h_cell * (lower * u[:-2] + main * u[1:-1] + upper * u[2:]) + h_cell * src[1:-1]
            rhs[0] += 0.5 * h_cell * lower[0] * boundary[0]
            rhs[-1] += 0.5 * h_cell * upper[-1] * boundary[1]
            u = np.concatenate([[boundary[0]], solve_banded((1, 1), ab, rhs), [boundary[1]]])
        store[k] = u.copy()
    times = np.asarray(times, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    out = np.empty((times.size, xs.size, 1))
    for i, t in enumerate(times):
        out[i, :, 0] = np.interp(xs, x, store[grid.index_of(t)])
    sol = RoughPdeSolution(times, xs, out, "finite-difference")
    sol.cfl = worst_cfl
    return sol


def continuity_in_X_audit(problem, path, model, levels, times, xs, p=2.5, **solve_kwargs):
    """sup over the (t, x) grid of |u(X^k) - u(X)| for dyadic piecewise-linear lifts X^k of ``path``."""
    limit_rough = canonical_lift(path, p)
    limit = feynman_kac_u(problem, limit_rough, model, times, xs, **solve_kwargs)
    table = ConvergenceTable(label="continuity in the rough path")
    for lvl in levels:
        approx = canonical_lift(piecewise_linear_approximation(path, dyadic_indices(path.grid.n_cells, lvl)), p)
        uk = feynman_kac_u(problem, approx, model, times, xs, **solve_kwargs)
        table.add(lvl, rough_distance(approx, limit_rough), float(np.max(np.abs(uk.u - limit.u))))
    return table, limit
