"""BSDEs with a linear rough drift, solved by windowed Picard iteration.

The equation is

    Y_t = xi + int_t^T f(r, Y_r, Z_r) dr + int_t^T (G_r Y_r + H_r) dX_r - int_t^T Z_r dW_r

with G, H controlled by the (deterministic) rough path X.  One Picard step
freezes (Y, Y', Z), integrates the rough drift by split sewing, takes
conditional expectations of the terminal quantity to get a martingale and
reads Z off its representation.

Sign convention: from the equation, dY = -(GY + H) dX + (martingale and
finite-variation terms), so the Gubinelli derivative of Y is -(GY + H).
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .bsde import Driver, lipschitz_spot_check
from .controlled import (
    EssBoundedControlledPath,
    StochasticControlledPath,
    _contract,
    _contract_coeff_deriv,
    _contract_deriv,
    controlled_distance,
    controlled_norm,
)
from .integral import rough_stochastic_integrate
from .models import lm_norm
from .roughpath import rough_distance, rough_path_metrics, window_pvar_from_right
from .tables import ConvergenceTable


class RoughPathTooRough(ValueError):
    pass


@dataclass
class LinearRoughBsdeProblem:
    """xi (S, n); G (B, N+1, n, e, n) with G' one more e axis; H (B, N+1, n, e) with H' likewise."""

    xi: np.ndarray
    driver: Driver
    G: EssBoundedControlledPath
    H: np.ndarray
    Hp: np.ndarray
    rough: object
    model: object

    def __post_init__(self):
        S = self.model.n_samples
        xi = np.asarray(self.xi, dtype=np.float64)
        if xi.ndim == 0:
            xi = np.full((S, 1), float(xi))
        elif xi.ndim == 1:
            xi = xi[:, None]
        self.xi = xi
        self.H = np.asarray(self.H, dtype=np.float64)
        self.Hp = np.asarray(self.Hp, dtype=np.float64)
        if self.rough.batched:
            raise ValueError("the rough drift must be deterministic")
        if self.rough.grid != self.model.grid:
            raise ValueError("rough path and model must share the grid")

    @property
    def n_dim(self):
        return self.xi.shape[1]

    @property
    def e(self):
        return self.rough.dim

    @classmethod
    def scalar_constant(cls, xi, g, rough, model, driver=None, h=0.0):
        """n = e = 1 with constant G = g and constant H = h."""
        n1 = len(rough.grid)
        G = EssBoundedControlledPath.constant(np.full((1, 1, 1), g), rough)
        H = np.full((1, n1, 1, 1), float(h))
        return cls(xi, driver or Driver.zero(), G, H, np.zeros(H.shape + (1,)), rough, model)


def zero_source(rough, n_dim):
    n1 = len(rough.grid)
    H = np.zeros((1, n1, n_dim, rough.dim))
    return H, np.zeros(H.shape + (rough.dim,))


# ------------------------------------------------------------------ audits

def audit_assumptions(problem, n_probes=16):
    """Finite-moment and Lipschitz spot checks on the problem data."""
    model = problem.model
    S = model.n_samples
    xi_l2 = lm_norm(problem.xi)
    y0 = np.zeros((S, problem.n_dim))
    z0 = np.zeros((S, problem.n_dim, model.d))
    f00 = np.stack([problem.driver(model.grid.points[k], y0, z0, k) for k in range(model.grid.n_cells)], axis=1)
    f00_l2 = float(np.sqrt(np.mean(np.sum(f00 ** 2, axis=2) @ model.grid.dt)))
    lip = lipschitz_spot_check(problem.driver, model, problem.n_dim, n_probes)
    report = {
        "xi_l2": xi_l2,
        "f00_l2": f00_l2,
        "lipschitz_measured": lip,
        "lipschitz_declared": problem.driver.lipschitz_L,
        "G_norm": problem.G.norm(),
        "H_finite": bool(np.all(np.isfinite(problem.H)) and np.all(np.isfinite(problem.Hp))),
    }
    report["passed"] = bool(
        np.isfinite(xi_l2)
        and np.isfinite(f00_l2)
        and lip <= problem.driver.lipschitz_L * (1 + 1e-6) + 1e-9
        and np.isfinite(report["G_norm"])
        and report["H_finite"]
    )
    return report


# ------------------------------------------------------------- Picard step

def _window_coeffs(problem, a, b):
    G = problem.G.G[:, a:b + 1]
    Gp = problem.G.Gp[:, a:b + 1]
    return G, Gp, problem.H[:, a:b + 1], problem.Hp[:, a:b + 1]


def drift_integrand(problem, Y, Yp, a, b):
    """(J, J') = (GY + H, GY' + G'Y + H') on columns a..b."""
    G, Gp, H, Hp = _window_coeffs(problem, a, b)
    J = _contract(G, Y) + H
    Jp = _contract_deriv(G, Yp) + _contract_coeff_deriv(Gp, Y) + Hp
    return J, Jp


def _drift(problem, Y, Z, a, b):
    grid = problem.model.grid
    out = np.zeros_like(Y)
    for j, k in enumerate(range(a, b)):
        out[:, j + 1] = out[:, j] + problem.driver(grid.points[k], Y[:, j], Z[:, j], k) * grid.dt[k]
    return out


@dataclass
class PicardState:
    Y: np.ndarray  # (S, w+1, n)
    Yp: np.ndarray  # (S, w+1, n, e)
    Z: np.ndarray  # (S, w+1, n, d)


def picard_step_phi(problem, state, window=None, eta=None, fixed_Z=None):
    """One application of the Picard map on columns a..b with terminal value ``eta``.

    ``fixed_Z`` supplies Z on cells whose information arrives after b (a
    window ending inside a tree cell); those cells are not re-represented.
    """
    model = problem.model
    n = model.grid.n_cells
    a, b = (0, n) if window is None else window
    eta = problem.xi if eta is None else eta
    Y, Yp, Z = state.Y, state.Yp, state.Z
    J, Jp = drift_integrand(problem, Y, Yp, a, b)
    scp = StochasticControlledPath(J, Jp, problem.rough, model, offset=a)
    integral = rough_stochastic_integrate(scp, floor=True).values
    F = _drift(problem, Y, Z, a, b)
    total = eta + F[:, -1] + integral[:, -1]
    M = model.cond_exp_path(np.repeat(total[:, None], b - a + 1, axis=1), np.arange(a, b + 1))
    Znew = np.zeros_like(Z)
    cache = {}
    for j, k in enumerate(range(a, b)):
        end = model.cell_end(k)
        if end > b:
            Znew[:, j] = fixed_Z[:, k] if fixed_Z is not None else 0.0
            continue
        if end not in cache:
            cache[end] = model.z_from_next(M[:, end - a], k)
        Znew[:, j] = cache[end]
    Ynew = M - F - integral
    Ynew[:, -1] = eta
    Ypnew = -J
    return PicardState(Ynew, Ypnew, Znew)


def state_distance(problem, s1, s2, K, a, max_points=64):
    """||(dY, dY')||^(K) + K ||dZ||_2 on the window a..b."""
    model = problem.model
    diff = StochasticControlledPath(s1.Y - s2.Y, s1.Yp - s2.Yp, problem.rough, model, offset=a)
    dz = s1.Z - s2.Z
    w = dz.shape[1] - 1
    dt = model.grid.dt[a:a + w]
    z2 = float(np.sqrt(np.mean(np.sum(dz[:, :-1].reshape(dz.shape[0], w, -1) ** 2, axis=2) @ dt)))
    return controlled_norm(diff, K, max_points=max_points).total + K * z2


# ----------------------------------------------------------------- windows

@dataclass
class WindowReport:
    start: int
    end: int
    K: float
    eps: float
    ratios: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    @property
    def max_ratio(self):
        return max(self.ratios) if self.ratios else 0.0


def window_constants(problem, C=2.0, window_power=1.0):
    """K = 4(1+C)(1+||(G,G')||) and eps = K^(-window_power)."""
    K = 4.0 * (1.0 + C) * (1.0 + problem.G.norm())
    return K, K ** (-window_power)


def build_windows(rough, eps, a_floor=0):
    """Backward partition into windows with t_b - t_a <= eps and |X|_{p-var;[a,b]} <= eps."""
    t = rough.grid.points
    windows = []
    b = rough.grid.n_cells
    while b > a_floor:
        a_min = max(a_floor, int(np.searchsorted(t, t[b] - eps * (1 + 1e-12), side="left")))
        if a_min >= b:
            raise RoughPathTooRough("rough path too rough for grid")
        sizes = window_pvar_from_right(rough, a_min, b)  # sizes[i] for a = a_min + i
        ok = np.nonzero(sizes[:-1] <= eps)[0]
        if ok.size == 0:
            raise RoughPathTooRough("rough path too rough for grid")
        a = a_min + int(ok[0])
        windows.append((a, b))
        b = a
    return windows[::-1]


# ------------------------------------------------------------------ solver

@dataclass
class RoughBsdeSolution:
    Y: np.ndarray
    Yp: np.ndarray
    Z: np.ndarray
    problem: object
    windows: list
    converged: bool
    residual: float = np.nan
    residual_max: float = np.nan

    @property
    def model(self):
        return self.problem.model

    @property
    def controlled(self):
        return StochasticControlledPath(self.Y, self.Yp, self.problem.rough, self.problem.model)

    @property
    def max_ratio(self):
        return max((w.max_ratio for w in self.windows), default=0.0)

    def norm(self, K=1.0, max_points=64):
        """||(Y, Y')||^(K) + ||Z||_2 on [0, T]."""
        z = self.Z
        n = z.shape[1] - 1
        z2 = float(np.sqrt(np.mean(np.sum(z[:, :-1].reshape(z.shape[0], n, -1) ** 2, axis=2) @ self.model.grid.dt)))
        return controlled_norm(self.controlled, K, max_points=max_points).total + z2

    def to_csv(self, filename):
        S, n1, ny = self.Y.shape
        d = self.Z.shape[-1]
        with open(filename, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "t"] + [f"y_{i + 1}" for i in range(ny)]
                       + [f"z_{i + 1}_{j + 1}" for i in range(ny) for j in range(d)])
            for s in range(S):
                for k, t in enumerate(self.model.grid.points):
                    w.writerow([s, repr(float(t))] + [repr(float(v)) for v in self.Y[s, k]]
                               + [repr(float(v)) for v in self.Z[s, k].ravel()])


def _start_state(problem, a, b, eta, fixed_Z, start):
    S = problem.model.n_samples
    w = b - a
    ny, e, d = problem.n_dim, problem.e, problem.model.d
    G, _, H, _ = _window_coeffs(problem, b, b)
    c = (_contract(G, eta[:, None]) + H)[:, 0]  # (S, n, e)
    Y = np.zeros((S, w + 1, ny))
    Yp = np.zeros((S, w + 1, ny, e))
    if start == "extension":
        dX = problem.rough.X[b] - problem.rough.X[a:b + 1]  # X_b - X_t
        Y[:] = eta[:, None] + np.einsum("sne,te->stn", c, dX)
        Yp[:] = -c[:, None]
    elif start == "zero":
        Y[:, -1] = eta
        Yp[:, -1] = -c
    else:
        raise ValueError(f"unknown Picard start {start!r}")
    Z = np.zeros((S, w + 1, ny, d))
    if fixed_Z is not None:
        Z[:, :-1] = fixed_Z[:, a:b]
    return PicardState(Y, Yp, Z)


def solve_window(problem, a, b, eta, K, eps, fixed_Z=None, tol=1e-11, max_iter=100, start="extension",
                 max_points=64):
    state = _start_state(problem, a, b, eta, fixed_Z, start)
    report = WindowReport(a, b, K, eps)
    prev = None
    scale = max(1.0, float(np.max(np.abs(eta))))
    for it in range(1, max_iter + 1):
        new = picard_step_phi(problem, state, (a, b), eta, fixed_Z)
        dist = state_distance(problem, new, state, K, a, max_points)
        if prev is not None and prev > 1e-9 * scale:
            report.ratios.append(dist / prev)
        prev = dist
        state = new
        report.iterations = it
        if dist <= tol * scale:
            report.converged = True
            break
    return state, report


def solve_linear_rough_bsde(problem, tol=1e-11, max_iter=100, C=2.0, window_power=1.0, start="extension",
                            bisect_ratio=0.9, check_assumptions=True, windows=None, max_points=64):
    """Solve on [0, T] window by window, from the terminal time backward."""
    if check_assumptions:
        audit = audit_assumptions(problem)
        if not audit["passed"]:
            raise ValueError(f"assumption audit failed: {audit}")
    model = problem.model
    n = model.grid.n_cells
    K, eps = window_constants(problem, C, window_power)
    if windows is None:
        windows = build_windows(problem.rough, eps)
    S = model.n_samples
    Y = np.zeros((S, n + 1, problem.n_dim))
    Yp = np.zeros((S, n + 1, problem.n_dim, problem.e))
    Z = np.zeros((S, n + 1, problem.n_dim, model.d))
    Y[:, n] = problem.xi
    reports = []
    pending = list(windows)
    while pending:
        a, b = pending.pop()
        state, rep = solve_window(problem, a, b, Y[:, b], K, eps, Z, tol, max_iter, start, max_points)
        if rep.max_ratio > bisect_ratio and b - a >= 2:
            mid = (a + b) // 2
            pending.extend([(a, mid), (mid, b)])
            continue
        Y[:, a:b + 1] = state.Y
        Yp[:, a:b + 1] = state.Yp
        Z[:, a:b] = state.Z[:, :-1]
        reports.append(rep)
    reports.reverse()
    J, _ = drift_integrand(problem, Y[:, n:], Yp[:, n:], n, n)
    Yp[:, n] = -J[:, 0]
    sol = RoughBsdeSolution(Y, Yp, Z, problem, reports, all(r.converged for r in reports))
    sol.residual, sol.residual_max = equation_residual(sol)
    return sol


def equation_residual(sol):
    """Largest L^2 (and pointwise) defect of the integral equation over the grid."""
    problem = sol.problem
    model = problem.model
    n = model.grid.n_cells
    J, Jp = drift_integrand(problem, sol.Y, sol.Yp, 0, n)
    integral = rough_stochastic_integrate(StochasticControlledPath(J, Jp, problem.rough, model), floor=True).values
    F = _drift(problem, sol.Y, sol.Z, 0, n)
    zdw = np.einsum("sknd,skd->skn", sol.Z[:, :-1], model.dW)
    MZ = np.concatenate([np.zeros_like(zdw[:, :1]), np.cumsum(zdw, axis=1)], axis=1)
    rhs = problem.xi[:, None] + (F[:, -1:] - F) + (integral[:, -1:] - integral) - (MZ[:, -1:] - MZ)
    defect = sol.Y - rhs
    l2 = np.sqrt(np.mean(np.sum(defect ** 2, axis=2), axis=0))
    return float(np.max(l2)), float(np.max(np.abs(defect)))


# ------------------------------------------------------------------ oracles

def rough_bracket(rough):
    """Cumulative rough bracket [X]_{0,t} on the grid, shape (n+1, e, e)."""
    cells = rough.bracket_cells()
    return np.concatenate([np.zeros((1,) + cells.shape[1:]), np.cumsum(cells, axis=0)], axis=0)


def duality_closed_form(xi, g, rough, model):
    """Scalar constant G = g, H = 0, f = 0: Y_t = exp(g dX_{t,T} + g^2 [X]_{t,T} / 2) E_t xi."""
    xi = np.asarray(xi, dtype=np.float64).reshape(model.n_samples)
    X = rough.X[:, 0]
    br = rough_bracket(rough)[:, 0, 0]
    factor = np.exp(g * (X[-1] - X) + 0.5 * g * g * (br[-1] - br))
    cond = model.cond_exp_path(np.repeat(xi[:, None], len(X), axis=1))
    return factor[None, :] * cond


# ------------------------------------------------------------------- audits

def boundedness_audit(problems, K=1.0, solve_kwargs=None):
    """Solution norms ||(Y, Y')||^(K) + ||Z||_2 across a family; rows (k, |X^k|, norm)."""
    table = ConvergenceTable(label="boundedness")
    for k, prob in enumerate(problems, start=1):
        sol = solve_linear_rough_bsde(prob, **(solve_kwargs or {}))
        table.add(k, rough_path_metrics(prob.rough, indices=_coarse(prob)).total, sol.norm(K))
    return table


def _coarse(problem, max_points=64):
    n = problem.model.grid.n_cells
    return np.unique(np.round(np.linspace(0, n, min(n + 1, max_points))).astype(int))


def input_distance(pk, p0, max_points=64):
    """||xi^k - xi||_2 + rho(X^k, X) + sup|G^k - G| + ||H^k - H||_2-type distance."""
    idx = _coarse(pk, max_points)
    d = lm_norm(pk.xi - p0.xi)
    d += rough_distance(pk.rough, p0.rough, indices=idx)
    d += float(np.max(np.abs(pk.G.G - p0.G.G))) + float(np.max(np.abs(pk.G.Gp - p0.G.Gp)))
    dH = np.abs(pk.H - p0.H).reshape(max(pk.H.shape[0], p0.H.shape[0]), pk.H.shape[1], -1)
    d += float(np.sqrt(np.mean(np.max(np.sum(dH ** 2, axis=2), axis=1))))
    return d


def solution_distance(sk, s0, K=1.0, max_points=64):
    """||(Y^k, Y^k'); (Y, Y')||^(K) + K ||Z^k - Z||_2."""
    dist = controlled_distance(sk.controlled, s0.controlled, K, max_points).total
    dz = sk.Z - s0.Z
    n = dz.shape[1] - 1
    z2 = float(np.sqrt(np.mean(np.sum(dz[:, :-1].reshape(dz.shape[0], n, -1) ** 2, axis=2) @ s0.model.grid.dt)))
    return dist + K * z2


def continuity_audit(problems, limit, K=1.0, solve_kwargs=None):
    """Rows (k, input distance to the limit data, solution distance to the limit solution)."""
    base = solve_linear_rough_bsde(limit, **(solve_kwargs or {}))
    table = ConvergenceTable(label="continuity")
    for k, prob in enumerate(problems, start=1):
        sol = solve_linear_rough_bsde(prob, **(solve_kwargs or {}))
        table.add(k, input_distance(prob, limit), solution_distance(sol, base, K))
    return table
