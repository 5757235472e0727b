"""Nonlinear rough drifts through the backward ODE flow of the drift field.

For a smooth driving path the flow phi_t(y) = y + int_t^T g(phi_r(y)) X'_r dr
conjugates the drift away: if (Yt, Zt) solves a quadratic BSDE with the
transformed driver, then Y = phi(Yt), Z = Dphi(Yt) Zt solves the original
equation.  For a rough path the solution is the limit over piecewise-linear
approximations, evidenced by a table of successive distances.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .bsde import Driver, bmo_norm, default_bounds, solve_quadratic_bsde_small
from .roughpath import (
    canonical_lift,
    dyadic_indices,
    piecewise_linear_approximation,
    rough_distance,
    rough_path_metrics,
)
from .tables import ConvergenceTable


class FlowInverseError(RuntimeError):
    pass


class SmallnessError(ValueError):
    pass


def _fd_derivative(fun, h=1e-5):
    """Central difference in y of an array-valued function y (P, n) -> (P, ...); new last axis."""

    def deriv(y):
        y = np.asarray(y, dtype=np.float64)
        cols = []
        for b in range(y.shape[1]):
            e = np.zeros_like(y)
            e[:, b] = h
            cols.append((fun(y + e) - fun(y - e)) / (2 * h))
        return np.stack(cols, axis=-1)

    return deriv


@dataclass
class VectorField:
    """g: R^n -> L(R^e, R^n) evaluated on (P, n) arrays as (P, n, e), with derivatives in trailing y axes."""

    g: object
    n: int
    e: int
    Dg: object = None
    D2g: object = None
    D3g: object = None
    gamma_norm: float = np.inf
    name: str = ""

    def __post_init__(self):
        if self.Dg is None:
            self.Dg = _fd_derivative(self.g)
        if self.D2g is None:
            self.D2g = _fd_derivative(self.Dg)
        if self.D3g is None:
            self.D3g = _fd_derivative(self.D2g)

    @classmethod
    def zero(cls, n=1, e=1):
        z = lambda y, *tail: np.zeros((y.shape[0], n, e) + (n,) * len(tail))  # noqa: E731
        return cls(
            lambda y: z(y), n, e,
            lambda y: z(y, 1), lambda y: z(y, 1, 1), lambda y: z(y, 1, 1, 1), 0.0, "zero",
        )

    @classmethod
    def constant(cls, c):
        c = np.atleast_2d(np.asarray(c, dtype=np.float64))
        n, e = c.shape
        zero = lambda y, k: np.zeros((y.shape[0], n, e) + (n,) * k)  # noqa: E731
        return cls(
            lambda y: np.broadcast_to(c, (y.shape[0], n, e)).copy(), n, e,
            lambda y: zero(y, 1), lambda y: zero(y, 2), lambda y: zero(y, 3),
            float(np.abs(c).max()), "constant",
        )

    @classmethod
    def linear(cls, A):
        """g(y)[a, k] = sum_b A[a, k, b] y_b."""
        A = np.asarray(A, dtype=np.float64)
        if A.ndim == 0:
            A = A.reshape(1, 1, 1)
        n, e, _ = A.shape
        zero = lambda y, k: np.zeros((y.shape[0], n, e) + (n,) * k)  # noqa: E731
        return cls(
            lambda y: np.einsum("akb,pb->pak", A, y), n, e,
            lambda y: np.broadcast_to(A, (y.shape[0],) + A.shape).copy(),
            lambda y: zero(y, 2), lambda y: zero(y, 3),
            float(np.abs(A).max()), "linear",
        )

    @classmethod
    def sin_saturating(cls, c):
        """g(y)[a, k] = c[a, k] sin(y_a): bounded with bounded derivatives of every order."""
        c = np.atleast_2d(np.asarray(c, dtype=np.float64))
        n, e = c.shape

        def diag(vals, order):
            # vals (P, n): derivative of order ``order`` lives on the diagonal in all y axes
            out = np.zeros((vals.shape[0], n, e) + (n,) * order)
            for a in range(n):
                out[(slice(None), a, slice(None)) + (a,) * order] = vals[:, a, None] * c[a]
            return out

        return cls(
            lambda y: np.sin(y)[:, :, None] * c[None],
            n, e,
            lambda y: diag(np.cos(y), 1),
            lambda y: diag(-np.sin(y), 2),
            lambda y: diag(-np.cos(y), 3),
            float(np.abs(c).max()), "sin-saturating",
        )

    def fd_consistency(self, probes, h=1e-5):
        """Largest relative gap between supplied derivatives and central differences of the lower order."""
        probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
        worst = 0.0
        for lower, upper in ((self.g, self.Dg), (self.Dg, self.D2g), (self.D2g, self.D3g)):
            fd = _fd_derivative(lower, h)(probes)
            ex = upper(probes)
            scale = max(1.0, float(np.max(np.abs(ex))))
            worst = max(worst, float(np.max(np.abs(fd - ex))) / scale)
        return worst


def _flow_rhs(vf, dx, phi, J, H, T3):
    """Derivatives in the cell parameter s of (phi, Dphi, D2phi, D3phi) for the field g(.) dx."""
    F = np.einsum("pak,k->pa", vf.g(phi), dx)
    DF = np.einsum("pakb,k->pab", vf.Dg(phi), dx)
    D2F = np.einsum("pakbc,k->pabc", vf.D2g(phi), dx)
    D3F = np.einsum("pakbcd,k->pabcd", vf.D3g(phi), dx)
    dJ = np.einsum("pad,pdb->pab", DF, J)
    dH = np.einsum("pade,pdb,pec->pabc", D2F, J, J) + np.einsum("pad,pdbc->pabc", DF, H)
    dT = (
        np.einsum("padeg,pdb,pec,pgf->pabcf", D3F, J, J, J)
        + np.einsum("pade,pdbf,pec->pabcf", D2F, H, J)
        + np.einsum("pade,pdb,pecf->pabcf", D2F, J, H)
        + np.einsum("pade,pdbc,pef->pabcf", D2F, H, J)
        + np.einsum("pad,pdbcf->pabcf", DF, T3)
    )
    return F, dJ, dH, dT


def _rk4_cell(vf, dx, state, substeps):
    h = 1.0 / substeps
    for _ in range(substeps):
        k1 = _flow_rhs(vf, dx, *state)
        s2 = tuple(x + 0.5 * h * k for x, k in zip(state, k1))
        k2 = _flow_rhs(vf, dx, *s2)
        s3 = tuple(x + 0.5 * h * k for x, k in zip(state, k2))
        k3 = _flow_rhs(vf, dx, *s3)
        s4 = tuple(x + h * k for x, k in zip(state, k3))
        k4 = _flow_rhs(vf, dx, *s4)
        state = tuple(x + (h / 6.0) * (a + 2 * b + 2 * c + d) for x, a, b, c, d in zip(state, k1, k2, k3, k4))
    return state


def integrate_flow(vf, drive_values, points, substeps=4, stop=0):
    """(phi, Dphi, D2phi, D3phi) at every grid index >= stop for the given starting points at T."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    P, n = points.shape
    nt = drive_values.shape[0] - 1
    state = (points.copy(), np.broadcast_to(np.eye(n), (P, n, n)).copy(), np.zeros((P, n, n, n)), np.zeros((P, n, n, n, n)))
    out = [np.zeros((nt + 1,) + s.shape) for s in state]
    for arr, s in zip(out, state):
        arr[nt] = s
    for k in range(nt - 1, stop - 1, -1):
        dx = drive_values[k + 1] - drive_values[k]
        if np.any(dx != 0):
            state = _rk4_cell(vf, dx, state, substeps)
        for arr, s in zip(out, state):
            arr[k] = s
    return out


def _hermite(y, grid, f, df):
    """Cubic Hermite interpolation on a uniform 1-d grid; f, df of shape (P, ...)."""
    h = grid[1] - grid[0]
    pos = np.clip((y - grid[0]) / h, 0, grid.size - 1 - 1e-12)
    i = np.minimum(pos.astype(np.int64), grid.size - 2)
    s = pos - i
    h00 = 2 * s ** 3 - 3 * s ** 2 + 1
    h10 = s ** 3 - 2 * s ** 2 + s
    h01 = -2 * s ** 3 + 3 * s ** 2
    h11 = s ** 3 - s ** 2
    shape = (-1,) + (1,) * (f.ndim - 1)
    return (
        h00.reshape(shape) * f[i] + h10.reshape(shape) * h * df[i]
        + h01.reshape(shape) * f[i + 1] + h11.reshape(shape) * h * df[i + 1]
    )


@dataclass
class SolutionFlow:
    grid: object
    probes: np.ndarray  # (P, n)
    phi: np.ndarray  # (nt+1, P, n)
    Dphi: np.ndarray
    D2phi: np.ndarray
    D3phi: np.ndarray
    field: VectorField
    drive: np.ndarray  # (nt+1, e)
    substeps: int = 4
    extrapolation_warned: bool = False

    @property
    def n(self):
        return self.probes.shape[1]

    def evaluate(self, k, y):
        """(phi_k, Dphi_k, D2phi_k) at query points y (S, n)."""
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        if self.n == 1:
            grid = self.probes[:, 0]
            q = y[:, 0]
            if (q.min() < grid[0] or q.max() > grid[-1]) and not self.extrapolation_warned:
                self.extrapolation_warned = True
                warnings.warn("flow query outside probe hull; clamped", RuntimeWarning)
            phi = _hermite(q, grid, self.phi[k], self.Dphi[k][..., 0])
            D = _hermite(q, grid, self.Dphi[k], self.D2phi[k][..., 0])
            D2 = _hermite(q, grid, self.D2phi[k], self.D3phi[k][..., 0])
            return phi, D, D2
        # several dimensions: integrate the flow at the query points themselves
        out = integrate_flow(self.field, self.drive, y, self.substeps, stop=k)
        return out[0][k], out[1][k], out[2][k]

    def psi(self, k, ytilde, tol=1e-12, max_iter=50):
        """Inverse of phi_k by Newton's method with Dphi as Jacobian."""
        target = np.atleast_2d(np.asarray(ytilde, dtype=np.float64))
        y = target.copy()
        for _ in range(max_iter):
            phi, D, _ = self.evaluate(k, y)
            step = np.linalg.solve(D, (phi - target)[..., None])[..., 0]
            y = y - step
            if np.max(np.abs(step)) <= tol * max(1.0, float(np.max(np.abs(y)))):
                return y
        bad = int(np.argmax(np.max(np.abs(self.evaluate(k, y)[0] - target), axis=1)))
        raise FlowInverseError(f"Newton inverse failed at grid index {k}, probe {target[bad]}")

    def inverse_jacobian_bound(self):
        return float(np.max(np.abs(np.linalg.inv(self.Dphi))))

    def displacement(self):
        """sup |phi_t(y) - y| over grid and probes."""
        return float(np.max(np.abs(self.phi - self.probes[None])))


def default_probes(radius, count=401, n=1):
    line = np.linspace(-radius, radius, count)
    if n == 1:
        return line[:, None]
    mesh = np.meshgrid(*([np.linspace(-radius, radius, 9)] * n), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def solve_backward_flow(vf, drive, probes, substeps=4):
    """Flow and its first three y-derivatives on the drive's grid, by RK4 per cell."""
    vals = drive.values
    if vals.shape[1] != vf.e:
        raise ValueError("drive dimension must match the vector field")
    probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    if probes.shape[1] != vf.n:
        probes = probes.reshape(-1, vf.n)
    phi, D, D2, D3 = integrate_flow(vf, vals, probes, substeps)
    return SolutionFlow(drive.grid, probes, phi, D, D2, D3, vf, vals, substeps)


def transformed_driver(flow, f):
    """Driver (Dphi)^(-1) (f(phi, Dphi z) + D2phi[z, z] / 2) in the transformed variables."""

    def ftilde(t, y, z, k):
        phi, D, D2 = flow.evaluate(k, y)
        zz = np.einsum("sbd,scd->sbc", z, z)
        val = f(t, phi, np.einsum("sab,sbd->sad", D, z), k) + 0.5 * np.einsum("sabc,sbc->sa", D2, zz)
        return np.linalg.solve(D, val[..., None])[..., 0]

    return Driver(ftilde, f.lipschitz_L, name="transformed")


def transformed_growth_audit(flow, f, ftilde, model, rough_size, n_probes=16, scale=0.1, seed=0):
    """Measured constants in the quadratic growth bounds of the transformed driver."""
    from .bsde import _fd_partials

    n = flow.n
    lam, mu = (f.lam, f.mu) if f.lam is not None else default_bounds(f, model, n)
    lam = np.broadcast_to(lam, (model.n_samples, model.grid.n_cells + 1))
    mu = np.broadcast_to(mu, (model.n_samples, model.grid.n_cells + 1))
    rng = np.random.default_rng(seed)
    c_value, c_grad = 0.0, 0.0
    for _ in range(n_probes):
        k = int(rng.integers(0, model.grid.n_cells))
        y = scale * rng.standard_normal((model.n_samples, n))
        z = scale * rng.standard_normal((model.n_samples, n, model.d))
        base, dy, dz = _fd_partials(ftilde, model.grid.points[k], y, z, k)
        ny2 = np.sum(y * y, axis=1)
        nz2 = np.sum(z * z, axis=(1, 2))
        c_value = max(c_value, float(np.max((np.abs(base).max(1) + dy) / (lam[:, k] + mu[:, k] ** 2 + rough_size + ny2 + nz2))))
        c_grad = max(c_grad, float(np.max(dz / (mu[:, k] + rough_size + np.sqrt(ny2) + np.sqrt(nz2)))))
    return c_value, c_grad


# ------------------------------------------------------------- the solver

@dataclass
class NonlinearSolution:
    Y: np.ndarray
    Z: np.ndarray
    model: object
    cauchy: ConvergenceTable
    levels: list
    level_solutions: list = field(default_factory=list)
    flow_bounds: list = field(default_factory=list)
    picard_ratios: list = field(default_factory=list)
    converged: bool = True
    solution_bound: float = np.nan

    @property
    def flow_bound_constants(self):
        """sup |phi^k - id| / |X^k| per level."""
        return [disp / size if size > 0 else 0.0 for size, disp in self.flow_bounds]


def original_equation_residual(xi, f, g, Y, Z, drive, model):
    """sup_k |Y_k - E_k[xi + sum_{j>=k} (f_j dt_j + g(Y_j) dX_j)]| for a smooth drive on the model grid.

    Left-point sums, so the residual is a discretisation error that shrinks
    with the mesh rather than a rounding-level quantity.
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(Y[:, -1].shape)
    grid = model.grid
    n = grid.n_cells
    dX = np.diff(drive.values, axis=0)
    inc = np.stack(
        [f(grid.points[k], Y[:, k], Z[:, k], k) * grid.dt[k] + np.einsum("sak,k->sa", g.g(Y[:, k]), dX[k])
         for k in range(n)],
        axis=1,
    )
    tail = np.concatenate([np.cumsum(inc[:, ::-1], axis=1)[:, ::-1], np.zeros_like(inc[:, :1])], axis=1)
    target = model.cond_exp_path(xi[:, None] + tail)
    return float(np.max(np.abs(Y - target)))


def _map_back(flow, sol):
    model = sol.model
    n = model.grid.n_cells
    Y = np.empty_like(sol.Y)
    Z = np.empty_like(sol.Z)
    for k in range(n + 1):
        phi, D, _ = flow.evaluate(k, sol.Y[:, k])
        Y[:, k] = phi
        Z[:, k] = np.einsum("sab,sbd->sad", D, sol.Z[:, k])
    return Y, Z


def solve_nonlinear_rough_bsde(
    xi, f, g, path, model, levels, p=2.5, eps=0.3, c1=1.0, c2=1.0, probes=None, substeps=4, tol=1e-12,
    max_iter=200,
):
    """Solve with the drift g(Y) dX for each dyadic approximation of ``path`` and map back.

    ``path`` is a SampledPath on the model's grid; the finest requested
    level is the reported solution.
    """
    if path.grid != model.grid:
        raise ValueError("drive and model must share the grid")
    xi = np.asarray(xi, dtype=np.float64)
    if xi.ndim == 1:
        xi = xi[:, None]
    rough = canonical_lift(path, p)
    size = rough_path_metrics(rough).total
    from .bsde import integrated_bounds

    drive_size = integrated_bounds(f, model, xi.shape[1])
    if float(np.max(np.abs(xi))) > eps or drive_size > eps or size > eps:
        raise SmallnessError(
            f"outside small-data regime: |xi|={np.max(np.abs(xi)):.3g}, int(lam+mu^2)={drive_size:.3g}, "
            f"|X|={size:.3g}, eps={eps:.3g}"
        )
    if probes is None:
        probes = default_probes(max(1.0, 4 * float(np.max(np.abs(xi))) + 2 * g.gamma_norm * size if np.isfinite(g.gamma_norm) else 1.0), n=g.n)
    cauchy = ConvergenceTable(label="smooth-approximation Cauchy distances")
    previous = None
    prev_rough = None
    level_solutions, flow_bounds, ratios = [], [], []
    for lvl in levels:
        approx = piecewise_linear_approximation(path, dyadic_indices(path.grid.n_cells, lvl))
        rough_k = canonical_lift(approx, p)
        size_k = rough_path_metrics(rough_k).total
        if size_k > 2 * size * (1 + 1e-9):
            raise SmallnessError(f"approximation at level {lvl} exceeds twice the rough path size")
        flow = solve_backward_flow(g, approx, probes, substeps)
        ftilde = transformed_driver(flow, f)
        sol = solve_quadratic_bsde_small(xi, ftilde, model, c1, c2, tol=tol, max_iter=max_iter, check_regime=False)
        Y, Z = _map_back(flow, sol)
        level_solutions.append((Y, Z))
        flow_bounds.append((size_k, flow.displacement()))
        ratios.append(max(sol.contraction_ratios, default=0.0))
        if previous is not None:
            dist = float(np.max(np.abs(Y - previous[0]))) + bmo_norm(Z - previous[1], model)
            cauchy.add(lvl, rough_distance(rough_k, prev_rough), dist)
        previous = (Y, Z)
        prev_rough = rough_k
    Y, Z = previous
    out = NonlinearSolution(Y, Z, model, cauchy, list(levels), level_solutions, flow_bounds, ratios)
    out.converged = len(cauchy.rows) < 2 or cauchy.strictly_decreasing()
    out.solution_bound = float(np.max(np.abs(Y))) + bmo_norm(Z, model)
    return out
