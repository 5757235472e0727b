"""Backward recursions for Lipschitz and small quadratic BSDEs.

Both solvers target the same discrete equation on the model's grid,

    Y_k = E_k[Y_{k+1}] + f(t_k, Y_k, Z_k) dt_k,   Z_k = E_k[Y_{end} dW^T] / dt,

implicit in Y and explicit in Z.  The Lipschitz solver walks backward
once with an inner fixed point per step; the quadratic solver iterates the
frozen-driver map and monitors its contraction in the sup + BMO norm.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .tables import ConvergenceTable


@dataclass
class Driver:
    """f(t, y, z, step) -> (S, n) with y (S, n), z (S, n, d); ``step`` is the grid index."""

    f: object
    lipschitz_L: float = 0.0
    lam: object = None
    mu: object = None
    name: str = ""

    def __call__(self, t, y, z, step):
        return self.f(t, y, z, step)

    @classmethod
    def zero(cls):
        return cls(lambda t, y, z, k: np.zeros_like(y), 0.0, name="zero")

    @classmethod
    def constant(cls, c):
        return cls(lambda t, y, z, k: np.full_like(y, c), 0.0, name="constant")

    @classmethod
    def linear(cls, a=0.0, b=0.0, c=0.0):
        """f = a y + b . z + c (z summed over the Brownian axis with weights b)."""
        b = np.atleast_1d(np.asarray(b, dtype=float))

        def f(t, y, z, k):
            return a * y + np.einsum("snd,d->sn", z, np.broadcast_to(b, z.shape[-1:])) + c

        return cls(f, abs(a) + float(np.sqrt(np.sum(b * b))), name="linear")

    @classmethod
    def quadratic(cls, L):
        """f = L |z|^2 per component."""
        return cls(lambda t, y, z, k: L * np.sum(z * z, axis=-1), 2.0 * L, name="quadratic")


def _fd_partials(driver, t, y, z, k, h=1e-6):
    base = driver(t, y, z, k)
    dy = np.zeros(base.shape[:1])
    dz = np.zeros(base.shape[:1])
    for i in range(y.shape[1]):
        e = np.zeros_like(y)
        e[:, i] = h
        dy = np.maximum(dy, np.max(np.abs(driver(t, y + e, z, k) - driver(t, y - e, z, k)) / (2 * h), axis=1))
    for i in range(z.shape[1]):
        for j in range(z.shape[2]):
            e = np.zeros_like(z)
            e[:, i, j] = h
            dz = np.maximum(dz, np.max(np.abs(driver(t, y, z + e, k) - driver(t, y, z - e, k)) / (2 * h), axis=1))
    return base, dy, dz


def lipschitz_spot_check(driver, model, n_dim, n_probes=64, scale=1.0, seed=0):
    """Largest |f(y1,z1) - f(y2,z2)| / (|dy| + |dz|) over random probes; compare with L."""
    rng = np.random.default_rng(seed)
    S = model.n_samples
    worst = 0.0
    for _ in range(n_probes):
        k = int(rng.integers(0, model.grid.n_cells))
        t = model.grid.points[k]
        y1 = scale * rng.standard_normal((S, n_dim))
        y2 = scale * rng.standard_normal((S, n_dim))
        z1 = scale * rng.standard_normal((S, n_dim, model.d))
        z2 = scale * rng.standard_normal((S, n_dim, model.d))
        num = np.abs(driver(t, y1, z1, k) - driver(t, y2, z2, k)).max(axis=1)
        den = np.sqrt(((y1 - y2) ** 2).sum(1)) + np.sqrt(((z1 - z2) ** 2).sum((1, 2)))
        worst = max(worst, float(np.max(num / den)))
    return worst


def default_bounds(driver, model, n_dim):
    """lam_t = |f(t,0,0)| + |d_y f(t,0,0)|, mu_t = |d_z f(t,0,0)| per sample, from central differences."""
    S = model.n_samples
    n = model.grid.n_cells
    lam = np.zeros((S, n + 1))
    mu = np.zeros((S, n + 1))
    y0 = np.zeros((S, n_dim))
    z0 = np.zeros((S, n_dim, model.d))
    for k in range(n + 1):
        base, dy, dz = _fd_partials(driver, model.grid.points[k], y0, z0, k)
        lam[:, k] = np.max(np.abs(base), axis=1) + dy
        mu[:, k] = dz
    return lam, mu


def quadratic_growth_audit(driver, model, n_dim, L, n_probes=32, scale=0.2, seed=0):
    """Largest violation ratio of the quadratic growth bounds on random probes (<= 1 means satisfied)."""
    lam, mu = (driver.lam, driver.mu) if driver.lam is not None else default_bounds(driver, model, n_dim)
    lam = np.broadcast_to(lam, (model.n_samples, model.grid.n_cells + 1))
    mu = np.broadcast_to(mu, (model.n_samples, model.grid.n_cells + 1))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        k = int(rng.integers(0, model.grid.n_cells + 1))
        t = model.grid.points[k]
        y = scale * rng.standard_normal((model.n_samples, n_dim))
        z = scale * rng.standard_normal((model.n_samples, n_dim, model.d))
        base, dy, dz = _fd_partials(driver, t, y, z, k)
        ny = np.sqrt((y * y).sum(1))
        nz = np.sqrt((z * z).sum((1, 2)))
        r1 = (np.abs(base).max(1) + dy) / (lam[:, k] + L * (ny ** 2 + nz ** 2) + 1e-12)
        r2 = dz / (mu[:, k] + L * (ny + nz) + 1e-12)
        worst = max(worst, float(np.max(r1)), float(np.max(r2)))
    return worst


# ------------------------------------------------------------------- solution

def bmo_norm(Z, model, offset=0):
    """ess-sup over (sample, t) of (E_t sum_{s>=t} |Z_s|^2 ds)^(1/2)."""
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[1] - 1
    dt = model.grid.dt[offset:offset + n]
    energy = np.sum(Z[:, :-1].reshape(Z.shape[0], n, -1) ** 2, axis=2) * dt
    tail = np.concatenate([np.cumsum(energy[:, ::-1], axis=1)[:, ::-1], np.zeros((Z.shape[0], 1))], axis=1)
    cond = model.cond_exp_path(tail, offset + np.arange(n + 1))
    return float(np.sqrt(max(float(np.max(cond)), 0.0)))


def l2_norm_Z(Z, model, offset=0):
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[1] - 1
    dt = model.grid.dt[offset:offset + n]
    energy = np.sum(Z[:, :-1].reshape(Z.shape[0], n, -1) ** 2, axis=2) @ dt
    return float(np.sqrt(np.mean(energy)))


@dataclass
class BsdeSolution:
    Y: np.ndarray  # (S, n+1, n_dim)
    Z: np.ndarray  # (S, n+1, n_dim, d); last column unused
    model: object
    picard_iterations: int = 0
    converged: bool = True
    contraction_ratios: list = field(default_factory=list)
    distances: list = field(default_factory=list)

    @property
    def sup_Y(self):
        return float(np.max(np.abs(self.Y)))

    @property
    def bmo_Z(self):
        return bmo_norm(self.Z, self.model)

    @property
    def l2_Z(self):
        return l2_norm_Z(self.Z, self.model)

    @property
    def norm(self):
        return self.sup_Y + self.bmo_Z

    def discrete_residual(self, driver):
        """max |Y_k - Y_{k+1} - f dt + Z dW| over cells; zero on the d=1 tree."""
        grid = self.model.grid
        worst = 0.0
        for k in range(grid.n_cells):
            f = driver(grid.points[k], self.Y[:, k], self.Z[:, k], k)
            dW = self.model.dW[:, k, :]
            zdw = np.einsum("snd,sd->sn", self.Z[:, k], dW)
            r = self.Y[:, k] - self.Y[:, k + 1] - f * grid.dt[k] + zdw
            worst = max(worst, float(np.max(np.abs(r))))
        return worst


def _as_terminal(xi, S):
    xi = np.asarray(xi, dtype=np.float64)
    if xi.ndim == 0:
        xi = np.full((S, 1), float(xi))
    elif xi.ndim == 1:
        xi = xi[:, None] if xi.shape[0] == S else np.broadcast_to(xi, (S, xi.shape[0])).copy()
    return xi


def solve_lipschitz_bsde(xi, driver, model, tol=1e-12, max_inner=50):
    """One backward sweep with an inner fixed point in Y at every step."""
    S = model.n_samples
    xi = _as_terminal(xi, S)
    grid = model.grid
    n = grid.n_cells
    if driver.lipschitz_L * float(np.max(grid.dt)) >= 1.0:
        raise ValueError("grid too coarse for L")
    Y = np.zeros((S, n + 1) + xi.shape[1:])
    Z = np.zeros((S, n + 1) + xi.shape[1:] + (model.d,))
    Y[:, n] = xi
    z_cache = {}
    for k in range(n - 1, -1, -1):
        end = model.cell_end(k)
        if end not in z_cache:
            z_cache[end] = model.z_from_next(Y[:, end], k)
        Z[:, k] = z_cache[end]
        # inside a tree cell no information arrives, so E_k is the identity there
        c = model.cond_exp(Y[:, k + 1], k) if end == k + 1 else Y[:, k + 1]
        y = c.copy()
        t, dt = grid.points[k], grid.dt[k]
        for _ in range(max_inner):
            new = c + driver(t, y, Z[:, k], k) * dt
            if np.max(np.abs(new - y)) <= tol * max(1.0, float(np.max(np.abs(new)))):
                y = new
                break
            y = new
        else:
            raise ValueError("grid too coarse for L")
        Y[:, k] = y
    return BsdeSolution(Y, Z, model)


def regime_constants(T, c1=1.0, c2=1.0):
    """(eps, R) for the quadratic Picard map: eps = 1/(16 c^2 (T+1)), R = 1/(4 c (T+1)), c = max(c1, c2)."""
    c = max(c1, c2)
    return 1.0 / (16.0 * c * c * (T + 1.0)), 1.0 / (4.0 * c * (T + 1.0))


def _frozen_step(xi, driver, model, Y, Z):
    """One application of the frozen-driver map: returns (Y_new, Z_new)."""
    grid = model.grid
    n = grid.n_cells
    A = np.zeros_like(Y)
    Znew = np.zeros_like(Z)
    A[:, n] = xi
    z_cache = {}
    for k in range(n - 1, -1, -1):
        end = model.cell_end(k)
        c = model.cond_exp(A[:, k + 1], k) if end == k + 1 else A[:, k + 1]
        A[:, k] = c + driver(grid.points[k], Y[:, k], Z[:, k], k) * grid.dt[k]
        if end not in z_cache:
            z_cache[end] = model.z_from_next(A[:, end], k)
        Znew[:, k] = z_cache[end]
    return A, Znew


def integrated_bounds(driver, model, n_dim):
    """ess-sup of int_0^T (lam + mu^2) dr."""
    lam, mu = (driver.lam, driver.mu) if driver.lam is not None else default_bounds(driver, model, n_dim)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (model.n_samples, model.grid.n_cells + 1))
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (model.n_samples, model.grid.n_cells + 1))
    return float(np.max((lam[:, :-1] + mu[:, :-1] ** 2) @ model.grid.dt))


def solve_quadratic_bsde_small(
    xi, driver, model, c1=1.0, c2=1.0, tol=1e-12, max_iter=200, check_regime=True, warn_ratio=0.75, initial=None
):
    """Picard iteration of the frozen-driver map inside the small-data regime.

    ``initial`` is an optional starting pair (Y, Z); the default starts from zero.
    """
    S = model.n_samples
    xi = _as_terminal(xi, S)
    eps, R = regime_constants(model.grid.T, c1, c2)
    if check_regime:
        if float(np.max(np.abs(xi))) > eps or integrated_bounds(driver, model, xi.shape[1]) > eps:
            raise ValueError(f"outside contraction regime (eps={eps:.4g})")
    n = model.grid.n_cells
    Y = np.zeros((S, n + 1) + xi.shape[1:])
    Z = np.zeros((S, n + 1) + xi.shape[1:] + (model.d,))
    if initial is not None:
        Y[:], Z[:] = initial
    Y[:, n] = xi
    distances, ratios = [], []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Yn, Zn = _frozen_step(xi, driver, model, Y, Z)
        dist = float(np.max(np.abs(Yn - Y))) + bmo_norm(Zn - Z, model)
        Y, Z = Yn, Zn
        if distances and distances[-1] > 1e-13:
            ratios.append(dist / distances[-1])
            if ratios[-1] > warn_ratio:
                warnings.warn(f"Picard ratio {ratios[-1]:.3f} suggests no contraction", RuntimeWarning)
        distances.append(dist)
        if dist < tol:
            converged = True
            break
    sol = BsdeSolution(Y, Z, model, it, converged, ratios, distances)
    if check_regime and sol.norm > R:
        raise RuntimeError(f"solution norm {sol.norm:.4g} exceeds radius {R:.4g}")
    return sol


def bsde_continuity_audit(instances, limit, model, solver="quadratic", **kwargs):
    """Distances of solutions for (xi_k, f_k) to the solution for the limit data.

    Input distance: ||xi_k - xi||_inf + ess-sup_t E_t int_t^T |f_k - f|(Y, Z) dr at the limit solution.
    Output distance: ||Y_k - Y||_inf + ||Z_k - Z||_BMO.
    """
    solve = solve_quadratic_bsde_small if solver == "quadratic" else solve_lipschitz_bsde
    xi, f = limit
    base = solve(xi, f, model, **kwargs)
    grid = model.grid
    table = ConvergenceTable(label="bsde continuity")
    for level, (xi_k, f_k) in enumerate(instances, start=1):
        sol = solve(xi_k, f_k, model, **kwargs)
        gap = np.stack(
            [np.max(np.abs(f_k(grid.points[k], base.Y[:, k], base.Z[:, k], k) - f(grid.points[k], base.Y[:, k], base.Z[:, k], k)), axis=1)
             for k in range(grid.n_cells)],
            axis=1,
        ) * grid.dt
        tail = np.concatenate([np.cumsum(gap[:, ::-1], axis=1)[:, ::-1], np.zeros((gap.shape[0], 1))], axis=1)
        drive = float(np.max(model.cond_exp_path(tail)))
        x_in = float(np.max(np.abs(_as_terminal(xi_k, model.n_samples) - _as_terminal(xi, model.n_samples)))) + drive
        out = float(np.max(np.abs(sol.Y - base.Y))) + bmo_norm(sol.Z - base.Z, model)
        table.add(level, x_in, out)
    return table
