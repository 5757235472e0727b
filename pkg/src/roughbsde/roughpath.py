"""Two-step rough paths on a time grid: lifts, p-variation and distances.

Level 2 is stored only on consecutive cells.  Any other increment is put
together from the cells with Chen's relation, so the relation holds by
construction for every lift built here.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels


def _as_grid_points(points):
    pts = np.asarray(points, dtype=np.float64).ravel()
    if pts.size < 2:
        raise ValueError("a time grid needs at least 2 points")
    if not np.all(np.diff(pts) > 0):
        raise ValueError("grid points must be strictly increasing")
    if pts[0] != 0.0:
        raise ValueError("grid must start at 0")
    return pts


class TimeGrid:
    """A partition 0 = t_0 < ... < t_n = T of the working horizon."""

    def __init__(self, points):
        self.points = _as_grid_points(points)
        self.points.setflags(write=False)

    @classmethod
    def uniform(cls, T, n_cells):
        if n_cells < 1:
            raise ValueError("a time grid needs at least 2 points")
        return cls(np.linspace(0.0, T, n_cells + 1))

    @property
    def T(self):
        return float(self.points[-1])

    @property
    def n_cells(self):
        return self.points.size - 1

    @property
    def dt(self):
        return np.diff(self.points)

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and self.points.shape == other.points.shape and np.array_equal(
            self.points, other.points
        )

    def __hash__(self):
        return hash(self.points.tobytes())

    def __repr__(self):
        return f"TimeGrid(n_cells={self.n_cells}, T={self.T})"

    def index_of(self, t):
        """Grid index of time ``t``; raises if ``t`` is not a grid point."""
        i = int(np.searchsorted(self.points, t))
        for j in (i - 1, i):
            if 0 <= j < self.points.size and abs(self.points[j] - t) <= 1e-12 * max(1.0, abs(t)):
                return j
        raise ValueError(f"time not on grid: {t}")

    def contains(self, other):
        """True if every point of ``other`` is a point of this grid."""
        try:
            self.indices_of(other.points)
        except ValueError:
            return False
        return True

    def indices_of(self, times):
        return np.array([self.index_of(t) for t in np.asarray(times).ravel()], dtype=np.int64)

    def subgrid(self, indices):
        return TimeGrid(self.points[np.asarray(indices)])

    def refine(self, factor):
        """Split every cell into ``factor`` equal pieces."""
        parts = [np.linspace(a, b, factor + 1)[:-1] for a, b in zip(self.points[:-1], self.points[1:])]
        return TimeGrid(np.concatenate(parts + [self.points[-1:]]))


@dataclass(frozen=True)
class SampledPath:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != len(self.grid):
            raise ValueError("path needs one value per grid point")
        object.__setattr__(self, "values", vals)

    @property
    def dim(self):
        return self.values.shape[1]

    def increments(self):
        return np.diff(self.values, axis=0)

    def restrict(self, indices):
        idx = np.asarray(indices)
        return SampledPath(self.grid.subgrid(idx), self.values[idx])


@dataclass(frozen=True)
class RoughPathMetrics:
    p_var_level1: float
    p2_var_level2: float

    @property
    def total(self):
        return self.p_var_level1 + self.p2_var_level2


class RoughPath:
    """Level-1 path (shifted to start at 0) plus level-2 cell increments.

    ``X`` has shape (n+1, e) or, for per-sample Brownian lifts, (S, n+1, e);
    ``cells`` has shape (n, e, e) or (S, n, e, e).
    """

    def __init__(self, grid, X, cells, p):
        if not 2.0 <= p < 3.0:
            raise ValueError("variation exponent p must lie in [2, 3)")
        X = np.asarray(X, dtype=np.float64)
        cells = np.asarray(cells, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[-2] != len(grid):
            raise ValueError("path needs one value per grid point")
        e = X.shape[-1]
        if cells.shape[-3:] != (grid.n_cells, e, e):
            raise ValueError("level2 needs one e-by-e matrix per grid cell")
        self.grid = grid
        self.X = X - X[..., :1, :]
        self.cells = cells
        self.p = float(p)
        self._cum = None

    @property
    def dim(self):
        return self.X.shape[-1]

    @property
    def batched(self):
        return self.X.ndim == 3

    @property
    def path(self):
        if self.batched:
            raise ValueError("batched rough path has no single level-1 path")
        return SampledPath(self.grid, self.X)

    def sample(self, s):
        return RoughPath(self.grid, self.X[s], self.cells[s], self.p)

    def increments(self):
        return np.diff(self.X, axis=-2)

    def bracket_cells(self):
        """Cellwise rough bracket dX dX^T - 2 Sym(level 2); zero for geometric lifts."""
        dx = self.increments()
        outer = dx[..., :, None] * dx[..., None, :]
        return outer - (self.cells + np.swapaxes(self.cells, -1, -2))

    def _cumulatives(self):
        # extended precision: pair values cancel terms of size |X| |dX| down to |dX|^2
        if self._cum is None:
            X = self.X.astype(np.longdouble)
            dx = np.diff(X, axis=-2)
            lead = self.X.shape[:-2]
            e = self.dim
            zero = np.zeros(lead + (1, e, e), dtype=np.longdouble)
            c2 = np.concatenate([zero, np.cumsum(self.cells.astype(np.longdouble), axis=-3)], axis=-3)
            left = X[..., :-1, :, None] * dx[..., :, None, :]
            pl = np.concatenate([zero, np.cumsum(left, axis=-3)], axis=-3)
            self._cum = (c2, pl, X)
        return self._cum

    def level2_pairs(self, s_idx, t_idx):
        """Vectorised level-2 increments for index arrays of equal shape (via cumulative sums)."""
        c2, pl, X = self._cumulatives()
        s_idx = np.asarray(s_idx)
        t_idx = np.asarray(t_idx)
        xs = X[..., s_idx, :]
        xt = X[..., t_idx, :]
        out = (
            (c2[..., t_idx, :, :] - c2[..., s_idx, :, :])
            + (pl[..., t_idx, :, :] - pl[..., s_idx, :, :])
            - xs[..., :, None] * (xt - xs)[..., None, :]
        )
        return out.astype(np.float64)

    def level1_pairs(self, s_idx, t_idx):
        return self.X[..., np.asarray(t_idx), :] - self.X[..., np.asarray(s_idx), :]

    def restrict(self, indices):
        """Rough path on a coarser subgrid, level 2 recomposed with Chen."""
        idx = np.asarray(indices)
        cells = self.level2_pairs(idx[:-1], idx[1:])
        return RoughPath(self.grid.subgrid(idx), self.X[..., idx, :], cells, self.p)

    def window(self, a, b):
        """The same rough path restricted to grid indices a..b (not re-based in time)."""
        idx = np.arange(a, b + 1)
        return self.X[..., idx, :], self.cells[..., a:b, :, :]

    def shifted(self, constant):
        """Same increments, level-1 path moved by a constant (the shift is kept in X)."""
        rp = RoughPath(self.grid, self.X, self.cells, self.p)
        rp.X = self.X + np.asarray(constant, dtype=np.float64)
        return rp


def reconstruct_level2(rp, s, t):
    """Level-2 increment over [s, t] summed cell by cell via Chen's relation."""
    i = rp.grid.index_of(s)
    j = rp.grid.index_of(t)
    if i > j:
        raise ValueError("need s <= t")
    e = rp.dim
    lead = rp.X.shape[:-2]
    out = np.zeros(lead + (e, e))
    base = rp.X[..., i, :]
    for k in range(i, j):
        dx = rp.X[..., k + 1, :] - rp.X[..., k, :]
        out += rp.cells[..., k, :, :] + (rp.X[..., k, :] - base)[..., :, None] * dx[..., None, :]
    return out


def canonical_lift(path, p):
    """Lift of the piecewise-linear interpolant: each cell carries half the outer square."""
    if len(path.grid) < 2:
        raise ValueError("a time grid needs at least 2 points")
    dx = path.increments()
    cells = 0.5 * dx[:, :, None] * dx[:, None, :]
    return RoughPath(path.grid, path.values, cells, p)


def canonical_lift_values(grid, values, p):
    values = np.asarray(values, dtype=np.float64)
    dx = np.diff(values, axis=-2)
    cells = 0.5 * dx[..., :, None] * dx[..., None, :]
    return RoughPath(grid, values, cells, p)


def _brownian_lift(ensemble, p, grid, stratonovich):
    sim = ensemble.grid
    target = sim if grid is None else grid
    idx = sim.indices_of(target.points)
    W = ensemble.W  # (S, n_sim+1, d)
    dW = np.diff(W, axis=1)
    # left-point cell sums on the simulation grid, then compose with Chen
    fine = np.zeros(dW.shape + (dW.shape[-1],))
    if stratonovich:
        fine = 0.5 * dW[..., :, None] * dW[..., None, :]
    fine_rp = RoughPath(sim, W, fine, p)
    return fine_rp.restrict(idx) if grid is not None else fine_rp


def ito_brownian_lift(ensemble, p, grid=None):
    """Per-sample Ito lift from left-point sums on the simulation grid."""
    return _brownian_lift(ensemble, p, grid, stratonovich=False)


def stratonovich_brownian_lift(ensemble, p, grid=None):
    """Per-sample lift of the piecewise-linear interpolant of each Brownian sample."""
    return _brownian_lift(ensemble, p, grid, stratonovich=True)


# ------------------------------------------------------------ p-variation

def increment_magnitudes(values):
    """|v_j - v_i| for all grid pairs of a (n, ...) array of values."""
    v = np.asarray(values, dtype=np.float64)
    v = v.reshape(v.shape[0], -1)
    diff = v[None, :, :] - v[:, None, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def p_variation(increments, q, window=None):
    """Grid-restricted q-variation of a two-parameter family of magnitudes.

    ``increments[i, j]`` is |A_{t_i, t_j}| for i < j (the lower triangle is
    ignored).  ``window`` is a pair of grid indices, default the whole grid.
    """
    if q < 1:
        raise ValueError("variation exponent q must be >= 1")
    inc = np.asarray(increments, dtype=np.float64)
    if inc.ndim != 2 or inc.shape[0] != inc.shape[1]:
        raise ValueError("increments must be a square two-parameter array")
    if window is not None:
        a, b = window
        if not 0 <= a <= b < inc.shape[0]:
            raise ValueError("window endpoints must be grid indices")
        inc = inc[a:b + 1, a:b + 1]
    if inc.shape[0] < 2:
        return 0.0
    if not np.all(np.isfinite(np.triu(inc, 1))):
        raise ValueError("non-finite increment")
    powered = np.triu(inc, 1) ** q
    return _kernels.pvar_dp(powered) ** (1.0 / q)


def path_p_variation(values, q, window=None):
    return p_variation(increment_magnitudes(values), q, window)


def level2_magnitudes(rp, indices=None):
    """|level-2 increment| over all pairs of the given grid indices (deterministic path)."""
    idx = np.arange(len(rp.grid)) if indices is None else np.asarray(indices)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    pairs = rp.level2_pairs(ii, jj)
    return np.sqrt(np.sum(pairs * pairs, axis=(-2, -1)))


def rough_path_metrics(rp, window=None, indices=None):
    """p-variation of level 1 and p/2-variation of level 2, on the grid or a subset of indices."""
    if rp.batched:
        raise ValueError("metrics need a deterministic rough path")
    idx = np.arange(len(rp.grid)) if indices is None else np.asarray(indices)
    if window is not None:
        a, b = window
        idx = idx[(idx >= a) & (idx <= b)]
    lvl1 = p_variation(increment_magnitudes(rp.X[idx]), rp.p)
    lvl2 = p_variation(level2_magnitudes(rp, idx), rp.p / 2.0)
    return RoughPathMetrics(lvl1, lvl2)


def rough_distance(a, b, indices=None):
    """Inhomogeneous p-variation distance of two rough paths on the same grid."""
    if a.grid != b.grid:
        raise ValueError("grid mismatch")
    if a.p != b.p:
        raise ValueError("exponent mismatch")
    diff = RoughPath(a.grid, a.X - b.X, a.cells - b.cells, a.p)
    # the difference of level-2 data is not itself Chen-consistent, so use both cumulative forms
    idx = np.arange(len(a.grid)) if indices is None else np.asarray(indices)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    l2 = a.level2_pairs(ii, jj) - b.level2_pairs(ii, jj)
    lvl2 = p_variation(np.sqrt(np.sum(l2 * l2, axis=(-2, -1))), a.p / 2.0)
    lvl1 = p_variation(increment_magnitudes(diff.X[idx]), a.p)
    return lvl1 + lvl2


def window_pvar_from_right(rp, a_min, b):
    """|X|_{p-var;[a,b]} for every a in a_min..b, from one right-to-left pass."""
    idx = np.arange(a_min, b + 1)
    m1 = np.triu(increment_magnitudes(rp.X[idx]), 1) ** rp.p
    m2 = np.triu(level2_magnitudes(rp, idx), 1) ** (rp.p / 2.0)
    best1 = _kernels.pvar_dp_from_right(m1)
    best2 = _kernels.pvar_dp_from_right(m2)
    return best1 ** (1.0 / rp.p) + best2 ** (2.0 / rp.p)


# ------------------------------------------------------ approximations

def piecewise_linear_approximation(path, coarse_indices):
    """Interpolate ``path`` linearly between the given grid indices, evaluated on the full grid."""
    idx = np.asarray(coarse_indices)
    t = path.grid.points
    vals = np.column_stack([np.interp(t, t[idx], path.values[idx, k]) for k in range(path.dim)])
    return SampledPath(path.grid, vals)


def dyadic_indices(n_cells, level):
    cells = 2 ** level
    if n_cells % cells:
        raise ValueError(f"grid with {n_cells} cells has no dyadic level {level}")
    return np.arange(0, n_cells + 1, n_cells // cells)


def dyadic_lifts(path, levels, p):
    """Canonical lifts of dyadic piecewise-linear approximations, all on the path's grid."""
    return [canonical_lift(piecewise_linear_approximation(path, dyadic_indices(path.grid.n_cells, k)), p) for k in levels]


def sine_path(grid, amplitude=1.0, frequency=1.0, dim=1):
    t = grid.points
    vals = np.column_stack([amplitude * np.sin(2 * np.pi * frequency * (k + 1) * t) for k in range(dim)])
    return SampledPath(grid, vals)


# ------------------------------------------------------------------ CSV

def write_path_csv(path, filename):
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{k + 1}" for k in range(path.dim)])
        for t, row in zip(path.grid.points, path.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_path_csv(filename):
    with open(filename, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "t":
        raise ValueError("path CSV must start with a t column")
    data = np.array([[float(v) for v in r] for r in body])
    return SampledPath(TimeGrid(data[:, 0]), data[:, 1:])


def write_rough_path_csv(rp, filename):
    """Cells as rows: t_i, t_{i+1}, level-1 increment, then level 2 row-major."""
    if rp.batched:
        raise ValueError("CSV export is for a single rough path")
    e = rp.dim
    dx = rp.increments()
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["t_i", "t_ip1"]
            + [f"dx_{k + 1}" for k in range(e)]
            + [f"xx_{a + 1}_{b + 1}" for a in range(e) for b in range(e)]
        )
        g = rp.grid.points
        for i in range(rp.grid.n_cells):
            w.writerow(
                [repr(float(g[i])), repr(float(g[i + 1]))]
                + [repr(float(v)) for v in dx[i]]
                + [repr(float(v)) for v in rp.cells[i].ravel()]
            )


def read_rough_path_csv(filename, p):
    with open(filename, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    e = sum(1 for h in header if h.startswith("dx_"))
    data = np.array([[float(v) for v in r] for r in body])
    grid = TimeGrid(np.concatenate([data[:1, 0], data[:, 1]]))
    dx = data[:, 2:2 + e]
    X = np.vstack([np.zeros((1, e)), np.cumsum(dx, axis=0)])
    cells = data[:, 2 + e:].reshape(-1, e, e)
    return RoughPath(grid, X, cells, p)
