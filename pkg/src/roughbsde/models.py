"""Probability backends: an exact binomial tree and a simulated Brownian ensemble.

Both expose the same small interface used by every solver:

* ``grid``, ``n_samples``, ``d`` and the Brownian samples ``W`` of shape (S, n+1, d);
* ``cond_exp(values, k)`` for E_{t_k} of an (S, ...) array;
* ``cond_exp_path(values, times)`` for E_{t_k} applied column by column;
* ``z_from_next(values, k)``, the martingale-representation integrand on cell k.

Processes are arrays of shape (S, n+1, *value_shape), sample axis first.
"""

import csv
import warnings
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .roughpath import TimeGrid


class RepresentationError(ValueError):
    pass


class BinomialTree:
    """All 2^(dN) sign sequences of a d-dimensional random walk with steps +-sqrt(dt).

    Every tree cell can be split into ``substeps`` fine cells.  Information
    arrives only at tree nodes: W is constant inside a tree cell and jumps at
    its right end, so conditional expectations at a fine time use the last
    node at or before it.

    Sample indices are ordered so the choice at step i sits in higher bits
    than the choice at step i+1; paths sharing their first i steps form a
    contiguous block of length 2^(d(N-i)).
    """

    def __init__(self, steps, T=1.0, d=1, substeps=1):
        if steps < 1 or d < 1 or substeps < 1:
            raise ValueError("steps, d and substeps must be positive")
        if d * steps > 22:
            raise ValueError("tree too large: d*steps must be <= 22")
        self.steps = steps
        self.T = float(T)
        self.d = d
        self.substeps = substeps
        self.dt = self.T / steps
        self.branching = 2 ** d
        self.n_samples = self.branching ** steps
        self.tree_grid = TimeGrid.uniform(self.T, steps)
        self.grid = self.tree_grid.refine(substeps)
        s = np.arange(self.n_samples)
        choice = np.empty((self.n_samples, steps), dtype=np.int64)
        for i in range(steps):
            choice[:, i] = (s >> (d * (steps - 1 - i))) & (self.branching - 1)
        bits = (choice[:, :, None] >> np.arange(d)) & 1
        self.tree_dW = np.sqrt(self.dt) * (2.0 * bits - 1.0)  # (S, N, d)
        Wt = np.concatenate([np.zeros((self.n_samples, 1, d)), np.cumsum(self.tree_dW, axis=1)], axis=1)
        self.tree_W = Wt
        self.node_of = np.arange(self.grid.n_cells + 1) // substeps
        self.W = Wt[:, self.node_of, :]
        dW = np.zeros((self.n_samples, self.grid.n_cells, d))
        dW[:, substeps - 1::substeps, :] = self.tree_dW
        self.dW = dW

    @property
    def exact(self):
        return True

    def probability_weights(self):
        return np.full(self.n_samples, 1.0 / self.n_samples)

    def _average_to_node(self, values, node):
        """Average over the children level by level down to ``node`` (keeps the tower property bitwise)."""
        v = values
        rest = v.shape[1:]
        for _ in range(self.steps - node):
            v = v.reshape((-1, self.branching) + rest).mean(axis=1)
        return v

    def cond_exp_node(self, values, node):
        values = np.asarray(values, dtype=np.float64)
        reduced = self._average_to_node(values, node)
        return np.repeat(reduced, self.branching ** (self.steps - node), axis=0)

    def cond_exp(self, values, k):
        return self.cond_exp_node(values, int(self.node_of[k]))

    def cond_exp_path(self, values, times=None):
        values = np.asarray(values, dtype=np.float64)
        ncol = values.shape[1]
        times = np.arange(ncol) if times is None else np.asarray(times)
        nodes = self.node_of[times]
        out = np.empty_like(values)
        for node in np.unique(nodes):
            cols = np.nonzero(nodes == node)[0]
            out[:, cols] = self.cond_exp_node(values[:, cols], int(node))
        return out

    def expectation(self, values):
        return self._average_to_node(np.asarray(values, dtype=np.float64), 0)[0]

    def cell_end(self, k):
        """Fine index of the node that closes the tree cell containing fine cell k."""
        return (int(self.node_of[k]) + 1) * self.substeps

    def z_from_next(self, values, k):
        """E_{t_k}[V dW^T] / dt over the tree cell containing fine cell k; V is (S, *vs)."""
        node = int(self.node_of[k])
        v = np.asarray(values, dtype=np.float64)
        dW = self.tree_dW[:, node, :]
        prod = v[..., None] * dW.reshape((dW.shape[0],) + (1,) * (v.ndim - 1) + (self.d,))
        return self.cond_exp_node(prod, node) / self.dt

    def represent(self, M):
        """Integrand Z with dM = Z dW on each tree cell; returns (Z, orthogonal residual)."""
        M = np.asarray(M, dtype=np.float64)
        n = self.grid.n_cells
        vs = M.shape[2:]
        Z = np.zeros((M.shape[0], n + 1) + vs + (self.d,))
        resid = 0.0
        scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
        for node in range(self.steps):
            a = node * self.substeps
            b = a + self.substeps
            jump = M[:, b] - M[:, a]
            drift = self.cond_exp_node(jump, node)
            if np.max(np.abs(drift), initial=0.0) > 1e-9 * scale:
                raise RepresentationError("representation requires martingale")
            z = self.z_from_next(M[:, b], a)
            Z[:, a:b] = z[:, None]
            fitted = np.einsum("s...d,sd->s...", z, self.tree_dW[:, node, :])
            resid = max(resid, float(np.max(np.abs(jump - fitted), initial=0.0)))
        return Z, resid

    def node_values(self, process):
        """Restrict a fine-grid process to the tree nodes."""
        return np.asarray(process)[:, :: self.substeps]


def _philox_normals(seed, sample, size):
    gen = np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(sample)))
    return gen.standard_normal(size)


def _monomial_exponents(dim, degree):
    exps = [np.zeros(dim, dtype=np.int64)]
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(dim), deg):
            e = np.zeros(dim, dtype=np.int64)
            for c in combo:
                e[c] += 1
            exps.append(e)
    return np.array(exps)


class BrownianEnsemble:
    """Monte Carlo Brownian paths with regression-based conditional expectations.

    The regression state at time t_k is W_{t_k}, optionally extended by a
    user process (e.g. a forward diffusion) via ``with_state``; the basis is
    all monomials of the standardised state up to ``degree``.
    """

    def __init__(self, grid, W, seed=None, degree=3, ridge=1e-10, state=None):
        self.grid = grid
        self.W = np.asarray(W, dtype=np.float64)
        self.n_samples, _, self.d = self.W.shape
        self.dW = np.diff(self.W, axis=1)
        self.seed = seed
        self.degree = degree
        self.ridge = ridge
        self.state = state
        self.regression_warning = False
        self.node_of = np.arange(grid.n_cells + 1)
        self.substeps = 1

    @property
    def exact(self):
        return False

    @property
    def increments(self):
        return self.dW

    def with_state(self, state):
        """Same paths, regression state extended by ``state`` of shape (S, n+1, r)."""
        st = np.asarray(state, dtype=np.float64)
        if st.ndim == 2:
            st = st[:, :, None]
        return BrownianEnsemble(self.grid, self.W, self.seed, self.degree, self.ridge, st)

    def probability_weights(self):
        return np.full(self.n_samples, 1.0 / self.n_samples)

    def _basis(self, k):
        parts = [self.W[:, k, :]]
        if self.state is not None:
            parts.append(self.state[:, k, :])
        x = np.concatenate(parts, axis=1)
        std = x.std(axis=0)
        keep = std > 1e-12 * max(1.0, float(np.max(np.abs(x), initial=0.0)))
        x = (x[:, keep] - x[:, keep].mean(axis=0)) / std[keep]
        exps = _monomial_exponents(x.shape[1], self.degree)
        return np.prod(x[:, None, :] ** exps[None, :, :], axis=2)

    def _project(self, values, basis):
        v = values.reshape(values.shape[0], -1)
        gram = basis.T @ basis
        rhs = basis.T @ v
        try:
            cond = np.linalg.cond(gram)
        except np.linalg.LinAlgError:
            cond = np.inf
        if not np.isfinite(cond) or cond > 1e12:
            self.regression_warning = True
            warnings.warn("singular regression normal equations; ridge regularised", RuntimeWarning)
            gram = gram + self.ridge * np.eye(gram.shape[0]) * max(1.0, np.trace(gram) / gram.shape[0])
        coef = np.linalg.solve(gram, rhs)
        return (basis @ coef).reshape(values.shape)

    def cond_exp(self, values, k):
        values = np.asarray(values, dtype=np.float64)
        if k == 0 and self.state is None:
            return np.broadcast_to(values.mean(axis=0), values.shape).copy()
        return self._project(values, self._basis(k))

    def cond_exp_path(self, values, times=None):
        values = np.asarray(values, dtype=np.float64)
        times = np.arange(values.shape[1]) if times is None else np.asarray(times)
        out = np.empty_like(values)
        for c, k in enumerate(times):
            out[:, c] = self.cond_exp(values[:, c], int(k))
        return out

    def expectation(self, values):
        return np.asarray(values, dtype=np.float64).mean(axis=0)

    def cell_end(self, k):
        return k + 1

    def z_from_next(self, values, k):
        v = np.asarray(values, dtype=np.float64)
        dW = self.dW[:, k, :]
        prod = v[..., None] * dW.reshape((dW.shape[0],) + (1,) * (v.ndim - 1) + (self.d,))
        return self.cond_exp(prod, k) / self.grid.dt[k]

    def represent(self, M):
        M = np.asarray(M, dtype=np.float64)
        n = self.grid.n_cells
        Z = np.zeros((M.shape[0], n + 1) + M.shape[2:] + (self.d,))
        resid = 0.0
        for k in range(n):
            z = self.z_from_next(M[:, k + 1], k)
            Z[:, k] = z
            jump = M[:, k + 1] - M[:, k]
            fitted = np.einsum("s...d,sd->s...", z, self.dW[:, k, :])
            resid = max(resid, float(np.sqrt(np.mean((jump - fitted) ** 2))))
        return Z, resid

    def node_values(self, process):
        return np.asarray(process)

    def to_csv(self, filename):
        with open(filename, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "t"] + [f"w_{c + 1}" for c in range(self.d)])
            for s in range(self.n_samples):
                for t, row in zip(self.grid.points, self.W[s]):
                    w.writerow([s, repr(float(t))] + [repr(float(v)) for v in row])


def simulate_brownian(grid, n_samples, d=1, seed=0, degree=3):
    """Brownian samples on ``grid``; sample s depends only on (seed, s)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    dt = grid.dt
    n = grid.n_cells
    z = np.stack([_philox_normals(seed, s, (n, d)) for s in range(n_samples)])
    dW = z * np.sqrt(dt)[None, :, None]
    W = np.concatenate([np.zeros((n_samples, 1, d)), np.cumsum(dW, axis=1)], axis=1)
    return BrownianEnsemble(grid, W, seed=seed, degree=degree)


def deterministic_model(grid):
    """One-sample model with no noise: conditional expectation is the identity."""
    return BrownianEnsemble(grid, np.zeros((1, len(grid), 1)))


# -------------------------------------------------- martingale decomposition

@dataclass
class MartingalePart:
    values: np.ndarray  # Y^M with Y^M_0 = 0
    residual: np.ndarray  # Y^J = Y - Y^M


def martingale_decomposition(Y, model, offset=0):
    """Split Y into a martingale part started at 0 and the remainder.

    ``offset`` is the fine-grid index of Y's first column, so windows of a
    longer grid can be decomposed on their own.
    """
    Y = np.asarray(Y, dtype=np.float64)
    n = Y.shape[1] - 1
    times = offset + np.arange(n)
    jump = Y[:, 1:] - Y[:, :-1]
    predictable = model.cond_exp_path(jump, times)
    dM = jump - predictable
    M = np.concatenate([np.zeros_like(Y[:, :1]), np.cumsum(dM, axis=1)], axis=1)
    return MartingalePart(M, Y - M)


def martingale_representation(M, model):
    """Z with dM = Z dW per cell; raises if M fails the martingale audit."""
    Z, _ = model.represent(M)
    return Z


def martingale_audit(M, model, offset=0):
    """Largest |E_t dM| over cells; zero for a martingale on the tree."""
    M = np.asarray(M, dtype=np.float64)
    jump = M[:, 1:] - M[:, :-1]
    drift = model.cond_exp_path(jump, offset + np.arange(jump.shape[1]))
    return float(np.max(np.abs(drift), initial=0.0))


# ---------------------------------------------------------- norms & audits

def lm_norm(values, m=2.0):
    """Empirical L^m norm of a per-sample quantity (Euclidean in the value axes)."""
    v = np.asarray(values, dtype=np.float64)
    mag = np.sqrt(np.sum(v.reshape(v.shape[0], -1) ** 2, axis=1))
    if np.isinf(m):
        return float(mag.max(initial=0.0))
    return float(np.mean(mag ** m) ** (1.0 / m))


def martingale_variation_ratio(M, m=2.0, q=None):
    """||dM||_{m, q-var} / ||M_T - M_0||_m with q defaulting to m."""
    from .controlled import process_variation

    q = m if q is None else q
    top = process_variation(M, q, m)
    bottom = lm_norm(M[:, -1] - M[:, 0], m)
    return top / bottom if bottom > 0 else (0.0 if top == 0 else np.inf)
