"""Stochastic controlled rough paths, their K-weighted norms and product rules.

Shapes: a path's values are (S, n+1, *vs); its Gubinelli derivative adds a
trailing rough-path axis, (S, n+1, *vs, e).  Essentially bounded
coefficients (G, G') may carry a leading axis of length 1 when
deterministic.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .models import lm_norm, martingale_decomposition
from .roughpath import p_variation


def sample_points(a, b, max_points=64):
    """At most ``max_points`` grid indices from a..b, both ends included."""
    count = b - a + 1
    if count <= max_points:
        return np.arange(a, b + 1)
    return np.unique(np.round(np.linspace(a, b, max_points)).astype(np.int64))


def process_variation(V, q, m=2.0, indices=None):
    """||dV||_{m, q-var}: empirical L^m increments over all pairs fed to the DP."""
    V = np.asarray(V, dtype=np.float64)
    idx = np.arange(V.shape[1]) if indices is None else np.asarray(indices)
    if idx.size < 2:
        return 0.0
    return p_variation(_kernels.pairwise_lm(V[:, idx], m), q)


def remainder_variation(V, Vp, X, q, m=2.0, indices=None):
    """||dV - V' dX||_{m, q-var} with X of shape (n+1, e) or (S, n+1, e)."""
    V = np.asarray(V, dtype=np.float64)
    idx = np.arange(V.shape[1]) if indices is None else np.asarray(indices)
    if idx.size < 2:
        return 0.0
    path = X[idx][None] if X.ndim == 2 else X[:, idx]
    return p_variation(_kernels.pairwise_remainder(V[:, idx], Vp[:, idx], path, m), q)


def check_exponents(p, q, qp):
    if q < p or qp < p:
        raise ValueError("variation exponents must satisfy q, q' >= p")
    if 1.0 / q + 1.0 / qp <= 0.5:
        raise ValueError("variation exponents must satisfy 1/q + 1/q' > 1/2")


@dataclass
class StochasticControlledPath:
    Y: np.ndarray
    Yp: np.ndarray
    rough: object
    model: object
    q: float = None
    qp: float = None
    m: float = 2.0
    offset: int = 0  # fine-grid index of the first column

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.float64)
        self.Yp = np.asarray(self.Yp, dtype=np.float64)
        if self.q is None:
            self.q = self.rough.p
        if self.qp is None:
            self.qp = self.rough.p
        if self.Yp.shape[:2] != self.Y.shape[:2] or self.Yp.shape[2:-1] != self.Y.shape[2:]:
            raise ValueError("derivative shape must be value shape plus one rough axis")
        if self.Yp.shape[-1] != self.rough.dim:
            raise ValueError("derivative must act on the rough path dimension")

    @property
    def path_X(self):
        """Level-1 rough path on this path's columns."""
        cols = self.offset + np.arange(self.Y.shape[1])
        return self.rough.X[..., cols, :]

    def window(self, a, b):
        return StochasticControlledPath(
            self.Y[:, a:b + 1], self.Yp[:, a:b + 1], self.rough, self.model, self.q, self.qp, self.m, self.offset + a
        )

    def __add__(self, other):
        return StochasticControlledPath(
            self.Y + other.Y, self.Yp + other.Yp, self.rough, self.model, self.q, self.qp, self.m, self.offset
        )

    def __sub__(self, other):
        return StochasticControlledPath(
            self.Y - other.Y, self.Yp - other.Yp, self.rough, self.model, self.q, self.qp, self.m, self.offset
        )

    def scale(self, c):
        return StochasticControlledPath(
            c * self.Y, c * self.Yp, self.rough, self.model, self.q, self.qp, self.m, self.offset
        )

    def remainder_norm(self, indices=None):
        """Pathwise remainder ||dY - Y' dX||_{m, qq'/(q+q')-var}."""
        r = self.q * self.qp / (self.q + self.qp)
        return remainder_variation(self.Y, self.Yp, self.path_X, r, self.m, indices)


@dataclass
class ControlledNormReport:
    K: float
    mart_qvar: float
    yp_qpvar: float
    remJ_var: float
    terminal: float

    @property
    def total(self):
        return self.terminal + self.K * self.mart_qvar + self.yp_qpvar + self.K * self.remJ_var


def controlled_norm(scp, K=1.0, window=None, max_points=64, decomposition=None):
    """The K-weighted norm of (Y, Y') on a window of its columns."""
    if K < 1:
        raise ValueError("K must be >= 1")
    check_exponents(scp.rough.p, scp.q, scp.qp)
    n = scp.Y.shape[1] - 1
    a, b = (0, n) if window is None else window
    Y = scp.Y[:, a:b + 1]
    Yp = scp.Yp[:, a:b + 1]
    if decomposition is None:
        parts = martingale_decomposition(Y, scp.model, scp.offset + a)
        YM, YJ = parts.values, parts.residual
    else:
        YM, YJ = decomposition[0][:, a:b + 1], decomposition[1][:, a:b + 1]
        YM = YM - YM[:, :1]
        YJ = Y - YM
    idx = sample_points(0, b - a, max_points)
    X = scp.path_X[..., a:b + 1, :]
    r = scp.q * scp.qp / (scp.q + scp.qp)
    return ControlledNormReport(
        K=float(K),
        mart_qvar=process_variation(YM, scp.q, scp.m, idx),
        yp_qpvar=process_variation(Yp, scp.qp, scp.m, idx),
        remJ_var=remainder_variation(YJ, Yp, X, r, scp.m, idx),
        terminal=lm_norm(Y[:, -1], scp.m) + lm_norm(Yp[:, -1], scp.m),
    )


def controlled_distance(a, b, K=1.0, max_points=64):
    """K-weighted distance of two controlled paths, possibly on different rough paths."""
    if a.Y.shape != b.Y.shape:
        raise ValueError("grid mismatch")
    pa = martingale_decomposition(a.Y, a.model, a.offset)
    pb = martingale_decomposition(b.Y, b.model, b.offset)
    idx = sample_points(0, a.Y.shape[1] - 1, max_points)
    Xa, Xb = a.path_X, b.path_X
    if Xa.ndim != Xb.ndim:
        raise ValueError("mixing batched and deterministic rough paths")
    # remainders w.r.t. their own paths: stack derivatives against [X, -Xbar]
    path = np.concatenate([Xa, -Xb], axis=-1)
    deriv = np.concatenate([a.Yp, b.Yp], axis=-1)
    r = a.q * a.qp / (a.q + a.qp)
    rem = remainder_variation(pa.residual - pb.residual, deriv, path, r, a.m, idx)
    return ControlledNormReport(
        K=float(K),
        mart_qvar=process_variation(pa.values - pb.values, a.q, a.m, idx),
        yp_qpvar=process_variation(a.Yp - b.Yp, a.qp, a.m, idx),
        remJ_var=rem,
        terminal=lm_norm(a.Y[:, -1] - b.Y[:, -1], a.m) + lm_norm(a.Yp[:, -1] - b.Yp[:, -1], a.m),
    )


def sup_norm_in_time(scp):
    """sup_t ||Y_t||_m over the grid."""
    return max(lm_norm(scp.Y[:, k], scp.m) for k in range(scp.Y.shape[1]))


# --------------------------------------------------------- bounded coefficients

@dataclass
class EssBoundedControlledPath:
    """Coefficient pair (G, G') acting on the last axis of a path value."""

    G: np.ndarray
    Gp: np.ndarray
    rough: object

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=np.float64)
        self.Gp = np.asarray(self.Gp, dtype=np.float64)
        if self.Gp.shape[:-1] != self.G.shape:
            raise ValueError("derivative shape must be G's shape plus one rough axis")
        if not (np.all(np.isfinite(self.G)) and np.all(np.isfinite(self.Gp))):
            raise ValueError("coefficients must be finite")

    @classmethod
    def constant(cls, matrix, rough):
        g = np.asarray(matrix, dtype=np.float64)
        n = len(rough.grid)
        G = np.broadcast_to(g, (1, n) + g.shape).copy()
        return cls(G, np.zeros(G.shape + (rough.dim,)), rough)

    def norm(self, max_points=64, window=None):
        """||G_T|| + ||G'_T|| + ||dG'||_{inf, p-var} + ||R^G||_{inf, p/2-var}."""
        p = self.rough.p
        n = self.G.shape[1] - 1
        a, b = (0, n) if window is None else window
        idx = a + sample_points(0, b - a, max_points)
        terminal = lm_norm(self.G[:, b], np.inf) + lm_norm(self.Gp[:, b], np.inf)
        X = self.rough.X
        return (
            terminal
            + process_variation(self.Gp, p, np.inf, idx)
            + remainder_variation(self.G, self.Gp, X, p / 2.0, np.inf, idx)
        )


def _contract(G, Y):
    """G (B, n, *out, k) with Y (S, n, k) -> (S, n, *out)."""
    out_axes = G.ndim - 3
    Gv = G.reshape(G.shape[:2] + (-1, G.shape[-1]))
    res = np.einsum("snok,snk->sno", np.broadcast_to(Gv, (Y.shape[0],) + Gv.shape[1:]), Y)
    return res.reshape(Y.shape[:2] + G.shape[2:2 + out_axes])


def _contract_deriv(G, Yp):
    """G (B, n, *out, k) with Y' (S, n, k, e) -> (S, n, *out, e)."""
    Gv = G.reshape(G.shape[:2] + (-1, G.shape[-1]))
    res = np.einsum("snok,snke->snoe", np.broadcast_to(Gv, (Yp.shape[0],) + Gv.shape[1:]), Yp)
    return res.reshape(Yp.shape[:2] + G.shape[2:-1] + (Yp.shape[-1],))


def _contract_coeff_deriv(Gp, Y):
    """G' (B, n, *out, k, e) with Y (S, n, k) -> (S, n, *out, e)."""
    Gv = Gp.reshape(Gp.shape[:2] + (-1, Gp.shape[-2], Gp.shape[-1]))
    res = np.einsum("snoke,snk->snoe", np.broadcast_to(Gv, (Y.shape[0],) + Gv.shape[1:]), Y)
    return res.reshape(Y.shape[:2] + Gp.shape[2:-2] + (Gp.shape[-1],))


def leibniz_product(G, scp):
    """(GY, GY' + G'Y) for a bounded coefficient G acting on Y's value axis."""
    if G.G.shape[1] != scp.Y.shape[1]:
        raise ValueError("grid mismatch")
    if scp.Y.ndim != 3:
        raise ValueError("product rule expects vector-valued Y of shape (S, n+1, k)")
    GY = _contract(G.G, scp.Y)
    dGY = _contract_deriv(G.G, scp.Yp) + _contract_coeff_deriv(G.Gp, scp.Y)
    return StochasticControlledPath(GY, dGY, scp.rough, scp.model, scp.q, scp.qp, scp.m, scp.offset)


def left_point_integral(G, dM):
    """sum_i G_{t_i} (M_{t_{i+1}} - M_{t_i}) as a process started at 0."""
    inc = _contract(G[:, :-1], dM)
    return np.concatenate([np.zeros_like(inc[:, :1]), np.cumsum(inc, axis=1)], axis=1)


def leibniz_martingale_part(G, scp):
    """Discrete stochastic integral of G against the martingale part of Y."""
    YM = martingale_decomposition(scp.Y, scp.model, scp.offset).values
    return left_point_integral(G.G, np.diff(YM, axis=1))


def leibniz_bound_ratio(G, scp, K=1.0, max_points=64):
    """Measured constant C in ||(GY, (GY)')||^(K) <= C ||G|| (K||Y_T|| + ||Y||^(K) (1 + K|X|)^2)."""
    from .roughpath import rough_path_metrics

    out = controlled_norm(leibniz_product(G, scp), K, max_points=max_points).total
    cols = scp.offset + np.arange(scp.Y.shape[1])
    rough_size = rough_path_metrics(scp.rough, window=(cols[0], cols[-1])).total
    rhs = G.norm(max_points) * (
        K * lm_norm(scp.Y[:, -1], scp.m) + controlled_norm(scp, K, max_points=max_points).total * (1 + K * rough_size) ** 2
    )
    return out / rhs if rhs > 0 else 0.0


# ------------------------------------------------------------- drift integrals

def riemann_integral(F, grid, offset=0):
    """Left Riemann sums of F on the grid cells, started at 0."""
    F = np.asarray(F, dtype=np.float64)
    dt = grid.dt[offset:offset + F.shape[1] - 1]
    inc = F[:, :-1] * dt.reshape((1, -1) + (1,) * (F.ndim - 2))
    return np.concatenate([np.zeros_like(F[:, :1]), np.cumsum(inc, axis=1)], axis=1)


def lift_drift_integral(F, grid, rough, model, offset=0):
    """(int_0^. F dr, 0) as a controlled path."""
    Y = riemann_integral(F, grid, offset)
    Yp = np.zeros(Y.shape + (rough.dim,))
    return StochasticControlledPath(Y, Yp, rough, model, offset=offset)


def drift_integral_audit(F, grid, max_points=33):
    """Largest ratio ||int F||_{2,1-var;[s,t]} / (||F||_{L2([s,t])} |t-s|^{1/2}) over grid windows.

    The inequality holds with constant 1 by Cauchy-Schwarz; the measured
    value is returned together with the windows examined.
    """
    F = np.asarray(F, dtype=np.float64)
    Y = riemann_integral(F, grid)
    n = F.shape[1] - 1
    idx = sample_points(0, n, max_points)
    dt = grid.dt
    energy = np.concatenate([[0.0], np.cumsum(np.mean(np.sum(F[:, :-1].reshape(F.shape[0], n, -1) ** 2, axis=2), axis=0) * dt)])
    pair = _kernels.pairwise_lm(Y, 2.0)
    worst = 0.0
    t = grid.points
    for ia, a in enumerate(idx[:-1]):
        for b in idx[ia + 1:]:
            lhs = p_variation(pair, 1.0, window=(a, b))
            rhs = np.sqrt(max(energy[b] - energy[a], 0.0)) * np.sqrt(t[b] - t[a])
            if rhs > 0:
                worst = max(worst, lhs / rhs)
            elif lhs > 1e-14:
                worst = np.inf
    return worst
