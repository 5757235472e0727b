"""Rough stochastic integral of a controlled path, built by split sewing.

The integrand is split into its martingale part and the rest.  The germ
Y^M_s dX_{s,t} is sewn stochastically and Y^J_s dX_{s,t} + Y'_s XX_{s,t}
deterministically (per sample); the integral is the sum of both limits.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .controlled import (
    StochasticControlledPath,
    controlled_distance,
    process_variation,
    remainder_variation,
    sample_points,
)
from .models import lm_norm, martingale_decomposition
from .roughpath import TimeGrid, rough_distance, rough_path_metrics
from .sewing import Germ, sew_deterministic, sew_stochastic


def _first_order(values, dX):
    """Y (S, k, *out, e) applied to dX (S|1, k, e) -> (S, k, *out)."""
    S, k = values.shape[:2]
    e = values.shape[-1]
    flat = values.reshape(S, k, -1, e)
    res = np.einsum("skoe,ske->sko", flat, np.broadcast_to(dX, (S, k, e)))
    return res.reshape(values.shape[:-1])


def _second_order(deriv, XX):
    """Y' (S, k, *out, e, e) against level 2 (S|1, k, e, e): sum_{i,j} Y'[..., i, j] XX[j, i]."""
    S, k = deriv.shape[:2]
    e = deriv.shape[-1]
    flat = deriv.reshape(S, k, -1, e, e)
    res = np.einsum("skoij,skji->sko", flat, np.broadcast_to(XX, (S, k, e, e)))
    return res.reshape(deriv.shape[:-2])


def _level1(rough, cols_s, cols_t):
    dX = rough.level1_pairs(cols_s, cols_t)
    return dX if rough.batched else dX[None]


def _level2(rough, cols_s, cols_t):
    XX = rough.level2_pairs(cols_s, cols_t)
    return XX if rough.batched else XX[None]


def integrand_germs(scp):
    """Return (A^M, A^J) germs on the path's own column indices."""
    parts = martingale_decomposition(scp.Y, scp.model, scp.offset)
    YM, YJ = parts.values, parts.residual
    rough, off = scp.rough, scp.offset

    def mart(s, t):
        return _first_order(YM[:, s], _level1(rough, off + s, off + t))

    def rest(s, t):
        return _first_order(YJ[:, s], _level1(rough, off + s, off + t)) + _second_order(
            scp.Yp[:, s], _level2(rough, off + s, off + t)
        )

    return Germ(mart, adapted=True), Germ(rest, adapted=False), parts


@dataclass
class RoughStochasticIntegral:
    values: np.ndarray  # (S, len(target), *out)
    target: np.ndarray
    as_controlled: StochasticControlledPath = None
    martingale_report: object = None
    remainder_report: object = None
    local_error_bound_audit: list = field(default_factory=list)

    @property
    def converged(self):
        return self.martingale_report.converged and self.remainder_report.converged

    def audit_to_csv(self, filename):
        with open(filename, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window_start", "window_end", "lhs", "rhs", "ratio"])
            for row in self.local_error_bound_audit:
                w.writerow([row["s"], row["t"], repr(row["lhs"]), repr(row["rhs"]), repr(row["ratio"])])


def check_integrability(p, q, qp):
    if 1.0 / p + 1.0 / q + 1.0 / qp <= 1.0:
        raise ValueError("exponents must satisfy 1/p + 1/q + 1/q' > 1")


def rough_stochastic_integrate(
    scp, target=None, m=None, tol=1e-3, floor=False, audit=False, centering_audit=False, max_points=64
):
    """Integral of (Y, Y') against its reference rough path on the columns of ``scp``.

    ``target`` lists column indices (default all); with ``floor=True`` the
    sums are taken directly on every column cell.
    """
    rough = scp.rough
    check_integrability(rough.p, scp.q, scp.qp)
    if scp.Yp.shape[-2] != rough.dim:
        raise ValueError("integrand must take values in linear maps on the rough path space")
    m = scp.m if m is None else m
    n_cells = scp.Y.shape[1] - 1
    pts = rough.grid.points[scp.offset:scp.offset + n_cells + 1]
    grid = TimeGrid(pts - pts[0])
    mart, rest, parts = integrand_germs(scp)
    rep_m = sew_stochastic(mart, grid, scp.model, m, target, tol, floor=floor, audit=centering_audit)
    rep_j = sew_deterministic(rest, grid, m, target, tol, floor=floor)
    values = rep_m.values + rep_j.values
    tgt = rep_m.target
    result = RoughStochasticIntegral(values, tgt, None, rep_m, rep_j)
    if tgt.size == n_cells + 1:
        result.as_controlled = StochasticControlledPath(
            values, scp.Y, rough, scp.model, scp.q, scp.qp, scp.m, scp.offset
        )
    if audit:
        result.local_error_bound_audit = _local_error_audit(scp, parts, values, tgt, m, max_points)
    return result


def _local_error_audit(scp, parts, values, tgt, m, max_points):
    rough = scp.rough
    off = scp.offset
    r = scp.q * scp.qp / (scp.q + scp.qp)
    rows = []
    for a_pos in range(tgt.size - 1):
        s, t = int(tgt[a_pos]), int(tgt[a_pos + 1])
        s_arr, t_arr = np.array([s]), np.array([t])
        germ = _first_order(scp.Y[:, s_arr], _level1(rough, off + s_arr, off + t_arr)) + _second_order(
            scp.Yp[:, s_arr], _level2(rough, off + s_arr, off + t_arr)
        )
        lhs = lm_norm(values[:, a_pos + 1] - values[:, a_pos] - germ[:, 0], m)
        idx = sample_points(s, t, max_points)
        if rough.batched:
            rows.append({"s": s, "t": t, "lhs": lhs, "rhs": np.nan, "ratio": np.nan})
            continue
        size = rough_path_metrics(rough, indices=off + idx)
        first = process_variation(parts.values, scp.q, m, idx) + remainder_variation(
            parts.residual, scp.Yp, scp.path_X, r, m, idx
        )
        rhs = first * size.p_var_level1 + process_variation(scp.Yp, scp.qp, m, idx) * size.p2_var_level2
        ratio = lhs / rhs if rhs > 0 else (0.0 if lhs < 1e-13 else np.inf)
        rows.append({"s": s, "t": t, "lhs": lhs, "rhs": rhs, "ratio": ratio})
    return rows


# ----------------------------------------------------------------- stability

@dataclass
class StabilityReport:
    rows: list
    C_M: float

    def column(self, key):
        return np.array([r[key] for r in self.rows])


def stability_audit(pairs, K=1.0, eps=None, max_points=64):
    """Both sides of the stability estimate for a family of input pairs.

    ``pairs`` is a list of (scp_a, scp_b); each carries its own rough path.
    The constant C_M is fitted as the largest ratio
    (lhs - ||Y_T - Ybar_T||) / (K rho + (1/K + K eps) dist_in) over the family.
    """
    rows = []
    for scp_a, scp_b in pairs:
        ia = rough_stochastic_integrate(scp_a, floor=True)
        ib = rough_stochastic_integrate(scp_b, floor=True)
        lhs = controlled_distance(ia.as_controlled, ib.as_controlled, K, max_points).total
        dist_in = controlled_distance(scp_a, scp_b, K, max_points).total
        cols = scp_a.offset + np.arange(scp_a.Y.shape[1])
        rho = rough_distance(scp_a.rough, scp_b.rough, indices=sample_points(cols[0], cols[-1], max_points))
        size = eps
        if size is None:
            size = max(
                rough_path_metrics(scp_a.rough, indices=sample_points(cols[0], cols[-1], max_points)).total,
                rough_path_metrics(scp_b.rough, indices=sample_points(cols[0], cols[-1], max_points)).total,
            )
        terminal = lm_norm(scp_a.Y[:, -1] - scp_b.Y[:, -1], scp_a.m)
        denom = K * rho + (1.0 / K + K * size) * dist_in
        rows.append(
            {"rho": rho, "dist_in": dist_in, "lhs": lhs, "terminal": terminal, "eps": size,
             "ratio": (lhs - terminal) / denom if denom > 0 else 0.0}
        )
    C_M = max((r["ratio"] for r in rows), default=0.0)
    return StabilityReport(rows, C_M)
