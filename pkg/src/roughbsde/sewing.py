"""Compensated Riemann sums for two-parameter germs, refined until Cauchy.

A germ is evaluated on arrays of grid-index pairs and returns one value per
sample: ``evaluator(s_idx, t_idx) -> (S, k, *value_shape)``.  Sums start on
a coarse target partition and are refined inside the working grid until the
sup-over-time empirical L^m change drops below ``tol`` (relative), or the
working grid itself is reached.
"""

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Germ:
    evaluator: object
    adapted: bool = True

    def __call__(self, s_idx, t_idx):
        return self.evaluator(np.asarray(s_idx), np.asarray(t_idx))


@dataclass
class SewingReport:
    values: np.ndarray  # (S, len(target), *vs)
    target: np.ndarray  # grid indices where values live
    refinement_errors: list
    converged: bool
    m: float
    at_floor: bool = False
    centering: float = 0.0
    centering_flagged: bool = False
    warnings: list = field(default_factory=list)

    def to_csv(self, filename):
        with open(filename, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "error"])
            for lvl, err in enumerate(self.refinement_errors, start=1):
                w.writerow([lvl, repr(float(err))])


def _refine(partition, schedule):
    gaps = np.diff(partition)
    new = [partition]
    if schedule == "dyadic":
        wide = gaps >= 2
        new.append(partition[:-1][wide] + gaps[wide] // 2)
    elif schedule == "triadic":
        wide = gaps >= 2
        new.append(partition[:-1][wide] + np.maximum(gaps[wide] // 3, 1))
        wider = gaps >= 3
        new.append(partition[:-1][wider] + (2 * gaps[wider]) // 3)
    else:
        raise ValueError(f"unknown refinement schedule {schedule!r}")
    return np.unique(np.concatenate(new))


def _lm_rows(diff, m):
    """Empirical L^m norm per time column of an (S, k, ...) array."""
    flat = diff.reshape(diff.shape[0], diff.shape[1], -1)
    mag = np.sqrt(np.sum(flat * flat, axis=2))
    if np.isinf(m):
        return mag.max(axis=0)
    return np.mean(mag ** m, axis=0) ** (1.0 / m)


def _partition_sum(germ, partition, target):
    a = germ(partition[:-1], partition[1:])
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite germ value")
    cum = np.concatenate([np.zeros_like(a[:, :1]), np.cumsum(a, axis=1)], axis=1)
    pos = np.searchsorted(partition, target)
    return cum[:, pos]


def _sew(germ, n_cells, m, target, tol, schedule, max_levels, floor):
    target = np.arange(n_cells + 1) if target is None else np.asarray(target, dtype=np.int64)
    if target[0] != 0 or target[-1] != n_cells:
        raise ValueError("target partition must span the whole grid")
    partition = target.copy()
    if floor:
        partition = np.arange(n_cells + 1)
    values = _partition_sum(germ, partition, target)
    errors = []
    converged = False
    levels = 0
    while True:
        if partition.size == n_cells + 1:
            return values, errors, True, True, partition
        if levels >= max_levels:
            return values, errors, converged, False, partition
        finer = _refine(partition, schedule)
        new_values = _partition_sum(germ, finer, target)
        err = float(np.max(_lm_rows(new_values - values, m)))
        scale = max(1.0, float(np.max(_lm_rows(new_values, m))))
        errors.append(err)
        values, partition = new_values, finer
        levels += 1
        if err < tol * scale:
            converged = True
            return values, errors, True, partition.size == n_cells + 1, partition


def _monotone_warning(errors):
    burn = 2
    tail = errors[burn:]
    if any(b > a * (1 + 1e-9) for a, b in zip(tail[:-1], tail[1:])):
        return ["refinement errors not monotone after burn-in"]
    return []


def sew_deterministic(germ, grid, m=2.0, target=None, tol=1e-3, schedule="dyadic", max_levels=30, floor=False):
    """Sewing of a germ by deterministic refinement; per sample when batched."""
    values, errors, converged, at_floor, _ = _sew(germ, grid.n_cells, m, target, tol, schedule, max_levels, floor)
    tgt = np.arange(grid.n_cells + 1) if target is None else np.asarray(target)
    return SewingReport(values, tgt, errors, converged, m, at_floor, warnings=_monotone_warning(errors))


def centering_defect(germ, partition, model, m=2.0, schedule="dyadic"):
    """max over the cells of ``partition`` split once by the refinement of ||E_s dA_{s,u,t}||_m."""
    worst = 0.0
    finer = _refine(partition, schedule)
    for s, t in zip(partition[:-1], partition[1:]):
        inner = finer[(finer > s) & (finer < t)]
        for u in inner:
            dA = germ([s], [t]) - germ([s], [u]) - germ([u], [t])
            centred = model.cond_exp(dA[:, 0], int(s))
            worst = max(worst, float(_lm_rows(centred[:, None], m)[0]))
    return worst


def sew_stochastic(
    germ, grid, model, m=2.0, target=None, tol=1e-3, schedule="dyadic", max_levels=30, floor=False,
    audit=True, audit_tol=1e-8,
):
    """Stochastic sewing: same limit as the deterministic one, plus the centering audit."""
    if not germ.adapted:
        raise ValueError("stochastic sewing needs an adapted germ")
    values, errors, converged, at_floor, partition = _sew(
        germ, grid.n_cells, m, target, tol, schedule, max_levels, floor
    )
    tgt = np.arange(grid.n_cells + 1) if target is None else np.asarray(target)
    report = SewingReport(values, tgt, errors, converged, m, at_floor, warnings=_monotone_warning(errors))
    if audit:
        start = tgt if tgt.size < grid.n_cells + 1 else np.arange(0, grid.n_cells + 1, max(1, grid.n_cells // 8))
        if start[-1] != grid.n_cells:
            start = np.append(start, grid.n_cells)
        report.centering = centering_defect(germ, start, model, m, schedule)
        scale = max(1.0, float(np.max(_lm_rows(values, m))))
        report.centering_flagged = report.centering > audit_tol * scale
    return report
