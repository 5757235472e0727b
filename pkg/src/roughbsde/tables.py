"""Convergence tables and log-log rate fits shared by audits and the CLI."""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats


@dataclass
class ConvergenceTable:
    """Rows of (level, input distance, output distance)."""

    rows: list = field(default_factory=list)
    label: str = ""

    def add(self, level, input_distance, output_distance):
        self.rows.append((level, float(input_distance), float(output_distance)))

    @property
    def levels(self):
        return np.array([r[0] for r in self.rows], dtype=float)

    @property
    def inputs(self):
        return np.array([r[1] for r in self.rows])

    @property
    def outputs(self):
        return np.array([r[2] for r in self.rows])

    def trends_to_zero(self, factor=0.2):
        out = self.outputs
        return bool(out.size >= 2 and out[-1] <= factor * out[0])

    def strictly_decreasing(self):
        return bool(np.all(np.diff(self.outputs) < 0))

    def to_csv(self, filename):
        with open(filename, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "input_distance", "output_distance"])
            for lvl, a, b in self.rows:
                w.writerow([lvl, repr(a), repr(b)])


@dataclass
class RateFit:
    slope: float
    band: tuple  # 95% interval for the slope
    intercept: float


def fit_rate(table, against="input"):
    """Least-squares slope of log(output) against log(input distance) (or log(level))."""
    if len(table.rows) < 3:
        raise ValueError("rate fit needs at least 3 rows")
    x = table.inputs if against == "input" else table.levels
    y = table.outputs
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("rate fit needs positive entries")
    lx, ly = np.log(x), np.log(y)
    res = stats.linregress(lx, ly)
    dof = len(lx) - 2
    if dof > 0 and np.isfinite(res.stderr):
        half = stats.t.ppf(0.975, dof) * res.stderr
    else:
        half = 0.0
    return RateFit(float(res.slope), (float(res.slope - half), float(res.slope + half)), float(res.intercept))
