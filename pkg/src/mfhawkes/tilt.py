"""Gridded tilt fields v(t, x).

A tilt multiplies a component's jump intensity by exp(v(t, x)) where x is
the component's current jump count.  The same gridded representation
doubles as the test-function type for the variational functionals and the
exponential-martingale weight.

Representation: a uniform grid 0 = t_0 < ... < t_K = T and a value matrix
with one row per cell [t_k, t_{k+1}) and one column per count x in
0..n_max; a single tail value covers x > n_max (default 0).  Evaluation is
piecewise constant in t on cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import grid_step, uniform_grid


@dataclass(frozen=True)
class TiltField:
    times: np.ndarray    # K+1 uniform grid points
    values: np.ndarray   # (K, n_max+1), row k applies on [t_k, t_{k+1})
    tail: float = 0.0    # value for x > n_max

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_cache", {})
        if values.ndim != 2 or values.shape[0] != len(times) - 1:
            raise ValueError("tilt values must have one row per grid cell")
        grid_step(times)  # uniformity

    # -- geometry -----------------------------------------------------------

    @property
    def dt(self) -> float:
        return grid_step(self.times)

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    @property
    def n_max(self) -> int:
        return self.values.shape[1] - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def cell_of(self, t: float) -> int:
        # bin against the stored grid points; int(t/dt) misbins at edges
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(k, 0), self.n_cells - 1)

    def column(self, cell: int) -> np.ndarray:
        return self.values[cell]

    def at(self, t: float, x: int) -> float:
        if x > self.n_max:
            return self.tail
        return float(self.values[self.cell_of(t), x])

    # -- properties used by the simulator and solvers ------------------------

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.values).all() and np.isfinite(self.tail))

    def cell_max(self) -> np.ndarray:
        """Per-cell max over x (including the tail value); cached."""
        if "cell_max" not in self._cache:
            self._cache["cell_max"] = np.maximum(self.values.max(axis=1), self.tail)
        return self._cache["cell_max"]

    def column_run_end(self) -> np.ndarray:
        """For each cell k, the first cell index > k whose column differs.

        Constant-in-time fields collapse to a single run, so the simulator
        never breaks a lookahead window at a cell edge without cause.
        Cached; replicate loops hit this every run.
        """
        if "run_end" in self._cache:
            return self._cache["run_end"]
        k_cells = self.n_cells
        if k_cells == 1:
            out = np.array([1], dtype=np.int64)
        else:
            changed = np.any(self.values[1:] != self.values[:-1], axis=1)
            change_at = np.flatnonzero(changed) + 1           # cells starting new runs
            bounds = np.concatenate([change_at, [k_cells]])
            idx = np.searchsorted(bounds, np.arange(k_cells), side="right")
            out = bounds[idx]
        self._cache["run_end"] = out
        return out

    def exp_integrability_proxy(self) -> float:
        """sum_k exp(max_x v) * dt; finite for any finite grid, recorded
        for reporting."""
        return float(np.sum(np.exp(self.cell_max())) * self.dt)

    def clipped(self, bound: float = 30.0) -> "TiltField":
        """Clamp values into [-bound, bound] (-inf maps to -bound)."""
        vals = np.clip(self.values, -bound, bound)
        tail = float(np.clip(self.tail, -bound, bound))
        return TiltField(self.times, vals, tail)

    # -- constructors ---------------------------------------------------------

    @staticmethod
    def zeros(horizon: float, dt: float, n_max: int) -> "TiltField":
        times = uniform_grid(horizon, dt)
        return TiltField(times, np.zeros((len(times) - 1, n_max + 1)))

    @staticmethod
    def constant(value: float, horizon: float, dt: float, n_max: int) -> "TiltField":
        times = uniform_grid(horizon, dt)
        return TiltField(times, np.full((len(times) - 1, n_max + 1), float(value)),
                         tail=float(value))

    @staticmethod
    def from_function(fn, horizon: float, dt: float, n_max: int,
                      tail: float = 0.0) -> "TiltField":
        """Sample fn(t, x) at cell left edges for x in 0..n_max."""
        times = uniform_grid(horizon, dt)
        xs = np.arange(n_max + 1)
        vals = np.array([[float(fn(t, x)) for x in xs] for t in times[:-1]])
        return TiltField(times, vals, tail)
