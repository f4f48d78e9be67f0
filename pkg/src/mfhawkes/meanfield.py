"""Deterministic solvers for the mean-field limit and its tilted variants.

Three objects live here:

* ``MeanPath``: the nondecreasing limit path m on a uniform grid, solving
  the Volterra fixed point  m(t) = integral_0^t phi(C_m(s)) ds  with
  C_m(s) = integral_0^s h(s-u) dm(u).
* ``MeasureFlow``: a time-gridded pmf over {0..n_max}.  The limit law is
  Poisson(m(t)); empirical snapshots and tilted laws use the same type.
  The flow-of-laws state space requires the starting law delta_0 and the
  CDF F(t, x) nonincreasing in t for every x (mass only moves upward).
* ``solve_perturbed_law``: the forward equation of the tilted limit
  process, the coupled birth system

      d/dt f(t, 0) = -f(t, 0) e^{v(t,0)} Lam(t)
      d/dt f(t, n) = (f(t, n-1) e^{v(t,n-1)} - f(t, n) e^{v(t,n)}) Lam(t)

  with the nonlocal intensity Lam(t) = phi(integral_0^t h(t-u) d mubar_u)
  recomputed from the accumulated mean history at every stage of an
  explicit 4th-order step.

Truncation at n_max is absorbing: mass pushed past the top level is
tracked as ``deficit`` and never renormalized, keeping the truncation
error observable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import poisson

from .grids import NumericsError, excitation_at, excitation_grid, grid_step, uniform_grid
from .model import ModelSpec
from .tilt import TiltField


@dataclass
class MeanPath:
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must match")

    @property
    def dt(self) -> float:
        return grid_step(self.times)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))

    def is_nondecreasing(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.diff(self.values) >= -tol))


@dataclass
class MeasureFlow:
    times: np.ndarray
    pmf: np.ndarray                       # (K+1, n_max+1)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.pmf = np.asarray(self.pmf, dtype=float)
        if self.pmf.ndim != 2 or self.pmf.shape[0] != len(self.times):
            raise ValueError("pmf must have one row per grid point")

    @property
    def n_max(self) -> int:
        return self.pmf.shape[1] - 1

    @property
    def dt(self) -> float:
        return grid_step(self.times)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.pmf, axis=1)

    def deficits(self) -> np.ndarray:
        """Mass unaccounted for above n_max, per grid point."""
        return 1.0 - self.pmf.sum(axis=1)

    def means(self) -> np.ndarray:
        return self.pmf @ np.arange(self.n_max + 1)

    def membership_violation(self, tol: float = 1e-9):
        """None if the flow is a valid flow of laws, else a message."""
        if abs(self.pmf[0, 0] - 1.0) > tol or np.any(np.abs(self.pmf[0, 1:]) > tol):
            return "flow does not start at the point mass on 0"
        if float(np.min(self.pmf)) < -tol:
            return "negative probability mass"
        d = self.deficits()
        if float(np.min(d)) < -tol:
            return "row mass exceeds 1"
        cdf = self.cdf()
        worst = float(np.max(np.diff(cdf, axis=0)))
        if worst > tol:
            return f"CDF increases in time by {worst:g} (mass moved downward)"
        return None

    def require_member(self, tol: float = 1e-9):
        msg = self.membership_violation(tol)
        if msg is not None:
            raise ValueError(f"not a valid measure flow: {msg}")


def lawbar(flow: MeasureFlow) -> MeanPath:
    """Row means of the flow; nondecreasing whenever the flow is valid."""
    return MeanPath(flow.times, flow.means(),
                    meta={"terminal_deficit": float(flow.deficits()[-1])})


# ---------------------------------------------------------------------------
# Mean-field limit
# ---------------------------------------------------------------------------


def _cumtrapz(values: np.ndarray, dt: float) -> np.ndarray:
    out = np.empty_like(values)
    out[0] = 0.0
    np.cumsum(0.5 * dt * (values[1:] + values[:-1]), out=out[1:])
    return out


def solve_mean_limit(model: ModelSpec, dt: float, tol: float = 1e-10,
                     max_iter: int = 200) -> MeanPath:
    """Fixed-point iteration for the limit path on a uniform grid.

    The Volterra map m -> cumulative integral of phi(C_m) contracts under
    the subcriticality assumption; iteration stops when the sup-norm
    change drops below ``tol``.  The excitation integral uses the
    integration-by-parts form with trapezoid quadrature, the outer
    integral cumulative trapezoid.
    """
    if dt > model.horizon / 10:
        raise ValueError("dt must be at most horizon/10")
    model.require_valid()
    times = uniform_grid(model.horizon, dt)
    step = grid_step(times)
    m = np.zeros_like(times)
    sup_changes = []
    for iteration in range(1, max_iter + 1):
        lam = model.rate.value(excitation_grid(model.kernel, times, m))
        m_new = _cumtrapz(lam, step)
        change = float(np.max(np.abs(m_new - m)))
        sup_changes.append(change)
        m = m_new
        if change < tol:
            return MeanPath(times, m, meta={"iterations": iteration,
                                            "sup_changes": sup_changes})
    raise NumericsError(
        f"mean-limit iteration did not converge within {max_iter} sweeps "
        f"(last change {sup_changes[-1]:.3g}); check the model assumptions")


def mean_field_law(mean_path: MeanPath, n_max: int,
                   deficit_tol: float = 1e-9) -> MeasureFlow:
    """Limit law: at each time the count is Poisson with mean m(t)."""
    if not mean_path.is_nondecreasing():
        raise ValueError("mean path must be nondecreasing")
    xs = np.arange(n_max + 1)
    pmf = poisson.pmf(xs[None, :], np.maximum(mean_path.values, 0.0)[:, None])
    flow = MeasureFlow(mean_path.times, pmf)
    deficit = float(np.max(flow.deficits()))
    if deficit > deficit_tol:
        m_end = float(mean_path.values[-1])
        need = int(np.ceil(m_end + 10.0 * np.sqrt(m_end))) + 1
        raise NumericsError(
            f"truncation deficit {deficit:.3g} exceeds {deficit_tol:.3g}; "
            f"use n_max >= {need}")
    flow.meta["terminal_deficit"] = float(flow.deficits()[-1])
    return flow


# ---------------------------------------------------------------------------
# Tilted forward equation
# ---------------------------------------------------------------------------


def _tilt_column(tilt: TiltField, t: float, n_max: int, clip: float) -> np.ndarray:
    """Tilt values for x in 0..n_max at time t, tail-filled and clamped."""
    col = np.full(n_max + 1, tilt.tail)
    src = tilt.column(tilt.cell_of(t))
    width = min(len(src), n_max + 1)
    col[:width] = src[:width]
    return np.clip(col, -clip, clip)


def solve_perturbed_law(model: ModelSpec, tilt: TiltField, dt: float = None,
                        n_max: int = 50, clip: float = 30.0,
                        deficit_tol: float = 1e-6,
                        negative_tol: float = 1e-12) -> MeasureFlow:
    """Integrate the tilted forward equation with explicit 4th-order steps.

    The tilt is clamped into [-clip, clip] before stepping (large tilts
    make the explicit scheme stiff; shrink dt or the clip if the negative
    mass guard trips).  The nonlocal intensity is re-evaluated at every
    stage from the mean history accumulated so far, extended through the
    running stage state.
    """
    if not np.isclose(tilt.horizon, model.horizon, rtol=1e-9):
        raise ValueError("tilt horizon does not match the model horizon")
    model.require_valid()
    if dt is None:
        dt = model.horizon * 1e-3
    times = uniform_grid(model.horizon, dt)
    step = grid_step(times)
    k_panels = len(times) - 1
    xs = np.arange(n_max + 1, dtype=float)
    shift = np.zeros(n_max + 1)

    pmf = np.zeros((k_panels + 1, n_max + 1))
    pmf[0, 0] = 1.0
    mubar = np.zeros(k_panels + 1)
    leak = 0.0

    kernel, rate = model.kernel, model.rate

    for k in range(k_panels):
        ev = np.exp(_tilt_column(tilt, times[k] + 0.5 * step, n_max, clip))

        def rhs(s, y):
            flux = y * ev
            mu_s = float(xs @ y)
            lam = rate.value(excitation_at(kernel, times, mubar, k, s, mu_s))
            shift[0] = 0.0
            shift[1:] = flux[:-1]
            return (shift - flux) * lam, flux[-1] * lam

        y = pmf[k]
        d1, l1 = rhs(times[k], y)
        d2, l2 = rhs(times[k] + 0.5 * step, y + 0.5 * step * d1)
        d3, l3 = rhs(times[k] + 0.5 * step, y + 0.5 * step * d2)
        d4, l4 = rhs(times[k + 1], y + step * d3)
        pmf[k + 1] = y + (step / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        leak += (step / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
        if float(pmf[k + 1].min()) < -negative_tol:
            raise NumericsError(
                f"negative mass {pmf[k + 1].min():.3g} at t={times[k + 1]:.6g}; "
                "halve dt or lower the tilt clip")
        mubar[k + 1] = float(xs @ pmf[k + 1])

    flow = MeasureFlow(times, pmf, meta={"leak": leak, "clip": clip, "dt": step})
    deficit = float(flow.deficits()[-1])
    flow.meta["terminal_deficit"] = deficit
    if deficit > deficit_tol:
        raise NumericsError(
            f"truncation deficit {deficit:.3g} exceeds {deficit_tol:.3g}; "
            "increase n_max")
    msg = flow.membership_violation(tol=1e-9)
    if msg is not None:
        raise NumericsError(f"solver output left the flow-of-laws space: {msg}")
    return flow


def flux_balance_residual(flow: MeasureFlow, model: ModelSpec, tilt: TiltField,
                          clip: float = 30.0) -> float:
    """Max gap between the integrated tilted jump flux and the flow mean.

    For an exact solution the cumulative flux
    integral_0^t sum_x e^{v} Lam f equals mubar_t; the residual is
    reported relative to the terminal mean.
    """
    times = flow.times
    step = flow.dt
    mubar = flow.means()
    lam = model.rate.value(excitation_grid(model.kernel, times, mubar))
    weighted = lam[:, None] * flow.pmf
    cum = 0.0
    worst = 0.0
    for k in range(1, len(times)):
        ev = np.exp(_tilt_column(tilt, times[k - 1] + 0.5 * step, flow.n_max, clip))
        cum += 0.5 * step * float(ev @ (weighted[k - 1] + weighted[k]))
        worst = max(worst, abs(cum - mubar[k]))
    return worst / max(float(mubar[-1]), 1e-12)
