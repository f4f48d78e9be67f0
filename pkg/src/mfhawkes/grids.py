"""Uniform time grids and the excitation convolution.

The solvers repeatedly need the excitation integral

    C(t) = integral_0^t h(t - u) dg(u)

for a nondecreasing gridded path g with g(0) = 0.  Differentiating the
Stieltjes form is ill-conditioned on grids, so it is evaluated by parts,

    C(t) = h(0) g(t) + integral_0^t h'(t - u) g(u) du,

with trapezoid quadrature for the remaining smooth integral.
"""

from __future__ import annotations

import numpy as np

from .model import KernelSpec


class NumericsError(RuntimeError):
    """A numerical routine failed to meet its contract (non-convergence,
    truncation deficit, instability)."""


def uniform_grid(horizon: float, dt: float) -> np.ndarray:
    """Grid 0 = t_0 < ... < t_K = horizon with K = round(horizon / dt) panels."""
    if dt <= 0 or horizon <= 0:
        raise ValueError("horizon and dt must be positive")
    n_panels = max(1, int(round(horizon / dt)))
    return np.linspace(0.0, horizon, n_panels + 1)


def grid_step(times: np.ndarray) -> float:
    steps = np.diff(times)
    dt = float(steps[0])
    if not np.allclose(steps, dt, rtol=1e-9, atol=1e-12):
        raise ValueError("time grid is not uniform")
    return dt


def excitation_grid(kernel: KernelSpec, times: np.ndarray, g: np.ndarray) -> np.ndarray:
    """C(t_k) for every grid point, given g on the same grid (g[0] = 0)."""
    k_count = len(times)
    out = np.empty(k_count)
    h0 = kernel.at_zero
    dt = grid_step(times) if k_count > 1 else 0.0
    out[0] = h0 * g[0]
    for k in range(1, k_count):
        lags = times[k] - times[: k + 1]
        integrand = kernel.deriv(lags) * g[: k + 1]
        out[k] = h0 * g[k] + np.trapezoid(integrand, dx=dt)
    return out


def excitation_at(kernel: KernelSpec, times: np.ndarray, g: np.ndarray,
                  k: int, s: float, g_s: float) -> float:
    """C(s) for t_k <= s <= t_{k+1}, extending the history with (s, g_s).

    ``g`` must hold valid values on times[0 .. k]; the partial panel
    [t_k, s] is closed with the trapezoid through (g[k], g_s).
    """
    h0 = kernel.at_zero
    lags = s - times[: k + 1]
    integrand = kernel.deriv(lags) * g[: k + 1]
    base = np.trapezoid(integrand, x=times[: k + 1]) if k >= 1 else 0.0
    rest = s - times[k]
    if rest > 0.0:
        base += 0.5 * rest * (kernel.deriv(rest) * g[k] + kernel.deriv(0.0) * g_s)
    return h0 * g_s + base
