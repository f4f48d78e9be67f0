"""Large-deviation rate functionals on measure flows.

For a flow of laws mu with CDF F and pmf f, the central object is the
per-cell flux ratio

    G(t, x) = (-dF/dt) / (f(t, x) * Lam(t)),      Lam(t) = phi(C_mubar(t)),

the ratio of the observed downward CDF flux at level x to the flux the
untilted dynamics would produce.  The decay rate of the flow is

    I(mu) = integral_0^T sum_x (G log G - G + 1) Lam f dt,

finite only when mass motion is absolutely continuous w.r.t. the support
(-dF/dt vanishes wherever f does); the log of G recovers the tilt that
generates the flow.

Discretization: all quantities live on grid panels (t_{k-1}, t_k].  The
numerator uses the backward difference of F, which is sign-exact for
valid flows (F nonincreasing in time).  The denominator pairs it with the
*panel mean* of f (three-point quadratic rule, exact for locally
quadratic pmfs) and the panel mean of Lam, so that G -> 1 + O(dt^2) on
smooth flows and the integrated flux telescopes exactly against the flow
mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .grids import excitation_grid, grid_step, uniform_grid
from .meanfield import MeanPath, MeasureFlow, solve_mean_limit
from .model import ModelSpec
from .tilt import TiltField

EPS_MOTION = 1e-10   # |dF/dt| above this counts as mass motion
EPS_SUPPORT = 1e-12  # panel-mean pmf below this counts as zero support


class AbsContinuityError(ValueError):
    """Mass moves where the flow carries no support; the rate is infinite."""

    def __init__(self, message, witness):
        super().__init__(message)
        self.witness = witness  # (t, x)


@dataclass
class GField:
    """Per-panel flux ratios plus the ingredients they were built from."""

    times: np.ndarray          # K+1 grid points; panel k is (t_{k-1}, t_k]
    values: np.ndarray         # (K, n_max+1) flux ratio G per panel
    flux: np.ndarray           # (K, n_max+1) backward-difference -dF/dt
    pmf_mean: np.ndarray       # (K, n_max+1) quadratic panel means of f
    lam_mean: np.ndarray       # (K,) panel means of Lam
    ac_mask: np.ndarray        # (K, n_max+1) True where AC is violated

    @property
    def dt(self) -> float:
        return grid_step(self.times)

    def ac_witness(self) -> Optional[Tuple[float, int]]:
        if not self.ac_mask.any():
            return None
        k, x = np.argwhere(self.ac_mask)[0]
        return (float(self.times[k + 1]), int(x))


@dataclass
class RateReport:
    value: float
    ac_violation: bool
    witness: Optional[Tuple[float, int]]
    integrand: np.ndarray           # (K, n_max+1) per-panel contribution density
    mass_balance_residual: float
    meta: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "value": self.value if math.isfinite(self.value) else "inf",
            "ac_violation": self.ac_violation,
            "witness": list(self.witness) if self.witness else None,
            "mass_balance_residual": self.mass_balance_residual,
        }


def _panel_pmf_means(pmf: np.ndarray) -> np.ndarray:
    """Quadratic three-point panel means of the pmf rows, clipped at 0.

    Endpoint averaging underestimates panel mass badly where f vanishes
    polynomially (early times, higher counts); the quadratic rule is exact
    there up to second order in the count.
    """
    k_panels = pmf.shape[0] - 1
    if k_panels == 1:
        return 0.5 * (pmf[:1] + pmf[1:])
    out = np.empty((k_panels, pmf.shape[1]))
    out[: k_panels - 1] = (5.0 * pmf[: k_panels - 1] + 8.0 * pmf[1:k_panels]
                           - pmf[2: k_panels + 1]) / 12.0
    out[k_panels - 1] = (-pmf[k_panels - 2] + 8.0 * pmf[k_panels - 1]
                         + 5.0 * pmf[k_panels]) / 12.0
    return np.maximum(out, 0.0)


def compute_G(flow: MeasureFlow, model: ModelSpec,
              eps_motion: float = EPS_MOTION,
              eps_support: float = EPS_SUPPORT) -> GField:
    """Flux ratios per panel with the 0/0 := 1 convention.

    Cells with motion above ``eps_motion`` but support below
    ``eps_support`` are flagged as absolute-continuity violations (their
    ratio is set to +inf); they are reported, not raised.
    """
    flow.require_member(tol=1e-7)
    times = flow.times
    dt = flow.dt
    cdf = flow.cdf()
    flux = (cdf[:-1] - cdf[1:]) / dt          # backward differences, >= 0
    flux = np.maximum(flux, 0.0)
    fbar = _panel_pmf_means(flow.pmf)
    lam = model.rate.value(excitation_grid(model.kernel, times, flow.means()))
    lam_bar = 0.5 * (lam[:-1] + lam[1:])

    denom = fbar * lam_bar[:, None]
    no_motion = flux <= eps_motion
    no_support = fbar <= eps_support
    ac_mask = (~no_motion) & no_support

    values = np.empty_like(flux)
    with np.errstate(divide="ignore", invalid="ignore"):
        np.divide(flux, denom, out=values, where=denom > 0.0)
    values[no_motion & no_support] = 1.0      # 0/0 convention
    values[no_motion & ~no_support] = flux[no_motion & ~no_support] / denom[no_motion & ~no_support]
    values[ac_mask] = np.inf

    return GField(times, values, flux, fbar, lam_bar, ac_mask)


def recover_tilt(flow: MeasureFlow, model: ModelSpec,
                 eps_support: float = EPS_SUPPORT) -> TiltField:
    """log of the flux ratio: the tilt that regenerates the flow.

    Zero-support cells take the conventional value 0.  Cells with support
    but no motion give -inf (flagged through ``TiltField.finite``).  An
    absolute-continuity violation raises, carrying its witness.
    """
    g = compute_G(flow, model, eps_support=eps_support)
    witness = g.ac_witness()
    if witness is not None:
        raise AbsContinuityError(
            f"mass moves without support at t={witness[0]:.6g}, x={witness[1]}",
            witness)
    with np.errstate(divide="ignore"):
        vals = np.where(g.pmf_mean > eps_support, np.log(g.values), 0.0)
    return TiltField(g.times, vals, tail=0.0)


def _gloglog_integrand(g: np.ndarray) -> np.ndarray:
    """G log G - G + 1 with the continuous extensions at G = 0 and G = 1."""
    out = np.empty_like(g)
    pos = g > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out[pos] = g[pos] * np.log(g[pos]) - g[pos] + 1.0
    out[~pos] = 1.0
    out[g == 1.0] = 0.0
    return np.maximum(out, 0.0)


def rate_I(flow: MeasureFlow, model: ModelSpec,
           eps_motion: float = EPS_MOTION,
           eps_support: float = EPS_SUPPORT) -> RateReport:
    """Decay rate of the flow; +inf on absolute-continuity violations.

    The reported mass-balance residual is the largest gap between the
    integrated recovered flux and the flow mean, relative to the terminal
    mean (the two agree exactly for exact solutions).
    """
    g = compute_G(flow, model, eps_motion, eps_support)
    dt = g.dt
    witness = g.ac_witness()

    integrand = _gloglog_integrand(np.where(np.isfinite(g.values), g.values, 1.0))
    integrand *= g.lam_mean[:, None] * g.pmf_mean

    # recovered flux: G where supported, e^0 = 1 on zero-support cells
    supported = g.pmf_mean > eps_support
    cell_flux = np.where(supported, g.flux, g.lam_mean[:, None] * g.pmf_mean)
    cum_flux = np.cumsum(cell_flux.sum(axis=1)) * dt
    mubar = flow.means()
    residual = float(np.max(np.abs(cum_flux - mubar[1:])) / max(mubar[-1], 1e-12))

    if witness is not None:
        return RateReport(math.inf, True, witness, integrand, residual)
    value = float(integrand.sum() * dt)
    return RateReport(value, False, None, integrand, residual)


def variational_J(flow: MeasureFlow, model: ModelSpec, testfn: TiltField) -> float:
    """Linear-minus-exponential pairing of a test field with the flow.

    J(psi) pairs psi against the downward CDF flux (the jump measure of
    the flow) and charges the exponential moment of psi under the
    untilted flux:

        J(psi) = sum_panels dt * sum_x [ psi * (-dF/dt)
                                         - (e^psi - 1) * Lam * f ].

    For any gridded field this is at most the flow's decay rate, with
    equality at the recovered tilt (pointwise convex duality, exact in
    this discretization).
    """
    if not np.isfinite(testfn.values).all():
        raise ValueError("test field must be finite")
    g = compute_G(flow, model)
    k_panels = len(g.times) - 1
    if testfn.n_cells != k_panels or not np.allclose(testfn.times, g.times):
        raise ValueError("test field grid does not match the flow grid")
    n_levels = flow.pmf.shape[1]
    psi = np.full((k_panels, n_levels), float(testfn.tail))
    width = min(testfn.values.shape[1], n_levels)
    psi[:, :width] = testfn.values[:, :width]

    linear = psi * g.flux
    charge = (np.exp(psi) - 1.0) * g.lam_mean[:, None] * g.pmf_mean
    return float((linear - charge).sum() * g.dt)


# ---------------------------------------------------------------------------
# Mean-process rate
# ---------------------------------------------------------------------------


def ell(x: float, y: float) -> float:
    """Poisson divergence x log(x/y) - x + y, with ell(0; y) = y."""
    if y <= 0.0:
        raise ValueError("ell requires y > 0")
    if x < 0.0:
        raise ValueError("ell requires x >= 0")
    if x == 0.0:
        return y
    return x * math.log(x / y) - x + y


def _ell_arr(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    zero = x <= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out[~zero] = x[~zero] * np.log(x[~zero] / y[~zero]) - x[~zero] + y[~zero]
    out[zero] = y[zero]
    return out


def rate_mean_process(eta: MeanPath, model: ModelSpec) -> float:
    """Decay rate of a candidate mean path.

    Panel slopes (backward differences) are scored with the Poisson
    divergence against the intensity phi(C_eta) the path itself induces;
    +inf if the path decreases anywhere or starts away from 0.
    """
    values = eta.values
    if abs(values[0]) > 1e-12 or not eta.is_nondecreasing(tol=1e-12):
        return math.inf
    dt = eta.dt
    slopes = np.maximum(np.diff(values), 0.0) / dt
    lam = model.rate.value(excitation_grid(model.kernel, eta.times, values))
    y_bar = 0.5 * (lam[:-1] + lam[1:])
    return float(_ell_arr(slopes, y_bar).sum() * dt)


# ---------------------------------------------------------------------------
# Endpoint minimizer
# ---------------------------------------------------------------------------


@dataclass
class EndpointMinimum:
    eta: MeanPath
    value: float
    converged: bool
    iterations: int


def _project_capped_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto {d >= 0, sum d = total}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, len(v) + 1)
    rho = np.nonzero(u * idx > css)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _conv_jacobian(model: ModelSpec, times: np.ndarray) -> np.ndarray:
    """d C(t_i) / d (panel increment j) for the trapezoid excitation."""
    k_nodes = len(times)
    dt = grid_step(times)
    h0 = model.kernel.at_zero
    jac = np.zeros((k_nodes, k_nodes - 1))
    for i in range(1, k_nodes):
        w = np.full(i + 1, dt)
        w[0] = w[-1] = 0.5 * dt
        v = w * model.kernel.deriv(times[i] - times[: i + 1])
        suffix = np.cumsum(v[::-1])[::-1]
        jac[i, :i] = h0 + suffix[1:]
    return jac


def minimize_rate_endpoint(a: float, model: ModelSpec, times: np.ndarray,
                           max_iter: int = 400, tol: float = 1e-11) -> EndpointMinimum:
    """Cheapest nondecreasing path from 0 to endpoint a, by decay rate.

    Projected gradient descent over panel increments on the simplex
    {d >= 0, sum d = a}, initialized at the limit path rescaled to the
    target endpoint.  Returns the best iterate with a convergence flag;
    closed forms (constant-slope optimum for constant rates) are test
    oracles, not code paths.
    """
    model.require_valid()
    times = np.asarray(times, dtype=float)
    dt = grid_step(times)
    limit = solve_mean_limit(model, dt)
    if len(limit.times) != len(times) or not np.allclose(limit.times, times):
        raise ValueError("grid must span [0, horizon] uniformly")
    m_end = float(limit.values[-1])
    if a < m_end - 1e-9:
        raise ValueError(f"endpoint {a} is below the limit value {m_end:.6g}")
    if abs(a - m_end) <= 1e-9:
        return EndpointMinimum(limit, 0.0, True, 0)

    jac = _conv_jacobian(model, times)
    kernel, rate = model.kernel, model.rate
    x_tiny = 1e-12

    def objective(d):
        eta = np.concatenate(([0.0], np.cumsum(d)))
        lam = rate.value(excitation_grid(kernel, times, eta))
        y_bar = 0.5 * (lam[:-1] + lam[1:])
        x = d / dt
        obj = float(_ell_arr(x, y_bar).sum() * dt)
        return obj, eta, lam, y_bar, x

    def gradient(d, eta, lam, y_bar, x):
        xg = np.maximum(x, x_tiny)
        g_x = np.log(xg / y_bar)                      # d ell / d slope
        g_y = 1.0 - x / y_bar                         # d ell / d intensity
        lamp = rate.deriv(excitation_grid(kernel, times, eta))
        node_weight = np.zeros(len(times))
        node_weight[:-1] += 0.5 * dt * g_y
        node_weight[1:] += 0.5 * dt * g_y
        return g_x + (node_weight * lamp) @ jac

    d = np.diff(limit.values) * (a / m_end)
    d = _project_capped_simplex(d, a)
    obj, eta, lam, y_bar, x = objective(d)
    step = 1.0
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        grad = gradient(d, eta, lam, y_bar, x)
        improved = False
        for _ in range(40):
            cand = _project_capped_simplex(d - step * grad, a)
            move = cand - d
            cand_obj = objective(cand)
            if cand_obj[0] <= obj - 1e-4 / max(step, 1e-12) * float(move @ move):
                improved = True
                break
            step *= 0.5
        if not improved:
            converged = True
            break
        change = obj - cand_obj[0]
        d = cand
        obj, eta, lam, y_bar, x = cand_obj
        step *= 1.6
        if change < tol * max(1.0, abs(obj)):
            converged = True
            break
    eta_path = MeanPath(times, np.concatenate(([0.0], np.cumsum(d))),
                        meta={"iterations": iterations, "converged": converged})
    return EndpointMinimum(eta_path, obj, converged, iterations)
