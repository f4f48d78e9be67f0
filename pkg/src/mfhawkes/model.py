"""Model ingredients for the mean-field Hawkes system.

A model is a pair (h, phi) on a horizon [0, T]:

* h is the exciting kernel: the weight a past jump at lag t contributes to
  the excitation sum.  Kernels here are closed parametric families so that
  the L1 norm, the value at lag zero and a bound on |h'| are available in
  closed form (the thinning simulator and the convolution solvers rely on
  them).
* phi is the jump-rate function mapping the excitation sum to an intensity.
  Each family exposes its exact Lipschitz constant and its infimum over
  x >= 0.

Three standing assumptions are checked by ``validate_model``:

* kernel regularity: h >= 0 on [0, T], differentiable with bounded |h'|;
* subcriticality:     lipschitz(phi) * l1_norm(h on [0, T]) < 1 (strict);
* intensity floor:    inf_{x >= 0} phi(x) > 0.

All values are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np


class AssumptionError(ValueError):
    """A model violates one of the standing assumptions."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------------------------
# Exciting kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentialKernel:
    """h(t) = scale * exp(-rate * t) on [0, horizon]."""

    rate: float
    scale: float
    horizon: float

    family = "exponential"

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("kernel horizon must be positive")
        if self.rate < 0:
            raise ValueError("exponential kernel rate must be >= 0")

    def value(self, t):
        t = np.asarray(t, dtype=float)
        _check_lag(t, self.horizon)
        out = self.scale * np.exp(-self.rate * t)
        return float(out) if out.ndim == 0 else out

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        out = -self.rate * self.scale * np.exp(-self.rate * t)
        return float(out) if out.ndim == 0 else out

    def l1(self, upto: float) -> float:
        """Exact integral of h over [0, upto]."""
        _check_lag(np.asarray(upto), self.horizon)
        if self.rate == 0.0:
            return self.scale * upto
        return self.scale * (1.0 - math.exp(-self.rate * upto)) / self.rate

    @property
    def at_zero(self) -> float:
        return self.scale

    @property
    def deriv_sup(self) -> float:
        """sup |h'| on [0, horizon]; attained at lag 0."""
        return abs(self.rate * self.scale)

    @property
    def support_end(self) -> float:
        return math.inf

    def to_config(self) -> dict:
        return {"family": self.family, "rate": self.rate, "scale": self.scale,
                "horizon": self.horizon}


@dataclass(frozen=True)
class PiecewiseLinearKernel:
    """Linear interpolation through ``knots``; zero past the last knot.

    The first knot must sit at lag 0 and knot times must be strictly
    increasing.  |h'| is bounded by the largest absolute segment slope, so
    the thinning majorant applies.
    """

    knots: tuple  # ((t0, v0), (t1, v1), ...)
    horizon: float

    family = "piecewise_linear"

    def __post_init__(self):
        kn = tuple((float(t), float(v)) for t, v in self.knots)
        object.__setattr__(self, "knots", kn)
        if self.horizon <= 0:
            raise ValueError("kernel horizon must be positive")
        if len(kn) < 2:
            raise ValueError("piecewise linear kernel needs at least two knots")
        ts = [t for t, _ in kn]
        if ts[0] != 0.0:
            raise ValueError("first knot must be at lag 0")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("knot times must be strictly increasing")

    def _arrays(self):
        ts = np.array([t for t, _ in self.knots])
        vs = np.array([v for _, v in self.knots])
        return ts, vs

    def value(self, t):
        t = np.asarray(t, dtype=float)
        _check_lag(t, self.horizon)
        ts, vs = self._arrays()
        out = np.interp(t, ts, vs, left=vs[0], right=0.0)
        # np.interp clamps at the right edge; force zero strictly past support
        out = np.where(t > ts[-1], 0.0, out)
        return float(out) if out.ndim == 0 else out

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        ts, vs = self._arrays()
        slopes = np.diff(vs) / np.diff(ts)
        idx = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(slopes) - 1)
        out = np.where(t >= ts[-1], 0.0, slopes[idx])
        return float(out) if out.ndim == 0 else out

    def l1(self, upto: float) -> float:
        """Exact integral of h over [0, upto] (trapezoid areas are exact here)."""
        _check_lag(np.asarray(upto), self.horizon)
        ts, vs = self._arrays()
        total = 0.0
        for (a, va), (b, vb) in zip(self.knots, self.knots[1:]):
            if upto <= a:
                break
            if upto >= b:
                total += 0.5 * (va + vb) * (b - a)
            else:
                vm = va + (vb - va) * (upto - a) / (b - a)
                total += 0.5 * (va + vm) * (upto - a)
                break
        return total

    @property
    def at_zero(self) -> float:
        return self.knots[0][1]

    @property
    def deriv_sup(self) -> float:
        ts, vs = self._arrays()
        return float(np.max(np.abs(np.diff(vs) / np.diff(ts))))

    @property
    def support_end(self) -> float:
        return self.knots[-1][0]

    def to_config(self) -> dict:
        return {"family": self.family,
                "knots": [[t, v] for t, v in self.knots],
                "horizon": self.horizon}


KernelSpec = Union[ExponentialKernel, PiecewiseLinearKernel]


def _check_lag(t, horizon):
    if np.any(t < 0) or np.any(t > horizon):
        raise ValueError(f"lag outside [0, {horizon}]")


def eval_kernel(kernel: KernelSpec, t: float) -> float:
    """h(t) for 0 <= t <= horizon."""
    return kernel.value(t)


def kernel_l1(kernel: KernelSpec, upto: float) -> float:
    """Exact integral of h over [0, upto] by the family's closed form."""
    if upto < 0 or upto > kernel.horizon:
        raise ValueError(f"upto outside [0, {kernel.horizon}]")
    return kernel.l1(upto)


# ---------------------------------------------------------------------------
# Jump-rate functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantRate:
    """phi(x) = c."""

    c: float

    family = "constant"

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, self.c)
        return float(out) if out.ndim == 0 else out

    def value_scalar(self, x: float) -> float:
        return self.c

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        return float(out) if out.ndim == 0 else out

    @property
    def lipschitz(self) -> float:
        return 0.0

    @property
    def floor(self) -> float:
        return self.c

    def to_config(self) -> dict:
        return {"family": self.family, "c": self.c}


@dataclass(frozen=True)
class AffineClippedRate:
    """phi(x) = max(floor, a + b*x).

    The clip keeps the intensity bounded away from zero even where the
    affine part could touch it; ``floor`` defaults to ``a``.
    """

    a: float
    b: float
    floor_value: float = None  # defaults to a

    family = "affine_clipped"

    def __post_init__(self):
        if self.b < 0:
            raise ValueError("affine rate slope must be >= 0")
        if self.floor_value is None:
            object.__setattr__(self, "floor_value", float(self.a))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.maximum(self.floor_value, self.a + self.b * x)
        return float(out) if out.ndim == 0 else out

    def value_scalar(self, x: float) -> float:
        y = self.a + self.b * x
        return y if y > self.floor_value else self.floor_value

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(self.a + self.b * x >= self.floor_value, self.b, 0.0)
        return float(out) if out.ndim == 0 else out

    @property
    def lipschitz(self) -> float:
        return self.b

    @property
    def floor(self) -> float:
        # nondecreasing in x, so the infimum over x >= 0 sits at x = 0
        return self.value(0.0)

    def to_config(self) -> dict:
        return {"family": self.family, "a": self.a, "b": self.b,
                "floor": self.floor_value}


@dataclass(frozen=True)
class SigmoidalRate:
    """phi(x) = lo + (hi - lo) / (1 + exp(-slope * (x - center)))."""

    lo: float
    hi: float
    slope: float
    center: float

    family = "sigmoidal"

    def __post_init__(self):
        if self.hi <= self.lo:
            raise ValueError("sigmoidal rate needs hi > lo")
        if self.slope <= 0:
            raise ValueError("sigmoidal rate needs slope > 0")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        z = -self.slope * (x - self.center)
        out = self.lo + (self.hi - self.lo) / (1.0 + np.exp(z))
        return float(out) if out.ndim == 0 else out

    def value_scalar(self, x: float) -> float:
        return self.lo + (self.hi - self.lo) / (1.0 + math.exp(-self.slope * (x - self.center)))

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        s = 1.0 / (1.0 + np.exp(-self.slope * (x - self.center)))
        out = (self.hi - self.lo) * self.slope * s * (1.0 - s)
        return float(out) if out.ndim == 0 else out

    @property
    def lipschitz(self) -> float:
        # max of the logistic derivative sits at the center
        return (self.hi - self.lo) * self.slope / 4.0

    @property
    def floor(self) -> float:
        # increasing in x, so the infimum over x >= 0 is at x = 0
        return self.value(0.0)

    def to_config(self) -> dict:
        return {"family": self.family, "lo": self.lo, "hi": self.hi,
                "slope": self.slope, "center": self.center}


RateSpec = Union[ConstantRate, AffineClippedRate, SigmoidalRate]


# ---------------------------------------------------------------------------
# Full model and assumption checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    kernel: KernelSpec
    rate: RateSpec
    horizon: float

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("model horizon must be positive")
        if self.horizon > self.kernel.horizon:
            raise ValueError("kernel horizon shorter than model horizon")

    @property
    def stability_product(self) -> float:
        """lipschitz(phi) * integral of h over [0, horizon]."""
        return self.rate.lipschitz * self.kernel.l1(self.horizon)

    def require_valid(self):
        report = validate_model(self)
        if not report.passed:
            bad = ", ".join(c.name for c in report.checks if not c.passed)
            raise AssumptionError(f"model assumptions violated: {bad}", report)
        return report

    def to_config(self) -> dict:
        return {"T": self.horizon, "kernel": self.kernel.to_config(),
                "rate": self.rate.to_config()}


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    value: float
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    checks: tuple

    def check(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def validate_model(model: ModelSpec, probe_points: int = 257) -> ValidationReport:
    """Check the three standing assumptions and report each result.

    Kernel nonnegativity is exact for both families (checked at knots for
    the piecewise family, at lag 0 for the exponential); the remaining
    quantities come from the families' closed forms.
    """
    checks = []

    # kernel regularity: h >= 0 on [0, T] and |h'| bounded
    if isinstance(model.kernel, PiecewiseLinearKernel):
        hmin = min(v for _, v in model.kernel.knots)
    else:
        # exponential kernels are monotone in |t|, extremes at the endpoints
        hmin = min(model.kernel.value(0.0), model.kernel.value(model.horizon))
    dsup = model.kernel.deriv_sup
    ok1 = hmin >= 0.0 and math.isfinite(dsup)
    checks.append(AssumptionCheck(
        "kernel_regularity", ok1, hmin,
        f"min h = {hmin:g}, sup|h'| = {dsup:g} on [0, {model.horizon}]"))

    # subcriticality: lipschitz * l1 < 1 strictly
    prod = model.stability_product
    ok2 = prod < 1.0
    checks.append(AssumptionCheck(
        "subcriticality", ok2, prod,
        f"lipschitz * l1_norm = {prod:.6g} (must be < 1)"))

    # intensity floor: inf phi > 0, cross-checked on a coarse probe grid
    floor = model.rate.floor
    xs = np.linspace(0.0, max(10.0, 5.0 * model.horizon), probe_points)
    probed = float(np.min(model.rate.value(xs)))
    ok3 = floor > 0.0 and probed > 0.0
    checks.append(AssumptionCheck(
        "intensity_floor", ok3, floor,
        f"inf phi = {floor:g} (probed min {probed:g})"))

    return ValidationReport(all(c.passed for c in checks), tuple(checks))


# ---------------------------------------------------------------------------
# Config round-trip
# ---------------------------------------------------------------------------

_KERNEL_FAMILIES = {"exponential", "piecewise_linear"}
_RATE_FAMILIES = {"constant", "affine_clipped", "sigmoidal"}


def kernel_from_config(cfg: dict, horizon: float) -> KernelSpec:
    fam = cfg.get("family")
    if fam == "exponential":
        return ExponentialKernel(rate=float(cfg["rate"]), scale=float(cfg["scale"]),
                                 horizon=horizon)
    if fam == "piecewise_linear":
        knots = tuple((float(t), float(v)) for t, v in cfg["knots"])
        return PiecewiseLinearKernel(knots=knots, horizon=horizon)
    raise ValueError(f"unknown kernel family {fam!r} (expected one of {sorted(_KERNEL_FAMILIES)})")


def rate_from_config(cfg: dict) -> RateSpec:
    fam = cfg.get("family")
    if fam == "constant":
        return ConstantRate(c=float(cfg["c"]))
    if fam == "affine_clipped":
        floor = cfg.get("floor")
        return AffineClippedRate(a=float(cfg["a"]), b=float(cfg["b"]),
                                 floor_value=None if floor is None else float(floor))
    if fam == "sigmoidal":
        return SigmoidalRate(lo=float(cfg["lo"]), hi=float(cfg["hi"]),
                             slope=float(cfg["slope"]), center=float(cfg["center"]))
    raise ValueError(f"unknown rate family {fam!r} (expected one of {sorted(_RATE_FAMILIES)})")


def model_from_config(cfg: dict) -> ModelSpec:
    horizon = float(cfg["T"])
    kernel_horizon = max(horizon, float(cfg["kernel"].get("horizon", horizon)))
    return ModelSpec(kernel=kernel_from_config(cfg["kernel"], kernel_horizon),
                     rate=rate_from_config(cfg["rate"]),
                     horizon=horizon)
