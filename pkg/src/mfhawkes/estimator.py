"""Monte Carlo estimation of rare-event probabilities and convergence studies.

Events are measurable sets of paths/flows of two kinds:

* ``MeanExceeds(threshold, at)``: the averaged count path reaches
  ``threshold`` by time ``at``;
* ``W1Ball(center, radius)``: the empirical flow stays within a
  Wasserstein-1 ball of a reference flow, uniformly over the grid.

``estimate_naive`` counts hits; ``estimate_importance`` simulates under a
tilt and reweights each hit by the likelihood ratio exp(logRN), which is
unbiased for the untilted probability.  ``decay_rate_fit`` regresses
-log p_hat on the system size N; the slope estimates the large-deviation
decay rate of the event.  ``lln_study`` tracks the uniform W1 distance
between the empirical flow and the limit law as N grows.

Replicates draw from counter-based streams keyed by (seed, stream index),
so every estimate is reproducible bit-for-bit and independent of worker
scheduling; aggregation uses compensated summation and is associative.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .grids import uniform_grid
from .meanfield import MeanPath, MeasureFlow, mean_field_law, solve_mean_limit
from .model import ModelSpec
from .simulate import SimConfig, empirical_measure, simulate, simulate_tilted
from .tilt import TiltField


class DegenerateEstimateError(RuntimeError):
    """Too few usable estimates to fit a decay rate."""


# ---------------------------------------------------------------------------
# Wasserstein-1 distances
# ---------------------------------------------------------------------------


def w1_discrete(nu: np.ndarray, mu: np.ndarray) -> float:
    """W1 between pmfs on {0..n_max}: the L1 distance between CDFs.

    On the line the optimal coupling is monotone, so the transport cost
    collapses to sum_x |F_nu(x) - F_mu(x)|.
    """
    nu = np.asarray(nu, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if nu.shape != mu.shape or nu.ndim != 1:
        raise ValueError("pmfs must be equal-length vectors")
    for name, p in (("first", nu), ("second", mu)):
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} pmf does not sum to 1 (off by {p.sum() - 1.0:.3g})")
    return float(np.abs(np.cumsum(nu - mu)[:-1]).sum())


def w1_flow_sup(a: MeasureFlow, b: MeasureFlow) -> float:
    """Uniform-in-time W1 between two flows on the same grid."""
    if a.n_max != b.n_max or len(a.times) != len(b.times) \
            or not np.allclose(a.times, b.times):
        raise ValueError("flows must share grid and n_max")
    gaps = np.abs(np.cumsum(a.pmf - b.pmf, axis=1)[:, :-1]).sum(axis=1)
    return float(gaps.max())


# ---------------------------------------------------------------------------
# Events and estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeanExceeds:
    threshold: float
    at: float

    kind = "mean_exceeds"

    def describe(self) -> str:
        return f"mean count at t={self.at:g} >= {self.threshold:g}"


@dataclass
class W1Ball:
    center: MeasureFlow
    radius: float

    kind = "w1_ball"

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")

    def describe(self) -> str:
        return f"sup-W1 distance to reference flow <= {self.radius:g}"


EventSpec = Union[MeanExceeds, W1Ball]


def event_hit(spec: EventSpec, paths) -> bool:
    if isinstance(spec, MeanExceeds):
        total = sum(int(np.searchsorted(e, spec.at, side="right"))
                    for e in paths.events)
        return total / paths.n >= spec.threshold
    flow = empirical_measure(paths, spec.center.times, spec.center.n_max)
    return w1_flow_sup(flow, spec.center) <= spec.radius


def _check_event(spec: EventSpec, model: ModelSpec):
    if isinstance(spec, MeanExceeds):
        if not (0.0 < spec.at <= model.horizon):
            raise ValueError("event time must lie in (0, horizon]")


@dataclass
class Estimate:
    p_hat: float
    log_p_hat: float
    std_err: float
    reps: int
    method: str
    hits: int
    ess: Optional[float] = None
    flags: tuple = ()

    def to_row(self) -> dict:
        return {"reps": self.reps, "method": self.method, "p_hat": self.p_hat,
                "std_err": self.std_err, "log_p_hat": self.log_p_hat}


def _naive_rep(spec, cfg, stream):
    return 1.0 if event_hit(spec, simulate(cfg, stream)) else 0.0


def _importance_rep(spec, cfg, tilt, stream):
    paths, logrn = simulate_tilted(cfg, tilt, stream)
    if event_hit(spec, paths):
        return math.exp(logrn)
    return 0.0


def _map_streams(worker, reps: int, stream_offset: int, threads: int) -> List[float]:
    streams = range(stream_offset, stream_offset + reps)
    if threads <= 1:
        return [worker(s) for s in streams]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        chunk = max(1, reps // (8 * threads))
        return list(pool.map(worker, streams, chunksize=chunk))


def estimate_naive(spec: EventSpec, cfg: SimConfig, reps: int,
                   stream_offset: int = 0, threads: int = 1) -> Estimate:
    """Hit fraction over independent replicates, with binomial std error."""
    if reps < 100:
        raise ValueError("need at least 100 replicates")
    _check_event(spec, cfg.model)
    values = _map_streams(partial(_naive_rep, spec, cfg), reps, stream_offset, threads)
    hits = int(math.fsum(values))
    p = hits / reps
    se = math.sqrt(p * (1.0 - p) / reps)
    flags = ("zero_hits",) if hits == 0 else ()
    logp = math.log(p) if p > 0 else -math.inf
    return Estimate(p, logp, se, reps, "naive", hits, None, flags)


def estimate_importance(spec: EventSpec, cfg: SimConfig, tilt: TiltField,
                        reps: int, stream_offset: int = 0,
                        threads: int = 1) -> Estimate:
    """Mean of hit * exp(logRN) over tilted replicates.

    The weight is the likelihood ratio of the untilted law against the
    tilted one, so the estimator is unbiased; the effective sample size of
    the hit weights is reported and flagged below 10.
    """
    if reps < 100:
        raise ValueError("need at least 100 replicates")
    _check_event(spec, cfg.model)
    if not tilt.finite:
        raise ValueError("tilt must be finite")
    values = _map_streams(partial(_importance_rep, spec, cfg, tilt),
                          reps, stream_offset, threads)
    p = math.fsum(values) / reps
    var = math.fsum((v - p) ** 2 for v in values) / max(reps - 1, 1)
    se = math.sqrt(var / reps)
    hit_weights = [v for v in values if v > 0.0]
    hits = len(hit_weights)
    ess = 0.0
    if hits:
        sw = math.fsum(hit_weights)
        sw2 = math.fsum(w * w for w in hit_weights)
        ess = sw * sw / sw2
    flags = []
    if hits == 0:
        flags.append("zero_hits")
    elif ess < 10.0:
        flags.append("low_ess")
    logp = math.log(p) if p > 0 else -math.inf
    return Estimate(p, logp, se, reps, "importance", hits, ess, tuple(flags))


def cramer_tilt(spec: MeanExceeds, model: ModelSpec,
                dt: float = None) -> TiltField:
    """Constant tilt log(threshold / m(at)): centres the tilted mean on the
    event for constant rates, a serviceable heuristic otherwise."""
    _check_event(spec, model)
    if dt is None:
        dt = model.horizon * 1e-3
    limit = solve_mean_limit(model, dt)
    m_at = limit.at(spec.at)
    if m_at <= 0 or spec.threshold <= 0:
        raise ValueError("tilt heuristic needs positive threshold and limit mean")
    kappa = math.log(spec.threshold / m_at)
    return TiltField.constant(kappa, model.horizon, model.horizon, 0)


# ---------------------------------------------------------------------------
# Decay-rate fits and LLN studies
# ---------------------------------------------------------------------------


@dataclass
class DecayFit:
    slope: float
    intercept: float
    residuals: np.ndarray
    r_squared: float
    estimates: List[Tuple[int, Estimate]]
    meta: dict = field(default_factory=dict, compare=False)


def decay_rate_fit(spec: EventSpec, model: ModelSpec, ns: Sequence[int],
                   reps: int, tilt: Optional[TiltField], seed: int,
                   gamma: float = 1.1, threads: int = 1) -> DecayFit:
    """Least-squares fit of -log p_hat against N; the slope estimates the
    event's decay rate.

    Zero-hit and effectively degenerate estimates (fewer than 10 hits, or
    importance ESS below 10) are excluded from the fit; if fewer than
    three sizes survive the fit fails loudly rather than extrapolating.
    """
    ns = list(ns)
    if len(ns) < 3:
        raise ValueError("need at least 3 system sizes")
    estimates = []
    for idx, n in enumerate(ns):
        cfg = SimConfig(model, n=n, seed=seed, gamma=gamma)
        offset = idx * reps
        if tilt is None:
            est = estimate_naive(spec, cfg, reps, offset, threads)
        else:
            est = estimate_importance(spec, cfg, tilt, reps, offset, threads)
        estimates.append((n, est))

    def usable(est: Estimate) -> bool:
        if est.p_hat <= 0.0 or est.hits < 10:
            return False
        if est.ess is not None and est.ess < 10.0:
            return False
        return True

    good = [(n, est) for n, est in estimates if usable(est)]
    if len(good) < 3:
        bad = [n for n, est in estimates if not usable(est)]
        raise DegenerateEstimateError(
            f"degenerate estimates at N={bad}; not enough points for a fit")
    xs = np.array([n for n, _ in good], dtype=float)
    ys = np.array([-est.log_p_hat for _, est in good])
    slope, intercept = np.polyfit(xs, ys, 1)
    predicted = slope * xs + intercept
    residuals = ys - predicted
    ss_res = float((residuals ** 2).sum())
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(slope), float(intercept), residuals, r2, estimates,
                    meta={"fit_ns": xs.tolist()})


def lln_study(model: ModelSpec, ns: Sequence[int], reps: int, seed: int,
              grid_points: int = 30, n_max: int = 50, dt: float = None,
              gamma: float = 1.1, threads: int = 1) -> List[Tuple[int, float]]:
    """Mean uniform-W1 gap between empirical flows and the limit law, per N.

    The limit path is solved once on a fine grid and restricted to the
    coarser study grid shared by all empirical snapshots.
    """
    ns = list(ns)
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError("system sizes must be increasing")
    if dt is None:
        dt = model.horizon * 1e-3
    grid = uniform_grid(model.horizon, model.horizon / grid_points)
    limit = solve_mean_limit(model, dt)
    coarse = MeanPath(grid, np.interp(grid, limit.times, limit.values))
    law = mean_field_law(coarse, n_max)

    rows = []
    for idx, n in enumerate(ns):
        worker = partial(_w1_gap_rep, model, n, seed, grid, n_max, gamma, law)
        values = _map_streams(worker, reps, idx * reps, threads)
        rows.append((n, float(math.fsum(values) / reps)))
    return rows


def _w1_gap_rep(model, n, seed, grid, n_max, gamma, law, stream):
    cfg = SimConfig(model, n=n, seed=seed, gamma=gamma)
    flow = empirical_measure(simulate(cfg, stream), grid, n_max)
    return w1_flow_sup(flow, law)
