"""Exact simulation of the interacting Hawkes system by thinning.

Every component of the N-dimensional system jumps at rate

    lambda_i(t) = exp(v(t, x_i(t-))) * phi(S(t-)),

where x_i is the component's own jump count, v an optional tilt field and
S(t) = (1/N) * sum over all past events of h(t - tau) the shared
excitation sum.  Simulation draws candidate points from a piecewise
majorant rate and accepts with probability (true intensity / majorant):

* on a lookahead window of length delta the untilted per-component
  intensity is bounded by phi(S_now) + lipschitz(phi) * (K/N) * sup|h'| *
  delta, valid because each of the K past events moves S at rate at most
  sup|h'| / N;
* tilted runs multiply by exp(max_x v) over the window's tilt cells, and
  everything by the safety factor gamma;
* windows never cross a change of the tilt's value column, so the tilt
  factor is constant within a window.

Acceptance of every candidate is checked against the majorant; a
violation raises instead of silently biasing the law.

The likelihood ratio (untilted over tilted law, evaluated on the realized
path) is accumulated on the fly: each jump of component i at time s adds
-v(s, x_i(s-)), and between jumps the compensator gap

    sum_i (e^{v(s, x_i)} - 1) * phi(S(s))

is integrated with 5-point Gauss-Legendre panels (the excitation sum is
smooth between events; constant rates integrate exactly).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .grids import excitation_grid, grid_step
from .meanfield import MeanPath, MeasureFlow
from .model import ModelSpec, ExponentialKernel
from .tilt import TiltField


class MajorantError(RuntimeError):
    """A candidate's true intensity exceeded the thinning majorant."""


class ExplosionSuspectedError(RuntimeError):
    """The candidate-point guard tripped; the configuration looks unstable."""


# Gauss-Legendre nodes/weights on [0, 1], 5 points
_GL_NODES = (np.polynomial.legendre.leggauss(5)[0] + 1.0) / 2.0
_GL_WEIGHTS = np.polynomial.legendre.leggauss(5)[1] / 2.0


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for (seed, stream); streams are independent."""
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=seed, spawn_key=(stream,))))


@dataclass(frozen=True)
class SimConfig:
    model: ModelSpec
    n: int
    seed: int
    gamma: float = 1.1              # majorant safety factor, >= 1
    max_candidates: int = 100_000_000

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one component")
        if self.gamma < 1.0:
            raise ValueError("majorant safety factor must be >= 1")


@dataclass
class EventPaths:
    n: int
    horizon: float
    events: List[np.ndarray]        # per-component strictly increasing times
    seed: Optional[int] = None

    def __post_init__(self):
        self.events = [np.asarray(e, dtype=float) for e in self.events]
        if len(self.events) != self.n:
            raise ValueError("one event list per component required")

    def counts_at(self, t: float) -> np.ndarray:
        return np.array([np.searchsorted(e, t, side="right") for e in self.events])

    @property
    def total_events(self) -> int:
        return sum(len(e) for e in self.events)

    def validate(self):
        """Structural invariants: strict increase, range, no shared times."""
        for e in self.events:
            if len(e) and (e[0] <= 0.0 or e[-1] > self.horizon):
                raise ValueError("event time outside (0, horizon]")
            if np.any(np.diff(e) <= 0.0):
                raise ValueError("component times not strictly increasing")
        merged = np.concatenate(self.events) if self.events else np.array([])
        merged.sort()
        if len(merged) > 1 and np.any(np.diff(merged) == 0.0):
            raise ValueError("two components share a jump time")


# ---------------------------------------------------------------------------
# Excitation-sum maintenance
# ---------------------------------------------------------------------------


class _ExpExcitation:
    """Markovian update for exponential kernels: O(1) per step."""

    def __init__(self, kernel: ExponentialKernel, n: int):
        self.rate = kernel.rate
        self.jump = kernel.at_zero / n
        self.s = 0.0
        self.t_ref = 0.0
        self.active = 0

    def value_at(self, t: float) -> float:
        return self.s * math.exp(-self.rate * (t - self.t_ref))

    def advance_to(self, t: float):
        self.s = self.value_at(t)
        self.t_ref = t

    def add_event(self):
        # caller must have advanced to the event time; affects s > t only
        self.s += self.jump
        self.active += 1


class _BufferedExcitation:
    """Sliding event buffer for kernels with bounded support."""

    def __init__(self, kernel, n: int):
        self.kernel = kernel
        self.inv_n = 1.0 / n
        self.support = kernel.support_end
        self.times: List[float] = []
        self.start = 0

    @property
    def active(self) -> int:
        return len(self.times) - self.start

    def value_at(self, t: float) -> float:
        while self.start < len(self.times) and t - self.times[self.start] > self.support:
            self.start += 1
        live = self.times[self.start:]
        if not live:
            return 0.0
        lags = t - np.asarray(live)
        return float(np.sum(self.kernel.value(np.minimum(lags, self.kernel.horizon)))) * self.inv_n

    def advance_to(self, t: float):
        self.value_at(t)  # prune
        self.t_ref = t

    def add_event(self):
        self.times.append(self.t_ref)


def _make_excitation(model: ModelSpec, n: int):
    if isinstance(model.kernel, ExponentialKernel):
        return _ExpExcitation(model.kernel, n)
    exc = _BufferedExcitation(model.kernel, n)
    exc.t_ref = 0.0
    return exc


# ---------------------------------------------------------------------------
# Core thinning loop
# ---------------------------------------------------------------------------


def _phi_integral(rate, exc, u0: float, u1: float) -> float:
    """integral of phi(S(s)) over [u0, u1]; S is smooth there."""
    width = u1 - u0
    if width <= 0.0:
        return 0.0
    if rate.family == "constant":
        return rate.c * width
    phi = rate.value_scalar
    total = 0.0
    for node, weight in zip(_GL_NODES, _GL_WEIGHTS):
        total += weight * phi(exc.value_at(u0 + node * width))
    return total * width


class _TiltState:
    """Per-cell caches for the tilt column and the live weight sum."""

    def __init__(self, tilt: TiltField, n: int):
        self.tilt = tilt
        self.n = n
        self.times = tilt.times
        self.n_cells = tilt.n_cells
        self.cols = tilt.values
        self.tail = tilt.tail
        self.cell_max = np.maximum(tilt.cell_max(), tilt.tail)
        self.run_end = tilt.column_run_end()
        self.cell = -1
        self.vcol = None
        self.evcol = None
        self.evtail = math.exp(tilt.tail)
        self.weight_sum = float(n)

    def cell_of(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(k, 0), self.n_cells - 1)

    def run_cap(self, cell: int) -> float:
        """End of the constant-column run containing the cell, as an exact
        grid point (index arithmetic on dt drifts below the horizon)."""
        return float(self.times[self.run_end[cell]])

    def ev(self, x: int) -> float:
        return self.evcol[x] if x < len(self.evcol) else self.evtail

    def v(self, x: int) -> float:
        return self.vcol[x] if x < len(self.vcol) else self.tail

    def enter_cell(self, cell: int, buckets: dict):
        if cell == self.cell:
            return
        self.cell = cell
        self.vcol = self.cols[cell]
        self.evcol = np.exp(self.vcol)
        self.weight_sum = sum(len(members) * self.ev(x) for x, members in buckets.items())


def _simulate_system(model: ModelSpec, n: int, rng: np.random.Generator,
                     tilt: Optional[TiltField], want_rn: bool,
                     gamma: float, max_candidates: int):
    horizon = model.horizon
    rate = model.rate
    phi = rate.value_scalar
    alpha = rate.lipschitz
    hp_max = model.kernel.deriv_sup
    exc = _make_excitation(model, n)

    counts = np.zeros(n, dtype=np.int64)
    events: List[List[float]] = [[] for _ in range(n)]

    ts = None
    buckets = None
    positions = None
    if tilt is not None:
        if not tilt.finite:
            raise ValueError("tilt must be finite on its grid")
        if not np.isclose(tilt.horizon, horizon, rtol=1e-9):
            raise ValueError("tilt horizon does not match the model horizon")
        ts = _TiltState(tilt, n)
        buckets = {0: list(range(n))}
        positions = np.arange(n, dtype=np.int64)

    logrn = 0.0
    t = 0.0
    seg_start = 0.0
    work = 0

    def close_segment(upto: float):
        nonlocal logrn, seg_start
        if want_rn and upto > seg_start:
            logrn += (ts.weight_sum - n) * _phi_integral(rate, exc, seg_start, upto)
        seg_start = upto

    while t < horizon:
        if ts is not None:
            cell = ts.cell_of(t)
            ts.enter_cell(cell, buckets)
            window_cap = min(horizon, ts.run_cap(cell))
            tilt_factor = math.exp(ts.cell_max[cell])
        else:
            window_cap = horizon
            tilt_factor = 1.0

        exc.advance_to(t)
        base = phi(exc.value_at(t))
        slope = alpha * (exc.active / n) * hp_max
        if slope > 0.0:
            window_end = min(window_cap, t + max(base / slope, 1e-12 * horizon))
        else:
            window_end = window_cap
        bound = gamma * n * tilt_factor * (base + slope * (window_end - t))

        gap = rng.exponential() / bound
        candidate = t + gap
        if candidate >= window_end:
            if ts is not None:
                close_segment(window_end)
            t = window_end
            work += 1
            if work > max_candidates:
                raise ExplosionSuspectedError(
                    f"candidate guard exceeded ({max_candidates}); "
                    "the configuration may be explosive")
            continue

        work += 1
        if work > max_candidates:
            raise ExplosionSuspectedError(
                f"candidate guard exceeded ({max_candidates}); "
                "the configuration may be explosive")

        lam_phi = phi(exc.value_at(candidate))
        total = lam_phi * (ts.weight_sum if ts is not None else float(n))
        if total > bound * (1.0 + 1e-9):
            raise MajorantError(
                f"intensity {total:.6g} exceeded majorant {bound:.6g} at "
                f"t={candidate:.6g}")

        if rng.random() * bound <= total:
            if ts is not None:
                pick = rng.random() * ts.weight_sum
                level = None
                acc = 0.0
                for x in sorted(buckets):
                    acc += len(buckets[x]) * ts.ev(x)
                    if pick <= acc:
                        level = x
                        break
                if level is None:                       # roundoff tail
                    level = max(buckets)
                members = buckets[level]
                slot = int(rng.integers(len(members)))
                comp = members[slot]

                close_segment(candidate)
                if want_rn:
                    logrn -= ts.v(level)

                last = members.pop()
                if slot < len(members):
                    members[slot] = last
                    positions[last] = slot
                if not members:
                    del buckets[level]
                new_members = buckets.setdefault(level + 1, [])
                positions[comp] = len(new_members)
                new_members.append(comp)
                ts.weight_sum += ts.ev(level + 1) - ts.ev(level)
            else:
                comp = int(rng.integers(n))

            counts[comp] += 1
            events[comp].append(candidate)
            exc.advance_to(candidate)
            exc.add_event()
        t = candidate

    if ts is not None:
        close_segment(horizon)

    paths = EventPaths(n=n, horizon=horizon,
                       events=[np.array(e) for e in events])
    return paths, logrn


def simulate(cfg: SimConfig, stream: int = 0) -> EventPaths:
    """One realization of the untilted system; bit-reproducible from
    (cfg, seed, stream)."""
    cfg.model.require_valid()
    rng = rng_stream(cfg.seed, stream)
    paths, _ = _simulate_system(cfg.model, cfg.n, rng, None, False,
                                cfg.gamma, cfg.max_candidates)
    paths.seed = cfg.seed
    return paths


def simulate_tilted(cfg: SimConfig, tilt: TiltField, stream: int = 0):
    """One realization of the tilted system plus the log likelihood ratio
    of the untilted law against the tilted one on that path."""
    cfg.model.require_valid()
    rng = rng_stream(cfg.seed, stream)
    paths, logrn = _simulate_system(cfg.model, cfg.n, rng, tilt, True,
                                    cfg.gamma, cfg.max_candidates)
    paths.seed = cfg.seed
    return paths, logrn


# ---------------------------------------------------------------------------
# Limit-particle simulation
# ---------------------------------------------------------------------------


class LimitParticleSampler:
    """Replicate-friendly sampler for the tilted limit particle.

    The driving intensity phi(integral h(t-u) d mubar_u) is deterministic
    given the mean path, so it is tabulated once on the path's grid
    (linear interpolation in between); each sample then only thins against
    the state factor exp(v(t, x)).  With a zero tilt samples are an
    inhomogeneous Poisson process whose compensator is the mean path.
    """

    def __init__(self, model: ModelSpec, tilt: TiltField, lawbar_path: MeanPath,
                 gamma: float = 1.1, max_candidates: int = 10_000_000):
        model.require_valid()
        if not tilt.finite:
            raise ValueError("tilt must be finite on its grid")
        if not np.isclose(lawbar_path.horizon, model.horizon, rtol=1e-9):
            raise ValueError("mean-path horizon does not match the model horizon")
        if not lawbar_path.is_nondecreasing(tol=1e-9):
            raise ValueError("mean path must be nondecreasing")
        self.horizon = model.horizon
        self.gamma = gamma
        self.max_candidates = max_candidates
        self.times = lawbar_path.times
        self.lam_grid = model.rate.value(excitation_grid(
            model.kernel, self.times, lawbar_path.values))
        # running max over the remaining horizon dominates any window
        self.lam_tail_max = np.maximum.accumulate(self.lam_grid[::-1])[::-1]
        self.tilt = tilt
        self.exp_cell_max = np.exp(np.maximum(tilt.cell_max(), tilt.tail))
        self.run_end = tilt.column_run_end()

    def sample(self, seed: int, stream: int = 0) -> EventPaths:
        rng = rng_stream(seed, stream)
        tilt = self.tilt
        tilt_times = tilt.times
        cols = tilt.values
        tail = tilt.tail
        n_max = tilt.n_max
        horizon = self.horizon
        times = self.times
        lam_grid = self.lam_grid

        x = 0
        events = []
        t = 0.0
        work = 0
        while t < horizon:
            cell = tilt.cell_of(t)
            window_end = min(horizon, float(tilt_times[self.run_end[cell]]))
            node = max(0, min(int(np.searchsorted(times, t, side="right")) - 1,
                              len(times) - 1))
            bound = self.gamma * self.exp_cell_max[cell] * self.lam_tail_max[node]
            candidate = t + rng.exponential() / bound
            work += 1
            if work > self.max_candidates:
                raise ExplosionSuspectedError("candidate guard exceeded")
            if candidate >= window_end:
                t = window_end
                continue
            lam_c = float(np.interp(candidate, times, lam_grid))
            v = cols[cell][x] if x <= n_max else tail
            total = math.exp(v) * lam_c
            if total > bound * (1.0 + 1e-9):
                raise MajorantError(
                    f"intensity {total:.6g} exceeded majorant {bound:.6g} at "
                    f"t={candidate:.6g}")
            if rng.random() * bound <= total:
                events.append(candidate)
                x += 1
            t = candidate

        return EventPaths(n=1, horizon=horizon, events=[np.array(events)],
                          seed=seed)


def simulate_mckean_vlasov_tilted(model: ModelSpec, tilt: TiltField,
                                  lawbar_path: MeanPath, seed: int,
                                  stream: int = 0, gamma: float = 1.1,
                                  max_candidates: int = 10_000_000) -> EventPaths:
    """One path of the tilted limit particle (see LimitParticleSampler)."""
    sampler = LimitParticleSampler(model, tilt, lawbar_path, gamma, max_candidates)
    return sampler.sample(seed, stream)


# ---------------------------------------------------------------------------
# Path statistics
# ---------------------------------------------------------------------------


def mean_process(paths: EventPaths, grid: np.ndarray) -> np.ndarray:
    """Averaged count path on the grid: (total events <= t) / N."""
    merged = (np.sort(np.concatenate([e for e in paths.events]))
              if paths.n else np.array([]))
    grid = np.asarray(grid, dtype=float)
    return np.searchsorted(merged, grid, side="right") / paths.n


def empirical_measure(paths: EventPaths, grid: np.ndarray, n_max: int) -> MeasureFlow:
    """Distribution of per-component counts at each grid time.

    Raises if any component's count overflows n_max (the message carries
    the smallest sufficient n_max).
    """
    grid = np.asarray(grid, dtype=float)
    counts = np.empty((paths.n, len(grid)), dtype=np.int64)
    for i, ev in enumerate(paths.events):
        counts[i] = np.searchsorted(ev, grid, side="right")
    top = int(counts.max()) if paths.n else 0
    if top > n_max:
        raise ValueError(f"component count {top} exceeds n_max={n_max}; "
                         f"use n_max >= {top}")
    pmf = np.empty((len(grid), n_max + 1))
    for k in range(len(grid)):
        pmf[k] = np.bincount(counts[:, k], minlength=n_max + 1) / paths.n
    return MeasureFlow(grid, pmf, meta={"n": paths.n})


# ---------------------------------------------------------------------------
# Exponential martingale weight
# ---------------------------------------------------------------------------


def exp_martingale_weight(paths: EventPaths, model: ModelSpec,
                          testfn: TiltField) -> float:
    """Exponential martingale of a gridded test field, on one path.

    With u(s, x) = psi(s, x+1) - psi(s, x) (the count increment of psi at
    a jump from x; the field's tail value extends it past n_max), the
    weight is

        exp( sum over jumps of u(tau, x_pre)
             - sum_i integral_0^T (e^{u(s, x_i(s))} - 1) phi(S(s)) ds ).

    Fields constant in t and x give weight exactly 1; any bounded field
    averages to 1 over independent untilted realizations.
    """
    if not np.isfinite(testfn.values).all() or not math.isfinite(testfn.tail):
        raise ValueError("test field must be finite")
    horizon = paths.horizon
    if not np.isclose(testfn.horizon, horizon, rtol=1e-9):
        raise ValueError("test field horizon does not match the path horizon")

    # forward differences per cell, one column per pre-jump level 0..n_max+1
    vals = testfn.values
    n_levels = vals.shape[1]
    up = np.empty((testfn.n_cells, n_levels + 1))
    up[:, : n_levels - 1] = vals[:, 1:] - vals[:, :-1]
    up[:, n_levels - 1] = testfn.tail - vals[:, -1]
    up[:, n_levels] = 0.0                      # tail to tail
    exp_up_m1 = np.exp(up) - 1.0

    merged_times = np.concatenate(paths.events)
    merged_comp = np.concatenate([np.full(len(e), i, dtype=np.int64)
                                  for i, e in enumerate(paths.events)])
    order = np.argsort(merged_times, kind="stable")
    merged_times = merged_times[order]
    merged_comp = merged_comp[order]

    exc = _make_excitation(model, paths.n)
    exc.advance_to(0.0)
    counts = np.zeros(paths.n, dtype=np.int64)
    top = n_levels  # index cap into the increment columns
    hist = np.zeros(top + 1, dtype=np.int64)
    hist[0] = paths.n

    cell_edges = testfn.times[1:-1]
    breaks = np.concatenate([merged_times, cell_edges, [horizon]])
    kinds = np.concatenate([np.zeros(len(merged_times), dtype=np.int64),
                            np.ones(len(cell_edges), dtype=np.int64),
                            [2]])
    order = np.argsort(breaks, kind="stable")
    breaks = breaks[order]
    kinds = kinds[order]

    jump_sum = 0.0
    comp_int = 0.0
    cell = 0
    weight_sum = float(np.dot(hist, exp_up_m1[0]))
    seg_start = 0.0
    ev_idx = 0
    for b, kind in zip(breaks, kinds):
        if b > seg_start:
            comp_int += weight_sum * _phi_integral(model.rate, exc, seg_start, b)
            seg_start = b
        if kind == 0:
            comp = merged_comp[ev_idx]
            ev_idx += 1
            x = int(counts[comp])
            xi = min(x, top)
            jump_sum += up[cell, xi]
            hist[xi] -= 1
            hist[min(x + 1, top)] += 1
            counts[comp] += 1
            weight_sum = float(np.dot(hist, exp_up_m1[cell]))
            exc.advance_to(b)
            exc.add_event()
        elif kind == 1:
            cell += 1
            weight_sum = float(np.dot(hist, exp_up_m1[cell]))
    return math.exp(jump_sum - comp_int)
