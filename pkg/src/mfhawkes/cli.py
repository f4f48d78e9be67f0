"""Batch command-line front end.

One binary, one declarative TOML config, one subcommand per pipeline:

    mfhawkes simulate      --config run.toml --out DIR [--seed S] [--threads K]
    mfhawkes mean-limit    ...
    mfhawkes perturbed-law ...
    mfhawkes rate          ...
    mfhawkes estimate      ...
    mfhawkes decay-fit     ...
    mfhawkes lln           ...

Outputs land only in --out: data CSVs plus a manifest.json echoing the
full config and seed (a run is reproducible from its manifest alone).
stdout carries a one-line summary and the manifest path.  Exit codes:
0 success, 2 config error, 3 model-assumption violation, 4 numeric
failure, 5 I/O error.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import io as mfio
from .config import ConfigError, RunConfig, load_run_config
from .estimator import (DegenerateEstimateError, MeanExceeds, W1Ball,
                        cramer_tilt, decay_rate_fit, estimate_importance,
                        estimate_naive, lln_study)
from .grids import NumericsError, uniform_grid
from .meanfield import MeanPath, mean_field_law, solve_mean_limit, solve_perturbed_law
from .model import AssumptionError
from .rate import AbsContinuityError, rate_I
from .simulate import SimConfig, empirical_measure, mean_process, simulate
from .tilt import TiltField

EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_NUMERIC = 4
EXIT_IO = 5


def _constant_tilt(value: float, horizon: float) -> TiltField:
    return TiltField.constant(value, horizon, horizon, 0)


def _tilt_for(rc: RunConfig, command: str, event=None):
    sec = rc.sections.get("tilt")
    if sec is None or sec["kind"] == "none":
        return None
    if sec["kind"] == "constant":
        return _constant_tilt(sec["value"], rc.model.horizon)
    if event is None or not isinstance(event, MeanExceeds):
        raise ConfigError(
            f"[tilt].kind = 'cramer' needs a mean_exceeds event (command '{command}')")
    return cramer_tilt(event, rc.model, rc.meanfield_dt())


def _event_for(rc: RunConfig, command: str):
    est = rc.section("estimate", command)
    if est["event"] == "mean_exceeds":
        return MeanExceeds(est["threshold"], est["at"])
    grid_points = rc.sections.get("lln", {}).get("grid_points", 30)
    n_max = rc.sections.get("meanfield", {}).get("n_max", 50)
    grid = uniform_grid(rc.model.horizon, rc.model.horizon / grid_points)
    limit = solve_mean_limit(rc.model, rc.meanfield_dt())
    center = mean_field_law(MeanPath(grid, np.interp(grid, limit.times, limit.values)),
                            n_max)
    return W1Ball(center, est["radius"])


def cmd_simulate(rc: RunConfig, out: Path, threads: int):
    sim = rc.section("sim", "simulate")
    rc.model.require_valid()
    dt = sim.get("dt") or rc.model.horizon * 1e-3
    cfg = SimConfig(rc.model, n=sim["n"], seed=rc.seed, gamma=sim["gamma"],
                    max_candidates=sim["max_candidates"])
    paths = simulate(cfg)
    grid = uniform_grid(rc.model.horizon, dt)
    flow = empirical_measure(paths, grid, sim["n_max"])
    mean = MeanPath(grid, mean_process(paths, grid))

    mfio.write_event_paths(out / "events.txt", paths)
    mfio.write_flow_csv(out / "flow.csv", flow)
    mfio.write_mean_csv(out / "mean.csv", mean)
    outputs = ["events.txt", "flow.csv", "mean.csv"]
    summary = f"simulate: N={paths.n} events={paths.total_events} mean_T={mean.values[-1]:.6g}"
    return outputs, summary


def cmd_mean_limit(rc: RunConfig, out: Path, threads: int):
    mf = rc.section("meanfield", "mean-limit")
    limit = solve_mean_limit(rc.model, rc.meanfield_dt())
    law = mean_field_law(limit, mf["n_max"])
    mfio.write_mean_csv(out / "mean_limit.csv", limit)
    mfio.write_flow_csv(out / "law.csv", law)
    mfio.write_json(out / "solver.json", {
        "iterations": limit.meta["iterations"],
        "final_change": limit.meta["sup_changes"][-1],
        "terminal_deficit": law.meta["terminal_deficit"],
    })
    summary = f"mean-limit: m(T)={limit.values[-1]:.6g} iters={limit.meta['iterations']}"
    return ["mean_limit.csv", "law.csv", "solver.json"], summary


def cmd_perturbed_law(rc: RunConfig, out: Path, threads: int):
    mf = rc.section("meanfield", "perturbed-law")
    tilt = _tilt_for(rc, "perturbed-law")
    if tilt is None:
        tilt = TiltField.zeros(rc.model.horizon, rc.model.horizon, 0)
    flow = solve_perturbed_law(rc.model, tilt, rc.meanfield_dt(), mf["n_max"],
                               clip=mf["clip"])
    mfio.write_flow_csv(out / "perturbed_law.csv", flow)
    mfio.write_json(out / "solver.json", {
        "terminal_deficit": flow.meta["terminal_deficit"],
        "leak": flow.meta["leak"],
        "mean_T": float(flow.means()[-1]),
    })
    summary = f"perturbed-law: mean_T={flow.means()[-1]:.6g} deficit={flow.meta['terminal_deficit']:.3g}"
    return ["perturbed_law.csv", "solver.json"], summary


def cmd_rate(rc: RunConfig, out: Path, threads: int):
    mf = rc.section("meanfield", "rate")
    src = rc.section("rate_eval", "rate")
    if src["source"] == "mean-limit":
        flow = mean_field_law(solve_mean_limit(rc.model, rc.meanfield_dt()),
                              mf["n_max"])
    elif src["source"] == "perturbed":
        tilt = _tilt_for(rc, "rate")
        if tilt is None:
            raise ConfigError("[rate_eval].source = 'perturbed' needs a [tilt] section")
        flow = solve_perturbed_law(rc.model, tilt, rc.meanfield_dt(), mf["n_max"],
                                   clip=mf["clip"])
    else:
        flow = mfio.read_flow_csv(src["flow_csv"])
    report = rate_I(flow, rc.model)
    mfio.write_json(out / "rate_report.json", report.to_dict())
    panel_flow = type(flow)(flow.times[1:], report.integrand)
    mfio.write_flow_csv(out / "integrand.csv", panel_flow)
    value = report.value if math.isfinite(report.value) else float("inf")
    summary = f"rate: I={value:.6g} ac_violation={report.ac_violation}"
    return ["rate_report.json", "integrand.csv"], summary


def cmd_estimate(rc: RunConfig, out: Path, threads: int):
    est = rc.section("estimate", "estimate")
    event = _event_for(rc, "estimate")
    cfg = SimConfig(rc.model, n=est["n"], seed=rc.seed, gamma=est["gamma"])
    if est["method"] == "naive":
        result = estimate_naive(event, cfg, est["reps"], threads=threads)
    else:
        tilt = _tilt_for(rc, "estimate", event)
        if tilt is None:
            raise ConfigError("[estimate].method = 'importance' needs a [tilt] section")
        result = estimate_importance(event, cfg, tilt, est["reps"], threads=threads)
    mfio.write_table_csv(out / "estimates.csv",
                         ["N", "reps", "method", "p_hat", "std_err", "log_p_hat"],
                         [[est["n"], result.reps, result.method, result.p_hat,
                           result.std_err, result.log_p_hat]])
    summary = (f"estimate: p_hat={result.p_hat:.6g} +- {result.std_err:.3g} "
               f"({result.method}, hits={result.hits})")
    return ["estimates.csv"], summary


def cmd_decay_fit(rc: RunConfig, out: Path, threads: int):
    est = rc.section("estimate", "decay-fit")
    decay = rc.section("decay_fit", "decay-fit")
    event = _event_for(rc, "decay-fit")
    tilt = None
    if est["method"] == "importance":
        tilt = _tilt_for(rc, "decay-fit", event)
        if tilt is None:
            raise ConfigError("[estimate].method = 'importance' needs a [tilt] section")
    fit = decay_rate_fit(event, rc.model, decay["ns"], est["reps"], tilt,
                         seed=rc.seed, gamma=est["gamma"], threads=threads)
    mfio.write_table_csv(out / "estimates.csv",
                         ["N", "reps", "method", "p_hat", "std_err", "log_p_hat"],
                         [[n, e.reps, e.method, e.p_hat, e.std_err, e.log_p_hat]
                          for n, e in fit.estimates])
    mfio.write_json(out / "decay_fit.json", {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
        "residuals": fit.residuals.tolist(),
        "fit_ns": fit.meta["fit_ns"],
    })
    summary = f"decay-fit: slope={fit.slope:.6g} r2={fit.r_squared:.4f}"
    return ["estimates.csv", "decay_fit.json"], summary


def cmd_lln(rc: RunConfig, out: Path, threads: int):
    lln = rc.section("lln", "lln")
    n_max = rc.sections.get("meanfield", {}).get("n_max", 50)
    rows = lln_study(rc.model, lln["ns"], lln["reps"], seed=rc.seed,
                     grid_points=lln["grid_points"], n_max=n_max,
                     dt=rc.meanfield_dt(), threads=threads)
    mfio.write_table_csv(out / "lln.csv", ["N", "mean_sup_w1"], rows)
    summary = "lln: " + " ".join(f"N={n}:{v:.4g}" for n, v in rows)
    return ["lln.csv"], summary


_COMMANDS = {
    "simulate": cmd_simulate,
    "mean-limit": cmd_mean_limit,
    "perturbed-law": cmd_perturbed_law,
    "rate": cmd_rate,
    "estimate": cmd_estimate,
    "decay-fit": cmd_decay_fit,
    "lln": cmd_lln,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfhawkes",
        description="Mean-field Hawkes simulation and rare-event analysis")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="TOML run config")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker processes for replicate loops")
    args = parser.parse_args(argv)

    try:
        rc = load_run_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed: expected a nonnegative integer")
            rc.seed = args.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        outputs, summary = _COMMANDS[args.command](rc, out, args.threads)
        manifest = mfio.write_manifest(out, args.command, rc.raw, rc.seed, outputs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionError as exc:
        print(f"assumption violation: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (NumericsError, AbsContinuityError, DegenerateEstimateError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO

    print(summary)
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
