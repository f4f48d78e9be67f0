"""Serialization: event files, CSV tables, JSON manifests.

All floats are written with ``repr`` (shortest round-trip form), so a
repeated run with the same seed produces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .meanfield import MeanPath, MeasureFlow
from .simulate import EventPaths


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


# -- event paths -------------------------------------------------------------


def write_event_paths(path, paths: EventPaths):
    lines = [f"# events v1 N={paths.n} T={_fmt(paths.horizon)} seed={paths.seed}",
             "component,time"]
    merged = [(t, i) for i, ev in enumerate(paths.events) for t in ev]
    merged.sort()
    lines.extend(f"{i},{_fmt(t)}" for t, i in merged)
    Path(path).write_text("\n".join(lines) + "\n")


def read_event_paths(path) -> EventPaths:
    text = Path(path).read_text().strip().splitlines()
    header = text[0]
    if not header.startswith("# events v1 "):
        raise ValueError(f"{path}: not an event file")
    fields = dict(part.split("=", 1) for part in header[12:].split())
    n = int(fields["N"])
    horizon = float(fields["T"])
    seed = None if fields.get("seed") in (None, "None") else int(fields["seed"])
    events: List[List[float]] = [[] for _ in range(n)]
    for line in text[2:]:
        comp, t = line.split(",")
        events[int(comp)].append(float(t))
    return EventPaths(n=n, horizon=horizon,
                      events=[np.array(e) for e in events], seed=seed)


# -- CSV tables ---------------------------------------------------------------


def write_mean_csv(path, mean_path: MeanPath):
    lines = ["t,value"]
    lines.extend(f"{_fmt(t)},{_fmt(v)}"
                 for t, v in zip(mean_path.times, mean_path.values))
    Path(path).write_text("\n".join(lines) + "\n")


def read_mean_csv(path) -> MeanPath:
    rows = Path(path).read_text().strip().splitlines()[1:]
    data = np.array([[float(a) for a in r.split(",")] for r in rows])
    return MeanPath(data[:, 0], data[:, 1])


def write_flow_csv(path, flow: MeasureFlow):
    header = "t," + ",".join(f"x{j}" for j in range(flow.n_max + 1))
    lines = [header]
    for t, row in zip(flow.times, flow.pmf):
        lines.append(_fmt(t) + "," + ",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_flow_csv(path) -> MeasureFlow:
    rows = Path(path).read_text().strip().splitlines()
    data = np.array([[float(a) for a in r.split(",")] for r in rows[1:]])
    return MeasureFlow(data[:, 0], data[:, 1:])


def write_table_csv(path, header: Sequence[str], rows: Iterable[Sequence]):
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) if not isinstance(v, str) else v
                          for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


# -- manifests ----------------------------------------------------------------


def content_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_json(path, payload: dict):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_manifest(out_dir, command: str, config: dict, seed: int,
                   outputs: Sequence[str]) -> Path:
    manifest = {
        "command": command,
        "seed": seed,
        "config": config,
        "outputs": list(outputs),
        "content_hash": content_hash({"command": command, "seed": seed,
                                      "config": config}),
    }
    path = Path(out_dir) / "manifest.json"
    write_json(path, manifest)
    return path
