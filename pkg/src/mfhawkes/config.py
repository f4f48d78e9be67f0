"""Declarative run configuration (TOML).

A single config file can drive every subcommand; each command reads the
sections it needs.  Parsing is total: every section present is validated
against its schema, unknown keys or sections fail with the offending
dotted path, and type errors name the field.  See docs/run_config.toml
for a complete annotated example.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import ModelSpec, model_from_config


class ConfigError(ValueError):
    """Configuration file rejected; the message carries the field path."""


_INT = (int,)
_NUM = (int, float)
_STR = (str,)
_LIST = (list,)

# schema: section -> {key: (types, required, default)}
_MODEL_KERNEL = {
    "family": (_STR, True, None),
    "rate": (_NUM, False, None),
    "scale": (_NUM, False, None),
    "knots": (_LIST, False, None),
    "horizon": (_NUM, False, None),
}
_MODEL_RATE = {
    "family": (_STR, True, None),
    "c": (_NUM, False, None),
    "a": (_NUM, False, None),
    "b": (_NUM, False, None),
    "floor": (_NUM, False, None),
    "lo": (_NUM, False, None),
    "hi": (_NUM, False, None),
    "slope": (_NUM, False, None),
    "center": (_NUM, False, None),
}
_SCHEMAS = {
    "sim": {
        "n": (_INT, True, None),
        "dt": (_NUM, False, None),          # defaults to T/1000
        "n_max": (_INT, False, 50),
        "gamma": (_NUM, False, 1.1),
        "max_candidates": (_INT, False, 100_000_000),
    },
    "meanfield": {
        "dt": (_NUM, False, None),
        "n_max": (_INT, False, 50),
        "clip": (_NUM, False, 30.0),
    },
    "tilt": {
        "kind": (_STR, True, None),          # none | constant | cramer
        "value": (_NUM, False, None),
    },
    "rate_eval": {
        "source": (_STR, True, None),        # mean-limit | perturbed | csv
        "flow_csv": (_STR, False, None),
    },
    "estimate": {
        "event": (_STR, True, None),         # mean_exceeds | w1_ball
        "threshold": (_NUM, False, None),
        "at": (_NUM, False, None),
        "radius": (_NUM, False, None),
        "method": (_STR, True, None),        # naive | importance
        "reps": (_INT, True, None),
        "n": (_INT, True, None),
        "gamma": (_NUM, False, 1.1),
    },
    "decay_fit": {
        "ns": (_LIST, True, None),
    },
    "lln": {
        "ns": (_LIST, True, None),
        "reps": (_INT, True, None),
        "grid_points": (_INT, False, 30),
    },
}


@dataclass
class RunConfig:
    model: ModelSpec
    seed: int
    sections: dict
    raw: dict

    def section(self, name: str, command: str) -> dict:
        if name not in self.sections:
            raise ConfigError(f"command '{command}' requires a [{name}] section")
        return self.sections[name]

    def meanfield_dt(self) -> float:
        mf = self.sections.get("meanfield", {})
        return mf.get("dt") or self.model.horizon * 1e-3


def _validate_section(name: str, payload: dict, schema: dict) -> dict:
    if not isinstance(payload, dict):
        raise ConfigError(f"[{name}] must be a table")
    out = {}
    for key, value in payload.items():
        if key not in schema:
            raise ConfigError(f"[{name}].{key}: unknown key")
        types, _, _ = schema[key]
        if types is _NUM:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        elif types is _INT:
            ok = isinstance(value, int) and not isinstance(value, bool)
        else:
            ok = isinstance(value, types)
        if not ok:
            raise ConfigError(
                f"[{name}].{key}: expected {types[0].__name__}, got {type(value).__name__}")
        out[key] = value
    for key, (types, required, default) in schema.items():
        if key not in out:
            if required:
                raise ConfigError(f"[{name}].{key}: missing required key")
            if default is not None:
                out[key] = default
    return out


def _validate_model(payload: dict) -> ModelSpec:
    if not isinstance(payload, dict):
        raise ConfigError("[model] must be a table")
    for key in payload:
        if key not in ("T", "kernel", "rate"):
            raise ConfigError(f"[model].{key}: unknown key")
    for key in ("T", "kernel", "rate"):
        if key not in payload:
            raise ConfigError(f"[model].{key}: missing required key")
    _validate_section("model.kernel", payload["kernel"], _MODEL_KERNEL)
    _validate_section("model.rate", payload["rate"], _MODEL_RATE)
    try:
        return model_from_config(payload)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"[model]: {exc}") from exc


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    known_top = {"seed", "model", *_SCHEMAS}
    for key in raw:
        if key not in known_top:
            raise ConfigError(f"[{key}]: unknown section")
    if "model" not in raw:
        raise ConfigError("[model]: missing required section")
    model = _validate_model(raw["model"])

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed: expected a nonnegative integer")

    sections = {}
    for name, schema in _SCHEMAS.items():
        if name in raw:
            sections[name] = _validate_section(name, raw[name], schema)

    if "tilt" in sections:
        kind = sections["tilt"]["kind"]
        if kind not in ("none", "constant", "cramer"):
            raise ConfigError(f"[tilt].kind: unknown kind {kind!r}")
        if kind == "constant" and "value" not in sections["tilt"]:
            raise ConfigError("[tilt].value: required for constant tilts")
    if "estimate" in sections:
        est = sections["estimate"]
        if est["event"] not in ("mean_exceeds", "w1_ball"):
            raise ConfigError(f"[estimate].event: unknown event {est['event']!r}")
        if est["method"] not in ("naive", "importance"):
            raise ConfigError(f"[estimate].method: unknown method {est['method']!r}")
        if est["event"] == "mean_exceeds" and ("threshold" not in est or "at" not in est):
            raise ConfigError("[estimate]: mean_exceeds needs threshold and at")
        if est["event"] == "w1_ball" and "radius" not in est:
            raise ConfigError("[estimate]: w1_ball needs radius")
    if "rate_eval" in sections:
        src = sections["rate_eval"]["source"]
        if src not in ("mean-limit", "perturbed", "csv"):
            raise ConfigError(f"[rate_eval].source: unknown source {src!r}")
        if src == "csv" and not sections["rate_eval"].get("flow_csv"):
            raise ConfigError("[rate_eval].flow_csv: required for csv source")
    for name in ("decay_fit", "lln"):
        if name in sections:
            ns = sections[name]["ns"]
            if not all(isinstance(v, int) and not isinstance(v, bool) for v in ns):
                raise ConfigError(f"[{name}].ns: expected a list of integers")

    return RunConfig(model=model, seed=seed, sections=sections, raw=raw)
