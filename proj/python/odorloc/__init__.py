"""Odor source localization: advection-diffusion solver, MAP / Kalman / MLP /
PINN / DQN estimators and a benchmark harness, backed by a C++ core."""

import json
from pathlib import Path

from . import _core
from ._core import METHODS, ConfigError, NumericalError

__all__ = [
    "METHODS",
    "ConfigError",
    "NumericalError",
    "config_text",
    "resolved_config",
    "simulate",
    "observe",
    "bench",
    "localize",
    "format_report",
]


def _value(v):
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def config_text(config=None, **overrides):
    """key=value text from a file path, a dict, or keyword overrides.

    sensors may be given as [(x, y), ...]; methods as a list of names.
    """
    text = ""
    if isinstance(config, (str, Path)):
        text = Path(config).read_text()
    elif isinstance(config, dict):
        overrides = {**config, **overrides}
    elif config is not None:
        raise TypeError("config must be a path, a dict or None")
    lines = []
    for k, v in overrides.items():
        if k == "sensors":
            v = ";".join(_value(p) for p in v)
        lines.append(f"{k} = {_value(v)}")
    return text + "\n" + "\n".join(lines) + "\n"


def resolved_config(config=None, **overrides):
    return _core.resolved_config(config_text(config, **overrides))


def simulate(times=(), config=None, **overrides):
    """Fields at the requested times plus the final one."""
    return _core.simulate(config_text(config, **overrides), list(times))


def observe(config=None, seed=None, **overrides):
    return _core.observe(config_text(config, **overrides), seed)


def bench(config=None, repetitions=5, methods=(), seed=None, artifact_dir=None, first_repetition=0, **overrides):
    """Benchmark report as a dict (errors in metres, NaN stored as None)."""
    out = _core.bench(
        config_text(config, **overrides),
        repetitions,
        [str(m) for m in methods],
        seed,
        first_repetition,
        None if artifact_dir is None else str(artifact_dir),
    )
    return json.loads(out)


def localize(method, config=None, repetition=0, seed=None, **overrides):
    """One estimate of a single method; raises on failure."""
    rep = bench(config, repetitions=1, methods=[method], seed=seed, first_repetition=repetition, **overrides)
    row = rep["rows"][0]
    if not row["runs"]:
        msg = "; ".join(row.get("failures", [])) or "no estimate"
        if "numerical failure" in msg:
            raise NumericalError(msg)
        raise ConfigError(msg)
    return row["runs"][0]


def format_report(report, fmt="md"):
    return _core.format_report(json.dumps(report), fmt)
