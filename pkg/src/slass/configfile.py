"""Flat ``key = value`` experiment configuration files.

Example::

    # two robots, published setup with fewer trials
    num_robots = 2
    robot_starts = 0 0, 5 0
    source_true = 100 100
    area = 0 0, 150 150
    num_trials = 20
    policy = proposed

Points are written as ``x y``; lists of points are comma-separated. Keys not
present fall back to the published setup for ``num_robots``. Nested
parameters use their field name directly (``sigma_z_sq``, ``step_size``, ...).
"""

from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path

from .core import EnvParams, ExperimentConfig, MotionParams, PlannerParams, published_config

_NESTED = {"env": EnvParams, "motion": MotionParams, "planner": PlannerParams}
_TOP_SCALARS = {
    "M_r": int,
    "M_s": int,
    "d_min": float,
    "arrive_radius": float,
    "max_cycles": int,
    "ess_threshold": float,
    "seed": int,
    "num_trials": int,
}
EXTRA_KEYS = ("policy",)


class ConfigError(ValueError):
    pass


def _points(text: str) -> list[tuple[float, float]]:
    pts = []
    for chunk in text.split(","):
        parts = chunk.split()
        if len(parts) != 2:
            raise ConfigError(f"expected 'x y' pair, got {chunk.strip()!r}")
        pts.append((float(parts[0]), float(parts[1])))
    return pts


def _optional_int(text: str):
    return None if text.strip().lower() in ("none", "off", "") else int(text)


def parse_config(text: str) -> tuple[ExperimentConfig, dict[str, str]]:
    """Parse config text; returns the config and any extra keys (e.g. policy)."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value

    k = int(raw.pop("num_robots", 2))
    base = published_config(k) if k in (1, 2, 3) else None
    extras = {key: raw.pop(key) for key in EXTRA_KEYS if key in raw}

    top: dict = {}
    nested: dict[str, dict] = {name: {} for name in _NESTED}
    for key, value in raw.items():
        try:
            if key == "source_true":
                (top[key],) = _points(value)
            elif key == "robot_starts":
                top[key] = tuple(_points(value))
            elif key == "area":
                (x0, y0), (x1, y1) = _points(value)
                top[key] = (x0, y0, x1, y1)
            elif key in _TOP_SCALARS:
                top[key] = _TOP_SCALARS[key](value)
            else:
                for name, cls in _NESTED.items():
                    match = {f.name: f for f in fields(cls)}.get(key)
                    if match is not None:
                        if key in ("mixture_cap", "robot_cap"):
                            nested[name][key] = _optional_int(value)
                        else:
                            nested[name][key] = type(getattr(cls(), key))(value)
                        break
                else:
                    raise ConfigError(f"unknown key {key!r}")
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from exc

    if base is None:
        missing = {"source_true", "robot_starts", "area"} - top.keys()
        if missing:
            raise ConfigError(f"num_robots={k} has no defaults; missing {sorted(missing)}")
        base = published_config(1)
    for name, changes in nested.items():
        if changes:
            top[name] = replace(getattr(base, name), **changes)
    try:
        cfg = replace(base, num_robots=k, **top)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, extras


def load_config(path) -> tuple[ExperimentConfig, dict[str, str]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def format_config(cfg: ExperimentConfig, **extras) -> str:
    """Render a config in the file format; parse_config(format_config(c)) == c."""
    lines = [f"num_robots = {cfg.num_robots}"]
    lines.append(f"source_true = {_fmt(cfg.source_true.x)} {_fmt(cfg.source_true.y)}")
    lines.append(
        "robot_starts = " + ", ".join(f"{_fmt(p.x)} {_fmt(p.y)}" for p in cfg.robot_starts)
    )
    a = cfg.area
    lines.append(f"area = {_fmt(a.xmin)} {_fmt(a.ymin)}, {_fmt(a.xmax)} {_fmt(a.ymax)}")
    for key in _TOP_SCALARS:
        lines.append(f"{key} = {_fmt(getattr(cfg, key))}")
    for name in _NESTED:
        obj = getattr(cfg, name)
        for f in fields(obj):
            lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
    for key, value in extras.items():
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
