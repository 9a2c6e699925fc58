"""Experiment configuration files.

The format is line oriented::

    # comment
    [experiment]
    problem = euler-projector
    [grid]
    n = 128, 128
    [initial]
    x0 = 3.141592653589793, 3.141592653589793
    [run]
    dt = 0.001

Sections are ``experiment``, ``grid``, ``initial``, ``model`` and ``run``; keys
before the first header belong to ``experiment``. Every key must exist in the
preset of the chosen problem and takes the type of the preset default. Tuples
are comma separated; nested tuples separate rows with ``;``. ``dt`` accepts
``auto``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

from .timeint import RunConfig

SECTIONS = ("experiment", "grid", "initial", "model", "run")
PARAM_SECTIONS = ("grid", "initial", "model")
RUN_KEYS = ("integrator", "solver", "dt", "t_end", "stop_tol", "record_every", "snapshot_times")
_HEADER = re.compile(r"^\[\s*([A-Za-z_][\w-]*)\s*\]$")


class ConfigError(ValueError):
    """One or more problems in a configuration text, each tagged with its line."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass
class ExperimentConfig:
    problem: str
    grid: dict[str, Any] = field(default_factory=dict)
    initial: dict[str, Any] = field(default_factory=dict)
    model: dict[str, Any] = field(default_factory=dict)
    run: dict[str, Any] = field(default_factory=dict)
    out: str | None = None

    def params(self) -> dict[str, Any]:
        """Grid, initial-condition and model parameters merged into one dict."""
        p: dict[str, Any] = {}
        for sec in PARAM_SECTIONS:
            p.update(getattr(self, sec))
        return p

    def run_config(self) -> RunConfig:
        return RunConfig(**self.run)


# ---------------------------------------------------------------------------
# values


def _fmt_scalar(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_value(v: Any) -> str:
    if isinstance(v, (tuple, list)):
        if v and isinstance(v[0], (tuple, list)):
            return "; ".join(format_value(row) for row in v)
        return ", ".join(_fmt_scalar(x) for x in v)
    return _fmt_scalar(v)


def _parse_scalar(text: str, like: Any) -> Any:
    text = text.strip()
    if isinstance(like, bool):
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true/false, got {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def parse_value(text: str, like: Any) -> Any:
    """Parse ``text`` into the type of the default ``like``."""
    text = text.strip()
    if isinstance(like, (tuple, list)):
        if not text:
            return ()
        if like and isinstance(like[0], (tuple, list)):
            rows = [r for r in text.split(";")]
            return tuple(parse_value(r, like[0]) for r in rows)
        elem = like[0] if like else 0.0
        return tuple(_parse_scalar(x, elem) for x in text.split(","))
    return _parse_scalar(text, like)


def parse_dt(text: str) -> float | str:
    text = text.strip()
    if text == "auto":
        return "auto"
    return float(text)


# ---------------------------------------------------------------------------
# parse / serialize


def _split(text: str) -> tuple[dict[str, dict[str, tuple[int, str]]], list[str]]:
    out: dict[str, dict[str, tuple[int, str]]] = {s: {} for s in SECTIONS}
    errors: list[str] = []
    section = "experiment"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _HEADER.match(line)
        if m:
            section = m.group(1)
            if section not in SECTIONS:
                errors.append(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if section not in SECTIONS:
            continue
        if key in out[section]:
            errors.append(f"line {lineno}: duplicate key {key!r} in [{section}] (first set on line {out[section][key][0]})")
            continue
        out[section][key] = (lineno, value)
    return out, errors


def parse_config(text: str, presets: dict | None = None) -> ExperimentConfig:
    """Parse and validate a configuration against the preset of its problem.

    Raises :class:`ConfigError` listing every problem with its line number; an
    unknown problem name raises :class:`UnknownProblem`.
    """
    if presets is None:
        from .cli import PRESETS as presets
    raw, errors = _split(text)
    exp = raw["experiment"]
    if "problem" not in exp:
        raise ConfigError(errors + ["missing 'problem' key"])
    lineno, name = exp["problem"]
    name = name.strip()
    if name not in presets:
        raise UnknownProblem(f"line {lineno}: unknown problem {name!r}; choose from {', '.join(presets)}")
    preset = presets[name]
    cfg = preset.default_config()
    for key, (ln, value) in exp.items():
        if key == "problem":
            continue
        if key == "out":
            cfg.out = value.strip() or None
        else:
            errors.append(f"line {ln}: unknown key {key!r} in [experiment]")
    for sec in PARAM_SECTIONS:
        target = getattr(cfg, sec)
        for key, (ln, value) in raw[sec].items():
            if key not in target:
                errors.append(f"line {ln}: unknown key {key!r} in [{sec}] for problem {name}")
                continue
            default = target[key]
            try:
                parsed = parse_value(value, default)
            except ValueError as exc:
                errors.append(f"line {ln}: bad value for {key!r}: {exc}")
                continue
            if isinstance(default, tuple) and default and len(parsed) != len(default) and key in preset.fixed_length:
                errors.append(
                    f"line {ln}: {key!r} needs {len(default)} entries for problem {name} (preset conflict), got {len(parsed)}"
                )
                continue
            target[key] = parsed
    for key, (ln, value) in raw["run"].items():
        if key not in RUN_KEYS:
            errors.append(f"line {ln}: unknown key {key!r} in [run]")
            continue
        try:
            if key == "dt":
                cfg.run[key] = parse_dt(value)
            elif key in ("integrator", "solver"):
                cfg.run[key] = value.strip()
            elif key == "snapshot_times":
                cfg.run[key] = parse_value(value, (0.0,))
            elif key == "record_every":
                cfg.run[key] = int(value)
            else:
                cfg.run[key] = float(value)
        except ValueError as exc:
            errors.append(f"line {ln}: bad value for {key!r}: {exc}")
    if not errors:
        try:
            cfg.run_config()
        except (TypeError, ValueError) as exc:
            errors.append(f"[run]: {exc}")
    if not errors:
        try:
            preset.validate(cfg)
        except ValueError as exc:
            errors.append(f"[{name}]: {exc}")
    if errors:
        raise ConfigError(errors)
    return cfg


class UnknownProblem(ConfigError):
    def __init__(self, message: str):
        super().__init__([message])


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = ["[experiment]", f"problem = {cfg.problem}"]
    if cfg.out:
        lines.append(f"out = {cfg.out}")
    for sec in PARAM_SECTIONS:
        values = getattr(cfg, sec)
        if values:
            lines.append("")
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {format_value(v)}" for k, v in values.items())
    lines.append("")
    lines.append("[run]")
    for k in RUN_KEYS:
        if k in cfg.run:
            lines.append(f"{k} = {format_value(cfg.run[k])}")
    return "\n".join(lines) + "\n"
