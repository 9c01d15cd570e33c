"""Run configuration: plain sectioned key-value files.

The format is the line-oriented INI dialect of configparser: ``[section]``
headers and ``key = value`` lines.  Every key has a default, so an empty
file is a valid configuration; unknown sections or keys are rejected to
catch typos.  Serialization is canonical (sorted keys, 17 significant
digits), hence hashing the text identifies a configuration exactly and
round-trips are lossless.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field

__all__ = ["ConfigError", "RunConfig"]


class ConfigError(Exception):
    """Invalid configuration; maps to CLI exit code 2."""


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "%.17g" % v
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def _parse_bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# (type, default) per section/key; "auto" means derived from other keys
_SCHEMA = {
    "mesh": {
        "y_min": (str, "auto"),      # auto: first knot
        "y_max": (str, "auto"),      # auto: last knot
        "nu_min": (float, 0.05),
        "nu_max": (float, 1.0),
        "nx": (int, 80),
        "ny": (int, 45),
    },
    "time": {
        "t_final": (float, 0.25),
        "k_steps": (int, 25),
    },
    "heston": {
        "kappa": (float, 0.8),
        "theta": (float, 0.2),
        "sigma": (float, 0.6),
        "r": (float, 0.001),
    },
    "knots": {
        "strikes": ("floats", (0.0, 70.0, 80.0, 90.0, 100.0, 110.0, 200.0)),
        "quadrature": (str, "cut"),  # "cut" (exact) or "snap"
    },
    "payoff": {
        "kind": (str, "call"),
        "strike": (float, 70.0),
        "values": ("floats", ()),    # custom payoff: one value per knot
    },
    "training": {
        "init_method": (str, "pod"),
        "init_modes": (int, 5),
        "init_tol": (float, 0.0),    # greedy init stopping tolerance
        "train_candidates": (int, 5),
        "rho_min": (float, -0.5),
        "rho_max": (float, 0.5),
        "rho_count": (int, 12),
        "tol_evol": (float, 1e-3),
        "n1_max": (int, 45),
        "selector": (str, "estimator"),
    },
    "estimator": {
        "beta_lb": (float, 0.005),
    },
    "domain": {
        # admissible correlation range; ellipticity needs |rho| < 1
        "rho_min": (float, -1.0),
        "rho_max": (float, 1.0),
    },
    "query": {
        "rho": (float, 0.3),
    },
    "sweep": {
        "rho_min": (float, -0.5),
        "rho_max": (float, 0.5),
        "count": (int, 12),
    },
    "output": {
        # restricted view window in (S, nu): S_min S_max nu_min nu_max
        "window": ("floats", (1e-8, 190.0, 0.05, 0.95)),
        "seed": (int, 0),
    },
}


@dataclass
class RunConfig:
    """Typed view of one configuration; see _SCHEMA for keys and defaults."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        full = {}
        for sec, keys in _SCHEMA.items():
            full[sec] = {}
            for key, (_, default) in keys.items():
                full[sec][key] = self.values.get(sec, {}).get(key, default)
        self.values = full

    # -- access ------------------------------------------------------------

    def get(self, sec: str, key: str):
        if sec not in _SCHEMA or key not in _SCHEMA[sec]:
            raise ConfigError(f"unknown config key [{sec}] {key}")
        return self.values[sec][key]

    def set(self, sec: str, key: str, value):
        if sec not in _SCHEMA or key not in _SCHEMA[sec]:
            raise ConfigError(f"unknown config key [{sec}] {key}")
        self.values[sec][key] = value

    # -- parsing -----------------------------------------------------------

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"config parse error: {exc}") from None
        values: dict = {}
        for sec in cp.sections():
            if sec not in _SCHEMA:
                raise ConfigError(f"unknown config section [{sec}]")
            values[sec] = {}
            for key, raw in cp.items(sec):
                if key not in _SCHEMA[sec]:
                    raise ConfigError(f"unknown config key [{sec}] {key}")
                typ, _ = _SCHEMA[sec][key]
                try:
                    if typ is float:
                        values[sec][key] = float(raw)
                    elif typ is int:
                        values[sec][key] = int(raw)
                    elif typ is bool:
                        values[sec][key] = _parse_bool(raw)
                    elif typ == "floats":
                        values[sec][key] = tuple(float(t) for t in raw.split())
                    else:
                        values[sec][key] = raw.strip()
                except ValueError as exc:
                    raise ConfigError(f"bad value for [{sec}] {key}: {exc}") from None
        return cls(values=values)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text)

    def to_text(self) -> str:
        out = io.StringIO()
        for sec in sorted(self.values):
            out.write(f"[{sec}]\n")
            for key in sorted(self.values[sec]):
                out.write(f"{key} = {_fmt(self.values[sec][key])}\n")
            out.write("\n")
        return out.getvalue()

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    # -- derived quantities --------------------------------------------------

    def knot_strikes(self):
        return self.get("knots", "strikes")

    def y_bounds(self, knots) -> tuple:
        import numpy as np

        raw_min, raw_max = self.get("mesh", "y_min"), self.get("mesh", "y_max")
        y_min = float(knots.array[0]) if raw_min == "auto" else float(raw_min)
        y_max = float(knots.array[-1]) if raw_max == "auto" else float(raw_max)
        return y_min, y_max

    # -- validation ----------------------------------------------------------

    def validate(self) -> None:
        """Raise ConfigError listing every violated constraint."""
        errors = []
        g = self.get
        if g("mesh", "nx") < 2 or g("mesh", "ny") < 2:
            errors.append("mesh: nx and ny must be at least 2")
        if not g("mesh", "nu_max") > g("mesh", "nu_min"):
            errors.append("mesh: need nu_max > nu_min")
        if g("mesh", "nu_min") < 0:
            errors.append("mesh: nu_min must be non-negative")
        for key in ("y_min", "y_max"):
            raw = g("mesh", key)
            if raw != "auto":
                try:
                    float(raw)
                except ValueError:
                    errors.append(f"mesh: {key} must be a number or 'auto'")
        if g("time", "t_final") <= 0:
            errors.append("time: t_final must be positive")
        if g("time", "k_steps") < 1:
            errors.append("time: k_steps must be at least 1")
        for key in ("kappa", "theta", "sigma"):
            if g("heston", key) < 0:
                errors.append(f"heston: {key} must be non-negative")
        strikes = g("knots", "strikes")
        if len(strikes) < 1:
            errors.append("knots: need at least one strike")
        else:
            try:
                from .payoff import BezierKnots

                knots = BezierKnots.from_strikes(strikes)
            except ValueError as exc:
                errors.append(f"knots: {exc}")
                knots = None
            if knots is not None:
                try:
                    y_min, y_max = self.y_bounds(knots)
                    if not y_max > y_min:
                        errors.append("mesh: need y_max > y_min")
                except ValueError:
                    pass
        if g("knots", "quadrature") not in ("cut", "snap"):
            errors.append("knots: quadrature must be 'cut' or 'snap'")
        kind = g("payoff", "kind")
        if kind not in ("call", "put", "custom"):
            errors.append("payoff: kind must be call, put, or custom")
        if kind in ("call", "put") and g("payoff", "strike") <= 0:
            errors.append("payoff: strike must be positive")
        if kind == "custom" and len(g("payoff", "values")) != len(strikes):
            errors.append("payoff: custom values must match the knot count")
        t = "training"
        if g(t, "init_method") not in ("pod", "greedy"):
            errors.append("training: init_method must be pod or greedy")
        if g(t, "selector") not in ("estimator", "true_error"):
            errors.append("training: selector must be estimator or true_error")
        if g(t, "init_modes") < 1:
            errors.append("training: init_modes must be at least 1")
        if g(t, "train_candidates") < 1:
            errors.append("training: train_candidates must be at least 1")
        if g(t, "rho_count") < 1:
            errors.append("training: rho_count must be at least 1")
        if not g(t, "rho_max") >= g(t, "rho_min"):
            errors.append("training: need rho_max >= rho_min")
        if g(t, "tol_evol") <= 0:
            errors.append("training: tol_evol must be positive")
        if g(t, "n1_max") < 1:
            errors.append("training: n1_max must be at least 1")
        if g("estimator", "beta_lb") <= 0:
            errors.append("estimator: beta_lb must be positive")
        dlo, dhi = g("domain", "rho_min"), g("domain", "rho_max")
        if not (-1.0 <= dlo < dhi <= 1.0):
            errors.append("domain: need -1 <= rho_min < rho_max <= 1 (ellipticity)")
        else:
            for what, lo, hi in (
                ("training", g(t, "rho_min"), g(t, "rho_max")),
                ("sweep", g("sweep", "rho_min"), g("sweep", "rho_max")),
            ):
                if lo < dlo or hi > dhi:
                    errors.append(f"{what}: rho range leaves the declared domain")
            if not dlo <= g("query", "rho") <= dhi:
                errors.append("query: rho leaves the declared domain")
        if g("sweep", "count") < 1:
            errors.append("sweep: count must be at least 1")
        win = g("output", "window")
        if len(win) != 4:
            errors.append("output: window needs four numbers: S_min S_max nu_min nu_max")
        elif not (0 < win[0] < win[1] and win[2] < win[3]):
            errors.append("output: window bounds must be increasing (S_min > 0)")
        if errors:
            raise ConfigError("; ".join(errors))
