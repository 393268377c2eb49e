"""Scenario configuration files.

Sectioned ``key = value`` text (``configparser`` syntax). Unknown sections and
keys are errors. Every key that is not given takes its default, and the list
of defaulted keys is kept on the parsed config for the run manifest.

Example::

    [grid]
    n = 32

    [params]
    nu = 1.0
    a = 1.0
    b = -0.5

    [forcing]
    kind = band_limited_random
    amplitude = 0.5
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

SCENARIOS = ("simulate", "record-obs", "assimilate", "blowup1d", "validate-interpolant", "bounds")


class ConfigError(ValueError):
    pass


def _float_list(s: str) -> tuple:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _int_list(s: str) -> tuple:
    return tuple(int(x) for x in s.replace(",", " ").split())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _choice(*opts) -> Callable[[str], str]:
    def parse(s: str) -> str:
        s = s.strip()
        if s not in opts:
            raise ValueError(f"{s!r} not one of {', '.join(opts)}")
        return s
    return parse


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none") else float(s)


def _float_expr(s: str) -> float:
    """Float, also accepting ``pi`` multiples such as ``2*pi`` or ``pi``."""
    t = s.strip().replace(" ", "")
    if "pi" in t:
        num = t.replace("pi", "").rstrip("*") or "1"
        if "/" in num:
            raise ValueError(f"unsupported expression {s!r}")
        return float(num) * math.pi
    return float(t)


# section -> key -> (parser, default)
SCHEMA: dict = {
    "scenario": {"kind": (_choice(*SCENARIOS), None)},
    "run": {"seed": (int, 0), "threads": (int, None)},
    "grid": {"n": (int, 32), "L": (_float_expr, 2 * math.pi)},
    "params": {"nu": (float, 1.0), "a": (float, 1.0), "b": (float, 0.0),
               "alpha": (float, 1.5), "beta": (float, 0.5)},
    "forcing": {"kind": (_choice("zero", "single_mode", "band_limited_random"), "zero"),
                "amplitude": (float, 0.0), "kmax": (float, 2.0), "seed": (int, 1),
                "component": (int, 0), "wavenumber": (_int_list, (0, 0, 1))},
    "initial": {"kind": (_choice("random", "shear", "zero", "checkpoint"), "random"),
                "kmax": (float, 2.0), "norm": (_opt_float, None), "norm_factor": (float, 1.0),
                "amplitude": (float, 1.0), "mode": (int, 1), "checkpoint": (str, "")},
    "integrator": {"dt": (float, 1e-3), "scheme": (_choice("ifrk2"), "ifrk2"),
                   "horizon": (float, 1.0), "sample_interval": (float, 0.1),
                   "checkpoint": (_bool, True)},
    "nudging": {"kind": (_choice("modal", "volume", "nodal"), "modal"),
                "h": (_opt_float, None), "cells": (int, None), "cutoff": (int, None),
                "offset": (float, 0.5), "mu": (_opt_float, None),
                "mu_fraction": (float, 0.8), "source": (_choice("live", "archive"), "live"),
                "archive": (str, ""), "gate_policy": (_choice("enforce", "warn"), "enforce"),
                "c0": (_opt_float, None), "c1": (_opt_float, None),
                "dt_obs": (float, 0.01), "noise_sigma": (float, 0.0),
                "v0": (_choice("zero", "reference"), "zero"), "energy": (_bool, True)},
    "channel": {"L": (_float_expr, math.pi), "nu": (float, 1.0), "a": (float, -1.0),
                "b": (float, 0.2), "alpha": (float, 1.0), "beta": (float, 0.0),
                "n_z": (int, 256), "dt": (float, 1e-4), "m0": (_opt_float, None),
                "m0_factor": (float, 2.5), "horizon": (float, 1.0),
                "threshold": (float, 1e8), "safety": (float, 0.05),
                "bc": (_choice("dirichlet", "periodic"), "dirichlet"),
                "diffusion": (_choice("spectral", "fd"), "spectral")},
    "validation": {"kind": (_choice("modal", "volume", "nodal"), "volume"),
                   "cells": (_int_list, (4, 8, 16)), "ensemble": (int, 100),
                   "holdout": (int, 50), "kmax": (_opt_float, None)},
    "theory": {k: (float, 1.0) for k in
               ("kappa0", "kappa0_tilde", "kappa1", "kappa2", "kappa3", "kappa4")},
}


@dataclass
class ScenarioConfig:
    kind: str
    values: dict
    defaulted: list = field(default_factory=list)
    base_dir: str = "."

    def get(self, section: str, key: str) -> Any:
        return self.values[section][key]

    def section(self, name: str) -> dict:
        return dict(self.values[name])

    def resolve_path(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def echo(self) -> dict:
        return {s: {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
                for s, d in self.values.items()}


def parse_config_text(text: str, kind: Optional[str] = None, base_dir: str = ".") -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (L vs l)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values: dict = {}
    defaulted: list = []
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (parser, default) in keys.items():
            if cp.has_option(sec, key):
                raw = cp.get(sec, key)
                try:
                    values[sec][key] = parser(raw)
                except ValueError as exc:
                    raise ConfigError(f"[{sec}] {key}: {exc}") from None
            else:
                values[sec][key] = default
                defaulted.append(f"{sec}.{key}")
    file_kind = values["scenario"]["kind"]
    if kind is None:
        kind = file_kind
    elif file_kind is not None and file_kind != kind:
        raise ConfigError(f"config is for scenario {file_kind!r}, not {kind!r}")
    if kind is None:
        raise ConfigError("scenario kind not given")
    values["scenario"]["kind"] = kind
    cfg = ScenarioConfig(kind, values, defaulted, base_dir)
    validate(cfg)
    return cfg


def parse_config(path, kind: Optional[str] = None) -> ScenarioConfig:
    """Read, default and validate a config file."""
    try:
        with open(path) as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config_text(text, kind, os.path.dirname(os.path.abspath(path)))


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate(cfg: ScenarioConfig) -> None:
    """Check cross-key constraints; raises ConfigError naming the violated one."""
    v = cfg.values
    p = v["params"]
    _need(p["nu"] > 0, "constraint violated: nu > 0")
    _need(p["alpha"] > p["beta"], "constraint violated: alpha > beta")
    _need(p["beta"] >= 0, "constraint violated: beta >= 0")
    g = v["grid"]
    _need(g["n"] >= 8 and g["n"] % 2 == 0, "constraint violated: grid n even and >= 8")
    _need(g["L"] > 0, "constraint violated: L > 0")
    it = v["integrator"]
    _need(it["dt"] > 0, "constraint violated: dt > 0")
    _need(it["horizon"] > 0, "constraint violated: horizon > 0")
    _need(it["sample_interval"] > 0, "constraint violated: sample_interval > 0")
    if cfg.kind in ("assimilate", "record-obs"):
        nud = v["nudging"]
        given = [k for k in ("h", "cells", "cutoff") if nud[k] is not None]
        _need(len(given) <= 1, "nudging: give only one of h, cells, cutoff")
        if nud["kind"] == "modal" and nud["h"] is not None:
            kc = math.floor(g["L"] / (2 * math.pi * nud["h"]) + 1e-9)
            _need(kc >= 1, f"nudging: modal cutoff Kc = floor(L/(2 pi h)) = 0 for h={nud['h']}")
        _need(nud["mu"] is None or nud["mu"] >= 0, "constraint violated: mu >= 0")
        _need(0 < nud["mu_fraction"], "constraint violated: mu_fraction > 0")
        _need(nud["dt_obs"] > 0, "constraint violated: dt_obs > 0")
        _need(nud["noise_sigma"] >= 0, "constraint violated: noise_sigma >= 0")
        if cfg.kind == "assimilate" and nud["source"] == "archive":
            _need(bool(nud["archive"]), "nudging: archive source needs an archive path")
    if cfg.kind == "blowup1d":
        ch = v["channel"]
        _need(ch["alpha"] > ch["beta"] >= 0, "constraint violated: channel alpha > beta >= 0")
        _need(ch["nu"] > 0 and ch["dt"] > 0 and ch["horizon"] > 0,
              "constraint violated: channel nu, dt, horizon > 0")
        _need(ch["n_z"] >= 4, "constraint violated: channel n_z >= 4")
    if v["initial"]["kind"] == "checkpoint":
        _need(bool(v["initial"]["checkpoint"]), "initial: checkpoint kind needs a path")
    r = v["run"]
    _need(r["threads"] is None or r["threads"] >= 1, "constraint violated: threads >= 1")
