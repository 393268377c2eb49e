"""Scenario orchestration: build objects from a config, run, write artifacts.

Exit codes: 0 success, 2 configuration error, 3 blow-up detected, 4 I/O error.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
import warnings
from dataclasses import asdict
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .assimilation import GateViolation, NudgingConfig, TwinScenario, run_twin_experiment
from .blowup import (ChannelConfig, compute_m_star, detect_blowup, positivity_check,
                     predict_blowup_bound)
from .bounds import TheoryConstants, compute_bounds
from .config import ConfigError, ScenarioConfig
from .diagnostics import make_record, monitor_bounds, write_diagnostics_csv
from .dynamics import (BfedParams, BlowUpError, ForcingSpec, Solver, VelocityState,
                       energy_balance_residual, energy_sample, load_checkpoint, save_checkpoint)
from .interpolants import (InterpolantSpec, ObservationArchive, estimate_interpolant_constants,
                           random_test_fields, record_observations)
from .spectral import Grid, default_threads, set_threads, solenoidal_random_coeffs

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_IO = 0, 2, 3, 4


# object builders

def build_grid(cfg: ScenarioConfig) -> Grid:
    return Grid(cfg.get("grid", "n"), cfg.get("grid", "L"))


def build_params(cfg: ScenarioConfig) -> BfedParams:
    p = cfg.section("params")
    f = cfg.section("forcing")
    forcing = ForcingSpec(kind=f["kind"], component=f["component"],
                          wavenumber=tuple(f["wavenumber"]), amplitude=f["amplitude"],
                          kmax=f["kmax"], seed=f["seed"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return BfedParams(nu=p["nu"], a=p["a"], b=p["b"], alpha=p["alpha"], beta=p["beta"],
                          box_length=cfg.get("grid", "L"), forcing=forcing)


def build_initial(cfg: ScenarioConfig, grid: Grid, params: BfedParams, seed: int) -> VelocityState:
    ini = cfg.section("initial")
    kind = ini["kind"]
    if kind == "zero":
        return VelocityState(grid, np.zeros((3,) + grid.spectral_shape, dtype=complex))
    if kind == "shear":
        z = grid.mesh[2]
        vals = np.zeros((3,) + grid.shape)
        vals[0] = ini["amplitude"] * np.sin(grid.scale * ini["mode"] * z)
        return VelocityState.from_physical(grid, vals)
    if kind == "checkpoint":
        state, _, _ = load_checkpoint(cfg.resolve_path(ini["checkpoint"]))
        if state.grid != grid:
            raise ConfigError("checkpoint grid differs from [grid]")
        return state
    c = solenoidal_random_coeffs(grid, ini["kmax"], np.random.default_rng(seed))
    norm = ini["norm"]
    if norm is None:
        fn = math.sqrt(grid.norm_sq(params.forcing.coeffs(grid)))
        norm = ini["norm_factor"] * (fn if fn > 0 else 1.0)
    cur = math.sqrt(grid.norm_sq(c))
    return VelocityState(grid, c * (norm / cur) if cur > 0 else c)


def build_spec(cfg: ScenarioConfig) -> InterpolantSpec:
    nud = cfg.section("nudging")
    L = cfg.get("grid", "L")
    if nud["cutoff"] is not None:
        if nud["kind"] != "modal":
            raise ConfigError("nudging: cutoff applies to the modal kind only")
        return InterpolantSpec.from_cutoff(nud["cutoff"], L)
    if nud["cells"] is not None:
        return InterpolantSpec.from_cells(nud["kind"], nud["cells"], L, offset=nud["offset"])
    if nud["h"] is None:
        raise ConfigError("nudging: one of h, cells, cutoff is required")
    return InterpolantSpec(nud["kind"], nud["h"], L, offset=nud["offset"])


def build_nudging(cfg: ScenarioConfig, params: BfedParams) -> NudgingConfig:
    nud = cfg.section("nudging")
    spec = build_spec(cfg)
    nc = NudgingConfig(0.0, spec, nud["source"], nud["gate_policy"], nud["c0"], nud["c1"])
    if nud["mu"] is None:
        nc.mu = nud["mu_fraction"] * nc.gate(params.nu).mu_max_for(spec.kind)
    else:
        nc.mu = nud["mu"]
    return nc


def build_channel(cfg: ScenarioConfig) -> ChannelConfig:
    ch = cfg.section("channel")
    c = ChannelConfig(L=ch["L"], nu=ch["nu"], a=ch["a"], b=ch["b"], alpha=ch["alpha"],
                      beta=ch["beta"], n_z=ch["n_z"], dt=ch["dt"], bc=ch["bc"],
                      diffusion=ch["diffusion"])
    c.m0 = ch["m0"] if ch["m0"] is not None else ch["m0_factor"] * compute_m_star(c)
    return c


def theory_constants(cfg: ScenarioConfig) -> TheoryConstants:
    return TheoryConstants(**cfg.section("theory"))


# artifacts

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _clean(obj):
    """JSON-safe copy: NaN/inf become strings, numpy scalars become floats."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


class _Run:
    def __init__(self, cfg: ScenarioConfig, out_dir: str):
        self.cfg = cfg
        self.out = out_dir
        self.artifacts: list = []
        self.info: dict = {}

    def path(self, name: str) -> str:
        self.artifacts.append(name)
        return os.path.join(self.out, name)


# scenarios

def _bounds_for(params, grid, u0: VelocityState, theory, nudging=None, v0=None):
    f = params.forcing.coeffs(grid)
    kw = dict(f_norm=math.sqrt(grid.norm_sq(f)), u0_l2=math.sqrt(grid.norm_sq(u0.coeffs)),
              u0_grad=math.sqrt(grid.grad_norm_sq(u0.coeffs)), constants=theory)
    if nudging is not None:
        kw.update(h=nudging.spec.h, mu=nudging.mu, c0=nudging.c0, c1=nudging.c1)
        if v0 is not None:
            kw.update(v0_l2=math.sqrt(grid.norm_sq(v0.coeffs)),
                      v0_grad=math.sqrt(grid.grad_norm_sq(v0.coeffs)))
    return compute_bounds(params, **kw)


def _simulate(run: _Run, seed: int, resume: Optional[str]):
    cfg = run.cfg
    grid, params = build_grid(cfg), build_params(cfg)
    it = cfg.section("integrator")
    if resume:
        state, _, header = load_checkpoint(resume)
        if state.grid != grid:
            raise ConfigError("resume checkpoint grid differs from [grid]")
        run.info["resumed_from"] = {"path": resume, "time": state.time}
    else:
        state = build_initial(cfg, grid, params, seed)
    u0 = state
    report = _bounds_for(params, grid, u0, theory_constants(cfg))
    solver = Solver(grid, params, it["scheme"])
    dt = it["dt"]
    stride = max(1, int(round(it["sample_interval"] / dt)))
    nsteps = int(round((it["horizon"] - state.time) / dt))
    forcing = solver.model.forcing
    records, violations = [], []
    prev = energy_sample(state, params, forcing)
    for i in range(nsteps + 1):
        if i > 0:
            state = solver.step(state, dt)
            cur = energy_sample(state, params, forcing)
            res = energy_balance_residual(prev, cur)
            prev = cur
        else:
            res = math.nan
        if i % stride == 0 or i == nsteps:
            rec = make_record(state, params, report, res)
            records.append(rec)
            violations += monitor_bounds(rec, report)
    write_diagnostics_csv(run.path("diagnostics.csv"), records)
    if it["checkpoint"]:
        save_checkpoint(run.path("checkpoint.bin"), state, params, it["scheme"], seed)
    for v in violations:
        log.warning("bound violation at t=%.4g: %s %.6g > %.6g", v.t, v.kind, v.value, v.bound)
    run.info["bounds"] = report.to_dict()
    run.info["violations"] = [asdict(v) for v in violations]
    run.info["final_time"] = state.time


def _record_obs(run: _Run, seed: int, resume: Optional[str]):
    cfg = run.cfg
    grid, params = build_grid(cfg), build_params(cfg)
    it = cfg.section("integrator")
    nud = cfg.section("nudging")
    spec = build_spec(cfg)
    spec.check_grid(grid)
    state = load_checkpoint(resume)[0] if resume else build_initial(cfg, grid, params, seed)
    solver = Solver(grid, params, it["scheme"])
    archive, final = record_observations(solver, state, spec, nud["dt_obs"], it["horizon"],
                                         it["dt"], sink=run.path("observations.bin"),
                                         noise_sigma=nud["noise_sigma"], seed=seed + 1)
    if it["checkpoint"]:
        save_checkpoint(run.path("checkpoint.bin"), final, params, it["scheme"], seed)
    run.info["snapshots"] = len(archive.snapshots)


def _assimilate(run: _Run, seed: int, resume: Optional[str]):
    cfg = run.cfg
    grid, params = build_grid(cfg), build_params(cfg)
    it = cfg.section("integrator")
    nud = cfg.section("nudging")
    nc = build_nudging(cfg, params)
    u0 = load_checkpoint(resume)[0] if resume else build_initial(cfg, grid, params, seed)
    v0 = u0.copy() if nud["v0"] == "reference" else VelocityState(
        grid, np.zeros_like(u0.coeffs), u0.time)
    archive = None
    if nc.source == "archive":
        archive = ObservationArchive.read(cfg.resolve_path(nud["archive"]), offset=nc.spec.offset)
        if archive.n != grid.n:
            raise ConfigError("archive grid differs from [grid]")
    report = _bounds_for(params, grid, u0, theory_constants(cfg), nc, v0)
    sc = TwinScenario(grid, params, nc, u0.coeffs, v0.coeffs, it["dt"], it["horizon"],
                      it["sample_interval"], archive, energy=nud["energy"])
    res = run_twin_experiment(sc)
    res.write_csv(run.path("twin.csv"))
    if it["checkpoint"]:
        save_checkpoint(run.path("checkpoint.bin"), res.final_v, params, it["scheme"], seed)
    run.info["bounds"] = report.to_dict()
    run.info["mu"] = nc.mu
    run.info["gate"] = asdict(res.verdict)
    run.info["reference_rate_mu_over_2"] = res.reference_rate
    run.info["fit"] = asdict(res.fit) if res.fit else None
    run.info["fit_note"] = res.fit_note
    err = res.column("l2_err")
    run.info["error_initial"] = float(err[0])
    run.info["error_final"] = float(err[-1])


def _blowup1d(run: _Run, seed: int, resume: Optional[str]):
    cfg = run.cfg
    ch = build_channel(cfg)
    info = {"m0": ch.m0}
    try:
        info["m_star"] = compute_m_star(ch)
        info["t_bound"] = predict_blowup_bound(ch.m0, ch)
    except ValueError as exc:
        info["bound_note"] = str(exc)
    sec = cfg.section("channel")
    res = detect_blowup(ch, sec["horizon"], sec["threshold"], sec["safety"])
    res.final.write_csv(run.path("blowup.csv"))
    pos = positivity_check(res.final)
    info.update(blew_up=res.blew_up, t_detect=res.t_detect,
                refinements=[r.t_detect for r in res.runs], positivity=asdict(pos))
    run.info["blowup"] = info
    return EXIT_BLOWUP if res.blew_up else EXIT_OK


def _validate_interpolant(run: _Run, seed: int, resume: Optional[str]):
    cfg = run.cfg
    grid = build_grid(cfg)
    val = cfg.section("validation")
    specs = [InterpolantSpec.from_cutoff(c, grid.length) if val["kind"] == "modal"
             else InterpolantSpec.from_cells(val["kind"], c, grid.length) for c in val["cells"]]
    for s in specs:
        s.check_grid(grid)
    ens = random_test_fields(grid, val["ensemble"], seed=seed, kmax=val["kmax"])
    hold = random_test_fields(grid, val["holdout"], seed=seed + 1, kmax=val["kmax"])
    est = estimate_interpolant_constants(specs, ens, hold)
    out = asdict(est)
    out["c0_by_h"] = {repr(k): v for k, v in est.c0_by_h.items()}
    out.update(gate_c0=est.gate_c0, gate_c1=est.gate_c1)
    write_json(run.path("interpolant_constants.json"), out)
    run.info["constants"] = out


def _bounds(run: _Run, seed: int, resume: Optional[str]):
    cfg = run.cfg
    grid, params = build_grid(cfg), build_params(cfg)
    u0 = build_initial(cfg, grid, params, seed)
    nc = None
    has_nudging = any(f"nudging.{k}" not in cfg.defaulted for k in ("h", "cells", "cutoff"))
    if has_nudging:
        nc = build_nudging(cfg, params)
    v0 = VelocityState(grid, np.zeros_like(u0.coeffs))
    report = _bounds_for(params, grid, u0, theory_constants(cfg), nc, v0)
    write_json(run.path("bounds.json"), report.to_dict())
    run.info["bounds"] = report.to_dict()


HANDLERS = {
    "simulate": _simulate,
    "record-obs": _record_obs,
    "assimilate": _assimilate,
    "blowup1d": _blowup1d,
    "validate-interpolant": _validate_interpolant,
    "bounds": _bounds,
}


def run_scenario(cfg: ScenarioConfig, out_dir: str, seed: Optional[int] = None,
                 threads: Optional[int] = None, resume: Optional[str] = None) -> int:
    """Run one scenario, write its artifacts and manifest, return the exit code."""
    seed = cfg.get("run", "seed") if seed is None else seed
    threads = threads or cfg.get("run", "threads") or default_threads()
    set_threads(threads)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        log.error("cannot create output directory: %s", exc)
        return EXIT_IO
    run = _Run(cfg, out_dir)
    t0 = time.perf_counter()
    status = EXIT_OK
    try:
        status = HANDLERS[cfg.kind](run, seed, resume) or EXIT_OK
    except (ConfigError, GateViolation) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except BlowUpError as exc:
        log.error("blow-up: %s", exc)
        run.info["blowup"] = {"blew_up": True, "t_last_finite": exc.time}
        status = EXIT_BLOWUP
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except ValueError as exc:
        log.error("invalid setup: %s", exc)
        return EXIT_CONFIG
    manifest = {
        "scenario": cfg.kind,
        "config": cfg.echo(),
        "defaulted_keys": cfg.defaulted,
        "seed": seed,
        "threads": threads,
        "versions": {"bfeda": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "wall_time_s": time.perf_counter() - t0,
        "exit_code": status,
        "results": run.info,
        "artifacts": {},
    }
    try:
        for name in run.artifacts:
            p = os.path.join(out_dir, name)
            if os.path.exists(p):
                manifest["artifacts"][name] = {"sha256": sha256_file(p)}
        write_json(os.path.join(out_dir, "manifest.json"), manifest)
    except OSError as exc:
        log.error("I/O error writing manifest: %s", exc)
        return EXIT_IO
    return status
