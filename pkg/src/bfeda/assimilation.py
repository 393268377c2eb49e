"""Continuous data assimilation by nudging, and twin experiments.

The nudged system is

    dv/dt - nu lap v + B(v, v) + a|v|^{2 alpha} v + b|v|^{2 beta} v
        = f + mu P (I_h(u) - I_h(v)),

driven either by a co-integrated reference solver ("live") or by a recorded
observation archive held constant between snapshots ("archive").

For the modal interpolant the feedback is linear and diagonal in Fourier
space, so it is folded into the integrating factor. In live mode the exact
propagator of the coupled linear pair

    u' = lam u,   v' = lam v - mu chi (v - u),   chi = 1 on retained modes,

is used, which keeps v = u a fixed point to round-off. Volume and nodal
feedback is evaluated explicitly at each Runge-Kutta stage.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bounds import (BoundReport, GateVerdict, TheoryConstants, check_gates,  # noqa: F401
                     compute_bounds, mu_lower_bound_L2)
from .dynamics import (BfedModel, BfedParams, BlowUpError, Solver, VelocityState,
                       energy_balance_residual, energy_sample, ifrk2_step)
from .interpolants import (InterpolantSpec, ObservationArchive, decode_observation, modal_mask,
                           nudging_coeffs)
from .spectral import Grid, project_coeffs

log = logging.getLogger(__name__)

# Gate constants for volume/nodal: 1.1 x the small-h limit 1/12 of the fitted
# ratio (cell centers for nodal). Modal c0 = 1 is provable.
DEFAULT_GATE_CONSTANTS = {
    "modal": (1.0, 0.0),
    "volume": (1.1 / 12, 0.0),
    "nodal": (1.1 / 12, 0.0),
}


class GateViolation(ValueError):
    pass


@dataclass
class NudgingConfig:
    mu: float
    spec: InterpolantSpec
    source: str = "live"          # live | archive
    gate_policy: str = "enforce"  # enforce | warn
    c0: Optional[float] = None
    c1: Optional[float] = None

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.source not in ("live", "archive"):
            raise ValueError(f"unknown source {self.source!r}")
        if self.gate_policy not in ("enforce", "warn"):
            raise ValueError(f"unknown gate policy {self.gate_policy!r}")
        d0, d1 = DEFAULT_GATE_CONSTANTS[self.spec.kind]
        if self.c0 is None:
            self.c0 = d0
        if self.c1 is None:
            self.c1 = d1

    def gate(self, nu: float) -> GateVerdict:
        return check_gates(nu, self.mu, self.spec.h, self.c0, self.c1)


class NudgedSolver:
    """Integrates the nudged system; ``step_pair`` for live, ``step`` for archive."""

    def __init__(self, grid: Grid, params: BfedParams, config: NudgingConfig,
                 archive: Optional[ObservationArchive] = None):
        config.spec.check_grid(grid)
        self.grid = grid
        self.params = params
        self.config = config
        self.verdict = config.gate(params.nu)
        if not self.verdict.ok_for(config.spec.kind):
            msg = (f"gate violated: mu={config.mu:g} exceeds mu_max="
                   f"{self.verdict.mu_max_for(config.spec.kind):.6g} for h={config.spec.h:.6g}")
            if config.gate_policy == "enforce":
                raise GateViolation(msg)
            log.warning(msg)
        if config.source == "archive":
            if archive is None:
                raise ValueError("archive source requires an observation archive")
            if archive.spec.kind != config.spec.kind or \
                    abs(archive.spec.h - config.spec.h) > 1e-12 * config.spec.h:
                raise ValueError("archive interpolant differs from the nudging interpolant")
        self.archive = archive
        self.model_u = BfedModel(grid, params)
        self.model_v = BfedModel(grid, params)
        self.modal = config.spec.kind == "modal"
        self.chi = modal_mask(config.spec, grid).astype(float) if self.modal else None
        self._dt = None
        self._obs_cache = (None, None)

    # linear propagators

    def _factors(self, dt):
        if dt != self._dt:
            lam = self.model_u.linear
            mu = self.config.mu
            self._eu = np.exp(lam * dt)
            if self.modal:
                self._ev = np.exp((lam - mu * self.chi) * dt)
                self._evu = self.chi * (self._eu - np.exp((lam - mu) * dt))
            else:
                self._ev = self._eu
                self._evu = None
            self._dt = dt
        return self._eu, self._ev, self._evu

    def _finish(self, y, t):
        y = project_coeffs(self.grid, y)
        y[:, ~self.grid.nyquist_free] = 0.0
        if not np.isfinite(y).all():
            raise BlowUpError(f"non-finite velocity at t={t:.6g}", t)
        return y

    # feedback terms

    def feedback_live(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """``mu P (I_h u - I_h v)`` as projected coefficients."""
        return self.config.mu * nudging_coeffs(self.config.spec, self.grid, u - v)

    def observation_coeffs(self, t: float) -> np.ndarray:
        """Grid coefficients of the held observation I_h(u_obs) at time ``t``."""
        snap = self.archive.latest(t)
        if self._obs_cache[0] is not snap:
            c = decode_observation(self.config.spec, self.grid, snap.payload)
            if not self.modal:
                c = project_coeffs(self.grid, c)
            c[:, ~self.grid.nyquist_free] = 0.0
            self._obs_cache = (snap, c)
        return self._obs_cache[1]

    def feedback_archive(self, v: np.ndarray, t: float) -> np.ndarray:
        obs = self.observation_coeffs(t)
        if self.modal:
            return self.config.mu * self.chi * (obs - v)
        return self.config.mu * (obs - nudging_coeffs(self.config.spec, self.grid, v))

    # steppers

    def step_pair(self, u: VelocityState, v: VelocityState, dt: float):
        """Advance the reference and the nudged state together (live source)."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        eu, ev, evu = self._factors(dt)
        mu = self.config.mu

        def explicit(y, t):
            nu_ = self.model_u.nonlinear(y[:3])
            nv_ = self.model_v.nonlinear(y[3:])
            if mu != 0 and not self.modal:
                nv_ = nv_ + self.feedback_live(y[:3], y[3:])
            return np.concatenate([nu_, nv_])

        def propagate(y):
            out = np.empty_like(y)
            out[:3] = eu * y[:3]
            out[3:] = ev * y[3:]
            if evu is not None and mu != 0:
                out[3:] += evu * y[:3]
            return out

        y = ifrk2_step(np.concatenate([u.coeffs, v.coeffs]), u.time, dt, explicit, propagate)
        t = u.time + dt
        return (VelocityState(self.grid, self._finish(y[:3], t), t),
                VelocityState(self.grid, self._finish(y[3:], t), t))

    def step(self, v: VelocityState, dt: float) -> VelocityState:
        """Advance the nudged state alone against the archived observations."""
        if self.archive is None:
            raise ValueError("live source: use step_pair")
        if not dt > 0:
            raise ValueError("dt must be positive")
        _, ev, _ = self._factors(dt)

        def explicit(y, t):
            out = self.model_v.nonlinear(y)
            if self.config.mu != 0:
                if self.modal:
                    out = out + self.config.mu * self.chi * self.observation_coeffs(t)
                else:
                    out = out + self.feedback_archive(y, t)
            return out

        y = ifrk2_step(v.coeffs, v.time, dt, explicit, lambda c: ev * c)
        t = v.time + dt
        return VelocityState(self.grid, self._finish(y, t), t)

    def feedback(self, u: Optional[VelocityState], v: VelocityState) -> np.ndarray:
        """Feedback term at the current state (for energy bookkeeping)."""
        if self.config.mu == 0:
            return np.zeros_like(v.coeffs)
        if self.archive is not None:
            return self.feedback_archive(v.coeffs, v.time)
        return self.feedback_live(u.coeffs, v.coeffs)


def nudged_step(v_state: VelocityState, params: BfedParams, config: NudgingConfig, dt: float,
                observations: ObservationArchive) -> VelocityState:
    """One archive-driven step of the nudged system (builds a throwaway solver)."""
    return NudgedSolver(v_state.grid, params, config, observations).step(v_state, dt)


# decay-rate fitting

@dataclass
class DecayFit:
    rate: float
    intercept: float
    n_used: int
    t_start: float
    t_end: float
    floor: float


def estimate_decay_rate(times, series, window: float = 0.6, abs_floor: float = 0.0,
                        min_samples: int = 10) -> DecayFit:
    """Exponential rate of ``series`` from a least-squares line through its log.

    Only samples strictly above ``max(1e-13 * series[0], abs_floor)`` count;
    the fit uses the last ``window`` fraction of them. Positive rate means decay.
    """
    t = np.asarray(times, dtype=float)
    s = np.asarray(series, dtype=float)
    floor = max(1e-13 * abs(s[0]), abs_floor)
    above = np.nonzero(s > floor)[0]
    if len(above) < min_samples:
        raise ValueError(f"only {len(above)} samples above the floor {floor:.3g}")
    keep = above[int(math.floor((1 - window) * len(above))):]
    if len(keep) < min_samples:
        keep = above[-min_samples:]
    slope, intercept = np.polyfit(t[keep], np.log(s[keep]), 1)
    return DecayFit(float(-slope), float(intercept), len(keep), float(t[keep[0]]),
                    float(t[keep[-1]]), floor)


# twin experiments

TWIN_COLUMNS = ("t", "l2_u", "h1_u", "l2_v", "h1_v", "l2_err", "h1_err",
                "energy_residual_u", "energy_residual_v")


@dataclass
class TwinScenario:
    grid: Grid
    params: BfedParams
    config: NudgingConfig
    u0: np.ndarray
    v0: np.ndarray
    dt: float
    horizon: float
    sample_interval: float
    archive: Optional[ObservationArchive] = None
    window: float = 0.6
    abs_floor: float = 0.0
    energy: bool = True


@dataclass
class TwinResult:
    rows: list
    fit: Optional[DecayFit]
    fit_note: str
    mu: float
    reference_rate: float
    verdict: GateVerdict
    final_u: VelocityState
    final_v: VelocityState

    def column(self, name: str) -> np.ndarray:
        i = TWIN_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    def write_csv(self, path) -> None:
        write_rows_csv(path, TWIN_COLUMNS, self.rows)


def write_rows_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(x)) for x in r])


def run_twin_experiment(sc: TwinScenario, callback=None) -> TwinResult:
    """Integrate reference and nudged states, sampling norms and errors.

    With an archive source the reference ``u`` is still integrated (from
    ``u0``) so the error can be measured; the nudging only sees the archive.
    """
    grid, params = sc.grid, sc.params
    solver = NudgedSolver(grid, params, sc.config, sc.archive)
    ref = BfedModel(grid, params)
    nsteps = int(round(sc.horizon / sc.dt))
    stride = max(1, int(round(sc.sample_interval / sc.dt)))
    u = VelocityState(grid, sc.u0.copy(), 0.0)
    v = VelocityState(grid, sc.v0.copy(), 0.0)
    plain = None
    if sc.archive is not None:
        plain = Solver(grid, params)
    forcing = ref.forcing

    def energies(u, v):
        if not sc.energy:
            return None, None
        fb = solver.feedback(u, v)
        return (energy_sample(u, params, forcing),
                energy_sample(v, params, forcing, extra_work=grid.inner(fb, v.coeffs)))

    rows = []
    prev = (None, None)
    for i in range(nsteps + 1):
        if i > 0:
            if plain is None:
                u, v = solver.step_pair(u, v, sc.dt)
            else:
                u = plain.step(u, sc.dt)
                v = solver.step(v, sc.dt)
        sample = i % stride == 0 or i == nsteps
        pre_sample = (i + 1) % stride == 0 or i + 1 == nsteps
        if sc.energy and (sample or pre_sample):
            cur = energies(u, v)
        else:
            cur = (None, None)
        if sample:
            w = u.coeffs - v.coeffs
            ru = rv = float("nan")
            if prev[0] is not None and cur[0] is not None:
                ru = energy_balance_residual(prev[0], cur[0])
                rv = energy_balance_residual(prev[1], cur[1])
            row = (u.time, math.sqrt(grid.norm_sq(u.coeffs)), math.sqrt(grid.grad_norm_sq(u.coeffs)),
                   math.sqrt(grid.norm_sq(v.coeffs)), math.sqrt(grid.grad_norm_sq(v.coeffs)),
                   math.sqrt(grid.norm_sq(w)), math.sqrt(grid.grad_norm_sq(w)), ru, rv)
            rows.append(row)
            if callback is not None:
                callback(row)
        prev = cur
    res = TwinResult(rows, None, "", sc.config.mu, sc.config.mu / 2, solver.verdict, u, v)
    t = res.column("t")
    err_sq = res.column("l2_err") ** 2
    # squared errors below (1e-12 ||u||)^2 are round-off, not signal
    floor = max(sc.abs_floor, (1e-12 * res.column("l2_u").max()) ** 2)
    try:
        res.fit = estimate_decay_rate(t, err_sq, sc.window, floor)
        res.fit_note = "ok"
    except ValueError as exc:
        res.fit_note = f"not applicable: {exc}"
    return res
