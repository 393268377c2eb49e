"""Reduced 1D profile equation and finite-time blow-up.

    phi_t - nu phi_zz + a|phi|^{2 alpha} phi + b|phi|^{2 beta} phi = 0

on [0, L] with phi(0) = phi(L) = 0, or periodic on [0, L) for comparing with
shear flows of the 3D solver. With a < 0 the reaction term drives growth and
the first sine moment

    m(t) = int_0^L phi(z, t) sin(pi z / L) dz

obeys dm/dt >= |a| m^{2 alpha + 1} / (4 c_{2 alpha + 1}) once m >= m*, where
c_g = (2L/pi)^{g - 1}. Integrating that inequality gives an upper bound on the
blow-up time.

Diffusion is integrated exactly in the sine basis (Dirichlet) or Fourier basis
(periodic). ``diffusion="fd"`` uses the exact exponential of the second-order
finite-difference Laplacian instead: it is diagonal in the same sine basis and
its exponential is entrywise nonnegative, so positivity of the profile is kept
to round-off even when the profile is under-resolved.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft

from .dynamics import damping_coefficient


@dataclass
class ChannelConfig:
    L: float = math.pi
    nu: float = 1.0
    a: float = -1.0
    b: float = 0.0
    alpha: float = 1.0
    beta: float = 0.0
    n_z: int = 256
    dt: float = 1e-4
    phi0: Optional[Callable[[np.ndarray], np.ndarray]] = None
    m0: float = 1.0
    bc: str = "dirichlet"          # dirichlet | periodic
    diffusion: str = "spectral"    # spectral | fd

    def __post_init__(self):
        if not (self.alpha > self.beta >= 0):
            raise ValueError(f"need alpha > beta >= 0, got alpha={self.alpha}, beta={self.beta}")
        if not self.nu > 0 or not self.L > 0 or not self.dt > 0:
            raise ValueError("nu, L and dt must be positive")
        if self.bc not in ("dirichlet", "periodic"):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if self.diffusion not in ("spectral", "fd"):
            raise ValueError(f"unknown diffusion scheme {self.diffusion!r}")
        if self.n_z < 4 or (self.bc == "periodic" and self.n_z % 2):
            raise ValueError("n_z too small (or odd for the periodic variant)")

    @property
    def dz(self) -> float:
        return self.L / self.n_z

    @property
    def z(self) -> np.ndarray:
        """Unknown locations: interior points (Dirichlet) or the periodic grid."""
        if self.bc == "dirichlet":
            return np.arange(1, self.n_z) * self.dz
        return np.arange(self.n_z) * self.dz

    def initial_profile(self) -> np.ndarray:
        """``phi0(z)`` if given, else ``m0 (2/L) sin(pi z / L)`` (moment exactly m0)."""
        if self.phi0 is not None:
            out = np.asarray(self.phi0(self.z), dtype=float)
        else:
            out = self.m0 * (2 / self.L) * np.sin(math.pi * self.z / self.L)
        if out.shape != self.z.shape:
            raise ValueError("initial profile has the wrong length")
        return out


def c_gamma(gamma: float, L: float) -> float:
    return (2 * L / math.pi) ** (gamma - 1)


class ChannelSolver:
    """IF-RK2 stepper for the profile equation with variable step size."""

    def __init__(self, config: ChannelConfig):
        self.config = config
        cfg = config
        if cfg.bc == "dirichlet":
            k = np.arange(1, cfg.n_z, dtype=float)
            if cfg.diffusion == "spectral":
                self.rate = cfg.nu * (k * math.pi / cfg.L) ** 2
            else:
                self.rate = cfg.nu * (4 / cfg.dz ** 2) * np.sin(k * math.pi / (2 * cfg.n_z)) ** 2
        else:
            k = np.arange(cfg.n_z // 2 + 1, dtype=float)
            self.rate = cfg.nu * (2 * math.pi * k / cfg.L) ** 2
            self.padded = math.ceil(3 * cfg.n_z / 2)
        self._cache = {}

    def _factor(self, dt):
        f = self._cache.get(dt)
        if f is None:
            if len(self._cache) > 64:
                self._cache.clear()
            f = self._cache[dt] = np.exp(-self.rate * dt)
        return f

    def _propagate(self, y, dt):
        if self.config.bc == "dirichlet":
            return sfft.idst(self._factor(dt) * sfft.dst(y, type=1), type=1)
        return y * self._factor(dt)  # periodic states are kept as rfft coefficients

    def reaction(self, y):
        cfg = self.config
        if cfg.bc == "dirichlet":
            return -damping_coefficient(y * y, cfg) * y
        n, m = cfg.n_z, self.padded
        h = n // 2
        pad = np.zeros(m // 2 + 1, dtype=complex)
        pad[:h] = y[:h]
        phys = sfft.irfft(pad * m, n=m)
        r = sfft.rfft(-damping_coefficient(phys * phys, cfg) * phys) / m
        out = np.zeros_like(y)
        out[:h] = r[:h]
        return out

    def to_state(self, profile):
        if self.config.bc == "dirichlet":
            return np.asarray(profile, dtype=float).copy()
        c = sfft.rfft(profile) / self.config.n_z
        c[self.config.n_z // 2] = 0.0
        return c

    def to_profile(self, state):
        if self.config.bc == "dirichlet":
            return state
        return sfft.irfft(state * self.config.n_z, n=self.config.n_z)

    def step(self, y, dt):
        k1 = self.reaction(y)
        y1 = self._propagate(y + dt * k1, dt)
        k2 = self.reaction(y1)
        return self._propagate(y + 0.5 * dt * k1, dt) + 0.5 * dt * k2


def step_1d(profile: np.ndarray, config: ChannelConfig, dt: Optional[float] = None) -> np.ndarray:
    """One step of size ``dt`` (default ``config.dt``) on grid values."""
    s = ChannelSolver(config)
    y = s.step(s.to_state(profile), dt or config.dt)
    out = s.to_profile(y)
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite profile")
    return out


def moment(profile: np.ndarray, config: ChannelConfig) -> float:
    """Trapezoid ``int phi sin(pi z / L) dz``; exact for sine-series profiles."""
    z = config.z
    return float(np.sum(profile * np.sin(math.pi * z / config.L)) * config.dz)


def sine_moment_inequality_check(profile: np.ndarray, config: ChannelConfig, gamma: float) -> float:
    """Ratio ``m^gamma / (c_gamma int phi^gamma sin)``, at most 1 for phi >= 0."""
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if (profile < 0).any():
        return float("nan")
    s = np.sin(math.pi * config.z / config.L)
    lhs = (np.sum(profile * s) * config.dz) ** gamma
    rhs = c_gamma(gamma, config.L) * np.sum(profile ** gamma * s) * config.dz
    if rhs == 0:
        return 0.0 if lhs == 0 else math.inf
    return float(lhs / rhs)


def _drift_margin(m, cfg):
    c_a = c_gamma(2 * cfg.alpha + 1, cfg.L)
    c_b = c_gamma(2 * cfg.beta + 1, cfg.L)
    return (3 * abs(cfg.a) / (4 * c_a)) * m ** (2 * cfg.alpha) \
        - cfg.nu * (math.pi / cfg.L) ** 2 - (abs(cfg.b) / c_b) * m ** (2 * cfg.beta)


def compute_m_star(config: ChannelConfig, lo: float = 1e-12, hi: float = 1e12) -> float:
    """Threshold moment above which the moment drift dominates, by bisection."""
    cfg = config
    if not cfg.a < 0:
        raise ValueError("compute_m_star needs a < 0")
    if _drift_margin(hi, cfg) <= 0:
        raise ValueError(f"no threshold moment in [{lo:g}, {hi:g}]")
    if _drift_margin(lo, cfg) > 0:
        return lo
    for _ in range(400):
        mid = math.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _drift_margin(mid, cfg) > 0:
            hi = mid
        else:
            lo = mid
    return hi


def m_star_closed_form(config: ChannelConfig) -> float:
    """Threshold with b = 0: ``(4 nu c (pi/L)^2 / (3|a|))^{1/(2 alpha)}``."""
    cfg = config
    c = c_gamma(2 * cfg.alpha + 1, cfg.L)
    return (4 * cfg.nu * c * (math.pi / cfg.L) ** 2 / (3 * abs(cfg.a))) ** (1 / (2 * cfg.alpha))


def moment_bound_rhs(m: float, config: ChannelConfig) -> float:
    """``|a| m^{2 alpha + 1} / (4 c_{2 alpha + 1})``."""
    return abs(config.a) * m ** (2 * config.alpha + 1) / (4 * c_gamma(2 * config.alpha + 1,
                                                                          config.L))


def predict_blowup_bound(m0: float, config: ChannelConfig) -> float:
    """Upper bound ``2 c_{2 alpha + 1} / (alpha |a| m0^{2 alpha})`` on the blow-up time."""
    ms = compute_m_star(config)
    if m0 < 2 * ms:
        raise ValueError(f"m0={m0:g} is below 2 m* = {2 * ms:g}; the bound does not apply")
    c = c_gamma(2 * config.alpha + 1, config.L)
    return 2 * c / (config.alpha * abs(config.a) * m0 ** (2 * config.alpha))


# runs

BLOWUP_COLUMNS = ("t", "max_abs_phi", "min_phi", "m", "dm_dt", "bound_rhs")


@dataclass
class ChannelRun:
    config: ChannelConfig
    times: np.ndarray
    max_abs: np.ndarray
    min_val: np.ndarray
    moments: np.ndarray
    blew_up: bool
    t_detect: Optional[float]
    t_last_finite: float
    final_profile: np.ndarray
    dt: float
    safety: float
    steps: np.ndarray = None

    def dm_dt(self) -> np.ndarray:
        """Second-order difference of the moment series on the nonuniform steps.

        Uses the step sizes themselves rather than differences of time stamps,
        which lose all precision once steps shrink below the spacing of
        floating-point numbers near t.
        """
        m, h = self.moments, self.steps
        out = np.zeros_like(m)
        if len(m) < 3:
            if len(m) == 2:
                out[:] = (m[1] - m[0]) / h[0]
            return out
        h1, h2 = h[:-1], h[1:]
        out[1:-1] = (-h2 / (h1 * (h1 + h2)) * m[:-2] + (h2 - h1) / (h1 * h2) * m[1:-1]
                     + h1 / (h2 * (h1 + h2)) * m[2:])
        out[0] = (m[1] - m[0]) / h[0]
        out[-1] = (m[-1] - m[-2]) / h[-1]
        return out

    def rows(self):
        d = self.dm_dt()
        rhs = [moment_bound_rhs(m, self.config) if m >= 0 else float("nan") for m in self.moments]
        return list(zip(self.times, self.max_abs, self.min_val, self.moments, d, rhs))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(BLOWUP_COLUMNS)
            for r in self.rows():
                w.writerow([repr(float(x)) for x in r])


def run_channel(config: ChannelConfig, horizon: float, dt: Optional[float] = None,
                threshold: float = 1e8, safety: float = 0.05) -> ChannelRun:
    """Integrate until ``horizon`` or until max|phi| exceeds ``threshold``.

    The step is ``min(dt, safety / r)`` with ``r`` the largest pointwise
    reaction rate, so the fast final growth is resolved.
    """
    cfg = config
    dt = dt or cfg.dt
    solver = ChannelSolver(cfg)
    prof = cfg.initial_profile()
    y = solver.to_state(prof)
    t = 0.0
    times, mx, mn, ms = [0.0], [float(np.abs(prof).max())], [float(prof.min())], \
        [moment(prof, cfg)]
    steps = []
    blew, t_det = False, None
    while t < horizon * (1 - 1e-14):
        peak = mx[-1]
        rate = abs(cfg.a) * peak ** (2 * cfg.alpha) + abs(cfg.b) * peak ** (2 * cfg.beta)
        h = min(dt, horizon - t)
        if rate > 0:
            h = min(h, safety / rate)
        with np.errstate(over="ignore", invalid="ignore"):
            y_new = solver.step(y, h)
        prof_new = solver.to_profile(y_new)
        if not np.isfinite(prof_new).all():
            blew, t_det = True, t + h
            break
        y, t, prof = y_new, t + h, prof_new
        steps.append(h)
        times.append(t)
        mx.append(float(np.abs(prof).max()))
        mn.append(float(prof.min()))
        ms.append(moment(prof, cfg))
        if mx[-1] > threshold:
            blew, t_det = True, t
            break
    return ChannelRun(cfg, np.array(times), np.array(mx), np.array(mn), np.array(ms), blew,
                      t_det, t, prof, dt, safety, np.array(steps))


@dataclass
class PositivityReport:
    min_value: float
    worst_margin: float
    passed: bool


def positivity_check(run: ChannelRun) -> PositivityReport:
    """Pass iff ``min phi >= -1e-8 max(1, max phi)`` at every recorded time."""
    tol = 1e-8 * np.maximum(1.0, run.max_abs)
    margin = run.min_val + tol
    return PositivityReport(float(run.min_val.min()), float(margin.min()),
                            bool((margin >= 0).all()))


@dataclass
class BlowupResult:
    blew_up: bool
    t_detect: Optional[float]
    runs: list = field(default_factory=list)

    @property
    def final(self) -> ChannelRun:
        return self.runs[-1]


def detect_blowup(config: ChannelConfig, horizon: float, threshold: float = 1e8,
                  safety: float = 0.05, rel_tol: float = 0.01,
                  max_refinements: int = 8) -> BlowupResult:
    """Detect blow-up, halving dt (and the reaction safety factor) until t_detect settles."""
    dt = config.dt
    runs = [run_channel(config, horizon, dt, threshold, safety)]
    if not runs[0].blew_up:
        return BlowupResult(False, None, runs)
    for _ in range(max_refinements):
        dt, safety = dt / 2, safety / 2
        runs.append(run_channel(config, horizon, dt, threshold, safety))
        a, b = runs[-2], runs[-1]
        if not b.blew_up:
            return BlowupResult(False, None, runs)
        if abs(b.t_detect - a.t_detect) < rel_tol * b.t_detect:
            break
    return BlowupResult(True, runs[-1].t_detect, runs)
