"""Brinkman-Forchheimer-extended Darcy flow in a periodic box.

Solves

    du/dt - nu lap u + (u.grad)u + grad p + a|u|^{2 alpha} u + b|u|^{2 beta} u = f,
    div u = 0,

in Leray-projected Fourier form. The viscous term is integrated exactly per
mode (integrating factor); everything else is advanced with Heun's method in
the integrating-factor variables (IF-RK2).
"""
from __future__ import annotations

import json
import logging
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .spectral import Grid, PhysicalField, curl, project_coeffs, solenoidal_random_coeffs

log = logging.getLogger(__name__)

SCHEMES = ("ifrk2",)


class BlowUpError(RuntimeError):
    """Raised when a step produces non-finite values."""

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


@dataclass
class ForcingSpec:
    """Time-independent body force; projected onto divergence-free fields."""

    kind: str = "zero"  # zero | single_mode | band_limited_random
    component: int = 0
    wavenumber: tuple = (0, 0, 1)
    amplitude: float = 0.0
    kmax: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("zero", "single_mode", "band_limited_random"):
            raise ValueError(f"unknown forcing kind {self.kind!r}")
        self.wavenumber = tuple(int(k) for k in self.wavenumber)

    def coeffs(self, grid: Grid) -> np.ndarray:
        out = np.zeros((3,) + grid.spectral_shape, dtype=complex)
        if self.kind == "zero" or self.amplitude == 0.0:
            return out
        if self.kind == "single_mode":
            x, y, z = grid.mesh
            kx, ky, kz = self.wavenumber
            phase = grid.scale * (kx * x + ky * y + kz * z)
            vals = np.zeros((3,) + grid.shape)
            vals[self.component] = self.amplitude * np.sin(phase)
            out = project_coeffs(grid, grid.forward(vals))
            out[:, ~grid.nyquist_free] = 0.0
            return out
        rng = np.random.default_rng(self.seed)
        out = solenoidal_random_coeffs(grid, self.kmax, rng)
        rms = math.sqrt(grid.norm_sq(out) / grid.volume)
        return out * (self.amplitude / rms)


@dataclass
class BfedParams:
    nu: float
    a: float = 0.0
    b: float = 0.0
    alpha: float = 1.5
    beta: float = 0.5
    box_length: float = 2 * math.pi
    forcing: ForcingSpec = field(default_factory=ForcingSpec)

    def __post_init__(self):
        if isinstance(self.forcing, dict):
            self.forcing = ForcingSpec(**self.forcing)
        if not self.nu > 0:
            raise ValueError("viscosity nu must be positive")
        if not (self.alpha > self.beta >= 0):
            raise ValueError(f"need alpha > beta >= 0, got alpha={self.alpha}, beta={self.beta}")
        if not (self.alpha > 1 and self.a > 0):
            warnings.warn("parameters outside the strong-solution regime (alpha > 1, a > 0)",
                          stacklevel=2)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class VelocityState:
    """Divergence-free velocity coefficients, shape (3, n, n, n//2+1), at ``time``."""

    grid: Grid
    coeffs: np.ndarray
    time: float = 0.0

    def copy(self) -> "VelocityState":
        return VelocityState(self.grid, self.coeffs.copy(), self.time)

    def physical(self) -> np.ndarray:
        return self.grid.inverse(self.coeffs)

    @classmethod
    def from_physical(cls, grid: Grid, values, time: float = 0.0) -> "VelocityState":
        coeffs = project_coeffs(grid, grid.forward(values))
        coeffs[:, ~grid.nyquist_free] = 0.0
        return cls(grid, coeffs, time)


def _power(s: np.ndarray, p: float) -> np.ndarray:
    """``s**p`` for s >= 0 with ``s**0 == 1`` everywhere (including s = 0)."""
    if p == 0:
        return np.ones_like(s)
    if float(p).is_integer():
        return s ** int(p)
    if float(2 * p).is_integer():
        return s ** int(math.floor(p)) * np.sqrt(s)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(p * np.log(s[pos]))
    return out


def damping_coefficient(speed_sq: np.ndarray, params: BfedParams) -> np.ndarray:
    """Scalar ``a|u|^{2 alpha} + b|u|^{2 beta}`` from ``|u|^2``."""
    out = np.zeros_like(speed_sq)
    if params.a != 0:
        out += params.a * _power(speed_sq, params.alpha)
    if params.b != 0:
        out += params.b * _power(speed_sq, params.beta)
    return out


def damping_term(u: np.ndarray, params: BfedParams) -> np.ndarray:
    """Pointwise ``a|u|^{2 alpha} u + b|u|^{2 beta} u`` for a (3, ...) array.

    With beta = 0 the pumping term is the linear drag ``b u``.
    """
    u = np.asarray(u, dtype=float)
    s = np.einsum("i...,i...->...", u, u)
    return damping_coefficient(s, params) * u


def advection_term(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Convective ``(u.grad)u`` on the collocation grid, dealiased (3/2 rule).

    Returns a (3, n, n, n) array. The solver itself uses the rotational form,
    which agrees with this one after Leray projection.
    """
    kd = grid.k_deriv
    grads = np.stack([1j * kd[j] * coeffs for j in range(3)])  # [j, i] = d_j u_i
    u_p = grid.to_padded_physical(coeffs)
    g_p = grid.to_padded_physical(grads)
    prod = np.einsum("j...,ji...->i...", u_p, g_p)
    return grid.inverse(grid.from_padded_physical(prod))


class BfedModel:
    """Precomputed operators for one grid / parameter set."""

    def __init__(self, grid: Grid, params: BfedParams):
        if abs(grid.length - params.box_length) > 1e-12 * params.box_length:
            raise ValueError("grid box length differs from params.box_length")
        self.grid = grid
        self.params = params
        self.forcing = params.forcing.coeffs(grid)
        self.linear = -params.nu * grid.k_sq  # per-mode viscous rate
        self.keep = grid.nyquist_free
        self.last_max_speed = 0.0

    def nonlinear(self, coeffs: np.ndarray) -> np.ndarray:
        """Projected tendency ``-P[(u.grad)u + damping] + f`` (viscous part excluded)."""
        grid = self.grid
        w = curl(grid, coeffs)
        phys = grid.to_padded_physical(np.concatenate([coeffs, w]))
        u, om = phys[:3], phys[3:]
        s = u[0] * u[0] + u[1] * u[1] + u[2] * u[2]
        self.last_max_speed = float(np.sqrt(s.max()))
        total = np.cross(om, u, axis=0)
        if self.params.a != 0 or self.params.b != 0:
            total += damping_coefficient(s, self.params) * u
        out = -project_coeffs(grid, grid.from_padded_physical(total))
        out += self.forcing
        return out

    def cfl(self, dt: float) -> float:
        return self.last_max_speed * dt / self.grid.dx


def rhs(state: VelocityState, params: BfedParams, nudging=None,
        model: Optional[BfedModel] = None) -> np.ndarray:
    """Projected tendency excluding the viscous term (handled by the integrator).

    ``nudging`` is an optional callable ``(state) -> coeffs`` returning the
    already-projected feedback term ``mu (I_h(u_obs) - I_h(v))``.
    """
    model = model or BfedModel(state.grid, params)
    out = model.nonlinear(state.coeffs)
    if nudging is not None:
        out = out + nudging(state)
    return out


def ifrk2_step(y: np.ndarray, t: float, dt: float,
               explicit: Callable[[np.ndarray, float], np.ndarray],
               propagate: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """One Heun step in integrating-factor variables.

    ``propagate`` applies the exact linear propagator over ``dt``.
    """
    k1 = explicit(y, t)
    y1 = propagate(y + dt * k1)
    k2 = explicit(y1, t + dt)
    return propagate(y + 0.5 * dt * k1) + 0.5 * dt * k2


class Solver:
    """Time stepper for the unforced-by-data BFeD system."""

    def __init__(self, grid: Grid, params: BfedParams, scheme: str = "ifrk2"):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        self.model = BfedModel(grid, params)
        self.scheme = scheme
        self._factor_dt = None
        self._factor = None

    @property
    def grid(self) -> Grid:
        return self.model.grid

    def factor(self, dt: float) -> np.ndarray:
        if dt != self._factor_dt:
            self._factor = np.exp(self.model.linear * dt)
            self._factor_dt = dt
        return self._factor

    def step(self, state: VelocityState, dt: float) -> VelocityState:
        if not dt > 0:
            raise ValueError("dt must be positive")
        e = self.factor(dt)
        y = ifrk2_step(state.coeffs, state.time, dt,
                       lambda c, t: self.model.nonlinear(c), lambda c: e * c)
        y = project_coeffs(self.grid, y)
        y[:, ~self.grid.nyquist_free] = 0.0
        t = state.time + dt
        if not np.isfinite(y).all():
            raise BlowUpError(f"non-finite velocity at t={t:.6g}", state.time)
        cfl = self.model.cfl(dt)
        if cfl >= 1:
            log.warning("CFL number %.3f >= 1 at t=%.4g", cfl, t)
        return VelocityState(self.grid, y, t)

    def advance(self, state: VelocityState, dt: float, nsteps: int,
                callback: Optional[Callable[[int, VelocityState], None]] = None
                ) -> VelocityState:
        for i in range(nsteps):
            state = self.step(state, dt)
            if callback is not None:
                callback(i + 1, state)
        return state


def step(state: VelocityState, params: BfedParams, dt: float,
         scheme: str = "ifrk2") -> VelocityState:
    """Advance ``state`` by one step of size ``dt`` (builds a throwaway Solver)."""
    return Solver(state.grid, params, scheme).step(state, dt)


# energy balance

@dataclass
class EnergySample:
    """Terms of the energy identity at one instant."""

    t: float
    half_l2_sq: float
    viscous: float
    damping: float
    pumping: float
    work: float

    @property
    def dissipation(self) -> float:
        return self.viscous + self.damping + self.pumping - self.work


def lp_norm_p(grid: Grid, coeffs: np.ndarray, p: float, padded: bool = False) -> float:
    """``||u||_p^p`` by quadrature of ``|u|^p`` on the collocation (or 3/2-padded) grid."""
    if padded:
        u = grid.to_padded_physical(coeffs)
        cell = (grid.length / grid.padded_n) ** 3
    else:
        u = grid.inverse(coeffs)
        cell = grid.dx ** 3
    s = np.einsum("i...,i...->...", u, u)
    return float(_power(s, p / 2).sum() * cell)


def energy_sample(state: VelocityState, params: BfedParams, forcing: np.ndarray,
                  extra_work: float = 0.0) -> EnergySample:
    """Evaluate the energy-identity terms.

    The L^p terms are integrated on the 3/2-padded grid, the same grid on which
    the solver evaluates the damping, so the discrete balance closes exactly
    up to time-discretization error.
    """
    g = state.grid
    c = state.coeffs
    damp = params.a * lp_norm_p(g, c, 2 * params.alpha + 2, padded=True) if params.a else 0.0
    pump = params.b * lp_norm_p(g, c, 2 * params.beta + 2, padded=True) if params.b else 0.0
    return EnergySample(
        t=state.time,
        half_l2_sq=0.5 * g.norm_sq(c),
        viscous=params.nu * g.grad_norm_sq(c),
        damping=damp,
        pumping=pump,
        work=g.inner(forcing, c) + extra_work,
    )


def energy_balance_residual(first: EnergySample, second: EnergySample) -> float:
    """Residual of ``(1/2 ||u||^2)' + nu||grad u||^2 + a||u||^.. + b||u||^.. - (f,u)``.

    The derivative is the centered difference between the two samples and the
    other terms are averaged to the midpoint.
    """
    dt = second.t - first.t
    if dt <= 0:
        raise ValueError("samples must be in increasing time order")
    dedt = (second.half_l2_sq - first.half_l2_sq) / dt
    return dedt + 0.5 * (first.dissipation + second.dissipation)


# checkpoints
#
# Layout (little-endian):
#   8 bytes   magic b"BFEDCKPT"
#   uint32    format version (1)
#   uint32    header length H in bytes
#   H bytes   UTF-8 JSON header: n, L, time, scheme, seed, params
#   payload   float64 pairs (real, imag) of the (3, n, n, n//2+1) coefficient
#             array in C order

CHECKPOINT_MAGIC = b"BFEDCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, state: VelocityState, params: BfedParams,
                    scheme: str = "ifrk2", seed: int = 0) -> None:
    header = json.dumps({
        "n": state.grid.n, "L": state.grid.length, "time": state.time,
        "scheme": scheme, "seed": seed, "params": params.to_dict(),
    }, sort_keys=True).encode()
    payload = np.ascontiguousarray(state.coeffs, dtype="<c16").view("<f8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(payload.tobytes())


def load_checkpoint(path):
    """Return ``(state, params, header)`` from a checkpoint file."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode())
        raw = np.frombuffer(fh.read(), dtype="<f8")
    grid = Grid(header["n"], header["L"])
    coeffs = raw.view("<c16").reshape((3,) + grid.spectral_shape).astype(complex)
    p = dict(header["params"])
    p["forcing"] = ForcingSpec(**p["forcing"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        params = BfedParams(**p)
    return VelocityState(grid, coeffs, header["time"]), params, header
