"""Coarse observation operators I_h and the observation archive.

Three operators are provided:

* ``modal``  - orthogonal projection onto integer wavevectors with
  ``|k|_2 <= floor(L / (2 pi h))``;
* ``volume`` - averages over the N = (L/h)^3 cubes of side h, extended
  piecewise-constant;
* ``nodal``  - point values at one node per cube (cell centers by default),
  extended piecewise-constant.

Cell means and node values are computed exactly from the Fourier series, so
they are not limited to the collocation points.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import nnls

from .spectral import Grid, PhysicalField, SpectralField, project_coeffs

KINDS = ("modal", "volume", "nodal")
_EPS = 1e-9


@dataclass(frozen=True)
class InterpolantSpec:
    kind: str
    h: float
    box_length: float = 2 * math.pi
    offset: float = 0.5  # node position inside its cell, as a fraction of h

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown interpolant kind {self.kind!r}")
        if not self.h > 0:
            raise ValueError("resolution h must be positive")
        if self.kind == "modal":
            if self.cutoff < 1:
                raise ValueError(
                    f"modal cutoff Kc = floor(L/(2 pi h)) = 0 for h={self.h:g}, "
                    f"L={self.box_length:g}: h too large")
        else:
            ratio = self.box_length / self.h
            if abs(ratio - round(ratio)) > _EPS * ratio:
                raise ValueError(f"L/h = {ratio:g} is not an integer: N is not a perfect cube")
            if round(ratio) < 2:
                raise ValueError("need at least 8 cells (h <= L/2)")
            if not 0 <= self.offset < 1:
                raise ValueError("nodal offset must lie in [0, 1)")

    @classmethod
    def from_cells(cls, kind: str, cells_per_dim: int, box_length: float = 2 * math.pi,
                   **kw) -> "InterpolantSpec":
        return cls(kind, box_length / cells_per_dim, box_length, **kw)

    @classmethod
    def from_cutoff(cls, cutoff: int, box_length: float = 2 * math.pi) -> "InterpolantSpec":
        """Modal spec whose cutoff is exactly ``cutoff``."""
        return cls("modal", box_length / (2 * math.pi * cutoff), box_length)

    @property
    def cutoff(self) -> int:
        return int(math.floor(self.box_length / (2 * math.pi * self.h) + _EPS))

    @property
    def cells_per_dim(self) -> int:
        return int(round(self.box_length / self.h))

    @property
    def n_cells(self) -> int:
        return self.cells_per_dim ** 3

    @property
    def payload_length(self) -> int:
        """Number of float64 values per observation (all three components)."""
        if self.kind == "modal":
            return 3 * 2 * len(_ball(self.cutoff))
        return 3 * self.n_cells

    def check_grid(self, grid: Grid) -> None:
        if abs(grid.length - self.box_length) > 1e-12 * self.box_length:
            raise ValueError("interpolant box length differs from the grid's")
        if self.kind != "modal" and grid.n % self.cells_per_dim:
            raise ValueError(
                f"grid n={grid.n} is not a multiple of {self.cells_per_dim} cells per dimension")


def _ball(kc: int) -> list:
    """Integer wavevectors with |k|_2 <= kc in lexicographic order."""
    r = range(-kc, kc + 1)
    return [(i, j, k) for i in r for j in r for k in r if i * i + j * j + k * k <= kc * kc]


def modal_mask(spec: InterpolantSpec, grid: Grid) -> np.ndarray:
    return grid.k_int_sq <= spec.cutoff ** 2 + _EPS


def _axis_matrix(grid: Grid, spec: InterpolantSpec, half: bool) -> np.ndarray:
    """Per-axis evaluation (nodal) or averaging (volume) matrix, (cells, modes)."""
    c = spec.cells_per_dim
    h = spec.h
    if half:
        k = np.arange(grid.n // 2 + 1, dtype=float)
    else:
        k = np.fft.fftfreq(grid.n, d=1.0 / grid.n)
    kap = grid.scale * k[None, :]
    nyq = np.abs(k) == grid.n // 2
    left = (np.arange(c) * h)[:, None]
    if spec.kind == "nodal":
        x = left + spec.offset * h
        m = np.exp(1j * kap * x)
        m[:, nyq] = np.cos(kap[:, nyq] * x)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            m = np.exp(1j * kap * left) * (np.exp(1j * kap * h) - 1) / (1j * kap * h)
            m[:, nyq] = (np.sin(kap[:, nyq] * (left + h)) - np.sin(kap[:, nyq] * left)) \
                / (kap[:, nyq] * h)
        m[:, k == 0] = 1.0
    if half:
        w = np.full(k.shape, 2.0)
        w[0] = 1.0
        w[nyq] = 1.0
        m = m * w[None, :]
    return m


class _CellOperator:
    """Cached separable matrices for one (spec, grid) pair."""

    _cache: dict = {}

    def __init__(self, spec: InterpolantSpec, grid: Grid):
        self.mx = _axis_matrix(grid, spec, half=False)
        self.mz = _axis_matrix(grid, spec, half=True)

    @classmethod
    def get(cls, spec, grid):
        key = (spec, grid)
        if key not in cls._cache:
            if len(cls._cache) > 32:
                cls._cache.clear()
            cls._cache[key] = cls(spec, grid)
        return cls._cache[key]

    def values(self, coeffs: np.ndarray) -> np.ndarray:
        a = np.tensordot(coeffs, self.mx, axes=([-3], [1]))       # (..., ky, kz, cx)
        a = np.tensordot(a, self.mx, axes=([-3], [1]))            # (..., kz, cx, cy)
        a = np.tensordot(a, self.mz, axes=([-3], [1])).real       # (..., cx, cy, cz)
        return a


def cell_values(spec: InterpolantSpec, grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Cell means (volume) or node values (nodal), shape (..., c, c, c)."""
    if spec.kind == "modal":
        raise ValueError("modal interpolant has no cell values")
    spec.check_grid(grid)
    return _CellOperator.get(spec, grid).values(coeffs)


def expand_cells(spec: InterpolantSpec, grid: Grid, vals: np.ndarray) -> np.ndarray:
    """Piecewise-constant extension of cell values to the collocation grid."""
    r = grid.n // spec.cells_per_dim
    out = np.repeat(vals, r, axis=-3)
    out = np.repeat(out, r, axis=-2)
    return np.repeat(out, r, axis=-1)


def interpolant_physical(spec: InterpolantSpec, grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Samples of I_h(psi) on the collocation grid."""
    spec.check_grid(grid)
    if spec.kind == "modal":
        return grid.inverse(np.where(modal_mask(spec, grid), coeffs, 0))
    return expand_cells(spec, grid, cell_values(spec, grid, coeffs))


def nudging_coeffs(spec: InterpolantSpec, grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Leray-projected, Nyquist-free coefficients of I_h applied to a (3, ...) field."""
    if spec.kind == "modal":
        out = np.where(modal_mask(spec, grid), coeffs, 0)
    else:
        out = project_coeffs(grid, grid.forward(interpolant_physical(spec, grid, coeffs)))
    out[:, ~grid.nyquist_free] = 0.0
    return out


def apply_interpolant(spec: InterpolantSpec, u) -> PhysicalField:
    """I_h applied componentwise to a spectral or physical field."""
    grid = u.grid
    coeffs = u.coeffs if isinstance(u, SpectralField) else grid.forward(u.values)
    return PhysicalField(grid, interpolant_physical(spec, grid, coeffs))


def interpolation_error_sq(spec: InterpolantSpec, grid: Grid, coeffs: np.ndarray) -> float:
    """Exact ``||psi - I_h psi||_2^2`` for a band-limited psi (summed over components)."""
    spec.check_grid(grid)
    if spec.kind == "modal":
        return grid.norm_sq(np.where(modal_mask(spec, grid), 0, coeffs))
    total = grid.norm_sq(coeffs)
    cell_vol = spec.h ** 3
    if spec.kind == "volume":
        means = cell_values(spec, grid, coeffs)
        return total - cell_vol * float((means ** 2).sum())
    nodes = cell_values(spec, grid, coeffs)
    means = cell_values(InterpolantSpec("volume", spec.h, spec.box_length), grid, coeffs)
    return total - 2 * cell_vol * float((nodes * means).sum()) \
        + cell_vol * float((nodes ** 2).sum())


# constant estimation

def random_test_fields(grid: Grid, count: int, seed: int = 0, kmax: Optional[float] = None,
                       slope_range=(0.0, 3.0)) -> list:
    """Smooth random band-limited scalar fields with varied bands and spectral slopes."""
    rng = np.random.default_rng(seed)
    kmax_hi = kmax if kmax is not None else grid.n // 2 - 1
    kx, ky, kz = grid.k_int
    k = np.sqrt(grid.k_int_sq)
    out = []
    for _ in range(count):
        band = rng.uniform(1.0, kmax_hi) if kmax is None else kmax
        slope = rng.uniform(*slope_range)
        raw = rng.standard_normal(grid.shape)
        c = grid.forward(raw)
        amp = np.where((k <= band) & (k > 0), np.maximum(k, 1.0) ** (-slope), 0.0)
        c = c * amp
        c[~grid.nyquist_free] = 0.0
        c[0, 0, 0] = rng.standard_normal() * abs(c).max()
        out.append(SpectralField(grid, c))
    return out


@dataclass
class ConstantsEstimate:
    kind: str
    c0: float
    c1: float = 0.0
    c0_by_h: dict = field(default_factory=dict)
    holdout_max_ratio: Optional[float] = None
    holdout_ok: Optional[bool] = None

    @property
    def gate_c0(self) -> float:
        return 1.0 if self.kind == "modal" else 1.1 * self.c0

    @property
    def gate_c1(self) -> float:
        return 0.0 if self.kind == "modal" else 1.1 * self.c1


def _terms(spec, fields):
    rows = []
    for f in fields:
        g = f.grid
        grad = g.grad_norm_sq(f.coeffs)
        if grad <= 1e-14 * max(g.norm_sq(f.coeffs), 1e-300):
            continue
        rows.append((interpolation_error_sq(spec, g, f.coeffs), spec.h ** 2 * grad,
                     spec.h ** 4 * g.lap_norm_sq(f.coeffs)))
    return np.array(rows).reshape(-1, 3)


def estimate_interpolant_constants(specs, ensemble: Sequence[SpectralField],
                                   holdout: Optional[Sequence[SpectralField]] = None,
                                   min_size: int = 100) -> ConstantsEstimate:
    """Fit the constants of ||psi - I_h psi||^2 <= c0 h^2 ||grad psi||^2 (+ c1 h^4 ||lap psi||^2).

    ``specs`` is one spec or several of the same kind at different h. For
    modal/volume, ``c0`` is the largest ratio seen. For nodal, (c0, c1) come
    from a nonnegative least-squares fit scaled up to an upper envelope.
    A holdout set, if given, is checked against the gate constants.
    """
    if isinstance(specs, InterpolantSpec):
        specs = [specs]
    kinds = {s.kind for s in specs}
    if len(kinds) != 1:
        raise ValueError("all specs must have the same kind")
    kind = kinds.pop()
    if len(ensemble) < min_size:
        raise ValueError(f"ensemble too small: {len(ensemble)} < {min_size}")
    per_h = {}
    rows = []
    for s in specs:
        r = _terms(s, ensemble)
        if len(r) == 0:
            raise ValueError("degenerate ensemble: every field has zero gradient")
        per_h[s.h] = float((r[:, 0] / r[:, 1]).max())
        rows.append(r)
    rows = np.vstack(rows)
    if kind == "nodal":
        if len(specs) < 2:
            raise ValueError("nodal fit needs at least two h values")
        scale = rows[:, 0].copy()
        scale[scale == 0] = 1.0
        (c0, c1), _ = nnls(rows[:, 1:] / scale[:, None], np.ones(len(rows)))
        if c0 == 0 and c1 == 0:
            c0 = max(per_h.values())
        env = rows[:, 0] / (c0 * rows[:, 1] + c1 * rows[:, 2])
        factor = float(env.max())
        est = ConstantsEstimate(kind, c0 * factor, c1 * factor, per_h)
    else:
        est = ConstantsEstimate(kind, max(per_h.values()), 0.0, per_h)
    if holdout is not None:
        worst = 0.0
        for s in specs:
            r = _terms(s, holdout)
            bound = est.gate_c0 * r[:, 1] + est.gate_c1 * r[:, 2]
            worst = max(worst, float((r[:, 0] / bound).max()))
        est.holdout_max_ratio = worst
        est.holdout_ok = worst <= 1.0
    return est


# observation archive
#
# Layout (little-endian):
#   header  struct "<8sIIdIdddqQ":
#           magic b"BFEDOBS\0", version (1), kind (0 modal, 1 volume, 2 nodal),
#           h, grid n, L, dt_obs, noise sigma, seed, payload length P
#   records repeated: time (float64) then P float64 payload values.
# Payload, component-major (u_x block, u_y block, u_z block):
#   modal         (re, im) of every retained coefficient, wavevectors in
#                 lexicographic (kx, ky, kz) order over the full ball
#   volume/nodal  cell values in row-major (ix, iy, iz) cell order

ARCHIVE_MAGIC = b"BFEDOBS\0"
ARCHIVE_VERSION = 1
_HEADER = struct.Struct("<8sIIdIdddqQ")


@dataclass
class ObservationSnapshot:
    time: float
    kind: str
    payload: np.ndarray

    def __post_init__(self):
        self.payload = np.asarray(self.payload, dtype=float)


def encode_observation(spec: InterpolantSpec, grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    spec.check_grid(grid)
    if spec.kind == "modal":
        idx = _ball_index(spec, grid)
        sel = coeffs[:, idx[0], idx[1], idx[2]]
        return np.stack([sel.real, sel.imag], axis=-1).reshape(-1)
    return cell_values(spec, grid, coeffs).reshape(-1)


def _ball_index(spec, grid):
    ball = np.array(_ball(spec.cutoff))
    if spec.cutoff >= grid.n // 2:
        raise ValueError("modal cutoff exceeds the grid's resolved modes")
    return ball[:, 0] % grid.n, ball[:, 1] % grid.n, ball[:, 2]


def decode_observation(spec: InterpolantSpec, grid: Grid, payload: np.ndarray) -> np.ndarray:
    """Grid representation of an observation: I_h(u) as (3, ...) coefficients.

    For modal payloads the result is the retained coefficients; for
    volume/nodal it is the transform of the piecewise-constant extension
    (not projected).
    """
    if len(payload) != spec.payload_length:
        raise ValueError(f"payload length {len(payload)} != {spec.payload_length}")
    if spec.kind == "modal":
        ix, iy, kz = _ball_index(spec, grid)
        vals = payload.reshape(3, -1, 2)
        out = np.zeros((3,) + grid.spectral_shape, dtype=complex)
        keep = kz >= 0
        out[:, ix[keep], iy[keep], kz[keep]] = vals[:, keep, 0] + 1j * vals[:, keep, 1]
        return out
    c = spec.cells_per_dim
    return grid.forward(expand_cells(spec, grid, payload.reshape(3, c, c, c)))


def observation_physical(spec: InterpolantSpec, grid: Grid, payload: np.ndarray) -> np.ndarray:
    if spec.kind == "modal":
        return grid.inverse(decode_observation(spec, grid, payload))
    c = spec.cells_per_dim
    return expand_cells(spec, grid, payload.reshape(3, c, c, c))


@dataclass
class ObservationArchive:
    spec: InterpolantSpec
    n: int
    dt_obs: float
    noise_sigma: float = 0.0
    seed: int = 0
    snapshots: list = field(default_factory=list)

    @property
    def grid(self) -> Grid:
        return Grid(self.n, self.spec.box_length)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    def latest(self, t: float) -> ObservationSnapshot:
        """Most recent snapshot at or before ``t`` (zero-order hold)."""
        times = self.times
        i = int(np.searchsorted(times, t + 1e-9 * max(self.dt_obs, 1.0), side="right")) - 1
        if i < 0:
            raise LookupError(f"no observation at or before t={t:g}")
        return self.snapshots[i]

    def header_bytes(self) -> bytes:
        return _HEADER.pack(ARCHIVE_MAGIC, ARCHIVE_VERSION, KINDS.index(self.spec.kind),
                            self.spec.h, self.n, self.spec.box_length, self.dt_obs,
                            self.noise_sigma, self.seed, self.spec.payload_length)

    def write(self, path) -> None:
        with ArchiveWriter(path, self) as w:
            for s in self.snapshots:
                w.append(s)

    @classmethod
    def read(cls, path, offset: float = 0.5) -> "ObservationArchive":
        with open(path, "rb") as fh:
            head = fh.read(_HEADER.size)
            if len(head) < _HEADER.size:
                raise ValueError(f"{path}: truncated archive header")
            magic, version, kind, h, n, L, dt_obs, sigma, seed, plen = _HEADER.unpack(head)
            if magic != ARCHIVE_MAGIC:
                raise ValueError(f"{path}: not an observation archive")
            if version != ARCHIVE_VERSION:
                raise ValueError(f"{path}: unsupported archive version {version}")
            spec = InterpolantSpec(KINDS[kind], h, L, offset=offset)
            if plen != spec.payload_length:
                raise ValueError(f"{path}: payload length mismatch")
            raw = np.frombuffer(fh.read(), dtype="<f8")
        rec = raw.reshape(-1, plen + 1)
        snaps = [ObservationSnapshot(float(r[0]), spec.kind, r[1:].copy()) for r in rec]
        return cls(spec, n, dt_obs, sigma, seed, snaps)


class ArchiveWriter:
    """Append-only writer; header first, then one record per snapshot."""

    def __init__(self, path, archive: ObservationArchive):
        self.path = path
        self.archive = archive
        self._fh = None

    def __enter__(self):
        self._fh = open(self.path, "wb")
        self._fh.write(self.archive.header_bytes())
        return self

    def append(self, snap: ObservationSnapshot) -> None:
        self._fh.write(np.float64(snap.time).astype("<f8").tobytes())
        self._fh.write(np.ascontiguousarray(snap.payload, dtype="<f8").tobytes())

    def __exit__(self, *exc):
        self._fh.close()


def record_observations(solver, state, spec: InterpolantSpec, dt_obs: float, horizon: float,
                        dt: float, sink=None, noise_sigma: float = 0.0,
                        seed: int = 0):
    """Run ``solver`` from ``state`` and record I_h(u) every ``dt_obs`` up to ``horizon``.

    Returns ``(archive, final_state)``. ``sink`` is an optional file path; the
    archive is streamed there as it is produced. Gaussian noise of standard
    deviation ``noise_sigma`` is added to volume/nodal values, or (modal) a
    projected white-noise field of that pointwise deviation.
    """
    if not dt_obs > 0:
        raise ValueError("dt_obs must be positive")
    ratio = dt_obs / dt
    stride = int(round(ratio))
    if dt_obs <= horizon and (stride < 1 or abs(ratio - stride) > 1e-9 * ratio):
        raise ValueError("dt_obs must be a positive multiple of dt")
    grid = state.grid
    spec.check_grid(grid)
    archive = ObservationArchive(spec, grid.n, dt_obs, noise_sigma, seed)
    rng = np.random.default_rng(seed)
    nsteps = int(round(horizon / dt))

    def snap(st):
        payload = encode_observation(spec, grid, st.coeffs)
        if noise_sigma > 0:
            if spec.kind == "modal":
                noise = grid.forward(noise_sigma * rng.standard_normal((3,) + grid.shape))
                payload = payload + encode_observation(spec, grid, noise)
            else:
                payload = payload + noise_sigma * rng.standard_normal(payload.shape)
        return ObservationSnapshot(st.time, spec.kind, payload)

    writer = ArchiveWriter(sink, archive) if sink is not None else None
    try:
        if writer is not None:
            writer.__enter__()

        def keep(s):
            archive.snapshots.append(s)
            if writer is not None:
                writer.append(s)

        keep(snap(state))
        for i in range(1, nsteps + 1):
            state = solver.step(state, dt)
            if dt_obs <= horizon and i % stride == 0:
                keep(snap(state))
    finally:
        if writer is not None:
            writer.__exit__(None, None, None)
    return archive, state
