"""Fourier representation of periodic fields on the cube [0, L)^3.

Coefficients are stored in the real-FFT half layout, shape ``(n, n, n//2 + 1)``
(with any number of leading component axes), and normalized so that the
``k = 0`` coefficient is the spatial mean::

    values(x) = sum_k coeffs[k] * exp(i (2 pi / L) k . x)

With this convention Parseval reads ``||p||_2^2 = L^3 * sum_k |coeffs[k]|^2``
where the sum runs over the full (conjugate-symmetric) spectrum.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

THREADS_ENV = "BFEDA_THREADS"


def default_threads() -> int:
    """Worker count from ``$BFEDA_THREADS``; 1 if unset or not a positive integer."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


_THREADS = default_threads()


def set_threads(n: int) -> None:
    """Set the worker count used by all FFTs (results do not depend on it)."""
    global _THREADS
    if n < 1:
        raise ValueError("thread count must be positive")
    _THREADS = int(n)


def get_threads() -> int:
    return _THREADS


def _int_wavenumbers(n: int) -> np.ndarray:
    return np.fft.fftfreq(n, d=1.0 / n)


@dataclass(frozen=True)
class Grid:
    """Collocation grid with ``n`` points per dimension on a box of side ``length``."""

    n: int
    length: float = 2 * math.pi

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8 or self.n % 2:
            raise ValueError(f"n_per_dim must be an even integer >= 8, got {self.n}")
        if not self.length > 0:
            raise ValueError(f"box length must be positive, got {self.length}")

    @property
    def shape(self) -> tuple:
        return (self.n, self.n, self.n)

    @property
    def spectral_shape(self) -> tuple:
        return (self.n, self.n, self.n // 2 + 1)

    @property
    def scale(self) -> float:
        """Physical wavenumber of the integer mode 1."""
        return 2 * math.pi / self.length

    @property
    def volume(self) -> float:
        return self.length ** 3

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def padded_n(self) -> int:
        return math.ceil(3 * self.n / 2)

    @cached_property
    def points(self) -> np.ndarray:
        """1D collocation coordinates ``j L / n``."""
        return np.arange(self.n) * self.dx

    @cached_property
    def mesh(self) -> tuple:
        x = self.points
        return np.meshgrid(x, x, x, indexing="ij")

    @cached_property
    def k_int(self) -> tuple:
        """Integer wavenumbers (kx, ky, kz), broadcastable to ``spectral_shape``."""
        k = _int_wavenumbers(self.n)
        kz = np.arange(self.n // 2 + 1, dtype=float)
        return k[:, None, None], k[None, :, None], kz[None, None, :]

    @cached_property
    def k_deriv(self) -> tuple:
        """Physical wavevector used for odd derivatives (Nyquist entries zeroed)."""
        out = []
        for k in self.k_int:
            kk = k.copy()
            kk[np.abs(kk) == self.n // 2] = 0.0
            out.append(self.scale * kk)
        return tuple(out)

    @cached_property
    def k_int_sq(self) -> np.ndarray:
        kx, ky, kz = self.k_int
        return kx ** 2 + ky ** 2 + kz ** 2

    @cached_property
    def k_sq(self) -> np.ndarray:
        """``|kappa|^2`` with ``kappa = (2 pi / L) k``."""
        return self.scale ** 2 * self.k_int_sq

    @cached_property
    def nyquist_free(self) -> np.ndarray:
        """Boolean mask that is False on every mode touching a Nyquist plane."""
        h = self.n // 2
        kx, ky, kz = self.k_int
        return (np.abs(kx) < h) & (np.abs(ky) < h) & (kz < h)

    @cached_property
    def multiplicity(self) -> np.ndarray:
        """Weights turning half-layout sums into full-spectrum sums."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w[None, None, :]

    # transforms on raw arrays; the last three axes are spatial

    def forward(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[-3:] != self.shape:
            raise ValueError(f"expected trailing shape {self.shape}, got {values.shape[-3:]}")
        return sfft.rfftn(values, axes=(-3, -2, -1), workers=_THREADS) / self.n ** 3

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        if coeffs.shape[-3:] != self.spectral_shape:
            raise ValueError(
                f"expected trailing shape {self.spectral_shape}, got {coeffs.shape[-3:]}")
        return sfft.irfftn(coeffs * self.n ** 3, s=self.shape, axes=(-3, -2, -1),
                           workers=_THREADS)

    def pad(self, coeffs: np.ndarray) -> np.ndarray:
        """Embed Nyquist-free coefficients in the 3/2-padded spectral layout."""
        n, m = self.n, self.padded_n
        h = n // 2
        out = np.zeros(coeffs.shape[:-3] + (m, m, m // 2 + 1), dtype=complex)
        lo, hi = slice(0, h), slice(-(h - 1), None)
        for sx in (lo, hi):
            for sy in (lo, hi):
                out[..., sx, sy, :h] = coeffs[..., sx, sy, :h]
        return out

    def unpad(self, padded: np.ndarray) -> np.ndarray:
        """Truncate padded coefficients to the Nyquist-free modes of this grid."""
        n = self.n
        h = n // 2
        out = np.zeros(padded.shape[:-3] + self.spectral_shape, dtype=complex)
        lo, hi = slice(0, h), slice(-(h - 1), None)
        for sx in (lo, hi):
            for sy in (lo, hi):
                out[..., sx, sy, :h] = padded[..., sx, sy, :h]
        return out

    def to_padded_physical(self, coeffs: np.ndarray) -> np.ndarray:
        m = self.padded_n
        return sfft.irfftn(self.pad(coeffs) * m ** 3, s=(m, m, m), axes=(-3, -2, -1),
                           workers=_THREADS)

    def from_padded_physical(self, values: np.ndarray) -> np.ndarray:
        m = self.padded_n
        padded = sfft.rfftn(values, axes=(-3, -2, -1), workers=_THREADS) / m ** 3
        return self.unpad(padded)

    # quadratic forms

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        """L^2 inner product of two real fields from their coefficients."""
        prod = (a * np.conj(b)).real * self.multiplicity
        return float(self.volume * prod.sum())

    def norm_sq(self, coeffs: np.ndarray) -> float:
        return float(self.volume * (np.abs(coeffs) ** 2 * self.multiplicity).sum())

    def grad_norm_sq(self, coeffs: np.ndarray) -> float:
        return float(self.volume * (self.k_sq * np.abs(coeffs) ** 2 * self.multiplicity).sum())

    def lap_norm_sq(self, coeffs: np.ndarray) -> float:
        return float(self.volume
                     * (self.k_sq ** 2 * np.abs(coeffs) ** 2 * self.multiplicity).sum())


@dataclass
class SpectralField:
    """Fourier coefficients of one or more real fields (leading axes are components)."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape[-3:] != self.grid.spectral_shape:
            raise ValueError("coefficient array does not match grid")

    def norm(self) -> float:
        return math.sqrt(self.grid.norm_sq(self.coeffs))


@dataclass
class PhysicalField:
    """Real samples on the collocation grid, row-major ``[ix, iy, iz]``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[-3:] != self.grid.shape:
            raise ValueError(
                f"sample array {self.values.shape} does not match grid {self.grid.shape}")

    def norm(self) -> float:
        """L^2 norm by rectangle-rule quadrature on the collocation grid."""
        return math.sqrt(float((self.values ** 2).sum()) * self.grid.dx ** 3)


def forward_transform(p: PhysicalField) -> SpectralField:
    return SpectralField(p.grid, p.grid.forward(p.values))


def inverse_transform(s: SpectralField) -> PhysicalField:
    return PhysicalField(s.grid, s.grid.inverse(s.coeffs))


def spectral_derivative(s: SpectralField, axis: int) -> SpectralField:
    """Exact derivative along ``axis`` (0, 1, 2 for x, y, z)."""
    return SpectralField(s.grid, 1j * s.grid.k_deriv[axis] * s.coeffs)


def spectral_laplacian(s: SpectralField) -> SpectralField:
    return SpectralField(s.grid, -s.grid.k_sq * s.coeffs)


def divergence(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    kx, ky, kz = grid.k_deriv
    return 1j * (kx * coeffs[0] + ky * coeffs[1] + kz * coeffs[2])


def curl(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    kx, ky, kz = grid.k_deriv
    u, v, w = coeffs
    return 1j * np.stack([ky * w - kz * v, kz * u - kx * w, kx * v - ky * u])


def project_coeffs(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Leray projection of a (3, ...) coefficient array; k = 0 is left unchanged."""
    kx, ky, kz = grid.k_deriv
    k2 = kx ** 2 + ky ** 2 + kz ** 2
    k2 = np.where(k2 == 0.0, 1.0, k2)
    kdotv = (kx * coeffs[0] + ky * coeffs[1] + kz * coeffs[2]) / k2
    return np.stack([coeffs[0] - kx * kdotv, coeffs[1] - ky * kdotv, coeffs[2] - kz * kdotv])


def leray_project(v: Sequence[SpectralField]) -> list:
    grid = v[0].grid
    if any(c.grid != grid for c in v) or len(v) != 3:
        raise ValueError("leray_project needs three components on the same grid")
    out = project_coeffs(grid, np.stack([c.coeffs for c in v]))
    return [SpectralField(grid, c) for c in out]


def dealiased_pointwise(op: Callable[..., np.ndarray], *fields) -> PhysicalField:
    """Evaluate ``op`` pointwise on the 3/2-padded grid and truncate back.

    Inputs may be spectral or physical fields on a common grid. Nyquist modes
    of the inputs are discarded. Quadratic ``op`` is alias-free.
    """
    if not fields:
        raise ValueError("no input fields")
    grid = fields[0].grid
    padded = []
    for f in fields:
        if f.grid != grid:
            raise ValueError("inputs must share a grid")
        coeffs = f.coeffs if isinstance(f, SpectralField) else grid.forward(f.values)
        padded.append(grid.to_padded_physical(coeffs))
    result = np.asarray(op(*padded))
    return PhysicalField(grid, grid.inverse(grid.from_padded_physical(result)))


def solenoidal_random_coeffs(grid: Grid, kmax: float, rng: np.random.Generator,
                             slope: float = 0.0, kmin: float = 1.0) -> np.ndarray:
    """Random real divergence-free (3, ...) coefficients supported on kmin <= |k| <= kmax.

    Coefficients are drawn per integer wavevector in lexicographic order, so the
    result does not depend on ``n`` as long as the band fits the grid. Amplitudes
    scale like ``|k|**-slope``.
    """
    kc = int(math.floor(kmax))
    if kc >= grid.n // 2:
        raise ValueError("random band exceeds the grid's resolved modes")
    coeffs = np.zeros((3,) + grid.spectral_shape, dtype=complex)
    rng_vals = {}
    r = np.arange(-kc, kc + 1)
    for i in r:
        for j in r:
            for k in r:
                mag2 = i * i + j * j + k * k
                if mag2 == 0 or mag2 > kmax ** 2 + 1e-9 or mag2 < kmin ** 2 - 1e-9:
                    continue
                rng_vals[(i, j, k)] = (rng.standard_normal(3) + 1j * rng.standard_normal(3)) \
                    * mag2 ** (-slope / 2)
    for (i, j, k), c in rng_vals.items():
        if k < 0:
            continue
        sym = 0.5 * (c + np.conj(rng_vals[(-i, -j, -k)]))
        coeffs[:, i % grid.n, j % grid.n, k] = sym
    return project_coeffs(grid, coeffs)
