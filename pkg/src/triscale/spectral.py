"""Fourier grids and coefficient states on the 2*pi-periodic torus.

Coefficients are stored in numpy FFT order and normalised so that the stored
value at wavevector ``k`` is the Fourier coefficient ``u_hat(k)`` of

    u(x) = sum_k u_hat(k) exp(i k.x),

i.e. ``fftn(u) / N**d``.  With this scaling the ``L^2`` norm over the torus is
``(2 pi)^(d/2) * sqrt(sum |u_hat|^2)`` (Parseval), which is what
:func:`sobolev_norm` returns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid with ``N`` points per axis on ``[0, 2 pi)^d``."""

    d: int
    N: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("grid dimension must be at least 1")
        if self.N < 8 or self.N % 2:
            raise ValueError(f"N must be even and >= 8, got {self.N}")

    @property
    def shape(self):
        return (self.N,) * self.d

    @property
    def dx(self):
        return 2 * np.pi / self.N

    @property
    def volume(self):
        return (2 * np.pi) ** self.d

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Integer wavenumbers along one axis in FFT order, range ``[-N/2+1, N/2]``."""
        k = np.fft.fftfreq(self.N, 1.0 / self.N).round().astype(int)
        k[self.N // 2] = self.N // 2
        return k

    @cached_property
    def wavevectors(self) -> np.ndarray:
        """Array of shape ``(d, N, ..., N)`` holding the wavevector of every mode."""
        axes = [self.wavenumbers] * self.d
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.wavevectors.astype(float) ** 2, axis=0)

    @cached_property
    def nyquist(self) -> np.ndarray:
        """Boolean mask of modes with some component at the Nyquist index."""
        return np.any(np.abs(self.wavevectors) == self.N // 2, axis=0)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Two-thirds rule: keep modes with every ``|k_j| < N/3``."""
        return np.all(3 * np.abs(self.wavevectors) < self.N, axis=0)

    @cached_property
    def points(self) -> np.ndarray:
        """Collocation nodes, shape ``(d, N, ..., N)``."""
        x = np.arange(self.N) * self.dx
        return np.stack(np.meshgrid(*([x] * self.d), indexing="ij"))

    def mode_index(self, k) -> tuple:
        """Array index of integer wavevector ``k`` (any representative mod N)."""
        k = tuple(int(c) for c in np.atleast_1d(k))
        if len(k) != self.d:
            raise DimensionMismatch(f"wavevector {k} has wrong length for d={self.d}")
        return tuple(c % self.N for c in k)

    def iter_modes(self):
        """Yield ``(index, k)`` pairs in a fixed row-major order."""
        for idx in np.ndindex(*self.shape):
            yield idx, tuple(int(self.wavenumbers[i]) for i in idx)

    def symbol_modes(self):
        """Like :meth:`iter_modes` but with Nyquist components replaced by 0.

        Operator symbols are evaluated at these wavevectors: the Nyquist
        coefficient of a real field has no well-defined sign of ``k``, so odd
        symbols must not act on it.
        """
        half = self.N // 2
        for idx, k in self.iter_modes():
            yield idx, tuple(0 if abs(c) == half else c for c in k)


def to_coeffs(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Physical samples with trailing grid axes to normalised coefficients."""
    axes = tuple(range(-grid.d, 0))
    return np.fft.fftn(values, axes=axes) / grid.N ** grid.d


def to_values(coeffs: np.ndarray, grid: GridSpec, real: bool = False) -> np.ndarray:
    axes = tuple(range(-grid.d, 0))
    out = np.fft.ifftn(coeffs * grid.N ** grid.d, axes=axes)
    return out.real if real else out


def derivative(coeffs: np.ndarray, grid: GridSpec, alpha) -> np.ndarray:
    """Apply ``D^alpha`` spectrally.

    Odd derivatives annihilate the Nyquist mode so real fields stay real.
    """
    alpha = tuple(int(a) for a in alpha)
    mult = np.ones(grid.shape, dtype=complex)
    for j, a in enumerate(alpha):
        if a == 0:
            continue
        kj = grid.wavevectors[j].astype(float)
        m = (1j * kj) ** a
        if a % 2:
            m = np.where(np.abs(grid.wavevectors[j]) == grid.N // 2, 0.0, m)
        mult = mult * m
    return coeffs * mult


def multi_indices(d: int, order: int):
    """All multi-indices ``alpha`` with ``|alpha| == order`` in lexicographic order."""
    if d == 1:
        yield (order,)
        return
    for first in range(order, -1, -1):
        for rest in multi_indices(d - 1, order - first):
            yield (first,) + rest


def sobolev_norm(coeffs: np.ndarray, grid: GridSpec, s: float = 0.0) -> float:
    """``H^s`` norm with weight ``(1 + |k|^2)^s``; all leading axes are summed."""
    w = (1.0 + grid.k2) ** s
    total = np.sum(np.abs(coeffs) ** 2 * w)
    return float(np.sqrt(grid.volume * total))


def derivative_sum_norm(coeffs: np.ndarray, grid: GridSpec, ell: int) -> float:
    """``sqrt(sum_{|alpha| <= ell} ||D^alpha u||^2)`` computed exactly per mode."""
    w = np.zeros(grid.shape)
    kk = grid.wavevectors.astype(float)
    for order in range(ell + 1):
        for alpha in multi_indices(grid.d, order):
            term = np.ones(grid.shape)
            for j, a in enumerate(alpha):
                term = term * kk[j] ** (2 * a)
            w += term
    return float(np.sqrt(grid.volume * np.sum(np.abs(coeffs) ** 2 * w)))


def hermitian_defect(coeffs: np.ndarray, grid: GridSpec) -> float:
    """``max |u_hat(-k) - conj(u_hat(k))|``; zero for coefficients of a real field."""
    axes = tuple(range(-grid.d, 0))
    flipped = np.roll(np.flip(coeffs, axis=axes), 1, axis=axes)
    return float(np.abs(flipped - coeffs.conj()).max(initial=0.0))


@dataclass
class SpectralState:
    """Fourier coefficients of an ``n``-component field at time ``time``.

    ``coeffs`` has shape ``(n, N, ..., N)``.
    """

    coeffs: np.ndarray
    grid: GridSpec
    time: float = 0.0
    real: bool = field(default=True)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != self.grid.d + 1 or c.shape[1:] != self.grid.shape:
            raise DimensionMismatch(
                f"coefficient array of shape {c.shape} does not fit grid {self.grid.shape}"
            )
        self.coeffs = c

    @property
    def n(self):
        return self.coeffs.shape[0]

    @classmethod
    def from_values(cls, values, grid: GridSpec, time=0.0):
        values = np.asarray(values)
        real = not np.iscomplexobj(values)
        return cls(to_coeffs(values, grid), grid, time, real)

    @classmethod
    def zeros(cls, n, grid: GridSpec, time=0.0):
        return cls(np.zeros((n,) + grid.shape, dtype=complex), grid, time)

    def values(self) -> np.ndarray:
        return to_values(self.coeffs, self.grid, real=self.real)

    def copy(self, coeffs=None, time=None):
        return SpectralState(
            self.coeffs.copy() if coeffs is None else coeffs,
            self.grid,
            self.time if time is None else time,
            self.real,
        )

    def norm(self, s: float = 0.0) -> float:
        return sobolev_norm(self.coeffs, self.grid, s)

    def mode(self, k) -> np.ndarray:
        return self.coeffs[(slice(None),) + self.grid.mode_index(k)]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.coeffs)))
