"""Uniform periodic grid on the flat torus [0, L).

Two differentiation backends share one interface:

* ``spectral``: Fourier differentiation through real FFTs.  The Nyquist mode
  is dropped for every derivative order, so ``dxx`` is exactly ``dx`` applied
  twice and the first-derivative matrix is skew-symmetric.
* ``fd4``: fourth-order centred stencils (5 points).

Fields are plain ``numpy`` arrays of length ``n``.  Quadrature is the periodic
rectangle rule ``h * sum(f)``.
"""

from __future__ import annotations

import numpy as np

from .coefficients import DomainError, check_positive, power

SPECTRAL = "spectral"
FD4 = "fd4"
BACKENDS = (SPECTRAL, FD4)

# max over theta of the fd4 first-derivative symbol (8 sin t - sin 2t)/6
_FD4_D1_MAX = 1.3722141


class Grid:
    """Periodic grid with ``n`` points, period ``length`` and a backend."""

    def __init__(self, n: int, length: float = 1.0, backend: str = SPECTRAL, dealias: bool = False):
        n = int(n)
        backend = str(backend).lower()
        if backend not in BACKENDS:
            raise DomainError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
        if n < 16:
            raise DomainError(f"need n >= 16 grid points, got {n}")
        if backend == SPECTRAL and n & (n - 1):
            raise DomainError(f"spectral backend needs n to be a power of two, got {n}")
        if not length > 0:
            raise DomainError(f"period must be positive, got {length}")
        self.n = n
        self.length = float(length)
        self.backend = backend
        self.dealias = bool(dealias)
        self.h = self.length / n
        self.x = self.h * np.arange(n)
        k = 2 * np.pi / self.length * np.arange(n // 2 + 1)
        k[-1] = 0.0  # drop Nyquist
        self._ik = 1j * k
        self._k2 = -k * k
        if self.dealias:
            keep = np.arange(n // 2 + 1) <= n // 3
            self._ik = self._ik * keep
            self._k2 = self._k2 * keep
        self._d1 = None
        self._d2 = None

    def __repr__(self):
        return f"Grid(n={self.n}, length={self.length}, backend={self.backend!r}, dealias={self.dealias})"

    def __eq__(self, other):
        return isinstance(other, Grid) and (self.n, self.length, self.backend, self.dealias) == (
            other.n,
            other.length,
            other.backend,
            other.dealias,
        )

    def __hash__(self):
        return hash((self.n, self.length, self.backend, self.dealias))

    def field(self, values) -> np.ndarray:
        """Validate a grid function: right length, all finite."""
        f = np.asarray(values, dtype=float)
        if f.shape != (self.n,):
            raise DomainError(f"field has shape {f.shape}, expected ({self.n},)")
        if not np.all(np.isfinite(f)):
            raise DomainError("field contains non-finite values")
        return f

    def wavenumbers(self) -> np.ndarray:
        return self._ik.imag.copy()

    def filter(self, f):
        """2/3-rule truncation (identity when dealiasing is off)."""
        if not self.dealias:
            return f
        fh = np.fft.rfft(f)
        fh[np.arange(fh.size) > self.n // 3] = 0
        return np.fft.irfft(fh, self.n)

    def dx(self, f):
        if self.backend == SPECTRAL:
            return np.fft.irfft(self._ik * np.fft.rfft(f), self.n)
        fp1, fm1 = np.roll(f, -1), np.roll(f, 1)
        fp2, fm2 = np.roll(f, -2), np.roll(f, 2)
        return self.filter((8 * (fp1 - fm1) - (fp2 - fm2)) / (12 * self.h))

    def dxx(self, f):
        if self.backend == SPECTRAL:
            return np.fft.irfft(self._k2 * np.fft.rfft(f), self.n)
        fp1, fm1 = np.roll(f, -1), np.roll(f, 1)
        fp2, fm2 = np.roll(f, -2), np.roll(f, 2)
        return self.filter((16 * (fp1 + fm1) - (fp2 + fm2) - 30 * f) / (12 * self.h**2))

    def integrate(self, f) -> float:
        return float(self.h * np.sum(f))

    def mean(self, f) -> float:
        return float(np.mean(f))

    def power_field(self, f, p: float):
        return power(f, p)

    def log_field(self, f):
        return np.log(check_positive(f))

    def d1_matrix(self) -> np.ndarray:
        """Dense first-derivative matrix (cached)."""
        if self._d1 is None:
            self._d1 = self._matrix(self.dx)
        return self._d1

    def d2_matrix(self) -> np.ndarray:
        if self._d2 is None:
            self._d2 = self._matrix(self.dxx)
        return self._d2

    def _matrix(self, op):
        eye = np.eye(self.n)
        return np.column_stack([op(eye[:, j]) for j in range(self.n)])

    def d4_symbol_max(self) -> float:
        """Largest modulus of the backend's fourth-derivative symbol."""
        if self.backend == SPECTRAL:
            return float(np.max(np.abs(self._ik)) ** 4)
        return (_FD4_D1_MAX / self.h) ** 4

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.n * factor, self.length, self.backend, self.dealias)

    def sample(self, func):
        """Evaluate ``func(x)`` on the grid nodes."""
        return self.field(func(self.x))
