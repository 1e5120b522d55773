"""Torus grids, Fourier transforms, multiplier operators, and norms.

Conventions used throughout the package
---------------------------------------
The domain is the square torus (R/2piZ)^2 with nodes x_j = -pi + j*h,
h = 2pi/N.  A field u is expanded as

    u(x) = sum_m uhat(m) e^{i m.x},   uhat(m) = (2pi)^{-2} int u e^{-i m.x} dx,

so uhat(0) is the mean value.  Parseval in this convention reads

    sum_x |u(x_j)|^2 h^2 = (2pi)^2 sum_m |uhat(m)|^2   (exact for the DFT).

``sobolev_norm`` returns the pure coefficient sum (sum <m>^{2k} |uhat|^2)^{1/2};
the integral-normalized L^2 norm returned by ``lp_norm(u, 2)`` is 2pi times
``sobolev_norm(u, 0)``.  That single 2pi factor is the only place the two
conventions meet.

Wavenumbers follow the numpy fft layout: m_i in {-N/2, ..., N/2-1}.  The
unpaired Nyquist mode carries the negative sign -N/2; odd (sign-changing)
derivative symbols zero it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Union

import numpy as np

TWO_PI = 2.0 * np.pi


class SpectralError(ValueError):
    """Raised on grid mismatches and ill-posed multiplier requests."""


@dataclass(frozen=True)
class TorusGrid:
    """Uniform N x N discretization of the square torus of period 2pi.

    Parameters
    ----------
    n_per_dim : even number of nodes per dimension.
    dealias_fraction : fraction of the spectrum kept by the dealias mask
        (2/3 rule by default).
    """

    n_per_dim: int
    dealias_fraction: float = 2.0 / 3.0
    period: float = field(default=TWO_PI)

    def __post_init__(self) -> None:
        if self.n_per_dim < 4 or self.n_per_dim % 2 != 0:
            raise SpectralError(f"n_per_dim must be even and >= 4, got {self.n_per_dim}")
        if not (0.0 < self.dealias_fraction <= 1.0):
            raise SpectralError("dealias_fraction must lie in (0, 1]")
        if abs(self.period - TWO_PI) > 1e-15:
            raise SpectralError("only the 2pi-periodic torus is supported")

    @property
    def h(self) -> float:
        return TWO_PI / self.n_per_dim

    @cached_property
    def x(self) -> np.ndarray:
        """1D node coordinates in [-pi, pi)."""
        return -np.pi + self.h * np.arange(self.n_per_dim)

    @cached_property
    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid (X1, X2) of node coordinates, 'ij' indexing."""
        return tuple(np.meshgrid(self.x, self.x, indexing="ij"))

    @cached_property
    def m1(self) -> np.ndarray:
        m = np.fft.fftfreq(self.n_per_dim, d=1.0 / self.n_per_dim).astype(np.int64)
        return np.meshgrid(m, m, indexing="ij")[0]

    @cached_property
    def m2(self) -> np.ndarray:
        m = np.fft.fftfreq(self.n_per_dim, d=1.0 / self.n_per_dim).astype(np.int64)
        return np.meshgrid(m, m, indexing="ij")[1]

    @cached_property
    def m_sq(self) -> np.ndarray:
        return (self.m1 * self.m1 + self.m2 * self.m2).astype(np.float64)

    @cached_property
    def m_abs(self) -> np.ndarray:
        return np.sqrt(self.m_sq)

    @cached_property
    def _shift_phase(self) -> np.ndarray:
        # Nodes start at -pi, not 0: uhat(m) = (-1)^(m1+m2)/N^2 * FFT(u).
        sign = np.where((self.m1 + self.m2) % 2 == 0, 1.0, -1.0)
        return sign

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        cut = self.dealias_fraction * self.n_per_dim / 2.0
        return (np.abs(self.m1) < cut) & (np.abs(self.m2) < cut)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on modes where either component is the unpaired -N/2."""
        nyq = -self.n_per_dim // 2
        return (self.m1 == nyq) | (self.m2 == nyq)

    def forward(self, nodal: np.ndarray) -> np.ndarray:
        if nodal.shape != (self.n_per_dim, self.n_per_dim):
            raise SpectralError(
                f"nodal shape {nodal.shape} does not match grid {self.n_per_dim}"
            )
        return np.fft.fft2(nodal) * (self._shift_phase / self.n_per_dim**2)

    def inverse(self, spectral: np.ndarray) -> np.ndarray:
        if spectral.shape != (self.n_per_dim, self.n_per_dim):
            raise SpectralError(
                f"spectral shape {spectral.shape} does not match grid {self.n_per_dim}"
            )
        return np.fft.ifft2(spectral * self._shift_phase) * self.n_per_dim**2


class Field:
    """Complex- or real-valued function on a TorusGrid.

    Holds nodal samples and Fourier coefficients, computing the missing
    representation lazily.  Instances are immutable values: the backing
    arrays are marked read-only and all operations return new Fields.
    """

    __slots__ = ("grid", "kind", "_nodal", "_spectral")

    REAL_IMAG_TOL = 1e-12

    def __init__(self, grid: TorusGrid, kind: str, nodal=None, spectral=None):
        if kind not in ("complex", "real"):
            raise SpectralError(f"kind must be 'complex' or 'real', got {kind!r}")
        if nodal is None and spectral is None:
            raise SpectralError("Field needs at least one representation")
        self.grid = grid
        self.kind = kind
        self._nodal = self._freeze(nodal)
        self._spectral = self._freeze(spectral)

    @staticmethod
    def _freeze(arr):
        if arr is None:
            return None
        arr = np.asarray(arr, dtype=np.complex128)
        arr = arr.copy() if not arr.flags.owndata or arr.flags.writeable else arr
        arr.flags.writeable = False
        return arr

    @classmethod
    def from_nodal(cls, grid: TorusGrid, values, kind: str = "complex") -> "Field":
        values = np.asarray(values, dtype=np.complex128)
        if values.shape != (grid.n_per_dim, grid.n_per_dim):
            raise SpectralError(
                f"nodal shape {values.shape} does not match grid {grid.n_per_dim}"
            )
        return cls(grid, kind, nodal=values.copy())

    @classmethod
    def from_spectral(cls, grid: TorusGrid, coeffs, kind: str = "complex") -> "Field":
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if coeffs.shape != (grid.n_per_dim, grid.n_per_dim):
            raise SpectralError(
                f"spectral shape {coeffs.shape} does not match grid {grid.n_per_dim}"
            )
        return cls(grid, kind, spectral=coeffs.copy())

    @classmethod
    def zeros(cls, grid: TorusGrid, kind: str = "complex") -> "Field":
        n = grid.n_per_dim
        return cls(grid, kind, nodal=np.zeros((n, n), dtype=np.complex128))

    @property
    def nodal(self) -> np.ndarray:
        if self._nodal is None:
            nodal = self.grid.inverse(self._spectral)
            if self.kind == "real":
                self._check_real(nodal)
            object.__setattr__(self, "_nodal", self._freeze(nodal))
        return self._nodal

    @property
    def spectral(self) -> np.ndarray:
        if self._spectral is None:
            object.__setattr__(self, "_spectral", self._freeze(self.grid.forward(self._nodal)))
        return self._spectral

    def _check_real(self, nodal: np.ndarray) -> None:
        scale = np.max(np.abs(nodal))
        if scale > 0.0 and np.max(np.abs(nodal.imag)) > self.REAL_IMAG_TOL * scale:
            raise SpectralError(
                "field declared real has imaginary part above tolerance "
                f"({np.max(np.abs(nodal.imag)):.3e} vs scale {scale:.3e})"
            )

    @property
    def real_nodal(self) -> np.ndarray:
        return self.nodal.real

    def conj(self) -> "Field":
        return Field(self.grid, self.kind, nodal=np.conj(self.nodal))

    def dealiased(self) -> "Field":
        return Field.from_spectral(
            self.grid, self.spectral * self.grid.dealias_mask, self.kind
        )

    def __add__(self, other: "Field") -> "Field":
        self._compat(other)
        kind = "real" if self.kind == other.kind == "real" else "complex"
        if self._spectral is not None and other._spectral is not None:
            return Field(self.grid, kind, spectral=self.spectral + other.spectral)
        return Field(self.grid, kind, nodal=self.nodal + other.nodal)

    def __sub__(self, other: "Field") -> "Field":
        self._compat(other)
        kind = "real" if self.kind == other.kind == "real" else "complex"
        if self._spectral is not None and other._spectral is not None:
            return Field(self.grid, kind, spectral=self.spectral - other.spectral)
        return Field(self.grid, kind, nodal=self.nodal - other.nodal)

    def __mul__(self, other: Union["Field", complex, float]) -> "Field":
        if isinstance(other, Field):
            self._compat(other)
            kind = "real" if self.kind == other.kind == "real" else "complex"
            return Field(self.grid, kind, nodal=self.nodal * other.nodal)
        return Field(self.grid, self.kind, **self._scaled(other))

    __rmul__ = __mul__

    def _scaled(self, c) -> dict:
        if self._spectral is not None:
            return {"spectral": self._spectral * c}
        return {"nodal": self._nodal * c}

    def _compat(self, other: "Field") -> None:
        if other.grid.n_per_dim != self.grid.n_per_dim:
            raise SpectralError(
                f"grid size mismatch: {self.grid.n_per_dim} vs {other.grid.n_per_dim}"
            )


def to_spectral(f: Field) -> Field:
    """Return a Field whose spectral representation is populated."""
    f.spectral
    return f


def to_nodal(f: Field) -> Field:
    """Return a Field whose nodal representation is populated."""
    f.nodal
    return f


# --- Fourier multipliers ----------------------------------------------------

SymbolLike = Union[np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def multiplier(
    f: Field,
    symbol: SymbolLike,
    zero_mode_rule: str = "keep",
    zero_tol: float = 1e-10,
) -> Field:
    """Apply a Fourier multiplier vhat(m) = symbol(m) uhat(m).

    ``symbol`` is either a precomputed array over the wavenumber lattice or a
    callable of (m1, m2).  A symbol that is non-finite at m = 0 (e.g. 1/|m|)
    requires ``zero_mode_rule='zero'`` and an input whose zero mode is below
    ``zero_tol`` relative to the coefficient norm.
    """
    if zero_mode_rule not in ("keep", "zero"):
        raise SpectralError(f"unknown zero_mode_rule {zero_mode_rule!r}")
    grid = f.grid
    sym = symbol(grid.m1, grid.m2) if callable(symbol) else np.asarray(symbol)
    if sym.shape != (grid.n_per_dim, grid.n_per_dim):
        raise SpectralError("symbol shape does not match grid")
    coeffs = f.spectral
    singular = not np.isfinite(sym[0, 0])
    if singular and zero_mode_rule != "zero":
        raise SpectralError("symbol is singular at m=0; zero_mode_rule must be 'zero'")
    if zero_mode_rule == "zero" and singular:
        scale = np.linalg.norm(coeffs)
        if scale > 0.0 and abs(coeffs[0, 0]) > zero_tol * scale:
            raise SpectralError(
                "singular symbol applied to field with non-negligible zero mode "
                f"(|uhat(0)| = {abs(coeffs[0, 0]):.3e}, norm = {scale:.3e})"
            )
    out = coeffs * np.where(np.isfinite(sym), sym, 0.0)
    if zero_mode_rule == "zero":
        out = out.copy()
        out[0, 0] = 0.0
    kind = f.kind
    if kind == "real":
        # a real symbol preserves realness only if even in m; play safe
        sym_finite = np.where(np.isfinite(sym), sym, 0.0)
        if np.max(np.abs(sym_finite.imag)) > 0:
            kind = "complex"
    return Field.from_spectral(grid, out, kind)


def sym_laplacian(m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    return -(m1.astype(float) ** 2 + m2.astype(float) ** 2)


def sym_abs_grad(m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    return np.sqrt(m1.astype(float) ** 2 + m2.astype(float) ** 2)


def sym_inv_abs_grad(m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    m = np.sqrt(m1.astype(float) ** 2 + m2.astype(float) ** 2)
    with np.errstate(divide="ignore"):
        return np.where(m > 0, 1.0 / np.where(m > 0, m, 1.0), np.inf)


def sym_wave_sine(t: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """sin(t|m|)/|m|, with the finite limit t at m = 0."""

    def sym(m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
        m = np.sqrt(m1.astype(float) ** 2 + m2.astype(float) ** 2)
        out = np.where(m > 0, np.sin(t * m) / np.where(m > 0, m, 1.0), t)
        return out

    return sym


def sym_bracket(k: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Japanese bracket <m>^k = (1+|m|^2)^{k/2}."""

    def sym(m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
        return (1.0 + m1.astype(float) ** 2 + m2.astype(float) ** 2) ** (k / 2.0)

    return sym


def laplacian(f: Field) -> Field:
    return multiplier(f, sym_laplacian)


def gradient(f: Field) -> tuple[Field, Field]:
    """Spectral gradient; the unpaired Nyquist mode is zeroed (odd symbol)."""
    grid = f.grid
    coeffs = f.spectral * np.where(grid.nyquist_mask, 0.0, 1.0)
    g1 = Field.from_spectral(grid, 1j * grid.m1 * coeffs, "complex")
    g2 = Field.from_spectral(grid, 1j * grid.m2 * coeffs, "complex")
    return g1, g2


# --- Norms -------------------------------------------------------------------


_SOBOLEV_WEIGHTS: dict = {}


def _sobolev_weights(grid: TorusGrid, k: float, homogeneous: bool) -> np.ndarray:
    key = (grid.n_per_dim, float(k), homogeneous)
    if key not in _SOBOLEV_WEIGHTS:
        if homogeneous:
            if k == 0:
                w = np.where(grid.m_sq > 0, 1.0, 0.0)
            else:
                w = np.where(grid.m_sq > 0, grid.m_sq**k, 0.0)
        else:
            w = (1.0 + grid.m_sq) ** k
        _SOBOLEV_WEIGHTS[key] = w
    return _SOBOLEV_WEIGHTS[key]


def sobolev_norm(f: Field, k: float, homogeneous: bool = False) -> float:
    """(sum <m>^{2k} |uhat(m)|^2)^{1/2} in the coefficient convention.

    With ``homogeneous=True`` uses |m|^{2k} and drops the zero mode.
    """
    weights = _sobolev_weights(f.grid, k, homogeneous)
    return float(np.sqrt(np.sum(weights * np.abs(f.spectral) ** 2)))


def l2_norm(f: Field) -> float:
    """Integral-normalized L^2 norm, (int |u|^2 dx)^{1/2} = 2pi * sobolev_norm(f, 0)."""
    return TWO_PI * sobolev_norm(f, 0.0)


def h_dot_norm(f: Field, k: float) -> float:
    """Integral-normalized homogeneous Sobolev norm 2pi * (sum |m|^{2k}|uhat|^2)^{1/2}."""
    return TWO_PI * sobolev_norm(f, k, homogeneous=True)


def h_norm(f: Field, k: float) -> float:
    """Integral-normalized inhomogeneous Sobolev norm."""
    return TWO_PI * sobolev_norm(f, k)


def hhat_norm(phi: Field, mean_tol: float = 1e-8) -> float:
    """Wave-velocity norm through the gradient-part projection.

    For a real mean-zero scalar phi this is the integral-normalized
    L^2 norm of |grad|^{-1} phi, i.e. 2pi (sum_{m!=0} |phihat|^2/|m|^2)^{1/2}.
    Raises if the mean of phi is above ``mean_tol`` relative to its size.
    """
    coeffs = phi.spectral
    scale = np.linalg.norm(coeffs)
    if scale > 0.0 and abs(coeffs[0, 0]) > mean_tol * scale:
        raise SpectralError(
            f"hhat_norm requires mean-zero input (|mean| = {abs(coeffs[0, 0]):.3e}, "
            f"coefficient norm = {scale:.3e})"
        )
    grid = phi.grid
    mag2 = np.abs(coeffs) ** 2
    weights = np.where(grid.m_sq > 0, 1.0 / np.where(grid.m_sq > 0, grid.m_sq, 1.0), 0.0)
    return TWO_PI * float(np.sqrt(np.sum(weights * mag2)))


def lp_norm(f: Field, p) -> float:
    """Quadrature L^p norm on nodal values, h^2-weighted for finite p."""
    vals = np.abs(f.nodal)
    if p == np.inf or p == "inf":
        return float(np.max(vals))
    if p not in (1, 2, 4):
        raise SpectralError(f"lp_norm supports p in {{1, 2, 4, inf}}, got {p}")
    h2 = f.grid.h**2
    return float((np.sum(vals**p) * h2) ** (1.0 / p))


def inner_l2(f: Field, g: Field) -> complex:
    """Integral inner product int f conj(g) dx by nodal quadrature."""
    f._compat(g)
    return complex(np.sum(f.nodal * np.conj(g.nodal)) * f.grid.h**2)


def mean_value(f: Field) -> complex:
    """Mean of f over the torus (the zero Fourier mode)."""
    return complex(f.spectral[0, 0])


# --- Snapshot format ----------------------------------------------------------


def write_field_snapshot(path, f: Field, t: float) -> None:
    """Write the binary snapshot: ASCII header then little-endian (re, im) pairs."""
    nodal = f.nodal
    n = f.grid.n_per_dim
    header = f"ZTFIELD v1 {f.kind} {n} {t!r}\n"
    inter = np.empty((n, n, 2), dtype="<f8")
    inter[:, :, 0] = nodal.real
    inter[:, :, 1] = nodal.imag
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(inter.tobytes())


def read_field_snapshot(path, grid: TorusGrid | None = None) -> tuple[Field, float]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip().split()
        if len(header) != 5 or header[0] != "ZTFIELD" or header[1] != "v1":
            raise SpectralError(f"not a ZTFIELD v1 snapshot: {path}")
        kind, n, t = header[2], int(header[3]), float(header[4])
        raw = np.frombuffer(fh.read(), dtype="<f8")
    if raw.size != 2 * n * n:
        raise SpectralError(f"snapshot payload truncated: {path}")
    pairs = raw.reshape(n, n, 2)
    nodal = pairs[:, :, 0] + 1j * pairs[:, :, 1]
    if grid is None:
        grid = TorusGrid(n)
    elif grid.n_per_dim != n:
        raise SpectralError(f"snapshot grid {n} does not match requested {grid.n_per_dim}")
    return Field.from_nodal(grid, nodal, kind), t
