"""Uniform torus grid and operators diagonal in the Fourier basis.

Domain: the d-torus (-pi, pi]^d with n points per axis, n a power of
two.  The negative Laplacian has eigenvalue nu_k = |k|^2 on the complex
exponential mode with integer wavevector k in {-n/2+1, ..., n/2}^d.

Coefficient convention (locked by a golden test): ``forward_transform``
returns coefficients with respect to the orthonormal basis

    phi_k(x) = (2*pi)^(-d/2) * exp(i k . (x + pi)),

so Parseval holds with factor one: ||f||_{L2}^2 = sum_k |c_k|^2.  The
phase shift by pi anchors the basis at the first grid node x_0 = -pi,
which lets spectrum padding/truncation act on raw DFT bins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fourier

__all__ = [
    "GridSpec",
    "ScalarField",
    "SpectralCoeffs",
    "NegativePowerOnConstantMode",
    "forward_transform",
    "inverse_transform",
    "apply_fractional_power",
    "resolvent_s_tau",
    "heat_semigroup",
    "sobolev_norm",
    "l2_norm",
    "l2_inner",
    "laplacian",
]

TORUS_LENGTH = 2.0 * np.pi


class NegativePowerOnConstantMode(ValueError):
    """Negative operator power requested on a field with nonzero mean."""


_NU_CACHE: dict[tuple[int, int], np.ndarray] = {}


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on the periodic torus, n points per axis."""

    dim: int
    n: int

    def __post_init__(self) -> None:
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 4 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"n must be a power of two >= 4, got {self.n}")

    @property
    def h(self) -> float:
        return TORUS_LENGTH / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def num_points(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def axis_coords(self) -> np.ndarray:
        """Node coordinates along one axis: x_j = -pi + j*h."""
        return -np.pi + self.h * np.arange(self.n)

    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis."""
        x = self.axis_coords()
        return list(np.meshgrid(*([x] * self.dim), indexing="ij", sparse=True))

    def nu(self) -> np.ndarray:
        """Eigenvalues |k|^2 of -Laplace, in DFT bin layout, shape ``self.shape``."""
        key = (self.dim, self.n)
        nu = _NU_CACHE.get(key)
        if nu is None:
            k = fourier.wavenumbers(self.n).astype(np.float64)
            axes = np.meshgrid(*([k] * self.dim), indexing="ij", sparse=True)
            nu = sum(a**2 for a in axes)
            nu.setflags(write=False)
            _NU_CACHE[key] = nu
        return nu


def _frozen(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ScalarField:
    """Real nodal values on a torus grid.  Immutable after construction."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen(self.values, np.float64))
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


@dataclass(frozen=True)
class SpectralCoeffs:
    """Orthonormal-basis Fourier coefficients of a real field."""

    grid: GridSpec
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "coeffs", _frozen(self.coeffs, np.complex128))
        if self.coeffs.shape != self.grid.shape:
            raise ValueError(
                f"coeffs shape {self.coeffs.shape} does not match grid {self.grid.shape}"
            )


# -- array-level transforms (batched: arbitrary leading axes) -----------------


def coeff_scale(dim: int, n: int) -> float:
    """Scale turning a raw forward DFT into orthonormal-basis coefficients."""
    return TORUS_LENGTH ** (dim / 2.0) / n**dim


def to_coeffs(values: np.ndarray, dim: int) -> np.ndarray:
    n = values.shape[-1]
    return fourier.fftn(values, dim) * coeff_scale(dim, n)


def to_values(coeffs: np.ndarray, dim: int) -> np.ndarray:
    n = coeffs.shape[-1]
    scale = 1.0 / (coeff_scale(dim, n) * n**dim)
    return fourier.ifftn_raw(coeffs, dim).real * scale


# -- public operations ---------------------------------------------------------


def forward_transform(f: ScalarField) -> SpectralCoeffs:
    """Fourier coefficients of a nodal field (orthonormal convention)."""
    return SpectralCoeffs(f.grid, to_coeffs(f.values, f.grid.dim))


def inverse_transform(c: SpectralCoeffs) -> ScalarField:
    """Nodal values of a coefficient vector; inverse of ``forward_transform``."""
    return ScalarField(c.grid, to_values(c.coeffs, c.grid.dim))


def apply_fractional_power(c: SpectralCoeffs, r: float) -> SpectralCoeffs:
    """Multiply mode k by nu_k^r (fractional power of -Laplace).

    For r < 0 the constant mode must vanish; it is annihilated for r > 0
    and untouched for r = 0.
    """
    nu = c.grid.nu()
    if r < 0:
        zero = (0,) * c.grid.dim
        scale = max(1.0, float(np.sqrt(np.sum(np.abs(c.coeffs) ** 2))))
        if abs(c.coeffs[zero]) > 1e-12 * scale:
            raise NegativePowerOnConstantMode(
                f"negative power {r} needs a zero constant mode, got {c.coeffs[zero]}"
            )
        with np.errstate(divide="ignore"):
            mult = np.where(nu > 0.0, nu, 1.0) ** r
        mult = np.where(nu > 0.0, mult, 0.0)
    else:
        mult = nu**r
    return SpectralCoeffs(c.grid, c.coeffs * mult)


def resolvent_s_tau(c: SpectralCoeffs, tau: float) -> SpectralCoeffs:
    """Apply (Id + tau*A)^-1: mode k is damped by 1/(1 + tau*nu_k)."""
    if tau <= 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    return SpectralCoeffs(c.grid, c.coeffs / (1.0 + tau * c.grid.nu()))


def heat_semigroup(c: SpectralCoeffs, t: float) -> SpectralCoeffs:
    """Apply exp(-t*A): mode k is damped by exp(-t*nu_k)."""
    if t < 0.0:
        raise ValueError(f"t must be nonnegative, got {t}")
    return SpectralCoeffs(c.grid, c.coeffs * np.exp(-t * c.grid.nu()))


def sobolev_norm(f: ScalarField | SpectralCoeffs, r: float, homogeneous: bool = False) -> float:
    """Sobolev norm of order r.

    Default is the inhomogeneous weight (1 + nu_k)^r, which is
    well-defined on all fields and reduces to the L2 norm at r = 0.  With
    ``homogeneous=True`` the weight is nu_k^r and the constant mode is
    dropped (seminorm; the variant the operator-bound oracles need).
    """
    c = forward_transform(f) if isinstance(f, ScalarField) else f
    nu = c.grid.nu()
    power = np.abs(c.coeffs) ** 2
    if homogeneous:
        weight = np.where(nu > 0.0, nu, 1.0) ** r
        weight = np.where(nu > 0.0, weight, 0.0)
    else:
        weight = (1.0 + nu) ** r
    return float(np.sqrt(np.sum(weight * power)))


def l2_norm(f: ScalarField) -> float:
    """L2(torus) norm by exact quadrature of the trigonometric interpolant."""
    return float(np.sqrt(f.grid.cell_volume * np.sum(f.values**2)))


def l2_inner(f: ScalarField, g: ScalarField) -> float:
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    return float(f.grid.cell_volume * np.sum(f.values * g.values))


def laplacian(f: ScalarField) -> ScalarField:
    """Spectral Laplacian (exact on the resolved band)."""
    c = to_coeffs(f.values, f.grid.dim)
    return ScalarField(f.grid, to_values(-f.grid.nu() * c, f.grid.dim))


# -- array-level norms used by the batched harness ----------------------------


def l2_norm_values(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Quadrature L2 norm over the trailing spatial axes (batch aware)."""
    axes = tuple(range(-grid.dim, 0))
    return np.sqrt(grid.cell_volume * np.sum(values**2, axis=axes))


def h1_seminorm_sq_values(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """||grad u||_{L2}^2 over trailing spatial axes, computed spectrally."""
    c = to_coeffs(values, grid.dim)
    axes = tuple(range(-grid.dim, 0))
    return np.sum(grid.nu() * np.abs(c) ** 2, axis=axes)
