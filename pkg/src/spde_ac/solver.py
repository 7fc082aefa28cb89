"""Nonlinear resolvent: solve v + tau*A*v + tau*f(v) = g and its linearisation.

The map g -> v is the one-step implicit solution operator of the
gradient flow.  It is well defined for tau < 1/2 because f' >= -1 makes
id + tau*A + tau*f strictly monotone.  The default solver is the
resolvent-preconditioned fixed point

    v_{j+1} = S_tau (g - tau * f(v_j)),    v_0 = S_tau g,

with S_tau = (Id + tau*A)^{-1} a diagonal spectral multiply; its
contraction factor scales like tau * sup|f'| on bounded sets.  When the
fixed point stalls (large tau, large amplitudes) the solver switches to
Newton steps whose inner linear systems are symmetric positive definite
and solved by S_tau-preconditioned conjugate gradients.

A frozen shift field w turns the same machinery into the solver for the
transformed equation v + tau*A*v + tau*[ (v+w)^3 - w^3 - v ] = g, whose
nonlinearity has the same one-sided bound since d/dv = f'(v+w) >= -1.

Everything operates on spectral coefficient arrays with arbitrary
leading batch axes; residual norms are per batch element (Parseval makes
the coefficient 2-norm the L2 norm).  Calls are stateless and safe to
run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fourier
from .energy import cube_hat, nonlinearity_values
from .spectral import GridSpec, ScalarField, to_coeffs, to_values

__all__ = [
    "SolverConfig",
    "NoConvergence",
    "solve_t_tau",
    "residual",
    "apply_dt_tau",
]


class NoConvergence(RuntimeError):
    """Implicit solve did not reach the residual tolerance."""

    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"no convergence after {iterations} iterations, residual {residual:.3e}; "
            "tau may be too large or the tolerance too tight"
        )


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances for the implicit step (residual norm is absolute L2)."""

    tol_residual: float = 1e-10
    max_iter: int = 100
    method: str = "fixed_point"

    def __post_init__(self) -> None:
        if self.tol_residual <= 0.0:
            raise ValueError("tol_residual must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.method not in ("fixed_point", "newton"):
            raise ValueError(f"method must be 'fixed_point' or 'newton', got {self.method!r}")


def _check_tau(tau: float) -> None:
    if not 0.0 < tau < 0.5:
        raise ValueError(f"tau must lie in (0, 1/2) for the implicit solve, got {tau}")


def _spatial_axes(grid: GridSpec) -> tuple[int, ...]:
    return tuple(range(-grid.dim, 0))


def _norm_hat(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    mag = a.real * a.real + a.imag * a.imag
    return np.sqrt(np.sum(mag, axis=_spatial_axes(grid)))


def _expand(scal: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Give per-sample scalars trailing spatial axes for broadcasting."""
    return np.asarray(scal)[(...,) + (None,) * grid.dim]


class _ShiftedCubic:
    """N(v) = dealiased((v+w)^3) - dealiased(w^3) - v, with optional w."""

    def __init__(self, grid: GridSpec, shift_values: np.ndarray | None):
        self.grid = grid
        self.shift = shift_values
        if shift_values is None:
            self.shift_cube = 0.0
        else:
            self.shift_cube = cube_hat(to_coeffs(shift_values, grid.dim), grid)

    def __call__(self, vhat: np.ndarray) -> np.ndarray:
        if self.shift is None:
            return cube_hat(vhat, self.grid) - vhat
        shifted = to_values(vhat, self.grid.dim) + self.shift
        cubed = cube_hat(to_coeffs(shifted, self.grid.dim), self.grid)
        return cubed - self.shift_cube - vhat

    def point_values(self, vhat: np.ndarray) -> np.ndarray:
        """v + w on the nodes (where the Jacobian coefficient is built)."""
        vals = to_values(vhat, self.grid.dim)
        return vals if self.shift is None else vals + self.shift


def _jacobian_matvec(grid: GridSpec, tau: float, coeff_big: np.ndarray):
    """Matvec for J = (1-tau) Id + tau A + tau * P(c * interpolant(.)).

    ``coeff_big`` is 3*(v+w)^2 sampled on the padded 2n grid, making the
    multiplication operator the exact Jacobian of the dealiased cubic.
    J is SPD: c >= 0 and tau < 1/2.
    """
    nu = grid.nu()
    n_big = 2 * grid.n

    def matvec(hhat: np.ndarray) -> np.ndarray:
        big = fourier.pad_spectrum(hhat, grid.dim, n_big)
        prod = to_values(big, grid.dim) * coeff_big
        proj = fourier.truncate_spectrum(to_coeffs(prod, grid.dim), grid.dim, grid.n)
        return (1.0 - tau) * hhat + tau * nu * hhat + tau * proj

    return matvec


def _pcg(matvec, rhs_hat, grid: GridSpec, tau: float, tol: float, max_iter: int = 200):
    """S_tau-preconditioned conjugate gradients in coefficient space."""
    nu = grid.nu()
    precond = 1.0 / (1.0 + tau * nu)
    axes = _spatial_axes(grid)

    def inner(a, b):
        return np.sum((np.conj(a) * b).real, axis=axes)

    x = np.zeros_like(rhs_hat)
    r = rhs_hat.copy()
    z = precond * r
    p = z.copy()
    rz = inner(r, z)
    for iteration in range(max_iter):
        if float(np.max(_norm_hat(r, grid))) <= tol:
            break
        ap = matvec(p)
        denom = inner(p, ap)
        alpha = np.where(denom > 0.0, rz / np.where(denom > 0.0, denom, 1.0), 0.0)
        x = x + _expand(alpha, grid) * p
        r = r - _expand(alpha, grid) * ap
        z = precond * r
        rz_new = inner(r, z)
        beta = np.where(rz > 0.0, rz_new / np.where(rz > 0.0, rz, 1.0), 0.0)
        p = z + _expand(beta, grid) * p
        rz = rz_new
    return x


def solve_monotone_hat(
    ghat: np.ndarray,
    tau: float,
    grid: GridSpec,
    cfg: SolverConfig,
    shift_values: np.ndarray | None = None,
) -> np.ndarray:
    """Solve v + tau*A*v + tau*N(v) = g in coefficient space (batched).

    N is the double-well nonlinearity, optionally shifted by a frozen
    field w (used by the transformed additive scheme).  Raises
    :class:`NoConvergence` when the iteration budget is exhausted.
    """
    _check_tau(tau)
    nonlinear = _ShiftedCubic(grid, shift_values)
    nu = grid.nu()
    resolvent = 1.0 / (1.0 + tau * nu)
    one_plus = 1.0 + tau * nu

    vhat = resolvent * ghat
    used = 0
    prev = np.inf
    newton_from = 0 if cfg.method == "newton" else None

    while used < cfg.max_iter:
        nhat = nonlinear(vhat)
        used += 1
        res = one_plus * vhat + tau * nhat - ghat
        rnorm = float(np.max(_norm_hat(res, grid)))
        if rnorm <= cfg.tol_residual:
            return vhat
        stalled = (not np.isfinite(rnorm)) or rnorm > 0.7 * prev
        if newton_from is not None or (stalled and used >= 3):
            break
        prev = rnorm
        vhat = resolvent * (ghat - tau * nhat)

    if not np.all(np.isfinite(vhat)):
        # restart Newton from the linear guess; the fixed point blew up
        vhat = resolvent * ghat
        nhat = nonlinear(vhat)
        res = one_plus * vhat + tau * nhat - ghat
        rnorm = float(np.max(_norm_hat(res, grid)))

    while used < cfg.max_iter:
        point = nonlinear.point_values(vhat)
        big = to_values(fourier.pad_spectrum(to_coeffs(point, grid.dim), grid.dim, 2 * grid.n), grid.dim)
        matvec = _jacobian_matvec(grid, tau, 3.0 * big * big)
        cg_tol = max(0.05 * cfg.tol_residual, 1e-4 * rnorm)
        delta = _pcg(matvec, -res, grid, tau, cg_tol)
        vhat = vhat + delta
        nhat = nonlinear(vhat)
        used += 1
        res = one_plus * vhat + tau * nhat - ghat
        rnorm = float(np.max(_norm_hat(res, grid)))
        if rnorm <= cfg.tol_residual:
            return vhat

    raise NoConvergence(used, rnorm)


def linearized_solve_hat(
    point_values: np.ndarray,
    hhat: np.ndarray,
    tau: float,
    grid: GridSpec,
    cfg: SolverConfig,
) -> np.ndarray:
    """Solve (id + tau*A + tau*f'(point)) w = h with the dealiased Jacobian."""
    _check_tau(tau)
    big = to_values(
        fourier.pad_spectrum(to_coeffs(point_values, grid.dim), grid.dim, 2 * grid.n),
        grid.dim,
    )
    matvec = _jacobian_matvec(grid, tau, 3.0 * big * big)
    return _pcg(matvec, hhat, grid, tau, cfg.tol_residual, max_iter=max(200, cfg.max_iter))


# -- public field-level API ----------------------------------------------------


def solve_t_tau(g: ScalarField, tau: float, cfg: SolverConfig = SolverConfig()) -> ScalarField:
    """The nonlinear resolvent: v with v + tau*A*v + tau*f(v) = g.

    Unique for tau in (0, 1/2); the returned field satisfies
    ``residual(v, g, tau) <= cfg.tol_residual``.
    """
    _check_tau(tau)
    ghat = to_coeffs(g.values, g.grid.dim)
    vhat = solve_monotone_hat(ghat, tau, g.grid, cfg)
    return ScalarField(g.grid, to_values(vhat, g.grid.dim))


def residual(v: ScalarField, g: ScalarField, tau: float) -> float:
    """L2 norm of v + tau*A*v + tau*f(v) - g, cubic dealiased."""
    grid = v.grid
    vhat = to_coeffs(v.values, grid.dim)
    fhat = to_coeffs(nonlinearity_values(v.values, grid), grid.dim)
    ghat = to_coeffs(g.values, grid.dim)
    res = (1.0 + tau * grid.nu()) * vhat + tau * fhat - ghat
    return float(_norm_hat(res, grid))


def apply_dt_tau(
    g: ScalarField, h: ScalarField, tau: float, cfg: SolverConfig = SolverConfig()
) -> ScalarField:
    """Derivative of the resolvent at g applied to h.

    Solves (id + tau*A + tau*f'(T_tau g)) w = h; by coercivity
    ||w||_{L2} <= (1-tau)^{-1} ||h||_{L2}.
    """
    _check_tau(tau)
    if g.grid != h.grid:
        raise ValueError("g and h live on different grids")
    grid = g.grid
    vhat = solve_monotone_hat(to_coeffs(g.values, grid.dim), tau, grid, cfg)
    what = linearized_solve_hat(
        to_values(vhat, grid.dim), to_coeffs(h.values, grid.dim), tau, grid, cfg
    )
    return ScalarField(grid, to_values(what, grid.dim))
