"""Periodic velocity solve  -delta u_xx + rho u = rhs.

The spectral path runs preconditioned conjugate gradients with the
constant-coefficient symbol delta k**2 + mean(rho) as preconditioner.  The
fd4 path assembles the cyclic pentadiagonal matrix, factors its banded part
by Cholesky and restores the periodic corners with a rank-4 Woodbury update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded

from . import coefficients as co
from .coefficients import DomainError, Params, check_positive
from .grid_ops import Grid, SPECTRAL

RHO_FLOOR = 1e-10
RESIDUAL_TOL = 1e-10
PCG_TOL = 1e-12
PCG_MAXITER = 1000


class SolverError(RuntimeError):
    """The velocity solve broke down (the operator was not positive definite)."""


def assemble_rhs(grid: Grid, rho, p: Params):
    """d/dx(rho mu_eps'(rho) (phi_eps(rho))_xx); an exact discrete divergence."""
    rho = check_positive(rho)
    return grid.dx(rho * co.mu_eps_prime(rho, p) * grid.dxx(co.phi_eps(rho, p)))


@dataclass(frozen=True)
class EllipticProblem:
    grid: Grid
    rho: np.ndarray
    delta: float
    rhs: np.ndarray
    floor: float = RHO_FLOOR
    divergence: bool = True

    def __post_init__(self):
        if not self.delta >= 0:
            raise DomainError(f"delta must be non-negative, got {self.delta}")
        rho = self.grid.field(self.rho)
        rhs = self.grid.field(self.rhs)
        check_positive(rho, self.floor if self.delta == 0 else co.RHO_FLOOR)
        scale = 1.0 + float(np.max(np.abs(rhs)))
        if self.divergence and abs(float(np.mean(rhs))) > 1e-9 * scale:
            raise DomainError(f"rhs has mean {np.mean(rhs):.3e}; expected an exact divergence")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "rhs", rhs)

    def apply(self, u):
        out = self.rho * u
        if self.delta:
            out = out - self.delta * self.grid.dxx(u)
        return out

    def residual(self, u) -> float:
        return float(np.max(np.abs(self.apply(u) - self.rhs)))


def _pcg(prob: EllipticProblem):
    g = prob.grid
    rho_bar = float(np.mean(prob.rho))
    if not rho_bar > 0:
        raise SolverError(f"preconditioner needs a positive mean density, got {rho_bar:.3e}")
    sym = prob.delta * (-g._k2) + rho_bar

    def precond(r):
        return np.fft.irfft(np.fft.rfft(r) / sym, g.n)

    b = prob.rhs
    u = precond(b)
    r = b - prob.apply(u)
    z = precond(r)
    d = z.copy()
    rz = float(r @ z)
    stop = PCG_TOL * (1.0 + float(np.max(np.abs(b))))
    for _ in range(PCG_MAXITER):
        if np.max(np.abs(r)) <= stop:
            return u
        ad = prob.apply(d)
        curv = float(d @ ad)
        if not curv > 0:
            raise SolverError(
                f"conjugate gradients met non-positive curvature {curv:.3e} "
                f"(min rho = {np.min(prob.rho):.3e})"
            )
        step = rz / curv
        u = u + step * d
        r = r - step * ad
        z = precond(r)
        rz, rz_old = float(r @ z), rz
        d = z + (rz / rz_old) * d
    raise SolverError(f"conjugate gradients did not converge in {PCG_MAXITER} iterations")


def _fd4_cyclic(prob: EllipticProblem):
    n, h, dl = prob.grid.n, prob.grid.h, prob.delta
    c0, c1, c2 = 30 * dl / (12 * h * h), -16 * dl / (12 * h * h), dl / (12 * h * h)
    # upper banded storage of the non-periodic part (an SPD Toeplitz-plus-diagonal matrix)
    ab = np.zeros((3, n))
    ab[0, 2:] = c2
    ab[1, 1:] = c1
    ab[2, :] = c0 + prob.rho
    try:
        fac = cholesky_banded(ab)
    except LinAlgError as exc:
        raise SolverError(f"banded Cholesky failed (min rho = {np.min(prob.rho):.3e}): {exc}") from exc
    idx = np.array([0, 1, n - 2, n - 1])
    corner = np.array(
        [
            [0.0, 0.0, c2, c1],
            [0.0, 0.0, 0.0, c2],
            [c2, 0.0, 0.0, 0.0],
            [c1, c2, 0.0, 0.0],
        ]
    )
    sel = np.zeros((n, 4))
    sel[idx, np.arange(4)] = 1.0
    z = cho_solve_banded((fac, False), sel)
    y = cho_solve_banded((fac, False), prob.rhs)
    cap = np.eye(4) + corner @ z[idx]
    return y - z @ np.linalg.solve(cap, corner @ y[idx])


def solve_velocity(prob: EllipticProblem):
    """Return (u, residual) with residual = max |-delta u_xx + rho u - rhs|."""
    if prob.delta == 0:
        u = prob.rhs / prob.rho
    elif prob.grid.backend == SPECTRAL:
        u = _pcg(prob)
    else:
        u = _fd4_cyclic(prob)
    res = prob.residual(u)
    if not res <= RESIDUAL_TOL * (1.0 + float(np.max(np.abs(prob.rhs)))):
        raise SolverError(f"velocity residual {res:.3e} exceeds tolerance")
    return u, res


def velocity(grid: Grid, rho, p: Params, delta: float | None = None):
    """Velocity of the regularized system; ``delta`` defaults to delta_eps."""
    delta = p.delta_eps if delta is None else delta
    if delta < 1e-300:
        delta = 0.0
    rhs = assemble_rhs(grid, rho, p)
    return solve_velocity(EllipticProblem(grid, rho, delta, rhs))[0]
