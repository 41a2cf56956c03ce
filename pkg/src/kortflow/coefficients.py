"""Closed-form coefficient functions of the kappa(rho) = rho**beta family.

The regularized family is built from

    kappa_eps(rho) = rho**beta + 2 eps rho**((beta-2)/2) + eps**2 rho**(-2)
                   = (rho**(beta/2) + eps / rho)**2
    mu_eps(rho)    = 2/(beta+3) rho**((beta+3)/2) + 2 eps sqrt(rho)
    phi_eps(rho)   = 2/(beta+1) rho**((beta+1)/2) - 2 eps rho**(-1/2)
    F_eps(rho)     = 4/((beta+1)(beta+3)) rho**((beta+3)/2) - 4 eps sqrt(rho) + 3/2

The eps terms of mu, phi and F are fixed by kappa_eps and
phi_eps' = rho**((beta-1)/2) + eps rho**(-3/2), so that kappa_eps = mu_eps'**2 / rho, rho phi_eps' = mu_eps' and
F_eps' = phi_eps.  With eps = 0 they reduce to the pure power case.

Every power goes through :func:`power`, which evaluates ``exp(p * log(rho))``
and refuses values below ``RHO_FLOOR`` instead of clamping them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

RHO_FLOOR = 1e-300

#: Exponents excluded by the existence theory (log branches).
EXCLUDED_BETAS = (-2.0, -5.0 / 3.0, -1.5, -1.0)


class DomainError(ValueError):
    """An argument lies outside the domain of a coefficient function."""


class VacuumError(DomainError):
    """A density value is not strictly positive.

    ``index`` is the first offending grid index (``None`` for scalars).
    """

    def __init__(self, message, index=None, value=None):
        super().__init__(message)
        self.index = index
        self.value = value


def _is(beta: float, value: float) -> bool:
    return abs(beta - value) < 1e-12


def check_positive(rho, floor: float = RHO_FLOOR):
    """Return ``rho`` as float/array, raising :class:`VacuumError` below ``floor``."""
    arr = np.asarray(rho, dtype=float)
    bad = ~(arr >= floor)
    if np.any(bad):
        if arr.ndim == 0:
            raise VacuumError(f"density {float(arr)!r} is below floor {floor:g}", None, float(arr))
        idx = int(np.flatnonzero(bad.ravel())[0])
        raise VacuumError(
            f"density {arr.ravel()[idx]!r} at index {idx} is below floor {floor:g}",
            idx,
            float(arr.ravel()[idx]),
        )
    return arr if arr.ndim else float(arr)


def power(rho, p: float, floor: float = RHO_FLOOR):
    """rho**p via exp(p log rho) for strictly positive rho."""
    r = check_positive(rho, floor)
    if p == 0:
        return np.ones_like(r) if isinstance(r, np.ndarray) else 1.0
    if p == 1:
        return r.copy() if isinstance(r, np.ndarray) else r
    out = np.exp(p * np.log(r))
    return out if isinstance(r, np.ndarray) else float(out)


def delta_schedule(eps: float) -> float:
    """Velocity damping delta_eps = eps**6 exp(-1/(2 eps**2)), zero at eps = 0."""
    if eps < 0:
        raise DomainError(f"eps must be non-negative, got {eps}")
    if eps == 0:
        return 0.0
    return eps**6 * math.exp(-1.0 / (2.0 * eps * eps))


@dataclass(frozen=True)
class Params:
    """Exponent ``beta`` and regularization ``eps`` plus derived constants."""

    beta: float
    eps: float = 0.0
    alpha: float = field(init=False)
    theta: float = field(init=False)
    delta_eps: float = field(init=False)
    excluded_flags: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        beta, eps = float(self.beta), float(self.eps)
        if not math.isfinite(beta) or beta <= -3:
            raise DomainError(f"beta must exceed -3, got {self.beta}")
        if not (0.0 <= eps < 1.0):
            raise DomainError(f"eps must lie in [0, 1), got {self.eps}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "alpha", (beta + 2.0) / 2.0)
        object.__setattr__(self, "theta", (3.0 * beta + 5.0) / 4.0)
        object.__setattr__(self, "delta_eps", delta_schedule(eps))
        flags = {
            "energy_log": _is(beta, -2.0),
            "theta_log": _is(beta, -5.0 / 3.0),
            "mu_log": _is(beta, -1.5),
            "entropy_log": _is(beta, -1.0),
        }
        object.__setattr__(self, "excluded_flags", flags)

    @property
    def excluded(self) -> bool:
        return any(self.excluded_flags.values())

    def require_admissible(self, what: str = "this computation") -> "Params":
        """Raise unless beta avoids every log-branch value."""
        if self.excluded:
            raise DomainError(
                f"beta={self.beta:g} is one of the excluded log-branch values "
                f"{EXCLUDED_BETAS}; {what} is not defined there"
            )
        return self

    @classmethod
    def for_identities(cls, beta: float, eps: float = 0.0) -> "Params":
        return cls(beta, eps).require_admissible("the entropy/identity machinery")


def kappa_eps(rho, p: Params):
    b, e = p.beta, p.eps
    out = power(rho, b)
    if e:
        out = out + 2 * e * power(rho, (b - 2) / 2) + e * e * power(rho, -2.0)
    return out


def kappa_eps_prime(rho, p: Params):
    b, e = p.beta, p.eps
    out = b * power(rho, b - 1)
    if e:
        out = out + e * (b - 2) * power(rho, (b - 4) / 2) - 2 * e * e * power(rho, -3.0)
    return out


def mu_eps(rho, p: Params):
    b, e = p.beta, p.eps
    return 2.0 / (b + 3) * power(rho, (b + 3) / 2) + 2 * e * power(rho, 0.5)


def mu_eps_prime(rho, p: Params):
    b, e = p.beta, p.eps
    out = power(rho, (b + 1) / 2)
    if e:
        out = out + e * power(rho, -0.5)
    return out


def mu_eps_second(rho, p: Params):
    b, e = p.beta, p.eps
    out = 0.5 * (b + 1) * power(rho, (b - 1) / 2)
    if e:
        out = out - 0.5 * e * power(rho, -1.5)
    return out


def phi_eps(rho, p: Params):
    b, e = p.beta, p.eps
    if _is(b, -1.0):
        raise DomainError("phi_eps needs a logarithm at beta = -1")
    return 2.0 / (b + 1) * power(rho, (b + 1) / 2) - 2 * e * power(rho, -0.5)


def phi_eps_prime(rho, p: Params):
    b, e = p.beta, p.eps
    out = power(rho, (b - 1) / 2)
    if e:
        out = out + e * power(rho, -1.5)
    return out


def F_eps(rho, p: Params):
    b, e = p.beta, p.eps
    if _is(b, -1.0):
        raise DomainError("F_eps needs a logarithm at beta = -1")
    return 4.0 / ((b + 1) * (b + 3)) * power(rho, (b + 3) / 2) - 4 * e * power(rho, 0.5) + 1.5


def power2_constant(p: Params) -> float:
    """A constant C with rho |mu_eps''| <= C mu_eps'.

    Equality holds with C = |beta+1|/2 in the power case; the eps branch
    contributes the constant 1/2.
    """
    c = abs(p.beta + 1) / 2
    return max(c, 0.5) if p.eps else c


def lemma_a_shift(beta: float) -> float:
    """c(beta) = (beta+3)**2/theta**2 - 8(beta+3)/(3 theta)."""
    theta = (3 * beta + 5) / 4
    if theta == 0:
        raise DomainError("theta vanishes at beta = -5/3")
    b3 = beta + 3
    return b3 * b3 / (theta * theta) - 8 * b3 / (3 * theta)


def lemma_a_constant(beta: float) -> float:
    """Constant of the second-derivative bound for rho**theta.

    From the exact identity H + c G = (2 theta/(beta+1))**2 D together with
    G <= 9/16 H: C = (2 theta/(beta+1))**2 if c >= 0, otherwise that value
    divided by 1 + 9c/16.
    """
    if _is(beta, -1.0) or _is(beta, -5.0 / 3.0):
        raise DomainError(f"no finite constant at beta = {beta:g}")
    theta = (3 * beta + 5) / 4
    c = lemma_a_shift(beta)
    base = (2 * theta / (beta + 1)) ** 2
    return base if c >= 0 else base / (1 + 9 * c / 16)
