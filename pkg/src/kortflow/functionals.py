"""Integral functionals of a density on the torus.

Sign convention for the zero-order entropy: the prefactor
4/((beta+3)(beta+1)) is negative for beta in (-3, -1).  We keep the signed
value, which is non-increasing along solutions for every admissible beta.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from . import coefficients as co
from .coefficients import DomainError, Params, check_positive
from .grid_ops import Grid

NAN = float("nan")


def first_variation(grid: Grid, rho, p: Params):
    """K = d/dx(kappa_eps(rho) rho_x) - kappa_eps'(rho) |rho_x|**2 / 2."""
    rho = check_positive(rho)
    rx = grid.dx(rho)
    return grid.dx(co.kappa_eps(rho, p) * rx) - 0.5 * co.kappa_eps_prime(rho, p) * rx * rx


def mass(grid: Grid, rho) -> float:
    return grid.integrate(check_positive(rho))


def korteweg_energy(grid: Grid, rho, p: Params) -> float:
    """E_eps = int kappa_eps(rho) |rho_x|**2 / 2."""
    rho = check_positive(rho)
    rx = grid.dx(rho)
    return 0.5 * grid.integrate(co.kappa_eps(rho, p) * rx * rx)


def gradient_energy(grid: Grid, rho, beta: float) -> float:
    """int |d/dx rho**((beta+2)/2)|**2, the quantity that may not increase."""
    if abs(beta + 2) < 1e-12:
        raise DomainError("beta = -2 needs the logarithmic energy")
    g = grid.dx(grid.power_field(rho, (beta + 2) / 2))
    return grid.integrate(g * g)


def entropy(grid: Grid, rho, p: Params) -> float:
    """Signed zero-order entropy int 4 rho**((beta+3)/2) / ((beta+3)(beta+1))."""
    b = p.beta
    if abs(b + 1) < 1e-12:
        raise DomainError("the zero-order entropy is logarithmic at beta = -1")
    return 4.0 / ((b + 3) * (b + 1)) * grid.integrate(grid.power_field(rho, (b + 3) / 2))


def entropy_dissipation(grid: Grid, rho, p: Params) -> float:
    """4/(beta+1)**2 int rho**((beta+3)/2) |d2/dx2 rho**((beta+1)/2)|**2."""
    b = p.beta
    if abs(b + 1) < 1e-12:
        raise DomainError("the zero-order entropy is logarithmic at beta = -1")
    g = grid.dxx(grid.power_field(rho, (b + 1) / 2))
    return 4.0 / (b + 1) ** 2 * grid.integrate(grid.power_field(rho, (b + 3) / 2) * g * g)


def f_entropy(grid: Grid, rho, p: Params) -> float:
    return grid.integrate(co.F_eps(check_positive(rho), p))


def f_dissipation(grid: Grid, rho, p: Params) -> float:
    """int rho mu_eps'(rho) |d2/dx2 phi_eps(rho)|**2."""
    rho = check_positive(rho)
    g = grid.dxx(co.phi_eps(rho, p))
    return grid.integrate(rho * co.mu_eps_prime(rho, p) * g * g)


def theta_norms(grid: Grid, rho, p: Params):
    """(int |d2/dx2 rho**theta|**2, int |d/dx rho**(theta/2)|**4)."""
    th = p.theta
    if th == 0:
        raise DomainError("theta = 0 (beta = -5/3) needs the logarithmic norms")
    h2 = grid.dxx(grid.power_field(rho, th))
    g = grid.dx(grid.power_field(rho, th / 2))
    return grid.integrate(h2 * h2), grid.integrate(g**4)


def power_norms(grid: Grid, rho, s: float):
    """(int |d2/dx2 rho**s|**2, int |d/dx rho**(s/2)|**4) for any exponent s."""
    h2 = grid.dxx(grid.power_field(rho, s))
    g = grid.dx(grid.power_field(rho, s / 2))
    return grid.integrate(h2 * h2), grid.integrate(g**4)


def energy_dissipation(grid: Grid, rho, p: Params, u=None, delta: float = 0.0) -> float:
    """int rho |u|**2 + delta int |u_x|**2.

    Without ``u`` the direct gradient-flow velocity u = d/dx K is used, which
    gives the dissipation rate of the Korteweg energy.
    """
    rho = check_positive(rho)
    if u is None:
        u = grid.dx(first_variation(grid, rho, p))
    out = grid.integrate(rho * u * u)
    if delta:
        ux = grid.dx(u)
        out += delta * grid.integrate(ux * ux)
    return out


def uniform_bound_integrands(grid: Grid, rho, p: Params) -> dict:
    """Pointwise-in-time integrands of the eps-uniform bounds.

    Keys ``grad_energy`` and ``rho_max`` are suprema-type quantities; the
    remaining keys are integrated in time by the caller (the ``eps*`` entries
    already carry their eps weights).
    """
    b, e = p.beta, p.eps
    out = {"grad_energy": gradient_energy(grid, rho, b), "rho_max": float(np.max(rho))}
    out["theta_h2"], out["theta_grad4"] = theta_norms(grid, rho, p)
    s55 = (2 * b + 3) / 4
    if s55 != 0:
        h2, g4 = power_norms(grid, rho, s55)
        out["eps_h2_55"], out["eps_grad4_55"] = e * h2, e * g4
    else:
        out["eps_h2_55"] = out["eps_grad4_55"] = NAN
    h2, g4 = power_norms(grid, rho, -0.25)
    out["eps3_h2_56"], out["eps3_grad4_56"] = e**3 * h2, e**3 * g4
    return out


def vacuum_envelope(rho_min: float, rho_max: float, eps: float) -> float:
    """Measured K_hat = eps * max |ln rho| from the density range."""
    return eps * max(abs(math.log(rho_min)), abs(math.log(rho_max)))


# --- weak formulation -------------------------------------------------------


def weak_flux(grid: Grid, rho, p: Params):
    """Integrand W multiplying psi_xx in the weak form.

    W = rho**(beta+2-theta) (rho**theta)_xx / theta
        - (beta+3)/theta**2 rho**(beta+2-theta) |(rho**(theta/2))_x|**2
    """
    b, th = p.beta, p.theta
    if th == 0:
        raise DomainError("the weak form at beta = -5/3 is logarithmic")
    w = grid.power_field(rho, b + 2 - th)
    g = grid.dx(grid.power_field(rho, th / 2))
    return w * grid.dxx(grid.power_field(rho, th)) / th - (b + 3) / th**2 * w * g * g


def _bump(s):
    """exp(1 - 1/(1 - s**2)) on |s| < 1 and its derivative."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    dout = np.zeros_like(s)
    inside = np.abs(s) < 1
    si = s[inside]
    q = 1 - si * si
    val = np.exp(1 - 1 / q)
    out[inside] = val
    dout[inside] = val * (-2 * si / (q * q))
    return out, dout


def _cutoff(s):
    """Smooth step: 1 for s <= 0, 0 for s >= 1, and its derivative."""
    s = np.asarray(s, dtype=float)
    out = (s <= 0).astype(float)
    dout = np.zeros_like(s)
    mid = (s > 0) & (s < 1)
    y = s[mid]
    a, b = np.exp(-1 / (1 - y)), np.exp(-1 / y)
    out[mid] = a / (a + b)
    # d/dy a/(a+b) with a' = -a/(1-y)**2, b' = b/y**2
    dout[mid] = -a * b * (1 / (1 - y) ** 2 + 1 / y**2) / (a + b) ** 2
    return out, dout


@dataclass(frozen=True)
class WeakTestBank:
    """psi_{k,m}(t, x) = cos(2 pi k x / L + phase_k) eta_m(t / T).

    The first time factor is a smooth cutoff, equal to 1 up to ``cutoff[0]``
    and 0 after ``cutoff[0] + cutoff[1]``; it carries the datum term.  The
    others are interior bumps given as (centre, half-width).  Every eta_m' is
    then compactly supported inside (0, T), which keeps the trapezoid rule in
    time spectrally accurate.
    """

    modes: tuple = (0, 1, 2, 3, 4)
    cutoff: tuple = (0.2, 0.6)
    bumps: tuple = ((0.35, 0.3), (0.6, 0.35))
    phase_step: float = 0.3

    @property
    def size(self) -> int:
        return len(self.modes) * (1 + len(self.bumps))

    def phases(self):
        return [self.phase_step * k for k in self.modes]

    def eta(self, t, horizon: float):
        """Values and time derivatives of every time factor, shape (n_eta, len(t))."""
        t = np.asarray(t, dtype=float) / horizon
        start, width = self.cutoff
        v, d = _cutoff((t - start) / width)
        vals, ders = [v], [d / (width * horizon)]
        for c, w in self.bumps:
            v, d = _bump((t - c) / w)
            vals.append(v)
            ders.append(d / (w * horizon))
        return np.array(vals), np.array(ders)


class WeakResidualTracker:
    """Accumulates spatial moments of a trajectory to evaluate the weak residual.

    For each snapshot we store a_k(t) = int rho psi_k and
    c_k(t) = int W (psi_k)_xx; any horizon can then be evaluated cheaply.
    """

    def __init__(self, grid: Grid, p: Params, bank: WeakTestBank | None = None):
        self.grid = grid
        self.p = p
        self.bank = bank or WeakTestBank()
        kk = 2 * np.pi / grid.length * np.array(self.bank.modes, dtype=float)
        self._cos = np.cos(np.outer(kk, grid.x) + np.array(self.bank.phases())[:, None])
        self._lap = -(kk**2)[:, None] * self._cos
        self.times: list = []
        self._a: list = []
        self._c: list = []

    def add(self, t: float, rho):
        if self.times and t <= self.times[-1]:
            raise ValueError("snapshot times must increase")
        w = weak_flux(self.grid, rho, self.p)
        h = self.grid.h
        self.times.append(float(t))
        self._a.append(h * self._cos @ rho)
        self._c.append(h * self._lap @ w)

    def __len__(self):
        return len(self.times)

    def residuals(self, horizon: float | None = None) -> np.ndarray:
        """Residual of every bank member, shape (n_modes, n_bumps)."""
        if len(self.times) < 3:
            raise ValueError("the weak residual needs at least 3 snapshots")
        t = np.array(self.times)
        horizon = t[-1] if horizon is None else horizon
        a = np.array(self._a)  # (nt, nk)
        c = np.array(self._c)
        eta, deta = self.bank.eta(t, horizon)  # (nb, nt)
        wts = np.zeros_like(t)
        dt = np.diff(t)
        wts[:-1] += dt / 2
        wts[1:] += dt / 2
        term_t = -np.einsum("tk,bt,t->kb", a, deta, wts)
        term_x = np.einsum("tk,bt,t->kb", c, eta, wts)
        datum = -np.outer(a[0], eta[:, 0])
        return term_t + term_x + datum

    def value(self, horizon: float | None = None) -> float:
        return float(np.max(np.abs(self.residuals(horizon))))


def weak_residual(grid: Grid, times, rhos, p: Params, bank: WeakTestBank | None = None) -> float:
    """Max over the test bank of the discretized weak-form residual."""
    if len(times) < 3:
        raise ValueError("the weak residual needs at least 3 snapshots")
    tr = WeakResidualTracker(grid, p, bank)
    for t, r in zip(times, rhos):
        tr.add(t, r)
    return tr.value()


# --- per-step record ----------------------------------------------------------


@dataclass(frozen=True)
class DiagRecord:
    t: float
    mass: float
    energy: float
    entropy: float
    f_entropy: float
    entropy_dissip: float
    energy_dissip: float
    rho_min: float
    rho_max: float
    theta_h2: float
    theta_grad4: float
    weak_residual: float

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    def csv_row(self) -> str:
        return ",".join(f"{v:.17g}" for v in astuple(self))


def _maybe(fn, *args):
    try:
        return fn(*args)
    except DomainError:
        return NAN


def diagnose(grid: Grid, rho, p: Params, t: float, u=None, delta: float = 0.0, weak: float = 0.0) -> DiagRecord:
    """Evaluate every monitored functional; undefined entries become NaN."""
    rho = check_positive(rho)
    th = _maybe(theta_norms, grid, rho, p)
    if not isinstance(th, tuple):
        th = (NAN, NAN)
    return DiagRecord(
        t=float(t),
        mass=mass(grid, rho),
        energy=korteweg_energy(grid, rho, p),
        entropy=_maybe(entropy, grid, rho, p),
        f_entropy=_maybe(f_entropy, grid, rho, p),
        entropy_dissip=_maybe(entropy_dissipation, grid, rho, p),
        energy_dissip=energy_dissipation(grid, rho, p, u, delta),
        rho_min=float(np.min(rho)),
        rho_max=float(np.max(rho)),
        theta_h2=th[0],
        theta_grad4=th[1],
        weak_residual=float(weak),
    )
