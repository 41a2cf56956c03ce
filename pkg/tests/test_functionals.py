import math

import numpy as np
import pytest

from kortflow import functionals as fn
from kortflow.coefficients import DomainError, Params, VacuumError
from kortflow.grid_ops import FD4, Grid


@pytest.fixture
def grid():
    return Grid(256)


def smooth_random(grid, seed=3, modes=4, amp=0.3):
    rng = np.random.default_rng(seed)
    s = np.zeros(grid.n)
    for k in range(1, modes + 1):
        s += rng.normal(0, amp / k) * np.cos(2 * np.pi * k * grid.x) + rng.normal(0, amp / k) * np.sin(2 * np.pi * k * grid.x)
    return np.exp(s)


def test_mass(grid):
    assert fn.mass(grid, np.ones(grid.n)) == pytest.approx(1.0)
    assert fn.mass(grid, 1 + 0.5 * np.cos(2 * np.pi * grid.x)) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(VacuumError):
        fn.mass(grid, np.zeros(grid.n))


def test_energy_constant_and_analytic(grid):
    assert fn.korteweg_energy(grid, np.full(grid.n, 2.0), Params(0.5, 0.2)) == 0.0
    rho = 1 + 0.25 * np.sin(2 * np.pi * grid.x)
    assert fn.korteweg_energy(grid, rho, Params(0.0)) == pytest.approx(math.pi**2 / 16, rel=1e-13)


def test_energy_quadrature_oracle(grid):
    # mpmath quadrature of int rho rho_x^2 / 2 for this density, beta = 1
    rho = 1 + 0.3 * np.cos(2 * np.pi * grid.x) + 0.1 * np.sin(4 * np.pi * grid.x)
    assert fn.korteweg_energy(grid, rho, Params(1.0)) == pytest.approx(1.2830485721416166, rel=1e-12)


@pytest.mark.parametrize("beta", [1.0, 0.0, -0.5, -2.5])
def test_energy_gradient_form(grid, beta):
    rho = smooth_random(grid)
    lhs = fn.korteweg_energy(grid, rho, Params(beta))
    rhs = 2 / (beta + 2) ** 2 * fn.gradient_energy(grid, rho, beta)
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_gradient_energy_log_branch(grid):
    with pytest.raises(DomainError):
        fn.gradient_energy(grid, np.ones(grid.n), -2.0)


def test_entropy_constants(grid):
    one = np.ones(grid.n)
    assert fn.entropy(grid, one, Params(0.0)) == pytest.approx(4 / 3)
    assert fn.entropy_dissipation(grid, one, Params(0.0)) == 0.0
    c = 1.7
    assert fn.entropy(grid, c * one, Params(1.0)) == pytest.approx(c * c / 2)
    assert fn.entropy_dissipation(grid, c * one, Params(1.0)) == 0.0


def test_entropy_sign_below_minus_one(grid):
    assert fn.entropy(grid, np.ones(grid.n), Params(-2.5)) < 0


def test_entropy_log_branch(grid):
    with pytest.raises(DomainError):
        fn.entropy(grid, np.ones(grid.n), Params(-1.0))
    with pytest.raises(DomainError):
        fn.entropy_dissipation(grid, np.ones(grid.n), Params(-1.0))


def test_entropy_dissipation_oracle(grid):
    # mpmath quadrature of 4 int rho^{3/2} |(rho^{1/2})_xx|^2, rho = 1 + sin(2 pi x)/4
    rho = 1 + 0.25 * np.sin(2 * np.pi * grid.x)
    assert fn.entropy_dissipation(grid, rho, Params(0.0)) == pytest.approx(48.60847088456535, rel=1e-10)


def test_entropy_dissipation_fd4_agrees(grid):
    rho = 1 + 0.25 * np.sin(2 * np.pi * grid.x)
    fine = Grid(4096, backend=FD4)
    ref = fn.entropy_dissipation(fine, 1 + 0.25 * np.sin(2 * np.pi * fine.x), Params(0.0))
    assert fn.entropy_dissipation(grid, rho, Params(0.0)) == pytest.approx(ref, rel=1e-6)


def test_theta_norms(grid):
    assert fn.theta_norms(grid, np.full(grid.n, 3.0), Params(0.5)) == (0.0, 0.0)
    rho = smooth_random(grid)
    h2, _ = fn.theta_norms(grid, rho, Params(-1 / 3))
    assert h2 == pytest.approx(grid.integrate(grid.dxx(rho) ** 2), rel=1e-12)
    with pytest.raises(DomainError):
        fn.theta_norms(grid, rho, Params(-5 / 3))


@pytest.mark.parametrize("seed", range(5))
def test_bernis_on_random_fields(grid, seed):
    h2, g4 = fn.theta_norms(grid, smooth_random(grid, seed), Params(0.0))
    assert 16 / 9 * g4 <= h2


@pytest.mark.parametrize("beta", [-2.5, 0.0, 1.0])
def test_dissipations_nonnegative(grid, beta):
    rho = smooth_random(grid, 7)
    p = Params(beta, 0.1)
    assert fn.entropy_dissipation(grid, rho, p) >= 0
    assert fn.energy_dissipation(grid, rho, p) >= 0
    assert fn.f_dissipation(grid, rho, p) >= 0


def test_energy_dissipation_with_velocity(grid):
    rho = np.ones(grid.n)
    u = np.sin(2 * np.pi * grid.x)
    assert fn.energy_dissipation(grid, rho, Params(0.0), u) == pytest.approx(0.5)
    assert fn.energy_dissipation(grid, rho, Params(0.0), u, delta=0.1) == pytest.approx(0.5 + 0.1 * 2 * math.pi**2)


def test_vacuum_envelope():
    assert fn.vacuum_envelope(math.exp(-3), math.exp(2), 0.5) == pytest.approx(1.5)


def test_uniform_bound_keys(grid):
    vals = fn.uniform_bound_integrands(grid, smooth_random(grid), Params(0.0, 0.2))
    assert set(vals) == {
        "grad_energy",
        "rho_max",
        "theta_h2",
        "theta_grad4",
        "eps_h2_55",
        "eps_grad4_55",
        "eps3_h2_56",
        "eps3_grad4_56",
    }
    assert all(math.isfinite(v) and v >= 0 for v in vals.values())


# --- weak residual ------------------------------------------------------------------


def test_weak_bank_has_fifteen_members():
    bank = fn.WeakTestBank()
    assert bank.size == 15
    assert 0 in bank.modes


def test_weak_time_factors():
    bank = fn.WeakTestBank()
    t = np.linspace(0, 2.0, 20001)
    eta, deta = bank.eta(t, 2.0)
    assert eta.shape == (3, t.size)
    # the cutoff sees the datum; every factor vanishes at the horizon
    assert eta[0, 0] == 1.0 and np.all(eta[1:, 0] == 0.0)
    assert np.all(eta[:, -1] == 0.0)
    np.testing.assert_allclose(np.gradient(eta, t, axis=1), deta, atol=1e-5)


def test_weak_residual_constant_trajectory(grid):
    p = Params(0.0)
    t = np.linspace(0, 1e-3, 401)
    rhos = [np.ones(grid.n)] * len(t)
    assert fn.weak_residual(grid, t, rhos, p) <= 1e-14


def test_weak_residual_needs_three_snapshots(grid):
    with pytest.raises(ValueError):
        fn.weak_residual(grid, [0.0, 1.0], [np.ones(grid.n)] * 2, Params(0.0))


def test_weak_residual_x_independent_is_mass_check(grid):
    # psi with k = 0 only: the residual is a mass-conservation check
    bank = fn.WeakTestBank(modes=(0,))
    rho = 1 + 0.3 * np.cos(2 * np.pi * grid.x)
    t = np.linspace(0, 1, 201)
    rhos = [rho + 0.1 * s * np.sin(2 * np.pi * grid.x) for s in t]
    assert fn.weak_residual(grid, t, rhos, Params(0.0), bank) <= 1e-10


def test_weak_tracker_rejects_unordered_times(grid):
    tr = fn.WeakResidualTracker(grid, Params(0.0))
    tr.add(0.0, np.ones(grid.n))
    with pytest.raises(ValueError):
        tr.add(0.0, np.ones(grid.n))


def test_weak_flux_log_branch(grid):
    with pytest.raises(DomainError):
        fn.weak_flux(grid, np.ones(grid.n), Params(-5 / 3))


# --- records -------------------------------------------------------------------------


def test_diag_record_columns():
    assert fn.DiagRecord.columns() == [
        "t",
        "mass",
        "energy",
        "entropy",
        "f_entropy",
        "entropy_dissip",
        "energy_dissip",
        "rho_min",
        "rho_max",
        "theta_h2",
        "theta_grad4",
        "weak_residual",
    ]


def test_diagnose_fills_nan_where_undefined(grid):
    rec = fn.diagnose(grid, 1 + 0.2 * np.cos(2 * np.pi * grid.x), Params(-1.0), 0.0)
    assert math.isnan(rec.entropy) and math.isnan(rec.f_entropy)
    assert rec.rho_min <= rec.rho_max
    assert rec.mass == pytest.approx(1.0)
    assert len(rec.csv_row().split(",")) == 12
