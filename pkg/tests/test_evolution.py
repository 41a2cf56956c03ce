import math
from dataclasses import replace

import numpy as np
import pytest

from kortflow import evolution as ev
from kortflow.coefficients import DomainError, Params
from kortflow.config import RunConfig
from kortflow.evolution import Formulation, State, StepController, StepRejected
from kortflow.functionals import entropy
from kortflow.grid_ops import FD4, SPECTRAL, Grid
from kortflow.io import read_csv, read_snapshot

NODES = [0, 32, 77, 200]


def cosine(grid, a=0.25, k=1):
    return 1 + a * np.cos(2 * np.pi * k * grid.x)


# --- fluxes -------------------------------------------------------------------------


def test_direct_flux_constant_is_zero():
    g = Grid(64)
    assert np.max(np.abs(ev.flux_direct(g, np.full(64, 0.7), Params(0.5, 0.2)))) == 0.0


@pytest.mark.parametrize("beta", [0.0, 1.0, -0.5, -2.5])
def test_direct_flux_is_alpha_form(beta):
    g = Grid(256)
    rho = np.exp(0.3 * np.sin(2 * np.pi * g.x))
    j = ev.flux_direct(g, rho, Params(beta))
    alt = ev.alpha_flux(g, rho, (beta + 2) / 2)
    assert np.max(np.abs(j - alt)) <= 1e-8 * np.max(np.abs(j))


@pytest.mark.parametrize("beta", [0.0, 1.0, -0.5, -2.5])
def test_direct_flux_is_entropy_divergence(beta):
    # J = 2/(beta+1) d/dx(rho^((beta+3)/2) (rho^((beta+1)/2))_xx)
    g = Grid(128)
    rho = np.exp(0.3 * np.sin(2 * np.pi * g.x))
    j = ev.flux_direct(g, rho, Params(beta))
    inner = g.power_field(rho, (beta + 3) / 2) * g.dxx(g.power_field(rho, (beta + 1) / 2))
    assert np.max(np.abs(j - 2 / (beta + 1) * g.dx(inner))) <= 1e-8 * np.max(np.abs(j))


def test_qdd_flux_against_sympy():
    g = Grid(128)
    rho = cosine(g, 0.5)
    oracle = np.array([0.0, 46.50941502044973, -77.37314793320093, -61.47786059258247])
    got = ev.qdd_flux(g, rho)[[j % 128 for j in NODES]]
    assert np.max(np.abs(got - oracle)) <= 1e-8 * (1 + np.max(np.abs(oracle)))


def test_direct_flux_at_minus_one_is_alpha_form():
    g = Grid(256)
    rho = np.exp(0.4 * np.cos(2 * np.pi * g.x) + 0.1 * np.sin(6 * np.pi * g.x))
    j = ev.flux_direct(g, rho, Params(-1.0))
    assert np.max(np.abs(j - ev.alpha_flux(g, rho, 0.5))) <= 1e-8 * (1 + np.max(np.abs(j)))
    # the alpha form at alpha = 1/2 is twice the quantum drift-diffusion flux
    assert np.max(np.abs(j - 2 * ev.qdd_flux(g, rho))) <= 1e-8 * (1 + np.max(np.abs(j)))


def test_direct_flux_at_zero_is_thin_film():
    g = Grid(256)
    rho = np.exp(0.4 * np.cos(2 * np.pi * g.x))
    j = ev.flux_direct(g, rho, Params(0.0))
    assert np.max(np.abs(j - ev.thin_film_flux(g, rho))) <= 1e-8 * (1 + np.max(np.abs(j)))


# --- controller ----------------------------------------------------------------------


def test_controller_bounds_and_updates():
    c = StepController(1e-2, dt_min=1e-8, dt_max=1e-3)
    assert c.dt == 1e-3
    c.rejected()
    assert c.dt == 5e-4
    c.accepted()
    assert c.dt == pytest.approx(6e-4)
    for _ in range(20):
        c.accepted()
    assert c.dt == 1e-3
    with pytest.raises(DomainError):
        StepController(1e-3, dt_min=1e-2, dt_max=1e-3)
    with pytest.raises(DomainError):
        StepController(0.0)


def test_controller_caps_explicit_steps():
    g = Grid(64)
    rho = cosine(g)
    c = StepController(1.0, dt_max=1.0)
    limit = c.explicit_limit(g, rho, Params(0.0))
    assert c.propose(g, rho, Params(0.0), ev.RK4) == pytest.approx(0.8 * limit)
    assert c.propose(g, rho, Params(0.0), ev.SEMI_IMPLICIT) == 1.0
    fixed = StepController(1.0, dt_max=1.0, adaptive=False)
    assert fixed.propose(g, rho, Params(0.0), ev.RK4) == 1.0
    assert c.explicit_limit(g, rho, Params(0.0), delta=1.0) > limit


# --- explicit ------------------------------------------------------------------------


@pytest.mark.parametrize("integrator", [ev.RK4, ev.SEMI_IMPLICIT])
def test_constant_state_is_fixed_point(integrator):
    g = Grid(32)
    st = ev.initial_state(g, np.full(32, 1.0), Formulation.DIRECT, Params(0.5))
    new = ev.advance(g, st, Params(0.5), 1e-6, integrator)
    assert np.max(np.abs(new.rho - 1.0)) <= 1e-15
    assert new.t == 1e-6


def test_explicit_entropy_decreases_and_mass_conserved():
    g = Grid(64)
    p = Params(0.0)
    st = ev.initial_state(g, cosine(g), Formulation.DIRECT, p)
    dt = 0.8 * StepController(1.0).explicit_limit(g, st.rho, p)
    s_prev, m0 = entropy(g, st.rho, p), g.integrate(st.rho)
    for _ in range(100):
        st = ev.step_explicit(g, st, p, dt)
        s = entropy(g, st.rho, p)
        assert s < s_prev
        assert abs(g.integrate(st.rho) - m0) <= 1e-12 * m0
        s_prev = s


def test_explicit_temporal_order():
    g = Grid(16, backend=FD4)
    p = Params(0.0)
    rho0 = cosine(g)
    finals = []
    for dt in (1e-6, 5e-7, 2.5e-7):
        st = ev.initial_state(g, rho0, Formulation.DIRECT, p)
        finals.append(ev.integrate(g, st, p, dt, 1e-4).rho)
    e1 = np.max(np.abs(finals[0] - finals[1]))
    e2 = np.max(np.abs(finals[1] - finals[2]))
    assert math.log2(e1 / e2) >= 3.5


def test_step_rejected_on_vacuum():
    g = Grid(32)
    p = Params(0.0)
    rho = 1 + 0.999 * np.cos(2 * np.pi * g.x)
    st = ev.initial_state(g, rho, Formulation.DIRECT, p)
    with pytest.raises(StepRejected) as info:
        ev.advance(g, st, p, 1e-3, ev.RK4)
    assert info.value.vacuum


# --- semi-implicit ------------------------------------------------------------------------


def test_semi_implicit_large_steps_keep_entropy_decay():
    g = Grid(256)
    p = Params(0.0)
    st = ev.initial_state(g, cosine(g), Formulation.DIRECT, p)
    dt = 1e-6
    assert dt >= 100 * StepController(1.0).explicit_limit(g, st.rho, p)
    s_prev = entropy(g, st.rho, p)
    for _ in range(20):
        st = ev.step_semi_implicit(g, st, p, dt)
        s = entropy(g, st.rho, p)
        assert s < s_prev
        s_prev = s
    assert abs(np.mean(st.rho) - 1.0) <= 1e-14


def test_semi_implicit_matches_explicit_reference():
    g = Grid(16, backend=FD4)
    p = Params(0.0)
    rho0 = cosine(g)
    ref = ev.integrate(g, ev.initial_state(g, rho0, Formulation.DIRECT, p), p, 1e-7, 1e-3)
    semi = ev.integrate(g, ev.initial_state(g, rho0, Formulation.DIRECT, p), p, 1e-6, 1e-3, ev.SEMI_IMPLICIT)
    assert np.max(np.abs(semi.rho - ref.rho)) <= 1e-4


# --- regularized and skew ------------------------------------------------------------------


def test_regularized_requires_eps():
    g = Grid(32)
    with pytest.raises(DomainError):
        ev.initial_state(g, np.ones(32), Formulation.REGULARIZED, Params(0.0))


@pytest.mark.parametrize("form", [Formulation.REGULARIZED, Formulation.SKEW])
def test_regularized_and_skew_constant_fixed_point(form):
    g = Grid(32)
    p = Params(0.0, 0.3)
    st = ev.initial_state(g, np.ones(32), form, p, 1e-3)
    assert np.max(np.abs(st.u)) == 0.0
    if form is Formulation.SKEW:
        assert np.max(np.abs(st.q)) == 0.0
    new = ev.advance(g, st, p, 1e-6, ev.RK4, 1e-3)
    assert np.max(np.abs(new.rho - 1.0)) <= 1e-15


@pytest.mark.parametrize("integrator", [ev.RK4, ev.SEMI_IMPLICIT])
def test_regularized_mass_exact(integrator):
    g = Grid(32)
    p = Params(0.0, 0.3)
    st = ev.initial_state(g, cosine(g), Formulation.REGULARIZED, p, 1e-4)
    dt = 1e-9 if integrator == ev.RK4 else 1e-6
    for _ in range(10):
        st = ev.advance(g, st, p, dt, integrator, 1e-4)
    assert abs(g.integrate(st.rho) - 1.0) <= 1e-12


def test_skew_rejects_semi_implicit():
    g = Grid(32)
    p = Params(0.0, 0.3)
    st = ev.initial_state(g, cosine(g), Formulation.SKEW, p, 1e-4)
    with pytest.raises(DomainError):
        ev.advance(g, st, p, 1e-9, ev.SEMI_IMPLICIT, 1e-4)


@pytest.mark.parametrize("seed", range(4))
def test_skew_pairing_cancels(seed):
    g = Grid(128)
    rng = np.random.default_rng(seed)

    def smooth():
        return sum(rng.normal(0, 1 / k) * np.cos(2 * np.pi * k * g.x + rng.uniform(0, 6)) for k in range(1, 6))

    rho = np.exp(0.3 * smooth())
    num, scale = ev.skew_pairing(g, rho, smooth(), smooth(), Params(0.5, 0.2))
    assert abs(num) <= 1e-10 * scale


def test_skew_q_consistency():
    g = Grid(64)
    p = Params(0.0, 0.3)
    st = ev.initial_state(g, cosine(g), Formulation.SKEW, p, 1e-4)
    assert ev.q_drift(g, st, p) == 0.0
    st = ev.advance(g, st, p, 1e-9, ev.RK4, 1e-4)
    assert ev.q_drift(g, st, p) <= ev.Q_DRIFT_TOL


def test_regularized_approaches_direct_as_eps_shrinks():
    g = Grid(16)
    rho0 = cosine(g)
    direct = ev.integrate(g, ev.initial_state(g, rho0, Formulation.DIRECT, Params(0.0)), Params(0.0), 2e-8, 2e-5)
    dist = []
    for eps in (0.4, 0.2, 0.1):
        p = Params(0.0, eps)
        d, _ = ev.resolve_delta(p)
        st = ev.integrate(g, ev.initial_state(g, rho0, Formulation.REGULARIZED, p, d), p, 2e-8, 2e-5, delta=d)
        dist.append(math.sqrt(g.integrate((st.rho - direct.rho) ** 2)))
    # the distance roughly halves with eps
    assert dist[0] / dist[1] > 1.5 and dist[1] / dist[2] > 1.5


def test_resolve_delta():
    assert ev.resolve_delta(Params(0.0, 0.5)) == (pytest.approx(2.1146138005720733e-3), "delta_eps")
    assert ev.resolve_delta(Params(0.0, 0.3), 1e-4)[0] == 1e-4
    d, note = ev.resolve_delta(Params(0.0, 0.02))
    assert d == 0.0 and "underflow" in note


# --- run driver ---------------------------------------------------------------------------


def small_config(tmp_path, **kw):
    base = dict(beta=0.0, n=32, t_end=1e-6, dt_init=1e-9, outdir=str(tmp_path / "out"))
    base.update(kw)
    return RunConfig.from_mapping(base)


def test_run_t_end_zero_writes_one_snapshot(tmp_path):
    cfg = small_config(tmp_path, t_end=0.0)
    res = ev.run(cfg, cfg.outdir)
    assert res.termination == "t_end" and res.steps == 0
    snaps = sorted(p.name for p in (tmp_path / "out").glob("snap_*.txt"))
    assert snaps == ["snap_00000000.txt"]


def test_run_outputs(tmp_path):
    cfg = small_config(tmp_path, snapshot_every=5)
    res = ev.run(cfg, cfg.outdir)
    out = tmp_path / "out"
    assert res.termination == "t_end"
    assert res.final.t == cfg.t_end
    diag = read_csv(out / "diagnostics.csv")
    assert len(diag["t"]) == res.steps + 1
    assert np.all(np.diff(diag["entropy"]) <= 1e-8 * np.abs(diag["entropy"][:-1]))
    assert np.ptp(diag["mass"]) <= 1e-12
    assert np.isfinite(diag["weak_residual"][-1])
    meta, cols = read_snapshot(out / "snap_00000000.txt")
    assert meta["columns"] == "x rho" and float(meta["t"]) == 0.0
    np.testing.assert_allclose(cols["rho"], cosine(Grid(32)))
    for name in ("config.ini", "meta.json", "timing.json", "energy_law.csv"):
        assert (out / name).is_file()
    # the config echo alone reproduces the run
    again = RunConfig.from_file(out / "config.ini")
    assert again.as_dict() == cfg.as_dict()


def test_run_vacuum_termination(tmp_path):
    cfg = small_config(tmp_path, preset="cosine(a=0.999)", dt_init=1e-3, dt_max=1e-3, dt_min=1e-3, adaptive=False, t_end=1.0)
    res = ev.run(cfg, cfg.outdir)
    assert res.termination == "vacuum"
    assert res.events[-1]["kind"] == "vacuum"
    assert (tmp_path / "out" / "meta.json").is_file()


def test_run_dt_underflow(tmp_path):
    cfg = small_config(tmp_path, dt_min=1e-3, dt_max=1e-3, dt_init=1e-3)
    res = ev.run(cfg, cfg.outdir)
    assert res.termination == "dt_underflow"


def test_run_user_abort(tmp_path):
    calls = []

    def stop():
        calls.append(1)
        return len(calls) > 3

    cfg = small_config(tmp_path)
    res = ev.run(cfg, cfg.outdir, should_stop=stop)
    assert res.termination == "user_abort"
    assert res.steps == 3


def test_run_lifts_touching_data(tmp_path):
    cfg = small_config(tmp_path, beta=1.0, preset="bump(floor=0)", t_end=0.0)
    res = ev.run(cfg, cfg.outdir)
    assert res.events[0]["kind"] == "lift"
    assert res.meta["lift"]["lifted"]


def test_run_skew_reprojects(tmp_path):
    cfg = small_config(tmp_path, formulation="skew", eps=0.3, delta=1e-4, n=16, t_end=6e-7, dt_init=1e-8, adaptive=False)
    res = ev.run(cfg, cfg.outdir)
    assert res.termination == "t_end" and res.steps == 60
    assert res.meta["reprojections"] >= 1
    assert res.meta["skew_pairing_max"] <= 1e-10
    meta, cols = read_snapshot(sorted((tmp_path / "out").glob("snap_*.txt"))[-1])
    assert meta["columns"] == "x rho u q"


def test_run_regularized_energy_law(tmp_path):
    cfg = small_config(tmp_path, formulation="regularized", eps=0.3, delta=1e-4, n=16, t_end=1e-6, dt_init=1e-8, adaptive=False)
    res = ev.run(cfg, cfg.outdir)
    law = read_csv(tmp_path / "out" / "energy_law.csv")
    assert abs(law["drift"][-1]) <= 1e-3 * law["energy"][0]
    assert np.all(np.diff(law["khat"]) <= 1e-6 * (1 + law["khat"][0]))
    assert np.all(law["khat"] <= law["khat"][0] * (1 + 1e-6) + 1e-6)
    assert res.meta["delta"] == 1e-4


def test_run_in_memory_only():
    cfg = RunConfig.from_mapping(dict(beta=1.0, n=16, t_end=1e-7, dt_init=1e-9))
    res = ev.run(cfg)
    assert res.termination == "t_end"
    assert len(res.records) == res.steps + 1


def test_integrate_callback_and_landing():
    g = Grid(16)
    p = Params(0.0)
    seen = []
    st = ev.integrate(g, ev.initial_state(g, cosine(g), Formulation.DIRECT, p), p, 3e-9, 1e-7, callback=lambda s: seen.append(s.t))
    assert st.t == 1e-7
    assert len(seen) == round(1e-7 / 3e-9)
    assert ev.integrate(g, st, p, 1e-9, st.t) is st


def test_state_replace_keeps_formulation():
    st = State(0.0, Formulation.DIRECT, np.ones(16))
    assert replace(st, t=1.0).formulation is Formulation.DIRECT
