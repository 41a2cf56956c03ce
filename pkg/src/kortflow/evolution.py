"""Time stepping for the three formulations of the Korteweg gradient flow.

DIRECT       rho_t = -d/dx(rho d/dx K(rho))
REGULARIZED  rho_t = -d/dx(rho u),  -delta u_xx + rho u = d/dx(rho mu' (phi)_xx)
SKEW         (rho, Q) with Q = sqrt(kappa/rho) rho_x and the skew-symmetric
             coupling between Q and u

All updates are in flux form, so the discrete mean of rho is conserved up to
round-off.  Negative or zero densities are never clipped: the step is
rejected and retried with half the time step.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, lu_factor, lu_solve

from . import coefficients as co
from .coefficients import DomainError, Params, VacuumError, check_positive
from .elliptic import EllipticProblem, SolverError, assemble_rhs, solve_velocity
from .functionals import first_variation
from .grid_ops import Grid

log = logging.getLogger(__name__)

RK4 = "rk4"
SEMI_IMPLICIT = "semi_implicit"
INTEGRATORS = (RK4, SEMI_IMPLICIT)

REPROJECT_EVERY = 50
Q_DRIFT_TOL = 1e-6


class Formulation(str, enum.Enum):
    DIRECT = "direct"
    REGULARIZED = "regularized"
    SKEW = "skew"


class StepRejected(Exception):
    """A trial step left the admissible set; ``vacuum`` tells whether by positivity."""

    def __init__(self, message, vacuum=False):
        super().__init__(message)
        self.vacuum = vacuum


@dataclass(frozen=True)
class State:
    t: float
    formulation: Formulation
    rho: np.ndarray
    u: np.ndarray | None = None
    q: np.ndarray | None = None


@dataclass
class StepController:
    """Step-size bookkeeping.

    With ``adaptive`` off the step is ``dt`` every time (refinement studies);
    otherwise explicit steps are capped by the fourth-order stability estimate
    and semi-implicit steps grow geometrically up to ``dt_max``.
    """

    dt: float
    dt_min: float = 1e-14
    dt_max: float = 1e-3
    safety: float = 0.8
    cfl4: float = 0.25
    adaptive: bool = True
    growth: float = 1.2

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt_max):
            raise DomainError(f"need 0 < dt_min <= dt_max, got {self.dt_min}, {self.dt_max}")
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        self.dt = min(max(self.dt, self.dt_min), self.dt_max)

    def explicit_limit(self, grid: Grid, rho, p: Params, delta: float = 0.0) -> float:
        """cfl4 / (max(rho kappa_eps) * max|symbol of d4/dx4|), eased by delta."""
        stiff = float(np.max(rho * co.kappa_eps(rho, p))) * grid.d4_symbol_max()
        if delta:
            kmax = grid.d4_symbol_max() ** 0.5
            stiff /= 1.0 + delta * kmax / float(np.max(rho))
        return self.cfl4 / stiff

    def propose(self, grid, rho, p, integrator, delta=0.0) -> float:
        if not self.adaptive:
            return self.dt
        if integrator == RK4:
            return min(self.dt, self.safety * self.explicit_limit(grid, rho, p, delta))
        return self.dt

    def accepted(self):
        if self.adaptive:
            self.dt = min(self.dt * self.growth, self.dt_max)

    def rejected(self):
        self.dt *= 0.5


# --- right-hand sides -----------------------------------------------------------


def flux_direct(grid: Grid, rho, p: Params):
    """J = rho d/dx K(rho); the DIRECT update is rho_t = -d/dx J."""
    rho = check_positive(rho)
    return rho * grid.dx(first_variation(grid, rho, p))


def qdd_flux(grid: Grid, rho):
    """rho d/dx((sqrt rho)_xx / sqrt rho), assembled without kappa."""
    s = grid.power_field(rho, 0.5)
    return rho * grid.dx(grid.dxx(s) / s)


def alpha_flux(grid: Grid, rho, alpha: float):
    """(1/alpha) rho d/dx(rho**(alpha-1) (rho**alpha)_xx), the alpha-form flux."""
    g = grid.power_field(rho, alpha - 1) * grid.dxx(grid.power_field(rho, alpha))
    return rho * grid.dx(g) / alpha


def thin_film_flux(grid: Grid, rho):
    return rho * grid.dx(grid.dxx(rho))


def rhs_direct(grid, rho, p):
    return -grid.dx(flux_direct(grid, rho, p))


def velocity_regularized(grid, rho, p, delta):
    rhs = assemble_rhs(grid, rho, p)
    if delta == 0:
        return rhs / rho
    return solve_velocity(EllipticProblem(grid, rho, delta, rhs))[0]


def rhs_regularized(grid, rho, p, delta, u=None):
    if u is None:
        u = velocity_regularized(grid, rho, p, delta)
    return -grid.dx(rho * u), u


def skew_coefficients(rho, p):
    """(sqrt(kappa/rho), kappa_tilde = sqrt(rho kappa))."""
    kap = co.kappa_eps(rho, p)
    return np.sqrt(kap / rho), np.sqrt(rho * kap)


def q_from_rho(grid, rho, p):
    return skew_coefficients(rho, p)[0] * grid.dx(rho)


def velocity_skew(grid, rho, q, p, delta):
    """u from -delta rho**-1 u_xx + u - (kt q_x)_x = (q**2)_x / 2."""
    _, kt = skew_coefficients(rho, p)
    g = grid.dx(kt * grid.dx(q)) + 0.5 * grid.dx(q * q)
    if delta == 0:
        return g
    # multiply through by rho to reuse the symmetric positive definite solve;
    # rho * g is a divergence only while q stays consistent with rho
    prob = EllipticProblem(grid, rho, delta, rho * g, divergence=False)
    return solve_velocity(prob)[0]


def rhs_skew(grid, rho, q, p, delta, u=None):
    if u is None:
        u = velocity_skew(grid, rho, q, p, delta)
    _, kt = skew_coefficients(rho, p)
    drho = -grid.dx(rho * u)
    dq = -grid.dx(kt * grid.dx(u)) - grid.dx(u * q)
    return drho, dq, u


def skew_pairing(grid, rho, q, u, p):
    """(int (kt u_x)_x q - (kt q_x)_x u, scale); zero for a skew-adjoint pair."""
    _, kt = skew_coefficients(rho, p)
    a = grid.integrate(grid.dx(kt * grid.dx(u)) * q)
    b = grid.integrate(grid.dx(kt * grid.dx(q)) * u)
    return a - b, abs(a) + abs(b)


def q_drift(grid, state, p) -> float:
    ref = q_from_rho(grid, state.rho, p)
    return float(np.max(np.abs(state.q - ref)))


# --- steppers ------------------------------------------------------------------


def _positive(rho, stage):
    try:
        return check_positive(rho)
    except VacuumError as exc:
        raise StepRejected(f"positivity lost at {stage}: {exc}", vacuum=True) from exc


def _finite(*arrs):
    for a in arrs:
        if not np.all(np.isfinite(a)):
            raise StepRejected("non-finite values in trial step")


def _rk4(f, y, dt):
    k1 = f(y, 0)
    k2 = f([a + 0.5 * dt * b for a, b in zip(y, k1)], 1)
    k3 = f([a + 0.5 * dt * b for a, b in zip(y, k2)], 2)
    k4 = f([a + dt * b for a, b in zip(y, k3)], 3)
    return [a + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)]


def step_explicit(grid: Grid, state: State, p: Params, dt: float) -> State:
    """One classical RK4 step of the DIRECT semidiscrete system."""

    def f(y, stage):
        return [rhs_direct(grid, _positive(y[0], f"stage {stage}"), p)]

    (rho,) = _rk4(f, [state.rho], dt)
    _finite(rho)
    _positive(rho, "end of step")
    return replace(state, t=state.t + dt, rho=rho)


def _linear_solve(mat, rhs):
    try:
        lu = lu_factor(mat, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise SolverError(f"semi-implicit linear solve failed: {exc}") from exc
    out = lu_solve(lu, rhs)
    if not np.all(np.isfinite(out)):
        raise SolverError("semi-implicit linear solve produced non-finite values")
    return out


def _leading_operator(grid, rho, p):
    """Dense matrix of d/dx(a d3/dx3 .) with frozen a = rho kappa_eps(rho)."""
    d1, d2 = grid.d1_matrix(), grid.d2_matrix()
    a = rho * co.kappa_eps(rho, p)
    return d1 @ (a[:, None] * (d1 @ d2))


def step_semi_implicit(grid: Grid, state: State, p: Params, dt: float) -> State:
    """Linearly implicit Euler step of the DIRECT system.

    (I + dt L) incr = -dt d/dx J(rho), where L is the frozen-coefficient
    fourth-order part; the increment is projected to zero mean.
    """
    rho = _positive(state.rho, "start of step")
    lin = _leading_operator(grid, rho, p)
    incr = _linear_solve(np.eye(grid.n) + dt * lin, dt * rhs_direct(grid, rho, p))
    incr -= np.mean(incr)
    new = rho + incr
    _finite(new)
    _positive(new, "end of step")
    return replace(state, t=state.t + dt, rho=new)


def step_regularized(grid: Grid, state: State, p: Params, dt: float, delta: float, integrator: str = RK4) -> State:
    """Continuity step rho_t = -d/dx(rho u) with u from the velocity solve."""
    rho0 = _positive(state.rho, "start of step")
    if integrator == RK4:

        def f(y, stage):
            r = _positive(y[0], f"stage {stage}")
            return [rhs_regularized(grid, r, p, delta, state.u if stage == 0 else None)[0]]

        (rho,) = _rk4(f, [rho0], dt)
    else:
        d1, d2 = grid.d1_matrix(), grid.d2_matrix()
        a = rho0 * co.kappa_eps(rho0, p)
        inner = d1 @ (a[:, None] * (d1 @ d2))
        mass_op = np.diag(rho0) - delta * d2 if delta else np.diag(rho0)
        lin = d1 @ (rho0[:, None] * _linear_solve(mass_op, inner))
        expl = rhs_regularized(grid, rho0, p, delta, state.u)[0]
        incr = _linear_solve(np.eye(grid.n) + dt * lin, dt * expl)
        incr -= np.mean(incr)
        rho = rho0 + incr
    _finite(rho)
    rho = _positive(rho, "end of step")
    u = velocity_regularized(grid, rho, p, delta)
    return replace(state, t=state.t + dt, rho=rho, u=u)


def step_skew(grid: Grid, state: State, p: Params, dt: float, delta: float) -> State:
    """RK4 step of the (rho, Q) system; u is recomputed at every stage."""

    def f(y, stage):
        r = _positive(y[0], f"stage {stage}")
        drho, dq, _ = rhs_skew(grid, r, y[1], p, delta, state.u if stage == 0 else None)
        return [drho, dq]

    rho, q = _rk4(f, [state.rho, state.q], dt)
    _finite(rho, q)
    rho = _positive(rho, "end of step")
    u = velocity_skew(grid, rho, q, p, delta)
    return replace(state, t=state.t + dt, rho=rho, q=q, u=u)


def initial_state(grid: Grid, rho, formulation: Formulation, p: Params, delta: float = 0.0) -> State:
    rho = check_positive(grid.field(rho))
    formulation = Formulation(formulation)
    if formulation is Formulation.DIRECT:
        return State(0.0, formulation, rho)
    if p.eps <= 0:
        raise DomainError(f"the {formulation.value} formulation needs eps > 0")
    if formulation is Formulation.REGULARIZED:
        return State(0.0, formulation, rho, u=velocity_regularized(grid, rho, p, delta))
    q = q_from_rho(grid, rho, p)
    return State(0.0, formulation, rho, u=velocity_skew(grid, rho, q, p, delta), q=q)


def advance(grid, state, p, dt, integrator=RK4, delta=0.0) -> State:
    """Dispatch one trial step; raises :class:`StepRejected` on failure."""
    try:
        if state.formulation is Formulation.DIRECT:
            if integrator == RK4:
                return step_explicit(grid, state, p, dt)
            return step_semi_implicit(grid, state, p, dt)
        if state.formulation is Formulation.REGULARIZED:
            return step_regularized(grid, state, p, dt, delta, integrator)
        if integrator != RK4:
            raise DomainError("the skew formulation is integrated with rk4 only")
        return step_skew(grid, state, p, dt, delta)
    except (SolverError, FloatingPointError, OverflowError) as exc:
        raise StepRejected(str(exc)) from exc


# --- driver --------------------------------------------------------------------


@dataclass
class RunResult:
    states: list
    records: list
    termination: str
    steps: int
    rejections: int
    events: list = field(default_factory=list)
    energy_law: list = field(default_factory=list)
    weak_residual: float = float("nan")
    final: State | None = None


def resolve_delta(p: Params, override: float | None = None):
    """(delta, note): delta_eps unless overridden; underflow maps to 0."""
    if override is not None:
        return float(override), "artificial delta (override)"
    d = p.delta_eps
    if 0 < d < 1e-300 or (p.eps > 0 and d == 0):
        log.info("delta_eps underflows for eps=%g; using delta = 0", p.eps)
        return 0.0, "delta_eps underflow -> 0"
    return d, "delta_eps"


def _try(fn, *args):
    try:
        return fn(*args)
    except DomainError:
        return None


class _BoundTracker:
    """Suprema and trapezoid time integrals of the eps-uniform bound integrands."""

    SUP = ("grad_energy", "rho_max")

    def __init__(self):
        self.sup = {}
        self.integral = {}
        self._prev = None

    def add(self, t, values):
        if values is None:
            return
        for k in self.SUP:
            self.sup[k] = max(self.sup.get(k, -math.inf), values[k])
        if self._prev is not None:
            t0, v0 = self._prev
            for k, v in values.items():
                if k not in self.SUP:
                    self.integral[k] = self.integral.get(k, 0.0) + 0.5 * (t - t0) * (v + v0[k])
        else:
            for k in values:
                if k not in self.SUP:
                    self.integral.setdefault(k, 0.0)
        self._prev = (t, values)

    def summary(self):
        out = {f"sup_{k}": v for k, v in self.sup.items()}
        out.update({f"int_{k}": v for k, v in self.integral.items()})
        return out


def run(cfg, outdir=None, should_stop=None) -> RunResult:
    """Integrate a configured run to ``t_end``.

    With ``outdir`` the run writes snapshots as it goes and, on exit (also on
    abort), ``diagnostics.csv``, ``meta.json``, ``timing.json`` and the config
    echo ``config.ini``.  ``should_stop()`` is polled once per step.
    """
    import time
    from pathlib import Path

    from .config import preset_density
    from .functionals import (
        WeakResidualTracker,
        diagnose,
        korteweg_energy,
        uniform_bound_integrands,
        vacuum_envelope,
    )
    from .io import diagnostics_csv, snapshot_text, table_csv, write_json

    wall0 = time.perf_counter()
    grid = Grid(cfg.n, cfg.L, cfg.backend, cfg.dealias)
    p = Params(cfg.beta, cfg.eps)
    rho0, lift = preset_density(cfg, grid.x)
    form = Formulation(cfg.formulation)
    delta, delta_note = resolve_delta(p, cfg.delta) if form is not Formulation.DIRECT else (0.0, "not used")
    state = initial_state(grid, rho0, form, p, delta)
    ctrl = StepController(cfg.dt_init, cfg.dt_min, cfg.dt_max, cfg.safety, cfg.cfl4, cfg.adaptive)
    integrator = cfg.integrator

    out = Path(outdir) if outdir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(cfg.to_ini())
    snap_meta = {"beta": repr(p.beta), "eps": repr(p.eps), "n": grid.n, "L": repr(grid.length)}
    snap_files = []

    def snapshot(st, step):
        snaps.append(st)
        if out is not None:
            name = f"snap_{step:08d}.txt"
            (out / name).write_text(snapshot_text(grid.x, st, snap_meta))
            snap_files.append(name)

    events = []
    if lift["lifted"]:
        events.append({"kind": "lift", **lift})
    if form is not Formulation.DIRECT:
        events.append({"kind": "delta", "delta": delta, "note": delta_note})

    tracker = None
    if cfg.weak_residual and p.theta != 0:
        tracker = WeakResidualTracker(grid, p)
        tracker.add(0.0, state.rho)
    bounds = _BoundTracker()
    bounds.add(0.0, _try(uniform_bound_integrands, grid, state.rho, p))

    def diag(st):
        u = st.u if form is not Formulation.DIRECT else None
        return diagnose(grid, st.rho, p, st.t, u=u, delta=delta, weak=float("nan"))

    records = [diag(state)]
    e0 = korteweg_energy(grid, state.rho, p)
    mass0 = records[0].mass
    dissipated = 0.0
    law = [{"t": 0.0, "energy": e0, "dissipated": 0.0, "drift": 0.0, "khat": vacuum_envelope(records[0].rho_min, records[0].rho_max, p.eps)}]
    snaps = []
    snapshot(state, 0)

    steps = rejections = reprojections = 0
    max_mass_drift = 0.0
    max_pairing = 0.0
    termination = "t_end"
    try:
        while state.t < cfg.t_end:
            if should_stop is not None and should_stop():
                termination = "user_abort"
                break
            dt = ctrl.propose(grid, state.rho, p, integrator, delta)
            if dt < ctrl.dt_min:
                termination = "dt_underflow"
                break
            remaining = cfg.t_end - state.t
            last = remaining <= dt * (1 + 1e-9)
            if last:
                dt = remaining
            try:
                new = advance(grid, state, p, dt, integrator, delta)
            except StepRejected as exc:
                rejections += 1
                ctrl.rejected()
                log.debug("step rejected at t=%g dt=%g: %s", state.t, dt, exc)
                if ctrl.dt < ctrl.dt_min:
                    termination = "vacuum" if exc.vacuum else "dt_underflow"
                    events.append({"kind": termination, "t": state.t, "reason": str(exc)})
                    break
                continue
            if last:
                new = replace(new, t=cfg.t_end)
            steps += 1
            ctrl.accepted()
            if form is Formulation.SKEW:
                num, scale = skew_pairing(grid, new.rho, new.q, new.u, p)
                if scale:
                    max_pairing = max(max_pairing, abs(num) / scale)
                drift = q_drift(grid, new, p)
                breach = drift > Q_DRIFT_TOL * (1 + float(np.max(np.abs(new.q))))
                if breach or steps % REPROJECT_EVERY == 0:
                    q = q_from_rho(grid, new.rho, p)
                    new = replace(new, q=q, u=velocity_skew(grid, new.rho, q, p, delta))
                    reprojections += 1
                    if breach:
                        events.append({"kind": "reproject", "t": new.t, "step": steps, "drift": drift})
            rec = diag(new)
            prev = records[-1]
            dissipated += 0.5 * (new.t - state.t) * (rec.energy_dissip + prev.energy_dissip)
            law.append(
                {
                    "t": new.t,
                    "energy": rec.energy,
                    "dissipated": dissipated,
                    "drift": rec.energy + dissipated - e0,
                    "khat": vacuum_envelope(rec.rho_min, rec.rho_max, p.eps),
                }
            )
            max_mass_drift = max(max_mass_drift, abs(rec.mass - mass0) / mass0)
            records.append(rec)
            if tracker is not None:
                tracker.add(new.t, new.rho)
            bounds.add(new.t, _try(uniform_bound_integrands, grid, new.rho, p))
            state = new
            if cfg.snapshot_every and steps % cfg.snapshot_every == 0:
                snapshot(state, steps)
    except KeyboardInterrupt:
        termination = "user_abort"

    if snaps[-1] is not state:
        snapshot(state, steps)
    weak = float("nan")
    if tracker is not None and len(tracker) >= 3:
        weak = tracker.value(state.t)
        records[-1] = replace(records[-1], weak_residual=weak)

    result = RunResult(
        states=snaps,
        records=records,
        termination=termination,
        steps=steps,
        rejections=rejections,
        events=events,
        energy_law=law,
        weak_residual=weak,
        final=state,
    )
    if out is not None:
        (out / "diagnostics.csv").write_text(diagnostics_csv(records))
        (out / "energy_law.csv").write_text(table_csv(["t", "energy", "dissipated", "drift", "khat"], law))
        meta = {
            "config": cfg.as_dict(),
            "termination": termination,
            "steps": steps,
            "rejections": rejections,
            "final_t": state.t,
            "delta": delta,
            "delta_note": delta_note,
            "lift": lift,
            "events": events,
            "max_mass_drift": max_mass_drift,
            "energy_law_drift": law[-1]["drift"],
            "weak_residual": weak,
            "skew_pairing_max": max_pairing if form is Formulation.SKEW else None,
            "reprojections": reprojections,
            "uniform_bounds": bounds.summary(),
            "snapshots": snap_files,
        }
        write_json(out / "meta.json", meta)
        write_json(out / "timing.json", {"wall_time_s": time.perf_counter() - wall0})
    result.meta = {
        "max_mass_drift": max_mass_drift,
        "skew_pairing_max": max_pairing,
        "reprojections": reprojections,
        "uniform_bounds": bounds.summary(),
        "delta": delta,
        "lift": lift,
    }
    return result


def integrate(grid: Grid, state: State, p: Params, dt: float, t_end: float, integrator: str = RK4, delta: float = 0.0, callback=None) -> State:
    """Fixed-step integration to ``t_end`` without step control.

    The step count is round(t_end / dt) and the step is adjusted so the run
    lands on ``t_end`` exactly.  ``callback(state)`` sees every new state.
    Any rejection is fatal here, since refinement studies need uniform steps.
    """
    nsteps = max(int(round((t_end - state.t) / dt)), 0)
    if nsteps == 0:
        return state
    h = (t_end - state.t) / nsteps
    t0 = state.t
    for i in range(1, nsteps + 1):
        state = advance(grid, state, p, h, integrator, delta)
        state = replace(state, t=t0 + i * h)
        if state.formulation is Formulation.SKEW and i % REPROJECT_EVERY == 0:
            q = q_from_rho(grid, state.rho, p)
            state = replace(state, q=q, u=velocity_skew(grid, state.rho, q, p, delta))
        if callback is not None:
            callback(state)
    return state
