"""Command-line front end: ``kortflow {run,verify,convergence,sweep}``.

Exit codes: 0 success, 1 failed checks or sweep legs, 2 vacuum,
3 time-step underflow, 64 configuration error, 74 output error,
130 user abort.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .coefficients import DomainError, Params
from .config import ConfigError, RunConfig, preset_density
from .grid_ops import BACKENDS, Grid
from .io import dump_json, table_csv, write_json

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_VACUUM = 2
EXIT_DT_UNDERFLOW = 3
EXIT_CONFIG = 64
EXIT_IO = 74
EXIT_ABORT = 130

TERMINATION_EXIT = {"t_end": EXIT_OK, "vacuum": EXIT_VACUUM, "dt_underflow": EXIT_DT_UNDERFLOW, "user_abort": EXIT_ABORT}
SATURATION = 1e-12

log = logging.getLogger("kortflow")


def _load(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config)
    changes = {}
    if getattr(args, "backend", None):
        changes["backend"] = args.backend
    if getattr(args, "outdir", None):
        changes["outdir"] = args.outdir
    return cfg.replace(**changes) if changes else cfg


def _say(args, text):
    if not args.quiet:
        print(text)


# --- run ----------------------------------------------------------------------


def cmd_run(args) -> int:
    from .evolution import run

    cfg = _load(args)
    result = run(cfg, outdir=cfg.outdir)
    _say(args, f"{result.termination}: t={result.final.t:.6g} steps={result.steps} rejections={result.rejections} -> {cfg.outdir}")
    return TERMINATION_EXIT[result.termination]


# --- verify -------------------------------------------------------------------


def _parse_betas(text):
    if text is None:
        from .identity_lab import BETA_GRID

        return list(BETA_GRID)
    items = [s for s in str(text).replace(",", " ").split() if s]
    try:
        return [float(s) for s in items]
    except ValueError as exc:
        raise ConfigError(f"bad beta list {text!r}") from exc


def cmd_verify(args) -> int:
    from .identity_lab import run_suite

    betas = _parse_betas(args.betas)
    if not betas:
        raise ConfigError("empty beta list")
    for b in betas:
        try:
            Params.for_identities(b, args.eps)
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
    Grid(args.n, backend=args.backend or "spectral")
    reports = run_suite(betas, n=args.n, seed=args.seed, eps=args.eps, backend=args.backend or "spectral")
    payload = [r.to_json() for r in reports]
    if args.outdir:
        out = Path(args.outdir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "verify.json", payload)
    if not args.quiet:
        sys.stdout.write(dump_json(payload))
    failed = [r for r in reports if not r.passed]
    for r in failed:
        print(f"FAILED {r.name} beta={r.beta:g}: max_residual={r.max_residual:.3e} worst_case={r.worst_case}", file=sys.stderr)
    return EXIT_FAILED if failed else EXIT_OK


# --- convergence --------------------------------------------------------------


def _ladder_run(cfg: RunConfig, n: int, dt: float):
    """Fixed-step run; returns (grid, final rho, weak residual)."""
    from .evolution import Formulation, initial_state, integrate, resolve_delta
    from .functionals import WeakResidualTracker

    grid = Grid(n, cfg.L, cfg.backend, cfg.dealias)
    p = Params(cfg.beta, cfg.eps)
    rho0, _ = preset_density(cfg, grid.x)
    form = Formulation(cfg.formulation)
    delta = resolve_delta(p, cfg.delta)[0] if form is not Formulation.DIRECT else 0.0
    state = initial_state(grid, rho0, form, p, delta)
    tracker = WeakResidualTracker(grid, p) if p.theta != 0 else None
    if tracker is not None:
        tracker.add(0.0, state.rho)
    final = integrate(
        grid,
        state,
        p,
        dt,
        cfg.t_end,
        cfg.integrator,
        delta,
        callback=(lambda s: tracker.add(s.t, s.rho)) if tracker is not None else None,
    )
    weak = tracker.value(cfg.t_end) if tracker is not None and len(tracker) >= 3 else math.nan
    return grid, final.rho, weak


def _orders(errors, ratios):
    out = []
    for (e0, e1), r in zip(zip(errors, errors[1:]), ratios):
        out.append(math.log(e0 / e1) / math.log(r) if e0 > 0 and e1 > 0 else math.nan)
    return out


def convergence_study(cfg: RunConfig) -> dict:
    if bool(cfg.dt_ladder) == bool(cfg.n_ladder):
        raise ConfigError("convergence needs exactly one of dt_ladder or n_ladder")
    if cfg.t_end <= 0:
        raise ConfigError("convergence needs t_end > 0")
    ladder = list(cfg.dt_ladder or cfg.n_ladder)
    if len(ladder) < 3:
        raise ConfigError("a refinement ladder needs at least 3 entries")
    if len(set(ladder)) != len(ladder):
        raise ConfigError(f"ladder has identical entries: {ladder}")
    if cfg.dt_ladder:
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError(f"dt ladder must decrease strictly: {ladder}")
        runs = [_ladder_run(cfg, cfg.n, dt) for dt in ladder]
        fields = [r[1] for r in runs]
        ratios = [a / b for a, b in zip(ladder, ladder[1:])]
        kind = "time"
    else:
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError(f"n ladder must increase strictly: {ladder}")
        if any(b % a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError(f"each n must divide the next so grids share nodes: {ladder}")
        runs = [_ladder_run(cfg, n, cfg.dt_init) for n in ladder]
        base = ladder[0]
        fields = [r[1][:: n // base] for n, r in zip(ladder, runs)]
        ratios = [b / a for a, b in zip(ladder, ladder[1:])]
        kind = "space"
    diffs = [float(np.max(np.abs(a - b))) for a, b in zip(fields, fields[1:])]
    scale = float(np.max(np.abs(fields[-1])))
    saturated = kind == "space" and all(d <= SATURATION * scale for d in diffs[1:])
    weak = [r[2] for r in runs]
    weak_ratios = ratios[:]
    return {
        "kind": kind,
        "ladder": ladder,
        "differences": diffs,
        "observed_orders": _orders(diffs, ratios[1:]),
        "saturated": saturated,
        "weak_residuals": weak,
        "weak_decay_orders": _orders(weak, weak_ratios),
        "beta": cfg.beta,
        "eps": cfg.eps,
        "formulation": cfg.formulation,
        "integrator": cfg.integrator,
        "backend": cfg.backend,
    }


def cmd_convergence(args) -> int:
    cfg = _load(args)
    table = convergence_study(cfg)
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    write_json(out / "convergence.json", table)
    if not args.quiet:
        sys.stdout.write(dump_json(table))
    return EXIT_OK


# --- sweep --------------------------------------------------------------------

SWEEP_COLUMNS = [
    "leg",
    "beta",
    "eps",
    "termination",
    "steps",
    "final_t",
    "sup_grad_energy",
    "sup_rho_max",
    "int_theta_h2",
    "int_theta_grad4",
    "int_eps_h2_55",
    "int_eps_grad4_55",
    "int_eps3_h2_56",
    "int_eps3_grad4_56",
]


def _leg(cfg: RunConfig) -> dict:
    from .evolution import run

    try:
        res = run(cfg, outdir=cfg.outdir)
    except (ConfigError, DomainError) as exc:
        return {"beta": cfg.beta, "eps": cfg.eps, "termination": f"config_error: {exc}"}
    row = {"beta": cfg.beta, "eps": cfg.eps, "termination": res.termination, "steps": res.steps, "final_t": res.final.t}
    row.update(res.meta["uniform_bounds"])
    return row


def sweep_configs(cfg: RunConfig):
    epss = cfg.eps_list or [cfg.eps]
    betas = cfg.beta_list or [cfg.beta]
    legs = []
    for b in betas:
        for e in epss:
            name = f"beta={b:g}_eps={e:g}"
            try:
                leg = cfg.replace(beta=b, eps=e, eps_list=[], beta_list=[], outdir=str(Path(cfg.outdir) / name))
            except ConfigError as exc:
                leg = exc
            legs.append((name, leg, b, e))
    return legs


def cmd_sweep(args) -> int:
    cfg = _load(args)
    legs = sweep_configs(cfg)
    rows = [None] * len(legs)
    todo = []
    for i, (name, leg, b, e) in enumerate(legs):
        if isinstance(leg, ConfigError):
            rows[i] = {"leg": name, "beta": b, "eps": e, "termination": f"config_error: {leg}"}
        else:
            todo.append((i, name, leg))
    jobs = max(1, int(args.jobs or 1))
    if jobs == 1 or len(todo) <= 1:
        results = [_leg(leg) for _, _, leg in todo]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(todo))) as pool:
            results = list(pool.map(_leg, [leg for _, _, leg in todo]))
    for (i, name, _), row in zip(todo, results):
        rows[i] = {"leg": name, **row}
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    (out / "sweep.csv").write_text(table_csv(SWEEP_COLUMNS, rows))
    failed = [r for r in rows if r["termination"] != "t_end"]
    for r in rows:
        _say(args, f"{r['leg']}: {r['termination']}")
    return EXIT_FAILED if failed else EXIT_OK


# --- entry point --------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="kortflow", description="Korteweg-energy gradient flow on the torus.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="configuration file")
        p.add_argument("--outdir", help="output directory (overrides the config)")
        p.add_argument("--backend", choices=BACKENDS)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--quiet", action="store_true")

    common(sub.add_parser("run", help="integrate one configured run"))
    v = sub.add_parser("verify", help="run the identity and inequality checks")
    common(v, config=False)
    v.add_argument("--betas", help="comma-separated beta values (default: the fixed sweep grid)")
    v.add_argument("--n", type=int, default=256)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--eps", type=float, default=0.0)
    common(sub.add_parser("convergence", help="refinement study over a dt or n ladder"))
    common(sub.add_parser("sweep", help="runs over eps and/or beta axes"))
    return parser


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "convergence": cmd_convergence, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KeyboardInterrupt:
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
