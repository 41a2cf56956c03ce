"""Run configuration: flat ``key = value`` files with optional section headers.

Section headers only group keys for readability; every key lives in one flat
namespace and may appear once.  Example::

    [model]
    beta = 0
    eps = 0.3
    formulation = regularized

    [grid]
    n = 64
    backend = spectral

    [time]
    t_end = 1e-4
    dt_init = 1e-8
    integrator = rk4

    [data]
    preset = cosine(a=0.25, k=1)
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .coefficients import EXCLUDED_BETAS, RHO_FLOOR
from .grid_ops import BACKENDS, SPECTRAL

FORMULATIONS = ("direct", "regularized", "skew")
INTEGRATORS = ("rk4", "semi_implicit")
PRESETS = ("constant", "cosine", "expsin", "bump", "qdd", "thinfilm")

_PRESET_DEFAULTS = {
    "constant": {},
    "cosine": {"a": 0.25, "k": 1},
    "expsin": {"a": 0.5},
    "bump": {"floor": 1e-3},
    "qdd": {"a": 0.5},
    "thinfilm": {"floor": 0.1},
}
_PRESET_ARGS = {"cosine": ("a", "k"), "expsin": ("a",), "bump": ("floor",), "qdd": ("a",), "thinfilm": ("floor",)}
_FORCED_BETA = {"qdd": -1.0, "thinfilm": 0.0}
# data whose minimum sits below this fraction of its mean counts as touching zero
TOUCH_TOL = 1e-12


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (exit code 64)."""


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    text = str(text).strip()
    if not text:
        return []
    return [float(v) for v in re.split(r"[,\s]+", text) if v]


@dataclass
class RunConfig:
    beta: float = 0.0
    eps: float = 0.0
    formulation: str = "direct"
    backend: str = SPECTRAL
    n: int = 64
    L: float = 1.0
    t_end: float = 1e-4
    dt_init: float = 1e-8
    dt_min: float = 1e-14
    dt_max: float = 1e-3
    integrator: str = "rk4"
    adaptive: bool = True
    cfl4: float = 0.25
    safety: float = 0.8
    snapshot_every: int = 0
    outdir: str = "out"
    preset: str = "cosine"
    seed: int = 0
    delta: float | None = None
    lift_floor: float = 1e-4
    dealias: bool = False
    weak_residual: bool = True
    eps_list: list = field(default_factory=list)
    beta_list: list = field(default_factory=list)
    dt_ladder: list = field(default_factory=list)
    n_ladder: list = field(default_factory=list)
    explicit: frozenset = field(default_factory=frozenset, repr=False, compare=False)

    # --- construction ---------------------------------------------------------

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name.lower(): f for f in fields(cls) if f.name != "explicit"}
        kwargs = {}
        for key, raw in values.items():
            f = known.get(key.strip().lower())
            if f is None:
                raise ConfigError(f"unknown config key {key.strip()!r}")
            if f.name in kwargs:
                raise ConfigError(f"key {f.name!r} given twice")
            kwargs[f.name] = _coerce(f.name, f, raw)
        cfg = cls(**kwargs, explicit=frozenset(kwargs))
        return cfg.validated()

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(path.read_text())

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string("[__root__]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        flat = {}
        for section in parser.sections():
            for key, value in parser.items(section):
                k = key.strip().lower()
                if k in flat:
                    raise ConfigError(f"key {k!r} appears in more than one section")
                flat[k] = value
        return cls.from_mapping(flat)

    # --- validation -----------------------------------------------------------

    def preset_spec(self):
        """(name, params) parsed from ``preset``, with defaults filled in."""
        return parse_preset(self.preset)

    def validated(self) -> "RunConfig":
        name, _ = self.preset_spec()
        if name in _FORCED_BETA:
            forced = _FORCED_BETA[name]
            if "beta" in self.explicit and self.beta != forced:
                raise ConfigError(f"preset {name} requires beta = {forced:g}, got beta = {self.beta:g}")
            self.beta = forced
            if self.formulation != "direct":
                raise ConfigError(f"preset {name} is a direct-formulation preset")
        if not (math.isfinite(self.beta) and self.beta > -3):
            raise ConfigError(f"beta must exceed -3, got {self.beta}")
        if not (0 <= self.eps < 1):
            raise ConfigError(f"eps must lie in [0, 1), got {self.eps}")
        if self.formulation not in FORMULATIONS:
            raise ConfigError(f"formulation must be one of {FORMULATIONS}, got {self.formulation!r}")
        if self.formulation != "direct":
            if self.eps <= 0:
                raise ConfigError(f"the {self.formulation} formulation needs eps > 0")
            if any(abs(self.beta - b) < 1e-12 for b in EXCLUDED_BETAS):
                raise ConfigError(f"beta = {self.beta:g} is an excluded log-branch value for {self.formulation}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        for n in [self.n] + list(self.n_ladder):
            if n < 16:
                raise ConfigError(f"need n >= 16, got {n}")
            if self.backend == SPECTRAL and n & (n - 1):
                raise ConfigError(f"spectral backend needs n to be a power of two, got {n}")
        if not self.L > 0:
            raise ConfigError(f"L must be positive, got {self.L}")
        if not self.t_end >= 0:
            raise ConfigError(f"t_end must be non-negative, got {self.t_end}")
        if not (0 < self.dt_min <= self.dt_max):
            raise ConfigError(f"need 0 < dt_min <= dt_max, got {self.dt_min}, {self.dt_max}")
        if not (self.dt_init > 0):
            raise ConfigError(f"dt_init must be positive, got {self.dt_init}")
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if self.formulation == "skew" and self.integrator != "rk4":
            raise ConfigError("the skew formulation supports integrator = rk4 only")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")
        if self.delta is not None and not self.delta >= 0:
            raise ConfigError(f"delta must be non-negative, got {self.delta}")
        if not self.lift_floor > 0:
            raise ConfigError("lift_floor must be positive")
        for e in self.eps_list:
            if not 0 <= e < 1:
                raise ConfigError(f"eps_list entry {e} outside [0, 1)")
        for b in self.beta_list:
            if not b > -3:
                raise ConfigError(f"beta_list entry {b} must exceed -3")
        return self

    # --- output ---------------------------------------------------------------

    def to_ini(self) -> str:
        """Config echo that reproduces the run on its own."""
        groups = {
            "model": ("beta", "eps", "formulation", "delta"),
            "grid": ("backend", "n", "L", "dealias"),
            "time": ("t_end", "dt_init", "dt_min", "dt_max", "integrator", "adaptive", "cfl4", "safety"),
            "data": ("preset", "seed", "lift_floor"),
            "output": ("snapshot_every", "outdir", "weak_residual"),
            "study": ("eps_list", "beta_list", "dt_ladder", "n_ladder"),
        }
        lines = []
        for section, keys in groups.items():
            lines.append(f"[{section}]")
            for k in keys:
                v = getattr(self, k)
                if v is None:
                    continue
                if isinstance(v, list):
                    if not v:
                        continue
                    v = ", ".join(_fmt(x) for x in v)
                else:
                    v = _fmt(v)
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("explicit")
        return d

    def replace(self, **changes) -> "RunConfig":
        explicit = self.explicit | frozenset(changes)
        return dataclasses.replace(self, explicit=explicit, **changes).validated()


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(key, f, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if key in ("eps_list", "beta_list", "dt_ladder"):
            return _floats(text)
        if key == "n_ladder":
            return [int(v) for v in _floats(text)]
        if key == "delta":
            return None if text.lower() in ("", "none", "schedule") else float(text)
        kind = {f.name: f.type for f in fields(RunConfig)}[key]
        if kind in ("float", float):
            return float(text)
        if kind in ("int", int):
            v = float(text)
            if v != int(v):
                raise ValueError(f"{text} is not an integer")
            return int(v)
        if kind in ("bool", bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"{text} is not a boolean")
        return text.lower() if key in ("formulation", "backend", "integrator") else text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc


def parse_preset(text: str):
    m = re.fullmatch(r"\s*([a-z_]+)\s*(?:\((.*)\))?\s*", str(text).lower())
    if not m or m.group(1) not in PRESETS:
        raise ConfigError(f"unknown preset {text!r}; expected one of {PRESETS}")
    name, args = m.group(1), m.group(2)
    params = dict(_PRESET_DEFAULTS[name])
    if args and args.strip():
        names = _PRESET_ARGS.get(name, ())
        for i, item in enumerate(a.strip() for a in args.split(",")):
            if "=" in item:
                k, v = (s.strip() for s in item.split("=", 1))
            elif i < len(names):
                k, v = names[i], item
            else:
                raise ConfigError(f"too many arguments for preset {name}")
            if k not in params:
                raise ConfigError(f"preset {name} has no parameter {k!r}")
            try:
                params[k] = float(v)
            except ValueError as exc:
                raise ConfigError(f"bad preset argument {item!r}") from exc
    if name == "cosine" and (params["k"] != int(params["k"]) or params["k"] < 1):
        raise ConfigError("cosine preset needs a positive integer k")
    if name in ("bump", "thinfilm") and params["floor"] < 0:
        raise ConfigError("preset floor must be non-negative")
    return name, params


def preset_density(cfg: RunConfig, x):
    """Unit-average initial density on nodes ``x`` and a lift record.

    Data that touches zero is lifted by ``lift_floor`` when beta >= 0 and is
    a configuration error otherwise.
    """
    name, prm = cfg.preset_spec()
    s = 2 * np.pi * np.asarray(x) / cfg.L
    if name == "constant":
        rho = np.ones_like(s)
    elif name == "cosine":
        rho = 1 + prm["a"] * np.cos(prm["k"] * s)
    elif name == "expsin":
        rho = np.exp(prm["a"] * np.sin(s))
    elif name == "bump":
        rho = prm["floor"] + np.cos(0.5 * s - 0.5 * np.pi) ** 4
    elif name == "qdd":
        rho = 1 + prm["a"] * np.cos(s)
    else:
        rho = prm["floor"] + np.exp(4 * (np.cos(s - np.pi) - 1))
    lift = {"lifted": False}
    if not np.min(rho) >= max(RHO_FLOOR, TOUCH_TOL * np.mean(rho)):
        if np.min(rho) < -1e-12:
            raise ConfigError(f"initial data is negative (min {np.min(rho):.3g})")
        if cfg.beta < 0:
            raise ConfigError(f"initial data touches zero (min {np.min(rho):.3g}); beta < 0 needs strictly positive data")
        lift = {"lifted": True, "lift_floor": cfg.lift_floor, "min_before_lift": float(np.min(rho))}
        rho = rho + cfg.lift_floor
    return rho / np.mean(rho), lift
