"""Run configuration: a flat, typed `section.key = value` text format.

Lines are `key = value`; `#` starts a comment. Every key has a fixed type and
default, unknown keys are rejected, and `to_text` writes floats with repr so
that parse(to_text(cfg)) == cfg.
"""

import dataclasses
import math
from pathlib import Path

import numpy as np

from .domain import (FlowState, Grid, SimParams, build_profile, exp_density, linear_density,
                     linear_shear, random_state, tanh_jet, tanh_pycnocline)
from .errors import ConfigError, IsopycError

_SIM_TYPES = {f.name: type(f.default) for f in dataclasses.fields(SimParams)}

SCHEMA = {
    "grid.d": (int, 1),
    "grid.Nx": (int, 64),
    "grid.Nr": (int, 33),
    "grid.L": (float, 2 * math.pi),
    **{f"params.{f.name}": (_SIM_TYPES[f.name], f.default) for f in dataclasses.fields(SimParams)},
    "profile.density": (str, "exp"),
    "profile.rho0": (float, 1.0),
    "profile.rate": (float, 1.0),
    "profile.tanh_delta": (float, 0.5),
    "profile.tanh_r0": (float, 0.5),
    "profile.tanh_width": (float, 0.1),
    "profile.tanh_slope": (float, 0.05),
    "profile.shear": (str, "none"),
    "profile.shear_strength": (float, 0.0),
    "profile.jet_r0": (float, 0.5),
    "profile.jet_width": (float, 0.2),
    "profile.boussinesq": (bool, False),
    "initial.kind": (str, "equilibrium"),
    "initial.amplitude": (float, 0.1),
    "initial.k": (int, 1),
    "initial.n": (int, 1),
    "initial.seed": (int, 0),
    "dynamics.compiled": (bool, True),
    "dynamics.project_initial": (bool, True),
    "output.directory": (str, "isopyc_out"),
    "output.snapshot_every": (int, 0),
    "output.series_every": (int, 10),
    "verify.suites": (str, "elliptic,identities,waves,divergence,bridge,energy,sweep"),
}

CHOICES = {
    "profile.density": ("exp", "linear", "tanh"),
    "profile.shear": ("none", "linear", "jet"),
    "initial.kind": ("equilibrium", "random", "eta_mode", "w_mode"),
}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(key, typ, text):
    try:
        if typ is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {text!r}") from None


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Validated configuration; `values` maps every schema key to its typed value."""

    values: tuple

    @classmethod
    def from_dict(cls, d=None):
        vals = {k: default for k, (_, default) in SCHEMA.items()}
        for k, v in (d or {}).items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown key {k!r}")
            typ = SCHEMA[k][0]
            vals[k] = _convert(k, typ, v) if isinstance(v, str) else typ(v)
        for k, allowed in CHOICES.items():
            if vals[k] not in allowed:
                raise ConfigError(f"{k}: {vals[k]!r} is not one of {', '.join(allowed)}")
        cfg = cls(tuple(vals.items()))
        cfg.grid()
        cfg.params()
        return cfg

    def __getitem__(self, key):
        return dict(self.values)[key]

    def replace(self, **kw):
        """Copy with keys given as section__key=value, e.g. grid__Nr=65."""
        d = dict(self.values)
        d.update({k.replace("__", "."): v for k, v in kw.items()})
        return RunConfig.from_dict(d)

    def section(self, name):
        pre = name + "."
        return {k[len(pre):]: v for k, v in self.values if k.startswith(pre)}

    def grid(self):
        try:
            return Grid(**self.section("grid"))
        except (ValueError, TypeError) as e:
            raise ConfigError(f"grid: {e}") from None

    def params(self):
        try:
            return SimParams(**self.section("params"))
        except (ValueError, TypeError) as e:
            raise ConfigError(f"params: {e}") from None

    def profile(self, grid=None, params=None):
        grid = grid or self.grid()
        params = params or self.params()
        p = self.section("profile")
        if p["density"] == "exp":
            rho = exp_density(p["rate"], p["rho0"])
        elif p["density"] == "linear":
            rho = linear_density(p["rate"], p["rho0"])
        else:
            rho = tanh_pycnocline(p["rho0"], p["tanh_delta"], p["tanh_r0"], p["tanh_width"], p["tanh_slope"])
        if p["shear"] == "none":
            vbar = None
        elif p["shear"] == "linear":
            vbar = linear_shear(p["shear_strength"])
        else:
            vbar = tanh_jet(p["shear_strength"] * p["jet_width"], p["jet_r0"], p["jet_width"])
        try:
            return build_profile(rho, vbar, grid, params, boussinesq=p["boussinesq"])
        except (IsopycError, ValueError) as e:
            raise ConfigError(f"profile: {e}") from None

    def initial_state(self, profile, params, seed=None):
        """Initial perturbation; raw fields are Leray-projected unless dynamics.project_initial is off."""
        from .dynamics import prepare_initial_data
        g = profile.grid
        init = self.section("initial")
        kind, A = init["kind"], init["amplitude"]
        if kind == "equilibrium":
            return FlowState.zeros(g)
        seed = init["seed"] if seed is None else seed
        R, *X = g.mesh()
        mode = np.sin(init["n"] * np.pi * R) * np.cos(init["k"] * 2 * np.pi / g.L * X[0])
        V = np.zeros(g.vshape)
        w = np.zeros(g.shape)
        eta = np.zeros(g.shape)
        if kind == "random":
            s = random_state(g, seed, A, params.epsilon)
            V, w, eta = s.V, s.w, s.eta
        elif kind == "eta_mode":
            eta = A * mode
        else:
            w = A * mode
        if not self["dynamics.project_initial"]:
            return FlowState(g, V, w, eta)
        return prepare_initial_data(V, w, eta, profile, params)

    def to_text(self):
        lines = []
        section = None
        for k, v in self.values:
            s = k.split(".", 1)[0]
            if s != section:
                if section is not None:
                    lines.append("")
                lines.append(f"# {s}")
                section = s
            lines.append(f"{k} = {_format(v)}")
        return "\n".join(lines) + "\n"


def parse_config(text, source="<config>"):
    """Parse config text; errors name the offending key and line."""
    found = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        if key in found:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        found[key] = _convert(key, SCHEMA[key][0], value)
    return RunConfig.from_dict(found)


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text, str(path))
