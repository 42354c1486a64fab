"""Scenario configuration: JSON schema, physical cross-checks, presets."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import jsonschema
import numpy as np

from ..core import CavityMedium, PotentialSpec, effective_mass, make_grid
from ..errors import ValidationError

PRESETS = ("fig1", "equivalence", "bell", "imaging", "waveguide")

_num = {"type": "number"}
_int = {"type": "integer"}
_bool = {"type": "boolean"}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = _obj({
    "name": {"type": "string"},
    "medium": _obj({
        "eps_real": _num, "eps_imag": _num, "m": _num, "q": _int, "D0": _num,
        "Gamma": _num, "gE": _num, "gB": _num, "loss_guard": _num,
    }),
    "grid": _obj({
        "nx": _int, "ny": _int, "Lx": _num, "Ly": _num,
        "periodic": {"oneOf": [_bool, {"type": "array", "items": _bool,
                                       "minItems": 2, "maxItems": 2}]},
        "spectral": _bool, "derivative": {"enum": ["spectral", "central"]},
    }, ["nx", "ny", "Lx", "Ly"]),
    "potential": _obj({
        "kind": {"enum": ["uniform", "step", "rectangular-waveguide"]},
        "params": {"type": "object"},
        "guard": _num, "strict": _bool,
    }),
    "initial_state": {
        "oneOf": [
            _obj({"kind": {"const": "stationary"},
                  "mode": {"enum": ["propagating-plane-wave", "leaky-plane-wave",
                                    "evanescent", "waveguide-step"]},
                  "params": {"type": "object"}}, ["kind", "mode"]),
            _obj({"kind": {"const": "gaussian"}, "x0": _num, "y0": _num,
                  "sigma_x": _num, "sigma_y": {"type": ["number", "null"]},
                  "kx": _num, "ky": _num}, ["kind"]),
            _obj({"kind": {"const": "stream"}, "x0": _num, "y0": _num,
                  "sigma": _num, "kx": _num, "ky": _num}, ["kind"]),
        ]},
    "run": _obj({
        "dt": _num, "t_end": _num, "stride": _int, "seed": _int,
        "scheme": {"enum": ["split-step", "implicit"]},
        "boundary": {"enum": ["periodic", "sponge"]},
        "sponge_width": _num, "sponge_strength": _num,
    }),
    "audits": _obj({
        "equivalence": _bool, "conservation": _bool, "berry": _bool, "bell_jumps": _bool,
        "nz_per_order": _int, "e_hat": _pair,
    }),
    "trajectories": _obj({
        "seeds": {"type": "array", "items": _pair}, "dt": _num, "t_end": _num,
    }),
    "bell": _obj({"N": _int, "t_end": _num, "dt": _num}),
    "fig1": _obj({
        "white_seeds": {"type": "array", "items": _num},
        "red_seeds": {"type": "array", "items": _pair},
        "z_start": _num, "dt": _num, "nz_plot": _int,
    }),
    "leaky": _obj({
        "eta": _num, "D": _num, "q": _int, "E": _num, "NA": _num, "M": _num,
        "I0": _num, "d": _num, "eps_real": _num, "n_image": _int, "x_extent": _num,
    }),
    "si": _obj({"lifetime_s": _num, "detuning_eV": _num, "wavelength_m": _num}),
    "output": _obj({"dir": {"type": "string"}}),
}, ["medium", "grid"])

DEFAULTS = {
    "name": "scenario",
    "potential": {"kind": "uniform", "params": {"delta_D": 0.0}, "guard": 0.1,
                  "strict": False},
    "initial_state": {"kind": "stationary", "mode": "propagating-plane-wave",
                      "params": {"k": 0.0}},
    "run": {"dt": 1.0, "t_end": 0.0, "stride": 10, "seed": 0, "scheme": "split-step",
            "boundary": "periodic", "sponge_width": 0.0, "sponge_strength": 0.0},
    "audits": {"equivalence": False, "conservation": False, "berry": False,
               "bell_jumps": False, "nz_per_order": 32, "e_hat": [0.0, 1.0]},
    "output": {"dir": "out"},
}

MEDIUM_DEFAULTS = {"eps_real": 1.0, "eps_imag": 0.0, "Gamma": 0.0, "gB": 1.0,
                   "loss_guard": 0.1}
GRID_DEFAULTS = {"periodic": True, "spectral": False}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if (isinstance(v, dict) and isinstance(out.get(k), dict)
                and k not in ("params", "initial_state")):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _physical_problems(d):
    probs = []
    med = d.get("medium", {})
    ep = med.get("eps_real", 1.0)
    if not ep > 0:
        probs.append("eps_real must be > 0")
    if med.get("eps_imag", 0.0) < 0:
        probs.append("eps_imag must be ≥ 0")
    if med.get("Gamma", 0.0) < 0:
        probs.append("Gamma must be ≥ 0")
    given = [k for k in ("m", "q", "D0") if k in med]
    if len(given) < 2:
        probs.append("medium needs at least two of m, q, D0")
    for k in ("m", "D0"):
        if k in med and not med[k] > 0:
            probs.append(f"{k} must be > 0")
    if "q" in med and med["q"] < 1:
        probs.append("q must be ≥ 1")
    if len(given) == 3 and ep > 0 and med["q"] >= 1 and med["D0"] > 0 and med["m"] > 0:
        m_geo = effective_mass(med["q"], med["D0"], ep)
        if abs(m_geo - med["m"]) > 1e-9 * med["m"]:
            probs.append(f"inconsistent medium: m={med['m']} but q*pi/(sqrt(eps')*D0)={m_geo}")
    elif given == ["m", "D0"] and ep > 0 and med["m"] > 0 and med["D0"] > 0:
        qf = med["m"] * np.sqrt(ep) * med["D0"] / np.pi
        if abs(qf - round(qf)) > 1e-9 * max(qf, 1.0) or round(qf) < 1:
            probs.append(f"m and D0 imply a non-integer mode order {qf}")
    g = d.get("grid", {})
    for k in ("nx", "ny"):
        if k in g and g[k] < 1:
            probs.append(f"grid.{k} must be ≥ 1")
    for k in ("Lx", "Ly"):
        if k in g and not g[k] > 0:
            probs.append(f"grid.{k} must be > 0")
    run = d.get("run", {})
    if "dt" in run and not run["dt"] > 0:
        probs.append("run.dt must be > 0")
    if run.get("t_end", 0.0) < 0:
        probs.append("run.t_end must be ≥ 0")
    if "stride" in run and run["stride"] < 1:
        probs.append("run.stride must be ≥ 1")
    b = d.get("bell")
    if b is not None and b.get("N", 1) < 1:
        probs.append("bell.N must be ≥ 1")
    lk = d.get("leaky")
    if lk is not None:
        if not 0 < lk.get("eta", 0.01) < 1:
            probs.append("leaky.eta must lie in (0, 1)")
        if lk.get("NA", 0.5) <= 0 or lk.get("NA", 0.5) > np.sqrt(lk.get("eps_real", 1.0)):
            probs.append("leaky.NA must lie in (0, sqrt(eps')]")
    si = d.get("si")
    if si is not None and si.get("detuning_eV", -1.0) >= 0:
        probs.append("si.detuning_eV must be < 0 (evanescent branch)")
    return probs


def _complete_medium(med):
    med = dict(MEDIUM_DEFAULTS, **med)
    ep = med["eps_real"]
    if "m" not in med:
        med["m"] = float(effective_mass(med["q"], med["D0"], ep))
    elif "D0" not in med:
        med["D0"] = float(med["q"] * np.pi / (np.sqrt(ep) * med["m"]))
    elif "q" not in med:
        med["q"] = int(round(med["m"] * np.sqrt(ep) * med["D0"] / np.pi))
    med.setdefault("gE", float(ep))
    return med


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated, fully defaulted scenario description."""

    data: dict

    @property
    def name(self):
        return self.data["name"]

    def medium(self):
        return CavityMedium(**{k: self.data["medium"][k] for k in
                               ("eps_real", "m", "D0", "q", "eps_imag", "Gamma", "gE", "gB",
                                "loss_guard")})

    def grid(self):
        g = self.data["grid"]
        return make_grid(g["nx"], g["ny"], g["Lx"], g["Ly"], g["periodic"], g["spectral"])

    def potential_spec(self):
        p = self.data["potential"]
        return PotentialSpec(p["kind"], dict(p["params"]), p["guard"])

    def section(self, key):
        return self.data.get(key)

    def to_json(self):
        return dump_config(self)

    def digest(self):
        return hashlib.sha256(dump_config(self).encode()).hexdigest()

    def with_overrides(self, **over):
        return validate_dict(_merge(self.data, over))


def dump_config(cfg):
    return json.dumps(cfg.data, sort_keys=True, indent=2) + "\n"


def validate_dict(raw):
    """Validate and normalise a config mapping; collects every problem."""
    if not isinstance(raw, dict):
        raise ValidationError("configuration must be a JSON object")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    problems = []
    for err in sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        problems.append(f"{where}: {err.message}")
    if not problems:
        problems.extend(_physical_problems(raw))
    if problems:
        raise ValidationError(f"{len(problems)} configuration problem(s): "
                              + "; ".join(problems), problems)
    d = _merge(DEFAULTS, raw)
    d["medium"] = _complete_medium(d["medium"])
    d["grid"] = dict(GRID_DEFAULTS, **d["grid"])
    if isinstance(d["grid"]["periodic"], list):
        d["grid"]["periodic"] = list(d["grid"]["periodic"])
    cfg = ScenarioConfig(d)
    # re-run the core guards on the completed values
    try:
        cfg.medium()
        cfg.grid()
    except ValueError as exc:
        raise ValidationError(str(exc), getattr(exc, "problems", [str(exc)])) from exc
    return cfg


def parse_json(text, source="<string>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        msg = f"{source}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        raise ValidationError(msg, [msg]) from exc


def load_config(path):
    """Read and validate a scenario file."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return validate_dict(parse_json(text, str(path)))


def preset_dict(name):
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("bohmcavity.scenario").joinpath(
        f"presets/{name}.json").read_text(encoding="utf-8")
    return parse_json(text, f"preset {name}")


def load_preset(name):
    return validate_dict(preset_dict(name))


def merge_dicts(base, over):
    return _merge(base, over)
