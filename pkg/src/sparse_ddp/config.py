"""Problem configuration files.

A config is a JSON document with an explicit ``schema_version``.  It is
validated against :data:`SCHEMA` (plus a per-system block schema) before
anything is built, so every error names the offending field, e.g.
``cost.beta``.  All quantities are SI: seconds, metres, kilograms, newtons,
radians.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from .regularizers import LossKind
from .solver import SolverConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid config; ``field`` is the dotted path of the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


_number = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_vector = {"type": "array", "items": _number, "minItems": 1}
_weight = {"oneOf": [_nonneg, {"type": "array", "items": _nonneg, "minItems": 1}]}
_losses = {"type": "array", "minItems": 1, "uniqueItems": True,
           "items": {"enum": [k.value for k in LossKind]}}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "system", "cost"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "description": {"type": "string"},
        "system": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["cartpole", "satellite", "arm"]}},
        },
        "cost": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "loss": {"enum": [k.value for k in LossKind]},
                "beta": {**_pos, "description": "loss shape, in control units"},
                "lambda": {**_nonneg, "description": "loss strength"},
                "Q": {**_weight, "description": "diagonal running weight, tangent coordinates"},
                "Qf": {**_weight, "description": "diagonal terminal weight, tangent coordinates"},
                "target": {**_vector, "description": "constant reference state"},
                "stages": {
                    "type": "array",
                    "minItems": 1,
                    "description": "piecewise-constant reference; stage i ends before knot 'end'",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["end", "state"],
                        "properties": {"end": {"type": "integer", "minimum": 1}, "state": _vector},
                    },
                },
                "end_effector": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["target"],
                    "properties": {
                        "target": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2},
                        "weight": _nonneg,
                        "terminal_weight": _nonneg,
                    },
                },
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_iterations": {"type": "integer", "minimum": 1},
                "cost_tolerance": _pos,
                "gradient_tolerance": _pos,
                "mu_init": _nonneg,
                "mu_min": _nonneg,
                "mu_max": _pos,
                "mu_scale_up": {"type": "number", "exclusiveMinimum": 1},
                "mu_scale_down": {"type": "number", "exclusiveMinimum": 1},
                "line_search_steps": {"type": "array", "minItems": 1,
                                      "items": {"type": "number", "exclusiveMinimum": 0,
                                                "maximum": 1}},
                "armijo": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "easy_step": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "hard_step": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "limit_mode": {"enum": ["none", "clamp", "boxqp"]},
                "use_second_order_dynamics": {"type": "boolean"},
                "jacobian_mode": {"enum": ["analytic", "fd"]},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string", "minLength": 1}},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "losses": _losses,
                "betas": {"type": "array", "items": _pos, "minItems": 1},
                "lambdas": {"type": "array", "items": _nonneg, "minItems": 1},
                "max_iterations": {"type": "integer", "minimum": 1,
                                   "description": "per-cell cap; overrides solver.max_iterations"},
            },
        },
        "timing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "losses": _losses,
                "lambdas": {"type": "array", "items": _nonneg, "minItems": 1},
            },
        },
    },
}

_common_system = {
    "kind": {"type": "string"},
    "dt": {**_pos, "description": "step length [s]"},
    "horizon": {"type": "integer", "minimum": 2, "description": "knot count N"},
    "x0": {**_vector, "description": "initial state"},
}

SYSTEM_SCHEMAS = {
    "cartpole": {
        "cart_mass": {**_pos, "description": "[kg]"},
        "pole_mass": {**_pos, "description": "[kg]"},
        "pole_length": {**_pos, "description": "pivot to point mass [m]"},
        "gravity": {**_nonneg, "description": "[m/s^2]"},
        "force_limit": {**_pos, "description": "symmetric bound on cart force [N]"},
    },
    "satellite": {
        "mass": {**_pos, "description": "[kg]"},
        "half_extents": {"type": "array", "items": _pos, "minItems": 3, "maxItems": 3,
                         "description": "box half sizes [m]"},
        "primary_limit": {**_pos, "description": "+/-X thruster bound [N]"},
        "side_limit": {**_pos, "description": "Y/Z face thruster bound [N]"},
    },
    "arm": {
        "n_joints": {"type": "integer", "minimum": 1},
        "link_lengths": {"type": "array", "items": _pos, "minItems": 1, "description": "[m]"},
        "accel_limit": {**_pos, "description": "symmetric joint acceleration bound [rad/s^2]"},
    },
}

SYSTEM_DEFAULTS = {
    "cartpole": {"dt": 0.01, "horizon": 200, "cart_mass": 1.0, "pole_mass": 0.5,
                 "pole_length": 0.5, "gravity": 9.81, "force_limit": 30.0},
    "satellite": {"dt": 0.1, "horizon": 200, "mass": 1000.0, "half_extents": [1.5, 1.0, 1.0],
                  "primary_limit": 200.0, "side_limit": 50.0},
    "arm": {"dt": 0.1, "horizon": 50, "n_joints": 6},
}


@dataclass
class SystemConfig:
    kind: str
    dt: float
    horizon: int
    x0: list | None = None
    params: dict = field(default_factory=dict)

    def to_dict(self):
        out = {"kind": self.kind, "dt": self.dt, "horizon": self.horizon}
        if self.x0 is not None:
            out["x0"] = list(self.x0)
        out.update(copy.deepcopy(self.params))
        return out


@dataclass
class CostConfig:
    loss: str = "l2"
    beta: float = 1.0
    lam: float = 0.0
    Q: float | list = 0.0
    Qf: float | list = 0.0
    target: list | None = None
    stages: list | None = None
    end_effector: dict | None = None

    def to_dict(self):
        out = {"loss": self.loss, "beta": self.beta, "lambda": self.lam, "Q": self.Q, "Qf": self.Qf}
        for key in ("target", "stages", "end_effector"):
            if getattr(self, key) is not None:
                out[key] = copy.deepcopy(getattr(self, key))
        return out


@dataclass
class SweepConfig:
    losses: list = field(default_factory=lambda: ["smoothl1", "huber", "pseudohuber"])
    betas: list = field(default_factory=lambda: [1e-3, 1e-2, 1e-1, 1.0])
    lambdas: list = field(default_factory=lambda: [1e-2, 1e-1, 1.0, 1e1, 1e2])
    max_iterations: int | None = None

    def to_dict(self):
        out = asdict(self)
        if self.max_iterations is None:
            del out["max_iterations"]
        return out


@dataclass
class TimingConfig:
    losses: list = field(default_factory=lambda: ["l2", "smoothl1", "huber", "pseudohuber"])
    lambdas: list = field(default_factory=lambda: [1e-5, 1e-4, 1e-3, 1e-2, 1e-1])


@dataclass
class ProblemConfig:
    system: SystemConfig
    cost: CostConfig
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_dir: str = "out"
    sweep: SweepConfig | None = None
    timing: TimingConfig | None = None
    description: str = ""
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        out = {
            "schema_version": self.schema_version,
            "description": self.description,
            "system": self.system.to_dict(),
            "cost": self.cost.to_dict(),
            "solver": self.solver.to_dict(),
            "output": {"dir": self.output_dir},
        }
        if self.sweep is not None:
            out["sweep"] = self.sweep.to_dict()
        if self.timing is not None:
            out["timing"] = asdict(self.timing)
        return out

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2)


def _path(error):
    return ".".join(str(p) for p in error.absolute_path) or "<root>"


def _validate(instance, schema, prefix=""):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(instance),
                    key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = errors[0]
        path = _path(err)
        if prefix:
            path = prefix if path == "<root>" else f"{prefix}.{path}"
        if err.validator == "additionalProperties":
            raise ConfigError(err.message.replace("Additional properties", "unknown keys"), path)
        raise ConfigError(err.message, path)


def parse_config(data: dict) -> ProblemConfig:
    """Validate a decoded config document and fill in defaults."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    _validate(data, SCHEMA)
    kind = data["system"]["kind"]
    system_schema = {
        "type": "object",
        "additionalProperties": False,
        "properties": {**_common_system, **SYSTEM_SCHEMAS[kind]},
    }
    _validate(data["system"], system_schema, "system")

    sys_block = {**SYSTEM_DEFAULTS[kind], **data["system"]}
    params = {k: v for k, v in sys_block.items() if k not in ("kind", "dt", "horizon", "x0")}
    system = SystemConfig(kind, float(sys_block["dt"]), int(sys_block["horizon"]),
                          sys_block.get("x0"), params)

    c = data["cost"]
    cost = CostConfig(
        loss=LossKind.parse(c.get("loss", "l2")).value,
        beta=float(c.get("beta", 1.0)),
        lam=float(c.get("lambda", 0.0)),
        Q=c.get("Q", 0.0),
        Qf=c.get("Qf", 0.0),
        target=c.get("target"),
        stages=c.get("stages"),
        end_effector=c.get("end_effector"),
    )
    if cost.target is not None and cost.stages is not None:
        raise ConfigError("give either target or stages, not both", "cost.stages")
    if kind == "arm" and cost.end_effector is None and cost.target is None and cost.stages is None:
        raise ConfigError("arm problems need an end_effector or state target", "cost")
    if kind != "arm" and cost.end_effector is not None:
        raise ConfigError("only arm problems have an end effector", "cost.end_effector")
    if kind != "arm" and cost.target is None and cost.stages is None:
        raise ConfigError("a target state or stages are required", "cost.target")

    try:
        solver = SolverConfig(**data.get("solver", {}))
    except ValueError as exc:
        raise ConfigError(str(exc), "solver") from exc

    sweep = SweepConfig(**data["sweep"]) if "sweep" in data else None
    timing = TimingConfig(**data["timing"]) if "timing" in data else None
    return ProblemConfig(system, cost, solver, data.get("output", {}).get("dir", "out"),
                         sweep, timing, data.get("description", ""), data["schema_version"])


def load_config(path) -> ProblemConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {str(path)!r} not found") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file {str(path)!r}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_config(data)


def shipped_config_dir() -> Path:
    return Path(__file__).parent / "configs"


def shipped_config(name) -> Path:
    """Path of a config shipped with the package, by file name or stem."""
    name = name if name.endswith(".cfg") else f"{name}.cfg"
    path = shipped_config_dir() / name
    if not path.exists():
        available = sorted(p.name for p in shipped_config_dir().glob("*.cfg"))
        raise ConfigError(f"no shipped config {name!r}; available: {available}")
    return path
