"""Build models and optimal-control problems from parsed configs."""

from __future__ import annotations

import dataclasses

import numpy as np

from .config import ConfigError, ProblemConfig, SystemConfig
from .costs import CostBundle, EndEffectorCost, QuadraticStateCost, stage_reference
from .dynamics import ArmModel, CartpoleModel, SatelliteModel
from .dynamics.base import DynamicsError
from .regularizers import LossSpec
from .solver import Problem


def build_model(system: SystemConfig):
    try:
        return _build_model(system)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), "system") from exc


def _build_model(system: SystemConfig):
    p = system.params
    if system.kind == "cartpole":
        return CartpoleModel(p["cart_mass"], p["pole_mass"], p["pole_length"], p["gravity"],
                             system.dt, p["force_limit"])
    if system.kind == "satellite":
        return SatelliteModel(mass=p["mass"], half_extents=p["half_extents"], dt=system.dt,
                              primary_limit=p["primary_limit"], side_limit=p["side_limit"])
    if system.kind == "arm":
        n = p["n_joints"]
        lengths = p.get("link_lengths")
        if lengths is not None and len(lengths) != n:
            raise ConfigError(f"{len(lengths)} link lengths for {n} joints", "system.link_lengths")
        return ArmModel(n, lengths, system.dt, p.get("accel_limit", np.inf))
    raise ConfigError(f"unknown system kind {system.kind!r}", "system.kind")


def default_state(model):
    if isinstance(model, SatelliteModel):
        return model.make_state()
    return np.zeros(model.nx)


def _vector(value, size, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(size, float(arr))
    if arr.shape != (size,):
        raise ConfigError(f"expected {size} entries, got {arr.size}", name)
    return arr


def _state(model, value, name):
    x = _vector(value, model.nx, name)
    try:
        model.validate(x)
    except DynamicsError as exc:
        raise ConfigError(str(exc), name) from exc
    return x


def build_problem(cfg: ProblemConfig) -> Problem:
    model = build_model(cfg.system)
    N = cfg.system.horizon
    x0 = default_state(model) if cfg.system.x0 is None else _state(model, cfg.system.x0, "system.x0")
    c = cfg.cost
    Q = _vector(c.Q, model.ndx, "cost.Q")
    Qf = _vector(c.Qf, model.ndx, "cost.Qf")

    terms = []
    if c.stages is not None:
        stages = []
        for i, stage in enumerate(c.stages):
            stages.append((stage["end"], _state(model, stage["state"], f"cost.stages.{i}.state")))
        terms.append(QuadraticStateCost(model, Q, Qf, stage_reference(stages, N)))
    elif c.target is not None:
        terms.append(QuadraticStateCost(model, Q, Qf, _state(model, c.target, "cost.target")))
    elif np.any(Q) or np.any(Qf):
        terms.append(QuadraticStateCost(model, Q, Qf, default_state(model)))
    if c.end_effector is not None:
        ee = c.end_effector
        terms.append(EndEffectorCost(model, ee["target"], ee.get("weight", 0.0),
                                     ee.get("terminal_weight", 1.0)))
    loss = LossSpec(c.loss, c.beta, c.lam)
    return Problem(model, CostBundle(model, terms, loss), x0, N)


def with_loss(problem: Problem, loss: LossSpec) -> Problem:
    """Same problem with a different control penalty; the original is untouched."""
    costs = dataclasses.replace(problem.costs, loss=loss)
    return Problem(problem.model, costs, problem.x0.copy(), problem.horizon)
