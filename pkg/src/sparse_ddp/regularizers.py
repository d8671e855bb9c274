"""Coordinate-wise control penalties and their first two derivatives.

Every loss here is even, zero at the origin and quadratic near it.  The
sparse variants grow linearly away from the origin; ``beta`` sets where the
switch happens.  The strength ``lam`` is carried on the LossSpec but never applied
here: the cost assembler multiplies once.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class LossKind(str, enum.Enum):
    L2 = "l2"
    SMOOTH_L1 = "smoothl1"
    HUBER = "huber"
    PSEUDO_HUBER = "pseudohuber"

    @classmethod
    def parse(cls, name: str | LossKind) -> LossKind:
        if isinstance(name, LossKind):
            return name
        key = name.strip().lower().replace("_", "").replace("-", "")
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown loss kind {name!r}; expected one of {[k.value for k in cls]}")


SPARSE_KINDS = (LossKind.SMOOTH_L1, LossKind.HUBER, LossKind.PSEUDO_HUBER)


@dataclass(frozen=True)
class LossSpec:
    """Which penalty, its shape ``beta`` and its strength ``lam``."""

    kind: LossKind = LossKind.L2
    beta: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind.parse(self.kind))
        if self.kind is LossKind.L2:
            object.__setattr__(self, "beta", 1.0)
        elif not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"lambda must be non-negative and finite, got {self.lam}")


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"loss evaluated at non-finite input {x!r}")


def _value(kind: LossKind, beta: float, x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    if kind is LossKind.L2:
        return x * x
    if kind is LossKind.SMOOTH_L1:
        return np.where(ax <= beta, 0.5 * x * x / beta, ax - 0.5 * beta)
    if kind is LossKind.HUBER:
        return np.where(ax <= beta, 0.5 * x * x, beta * (ax - 0.5 * beta))
    r = x / beta
    # r^2 / (sqrt(1 + r^2) + 1) == sqrt(1 + r^2) - 1 without the cancellation
    return beta * beta * (r * r) / (np.sqrt(1.0 + r * r) + 1.0)


def _grad(kind: LossKind, beta: float, x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    if kind is LossKind.L2:
        return 2.0 * x
    if kind is LossKind.SMOOTH_L1:
        return np.where(ax <= beta, x / beta, np.sign(x))
    if kind is LossKind.HUBER:
        return np.where(ax <= beta, x, beta * np.sign(x))
    r = x / beta
    return x / np.sqrt(1.0 + r * r)


def _hess(kind: LossKind, beta: float, x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    if kind is LossKind.L2:
        return np.full_like(x, 2.0)
    if kind is LossKind.SMOOTH_L1:
        return np.where(ax <= beta, 1.0 / beta, 0.0)
    if kind is LossKind.HUBER:
        return np.where(ax <= beta, 1.0, 0.0)
    r = x / beta
    return (1.0 + r * r) ** -1.5


def loss_value(spec: LossSpec, x: float) -> float:
    """Per-coordinate loss, without the ``lam`` factor."""
    _check_finite(x)
    return float(_value(spec.kind, spec.beta, np.asarray(x, dtype=float)))


def loss_grad(spec: LossSpec, x: float) -> float:
    _check_finite(x)
    return float(_grad(spec.kind, spec.beta, np.asarray(x, dtype=float)))


def loss_hess(spec: LossSpec, x: float) -> float:
    """Second derivative; at ``|x| == beta`` the quadratic-branch value is used."""
    _check_finite(x)
    return float(_hess(spec.kind, spec.beta, np.asarray(x, dtype=float)))


def loss_elementwise(spec: LossSpec, u) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value, first and second derivative for every entry of an array of any shape."""
    u = np.asarray(u, dtype=float)
    _check_finite(u)
    return _value(spec.kind, spec.beta, u), _grad(spec.kind, spec.beta, u), _hess(spec.kind, spec.beta, u)


def loss_vector(spec: LossSpec, u) -> tuple[float, np.ndarray, np.ndarray]:
    """Summed loss over a control vector with its gradient and Hessian diagonal."""
    value, grad, hess = loss_elementwise(spec, u)
    return float(np.sum(value)), grad, hess


def l1_norm(u) -> float:
    """Plain sum of absolute values; a reporting metric, not a solver loss."""
    return float(np.sum(np.abs(np.asarray(u, dtype=float))))
