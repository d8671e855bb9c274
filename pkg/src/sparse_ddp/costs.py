"""Running and terminal costs with tangent-space derivatives.

The objective is ``J = h(x_N) + sum_t [ task(x_t) + lam * l_s(u_t) ]`` where
``l_s`` is one of the coordinate-wise losses in :mod:`regularizers`.  State
and control terms never couple, so ``l_ux`` is always zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import ArmModel, SystemModel
from .regularizers import LossSpec, loss_elementwise, loss_vector


class CostError(ValueError):
    pass


def stage_reference(stages, horizon):
    """Piecewise-constant reference from ``[(end_knot, state), ...]``.

    Stage ``i`` covers knots ``[end_{i-1}, end_i)``; the last stage is
    extended to the end of the horizon.
    """
    stages = sorted(stages, key=lambda s: s[0])
    ref = np.empty((horizon, len(stages[0][1])))
    start = 0
    for end, state in stages:
        ref[start:min(end, horizon)] = state
        start = min(end, horizon)
    ref[start:] = stages[-1][1]
    return ref


def _stack_running(term, X):
    out = [term.running(X[t], t) for t in range(len(X))]
    return (np.array([o[0] for o in out]), np.array([o[1] for o in out]),
            np.array([o[2] for o in out]))


class QuadraticStateCost:
    """``(x - x*_t)^T Q (x - x*_t)`` per knot and ``(x_N - x*)^T Qf (x_N - x*)`` at the end.

    ``reference`` is either one state or an ``(N, nx)`` schedule; the
    terminal target is its last row.  Errors go through ``state_diff`` so
    attitude errors are rotation vectors.  On a manifold the Hessian drops
    the curvature of the log map (Gauss-Newton); it is exact on Euclidean
    models.
    """

    def __init__(self, model: SystemModel, Q, Qf, reference):
        self.model = model
        self.Q = np.broadcast_to(np.asarray(Q, dtype=float), (model.ndx,)).copy()
        self.Qf = np.broadcast_to(np.asarray(Qf, dtype=float), (model.ndx,)).copy()
        if np.any(self.Q < 0) or np.any(self.Qf < 0):
            raise CostError("state weights must be non-negative")
        ref = np.asarray(reference, dtype=float)
        if ref.ndim == 1:
            ref = ref[None, :]
        if ref.shape[1] != model.nx:
            raise CostError(f"reference has width {ref.shape[1]}, expected {model.nx}")
        self.reference = ref

    def reference_at(self, t):
        return self.reference[min(t, len(self.reference) - 1)]

    def _quadratic(self, x, ref, w):
        e = self.model.state_diff(x, ref)
        if self.model.euclidean:
            return e @ (w * e), 2.0 * w * e, np.diag(2.0 * w)
        J = self.model.diff_jacobian(x, ref)
        WJ = w[:, None] * J
        return e @ (w * e), 2.0 * J.T @ (w * e), 2.0 * J.T @ WJ

    def running_value(self, x, t):
        if not np.any(self.Q):
            return 0.0
        e = self.model.state_diff(x, self.reference_at(t))
        return float(e @ (self.Q * e))

    def running(self, x, t):
        if not np.any(self.Q):
            n = self.model.ndx
            return 0.0, np.zeros(n), np.zeros((n, n))
        return self._quadratic(x, self.reference_at(t), self.Q)

    def _batch_reference(self, T):
        ref = self.reference
        if len(ref) >= T:
            return ref[:T]
        return np.vstack([ref, np.repeat(ref[-1:], T - len(ref), axis=0)])

    def running_values(self, X):
        T = len(X)
        if not np.any(self.Q):
            return np.zeros(T)
        E = self.model.state_diff_batch(X, self._batch_reference(T))
        return E * E @ self.Q

    def running_batch(self, X):
        T, n = len(X), self.model.ndx
        if not np.any(self.Q):
            return np.zeros(T), np.zeros((T, n)), np.zeros((T, n, n))
        ref = self._batch_reference(T)
        E = self.model.state_diff_batch(X, ref)
        if self.model.euclidean:
            return E * E @ self.Q, 2.0 * self.Q * E, np.broadcast_to(np.diag(2.0 * self.Q), (T, n, n))
        J = self.model.diff_jacobian_batch(X, ref)
        WE = self.Q * E
        lx = 2.0 * np.einsum("tij,ti->tj", J, WE)
        lxx = 2.0 * np.swapaxes(J, 1, 2) @ (self.Q[:, None] * J)
        return np.einsum("ti,ti->t", E, WE), lx, lxx

    def terminal(self, x):
        return self._quadratic(x, self.reference[-1], self.Qf)


class EndEffectorCost:
    """Squared distance from the arm tip to a planar target.

    ``weight`` applies at every running knot, ``terminal_weight`` at the
    last one.  The Hessian is exact, including the forward-kinematics
    curvature, so it can be indefinite away from the target.
    """

    def __init__(self, model: ArmModel, target, weight=0.0, terminal_weight=1.0):
        if weight < 0 or terminal_weight < 0:
            raise CostError("end-effector weights must be non-negative")
        self.model = model
        self.target = np.asarray(target, dtype=float)
        if self.target.shape != (2,):
            raise CostError("end-effector target must be a planar point")
        self.weight = float(weight)
        self.terminal_weight = float(terminal_weight)

    def _evaluate(self, x, w):
        n = self.model.n_joints
        gx = np.zeros(self.model.ndx)
        gxx = np.zeros((self.model.ndx, self.model.ndx))
        if w == 0.0:
            return 0.0, gx, gxx
        p, J, H = self.model.forward_kinematics(x[:n])
        e = p - self.target
        gx[:n] = 2.0 * w * J.T @ e
        gxx[:n, :n] = 2.0 * w * (J.T @ J + np.tensordot(e, H, axes=1))
        return w * (e @ e), gx, gxx

    def running_value(self, x, t):
        if self.weight == 0.0:
            return 0.0
        e = self.model.forward_kinematics(x[:self.model.n_joints])[0] - self.target
        return self.weight * float(e @ e)

    def running(self, x, t):
        return self._evaluate(x, self.weight)

    def running_values(self, X):
        if self.weight == 0.0:
            return np.zeros(len(X))
        return np.array([self.running_value(x, t) for t, x in enumerate(X)])

    def running_batch(self, X):
        if self.weight == 0.0:
            n = self.model.ndx
            return np.zeros(len(X)), np.zeros((len(X), n)), np.zeros((len(X), n, n))
        return _stack_running(self, X)

    def terminal(self, x):
        return self._evaluate(x, self.terminal_weight)


@dataclass
class RunningCost:
    value: float
    lx: np.ndarray
    lu: np.ndarray
    lxx: np.ndarray
    luu: np.ndarray
    lux: np.ndarray
    task: float = 0.0


@dataclass(frozen=True)
class CostBreakdown:
    total: float
    task: float  # everything except lam * l_s
    regularization: float
    terminal: float  # h(x_N), the "final task cost"


@dataclass
class CostBundle:
    model: SystemModel
    terms: list = field(default_factory=list)
    loss: LossSpec = field(default_factory=LossSpec)

    def _control_part(self, u):
        lam = self.loss.lam
        nu = self.model.nu
        if lam == 0.0:
            return 0.0, np.zeros(nu), np.zeros(nu)
        value, grad, hess = loss_vector(self.loss, u)
        return lam * value, lam * grad, lam * hess

    def running_cost(self, x, u, t) -> RunningCost:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape != (self.model.nx,) or u.shape != (self.model.nu,):
            raise CostError(f"running_cost got state {x.shape} and control {u.shape}, expected "
                            f"({self.model.nx},) and ({self.model.nu},)")
        ndx, nu = self.model.ndx, self.model.nu
        task, lx, lxx = 0.0, np.zeros(ndx), np.zeros((ndx, ndx))
        for term in self.terms:
            v, g, h = term.running(x, t)
            task += v
            lx = lx + g
            lxx = lxx + h
        reg, lu, luu_diag = self._control_part(u)
        return RunningCost(task + reg, lx, lu, lxx, np.diag(luu_diag), np.zeros((nu, ndx)), task)

    def terminal_cost(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.model.nx,):
            raise CostError(f"terminal_cost got state {x.shape}, expected ({self.model.nx},)")
        ndx = self.model.ndx
        value, hx, hxx = 0.0, np.zeros(ndx), np.zeros((ndx, ndx))
        for term in self.terms:
            v, g, h = term.terminal(x)
            value += v
            hx = hx + g
            hxx = hxx + h
        return value, hx, hxx

    def running_value(self, x, u, t):
        """``(task, regularization)`` without derivatives."""
        task = sum(term.running_value(x, t) for term in self.terms)
        lam = self.loss.lam
        reg = lam * loss_vector(self.loss, u)[0] if lam else 0.0
        return task, reg

    def running_batch(self, X, U):
        """Stacked running derivatives for knots ``t < len(U)``.

        Returns ``(values, lx, lu, lxx, luu_diag)``; ``l_ux`` is zero.
        """
        T = len(U)
        ndx, nu = self.model.ndx, self.model.nu
        values = np.zeros(T)
        lx = np.zeros((T, ndx))
        lxx = np.zeros((T, ndx, ndx))
        for term in self.terms:
            v, g, h = term.running_batch(X[:T])
            values = values + v
            lx = lx + g
            lxx = lxx + h
        lam = self.loss.lam
        if lam == 0.0:
            return values, lx, np.zeros((T, nu)), lxx, np.zeros((T, nu))
        lv, lg, lh = loss_elementwise(self.loss, U)
        return values + lam * lv.sum(axis=1), lx, lam * lg, lxx, lam * lh

    def total_cost(self, X, U) -> CostBreakdown:
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float).reshape(-1, self.model.nu)
        if len(X) != len(U) + 1:
            raise CostError(f"trajectory has {len(X)} states and {len(U)} controls; "
                            "expected N states and N-1 controls")
        task = 0.0
        for term in self.terms:
            task += float(np.sum(term.running_values(X[:-1])))
        lam = self.loss.lam
        reg = lam * float(np.sum(loss_elementwise(self.loss, U)[0])) if lam else 0.0
        h = self.terminal_cost(X[-1])[0]
        return CostBreakdown(task + h + reg, task + h, reg, h)


def running_cost(bundle: CostBundle, x, u, t) -> RunningCost:
    return bundle.running_cost(x, u, t)


def terminal_cost(bundle: CostBundle, x):
    return bundle.terminal_cost(x)


def total_cost(bundle: CostBundle, X, U) -> CostBreakdown:
    return bundle.total_cost(X, U)
