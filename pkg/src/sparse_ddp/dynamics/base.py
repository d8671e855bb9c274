from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DynamicsError(ValueError):
    """Invalid state or control handed to a model."""


@dataclass(frozen=True)
class StepJacobians:
    fx: np.ndarray  # (ndx, ndx)
    fu: np.ndarray  # (ndx, nu)


class SystemModel:
    """Discrete-time model ``x' = f(x, u)``.

    Subclasses set ``nx``, ``ndx``, ``nu``, ``dt``, ``u_lower``, ``u_upper``
    and implement :meth:`step`.  Euclidean models inherit the plain
    ``state_diff``/``integrate`` pair; manifold models override both.
    Jacobians are taken with respect to tangent perturbations
    ``x (+) dx``.
    """

    nx: int
    ndx: int
    nu: int
    dt: float
    u_lower: np.ndarray
    u_upper: np.ndarray
    state_names: tuple[str, ...] = ()
    control_names: tuple[str, ...] = ()

    euclidean = True
    has_analytic_jacobians = False
    has_second_order = False

    def _check_bounds(self):
        self.u_lower = np.asarray(self.u_lower, dtype=float).reshape(self.nu)
        self.u_upper = np.asarray(self.u_upper, dtype=float).reshape(self.nu)
        if np.any(self.u_lower > self.u_upper):
            raise DynamicsError("control lower bound exceeds upper bound")

    @property
    def has_bounds(self) -> bool:
        return bool(np.any(np.isfinite(self.u_lower)) or np.any(np.isfinite(self.u_upper)))

    def validate(self, x, u=None):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.nx,):
            raise DynamicsError(f"state has shape {x.shape}, expected ({self.nx},)")
        if u is not None:
            u = np.asarray(u, dtype=float)
            if u.shape != (self.nu,):
                raise DynamicsError(f"control has shape {u.shape}, expected ({self.nu},)")
            if not np.all(np.isfinite(u)):
                raise DynamicsError("control is not finite")
        return x, u

    def step(self, x, u) -> np.ndarray:
        x, u = self.validate(x, u)
        return self._step(x, u)

    def _step(self, x, u) -> np.ndarray:
        """Unchecked transition; callers guarantee shapes."""
        raise NotImplementedError

    def state_diff(self, x1, x0) -> np.ndarray:
        """Tangent vector taking ``x0`` to ``x1``."""
        return np.asarray(x1, dtype=float) - np.asarray(x0, dtype=float)

    def integrate(self, x, dx) -> np.ndarray:
        """Inverse of :meth:`state_diff`: ``state_diff(integrate(x, dx), x) == dx``."""
        return np.asarray(x, dtype=float) + dx

    def diff_jacobian(self, x, ref) -> np.ndarray:
        """Derivative of ``state_diff(x (+) d, ref)`` with respect to ``d`` at 0."""
        return np.eye(self.ndx)

    def state_diff_batch(self, X1, X0) -> np.ndarray:
        """Row-wise :meth:`state_diff`; ``X0`` may be a single state."""
        X0 = np.broadcast_to(X0, np.shape(X1))
        if self.euclidean:
            return np.asarray(X1, dtype=float) - X0
        return np.array([self.state_diff(a, b) for a, b in zip(X1, X0)])

    def diff_jacobian_batch(self, X, ref) -> np.ndarray:
        ref = np.broadcast_to(ref, np.shape(X))
        return np.array([self.diff_jacobian(a, b) for a, b in zip(X, ref)])

    def analytic_jacobians(self, x, u) -> StepJacobians:
        raise NotImplementedError

    def jacobians(self, x, u, mode: str = "analytic") -> StepJacobians:
        if mode == "analytic" and self.has_analytic_jacobians:
            return self.analytic_jacobians(x, u)
        if mode in ("analytic", "fd"):
            return self.fd_jacobians(x, u)
        raise ValueError(f"unknown jacobian mode {mode!r}")

    def jacobians_batch(self, X, U, mode: str = "analytic"):
        """Stacked ``(fx, fu)`` for knots ``t < len(U)``."""
        fx = np.empty((len(U), self.ndx, self.ndx))
        fu = np.empty((len(U), self.ndx, self.nu))
        for t in range(len(U)):
            jac = self.jacobians(X[t], U[t], mode)
            fx[t], fu[t] = jac.fx, jac.fu
        return fx, fu

    def fd_jacobians(self, x, u) -> StepJacobians:
        """Central differences in the tangent space, step ``1e-6 * max(1, |value|)``."""
        x, u = self.validate(x, u)
        fx = np.empty((self.ndx, self.ndx))
        fu = np.empty((self.ndx, self.nu))
        nominal = self.step(x, u)
        scale = max(1.0, float(np.max(np.abs(x))))
        for i in range(self.ndx):
            h = 1e-6 * scale
            d = np.zeros(self.ndx)
            d[i] = h
            plus = self.step(self.integrate(x, d), u)
            minus = self.step(self.integrate(x, -d), u)
            fx[:, i] = (self.state_diff(plus, nominal) - self.state_diff(minus, nominal)) / (2 * h)
        for j in range(self.nu):
            h = 1e-6 * max(1.0, abs(u[j]))
            d = np.zeros(self.nu)
            d[j] = h
            plus = self.step(x, u + d)
            minus = self.step(x, u - d)
            fu[:, j] = (self.state_diff(plus, nominal) - self.state_diff(minus, nominal)) / (2 * h)
        return StepJacobians(fx, fu)

    def second_order(self, x, u):
        """``(fxx, fuu, fux)`` tensors, indexed ``[out, in, in]``."""
        raise NotImplementedError

    def rollout(self, x0, U) -> np.ndarray:
        X = np.empty((len(U) + 1, self.nx))
        X[0] = x0
        self.validate(X[0])
        U = np.asarray(U, dtype=float)
        if not np.all(np.isfinite(U)):
            raise DynamicsError("control is not finite")
        for t, u in enumerate(U):
            X[t + 1] = self._step(X[t], u)
        return X


class SecondOrderModel(SystemModel):
    """Euclidean ``(q, v)`` model advanced by semi-implicit Euler.

    ``v' = v + dt * a(q, v, u)`` then ``q' = q + dt * v'``.  Subclasses give
    the acceleration and its partials.
    """

    has_analytic_jacobians = True
    nq: int

    def acceleration(self, q, v, u) -> np.ndarray:
        raise NotImplementedError

    def acceleration_jacobians(self, q, v, u):
        """Return ``(a_q, a_v, a_u)``."""
        raise NotImplementedError

    def _step(self, x, u):
        n = self.nq
        q, v = x[:n], x[n:]
        v_next = v + self.dt * self.acceleration(q, v, u)
        return np.concatenate([q + self.dt * v_next, v_next])

    def analytic_jacobians(self, x, u):
        x, u = self.validate(x, u)
        fx, fu = self._assemble(*self.acceleration_jacobians(x[:self.nq], x[self.nq:], u))
        return StepJacobians(fx, fu)

    def jacobians_batch(self, X, U, mode: str = "analytic"):
        if mode != "analytic":
            return super().jacobians_batch(X, U, mode)
        n = self.nq
        X = np.asarray(X, dtype=float)[:len(U)]
        return self._assemble(*self.acceleration_jacobians(X[:, :n], X[:, n:], np.asarray(U)))

    def _assemble(self, a_q, a_v, a_u):
        """Semi-implicit Euler Jacobians from acceleration partials (any leading batch dims)."""
        n, dt = self.nq, self.dt
        eye = np.eye(n)
        dv_dx = np.concatenate([dt * a_q, eye + dt * a_v], axis=-1)
        dv_du = dt * a_u
        dq_dx = np.concatenate([np.broadcast_to(eye, a_q.shape), np.zeros(a_q.shape)], axis=-1) \
            + dt * dv_dx
        return (np.concatenate([dq_dx, dv_dx], axis=-2),
                np.concatenate([dt * dv_du, dv_du], axis=-2))
