from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import so3
from .base import DynamicsError, StepJacobians, SystemModel

QUAT_TOL = 1e-6


@dataclass(frozen=True)
class ThrusterTable:
    """Body-frame thruster layout and the map from thrust magnitudes to wrench."""

    positions: np.ndarray  # (n, 3) application points about the CoM
    directions: np.ndarray  # (n, 3) unit force directions
    limits: np.ndarray  # (n,) upper thrust bounds, lower bounds are 0
    names: tuple[str, ...]

    @property
    def force_map(self) -> np.ndarray:
        return self.directions.T.copy()

    @property
    def torque_map(self) -> np.ndarray:
        return np.cross(self.positions, self.directions).T.copy()

    def wrench(self, u) -> tuple[np.ndarray, np.ndarray]:
        u = np.asarray(u, dtype=float)
        return self.force_map @ u, self.torque_map @ u


def build_thruster_table(half_extents=(1.5, 1.0, 1.0), primary_limit=200.0, side_limit=50.0,
                         inset=0.8) -> ThrusterTable:
    """Two main engines on the +-X faces and four corner thrusters per side face.

    Every thruster pushes inward along its face normal.  The side thrusters
    sit at the face corners, pulled towards the face centre by ``inset``, so
    firing all four of a face gives a pure force and uneven firing gives a
    torque.
    """
    a, b, c = (float(h) for h in half_extents)
    positions, directions, limits, names = [], [], [], []

    for sign, tag in ((1.0, "+x"), (-1.0, "-x")):
        positions.append([sign * a, 0.0, 0.0])
        directions.append([-sign, 0.0, 0.0])
        limits.append(primary_limit)
        names.append(f"main{tag}")

    corners = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
    for axis, (s1, s2) in ((1, (a, c)), (2, (a, b))):
        for sign, tag in ((1.0, "+"), (-1.0, "-")):
            for k, (c1, c2) in enumerate(corners):
                pos = np.zeros(3)
                pos[axis] = sign * (b if axis == 1 else c)
                pos[0] = c1 * s1 * inset
                pos[3 - axis] = c2 * s2 * inset
                d = np.zeros(3)
                d[axis] = -sign
                positions.append(pos)
                directions.append(d)
                limits.append(side_limit)
                names.append(f"side{tag}{'xyz'[axis]}{k}")

    return ThrusterTable(np.array(positions, dtype=float), np.array(directions, dtype=float),
                         np.array(limits, dtype=float), tuple(names))


def box_inertia(mass, half_extents):
    a, b, c = half_extents
    return np.diag([mass * (b * b + c * c) / 3.0, mass * (a * a + c * c) / 3.0,
                    mass * (a * a + b * b) / 3.0])


class SatelliteModel(SystemModel):
    """Thruster-actuated rigid body.

    State ``(p, q, v, w)``: world position, scalar-first unit quaternion
    (body to world), world linear velocity, body angular velocity.  The
    tangent space is ``(dp, dtheta, dv, dw)`` with attitude perturbations
    applied on the right, ``R Exp(dtheta)``.

    One step updates the velocities first and then the pose with the new
    velocities.  The angular update solves
    ``I w' = Exp(dt w')^T I w + dt tau`` so that, without torque, the world
    angular momentum is preserved exactly.
    """

    nx = 13
    ndx = 12
    euclidean = False
    has_analytic_jacobians = True

    def __init__(self, mass=1000.0, inertia=None, half_extents=(1.5, 1.0, 1.0), dt=0.1,
                 thrusters: ThrusterTable | None = None, primary_limit=200.0, side_limit=50.0):
        if mass <= 0 or dt <= 0:
            raise ValueError("mass and dt must be positive")
        self.mass = float(mass)
        self.half_extents = tuple(float(h) for h in half_extents)
        self.inertia = box_inertia(self.mass, self.half_extents) if inertia is None \
            else np.asarray(inertia, dtype=float)
        if self.inertia.shape != (3, 3) or not np.allclose(self.inertia, self.inertia.T):
            raise ValueError("inertia must be a symmetric 3x3 matrix")
        if np.min(np.linalg.eigvalsh(self.inertia)) <= 0:
            raise ValueError("inertia must be positive definite")
        self.inertia_inv = np.linalg.inv(self.inertia)
        self.dt = float(dt)
        self.thrusters = thrusters or build_thruster_table(self.half_extents, primary_limit,
                                                           side_limit)
        self.nu = len(self.thrusters.limits)
        self.u_lower = np.zeros(self.nu)
        self.u_upper = self.thrusters.limits.copy()
        self._check_bounds()
        self._D = self.thrusters.force_map
        self._T = self.thrusters.torque_map
        self.state_names = ("px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz",
                            "wx", "wy", "wz")
        self.control_names = self.thrusters.names

    def validate(self, x, u=None):
        x, u = super().validate(x, u)
        if abs(np.linalg.norm(x[3:7]) - 1.0) > QUAT_TOL:
            raise DynamicsError(f"quaternion norm {np.linalg.norm(x[3:7])} is not 1")
        return x, u

    @staticmethod
    def make_state(position=(0, 0, 0), quaternion=(1, 0, 0, 0), velocity=(0, 0, 0),
                   angular_velocity=(0, 0, 0)):
        return np.concatenate([position, quaternion, velocity, angular_velocity]).astype(float)

    def _solve_spin(self, w, tau, need_matrix=True):
        """Newton solve of the implicit angular update; returns ``(w', E, M)``.

        ``M`` is the residual Jacobian at the solution, or None when not requested.
        """
        I, dt = self.inertia, self.dt
        if not (np.any(w) or np.any(tau)):
            return np.zeros(3), np.eye(3), (I.copy() if need_matrix else None)
        pi = I @ w
        w_new = w + dt * self.inertia_inv @ (tau - so3.hat(w) @ pi)
        scale = max(1.0, float(np.abs(pi).max()), dt * float(np.abs(tau).max()))
        pi_hat = so3.hat(pi)
        for _ in range(50):
            phi = dt * w_new
            E = so3.exp_so3(phi)
            r = I @ w_new - E.T @ pi - dt * tau
            done = np.max(np.abs(r)) <= 1e-13 * scale
            if done and not need_matrix:
                return w_new, E, None
            M = I - dt * E.T @ pi_hat @ so3.right_jacobian(-phi)
            if done:
                return w_new, E, M
            w_new = w_new - np.linalg.solve(M, r)
        raise DynamicsError("angular velocity update did not converge")

    def _step(self, x, u):
        p, q, v, w = x[0:3], x[3:7], x[7:10], x[10:13]
        dt = self.dt
        R = so3.quat_to_matrix(q)
        v_new = v + dt / self.mass * (R @ (self._D @ u))
        w_new, _, _ = self._solve_spin(w, self._T @ u, need_matrix=False)
        q_new = so3.quat_mul(q, so3.quat_exp(dt * w_new))
        q_new /= np.linalg.norm(q_new)
        return np.concatenate([p + dt * v_new, q_new, v_new, w_new])

    def state_diff(self, x1, x0):
        x1 = np.asarray(x1, dtype=float)
        x0 = np.asarray(x0, dtype=float)
        for x in (x0, x1):
            if abs(np.linalg.norm(x[3:7]) - 1.0) > QUAT_TOL:
                raise DynamicsError("state_diff on a non-unit quaternion")
        drot = so3.quat_log(so3.quat_mul(so3.quat_conj(x0[3:7]), x1[3:7]))
        return np.concatenate([x1[0:3] - x0[0:3], drot, x1[7:10] - x0[7:10], x1[10:13] - x0[10:13]])

    def integrate(self, x, dx):
        x = np.asarray(x, dtype=float)
        q = so3.quat_mul(x[3:7], so3.quat_exp(dx[3:6]))
        q /= np.linalg.norm(q)
        return np.concatenate([x[0:3] + dx[0:3], q, x[7:10] + dx[6:9], x[10:13] + dx[9:12]])

    def diff_jacobian(self, x, ref):
        J = np.eye(self.ndx)
        J[3:6, 3:6] = so3.right_jacobian_inv(self.state_diff(x, ref)[3:6])
        return J

    def analytic_jacobians(self, x, u):
        x, u = self.validate(x, u)
        dt, m = self.dt, self.mass
        R = so3.quat_to_matrix(x[3:7])
        force_b = self._D @ u
        w_new, E, M = self._solve_spin(x[10:13], self._T @ u)
        Jr = so3.right_jacobian(dt * w_new)

        dw_dw = np.linalg.solve(M, E.T @ self.inertia)
        dw_du = np.linalg.solve(M, dt * self._T)
        dv_drot = -dt / m * R @ so3.hat(force_b)
        dv_du = dt / m * R @ self._D

        I3, Z3 = np.eye(3), np.zeros((3, 3))
        fx = np.block([
            [I3, dt * dv_drot, dt * I3, Z3],
            [Z3, E.T, Z3, dt * Jr @ dw_dw],
            [Z3, dv_drot, I3, Z3],
            [Z3, Z3, Z3, dw_dw],
        ])
        fu = np.vstack([dt * dv_du, dt * Jr @ dw_du, dv_du, dw_du])
        return StepJacobians(fx, fu)

    def state_diff_batch(self, X1, X0):
        X1 = np.asarray(X1, dtype=float)
        X0 = np.broadcast_to(np.asarray(X0, dtype=float), X1.shape)
        for X in (X0, X1):
            if np.any(np.abs(np.linalg.norm(X[:, 3:7], axis=1) - 1.0) > QUAT_TOL):
                raise DynamicsError("state_diff on a non-unit quaternion")
        conj = X0[:, 3:7] * np.array([1.0, -1.0, -1.0, -1.0])
        drot = so3.quat_log_batch(so3.quat_mul_batch(conj, X1[:, 3:7]))
        return np.concatenate([X1[:, 0:3] - X0[:, 0:3], drot, X1[:, 7:13] - X0[:, 7:13]], axis=1)

    def diff_jacobian_batch(self, X, ref):
        drot = self.state_diff_batch(X, ref)[:, 3:6]
        J = np.broadcast_to(np.eye(self.ndx), (len(drot), self.ndx, self.ndx)).copy()
        J[:, 3:6, 3:6] = so3.right_jacobian_inv_batch(drot)
        return J

    def jacobians_batch(self, X, U, mode="analytic"):
        """All knots at once.

        The implicit spin update is not re-solved: the next state's angular
        velocity is taken from ``X`` and verified against the residual.  Knots
        where ``X`` is not a rollout of ``U`` fall back to the per-knot path.
        """
        if mode != "analytic":
            return super().jacobians_batch(X, U, mode)
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        T = len(U)
        dt, m, I = self.dt, self.mass, self.inertia
        w, w_new = X[:T, 10:13], X[1:T + 1, 10:13]
        tau = U @ self._T.T
        phi = dt * w_new
        E = so3.exp_so3_batch(phi)
        Et = np.swapaxes(E, -1, -2)
        pi = w @ I
        resid = w_new @ I - np.einsum("tij,tj->ti", Et, pi) - dt * tau
        scale = np.maximum(1.0, np.maximum(np.abs(pi).max(axis=1), dt * np.abs(tau).max(axis=1)))
        stale = np.abs(resid).max(axis=1) > 1e-10 * scale
        M = I - dt * Et @ so3.hat_batch(pi) @ so3.right_jacobian_batch(-phi)
        if np.any(stale):
            for t in np.flatnonzero(stale):
                w_new_t, E[t], M[t] = self._solve_spin(w[t], tau[t])
                phi[t] = dt * w_new_t
            Et = np.swapaxes(E, -1, -2)
        Jr = so3.right_jacobian_batch(phi)
        R = so3.quat_to_matrix_batch(X[:T, 3:7])
        force_b = U @ self._D.T

        dw_dw = np.linalg.solve(M, Et @ I)
        dw_du = np.linalg.solve(M, np.broadcast_to(dt * self._T, (T, 3, self.nu)))
        dv_drot = -dt / m * R @ so3.hat_batch(force_b)
        dv_du = dt / m * R @ self._D

        fx = np.zeros((T, 12, 12))
        eye3 = np.eye(3)
        fx[:, 0:3, 0:3] = eye3
        fx[:, 0:3, 3:6] = dt * dv_drot
        fx[:, 0:3, 6:9] = dt * eye3
        fx[:, 3:6, 3:6] = Et
        fx[:, 3:6, 9:12] = dt * Jr @ dw_dw
        fx[:, 6:9, 3:6] = dv_drot
        fx[:, 6:9, 6:9] = eye3
        fx[:, 9:12, 9:12] = dw_dw
        fu = np.concatenate([dt * dv_du, dt * Jr @ dw_du, dv_du, dw_du], axis=1)
        return fx, fu

    def angular_momentum_world(self, x):
        return so3.quat_to_matrix(x[3:7]) @ (self.inertia @ x[10:13])
