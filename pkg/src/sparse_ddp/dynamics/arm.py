import numpy as np

from .base import SecondOrderModel


class ArmModel(SecondOrderModel):
    """Planar serial arm driven directly by joint accelerations.

    The dynamics are a double integrator per joint, so they are exactly
    linear; link lengths only matter to the end-effector cost.
    """

    has_second_order = True

    def __init__(self, n_joints=6, link_lengths=None, dt=0.1, accel_limit=np.inf):
        if n_joints < 1:
            raise ValueError("arm needs at least one joint")
        self.n_joints = self.nq = self.nu = int(n_joints)
        self.nx = self.ndx = 2 * self.n_joints
        if link_lengths is None:
            link_lengths = np.full(self.n_joints, 1.0 / self.n_joints)
        self.link_lengths = np.asarray(link_lengths, dtype=float)
        if self.link_lengths.shape != (self.n_joints,) or np.any(self.link_lengths <= 0):
            raise ValueError("link_lengths must be n_joints positive values")
        self.dt = float(dt)
        limit = np.broadcast_to(np.asarray(accel_limit, dtype=float), (self.n_joints,))
        self.u_lower = -limit.copy()
        self.u_upper = limit.copy()
        self._check_bounds()
        self.state_names = tuple(f"q{i}" for i in range(self.n_joints)) + tuple(
            f"v{i}" for i in range(self.n_joints))
        self.control_names = tuple(f"a{i}" for i in range(self.n_joints))

    def acceleration(self, q, v, u):
        return u

    def acceleration_jacobians(self, q, v, u):
        n = self.n_joints
        batch = np.shape(q)[:-1]
        zeros = np.zeros(batch + (n, n))
        return zeros, zeros.copy(), np.broadcast_to(np.eye(n), batch + (n, n)).copy()

    def second_order(self, x, u):
        nd, nu = self.ndx, self.nu
        return np.zeros((nd, nd, nd)), np.zeros((nd, nu, nu)), np.zeros((nd, nu, nd))

    def forward_kinematics(self, q):
        """End-effector point and its Jacobian and Hessian with respect to ``q``."""
        phi = np.cumsum(q)
        lc = self.link_lengths * np.cos(phi)
        ls = self.link_lengths * np.sin(phi)
        p = np.array([lc.sum(), ls.sum()])
        # tail sums: link i moves with every joint j <= i
        tc = np.cumsum(lc[::-1])[::-1]
        ts = np.cumsum(ls[::-1])[::-1]
        J = np.vstack([-ts, tc])
        idx = np.maximum.outer(np.arange(self.n_joints), np.arange(self.n_joints))
        H = np.stack([-tc[idx], -ts[idx]])
        return p, J, H
