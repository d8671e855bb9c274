import math

import numpy as np

from .base import SecondOrderModel


class CartpoleModel(SecondOrderModel):
    """Cart on a frictionless rail with a point-mass pendulum.

    State ``(x, theta, xdot, thetadot)``; ``theta = 0`` hangs down and
    ``theta = pi`` is upright.  The single control is the horizontal force
    on the cart in newtons.
    """

    nx = ndx = 4
    nu = 1
    nq = 2
    state_names = ("x", "theta", "xdot", "thetadot")
    control_names = ("force",)

    def __init__(self, cart_mass=1.0, pole_mass=0.5, pole_length=0.5, gravity=9.81,
                 dt=0.01, force_limit=30.0):
        if min(cart_mass, pole_mass, pole_length) <= 0:
            raise ValueError("cartpole masses and length must be positive")
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.mc = float(cart_mass)
        self.mp = float(pole_mass)
        self.l = float(pole_length)
        self.g = float(gravity)
        self.dt = float(dt)
        self.force_limit = float(force_limit)
        self.u_lower = np.array([-force_limit], dtype=float)
        self.u_upper = np.array([force_limit], dtype=float)
        self._check_bounds()

    # Both acceleration routines broadcast over leading batch dimensions.
    def acceleration(self, q, v, u):
        mc, mp, l, g = self.mc, self.mp, self.l, self.g
        s, c = np.sin(q[..., 1]), np.cos(q[..., 1])
        w = v[..., 1]
        f = u[..., 0]
        den = mc + mp * s * s
        xdd = (f + mp * s * (l * w * w + g * c)) / den
        thdd = (-f * c - mp * l * w * w * c * s - (mc + mp) * g * s) / (l * den)
        return np.stack([xdd, thdd], axis=-1)

    def acceleration_jacobians(self, q, v, u):
        mc, mp, l, g = self.mc, self.mp, self.l, self.g
        s, c = np.sin(q[..., 1]), np.cos(q[..., 1])
        w = v[..., 1]
        f = u[..., 0]
        den = mc + mp * s * s
        dden = 2.0 * mp * s * c

        nx_ = f + mp * s * (l * w * w + g * c)
        nx_th = mp * (c * (l * w * w + g * c) - g * s * s)
        nx_w = 2.0 * mp * s * l * w

        nth = -f * c - mp * l * w * w * c * s - (mc + mp) * g * s
        nth_th = f * s - mp * l * w * w * (c * c - s * s) - (mc + mp) * g * c
        nth_w = -2.0 * mp * l * w * c * s

        shape = s.shape
        a_q = np.zeros(shape + (2, 2))
        a_q[..., 0, 1] = (nx_th * den - nx_ * dden) / den**2
        a_q[..., 1, 1] = (nth_th * den - nth * dden) / (l * den**2)
        a_v = np.zeros(shape + (2, 2))
        a_v[..., 0, 1] = nx_w / den
        a_v[..., 1, 1] = nth_w / (l * den)
        a_u = np.empty(shape + (2, 1))
        a_u[..., 0, 0] = 1.0 / den
        a_u[..., 1, 0] = -c / (l * den)
        return a_q, a_v, a_u

    def _step(self, x, u):
        # scalar fast path of acceleration() + semi-implicit Euler
        mc, mp, l, g, dt = self.mc, self.mp, self.l, self.g, self.dt
        th, w = x[1], x[3]
        f = u[0]
        s, c = math.sin(th), math.cos(th)
        den = mc + mp * s * s
        xdd = (f + mp * s * (l * w * w + g * c)) / den
        thdd = (-f * c - mp * l * w * w * c * s - (mc + mp) * g * s) / (l * den)
        v0 = x[2] + dt * xdd
        v1 = w + dt * thdd
        return np.array([x[0] + dt * v0, th + dt * v1, v0, v1])

    def energy(self, x):
        """Kinetic plus potential energy, pivot height as datum."""
        _, th, xd, w = x
        mc, mp, l, g = self.mc, self.mp, self.l, self.g
        kinetic = 0.5 * (mc + mp) * xd * xd + mp * l * xd * w * np.cos(th) + 0.5 * mp * l * l * w * w
        return kinetic - mp * g * l * np.cos(th)
