"""Rotation helpers. Quaternions are scalar-first ``(w, x, y, z)``."""

import numpy as np

_SMALL = 1e-8


def hat(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


# Below this angle the closed forms lose digits to cancellation; the
# truncated series are exact to rounding there.
_SERIES_ANGLE = 0.1


def _coeffs(theta2):
    """``sin t/t, (1-cos t)/t^2, (t-sin t)/t^3, 1/t^2-(1+cos t)/(2t sin t)``.

    Works on scalars and arrays of squared angles.
    """
    theta2 = np.asarray(theta2, dtype=float)
    small = theta2 < _SERIES_ANGLE**2
    t2 = np.where(small, theta2, 0.0)
    series = (
        1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0)),
        0.5 - t2 / 24.0 * (1.0 - t2 / 30.0 * (1.0 - t2 / 56.0)),
        1.0 / 6.0 - t2 / 120.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0)),
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2**3 / 1209600.0,
    )
    safe2 = np.where(small, 1.0, theta2)
    t = np.sqrt(safe2)
    sin, cos = np.sin(t), np.cos(t)
    closed = (sin / t, (1.0 - cos) / safe2, (t - sin) / (safe2 * t),
              1.0 / safe2 - (1.0 + cos) / (2.0 * t * sin))
    return tuple(np.where(small, a, b) for a, b in zip(series, closed))


def exp_so3(phi):
    """Rodrigues formula."""
    a, b, _, _ = _coeffs(phi @ phi)
    W = hat(phi)
    return np.eye(3) + a * W + b * W @ W


def right_jacobian(phi):
    """``Exp(phi + d) ~= Exp(phi) Exp(J_r(phi) d)``."""
    _, b, c, _ = _coeffs(phi @ phi)
    W = hat(phi)
    return np.eye(3) - b * W + c * W @ W


def right_jacobian_inv(phi):
    d = _coeffs(phi @ phi)[3]
    W = hat(phi)
    return np.eye(3) + 0.5 * W + d * W @ W


def quat_mul(p, q):
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_exp(phi):
    """Unit quaternion of the rotation vector ``phi``."""
    theta = np.sqrt(phi @ phi)
    half = 0.5 * theta
    if theta < _SMALL:
        # sin(t/2)/t series
        s = 0.5 - theta * theta / 48.0
    else:
        s = np.sin(half) / theta
    return np.array([np.cos(half), s * phi[0], s * phi[1], s * phi[2]])


def quat_log(q):
    """Rotation vector of a unit quaternion, shortest arc."""
    w = q[0]
    v = np.asarray(q[1:], dtype=float)
    if w < 0.0:
        w, v = -w, -v
    n = np.sqrt(v @ v)
    if n < _SMALL:
        return 2.0 * v / w * (1.0 - n * n / (3.0 * w * w))
    return 2.0 * np.arctan2(n, w) / n * v


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


# Batched variants over a leading axis; used by the per-horizon linearization.

def hat_batch(w):
    W = np.zeros(w.shape[:-1] + (3, 3))
    W[..., 0, 1], W[..., 0, 2] = -w[..., 2], w[..., 1]
    W[..., 1, 0], W[..., 1, 2] = w[..., 2], -w[..., 0]
    W[..., 2, 0], W[..., 2, 1] = -w[..., 1], w[..., 0]
    return W


def _batch_coeffs(phi):
    return [c[..., None, None] for c in _coeffs(np.einsum("...i,...i->...", phi, phi))]


def exp_so3_batch(phi):
    a, b, _, _ = _batch_coeffs(phi)
    W = hat_batch(phi)
    return np.eye(3) + a * W + b * (W @ W)


def right_jacobian_batch(phi):
    _, b, c, _ = _batch_coeffs(phi)
    W = hat_batch(phi)
    return np.eye(3) - b * W + c * (W @ W)


def right_jacobian_inv_batch(phi):
    d = _batch_coeffs(phi)[3]
    W = hat_batch(phi)
    return np.eye(3) + 0.5 * W + d * (W @ W)


def quat_mul_batch(p, q):
    pw, px, py, pz = np.moveaxis(p, -1, 0)
    qw, qx, qy, qz = np.moveaxis(q, -1, 0)
    return np.stack([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ], axis=-1)


def quat_log_batch(q):
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    q = q * sign
    w, v = q[..., 0], q[..., 1:]
    n = np.sqrt(np.einsum("...i,...i->...", v, v))
    small = n < _SMALL
    safe_n = np.where(small, 1.0, n)
    safe_w = np.where(small, w, 1.0)
    coef = np.where(small, 2.0 / safe_w * (1.0 - n * n / (3.0 * safe_w * safe_w)),
                    2.0 * np.arctan2(n, w) / safe_n)
    return coef[..., None] * v


def quat_to_matrix_batch(q):
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R
