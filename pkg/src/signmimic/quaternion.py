"""Vectorized unit-quaternion helpers.

Quaternions are stored ``(w, x, y, z)`` along the last axis; every function
broadcasts over leading dimensions. The sagittal plane used for mirroring is
``x = 0`` (x points to the character's left, y up, z forward).
"""

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def cross(a, b):
    """Cross product along the last axis (cheaper than ``np.cross`` for small arrays)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def mul(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = aw * bw - ax * bx - ay * by - az * bz
    out[..., 1] = aw * bx + ax * bw + ay * bz - az * by
    out[..., 2] = aw * by - ax * bz + ay * bw + az * bx
    out[..., 3] = aw * bz + ax * by - ay * bx + az * bw
    return out


def conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def canonical(q):
    """Pick the double-cover representative with ``w >= 0``."""
    q = np.asarray(q, dtype=float)
    return np.where(q[..., :1] < 0.0, -q, q)


def from_axis_angle(aa):
    """Exponential map from rotation vectors to quaternions."""
    aa = np.asarray(aa, dtype=float)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    # sin(theta/2)/theta, with its Taylor expansion near zero
    k = np.where(small, 0.5 - theta**2 / 48.0, np.sin(0.5 * safe) / safe)
    return np.concatenate([np.cos(0.5 * theta), k * aa], axis=-1)


def to_axis_angle(q):
    """Logarithm map; returns the rotation vector with angle in [0, pi]."""
    q = canonical(q)
    w = q[..., :1]
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    theta = 2.0 * np.arctan2(s, w)
    small = s < 1e-12
    k = np.where(small, 2.0 / np.where(small, w, 1.0), theta / np.where(small, 1.0, s))
    return k * v


def rotate(q, v):
    """Rotate vectors ``v`` by quaternions ``q``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * cross(u, v)
    return v + w * t + cross(u, t)


def to_matrix(q):
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def geodesic(a, b):
    """Rotation angle between ``a`` and ``b`` in [0, pi], sign-flip invariant.

    Uses the chord form ``4 atan2(|a - b|, |a + b|)``, which is exactly zero for
    identical inputs and well conditioned near 0 and pi.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    minus = np.linalg.norm(a - b, axis=-1)
    plus = np.linalg.norm(a + b, axis=-1)
    return 4.0 * np.arctan2(np.minimum(minus, plus), np.maximum(minus, plus))


def slerp(a, b, t):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.asarray(t, dtype=float)[..., None]
    dot = np.sum(a * b, axis=-1, keepdims=True)
    b = np.where(dot < 0.0, -b, b)
    dot = np.abs(dot)
    omega = np.arccos(np.clip(dot, -1.0, 1.0))
    so = np.sin(omega)
    near = so < 1e-10
    so = np.where(near, 1.0, so)
    wa = np.where(near, 1.0 - t, np.sin((1.0 - t) * omega) / so)
    wb = np.where(near, t, np.sin(t * omega) / so)
    return normalize(wa * a + wb * b)


def twist_angle(q, axis):
    """Signed rotation angle of the twist component of ``q`` about ``axis``."""
    q = np.asarray(q, dtype=float)
    proj = np.sum(q[..., 1:] * np.asarray(axis, dtype=float), axis=-1)
    angle = 2.0 * np.arctan2(proj, q[..., 0])
    return (angle + np.pi) % (2.0 * np.pi) - np.pi


def left_jacobian_apply(r, rdot):
    """Angular velocity of ``exp(r)`` given the rotation-vector rate ``rdot``."""
    r = np.asarray(r, dtype=float)
    rdot = np.asarray(rdot, dtype=float)
    theta2 = np.sum(r * r, axis=-1, keepdims=True)
    theta = np.sqrt(theta2)
    small = theta < 1e-6
    st = np.where(small, 1.0, theta)
    a = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(st)) / st**2)
    b = np.where(small, 1.0 / 6.0 - theta2 / 120.0, (st - np.sin(st)) / st**3)
    c1 = cross(r, rdot)
    return rdot + a * c1 + b * cross(r, c1)


_MIRROR_Q = np.array([1.0, 1.0, -1.0, -1.0])
_MIRROR_P = np.array([-1.0, 1.0, 1.0])


def mirror(q):
    """Reflect a rotation across the sagittal plane."""
    return np.asarray(q, dtype=float) * _MIRROR_Q


def mirror_axis_angle(aa):
    return np.asarray(aa, dtype=float) * _MIRROR_Q[1:]


def mirror_point(p):
    return np.asarray(p, dtype=float) * _MIRROR_P
