"""Quaternion helpers on numpy arrays, (w, x, y, z) layout, Hamilton product.

Euler conversion is delegated to ``scipy.spatial.transform.Rotation``.
"""
import warnings

import numpy as np
from scipy.spatial.transform import Rotation

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def identity(shape=()):
    q = np.zeros(tuple(shape) + (4,))
    q[..., 0] = 1.0
    return q


def mul(a, b):
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def conj(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def normalize(q):
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / n


def canonical(q):
    """Resolve the double cover by forcing w >= 0."""
    return np.where(q[..., :1] < 0, -q, q)


def rotate(q, v):
    """Rotate vectors ``v`` [..., 3] by unit quaternions ``q`` [..., 4]."""
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def to_matrix(q):
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], axis=-2)


def from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(angle / 2), axis * np.sin(angle / 2)], axis=-1)


def between(u, v):
    """Minimal rotation taking direction ``u`` to direction ``v``."""
    u = u / np.linalg.norm(u, axis=-1, keepdims=True)
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    d = np.sum(u * v, axis=-1, keepdims=True)
    c = np.cross(u, v)
    q = np.concatenate([1.0 + d, c], axis=-1)
    # antiparallel: rotate 180 degrees about any perpendicular axis
    anti = (1.0 + d[..., 0]) < 1e-12
    if np.any(anti):
        alt = np.cross(u, np.array([1.0, 0.0, 0.0]))
        small = np.linalg.norm(alt, axis=-1) < 1e-6
        alt = np.where(small[..., None], np.cross(u, np.array([0.0, 1.0, 0.0])), alt)
        q = np.where(anti[..., None], np.concatenate([np.zeros_like(d), alt], axis=-1), q)
    return normalize(q)


def yaw(angle):
    return from_axis_angle([0.0, 1.0, 0.0], angle)


def slerp(a, b, t):
    d = np.sum(a * b, axis=-1, keepdims=True)
    b = np.where(d < 0, -b, b)
    d = np.abs(d)
    t = np.asarray(t, dtype=np.float64)[..., None] if np.ndim(t) else t
    lin = d > 0.9995
    theta = np.arccos(np.clip(d, -1, 1))
    s = np.sin(theta)
    s = np.where(lin, 1.0, s)
    wa = np.where(lin, 1 - t, np.sin((1 - t) * theta) / s)
    wb = np.where(lin, t, np.sin(t * theta) / s)
    return normalize(wa * a + wb * b)


def angle_between(a, b):
    d = np.abs(np.sum(a * b, axis=-1))
    return 2 * np.arccos(np.clip(d, 0.0, 1.0))


def _to_scipy(q):
    return np.concatenate([q[..., 1:], q[..., :1]], axis=-1)


def _from_scipy(q):
    return np.concatenate([q[..., 3:], q[..., :3]], axis=-1)


def from_euler(angles_deg, order):
    """Intrinsic rotation R = R_order[0] R_order[1] R_order[2] (BVH channel order)."""
    a = np.asarray(angles_deg, dtype=np.float64)
    shape = a.shape[:-1]
    r = Rotation.from_euler(order.upper(), a.reshape(-1, 3), degrees=True)
    return canonical(_from_scipy(r.as_quat()).reshape(shape + (4,)))


def to_euler(q, order):
    """Inverse of :func:`from_euler`. Returns (angles_deg, gimbal_flags)."""
    q = np.asarray(q, dtype=np.float64)
    shape = q.shape[:-1]
    flat = _to_scipy(q.reshape(-1, 4))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ang = Rotation.from_quat(flat).as_euler(order.upper(), degrees=True)
    # middle-axis angle near +-90 (Tait-Bryan) is the singular configuration
    gimbal = np.abs(np.abs(ang[:, 1]) - 90.0) < 0.1
    if caught:
        gimbal |= np.abs(np.abs(ang[:, 1]) - 90.0) < 1.0
    return ang.reshape(shape + (3,)), gimbal.reshape(shape)
