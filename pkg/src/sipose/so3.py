"""Rotation helpers: axis-angle exp/log, the 6D continuous representation, geodesic distance.

Functions accept numpy arrays (batched over leading axes) or autodiff tensors
where noted. Tensor inputs are recorded on the tape.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DegenerateRotation

TAYLOR_CUTOFF = 1e-4
# derivative coefficients lose precision faster than the values themselves
_DERIV_CUTOFF = 1e-2


def skew(v):
    v = np.asarray(v, dtype=np.float64)
    z = np.zeros(v.shape[:-1])
    return np.stack([
        np.stack([z, -v[..., 2], v[..., 1]], -1),
        np.stack([v[..., 2], z, -v[..., 0]], -1),
        np.stack([-v[..., 1], v[..., 0], z], -1),
    ], -2)


def _vee_asym(G):
    # w such that <G, skew(e)> = w . e
    return np.stack([G[..., 2, 1] - G[..., 1, 2],
                     G[..., 0, 2] - G[..., 2, 0],
                     G[..., 1, 0] - G[..., 0, 1]], -1)


def _coeffs(theta):
    """sin(t)/t and (1-cos t)/t^2 with a Taylor branch near zero."""
    small = theta < TAYLOR_CUTOFF
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    A = np.where(small, 1.0 - t2 / 6.0, np.sin(t) / t)
    B = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(t)) / (t * t))
    return A, B


def _dcoeffs(theta):
    """(dA/dt)/t and (dB/dt)/t."""
    small = theta < _DERIV_CUTOFF
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a1 = np.where(small, -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0,
                  (t * np.cos(t) - np.sin(t)) / t ** 3)
    b1 = np.where(small, -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0,
                  (t * np.sin(t) - 2.0 * (1.0 - np.cos(t))) / t ** 4)
    return a1, b1


def _exp_np(v):
    theta = np.sqrt(np.sum(v * v, axis=-1))
    A, B = _coeffs(theta)
    K = skew(v)
    K2 = K @ K
    return np.eye(3) + A[..., None, None] * K + B[..., None, None] * K2


def exp_map(v):
    """Rodrigues formula, axis-angle [..., 3] -> rotation matrix [..., 3, 3]."""
    if not isinstance(v, Tensor):
        return _exp_np(np.asarray(v, dtype=np.float64))
    vd = v.data
    R = _exp_np(vd)

    def bw(G):
        theta = np.sqrt(np.sum(vd * vd, axis=-1))
        A, B = _coeffs(theta)
        a1, b1 = _dcoeffs(theta)
        K = skew(vd)
        K2 = K @ K
        KT = np.swapaxes(K, -1, -2)
        s = a1 * np.sum(G * K, axis=(-1, -2)) + b1 * np.sum(G * K2, axis=(-1, -2))
        gv = s[..., None] * vd + A[..., None] * _vee_asym(G) + B[..., None] * _vee_asym(G @ KT + KT @ G)
        return (gv,)

    return ad.record(R, (v,), bw, "exp_map")


def log_map(R):
    """Rotation matrix [..., 3, 3] -> axis-angle [..., 3] with angle in [0, pi]."""
    R = np.asarray(R, dtype=np.float64)
    flat = R.reshape(-1, 3, 3)
    out = Rotation.from_matrix(flat).as_rotvec()
    return out.reshape(R.shape[:-2] + (3,))


def rot_x(a):
    return exp_map(np.array([a, 0.0, 0.0]))


def rot_y(a):
    return exp_map(np.array([0.0, a, 0.0]))


def rot_z(a):
    return exp_map(np.array([0.0, 0.0, a]))


def to6d(m):
    """First two columns of the rotation, stacked as (col0, col1)."""
    if isinstance(m, Tensor):
        return ad.concat([m[..., :, 0], m[..., :, 1]], axis=-1)
    m = np.asarray(m, dtype=np.float64)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def _cross_np(a, b):
    return np.cross(a, b)


def _check_parallel(a1, a2):
    n1 = a1 / np.linalg.norm(a1, axis=-1, keepdims=True)
    n2 = a2 / np.linalg.norm(a2, axis=-1, keepdims=True)
    if np.any(np.linalg.norm(np.cross(n1, n2), axis=-1) <= 1e-9):
        raise DegenerateRotation("6D columns are parallel")


def from6d(r):
    """Gram-Schmidt the two stored columns and complete with a cross product."""
    if isinstance(r, Tensor):
        _check_parallel(r.data[..., :3], r.data[..., 3:])
        a1, a2 = r[..., 0:3], r[..., 3:6]
        b1 = a1 / ad.reshape(ad.sqrt(ad.tsum(ad.square(a1), axis=-1)), a1.shape[:-1] + (1,))
        proj = ad.reshape(ad.tsum(b1 * a2, axis=-1), a1.shape[:-1] + (1,))
        u2 = a2 - proj * b1
        b2 = u2 / ad.reshape(ad.sqrt(ad.tsum(ad.square(u2), axis=-1)), a1.shape[:-1] + (1,))
        b3 = cross(b1, b2)
        return ad.stack([b1, b2, b3], axis=-1)
    r = np.asarray(r, dtype=np.float64)
    a1, a2 = r[..., :3], r[..., 3:]
    _check_parallel(a1, a2)
    b1 = a1 / np.linalg.norm(a1, axis=-1, keepdims=True)
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    b2 = u2 / np.linalg.norm(u2, axis=-1, keepdims=True)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def cross(a, b):
    """Cross product of tensors over the last axis."""
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return ad.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def geodesic_deg(a, b):
    """Angle of a^T b in degrees; batched over leading axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    tr = np.sum(a * b, axis=(-1, -2))  # trace(a^T b)
    c = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    return np.degrees(np.arccos(c))


def is_rotation(m, tol=1e-9):
    m = np.asarray(m, dtype=np.float64)
    eye = np.eye(3)
    ok_orth = np.abs(np.swapaxes(m, -1, -2) @ m - eye).max() <= tol
    ok_det = np.abs(np.linalg.det(m) - 1.0).max() <= tol
    return bool(ok_orth and ok_det)


def random_rotations(rng, n):
    """Uniform random rotations as an [n, 3, 3] array."""
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return Rotation.from_quat(q).as_matrix()
