"""Training objectives.

Each loss is a per-frame sum over its components; leading axes (frames,
batch) are averaged so magnitudes do not depend on window length. Inputs may
be tensors or arrays; outputs are scalar tensors.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from . import body_model as bm
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

BCE_EPS = 1e-7
FK_WEIGHT = 2.5


@dataclass(frozen=True)
class LossWeights:
    phi: float = 20.0
    T: float = 5.0
    dT: float = 5.0
    fc: float = 0.001
    fs: float = 100.0
    jk: float = 50.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"loss weight {f.name} must be nonnegative")


def _frame_mean(per_elem, event_ndim):
    """Sum the trailing ``event_ndim`` axes, then average whatever is left."""
    nd = len(per_elem.shape)
    s = ad.tsum(per_elem, axis=tuple(range(nd - event_ndim, nd))) if event_ndim else per_elem
    return ad.mean(s) if len(s.shape) else s


def _sq_diff(a, b, what):
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")
    return ad.square(a - b)


def loss_T(T, T_gt):
    return _frame_mean(_sq_diff(T, T_gt, "loss_T"), 1)


def loss_J(J, J_gt):
    """Squared joint-position error; accepts [..., 24, 3] or flattened [..., 72]."""
    d = _sq_diff(J, J_gt, "loss_J")
    return _frame_mean(d, 2 if len(d.shape) >= 2 and d.shape[-1] == 3 else 1)


def loss_cycle(dT, T, T_prev, dT_gt, consistency=True):
    """Translation-change loss with the cycle term tying ΔT to consecutive T."""
    sup = _sq_diff(dT, dT_gt, "loss_cycle")
    if not consistency:
        return _frame_mean(sup, 1)
    cyc = _sq_diff(dT, ad.as_tensor(T) - T_prev, "loss_cycle")
    return _frame_mean(cyc + sup, 1)


def loss_phi(phi, phi_gt, beta, lam=FK_WEIGHT):
    """Axis-angle error plus λ times the FK joint-position error."""
    phi, phi_gt = ad.as_tensor(phi), ad.as_tensor(phi_gt)
    rot = _frame_mean(_sq_diff(phi, phi_gt, "loss_phi"), 2)
    j, _ = bm.fk_tensor(phi, beta)
    jg, _ = bm.fk_tensor(phi_gt.data, beta)
    return rot + lam * _frame_mean(ad.square(j - jg), 2)


def loss_contact(q, q_gt):
    """Binary cross-entropy summed over both feet, with q clamped away from 0 and 1."""
    q = ad.clip(ad.as_tensor(q), BCE_EPS, 1.0 - BCE_EPS)
    q_gt = np.asarray(q_gt.data if isinstance(q_gt, Tensor) else q_gt, dtype=np.float64)
    if q.shape != q_gt.shape:
        raise ShapeError(f"loss_contact: shapes {q.shape} and {q_gt.shape} differ")
    bce = -(ad.log(q) * q_gt + ad.log(1.0 - q) * (1.0 - q_gt))
    return _frame_mean(bce, 1)


def rotate_points(points, rot):
    """Apply rotations [..., 3, 3] to point sets [..., N, 3]."""
    if rot is None:
        return points
    rot = ad.as_tensor(rot)
    pts = ad.as_tensor(points)
    out = ad.matmul(ad.reshape(rot, rot.shape[:-2] + (1, 3, 3)), ad.reshape(pts, pts.shape + (1,)))
    return ad.reshape(out, pts.shape)


def footskate_from_feet(f_t, f_prev, dT, q):
    """Contact-weighted slide of the feet: q_j * |f_j,t - f_j,t-1 + ΔT_t|^2 summed over feet.

    f_t, f_prev are [..., 2, 3] feet relative to the root, dT is [..., 3], q is [..., 2].
    """
    f_t = ad.as_tensor(f_t)
    dT = ad.as_tensor(dT)
    slide = f_t - f_prev + ad.reshape(dT, dT.shape[:-1] + (1, 3))
    per_foot = ad.tsum(ad.square(slide), axis=-1) * q
    return _frame_mean(per_foot, 1)


def loss_footskate(phi_t, phi_prev, beta, dT, q, rot_t=None, rot_prev=None):
    """Foot-skating penalty from two poses.

    ``rot_t``/``rot_prev`` optionally rotate root-relative feet into world
    orientation when the pose's root rotation is expressed in a moving frame.
    """
    jt, _ = bm.fk_tensor(phi_t, beta)
    jp, _ = bm.fk_tensor(phi_prev, beta)
    fj = list(bm.load_template().foot_joints)
    ft = rotate_points(jt[..., fj, :], rot_t)
    fp = rotate_points(jp[..., fj, :], rot_prev)
    return footskate_from_feet(ft, fp, dT, q)


def jerk_from_window(joints):
    """Third-difference penalty over a window [..., F, 24, 3], frames t >= 3."""
    joints = ad.as_tensor(joints)
    F = joints.shape[-3]
    if F < 4:
        raise ShapeError("jerk loss needs at least 4 frames")
    sl = lambda a, b: joints[..., a:F - b, :, :]
    d = sl(3, 0) - 3.0 * sl(2, 1) + 3.0 * sl(1, 2) - sl(0, 3)
    return _frame_mean(ad.square(d), 2)


def loss_jerk(J_t, J_1, J_2, J_3):
    """Per-frame jerk penalty from four consecutive joint sets [..., 24, 3]."""
    d = ad.as_tensor(J_t) - 3.0 * ad.as_tensor(J_1) + 3.0 * ad.as_tensor(J_2) - J_3
    return _frame_mean(ad.square(d), 2)


def loss_total(terms, weights: LossWeights = LossWeights()):
    """Weighted sum over the six terms; missing terms count as zero."""
    out = None
    for f in fields(weights):
        t = terms.get(f.name)
        if t is None:
            continue
        w = getattr(weights, f.name)
        part = ad.as_tensor(t) * w
        out = part if out is None else out + part
    return out if out is not None else ad.Tensor(0.0)
