"""The six motion-capture error metrics.

Every reduction goes through math.fsum on explicitly computed per-element
values, so the result is exactly rounded and does not depend on frame order.
The reference implementations in tests follow the same per-element arithmetic
with plain loops.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields

import numpy as np

from . import body_model as bm
from .errors import ShapeError

SIP_JOINTS = (1, 2, 16, 17)


class NoContactWarning(UserWarning):
    pass


@dataclass
class MetricReport:
    jpe_mm: float = 0.0
    pve_mm: float = 0.0
    sip_deg: float = 0.0
    te_cm: float = 0.0
    jerk_km_s3: float = 0.0
    fs_mm: float = 0.0
    no_contact: bool = False

    def to_text(self, prefix=""):
        return "".join(f"{prefix}{f.name} = {getattr(self, f.name)!r}\n" for f in fields(self))

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _norm3(d):
    # same operation order as the scalar references
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


def _mean(values):
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        return 0.0
    return math.fsum(v.tolist()) / v.size


def _check_pair(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")
    return a, b


def jpe(pred, gt):
    """Mean joint error in mm after subtracting each side's pelvis. Inputs [F, 24, 3]."""
    pred, gt = _check_pair(pred, gt, "jpe")
    pa = pred - pred[..., :1, :]
    ga = gt - gt[..., :1, :]
    return _mean(_norm3(pa - ga)) * 1000.0


def centroid(points):
    """Per-frame centroid [F, 3] of [F, N, 3] points using exactly rounded sums."""
    p = np.asarray(points, dtype=np.float64)
    F, N = p.shape[0], p.shape[1]
    out = np.empty((F, 3))
    for f in range(F):
        for k in range(3):
            out[f, k] = math.fsum(p[f, :, k].tolist()) / N
    return out


def pve(pred_vertices, gt_vertices, pred_root=None, gt_root=None):
    """Mean vertex error in mm after removing each side's root position.

    Without explicit roots, the per-frame vertex centroid is used.
    """
    pred, gt = _check_pair(pred_vertices, gt_vertices, "pve")
    pr = centroid(pred) if pred_root is None else np.asarray(pred_root, dtype=np.float64)
    gr = centroid(gt) if gt_root is None else np.asarray(gt_root, dtype=np.float64)
    pa = pred - pr[:, None, :]
    ga = gt - gr[:, None, :]
    return _mean(_norm3(pa - ga)) * 1000.0


def _geodesic_deg(a, b):
    """Angle of a^T b via atan2(sin, cos), accurate near 0 and near 180 degrees."""
    # relative rotation built entry by entry so the sums have a fixed order
    R = [[a[..., 0, i] * b[..., 0, j] + a[..., 1, i] * b[..., 1, j] + a[..., 2, i] * b[..., 2, j]
          for j in range(3)] for i in range(3)]
    x, y, z = R[2][1] - R[1][2], R[0][2] - R[2][0], R[1][0] - R[0][1]
    s2 = (x * x + y * y + z * z).reshape(-1).tolist()
    cs = (R[0][0] + R[1][1] + R[2][2] - 1.0).reshape(-1).tolist()
    # libm atan2, so results do not depend on numpy's vectorised kernels
    ang = [math.atan2(math.sqrt(u), v) for u, v in zip(s2, cs)]
    return np.degrees(np.array(ang).reshape(np.shape(R[0][0])))


def sip(pred_phi, gt_phi, beta):
    """Mean geodesic error in degrees of the global hip and shoulder rotations."""
    pred_phi, gt_phi = _check_pair(pred_phi, gt_phi, "sip")
    gp = bm.fk(pred_phi, beta).globals[..., SIP_JOINTS, :, :]
    gg = bm.fk(gt_phi, beta).globals[..., SIP_JOINTS, :, :]
    return _mean(_geodesic_deg(gp, gg))


def te(pred_T, gt_T):
    """Mean root translation error in cm."""
    pred_T, gt_T = _check_pair(pred_T, gt_T, "te")
    return _mean(_norm3(pred_T - gt_T)) * 100.0


def third_difference(p):
    p = np.asarray(p, dtype=np.float64)
    return ((p[3:] - 3.0 * p[2:-1]) + 3.0 * p[1:-2]) - p[:-3]


def jerk_metric(joints_world, fps):
    """Mean magnitude of the backward third difference, in km/s^3."""
    p = np.asarray(joints_world, dtype=np.float64)
    if p.shape[0] < 4:
        raise ShapeError("jerk needs at least 4 frames")
    return _mean(_norm3(third_difference(p))) * fps ** 3 / 1000.0


def foot_steps(feet_world):
    """Per-frame foot displacement [F-1, 2] between consecutive frames."""
    f = np.asarray(feet_world, dtype=np.float64)
    return _norm3(f[1:] - f[:-1])


def fs_metric(feet_world, gt_contacts, return_flag=False):
    """Mean predicted foot displacement in mm over frames labelled as contact.

    Frame t counts for foot j when its label at t is 1; both feet are pooled.
    With no contact frames the result is 0 and a NoContactWarning is issued.
    """
    steps = foot_steps(feet_world)
    q = np.asarray(gt_contacts)[1:]
    if q.shape != steps.shape:
        raise ShapeError(f"fs: contacts {np.shape(gt_contacts)} do not match feet {np.shape(feet_world)}")
    sel = steps[q > 0.5]
    empty = sel.size == 0
    if empty:
        warnings.warn("no ground-truth contact frames; FS reported as 0", NoContactWarning, stacklevel=2)
        val = 0.0
    else:
        val = _mean(sel) * 1000.0
    return (val, empty) if return_flag else val


def evaluate_motion(pred_phi, pred_T, gt_phi, gt_T, beta, gt_contacts, fps,
                    pred_beta=None) -> MetricReport:
    """All six metrics for one clip given predicted and true (Φ, T)."""
    pb = beta if pred_beta is None else pred_beta
    js_p = bm.fk(pred_phi, pb)
    js_g = bm.fk(gt_phi, beta)
    pred_T = np.asarray(pred_T, dtype=np.float64)
    verts_p = bm.vertices_from(js_p, pb)
    verts_g = bm.vertices_from(js_g, beta)
    root = np.zeros((len(pred_T), 3))
    feet_p = bm.feet(js_p) + pred_T[:, None, :]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoContactWarning)
        fs, empty = fs_metric(feet_p, gt_contacts, return_flag=True)
    return MetricReport(
        jpe_mm=jpe(js_p.joints, js_g.joints),
        pve_mm=pve(verts_p, verts_g, root, root),
        sip_deg=sip(pred_phi, gt_phi, beta),
        te_cm=te(pred_T, gt_T),
        jerk_km_s3=jerk_metric(js_p.joints + pred_T[:, None, :], fps),
        fs_mm=fs,
        no_contact=empty,
    )


def mean_report(reports, weights=None) -> MetricReport:
    """Frame-weighted average of per-clip reports."""
    if not reports:
        return MetricReport(no_contact=True)
    w = np.ones(len(reports)) if weights is None else np.asarray(weights, dtype=np.float64)
    tot = math.fsum(w.tolist())
    out = {}
    for f in fields(MetricReport):
        if f.name == "no_contact":
            continue
        out[f.name] = math.fsum([wi * getattr(r, f.name) for wi, r in zip(w, reports)]) / tot
    return MetricReport(**out, no_contact=all(r.no_contact for r in reports))
