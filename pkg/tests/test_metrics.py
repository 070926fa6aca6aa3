import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sipose import body_model as bm
from sipose import metrics as M
from sipose import so3


# brute-force references: explicit loops with the same per-element arithmetic

def _dist(a, b):
    dx, dy, dz = a[0] - b[0], a[1] - b[1], a[2] - b[2]
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def ref_jpe(pred, gt):
    vals = []
    for f in range(len(pred)):
        for j in range(pred.shape[1]):
            vals.append(_dist(pred[f, j] - pred[f, 0], gt[f, j] - gt[f, 0]))
    return math.fsum(vals) / len(vals) * 1000.0


def ref_pve(pred, gt, pr, gr):
    vals = []
    for f in range(len(pred)):
        for v in range(pred.shape[1]):
            vals.append(_dist(pred[f, v] - pr[f], gt[f, v] - gr[f]))
    return math.fsum(vals) / len(vals) * 1000.0


def ref_te(p, g):
    vals = [_dist(p[f], g[f]) for f in range(len(p))]
    return math.fsum(vals) / len(vals) * 100.0


def ref_jerk(p, fps):
    vals = []
    for f in range(3, len(p)):
        for j in range(p.shape[1]):
            d = ((p[f, j] - 3.0 * p[f - 1, j]) + 3.0 * p[f - 2, j]) - p[f - 3, j]
            vals.append(_dist(d, np.zeros(3)))
    return math.fsum(vals) / len(vals) * fps ** 3 / 1000.0


def ref_fs(feet, q):
    vals = []
    for f in range(1, len(feet)):
        for k in range(2):
            if q[f, k] > 0.5:
                vals.append(_dist(feet[f, k], feet[f - 1, k]))
    return math.fsum(vals) / len(vals) * 1000.0 if vals else 0.0


def ref_sip(pp, gp, beta):
    gpred = bm.fk(pp, beta).globals
    ggt = bm.fk(gp, beta).globals
    vals = []
    for f in range(len(pp)):
        for j in M.SIP_JOINTS:
            a, b = gpred[f, j], ggt[f, j]
            R = [[a[0, i] * b[0, j] + a[1, i] * b[1, j] + a[2, i] * b[2, j] for j in range(3)]
                 for i in range(3)]
            x, y, z = R[2][1] - R[1][2], R[0][2] - R[2][0], R[1][0] - R[0][1]
            cos2 = R[0][0] + R[1][1] + R[2][2] - 1.0
            vals.append(math.degrees(math.atan2(math.sqrt(x * x + y * y + z * z), cos2)))
    return math.fsum(vals) / len(vals)


def compare_case(seed):
    """(metric, implementation value, brute-force value) for one randomized case."""
    r = np.random.default_rng(seed)
    F = int(r.integers(4, 12))
    pred, gt = r.normal(size=(F, 24, 3)), r.normal(size=(F, 24, 3))
    pv, gv = r.normal(size=(F, 384, 3)), r.normal(size=(F, 384, 3))
    pr, gr = r.normal(size=(F, 3)), r.normal(size=(F, 3))
    q = (r.random((F, 2)) < 0.5).astype(float)
    pp, gp, beta = r.normal(size=(F, 24, 3)) * 0.5, r.normal(size=(F, 24, 3)) * 0.5, r.normal(size=10)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", M.NoContactWarning)
        fs = M.fs_metric(pred[:, :2], q)
    return [
        ("jpe", M.jpe(pred, gt), ref_jpe(pred, gt)),
        ("pve", M.pve(pv, gv, pr, gr), ref_pve(pv, gv, pr, gr)),
        ("te", M.te(pred[:, 0], gt[:, 0]), ref_te(pred[:, 0], gt[:, 0])),
        ("jerk", M.jerk_metric(pred, 60.0), ref_jerk(pred, 60.0)),
        ("fs", fs, ref_fs(pred[:, :2], q)),
        ("sip", M.sip(pp, gp, beta), ref_sip(pp, gp, beta)),
    ]


@given(st.integers(0, 2**32 - 1))
def test_metrics_equal_brute_force(seed):
    for name, got, ref in compare_case(seed):
        assert got == ref, name


def test_unit_fixtures():
    gt = np.zeros((5, 24, 3))
    pred = gt.copy()
    pred[:, 7, 0] = 0.024
    assert M.jpe(pred, gt) == pytest.approx(1.0, abs=1e-12)
    T = np.zeros((7, 3))
    assert M.te(T + [0.05, 0.0, 0.0], T) == pytest.approx(5.0, abs=1e-12)
    # third difference of 1 mm per frame: p = 0.001 t^3 / 6
    t = np.arange(10.0)
    p = np.zeros((10, 1, 3))
    p[:, 0, 0] = 0.001 * t ** 3 / 6.0
    assert M.jerk_metric(p, 60.0) == pytest.approx(0.216, rel=1e-9)


def test_zero_and_alignment_cases(rng):
    x = rng.normal(size=(6, 24, 3))
    assert M.jpe(x, x) == 0.0
    assert M.te(x[:, 0], x[:, 0]) == 0.0
    v = rng.normal(size=(6, 384, 3))
    assert M.pve(v, v) == 0.0
    assert M.pve(v + [0.01, 0.0, 0.0], v) == pytest.approx(0.0, abs=1e-9)
    t = np.arange(8.0)[:, None, None]
    quad = 0.3 + 0.2 * t + 0.05 * t * t + np.zeros((8, 24, 3))
    assert M.jerk_metric(quad, 60.0) == pytest.approx(0.0, abs=1e-9)


def test_sip_examples(rng):
    phi = rng.normal(size=(3, 24, 3)) * 0.3
    beta = rng.normal(size=10)
    assert M.sip(phi, phi, beta) == 0.0
    # rotate the left hip by 10 degrees on top of an identity pose; the other three stay exact
    zero = np.zeros((1, 24, 3))
    bent = zero.copy()
    bent[0, 1] = [np.radians(10.0), 0.0, 0.0]
    assert M.sip(bent, zero, beta) == pytest.approx(2.5, abs=1e-9)
    # identical limb angles, different root: global comparison sees it
    rooted = zero.copy()
    rooted[0, 0] = [0.0, 0.5, 0.0]
    assert M.sip(rooted, zero, beta) == pytest.approx(np.degrees(0.5), abs=1e-6)


def test_fs_examples():
    feet = np.zeros((5, 2, 3))
    q = np.ones((5, 2))
    assert M.fs_metric(feet, q) == 0.0
    feet[:, :, 0] = np.arange(5)[:, None] * 0.001
    assert M.fs_metric(feet, q) == pytest.approx(1.0)
    with pytest.warns(M.NoContactWarning):
        val, empty = M.fs_metric(feet, np.zeros((5, 2)), return_flag=True)
    assert val == 0.0 and empty


@given(st.integers(0, 10_000))
def test_frame_permutation_invariance(seed):
    r = np.random.default_rng(seed)
    pred, gt = r.normal(size=(9, 24, 3)), r.normal(size=(9, 24, 3))
    perm = r.permutation(9)
    assert M.jpe(pred[perm], gt[perm]) == M.jpe(pred, gt)
    assert M.te(pred[perm, 0], gt[perm, 0]) == M.te(pred[:, 0], gt[:, 0])
    pv, gv = r.normal(size=(9, 384, 3)), r.normal(size=(9, 384, 3))
    assert M.pve(pv[perm], gv[perm]) == M.pve(pv, gv)


def test_report_nonnegative_and_text(rng):
    F = 20
    phi = rng.normal(size=(F, 24, 3)) * 0.2
    T = rng.normal(size=(F, 3))
    rep = M.evaluate_motion(phi + 0.01, T + 0.01, phi, T, np.zeros(10), np.ones((F, 2)), 60.0)
    assert all(v >= 0 for k, v in rep.as_dict().items() if k != "no_contact")
    assert "jpe_mm = " in rep.to_text()
    gt = M.evaluate_motion(phi, T, phi, T, np.zeros(10), np.ones((F, 2)), 60.0)
    assert gt.jpe_mm == gt.pve_mm == gt.te_cm == 0.0
    assert gt.sip_deg == 0.0
