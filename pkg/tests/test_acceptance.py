"""Acceptance checks, one test per criterion.

Each test prints a single ``CRITERION n ...: PASS|FAIL`` line (also repeated in
the pytest terminal summary) and then asserts it. Criteria 6 to 8 share one
desk-scale training run; the whole file takes roughly 20 to 25 minutes on one
core. Run it alone with::

    pytest tests/test_acceptance.py -v
    python tests/test_acceptance.py
"""
import json
import time

import numpy as np
import pytest

from sipose import autodiff as ad
from sipose import body_model as bm
from sipose import cli, seqio, so3, stereo, synth
from sipose import losses as L
from sipose import metrics as M
from sipose import nets as N
from sipose import pipeline as pl
from sipose import shape_fit as sf
from sipose import train_eval as te

from conftest import grad_check
from test_metrics import compare_case

RESULTS = {}

DESK_CLIPS = 50
DESK_SECONDS = 10.0
DESK_EPOCHS = 40.0
TRAIN_BUDGET_S = 30 * 60


def verdict(n, name, ok, detail):
    line = f"CRITERION {n} {name}: {'PASS' if ok else 'FAIL'} | {detail}"
    RESULTS[n] = line
    print("\n" + line)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. geometry

def test_criterion_1_geometry():
    calib = stereo.StereoCalib()
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    pts = np.zeros((0, 3))
    while len(pts) < 10_000:
        z = rng.uniform(0.5, 10.0, 20_000)
        xy = rng.uniform(-1.2, 1.2, (20_000, 2)) * z[:, None]
        cand = np.column_stack([xy, z])
        pts = np.concatenate([pts, cand[stereo.in_view(calib, cand)]])
    pts = pts[:10_000]
    ones = np.ones(len(pts))
    obs = stereo.StereoObservation(stereo.project(calib, "left", pts), stereo.project(calib, "right", pts),
                                   np.zeros_like(pts), np.zeros_like(pts), ones, ones)
    mk = stereo.reconstruct_world(calib, obs)
    err = float(np.max(np.linalg.norm(mk.p_C - pts, axis=1)))
    secs = time.perf_counter() - t0
    verdict(1, "geometry", err < 1e-6 and secs < 5.0 and np.all(mk.conf_C == 1.0),
            f"max error {err:.3g} m over {len(pts)} points, {secs:.2f} s")


# ---------------------------------------------------------------------------
# 2. gradient suite

def _gradient_cases(rng):
    pos = lambda *s: rng.uniform(0.5, 2.0, size=s)
    nrm = lambda *s: rng.normal(size=s)
    beta = nrm(10) * 0.5
    cases = {}
    for kind in ("neg", "sin", "cos", "exp", "tanh", "sigmoid", "silu", "square"):
        cases[kind] = (lambda x, k=kind: ad.tsum(ad.elementwise(k, x) * np.arange(1.0, 7.0)), [nrm(6)])
    for kind in ("log", "sqrt"):
        cases[kind] = (lambda x, k=kind: ad.tsum(ad.elementwise(k, x) * np.arange(1.0, 7.0)), [pos(6)])
    for kind in ("add", "sub", "mul", "div"):
        cases[kind] = (lambda x, y, k=kind: ad.tsum(ad.square(ad.elementwise(k, x, y))), [nrm(3, 4), pos(4)])
    cases["relu"] = (lambda x: ad.tsum(ad.relu(x) * 3.0), [np.array([-1.0, -0.4, 0.3, 2.0])])
    cases["clip"] = (lambda x: ad.tsum(ad.square(ad.clip(x, -1.0, 1.0))), [np.array([-2.0, -0.5, 0.2, 3.0])])
    cases["matmul"] = (lambda a, b: ad.tsum(ad.square(ad.matmul(a, b))), [nrm(2, 3, 4), nrm(4, 5)])
    cases["reductions"] = (lambda x: ad.mean(ad.square(ad.tsum(x, axis=1))) + ad.tsum(ad.swapaxes(x, 0, 1)[0]),
                           [nrm(3, 4)])
    cases["indexing"] = (lambda x, y: ad.tsum(ad.square(ad.concat([x[:, 1:], y], axis=1)))
                         + ad.tsum(ad.square(ad.stack([x[0], y[:, 0] * 2.0], axis=0))), [nrm(3, 3), nrm(3, 2)])
    cases["linear_scan"] = (lambda x, a: ad.tsum(ad.square(ad.linear_scan(x, a))), [nrm(6, 3), rng.uniform(0.2, 0.9, 3)])
    cases["positional_encode"] = (lambda x: ad.tsum(ad.positional_encode(x, 4) * np.linspace(-1, 1, 24)),
                                  [rng.uniform(0, 1, 3)])
    Wr = nrm(4, 3, 3)
    cases["rodrigues"] = (lambda v: ad.tsum(so3.exp_map(v) * Wr), [nrm(4, 3)])
    cases["rodrigues_small_angle"] = (lambda v: ad.tsum(so3.exp_map(v) * np.arange(9.0).reshape(3, 3)),
                                      [np.array([1e-5, -2e-5, 3e-5])])
    cases["from6d"] = (lambda r: ad.tsum(so3.from6d(r) * np.arange(9.0).reshape(3, 3)), [nrm(6)])
    W = nrm(24, 3)
    cases["fk"] = (lambda p, b: ad.tsum(bm.fk_tensor(p, b)[0] * W), [nrm(24, 3) * 0.4, beta])
    P = nrm(40, 3)
    cases["chamfer"] = (lambda v: sf.chamfer(P, v), [nrm(30, 3)])
    a, b, c, d = (nrm(5, 3) for _ in range(4))
    cases["loss_T"] = (lambda x: L.loss_T(x, b), [a])
    Jg = nrm(2, 24, 3)
    cases["loss_J"] = (lambda x: L.loss_J(x, Jg), [nrm(2, 24, 3)])
    cases["loss_cycle"] = (lambda x, y, z: L.loss_cycle(x, y, z, d), [a, b, c])
    gt = nrm(2, 24, 3) * 0.4
    cases["loss_phi"] = (lambda p, bb: L.loss_phi(p, gt, bb), [nrm(2, 24, 3) * 0.4, beta])
    qg = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    cases["loss_contact"] = (lambda q: L.loss_contact(q, qg), [rng.uniform(0.1, 0.9, (3, 2))])
    R = so3.exp_map(nrm(2, 3))
    q = rng.random((2, 2))
    cases["loss_footskate"] = (lambda p1, p0, bb, dT: L.loss_footskate(p1, p0, bb, dT, q, R, R),
                               [nrm(2, 24, 3) * 0.3, nrm(2, 24, 3) * 0.3, beta, nrm(2, 3) * 0.02])
    cases["loss_jerk"] = (lambda x, y, z, w: L.loss_jerk(x, y, z, w), [nrm(24, 3) for _ in range(4)])
    cases["loss_total"] = (lambda v: L.loss_total(dict(zip(("phi", "T", "dT", "fc", "fs", "jk"), ad_split(v)))),
                           [rng.random(6)])

    H = 4
    net = N.SequenceNet(N.NetSpec("g", 3, 2, hidden=H, layers=1), seed=5)
    names = [n for n in net.names() if n.startswith("blk0.")]
    us = nrm(10, H)

    def unrolled(*vals):
        Pm = dict(zip(names, vals))
        h = ad.Tensor(np.zeros(H))
        tot = ad.Tensor(0.0)
        for t in range(10):
            y, h = N.ssm_step(Pm, "blk0.", ad.Tensor(us[t]), h)
            tot = tot + ad.tsum(ad.square(y))
        return tot

    cases["ssm_step_10"] = (unrolled, [net.params[n] for n in names])
    return cases


def ad_split(v):
    return [v[i] for i in range(6)]


def test_criterion_2_gradients():
    t0 = time.perf_counter()
    errs = {name: grad_check(fn, *inputs) for name, (fn, inputs) in _gradient_cases(np.random.default_rng(2)).items()}
    secs = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    bad = sorted(k for k, v in errs.items() if not v < 1e-4)
    verdict(2, "gradient suite", not bad and secs < 60.0,
            f"{len(errs)} ops, worst {worst} rel err {errs[worst]:.2g}, {secs:.1f} s"
            + (f", failing {bad}" if bad else ""))


# ---------------------------------------------------------------------------
# 3. loss identities

def test_criterion_3_loss_identities():
    rng = np.random.default_rng(3)
    checks = {}
    Tp, Tt = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
    checks["cycle"] = L.loss_cycle(Tt - Tp, Tt, Tp, Tt - Tp).item() == 0.0
    t = np.arange(4.0)[:, None, None]
    worst = 0.0
    for _ in range(50):
        c = rng.normal(size=(3, 24, 3))
        J = c[0] + c[1] * t + c[2] * t * t
        worst = max(worst, L.loss_jerk(J[3], J[2], J[1], J[0]).item())
    checks["jerk"] = worst < 1e-20
    fs_worst = 0.0
    fj = bm.load_template().foot_joints
    for _ in range(20):
        beta = rng.normal(size=10) * 0.5
        phi_p = rng.normal(size=(24, 3)) * 0.2
        phi_t = phi_p + rng.normal(size=(24, 3)) * 0.05
        dT = bm.fk(phi_p, beta).joints[fj[0]] - bm.fk(phi_t, beta).joints[fj[0]]
        fs_worst = max(fs_worst, L.loss_footskate(phi_t, phi_p, beta, dT, np.array([1.0, 0.0])).item())
    checks["footskate"] = fs_worst < 1e-28
    checks["bce"] = L.loss_contact(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]])).item() < 1e-6
    w = L.LossWeights()
    checks["weights"] = (w.phi, w.T, w.dT, w.fc, w.fs, w.jk) == (20.0, 5.0, 5.0, 0.001, 100.0, 50.0)
    unit = {k: 1.0 for k in ("phi", "T", "dT", "fc", "fs", "jk")}
    checks["total"] = all(L.loss_total({k: 1.0}).item() == getattr(w, k) for k in unit) \
        and L.loss_total(unit).item() == 20.0 + 5.0 + 5.0 + 0.001 + 100.0 + 50.0
    phi, gt = rng.normal(size=(24, 3)) * 0.3, rng.normal(size=(24, 3)) * 0.3
    beta = rng.normal(size=10)
    jp, jg = bm.fk(phi, beta).joints, bm.fk(gt, beta).joints
    lam = (L.loss_phi(phi, gt, beta).item() - L.loss_phi(phi, gt, beta, lam=0.0).item()) / L.loss_J(jp, jg).item()
    checks["lambda"] = L.FK_WEIGHT == 2.5 and abs(lam - 2.5) < 1e-12
    bad = [k for k, v in checks.items() if not v]
    verdict(3, "loss identities", not bad,
            f"jerk max {worst:.1g}, footskate max {fs_worst:.1g}" + (f", failing {bad}" if bad else ""))


# ---------------------------------------------------------------------------
# 4. shape recovery

def test_criterion_4_shape_recovery():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    cloud_bone, cloud_rms, skel_bone = [], [], []
    for i in range(20):
        beta = synth.random_beta(rng, 2.0)
        cloud, skel = synth.synth_tpose_cloud(beta, synth.NoiseSpec(seed=i))
        R, t = synth.tpose_placement(beta)
        truth = bm.fk(np.zeros((24, 3)), beta).joints @ R.T + t
        true_bones = bm.bone_lengths(beta)[1:]
        r = sf.solve(sf.FitProblem(cloud, skel))
        cloud_bone.append(np.max(np.abs(bm.bone_lengths(r.beta)[1:] / true_bones - 1)))
        fit = bm.fk(r.phi, r.beta).joints @ r.R.T + r.t
        cloud_rms.append(np.sqrt(np.mean(np.sum((fit - truth) ** 2, axis=1))))
        r = sf.solve(sf.FitProblem(None, skel))
        skel_bone.append(np.max(np.abs(bm.bone_lengths(r.beta)[1:] / true_bones - 1)))
    secs = time.perf_counter() - t0
    ok = max(cloud_bone) < 0.02 and max(cloud_rms) < 0.01 and max(skel_bone) < 0.03 and secs < 120.0
    verdict(4, "shape recovery", ok,
            f"worst bone {100 * max(cloud_bone):.2f}% (cloud), {100 * max(skel_bone):.2f}% (skeleton only), "
            f"worst joint RMS {100 * max(cloud_rms):.2f} cm, {secs:.1f} s")


# ---------------------------------------------------------------------------
# 5. metrics oracle

def test_criterion_5_metrics():
    mismatches = []
    for seed in range(100):
        mismatches += [(seed, name) for name, got, ref in compare_case(seed) if got != ref]
    gt = np.zeros((5, 24, 3))
    pred = gt.copy()
    pred[:, 7, 0] = 0.024
    t = np.arange(10.0)
    p = np.zeros((10, 1, 3))
    p[:, 0, 0] = 0.001 * t ** 3 / 6.0
    fixtures = {
        "jpe 1 mm": abs(M.jpe(pred, gt) - 1.0) < 1e-12,
        "te 5 cm": abs(M.te(np.full((4, 3), [0.05, 0, 0]), np.zeros((4, 3))) - 5.0) < 1e-12,
        "jerk 0.216": abs(M.jerk_metric(p, 60.0) - 0.216) < 1e-12,
    }
    bad = [k for k, v in fixtures.items() if not v]
    verdict(5, "metrics oracle", not mismatches and not bad,
            f"100 cases x 6 metrics, {len(mismatches)} mismatches, fixtures failing: {bad or 'none'}")


# ---------------------------------------------------------------------------
# 6-8. desk-scale training

@pytest.fixture(scope="session")
def desk():
    clips = te.make_dataset(DESK_CLIPS, DESK_SECONDS, seed=0)
    t0 = time.perf_counter()
    nets, stages = te.train_all(te.TrainConfig(epochs=DESK_EPOCHS), clips)
    secs = time.perf_counter() - t0
    return {"clips": clips, "nets": nets, "stages": stages, "train_s": secs}


@pytest.fixture(scope="session")
def desk_eval(desk):
    return te.evaluate(desk["nets"], te.EvalConfig(noise_modes=("ideal", "sigma-5", "sigma-15")))


def test_criterion_6_desk_learning(desk, desk_eval):
    te_cm = {m: r.te_cm for m, r in desk_eval.items()}
    jpe = desk_eval["ideal"].jpe_mm
    ordered = te_cm["ideal"] <= te_cm["sigma-5"] <= te_cm["sigma-15"]
    ok = desk["train_s"] <= TRAIN_BUDGET_S and te_cm["ideal"] < 10.0 and jpe < 80.0 and ordered
    verdict(6, "desk-scale learning", ok,
            f"train {desk['train_s'] / 60:.1f} min, TE ideal/5/15 = {te_cm['ideal']:.2f}/{te_cm['sigma-5']:.2f}/"
            f"{te_cm['sigma-15']:.2f} cm, JPE {jpe:.2f} mm")


def test_criterion_7_ablations(desk, desk_eval):
    base = desk_eval["ideal"]
    stage1 = desk["stages"][1]
    ec = te.EvalConfig(noise_modes=("ideal",))
    arm = {}
    for flag in ("no_footskate", "no_jerk", "no_shape"):
        nets, _ = te.train_all(te.TrainConfig(epochs=DESK_EPOCHS, flags=(flag,)), desk["clips"], stage1=stage1)
        arm[flag] = te.evaluate(nets, ec)["ideal"]
    checks = {
        "footskate lowers FS": base.fs_mm < arm["no_footskate"].fs_mm,
        "jerk lowers Jerk": base.jerk_km_s3 < arm["no_jerk"].jerk_km_s3,
        "shape keeps FS": base.fs_mm <= arm["no_shape"].fs_mm,
    }
    verdict(7, "paired ablations", all(checks.values()),
            f"FS {base.fs_mm:.3f} vs {arm['no_footskate'].fs_mm:.3f} mm; Jerk {base.jerk_km_s3:.3f} vs "
            f"{arm['no_jerk'].jerk_km_s3:.3f}; FS(true beta) {base.fs_mm:.3f} vs FS(zero beta) "
            f"{arm['no_shape'].fs_mm:.3f} mm; failing: {[k for k, v in checks.items() if not v] or 'none'}")


def test_criterion_8_throughput(desk):
    nets = desk["nets"]
    assert nets["trans"].spec.hidden == 64
    fps = te.bench_inference(nets, n_frames=600, dtype=np.float32)
    clip = te.observe(te.held_out_motions(1, 5.0)[0], "ideal", 8)
    est, _ = pl.forward_all(nets, clip.obs, clip.imu, clip.seq.beta)
    s = pl.StreamingPipeline(nets, clip.seq.beta).run(clip.obs, clip.imu)
    gap = max(float(np.max(np.abs(a - b))) for a, b in
              ((s.phi_canon, est.phi_canon), (s.T, est.T), (s.dT, est.dT), (s.q, est.q)))
    verdict(8, "throughput", fps > 200.0 and gap < 1e-9,
            f"{fps:.0f} frames/s (float32, one thread), stream vs batch max gap {gap:.2g}")


# ---------------------------------------------------------------------------
# 9. determinism

def _cli(capsys, argv):
    code = cli.main([str(a) for a in argv])
    return code, capsys.readouterr().out


def test_criterion_9_determinism(tmp_path, capsys):
    cfg = tmp_path / "train.txt"
    cfg.write_text("hidden = 8\nlayers = 1\nwindow = 30\nbatch = 2\nepochs = 0.5\n")

    def commands(d):
        seq = d / "s.seq"
        return {
            "synth": (["synth", "--kind", "walk-circle", "--duration", 2, "--noise", "virtual-stereo",
                       "--seed", 3, "--out", seq, "--manifest", d / "synth.json"], [seq]),
            "tpose": (["tpose", "--random-beta", "--seed", 3, "--cloud-out", d / "c.txt",
                       "--skeleton-out", d / "k.txt"], [d / "c.txt", d / "k.txt"]),
            "fit-shape": (["fit-shape", "--cloud", d / "c.txt", "--skeleton", d / "k.txt", "--iterations", 50,
                           "--out", d / "fit.txt"], [d / "fit.txt"]),
            "train": (["train", "--config", cfg, "--clips", 2, "--duration", 1, "--seed", 3,
                       "--out", d / "ck"], [d / "ck" / f"{n}.ckpt" for n in pl.NET_NAMES]),
            "eval": (["eval", "--checkpoints", d / "ck", "--clips", 1, "--duration", 2, "--noise", "sigma-5",
                      "--out", d / "eval.txt"], [d / "eval.txt"]),
            "infer": (["infer", "--checkpoints", d / "ck", "--input", seq, "--out", d / "p.seq"], [d / "p.seq"]),
            "gen-template": (["gen-template", "--out", d / "t.txt"], [d / "t.txt"]),
        }

    runs = []
    for rep in ("a", "b"):
        d = tmp_path / rep
        d.mkdir()
        got = {}
        for name, (argv, files) in commands(d).items():
            code, out = _cli(capsys, argv)
            got[name] = (code, out.replace(str(d), "<dir>"), [f.read_bytes() for f in files])
        runs.append(got)
    differing = [n for n in runs[0] if runs[0][n] != runs[1][n]]
    failed = [n for n in runs[0] if runs[0][n][0] != 0]
    sf_a = seqio.read(tmp_path / "a" / "s.seq")
    again = seqio.loads(seqio.dumps(sf_a))
    lossless = seqio.dumps(again) == (tmp_path / "a" / "s.seq").read_text() and all(
        np.array_equal(getattr(sf_a, k), getattr(again, k)) for k in ("phi", "trans", "contacts", "beta")) \
        and np.array_equal(sf_a.obs.p2d_l, again.obs.p2d_l) and np.array_equal(sf_a.imu.rot, again.imu.rot)
    m = json.loads((tmp_path / "a" / "synth.json").read_text())
    manifest_ok = m["outputs"][str(tmp_path / "a" / "s.seq")] == seqio.sha256_file(tmp_path / "a" / "s.seq")
    verdict(9, "determinism", not differing and not failed and lossless and manifest_ok,
            f"{len(runs[0])} commands run twice, differing: {differing or 'none'}, failed: {failed or 'none'}, "
            f"round-trip lossless: {lossless}")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))
