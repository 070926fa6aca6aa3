import json

import numpy as np
import pytest

from sipose import body_model as bm
from sipose import cli, seqio, synth
from sipose.errors import ConfigError, ShapeError, TemplateMismatch


@pytest.fixture(scope="module")
def clip():
    return synth.synth_clip("squat-jump", 1.5, np.full(10, 0.25), seed=6,
                            noise=synth.noise_mode("virtual-stereo", 6))


def _same(a, b):
    for k in ("phi", "trans", "contacts", "beta"):
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))
    assert a.fps == b.fps and a.checksum == b.checksum
    assert a.has_observations == b.has_observations
    if a.has_observations:
        for k in ("p2d_l", "p2d_r", "p3d_l", "p3d_r", "conf_l", "conf_r"):
            np.testing.assert_array_equal(getattr(a.obs, k), getattr(b.obs, k))
        np.testing.assert_array_equal(a.imu.rot, b.imu.rot)
        np.testing.assert_array_equal(a.imu.acc, b.imu.acc)


def test_round_trip_bitwise(clip, tmp_path):
    sf = seqio.SequenceFile.from_motion(clip.seq, clip.obs, clip.imu)
    seqio.write(tmp_path / "a.seq", sf)
    back = seqio.read(tmp_path / "a.seq")
    _same(sf, back)
    assert seqio.dumps(back) == seqio.dumps(sf)
    bare = seqio.SequenceFile.from_motion(clip.seq)
    _same(bare, seqio.loads(seqio.dumps(bare)))


def test_record_widths(clip):
    text = seqio.dumps(seqio.SequenceFile.from_motion(clip.seq, clip.obs, clip.imu))
    lines = text.splitlines()
    assert len(lines) == len(clip.seq) + 1
    assert len(lines[1].split()) == 77 + 17 * 12 + 6 * 12
    assert lines[0].split()[0] == "SIPSEQ"


def test_header_checks(clip):
    text = seqio.dumps(seqio.SequenceFile.from_motion(clip.seq))
    head, rest = text.split("\n", 1)
    parts = head.split()
    wrong = " ".join(parts[:-2] + ["0000000000000000", parts[-1]]) + "\n" + rest
    with pytest.raises(TemplateMismatch):
        seqio.loads(wrong)
    assert len(seqio.loads(wrong, check_template=False)) == len(clip.seq)
    with pytest.raises(ShapeError):
        seqio.loads(text.rsplit("\n", 2)[0] + "\n")
    with pytest.raises(ConfigError):
        seqio.loads("hello world\n")
    with pytest.raises(ConfigError):
        seqio.loads("")


def test_manifest_json_round_trip():
    m = seqio.RunManifest(["train", "--seed", "1"], "abc", {"seed": 1}, {"trans": "00"}, {"te": 1.5})
    assert seqio.RunManifest.from_json(m.to_json()) == m


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_synth_command_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a.seq", tmp_path / "b.seq"
    code, out, _ = run(capsys, "synth", "--kind", "walk-circle", "--duration", 10, "--seed", 4, "--out", a)
    assert code == 0 and "frames = 600" in out
    run(capsys, "synth", "--kind", "walk-circle", "--duration", 10, "--seed", 4, "--out", b,
        "--manifest", tmp_path / "m.json")
    assert a.read_bytes() == b.read_bytes()
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["outputs"][str(b)] == seqio.sha256_file(a)
    assert len(seqio.read(a)) == 600


def test_seed_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SIPOSE_SEED", "4")
    run(capsys, "synth", "--kind", "idle-sway", "--duration", 1, "--out", tmp_path / "e.seq")
    run(capsys, "synth", "--kind", "idle-sway", "--duration", 1, "--seed", 4, "--out", tmp_path / "s.seq")
    assert (tmp_path / "e.seq").read_bytes() == (tmp_path / "s.seq").read_bytes()
    monkeypatch.setenv("SIPOSE_SEED", "four")
    code, _, err = run(capsys, "synth", "--kind", "idle-sway", "--duration", 1, "--out", tmp_path / "x.seq")
    assert code == 2 and "SIPOSE_SEED" in err


def test_usage_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["synth", "--kind", "moonwalk", "--out", str(tmp_path / "x")])
    assert e.value.code == 2
    code, _, err = run(capsys, "synth", "--kind", "idle-sway", "--beta", "1,2", "--out", tmp_path / "x")
    assert code == 2 and "--beta" in err
    code, _, _ = run(capsys, "fit-shape", "--skeleton", tmp_path / "missing.txt")
    assert code == 2
    code, _, _ = run(capsys, "fit-shape")
    assert code == 2
    code, _, _ = run(capsys, "eval", "--checkpoints", tmp_path / "nowhere")
    assert code == 2
    code, _, _ = run(capsys, "synth", "--kind", "idle-sway", "--duration", 0.2, "--out", tmp_path / "x")
    assert code == 2


def test_fit_shape_with_and_without_cloud(tmp_path, capsys):
    beta = ",".join(["0.5"] * 10)
    run(capsys, "tpose", "--beta", beta, "--points", 20000, "--seed", 1,
        "--cloud-out", tmp_path / "c.txt", "--skeleton-out", tmp_path / "s.txt")
    code, out, _ = run(capsys, "fit-shape", "--cloud", tmp_path / "c.txt", "--skeleton", tmp_path / "s.txt",
                       "--out", tmp_path / "fit.txt")
    assert code == 0
    fitted = np.array([float(x) for x in out.splitlines()[0].split("=")[1].split()])
    truth = np.full(10, 0.5)
    rel = np.abs(bm.bone_lengths(fitted)[1:] / bm.bone_lengths(truth)[1:] - 1)
    assert rel.max() < 0.02
    assert (tmp_path / "fit.txt").read_text() == out
    code, out, _ = run(capsys, "fit-shape", "--skeleton", tmp_path / "s.txt", "--iterations", 100)
    assert code == 0 and "chamfer_weight = 0.0" in out


def test_fit_shape_divergence_exit_1(tmp_path, capsys):
    cli.write_points(tmp_path / "s.txt", np.random.default_rng(0).normal(size=(17, 3)) * 1e4)
    code, _, err = run(capsys, "fit-shape", "--skeleton", tmp_path / "s.txt")
    assert code == 1 and "diverged" in err


def test_infer_frame_count_and_missing_obs(tmp_path, capsys):
    seq_path = tmp_path / "in.seq"
    run(capsys, "synth", "--kind", "figure-eight", "--duration", 2, "--seed", 2, "--out", seq_path)
    code, out, _ = run(capsys, "infer", "--input", seq_path, "--out", tmp_path / "o1.seq", "--report")
    assert code == 0 and "frames = 120" in out and "te_cm" in out
    pred = seqio.read(tmp_path / "o1.seq")
    assert len(pred) == 120 and not pred.has_observations
    assert np.all((pred.contacts > 0) & (pred.contacts < 1))
    run(capsys, "infer", "--input", seq_path, "--out", tmp_path / "o2.seq")
    assert (tmp_path / "o1.seq").read_bytes() == (tmp_path / "o2.seq").read_bytes()
    run(capsys, "synth", "--kind", "figure-eight", "--duration", 2, "--no-obs", "--out", tmp_path / "bare.seq")
    code, _, err = run(capsys, "infer", "--input", tmp_path / "bare.seq", "--out", tmp_path / "o3.seq")
    assert code == 2 and "observations" in err


def test_infer_survives_blind_frames(tmp_path, capsys, clip):
    obs = synth.synth_stereo(clip.seq, synth.StereoCalib(), synth.NoiseSpec(conf_dropout=1.0))
    seqio.write(tmp_path / "blind.seq", seqio.SequenceFile.from_motion(clip.seq, obs, clip.imu))
    code, _, _ = run(capsys, "infer", "--input", tmp_path / "blind.seq", "--out", tmp_path / "o.seq")
    assert code == 0
    pred = seqio.read(tmp_path / "o.seq")
    assert np.all(np.isfinite(pred.phi)) and np.all(np.isfinite(pred.trans))


def test_eval_reproducible_with_manifest(tmp_path, capsys):
    args = ["eval", "--clips", 1, "--duration", 2, "--noise", "ideal", "--noise", "sigma-5"]
    code, out1, _ = run(capsys, *args, "--manifest", tmp_path / "m1.json", "--out", tmp_path / "r.txt")
    assert code == 0
    for m in ("ideal", "sigma-5"):
        for k in ("jpe_mm", "pve_mm", "sip_deg", "te_cm", "jerk_km_s3", "fs_mm"):
            assert f"{m}.{k} = " in out1
    _, out2, _ = run(capsys, *args, "--manifest", tmp_path / "m2.json", "--out", tmp_path / "r.txt")
    assert out1 == out2
    m1, m2 = (json.loads((tmp_path / f"m{i}.json").read_text()) for i in (1, 2))
    # the recorded command differs only in the manifest path itself
    c1, c2 = m1.pop("command"), m2.pop("command")
    assert [a for a in c1 if not a.endswith(".json")] == [a for a in c2 if not a.endswith(".json")]
    assert m1 == m2


def test_train_writes_checkpoints_and_manifest(tmp_path, capsys):
    cfg = tmp_path / "train.txt"
    cfg.write_text("hidden = 8\nlayers = 1\nwindow = 30\nbatch = 2\nepochs = 0.5\n")
    outs = []
    for name in ("r1", "r2"):
        code, out, _ = run(capsys, "train", "--config", cfg, "--clips", 2, "--duration", 1,
                           "--seed", 5, "--out", tmp_path / name)
        assert code == 0 and "stage 3 refine" in out
        outs.append(out)
    assert outs[0] == outs[1]
    for n in ("trans", "ienet", "kenet", "fusion", "refine"):
        assert (tmp_path / "r1" / f"{n}.ckpt").read_bytes() == (tmp_path / "r2" / f"{n}.ckpt").read_bytes()
    m = json.loads((tmp_path / "r1" / "manifest.json").read_text())
    assert m["checkpoints"]["refine"] == seqio.sha256_file(tmp_path / "r1" / "refine.ckpt")
    # stage 2 without stage-1 checkpoints is a structured failure
    code, _, err = run(capsys, "train", "--config", cfg, "--clips", 2, "--duration", 1, "--stages", "2",
                       "--out", tmp_path / "r3")
    assert code == 1 and "StageOrderError" in err
    code, _, _ = run(capsys, "train", "--config", cfg, "--flags", "no_gravity", "--out", tmp_path / "r4")
    assert code == 2


def test_bench_prints_verdict(capsys):
    code, out, _ = run(capsys, "bench", "--hidden", 16, "--frames", 60)
    assert "fps = " in out
    assert ("PASS" in out) == (code == 0)


def test_gen_template_matches_bundled(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-template", "--out", tmp_path / "t.txt")
    assert code == 0
    assert (tmp_path / "t.txt").read_bytes() == bm.TEMPLATE_PATH.read_bytes()
    assert out.strip() == f"checksum = {bm.load_template().checksum}"
