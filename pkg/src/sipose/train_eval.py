"""Staged training, evaluation and throughput measurement.

Stage 1 fits TransNet, IENet and KENet against ground truth. Stage 2 fits
FusionNet on the frozen stage-1 features. Stage 3 fits RefineNet on the frozen
fusion output with the same objective. Features from frozen stages are
computed once per clip over the whole sequence, exactly as at inference time.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from . import body_model as bm
from . import losses as L
from . import pipeline as pl
from . import synth
from .errors import ConfigError, StageOrderError
from .metrics import MetricReport, evaluate_motion, mean_report
from .stereo import StereoCalib, parse_kv

log = logging.getLogger(__name__)

FLAGS = ("no_shape", "no_pe", "no_refine", "no_jerk", "no_cycle", "no_footskate", "no_canonical")
STAGE_NETS = {1: ("trans", "ienet", "kenet"), 2: ("fusion",), 3: ("refine",)}


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    window: int = 120
    batch: int = 8
    epochs: float = 40.0
    seed: int = 0
    hidden: int = 64
    layers: int = 2
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    flags: tuple = ()

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ConfigError(f"stage must be 1, 2 or 3, got {self.stage}")
        bad = set(self.flags) - set(FLAGS)
        if bad:
            raise ConfigError(f"unknown ablation flags {sorted(bad)}")
        if self.window < 4 or self.batch < 1 or self.epochs <= 0 or self.lr <= 0:
            raise ConfigError("window >= 4, batch >= 1, epochs > 0 and lr > 0 are required")
        object.__setattr__(self, "flags", tuple(sorted(set(self.flags))))

    def has(self, flag):
        return flag in self.flags

    def pipeline(self) -> pl.PipelineConfig:
        return pl.PipelineConfig(hidden=self.hidden, layers=self.layers, pe=not self.has("no_pe"),
                                 canonical=not self.has("no_canonical"),
                                 use_shape=not self.has("no_shape"))

    def effective_weights(self) -> L.LossWeights:
        w = self.weights
        if self.has("no_jerk"):
            w = replace(w, jk=0.0)
        if self.has("no_footskate"):
            w = replace(w, fs=0.0)
        return w

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "weights":
                lines += [f"weight.{k} = {x!r}" for k, x in asdict(v).items()]
            elif f.name == "flags":
                lines.append(f"flags = {','.join(v)}")
            else:
                lines.append(f"{f.name} = {v!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kv = parse_kv(text)
        kw, wkw = {}, {}
        types = {f.name: f.type for f in fields(cls)}
        for k, v in kv.items():
            if k.startswith("weight."):
                wkw[k[7:]] = float(v)
            elif k == "flags":
                kw["flags"] = tuple(x for x in str(v).split(",") if x.strip()) if v else ()
            elif k in types:
                kw[k] = int(v) if types[k] == "int" else float(v)
            else:
                raise ConfigError(f"unknown training key {k!r}")
        try:
            kw["weights"] = L.LossWeights(**wkw)
        except TypeError as e:
            raise ConfigError(str(e)) from None
        return cls(**kw)


def pipeline_config_of(nets) -> pl.PipelineConfig:
    """Recover the feature configuration from checkpoint headers."""
    spec = next(iter(nets.values())).spec
    flags = set().union(*(net.spec.flags for net in nets.values()))
    return pl.PipelineConfig(hidden=spec.hidden, layers=spec.layers, pe="no_pe" not in flags,
                             canonical="no_canonical" not in flags, use_shape="no_shape" not in flags)


# ---------------------------------------------------------------------------
# data

def make_dataset(n_clips=50, duration_s=10.0, seed=0, noise="ideal", max_beta=1.5, calib=None):
    """Clips of mixed kinds, each with its own shape and seed."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_clips):
        kind = synth.KINDS[i % len(synth.KINDS)]
        beta = synth.random_beta(rng, max_beta)
        cs = seed * 100003 + i
        out.append(synth.synth_clip(kind, duration_s, beta, cs, calib, synth.noise_mode(noise, cs)))
    return out


def held_out_motions(n_clips=8, duration_s=10.0, seed=1000, max_beta=1.5):
    rng = np.random.default_rng(seed)
    return [synth.generate_motion(synth.KINDS[i % len(synth.KINDS)], duration_s,
                                  synth.random_beta(rng, max_beta), seed * 100003 + i)
            for i in range(n_clips)]


def observe(seq, noise_name, seed, calib=None) -> synth.Clip:
    calib = calib or StereoCalib()
    ns = synth.noise_mode(noise_name, seed)
    return synth.Clip(seq, synth.synth_stereo(seq, calib, ns), synth.synth_imu(seq, ns))


@dataclass
class Prepared:
    """Per-clip network inputs and targets for one feature configuration."""
    clip: synth.Clip
    mk: object
    R_p: np.ndarray
    x_trans: np.ndarray
    x_imu: np.ndarray
    x_kenet: np.ndarray
    J_gt: np.ndarray          # [F, 72] encoder targets
    phi_gt: np.ndarray        # [F, 24, 3] canonical root
    joints_gt: np.ndarray     # [F, 24, 3] fk of phi_gt with the true shape
    T: np.ndarray
    dT: np.ndarray
    q: np.ndarray
    beta: np.ndarray
    x_fusion: np.ndarray | None = None
    T0: np.ndarray | None = None
    dT0: np.ndarray | None = None
    x_refine: np.ndarray | None = None
    fused: pl.HeadOut | None = None

    def __len__(self):
        return len(self.T)


def prepare(clip: synth.Clip, cfg: pl.PipelineConfig, calib=None) -> Prepared:
    seq = clip.seq
    mk = pl.metric_inputs(clip.obs, calib)
    R_p = pl.pelvis_rotation(clip.imu)
    phi_c = pl.canonical_phi(seq.phi, R_p)
    J = pl.canonical_joints(seq.phi, seq.beta, R_p, cfg.canonical)
    return Prepared(
        clip=clip, mk=mk, R_p=R_p,
        x_trans=pl.assemble_trans_input(mk, cfg.workspace, cfg.pe),
        x_imu=pl.assemble_imu_input(clip.imu, cfg.acc_range, cfg.pe),
        x_kenet=pl.assemble_kenet_input(mk.p_R, mk.conf_C, R_p if cfg.canonical else None, cfg.pe,
                                        cfg.canonical, cfg.joint_range),
        J_gt=J.reshape(len(J), -1), phi_gt=phi_c, joints_gt=bm.fk(phi_c, seq.beta).joints,
        T=seq.trans, dT=seq.delta_trans, q=seq.contacts, beta=np.asarray(seq.beta, dtype=np.float64),
    )


def attach_stage1(p: Prepared, nets, cfg):
    inter = pl.Intermediates(*pl.decode_trans(nets["trans"].forward(p.x_trans), cfg),
                             nets["ienet"].forward(p.x_imu), nets["kenet"].forward(p.x_kenet), p.x_imu)
    p.T0, p.dT0 = inter.T0, inter.dT0
    p.x_fusion = pl.assemble_fusion_input(inter.J_imu, inter.J_vis, p.mk.conf_C, p.beta, p.T0, p.dT0,
                                          p.x_imu, cfg)


def attach_stage2(p: Prepared, nets, cfg):
    p.fused = pl.decode_head(nets["fusion"].forward(p.x_fusion), None, p.T0, p.dT0, cfg)
    f = p.fused
    p.x_refine = pl.assemble_refine_input(f.phi, f.T, f.dT, pl._sigmoid(f.q_logit), p.beta, cfg)


# ---------------------------------------------------------------------------
# optimisation

class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        out = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            out[k] = p - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return out


def clip_global_norm(grads, max_norm):
    total = math.sqrt(math.fsum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        s = max_norm / total
        return {k: g * s for k, g in grads.items()}, total
    return grads, total


def _grads(P, params):
    return {k: (P[k].grad if P[k].grad is not None else np.zeros_like(params[k])) for k in params}


def sample_windows(rng, lengths, window, batch):
    """(clip index, start) pairs; clips are drawn in proportion to their usable starts."""
    starts = np.array([max(n - window + 1, 0) for n in lengths], dtype=np.float64)
    if starts.sum() == 0:
        raise ConfigError(f"no clip is at least {window} frames long")
    ci = rng.choice(len(lengths), size=batch, p=starts / starts.sum())
    return [(int(c), int(rng.integers(0, int(starts[c])))) for c in ci]


def _gather(data, picks, attr, window):
    return np.stack([getattr(data[c], attr)[s:s + window] for c, s in picks])


def _gather_head(data, picks, window):
    sl = lambda a: np.stack([getattr(data[c].fused, a)[s:s + window] for c, s in picks])
    return pl.HeadOut(sl("phi"), sl("T"), sl("dT"), sl("q_logit"))


def head_losses(head: pl.HeadOut, data, picks, tcfg: TrainConfig):
    """Weighted objective of a fusion/refine head over a batch of windows."""
    W = tcfg.window
    g = lambda a: _gather(data, picks, a, W)
    B = len(picks)
    beta = np.stack([data[c].beta for c, _ in picks])[:, None, :]
    R_p = g("R_p")
    phi = ad.reshape(head.phi, (B, W, bm.N_JOINTS, 3))
    j, _ = bm.fk_tensor(phi, beta)
    terms = {
        # rotation error + FK joint error, as in loss_phi but sharing one FK pass
        "phi": L.loss_J(phi, g("phi_gt")) + L.loss_J(j, g("joints_gt")) * L.FK_WEIGHT,
        "T": L.loss_T(head.T, g("T")),
        "dT": L.loss_cycle(head.dT[:, 1:], head.T[:, 1:], head.T[:, :-1], g("dT")[:, 1:],
                           consistency=not tcfg.has("no_cycle")),
        "fc": L.loss_contact(ad.sigmoid(head.q_logit), g("q")),
    }
    w = tcfg.effective_weights()
    jw = L.rotate_points(j, R_p)
    if w.fs > 0:
        fj = list(bm.load_template().foot_joints)
        feet = jw[:, :, fj, :]
        terms["fs"] = L.footskate_from_feet(feet[:, 1:], feet[:, :-1], head.dT[:, 1:], g("q")[:, 1:])
    if w.jk > 0:
        T = head.T
        terms["jk"] = L.jerk_from_window(jw + ad.reshape(T, T.shape[:-1] + (1, 3)))
    return L.loss_total(terms, w), terms


def _stage1_losses(nets, P, data, picks, cfg, tcfg):
    W = tcfg.window
    g = lambda a: _gather(data, picks, a, W)
    out = nets["trans"].forward_tensor(g("x_trans"), P["trans"])
    T = out[..., 0:3] * cfg.workspace.half_extent
    dT = out[..., 3:6] * cfg.dT_step
    lt = L.loss_T(T, g("T")) + L.loss_cycle(dT[:, 1:], T[:, 1:], T[:, :-1], g("dT")[:, 1:],
                                             consistency=not tcfg.has("no_cycle"))
    Jt = g("J_gt")
    li = L.loss_J(nets["ienet"].forward_tensor(g("x_imu"), P["ienet"]), Jt)
    lk = L.loss_J(nets["kenet"].forward_tensor(g("x_kenet"), P["kenet"]), Jt)
    return {"trans": lt, "ienet": li, "kenet": lk}


def _head_loss(nets, P, data, picks, cfg, tcfg, stage):
    W = tcfg.window
    if stage == 2:
        out = nets["fusion"].forward_tensor(_gather(data, picks, "x_fusion", W), P["fusion"])
        head = pl.decode_head(out, None, _gather(data, picks, "T0", W), _gather(data, picks, "dT0", W), cfg)
        name = "fusion"
    else:
        out = nets["refine"].forward_tensor(_gather(data, picks, "x_refine", W), P["refine"])
        base = _gather_head(data, picks, W)
        head = pl.decode_head(out, base, None, None, cfg)
        name = "refine"
    total, _ = head_losses(head, data, picks, tcfg)
    return {name: total}


@dataclass
class StageResult:
    nets: dict
    history: dict        # net name -> per-step loss values
    steps: int
    seconds: float

    def final_loss(self, name):
        return self.history[name][-1]


def steps_for(tcfg: TrainConfig, data):
    frames = sum(len(p) for p in data)
    return max(1, int(math.ceil(tcfg.epochs * frames / (tcfg.window * tcfg.batch))))


def prepare_for_stage(tcfg: TrainConfig, clips, nets=None, calib=None):
    cfg = tcfg.pipeline()
    data = [prepare(c, cfg, calib) for c in clips]
    if tcfg.stage >= 2:
        for p in data:
            attach_stage1(p, nets, cfg)
    if tcfg.stage >= 3:
        for p in data:
            attach_stage2(p, nets, cfg)
    return data


def _require(nets, stage):
    need = [n for s in range(1, stage) for n in STAGE_NETS[s]]
    missing = [n for n in need if nets is None or n not in nets]
    if missing:
        raise StageOrderError(f"stage {stage} needs trained {', '.join(missing)} first")


def train_stage(tcfg: TrainConfig, clips, nets=None, calib=None, data=None, steps=None) -> StageResult:
    """Train the networks of ``tcfg.stage``; earlier stages are read but never modified."""
    stage = tcfg.stage
    _require(nets, stage)
    cfg = tcfg.pipeline()
    nets = dict(nets or {})
    for n in pl.net_specs(cfg):
        if n in nets and nets[n].spec != pl.net_specs(cfg)[n]:
            raise ConfigError(f"checkpoint {n} was trained with a different configuration")
    names = STAGE_NETS[stage]
    if stage == 3 and tcfg.has("no_refine"):
        return StageResult(nets, {}, 0, 0.0)
    fresh = pl.build_nets(cfg, seed=tcfg.seed)
    for n in names:
        nets[n] = fresh[n]
    if data is None:
        data = prepare_for_stage(tcfg, clips, nets, calib)
    rng = np.random.default_rng([tcfg.seed, stage])
    opts = {n: Adam(nets[n].params, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.eps) for n in names}
    history = {n: [] for n in names}
    n_steps = steps if steps is not None else steps_for(tcfg, data)
    lengths = [len(p) for p in data]
    t0 = time.perf_counter()
    for it in range(n_steps):
        picks = sample_windows(rng, lengths, tcfg.window, tcfg.batch)
        P = {n: nets[n].tensors() for n in names}
        if stage == 1:
            loss = _stage1_losses(nets, P, data, picks, cfg, tcfg)
        else:
            loss = _head_loss(nets, P, data, picks, cfg, tcfg, stage)
        for n in names:
            ad.backward(loss[n])
            grads, _ = clip_global_norm(_grads(P[n], nets[n].params), tcfg.grad_clip)
            nets[n].set_params(opts[n].step(nets[n].params, grads))
            history[n].append(loss[n].item())
        if it % 100 == 0:
            log.info("stage %d step %d/%d %s", stage, it, n_steps,
                     " ".join(f"{n}={history[n][-1]:.5g}" for n in names))
    return StageResult(nets, history, n_steps, time.perf_counter() - t0)


def train_all(tcfg: TrainConfig, clips, calib=None, stage1=None):
    """Run stages 1 to 3 (or reuse a stage-1 result) and return the final network dict."""
    results = {}
    if stage1 is None:
        stage1 = train_stage(replace(tcfg, stage=1), clips, calib=calib)
    results[1] = stage1
    nets = stage1.nets
    for s in (2, 3):
        r = train_stage(replace(tcfg, stage=s), clips, nets, calib)
        results[s] = r
        nets = r.nets
    return nets, results


# ---------------------------------------------------------------------------
# evaluation

@dataclass(frozen=True)
class EvalConfig:
    noise_modes: tuple = ("ideal",)
    n_clips: int = 8
    duration_s: float = 10.0
    seed: int = 1000
    streaming: bool = True

    def __post_init__(self):
        for m in self.noise_modes:
            synth.noise_mode(m)


def estimate(nets, clip: synth.Clip, cfg=None, calib=None, streaming=True, dtype=np.float64):
    cfg = cfg or pipeline_config_of(nets)
    use_refine = "refine" in nets
    if streaming:
        sp = pl.StreamingPipeline(nets, clip.seq.beta, cfg, calib, dtype=dtype, use_refine=use_refine)
        return sp.run(clip.obs, clip.imu)
    missing = [n for n in ("trans", "ienet", "kenet", "fusion") if n not in nets]
    if missing:
        raise StageOrderError(f"missing networks {missing}")
    est, _ = pl.forward_all(nets, clip.obs, clip.imu, clip.seq.beta, cfg, calib, use_refine=use_refine)
    return est


def score(phi, T, seq) -> MetricReport:
    return evaluate_motion(phi, T, seq.phi, seq.trans, seq.beta, seq.contacts, seq.fps)


def evaluate(nets, eval_config: EvalConfig = EvalConfig(), motions=None, calib=None):
    """Per-noise-mode frame-weighted metric reports over held-out motions."""
    missing = [n for n in ("trans", "ienet", "kenet", "fusion") if n not in nets]
    if missing:
        raise StageOrderError(f"evaluation needs networks {missing}")
    if motions is None:
        motions = held_out_motions(eval_config.n_clips, eval_config.duration_s, eval_config.seed)
    cfg = pipeline_config_of(nets)
    out = {}
    for mode in eval_config.noise_modes:
        reps, w = [], []
        for i, seq in enumerate(motions):
            clip = observe(seq, mode, eval_config.seed * 7 + i, calib)
            est = estimate(nets, clip, cfg, calib, eval_config.streaming)
            reps.append(score(est.phi, est.T, seq))
            w.append(len(seq))
        out[mode] = mean_report(reps, w)
    return out


def report_text(reports):
    return "".join(r.to_text(prefix=f"{mode}.") for mode, r in reports.items())


def bench_inference(nets, n_frames=600, warmup=60, dtype=np.float32, seed=0):
    """Steady-state frames per second of the per-frame pipeline (assembly + five networks)."""
    clip = synth.synth_clip("walk-circle", max((n_frames + warmup) / synth.FPS, 1.0) + 0.1,
                            np.zeros(bm.N_BETA), seed)
    sp = pl.StreamingPipeline(nets, clip.seq.beta, pipeline_config_of(nets), dtype=dtype,
                              use_refine="refine" in nets)
    frames = [(clip.obs.frame(i), clip.imu.frame(i)) for i in range(warmup + n_frames)]
    for o, m in frames[:warmup]:
        sp.step(o, m)
    t0 = time.perf_counter()
    for o, m in frames[warmup:]:
        sp.step(o, m)
    dt = time.perf_counter() - t0
    return n_frames / dt
