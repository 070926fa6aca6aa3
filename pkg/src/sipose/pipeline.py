"""Input assemblies, output decoding and the five-network inference pipeline.

Frames of reference: p_C and T live in the world (left lens) frame. When the
canonical switch is on, keypoints and IMU quantities are rotated into the
frame of the pelvis sensor, the encoders predict joints of the zero-shape
body in that frame, and the root rotation is predicted relative to the
pelvis sensor.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import body_model as bm
from . import so3
from .autodiff import minmax_normalize, positional_encode
from .errors import BadImuFrame, ConfigError, StageOrderError
from .nets import NetSpec, SequenceNet
from .stereo import MetricKeypoints, StereoCalib, StereoObservation, reconstruct_world
from .synth import ImuFrame

TRANS_KEYPOINTS = (0, 1, 2, 3, 4, 5, 6, 11, 12)
NET_NAMES = ("trans", "ienet", "kenet", "fusion", "refine")
PE_WIDTH = 4


@dataclass(frozen=True)
class Workspace:
    lo: tuple = (-3.5, -0.5, 1.0)
    hi: tuple = (3.5, 2.5, 9.0)

    def __post_init__(self):
        if np.any(np.asarray(self.hi) - np.asarray(self.lo) <= 0):
            raise ConfigError("workspace box is degenerate")

    @property
    def half_extent(self):
        return 0.5 * (np.asarray(self.hi) - np.asarray(self.lo))


@dataclass(frozen=True)
class PipelineConfig:
    hidden: int = 64
    layers: int = 2
    pe: bool = True
    canonical: bool = True
    use_shape: bool = True
    workspace: Workspace = field(default_factory=Workspace)
    acc_range: float = 30.0
    joint_range: float = 1.5
    dT_range: float = 0.05
    T_step: float = 0.1     # metres per unit of the fusion/refine translation residual
    dT_step: float = 0.02   # metres per unit of any ΔT output

    def flags(self):
        out = []
        if not self.pe:
            out.append("no_pe")
        if not self.canonical:
            out.append("no_canonical")
        if not self.use_shape:
            out.append("no_shape")
        return tuple(out)

    def input_dims(self):
        w = 2 * PE_WIDTH if self.pe else 1
        imu = 18 * w + 36
        return {
            "trans": len(TRANS_KEYPOINTS) * (3 * w + 1),
            "ienet": imu,
            "kenet": bm.N_COCO * (3 * w + 1),
            "fusion": 72 * w * 2 + bm.N_COCO + bm.N_BETA + 3 * w * 2 + imu,
            "refine": 72 + 3 * w * 2 + 2 + bm.N_BETA,
        }


OUTPUT_DIMS = {"trans": 6, "ienet": 72, "kenet": 72, "fusion": 80, "refine": 80}


# networks that see the shape vector; the shape flag is only stamped on these
SHAPE_NETS = ("fusion", "refine")


def net_specs(cfg: PipelineConfig):
    d = cfg.input_dims()
    out = {}
    for n in NET_NAMES:
        flags = tuple(f for f in cfg.flags() if f != "no_shape" or n in SHAPE_NETS)
        out[n] = NetSpec(n, d[n], OUTPUT_DIMS[n], cfg.hidden, cfg.layers, flags)
    return out


def build_nets(cfg: PipelineConfig, seed=0):
    return {n: SequenceNet(s, seed=seed + i) for i, (n, s) in enumerate(net_specs(cfg).items())}


def save_nets(nets, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return {n: net.save(directory / f"{n}.ckpt") for n, net in nets.items()}


def load_nets(directory, names=NET_NAMES):
    directory = Path(directory)
    out = {}
    for n in names:
        p = directory / f"{n}.ckpt"
        if not p.exists():
            raise StageOrderError(f"missing checkpoint {p}")
        out[n] = SequenceNet.load(p)
    return out


# ---------------------------------------------------------------------------
# feature assembly (numpy, batched over leading axes)

def unit_scale(x, lo, hi):
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    return np.clip((np.asarray(x, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


def _enc(x01, pe):
    return positional_encode(x01, PE_WIDTH) if pe else np.asarray(x01, dtype=np.float64)


def _with_conf(enc, conf):
    # per keypoint: encoded coordinates followed by its confidence
    out = np.concatenate([enc, np.asarray(conf, dtype=np.float64)[..., None]], axis=-1)
    return out.reshape(out.shape[:-2] + (-1,))


def assemble_trans_input(mk: MetricKeypoints, workspace: Workspace = Workspace(), pe=True):
    sel = list(TRANS_KEYPOINTS)
    p = unit_scale(mk.p_C[..., sel, :], workspace.lo, workspace.hi)
    return _with_conf(_enc(p, pe), mk.conf_C[..., sel])


def pelvis_rotation(imu: ImuFrame, tol=1e-3):
    R = np.asarray(imu.rot[..., 0, :, :], dtype=np.float64)
    err = np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)).max(axis=(-1, -2))
    if np.any(err > tol) or not np.all(np.isfinite(R)):
        raise BadImuFrame("pelvis rotation is not orthonormal")
    return R


def assemble_imu_input(imu: ImuFrame, acc_range=30.0, pe=True):
    R_p = pelvis_rotation(imu)
    R_pT = np.swapaxes(R_p, -1, -2)[..., None, :, :]
    rel = R_pT @ imu.rot
    acc_w = np.einsum("...sab,...sb->...sa", imu.rot, imu.acc)
    acc_r = np.einsum("...sab,...sb->...sa", R_pT, acc_w)
    a01 = np.clip((acc_r / acc_range + 1.0) * 0.5, 0.0, 1.0)
    a = _enc(a01.reshape(a01.shape[:-2] + (18,)), pe)
    r6 = so3.to6d(rel).reshape(rel.shape[:-3] + (36,))
    return np.concatenate([a, r6], axis=-1)


def assemble_kenet_input(p_R, conf_C, R_pelvis=None, pe=True, canonical=True, joint_range=1.5):
    """Per-frame min-max normalised keypoints, encoded, each followed by its confidence.

    With ``R_pelvis`` the keypoints are first expressed in the pelvis frame.
    The non-canonical variant uses a fixed metric range instead of min-max.
    """
    p = np.asarray(p_R, dtype=np.float64)
    if canonical:
        if R_pelvis is not None:
            p = p @ np.asarray(R_pelvis)  # rows are R^T p
        p01, _ = minmax_normalize(p)
    else:
        p01 = unit_scale(p, -joint_range, joint_range)
    return _with_conf(_enc(p01, pe), conf_C)


def assemble_fusion_input(J_imu, J_vis, conf_C, beta, T, dT, x_imu, cfg: PipelineConfig):
    lead = np.shape(J_imu)[:-1]
    r, dr = cfg.joint_range, cfg.dT_range
    beta = np.broadcast_to(np.asarray(beta, dtype=np.float64), lead + (bm.N_BETA,))
    if not cfg.use_shape:
        beta = np.zeros_like(beta)
    ws = cfg.workspace
    parts = [
        _enc(unit_scale(J_imu, -r, r), cfg.pe),
        _enc(unit_scale(J_vis, -r, r), cfg.pe),
        np.asarray(conf_C, dtype=np.float64),
        beta,
        _enc(unit_scale(T, ws.lo, ws.hi), cfg.pe),
        _enc(unit_scale(dT, -dr, dr), cfg.pe),
        np.asarray(x_imu, dtype=np.float64),
    ]
    return np.concatenate(parts, axis=-1)


def assemble_refine_input(phi72, T, dT, q, beta, cfg: PipelineConfig):
    lead = np.shape(phi72)[:-1]
    beta = np.broadcast_to(np.asarray(beta, dtype=np.float64), lead + (bm.N_BETA,))
    if not cfg.use_shape:
        beta = np.zeros_like(beta)
    ws, dr = cfg.workspace, cfg.dT_range
    return np.concatenate([
        np.asarray(phi72, dtype=np.float64),
        _enc(unit_scale(T, ws.lo, ws.hi), cfg.pe),
        _enc(unit_scale(dT, -dr, dr), cfg.pe),
        np.asarray(q, dtype=np.float64),
        beta,
    ], axis=-1)


# ---------------------------------------------------------------------------
# output decoding

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decode_trans(out, cfg: PipelineConfig):
    return out[..., :3] * cfg.workspace.half_extent, out[..., 3:6] * cfg.dT_step


@dataclass
class HeadOut:
    """Fusion/refine head in pre-sigmoid form; works on arrays or tensors."""
    phi: object     # [..., 72] canonical axis-angles
    T: object
    dT: object
    q_logit: object


def decode_head(out, base: HeadOut | None, T0, dT0, cfg: PipelineConfig) -> HeadOut:
    """Fusion decodes onto the TransNet estimate; RefineNet decodes onto the fusion result."""
    T_res = out[..., 72:75] * cfg.T_step
    dT_res = out[..., 75:78] * cfg.dT_step
    if base is None:
        return HeadOut(out[..., :72], T_res + T0, dT_res + dT0, out[..., 78:80])
    return HeadOut(out[..., :72] + base.phi, T_res + base.T, dT_res + base.dT, out[..., 78:80] + base.q_logit)


def world_phi(phi_canon, R_pelvis, canonical=True):
    """Replace the root entry by its world rotation R_pelvis * exp(phi_root)."""
    phi = np.array(phi_canon, dtype=np.float64).reshape(np.shape(phi_canon)[:-1] + (bm.N_JOINTS, 3))
    if canonical:
        phi[..., 0, :] = so3.log_map(np.asarray(R_pelvis) @ so3.exp_map(phi[..., 0, :]))
    return phi


def canonical_phi(phi_world, R_pelvis):
    phi = np.array(phi_world, dtype=np.float64)
    phi[..., 0, :] = so3.log_map(np.swapaxes(np.asarray(R_pelvis), -1, -2) @ so3.exp_map(phi[..., 0, :]))
    return phi


def canonical_joints(phi_world, beta, R_pelvis=None, canonical=True):
    """Encoder targets: zero-shape joints in the pelvis frame, or metric joints in world orientation."""
    phi = np.array(phi_world, dtype=np.float64)
    if canonical:
        phi = canonical_phi(phi, R_pelvis)
        return bm.fk(phi, np.zeros(bm.N_BETA)).joints
    return bm.fk(phi, beta).joints


# ---------------------------------------------------------------------------
# whole-sequence inference

@dataclass
class PoseEstimate:
    phi: np.ndarray        # [F, 24, 3] world root rotation + local joint rotations
    T: np.ndarray          # [F, 3]
    dT: np.ndarray         # [F, 3]
    q: np.ndarray          # [F, 2]
    phi_canon: np.ndarray | None = None


@dataclass
class Intermediates:
    T0: np.ndarray
    dT0: np.ndarray
    J_imu: np.ndarray
    J_vis: np.ndarray
    x_imu: np.ndarray
    fusion: HeadOut | None = None


def metric_inputs(obs, calib: StereoCalib | None = None):
    if isinstance(obs, MetricKeypoints):
        return obs
    return reconstruct_world(calib or StereoCalib(), obs)


def stage1_features(nets, mk: MetricKeypoints, imu: ImuFrame, cfg: PipelineConfig) -> Intermediates:
    R_p = pelvis_rotation(imu)
    x_t = assemble_trans_input(mk, cfg.workspace, cfg.pe)
    x_i = assemble_imu_input(imu, cfg.acc_range, cfg.pe)
    x_k = assemble_kenet_input(mk.p_R, mk.conf_C, R_p if cfg.canonical else None, cfg.pe,
                               cfg.canonical, cfg.joint_range)
    T0, dT0 = decode_trans(nets["trans"].forward(x_t), cfg)
    return Intermediates(T0, dT0, nets["ienet"].forward(x_i), nets["kenet"].forward(x_k), x_i)


def fusion_head(nets, inter: Intermediates, mk, beta, cfg):
    x_f = assemble_fusion_input(inter.J_imu, inter.J_vis, mk.conf_C, beta, inter.T0, inter.dT0,
                                inter.x_imu, cfg)
    return decode_head(nets["fusion"].forward(x_f), None, inter.T0, inter.dT0, cfg)


def refine_head(nets, fused: HeadOut, beta, cfg):
    x_r = assemble_refine_input(fused.phi, fused.T, fused.dT, _sigmoid(fused.q_logit), beta, cfg)
    return decode_head(nets["refine"].forward(x_r), fused, None, None, cfg)


def forward_all(nets, obs, imu: ImuFrame, beta, cfg: PipelineConfig = PipelineConfig(),
                calib=None, use_refine=True):
    """Run all five networks over a whole sequence from a zero state."""
    mk = metric_inputs(obs, calib)
    inter = stage1_features(nets, mk, imu, cfg)
    head = fusion_head(nets, inter, mk, beta, cfg)
    inter.fusion = head
    if use_refine:
        head = refine_head(nets, head, beta, cfg)
    R_p = pelvis_rotation(imu)
    phi = world_phi(head.phi, R_p, cfg.canonical)
    est = PoseEstimate(phi=phi, T=np.asarray(head.T), dT=np.asarray(head.dT), q=_sigmoid(head.q_logit),
                       phi_canon=np.asarray(head.phi).reshape(phi.shape))
    return est, inter


class StreamingPipeline:
    """Per-frame inference from stereo detections and IMU readings."""

    def __init__(self, nets, beta, cfg: PipelineConfig = PipelineConfig(), calib=None,
                 dtype=np.float64, use_refine=True):
        self.cfg = cfg
        self.calib = calib or StereoCalib()
        self.beta = np.asarray(beta, dtype=np.float64)
        self.use_refine = use_refine
        self.streams = {n: nets[n].stream(dtype) for n in NET_NAMES if n in nets}
        if use_refine and "refine" not in self.streams:
            raise StageOrderError("refine network missing")

    def reset(self):
        for s in self.streams.values():
            s.reset()

    def step(self, obs, imu: ImuFrame):
        """One frame: ``obs`` is a single-frame StereoObservation or MetricKeypoints."""
        cfg = self.cfg
        mk = metric_inputs(obs, self.calib)
        R_p = pelvis_rotation(imu)
        x_t = assemble_trans_input(mk, cfg.workspace, cfg.pe)
        x_i = assemble_imu_input(imu, cfg.acc_range, cfg.pe)
        x_k = assemble_kenet_input(mk.p_R, mk.conf_C, R_p if cfg.canonical else None, cfg.pe,
                                   cfg.canonical, cfg.joint_range)
        T0, dT0 = decode_trans(self.streams["trans"].step(x_t).astype(np.float64), cfg)
        J_imu = self.streams["ienet"].step(x_i).astype(np.float64)
        J_vis = self.streams["kenet"].step(x_k).astype(np.float64)
        x_f = assemble_fusion_input(J_imu, J_vis, mk.conf_C, self.beta, T0, dT0, x_i, cfg)
        head = decode_head(self.streams["fusion"].step(x_f).astype(np.float64), None, T0, dT0, cfg)
        if self.use_refine:
            x_r = assemble_refine_input(head.phi, head.T, head.dT, _sigmoid(head.q_logit), self.beta, cfg)
            head = decode_head(self.streams["refine"].step(x_r).astype(np.float64), head, None, None, cfg)
        phi = world_phi(head.phi, R_p, cfg.canonical)
        return PoseEstimate(phi=phi, T=head.T, dT=head.dT, q=_sigmoid(head.q_logit),
                            phi_canon=head.phi.reshape(phi.shape))

    def run(self, obs: StereoObservation, imu: ImuFrame):
        outs = [self.step(obs.frame(i), imu.frame(i)) for i in range(len(imu))]
        return PoseEstimate(
            phi=np.stack([o.phi for o in outs]), T=np.stack([o.T for o in outs]),
            dT=np.stack([o.dT for o in outs]), q=np.stack([o.q for o in outs]),
            phi_canon=np.stack([o.phi_canon for o in outs]))
