"""Procedural ground truth and sensor synthesis.

Motion clips are built from root paths plus analytic two-bone leg IK so that
stance feet stay exactly planted; stereo detections, IMU readings and T-pose
point clouds are derived from the clip through the body model.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import body_model as bm
from . import so3
from .errors import ConfigError
from .stereo import StereoCalib, StereoObservation, in_view, project

FPS = 60.0
GRAVITY = np.array([0.0, 9.81, 0.0])
KINDS = ("walk-circle", "idle-sway", "squat-jump", "figure-eight")
CONTACT_STEP = 0.002
CONTACT_HEIGHT = 0.05


@dataclass
class MotionSequence:
    fps: float
    phi: np.ndarray       # [F, 24, 3]
    trans: np.ndarray     # [F, 3]
    beta: np.ndarray      # [10]
    contacts: np.ndarray  # [F, 2] in {0, 1}
    kind: str = ""
    seed: int = 0

    def __len__(self):
        return len(self.trans)

    @property
    def delta_trans(self):
        d = np.zeros_like(self.trans)
        d[1:] = self.trans[1:] - self.trans[:-1]
        return d

    def joint_set(self, template=None):
        return bm.fk(self.phi, self.beta, template)


@dataclass
class ImuFrame:
    rot: np.ndarray  # [..., 6, 3, 3] sensor-to-world
    acc: np.ndarray  # [..., 6, 3] specific force in the sensor frame

    def frame(self, i):
        return ImuFrame(self.rot[i], self.acc[i])

    def __len__(self):
        return len(self.acc)


@dataclass(frozen=True)
class NoiseSpec:
    keypoint_sigma_world: float = 0.0
    pixel_sigma: float = 0.0
    p3d_sigma: float = 0.0
    conf_dropout: float = 0.0
    imu_acc_sigma: float = 0.0
    imu_rot_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for f in ("keypoint_sigma_world", "pixel_sigma", "p3d_sigma", "conf_dropout",
                  "imu_acc_sigma", "imu_rot_sigma"):
            if getattr(self, f) < 0:
                raise ConfigError(f"{f} must be nonnegative")
        if self.conf_dropout > 1:
            raise ConfigError("conf_dropout is a probability")


NOISE_MODES = {
    "ideal": NoiseSpec(),
    "sigma-5": NoiseSpec(keypoint_sigma_world=0.05),
    "sigma-15": NoiseSpec(keypoint_sigma_world=0.15),
    "virtual-stereo": NoiseSpec(pixel_sigma=1.0, p3d_sigma=0.02, imu_acc_sigma=0.1, imu_rot_sigma=0.01),
}


def noise_mode(name, seed=0) -> NoiseSpec:
    if name not in NOISE_MODES:
        raise ConfigError(f"unknown noise mode {name!r}; choose from {sorted(NOISE_MODES)}")
    return replace(NOISE_MODES[name], seed=seed)


# ---------------------------------------------------------------------------
# pose assembly

def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _ry(a):
    return so3.exp_map(np.stack([np.zeros_like(a), a, np.zeros_like(a)], -1))


def _rx(a):
    return so3.exp_map(np.stack([a, np.zeros_like(a), np.zeros_like(a)], -1))


def _rz(a):
    return so3.exp_map(np.stack([np.zeros_like(a), np.zeros_like(a), a], -1))


def _leg_ik(R_root, T, hip_off, l1, l2, ankle, foot_yaw):
    """Analytic two-bone IK with the knee hinge orthogonal to the facing direction.

    Returns local rotations (hip, knee, ankle), each [F, 3, 3].
    """
    hip = T + np.einsum("fab,b->fa", R_root, hip_off)
    d = ankle - hip
    dist = np.linalg.norm(d, axis=-1)
    dhat = d / dist[:, None]
    dist = np.clip(dist, abs(l1 - l2) + 1e-6, 0.9999 * (l1 + l2))
    fwd = R_root[:, :, 2]
    a = _unit(np.cross(fwd, dhat))
    cos_a = np.clip((l1 * l1 + dist * dist - l2 * l2) / (2 * l1 * dist), -1.0, 1.0)
    alpha = np.arccos(cos_a)
    u = dhat * np.cos(alpha)[:, None] - np.cross(a, dhat) * np.sin(alpha)[:, None]
    knee = hip + l1 * u
    w = _unit(hip + dhat * dist[:, None] - knee)
    R1 = np.stack([a, -u, np.cross(a, -u)], axis=-1)
    R2 = np.stack([a, -w, np.cross(a, -w)], axis=-1)
    R_foot = _ry(foot_yaw)
    tr = lambda m: np.swapaxes(m, -1, -2)
    return tr(R_root) @ R1, tr(R1) @ R2, tr(R2) @ R_foot


@dataclass
class _Upper:
    spine: np.ndarray          # [F, 3] axis-angle shared by the 3 spine joints
    head: np.ndarray           # [F, 3]
    arm_down: np.ndarray       # [F, 2]
    arm_swing: np.ndarray      # [F, 2]
    elbow: np.ndarray          # [F, 2]


def _assemble(beta, T, R_root, ankles, foot_yaw, upper: _Upper):
    F = len(T)
    off = bm.bone_offsets(beta)
    l1 = float(np.linalg.norm(off[4]))
    l2 = float(np.linalg.norm(off[7]))
    local = np.tile(np.eye(3), (F, bm.N_JOINTS, 1, 1))
    local[:, 0] = R_root
    for side, (hip_j, knee_j, ankle_j) in enumerate(((1, 4, 7), (2, 5, 8))):
        h, k, a = _leg_ik(R_root, T, off[hip_j], l1, l2, ankles[:, side], foot_yaw[:, side])
        local[:, hip_j], local[:, knee_j], local[:, ankle_j] = h, k, a
    sp = so3.exp_map(upper.spine)
    local[:, 3] = local[:, 6] = local[:, 9] = sp
    hd = so3.exp_map(upper.head)
    local[:, 12] = local[:, 15] = hd
    local[:, 16] = _rx(-upper.arm_swing[:, 0]) @ _rz(-upper.arm_down[:, 0])
    local[:, 17] = _rx(-upper.arm_swing[:, 1]) @ _rz(upper.arm_down[:, 1])
    local[:, 18] = _ry(-upper.elbow[:, 0])
    local[:, 19] = _ry(upper.elbow[:, 1])
    return so3.log_map(local)


def _standing_root_height(beta, reach):
    """Pelvis height that keeps the legs slightly bent for a horizontal reach."""
    off = bm.bone_offsets(beta)
    L = float(np.linalg.norm(off[4]) + np.linalg.norm(off[7]))
    return -off[1][1] + np.sqrt((0.985 * L) ** 2 - reach ** 2)


def _lateral(psi):
    # body left axis for heading psi (forward = (sin psi, 0, cos psi))
    return np.stack([np.cos(psi), np.zeros_like(psi), -np.sin(psi)], -1)


class _Path:
    """Arc-length parametrised planar path in the x-z plane."""

    def __init__(self, pts):
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        self.pts = pts
        self.length = self.s[-1]

    def __call__(self, s):
        s = np.mod(s, self.length)
        x = np.interp(s, self.s, self.pts[:, 0])
        z = np.interp(s, self.s, self.pts[:, 1])
        eps = 1e-3
        s2 = np.mod(s + eps, self.length)
        s1 = np.mod(s - eps, self.length)
        dx = np.interp(s2, self.s, self.pts[:, 0]) - np.interp(s1, self.s, self.pts[:, 0])
        dz = np.interp(s2, self.s, self.pts[:, 1]) - np.interp(s1, self.s, self.pts[:, 1])
        return np.stack([x, z], -1), np.arctan2(dx, dz)


def _circle_path(rng, radius=2.0, center=(0.0, 5.0)):
    th = np.linspace(0.0, 2 * np.pi, 4097)
    if rng.random() < 0.5:
        th = -th
    th = th + rng.uniform(0, 2 * np.pi)
    pts = np.stack([center[0] + radius * np.sin(th), center[1] + radius * np.cos(th)], -1)
    return _Path(pts)


def _figure_eight_path(rng, A=2.0, center=(0.0, 5.0)):
    th = np.linspace(0.0, 2 * np.pi, 8193)
    if rng.random() < 0.5:
        th = -th
    pts = np.stack([center[0] + A * np.sin(th), center[1] + 0.5 * A * np.sin(2 * th)], -1)
    return _Path(pts)


def _walk(beta, n, rng, path: _Path):
    t = np.arange(n) / FPS
    v = rng.uniform(0.6, 0.85)
    Tc = rng.uniform(0.95, 1.15)
    half = 0.3 * Tc
    lift = rng.uniform(0.05, 0.08)
    bob = 0.01
    phase0 = rng.uniform(0, Tc)
    s0 = rng.uniform(0, path.length)
    off = bm.bone_offsets(beta)
    w = abs(off[1][0])
    H = _standing_root_height(beta, v * half + 0.04) - bob

    xz, psi = path(s0 + v * t)
    lat = _lateral(psi)
    T = np.stack([xz[:, 0], np.full(n, H), xz[:, 1]], -1)
    T[:, 1] += bob * np.cos(4 * np.pi * (t - phase0) / Tc)
    T += 0.01 * np.sin(2 * np.pi * (t - phase0) / Tc)[:, None] * lat
    R_root = _ry(psi) @ _rz(0.03 * np.sin(2 * np.pi * (t - phase0) / Tc))

    ankles = np.zeros((n, 2, 3))
    foot_yaw = np.zeros((n, 2))
    for side, sign, shift in ((0, 1.0, 0.0), (1, -1.0, 0.5 * Tc)):
        base = phase0 + shift
        k = np.floor((t - base) / Tc + 0.5)
        kmin, kmax = int(k.min()) - 1, int(k.max()) + 2
        ks = np.arange(kmin, kmax + 1)
        centers = base + ks * Tc
        pxz, ppsi = path(s0 + v * centers)
        plant = np.stack([pxz[:, 0], np.zeros(len(ks)), pxz[:, 1]], -1) + sign * w * _lateral(ppsi)
        ppsi = np.unwrap(ppsi)
        for f in range(n):
            i = int(k[f]) - kmin
            dt = t[f] - centers[i]
            if abs(dt) <= half:
                ankles[f, side] = plant[i]
                foot_yaw[f, side] = ppsi[i]
            else:
                j0 = i if dt > 0 else i - 1
                tau = (t[f] - (centers[j0] + half)) / (Tc - 2 * half)
                sm = tau * tau * (3 - 2 * tau)
                ankles[f, side] = plant[j0] + sm * (plant[j0 + 1] - plant[j0])
                ankles[f, side, 1] = lift * np.sin(np.pi * tau)
                foot_yaw[f, side] = ppsi[j0] + sm * (ppsi[j0 + 1] - ppsi[j0])

    gait = 2 * np.pi * (t - phase0) / Tc
    swing_amp = rng.uniform(0.2, 0.4)
    down = rng.uniform(1.2, 1.4)
    elbow = rng.uniform(0.2, 0.5)
    upper = _Upper(
        spine=np.stack([np.full(n, 0.03), -0.04 * np.sin(gait), 0.01 * np.sin(gait)], -1),
        head=np.stack([0.05 * np.sin(0.7 * t), 0.1 * np.sin(0.3 * t + 1.0), np.zeros(n)], -1),
        arm_down=np.full((n, 2), down),
        # arms swing opposite to the same-side leg
        arm_swing=np.stack([-swing_amp * np.cos(gait), swing_amp * np.cos(gait)], -1),
        elbow=np.stack([elbow + 0.15 * (1 - np.cos(gait)), elbow + 0.15 * (1 + np.cos(gait))], -1),
    )
    return T, R_root, ankles, foot_yaw, upper


def _idle(beta, n, rng):
    t = np.arange(n) / FPS
    off = bm.bone_offsets(beta)
    w = abs(off[1][0])
    H = _standing_root_height(beta, 0.0) - 0.01
    psi0 = np.pi + rng.uniform(-0.6, 0.6)
    base = np.array([rng.uniform(-1.0, 1.0), H, rng.uniform(3.5, 6.0)])
    psi = np.full(n, psi0)
    lat = _lateral(psi)
    p1, p2 = rng.uniform(2.5, 4.0), rng.uniform(1.5, 3.0)
    T = base + 0.008 * np.sin(2 * np.pi * t / p1)[:, None] * lat
    T[:, 1] += 0.004 * np.sin(2 * np.pi * t / p2)
    R_root = _ry(psi) @ _rz(0.02 * np.sin(2 * np.pi * t / p1))
    ground = np.array([base[0], 0.0, base[2]])
    ankles = np.stack([ground + w * lat[0], ground - w * lat[0]], 0)[None].repeat(n, 0)
    foot_yaw = np.full((n, 2), psi0)
    down = rng.uniform(1.25, 1.45)
    upper = _Upper(
        spine=np.stack([0.03 * np.sin(2 * np.pi * t / p2), 0.04 * np.sin(2 * np.pi * t / p1), 0.05 * np.sin(0.4 * t)], -1),
        head=np.stack([0.1 * np.sin(0.5 * t), 0.35 * np.sin(0.25 * t + rng.uniform(0, 6)), np.zeros(n)], -1),
        arm_down=np.stack([down + 0.05 * np.sin(0.6 * t), down + 0.05 * np.sin(0.6 * t + 1.0)], -1),
        arm_swing=np.stack([0.08 * np.sin(0.8 * t), 0.08 * np.sin(0.8 * t + 2.0)], -1),
        elbow=np.full((n, 2), rng.uniform(0.1, 0.4)),
    )
    return T, R_root, ankles, foot_yaw, upper


def _squat_jump_profile(n, rng):
    """Root height offset, flight mask and an arm-raise signal per frame."""
    g = GRAVITY[1]
    t = np.arange(n) / FPS
    y = np.zeros(n)
    flight = np.zeros(n, dtype=bool)
    arms = np.zeros(n)
    cyc_start = 0.0
    while cyc_start < t[-1] + 1e-9:
        stand = rng.uniform(0.5, 0.8)
        down_t = rng.uniform(0.45, 0.6)
        depth = rng.uniform(0.15, 0.22)
        v0 = rng.uniform(1.3, 1.7)
        push_t = 2 * depth / v0
        acc = v0 / push_t
        fly_t = 2 * v0 / g
        land_t = push_t
        rec_t = rng.uniform(0.5, 0.7)
        marks = np.cumsum([cyc_start, stand, down_t, push_t, fly_t, land_t, rec_t])
        for f in np.nonzero((t >= marks[0]) & (t < marks[-1]))[0]:
            tt = t[f]
            if tt < marks[1]:
                y[f], arms[f] = 0.0, 0.0
            elif tt < marks[2]:
                s = (tt - marks[1]) / down_t
                y[f] = -depth * 0.5 * (1 - np.cos(np.pi * s))
                arms[f] = -0.5 * s
            elif tt < marks[3]:
                s = tt - marks[2]
                y[f] = -depth + 0.5 * acc * s * s
                arms[f] = -0.5 + 2.0 * s / push_t
            elif tt < marks[4]:
                s = tt - marks[3]
                y[f] = v0 * s - 0.5 * g * s * s
                flight[f] = True
                arms[f] = 1.5
            elif tt < marks[5]:
                s = tt - marks[4]
                y[f] = -v0 * s + 0.5 * acc * s * s
                arms[f] = 1.5 - 1.5 * s / land_t
            else:
                s = (tt - marks[5]) / rec_t
                y[f] = -depth * 0.5 * (1 + np.cos(np.pi * s))
                arms[f] = 0.0
        cyc_start = marks[-1]
    return y, flight, arms


def _squat_jump(beta, n, rng):
    t = np.arange(n) / FPS
    off = bm.bone_offsets(beta)
    w = abs(off[1][0])
    H = _standing_root_height(beta, 0.0) - 0.01
    psi0 = np.pi + rng.uniform(-0.5, 0.5)
    base = np.array([rng.uniform(-1.0, 1.0), H, rng.uniform(3.5, 5.5)])
    dy, flight, arms = _squat_jump_profile(n, rng)
    T = np.tile(base, (n, 1))
    T[:, 1] += dy
    psi = np.full(n, psi0)
    lat = _lateral(psi)
    ground = np.array([base[0], 0.0, base[2]])
    ankles = np.stack([ground + w * lat[0], ground - w * lat[0]], 0)[None].repeat(n, 0).copy()
    lift = np.where(flight, dy, 0.0)
    ankles[:, :, 1] += lift[:, None]
    R_root = _ry(psi)
    down = rng.uniform(1.2, 1.4)
    lean = np.clip(-dy, 0.0, None) * 1.5
    upper = _Upper(
        spine=np.stack([lean, np.zeros(n), np.zeros(n)], -1),
        head=np.stack([-0.5 * lean, np.zeros(n), np.zeros(n)], -1),
        arm_down=np.full((n, 2), down),
        arm_swing=np.stack([arms, arms], -1),
        elbow=np.full((n, 2), 0.3),
    )
    return T, R_root, ankles, foot_yaw_const(psi0, n), upper


def foot_yaw_const(psi, n):
    return np.full((n, 2), psi)


def generate_motion(kind, duration_s, beta, seed, fps=FPS) -> MotionSequence:
    if kind not in KINDS:
        raise ConfigError(f"unknown motion kind {kind!r}; choose from {', '.join(KINDS)}")
    if duration_s < 1.0:
        raise ConfigError("duration must be at least 1 s")
    if fps != FPS:
        raise ConfigError("only 60 fps synthesis is supported")
    beta = np.asarray(beta, dtype=np.float64).copy()
    n = int(round(duration_s * fps))
    rng = np.random.default_rng(seed)
    if kind == "walk-circle":
        parts = _walk(beta, n, rng, _circle_path(rng))
    elif kind == "figure-eight":
        parts = _walk(beta, n, rng, _figure_eight_path(rng))
    elif kind == "idle-sway":
        parts = _idle(beta, n, rng)
    else:
        parts = _squat_jump(beta, n, rng)
    T, R_root, ankles, foot_yaw, upper = parts
    phi = _assemble(beta, T, R_root, ankles, foot_yaw, upper)
    seq = MotionSequence(fps=fps, phi=phi, trans=T, beta=beta,
                         contacts=np.zeros((n, 2)), kind=kind, seed=seed)
    seq.contacts = label_contacts(seq)
    return seq


def foot_world(seq: MotionSequence, template=None):
    js = bm.fk(seq.phi, seq.beta, template)
    return bm.feet(js, template) + seq.trans[:, None, :]


def label_contacts(seq: MotionSequence):
    """1 where the ankle moved < 2 mm over the frame and sits < 5 cm above the floor."""
    feet = foot_world(seq)
    step = np.zeros(feet.shape[:2])
    if len(feet) > 1:
        d = np.linalg.norm(np.diff(feet, axis=0), axis=-1)
        step[1:] = d
        step[0] = d[0]
    return ((step < CONTACT_STEP) & (feet[..., 1] < CONTACT_HEIGHT)).astype(np.float64)


# ---------------------------------------------------------------------------
# sensors

def world_keypoints(seq: MotionSequence, template=None):
    js = bm.fk(seq.phi, seq.beta, template)
    rel = bm.regress_coco(js, template)
    return rel, rel + seq.trans[:, None, :]


def synth_stereo(seq: MotionSequence, calib: StereoCalib, noise: NoiseSpec) -> StereoObservation:
    """Paired 2D/3D detections for every frame.

    World-noise mode perturbs the 3D keypoints before projection, so the
    stereo reconstruction returns the perturbed points exactly.
    """
    rng = np.random.default_rng(noise.seed)
    rel, world = world_keypoints(seq)
    F = len(seq)
    if noise.keypoint_sigma_world > 0:
        world = world + rng.normal(0.0, noise.keypoint_sigma_world, size=world.shape)
    vis = in_view(calib, world)
    safe = np.where(vis[..., None], world, np.array([0.0, 0.0, 1.0]))
    uv_l = project(calib, "left", safe)
    uv_r = project(calib, "right", safe)
    if noise.pixel_sigma > 0:
        uv_l = uv_l + rng.normal(0.0, noise.pixel_sigma, size=uv_l.shape)
        uv_r = uv_r + rng.normal(0.0, noise.pixel_sigma, size=uv_r.shape)
    p3d_l, p3d_r = rel.copy(), rel.copy()
    if noise.p3d_sigma > 0:
        p3d_l = p3d_l + rng.normal(0.0, noise.p3d_sigma, size=rel.shape)
        p3d_r = p3d_r + rng.normal(0.0, noise.p3d_sigma, size=rel.shape)
    conf_l = np.ones((F, bm.N_COCO))
    conf_r = np.ones((F, bm.N_COCO))
    if noise.conf_dropout > 0:
        conf_l[rng.random((F, bm.N_COCO)) < noise.conf_dropout] = 0.0
        conf_r[rng.random((F, bm.N_COCO)) < noise.conf_dropout] = 0.0
    conf_l = np.where(vis, conf_l, 0.0)
    conf_r = np.where(vis, conf_r, 0.0)
    uv_l = np.where(vis[..., None], uv_l, 0.0)
    uv_r = np.where(vis[..., None], uv_r, 0.0)
    return StereoObservation(uv_l, uv_r, p3d_l, p3d_r, conf_l, conf_r)


def second_difference(p, fps):
    """Central second difference along axis 0; one-sided at both ends."""
    acc = np.empty_like(p)
    acc[1:-1] = p[2:] - 2 * p[1:-1] + p[:-2]
    acc[0] = p[2] - 2 * p[1] + p[0]
    acc[-1] = p[-1] - 2 * p[-2] + p[-3]
    return acc * fps * fps


def synth_imu(seq: MotionSequence, noise: NoiseSpec) -> ImuFrame:
    if len(seq) < 3:
        raise ConfigError("IMU synthesis needs at least 3 frames")
    rng = np.random.default_rng(noise.seed + 7919)
    js = bm.fk(seq.phi, seq.beta)
    R, p = bm.mount_frames(js)
    p = p + seq.trans[:, None, :]
    acc_w = second_difference(p, seq.fps) + GRAVITY
    acc = np.einsum("fsba,fsb->fsa", R, acc_w)  # R^T (a + g)
    if noise.imu_acc_sigma > 0:
        acc = acc + rng.normal(0.0, noise.imu_acc_sigma, size=acc.shape)
    if noise.imu_rot_sigma > 0:
        R = R @ so3.exp_map(rng.normal(0.0, noise.imu_rot_sigma, size=R.shape[:-2] + (3,)))
    return ImuFrame(rot=R, acc=acc)


@dataclass
class Clip:
    seq: MotionSequence
    obs: StereoObservation
    imu: ImuFrame


def synth_clip(kind, duration_s, beta, seed, calib=None, noise: NoiseSpec | None = None) -> Clip:
    calib = calib or StereoCalib()
    noise = noise or NoiseSpec(seed=seed)
    seq = generate_motion(kind, duration_s, beta, seed)
    return Clip(seq, synth_stereo(seq, calib, noise), synth_imu(seq, noise))


def random_beta(rng, max_norm=2.0):
    """Shape vector with uniform direction and norm uniform in [0, max_norm]."""
    d = rng.normal(size=bm.N_BETA)
    return d / np.linalg.norm(d) * rng.uniform(0.0, max_norm)


# ---------------------------------------------------------------------------
# T-pose scan

TPOSE_POSITION = np.array([0.0, 0.0, 3.0])
TPOSE_YAW = np.pi


def tpose_placement(beta, yaw=TPOSE_YAW, position=TPOSE_POSITION):
    """Rotation and root translation placing the zero pose on the floor in front of the rig."""
    t = np.array(position, dtype=np.float64)
    t[1] = bm.rest_ankle_drop(beta)
    return _ry(np.array(yaw)), t


def synth_tpose_cloud(beta, noise: NoiseSpec | None = None, n_points=20000, jitter=0.005,
                      yaw=TPOSE_YAW, position=TPOSE_POSITION):
    """Point cloud around the posed vertices plus the 17-point skeleton, in the world frame."""
    noise = noise or NoiseSpec()
    rng = np.random.default_rng(noise.seed)
    beta = np.asarray(beta, dtype=np.float64)
    R, t = tpose_placement(beta, yaw, position)
    zero = np.zeros((bm.N_JOINTS, 3))
    js = bm.fk(zero, beta)
    verts = bm.vertices_from(js, beta) @ R.T + t
    idx = rng.integers(0, len(verts), size=n_points)
    cloud = verts[idx] + rng.normal(0.0, jitter, size=(n_points, 3))
    skel = bm.regress_coco(js) @ R.T + t
    if noise.keypoint_sigma_world > 0:
        skel = skel + rng.normal(0.0, noise.keypoint_sigma_world, size=skel.shape)
    return cloud, skel
