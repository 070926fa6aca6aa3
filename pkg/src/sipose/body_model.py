"""Seeded 24-joint surrogate body: forward kinematics, rigid vertices, COCO regressor.

The template is generated from ``data/base_offsets.txt`` and a fixed seed and
stored as ``data/template.txt``. Bone offsets are affine in the shape vector:
each shape direction is a multiple of the rest offset, so bone lengths stay
affine in every shape component.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import so3
from .autodiff import Tensor

DATA_DIR = Path(__file__).parent / "data"
TEMPLATE_PATH = DATA_DIR / "template.txt"
BASE_PATH = DATA_DIR / "base_offsets.txt"
TEMPLATE_SEED = 0x5EEDB0D1
N_JOINTS = 24
N_BETA = 10
N_COCO = 17

JOINT_NAMES = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hand", "right_hand",
]
COCO_NAMES = [
    "nose", "left_eye", "right_eye", "left_ear", "right_ear", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hip", "right_hip", "left_knee", "right_knee", "left_ankle", "right_ankle",
]


@dataclass(frozen=True)
class BodyTemplate:
    parents: np.ndarray        # [24] int, parents[0] == -1
    rest_offsets: np.ndarray   # [24, 3]
    shape_scales: np.ndarray   # [24, 10], relative bone scale per unit beta
    shape_dirs: np.ndarray     # [24, 3, 10]
    vertex_anchors: np.ndarray  # [384, 3] local points
    anchor_joint: np.ndarray   # [384] int
    coco_joint: np.ndarray     # [17] int
    coco_offset: np.ndarray    # [17, 3]
    foot_joints: np.ndarray    # [2] (left, right ankle)
    mount_joints: np.ndarray   # [6]
    checksum: str

    @property
    def n_vertices(self):
        return len(self.anchor_joint)


@dataclass
class JointSet:
    joints: np.ndarray   # [..., 24, 3]
    globals: np.ndarray  # [..., 24, 3, 3]


# ---------------------------------------------------------------------------
# template generation and io

def _parse_base(path=BASE_PATH):
    joints, coco, meta = [], [], {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "coco":
            coco.append((int(tok[3]), [float(t) for t in tok[4:7]]))
        elif tok[0][0].isdigit():
            joints.append(tok)
        else:
            meta[tok[0]] = tok[1:]
    return joints, coco, meta


def generate_template_text(seed=TEMPLATE_SEED, base_path=BASE_PATH) -> str:
    """Build the template file contents; bit-exact for a given seed and base table."""
    rng = np.random.default_rng(seed)
    joints, coco, meta = _parse_base(base_path)
    parents = np.array([int(t[2]) for t in joints])
    rest = np.array([[float(v) for v in t[3:6]] for t in joints])
    region_of = [t[6] for t in joints]
    seg0 = np.array([[float(v) for v in t[7:10]] for t in joints])
    seg1 = np.array([[float(v) for v in t[10:13]] for t in joints])
    radius = np.array([float(t[13]) for t in joints])

    regions = meta["regions"]
    lo, hi = (float(v) for v in meta["regional_range"])
    limb = {int(v) for v in meta["limb_joints"]}
    scales = np.zeros((N_JOINTS, N_BETA))
    scales[:, 0] = float(meta["stature_scale"][0])
    for j in limb:
        scales[j, 1] = float(meta["limb_scale"][0])
    region_coef = rng.uniform(lo, hi, size=len(regions))
    for j, r in enumerate(region_of):
        if r in regions:
            k = regions.index(r)
            scales[j, 2 + k] = region_coef[k]
    shape_dirs = rest[:, :, None] * scales[:, None, :]

    per = int(meta["anchors_per_joint"][0])
    anchors, owner = [], []
    for j in range(N_JOINTS):
        a, b = seg0[j], seg1[j]
        axis = b - a
        length = np.linalg.norm(axis)
        if length < 1e-9:
            d = rng.normal(size=(per, 3))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            pts = a + radius[j] * rng.uniform(0.9, 1.1, size=(per, 1)) * d
        else:
            u = axis / length
            helper = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
            e1 = np.cross(u, helper)
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(u, e1)
            t = (np.arange(per) + rng.uniform(0.0, 1.0, size=per)) / per
            ang = rng.uniform(0.0, 2 * np.pi, size=per)
            rad = radius[j] * rng.uniform(0.9, 1.1, size=per)
            pts = (a + t[:, None] * axis
                   + rad[:, None] * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2))
        anchors.append(pts)
        owner += [j] * per
    anchors = np.concatenate(anchors)

    def fmt(arr):
        arr = np.atleast_2d(arr)
        return "\n".join(" ".join(repr(float(x)) if arr.dtype.kind == "f" else str(int(x)) for x in row)
                         for row in arr)

    out = [
        "# sipose surrogate body template (generated, do not edit)",
        "version = 1",
        f"seed = {seed:#x}",
        f"parents: {N_JOINTS}",
        fmt(parents[None, :]),
        f"rest_offsets: {N_JOINTS} 3",
        fmt(rest),
        f"shape_scales: {N_JOINTS} {N_BETA}",
        fmt(scales),
        f"shape_dirs: {N_JOINTS} 3 {N_BETA}",
        fmt(shape_dirs.reshape(-1, N_BETA)),
        f"vertex_anchors: {len(anchors)} 3",
        fmt(anchors),
        f"anchor_joint: {len(owner)}",
        fmt(np.array(owner)[None, :]),
        f"coco_joint: {N_COCO}",
        fmt(np.array([c[0] for c in coco])[None, :]),
        f"coco_offset: {N_COCO} 3",
        fmt(np.array([c[1] for c in coco])),
        "foot_joints: 2",
        " ".join(meta["foot_joints"]),
        "mount_joints: 6",
        " ".join(meta["mount_joints"]),
    ]
    return "\n".join(out) + "\n"


def write_template(path=TEMPLATE_PATH, seed=TEMPLATE_SEED):
    Path(path).write_text(generate_template_text(seed))
    return path


def parse_template(text: str) -> BodyTemplate:
    lines = [l for l in text.splitlines() if l.strip() and not l.startswith("#")]
    arrays = {}
    i = 0
    while i < len(lines):
        line = lines[i]
        if ":" in line:
            name, dims = line.split(":", 1)
            dims = tuple(int(d) for d in dims.split())
            need = int(np.prod(dims))
            vals = []
            i += 1
            while len(vals) < need:
                vals += lines[i].split()
                i += 1
            arrays[name.strip()] = (vals, dims)
        else:
            i += 1

    def f(name):
        vals, dims = arrays[name]
        return np.array([float(v) for v in vals]).reshape(dims)

    def n(name):
        vals, dims = arrays[name]
        return np.array([int(v) for v in vals]).reshape(dims)

    return BodyTemplate(
        parents=n("parents"), rest_offsets=f("rest_offsets"), shape_scales=f("shape_scales"),
        shape_dirs=f("shape_dirs").reshape(N_JOINTS, 3, N_BETA), vertex_anchors=f("vertex_anchors"),
        anchor_joint=n("anchor_joint"), coco_joint=n("coco_joint"), coco_offset=f("coco_offset"),
        foot_joints=n("foot_joints"), mount_joints=n("mount_joints"),
        checksum=hashlib.sha256(text.encode()).hexdigest()[:16],
    )


@lru_cache(maxsize=4)
def _load_cached(path: str) -> BodyTemplate:
    return parse_template(Path(path).read_text())


def load_template(path=None) -> BodyTemplate:
    return _load_cached(str(path or TEMPLATE_PATH))


def _tpl(template):
    return template if template is not None else load_template()


# ---------------------------------------------------------------------------
# kinematics (numpy)

def bone_offsets(beta, template=None):
    t = _tpl(template)
    beta = np.asarray(beta, dtype=np.float64)
    return t.rest_offsets + np.einsum("jck,...k->...jc", t.shape_dirs, beta)


def bone_scale(beta, template=None):
    """Per-joint factor (1 + scales . beta) that multiplies rest offsets and anchors."""
    t = _tpl(template)
    return 1.0 + np.einsum("jk,...k->...j", t.shape_scales, np.asarray(beta, dtype=np.float64))


def fk(phi, beta, template=None) -> JointSet:
    """Forward kinematics. ``phi`` [..., 24, 3] axis-angles, ``beta`` [..., 10].

    Tensor inputs route to the differentiable version and return a
    (joints, globals) pair of tensors instead of a JointSet.
    """
    if isinstance(phi, Tensor) or isinstance(beta, Tensor):
        return fk_tensor(phi, beta, template)
    t = _tpl(template)
    phi = np.asarray(phi, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    local = so3.exp_map(phi)
    off = bone_offsets(beta, t)
    batch = np.broadcast_shapes(phi.shape[:-2], off.shape[:-2])
    off = np.broadcast_to(off, batch + (N_JOINTS, 3))
    local = np.broadcast_to(local, batch + (N_JOINTS, 3, 3))
    G = np.empty(batch + (N_JOINTS, 3, 3))
    P = np.empty(batch + (N_JOINTS, 3))
    G[..., 0, :, :] = local[..., 0, :, :]
    P[..., 0, :] = 0.0
    par = t.parents
    for j in range(1, N_JOINTS):
        p = par[j]
        Gp = G[..., p, :, :]
        G[..., j, :, :] = Gp @ local[..., j, :, :]
        P[..., j, :] = P[..., p, :] + np.einsum("...ab,...b->...a", Gp, off[..., j, :])
    return JointSet(P, G)


def fk_tensor(phi, beta, template=None):
    """Differentiable forward kinematics as a single taped op.

    Returns (joints [..., 24, 3], globals [..., 24, 3, 3]).
    """
    t = _tpl(template)
    phi, beta = ad.as_tensor(phi), ad.as_tensor(beta)
    local_t = so3.exp_map(phi)
    L = local_t.data
    off = bone_offsets(beta.data, t)
    batch = np.broadcast_shapes(L.shape[:-3], off.shape[:-2])
    Lb = np.broadcast_to(L, batch + (N_JOINTS, 3, 3))
    ob = np.broadcast_to(off, batch + (N_JOINTS, 3))
    js = fk(phi.data, beta.data, t)
    G, P = js.globals, js.joints
    packed = np.concatenate([P, G.reshape(batch + (N_JOINTS, 9))], axis=-1)
    par = t.parents
    beta_shape = beta.shape
    L_shape = L.shape

    def bw(g):
        gP = g[..., :3].copy()
        gG = g[..., 3:].reshape(batch + (N_JOINTS, 3, 3)).copy()
        gL = np.zeros(batch + (N_JOINTS, 3, 3))
        go = np.zeros(batch + (N_JOINTS, 3))
        for j in range(N_JOINTS - 1, 0, -1):
            p = par[j]
            Gp = G[..., p, :, :]
            GpT = np.swapaxes(Gp, -1, -2)
            gL[..., j, :, :] = GpT @ gG[..., j, :, :]
            gG[..., p, :, :] += gG[..., j, :, :] @ np.swapaxes(Lb[..., j, :, :], -1, -2)
            gP[..., p, :] += gP[..., j, :]
            gG[..., p, :, :] += gP[..., j, :, None] * ob[..., j, None, :]
            go[..., j, :] = np.einsum("...ab,...a->...b", Gp, gP[..., j, :])
        gL[..., 0, :, :] = gG[..., 0, :, :]
        gbeta = np.einsum("jck,...jc->...k", t.shape_dirs, go)
        return ad.unbroadcast(gL, L_shape), ad.unbroadcast(gbeta, beta_shape)

    out = ad.record(packed, (local_t, beta), bw, "fk")
    joints = out[..., :3]
    globs = ad.reshape(out[..., 3:], batch + (N_JOINTS, 3, 3))
    return joints, globs


def vertices(phi, beta, template=None):
    """Rigidly skinned surrogate vertices [..., 384, 3] in the root-centred frame."""
    t = _tpl(template)
    if isinstance(phi, Tensor) or isinstance(beta, Tensor):
        beta = ad.as_tensor(beta)
        return vertices_tensor(fk_tensor(phi, beta, t), beta, t)
    js = fk(phi, beta, t)
    return vertices_from(js, beta, t)


def vertices_tensor(jg, beta, template=None):
    """Tensor vertices from an existing (joints, globals) pair of fk_tensor."""
    t = _tpl(template)
    joints, globs = jg
    beta = ad.as_tensor(beta)
    scale = 1.0 + ad.matmul(ad.as_tensor(t.shape_scales), ad.reshape(beta, beta.shape[:-1] + (N_BETA, 1)))
    scale = ad.reshape(scale, beta.shape[:-1] + (N_JOINTS, 1))
    aj = t.anchor_joint
    local = ad.Tensor(t.vertex_anchors) * scale[..., aj, :]
    rot = ad.matmul(globs[..., aj, :, :], ad.reshape(local, local.shape + (1,)))
    return joints[..., aj, :] + ad.reshape(rot, rot.shape[:-1])


def vertices_from(js: JointSet, beta, template=None):
    t = _tpl(template)
    aj = t.anchor_joint
    scale = bone_scale(beta, t)[..., aj, None]
    local = t.vertex_anchors * scale
    return js.joints[..., aj, :] + np.einsum("...vab,...vb->...va", js.globals[..., aj, :, :], local)


def regress_coco(js, template=None):
    """17 COCO keypoints from a JointSet (numpy) or a (joints, globals) tensor pair."""
    t = _tpl(template)
    cj, off = t.coco_joint, t.coco_offset
    if isinstance(js, tuple):
        joints, globs = js
        rot = ad.matmul(globs[..., cj, :, :], ad.Tensor(off[:, :, None]))
        return joints[..., cj, :] + ad.reshape(rot, rot.shape[:-1])
    return js.joints[..., cj, :] + np.einsum("...kab,kb->...ka", js.globals[..., cj, :, :], off)


def mount_frames(js: JointSet, template=None):
    """Global rotations [..., 6, 3, 3] and positions [..., 6, 3] of the IMU mounts.

    Order: pelvis, head, left forearm, right forearm, left lower leg, right lower leg.
    """
    t = _tpl(template)
    m = t.mount_joints
    return js.globals[..., m, :, :], js.joints[..., m, :]


def feet(js: JointSet, template=None):
    t = _tpl(template)
    return js.joints[..., t.foot_joints, :]


def bone_lengths(beta, template=None):
    return np.linalg.norm(bone_offsets(beta, template), axis=-1)


def leg_geometry(beta, template=None):
    """Hip offset, thigh and shin lengths for the given shape (left leg; body is symmetric)."""
    off = bone_offsets(beta, template)
    return off[1], float(np.linalg.norm(off[4])), float(np.linalg.norm(off[7]))


def rest_ankle_drop(beta, template=None):
    """Height of the pelvis above the ankles in the zero pose."""
    js = fk(np.zeros((N_JOINTS, 3)), beta, template)
    return float(-js.joints[7, 1])


if __name__ == "__main__":  # pragma: no cover
    print(write_template())
