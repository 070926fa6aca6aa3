"""Line-oriented sequence files and run manifests.

Layout of a sequence file::

    SIPSEQ <version> <fps> <frames> <beta x10> <template checksum> <obs 0|1>
    <phi x72> <T x3> <q_l> <q_r> [<stereo x204> <imu x72>]
    ...

Floats are written with repr, so reading back gives the same 64-bit values.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import body_model as bm
from .errors import ConfigError, ShapeError, TemplateMismatch
from .stereo import StereoObservation
from .synth import ImuFrame, MotionSequence

MAGIC = "SIPSEQ"
VERSION = 1
POSE_WIDTH = 72 + 3 + 2
STEREO_WIDTH = bm.N_COCO * (2 + 2 + 3 + 3 + 1 + 1)
IMU_WIDTH = 6 * (9 + 3)


@dataclass
class SequenceFile:
    fps: float
    phi: np.ndarray          # [F, 24, 3]
    trans: np.ndarray        # [F, 3]
    contacts: np.ndarray     # [F, 2]
    beta: np.ndarray         # [10]
    obs: StereoObservation | None = None
    imu: ImuFrame | None = None
    checksum: str = field(default_factory=lambda: bm.load_template().checksum)

    def __len__(self):
        return len(self.trans)

    @property
    def has_observations(self):
        return self.obs is not None and self.imu is not None

    @classmethod
    def from_motion(cls, seq: MotionSequence, obs=None, imu=None):
        return cls(seq.fps, seq.phi, seq.trans, seq.contacts, seq.beta, obs, imu)

    def motion(self) -> MotionSequence:
        return MotionSequence(self.fps, self.phi, self.trans, self.beta, self.contacts)


def _fmt(values):
    return " ".join(repr(float(v)) for v in np.asarray(values, dtype=np.float64).reshape(-1))


def _stereo_rows(obs: StereoObservation):
    F = len(obs)
    per_kp = np.concatenate([obs.p2d_l, obs.p2d_r, obs.p3d_l, obs.p3d_r,
                             obs.conf_l[..., None], obs.conf_r[..., None]], axis=-1)
    return per_kp.reshape(F, -1)


def _imu_rows(imu: ImuFrame):
    F = len(imu)
    return np.concatenate([imu.rot.reshape(F, 6, 9), imu.acc], axis=-1).reshape(F, -1)


def dumps(sf: SequenceFile) -> str:
    F = len(sf)
    if sf.phi.shape != (F, bm.N_JOINTS, 3) or sf.contacts.shape != (F, 2):
        raise ShapeError("sequence arrays disagree on the frame count")
    has_obs = int(sf.has_observations)
    head = [MAGIC, str(VERSION), repr(float(sf.fps)), str(F), _fmt(sf.beta), sf.checksum, str(has_obs)]
    lines = [" ".join(head)]
    rows = np.concatenate([sf.phi.reshape(F, -1), sf.trans, sf.contacts], axis=1)
    if has_obs:
        rows = np.concatenate([rows, _stereo_rows(sf.obs), _imu_rows(sf.imu)], axis=1)
    lines += [_fmt(r) for r in rows]
    return "\n".join(lines) + "\n"


def loads(text: str, check_template=True) -> SequenceFile:
    lines = text.splitlines()
    if not lines:
        raise ConfigError("empty sequence file")
    head = lines[0].split()
    if len(head) != 6 + bm.N_BETA or head[0] != MAGIC:
        raise ConfigError("not a sequence file")
    if int(head[1]) != VERSION:
        raise ConfigError(f"unsupported sequence version {head[1]}")
    fps, F = float(head[2]), int(head[3])
    beta = np.array([float(x) for x in head[4:4 + bm.N_BETA]])
    checksum, has_obs = head[4 + bm.N_BETA], head[5 + bm.N_BETA] == "1"
    if check_template and checksum != bm.load_template().checksum:
        raise TemplateMismatch(f"file was written for template {checksum}, "
                               f"loaded template is {bm.load_template().checksum}")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != F:
        raise ShapeError(f"header announces {F} frames, found {len(body)}")
    width = POSE_WIDTH + (STEREO_WIDTH + IMU_WIDTH if has_obs else 0)
    rows = np.array([[float(x) for x in ln.split()] for ln in body]).reshape(F, -1) if F else np.zeros((0, width))
    if rows.shape[1] != width:
        raise ShapeError(f"frame records have {rows.shape[1]} values, expected {width}")
    phi = rows[:, :72].reshape(F, bm.N_JOINTS, 3)
    trans = rows[:, 72:75].copy()
    contacts = rows[:, 75:77].copy()
    obs = imu = None
    if has_obs:
        st = rows[:, POSE_WIDTH:POSE_WIDTH + STEREO_WIDTH].reshape(F, bm.N_COCO, 12)
        obs = StereoObservation(st[..., 0:2].copy(), st[..., 2:4].copy(), st[..., 4:7].copy(),
                                st[..., 7:10].copy(), st[..., 10].copy(), st[..., 11].copy())
        im = rows[:, POSE_WIDTH + STEREO_WIDTH:].reshape(F, 6, 12)
        imu = ImuFrame(im[..., :9].reshape(F, 6, 3, 3).copy(), im[..., 9:].copy())
    return SequenceFile(fps, phi.copy(), trans, contacts, beta, obs, imu, checksum)


def write(path, sf: SequenceFile):
    Path(path).write_text(dumps(sf))


def read(path, check_template=True) -> SequenceFile:
    return loads(Path(path).read_text(), check_template)


# ---------------------------------------------------------------------------
# manifests

def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(text: str):
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class RunManifest:
    command: list
    config_hash: str = ""
    seeds: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(self.__dict__, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json())
