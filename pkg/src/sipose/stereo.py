"""Rectified pinhole stereo: projection, confidence fusion, disparity depth, world keypoints.

World frame is the left lens frame with y up; the right lens sits at
(baseline, 0, 0). Image coordinates follow u = fx*x/z + cx, v = fy*y/z + cy.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict, fields
from pathlib import Path

import numpy as np

from .errors import BehindCamera, ConfigError, DegenerateDisparity

MIN_DISPARITY = 0.5


@dataclass(frozen=True)
class StereoCalib:
    fx: float = 600.0
    fy: float = 600.0
    cx: float = 640.0
    cy: float = 180.0
    baseline: float = 0.12
    width: int = 1280
    height: int = 720

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        if self.baseline <= 0:
            raise ConfigError("baseline must be positive")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self):
        return np.linalg.inv(self.K)

    @property
    def t_right(self):
        return np.array([self.baseline, 0.0, 0.0])

    def to_text(self):
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text):
        kv = parse_kv(text)
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(kv) - set(known)
        if unknown:
            raise ConfigError(f"unknown calibration keys: {sorted(unknown)}")
        vals = {k: (int(v) if k in ("width", "height") else float(v)) for k, v in kv.items()}
        return cls(**vals)

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.to_text())


def parse_kv(text):
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


@dataclass
class StereoObservation:
    """Paired detections; arrays may carry a leading frame axis."""
    p2d_l: np.ndarray   # [..., 17, 2]
    p2d_r: np.ndarray
    p3d_l: np.ndarray   # [..., 17, 3] root-relative
    p3d_r: np.ndarray
    conf_l: np.ndarray  # [..., 17]
    conf_r: np.ndarray

    def frame(self, i):
        return StereoObservation(**{k: v[i] for k, v in asdict(self).items()})

    def __len__(self):
        return len(self.conf_l)


@dataclass
class MetricKeypoints:
    p_R: np.ndarray     # [..., 17, 3]
    p_C: np.ndarray     # [..., 17, 3]
    conf_C: np.ndarray  # [..., 17]


def _lambda_c(conf_l, conf_r):
    cl = np.asarray(conf_l, dtype=np.float64)
    cr = np.asarray(conf_r, dtype=np.float64)
    tot = cl + cr
    both_zero = tot <= 0
    lam = np.where(both_zero, 1.0, cl / np.where(both_zero, 1.0, tot))
    return lam, both_zero


def fuse_root_relative(obs: StereoObservation):
    """Confidence-weighted blend of the two root-relative detections.

    Keypoints where both confidences are zero keep the left estimate.
    """
    lam, _ = _lambda_c(obs.conf_l, obs.conf_r)
    lam = lam[..., None]
    return lam * obs.p3d_l + (1.0 - lam) * obs.p3d_r


def depth_from_disparity(calib: StereoCalib, x_l, x_r, d_min=MIN_DISPARITY):
    disp = abs(float(x_r) - float(x_l))
    if disp < d_min:
        raise DegenerateDisparity(f"disparity {disp:.3g} px below {d_min} px")
    return calib.fx * calib.baseline / disp


def disparity_depth(calib: StereoCalib, x_l, x_r, d_min=MIN_DISPARITY):
    """Vectorised depth with a validity mask instead of exceptions."""
    disp = np.abs(np.asarray(x_r, dtype=np.float64) - np.asarray(x_l, dtype=np.float64))
    valid = disp >= d_min
    depth = np.where(valid, calib.fx * calib.baseline / np.where(valid, disp, 1.0), 0.0)
    return depth, valid


def _homog(p2d):
    return np.concatenate([p2d, np.ones(p2d.shape[:-1] + (1,))], axis=-1)


def reconstruct_world(calib: StereoCalib, obs: StereoObservation) -> MetricKeypoints:
    """Metric world keypoints from paired 2D detections.

    Both lens back-projections use the same disparity depth and are blended
    with the left-confidence ratio. Degenerate disparities come back with
    zero confidence and a zero position.
    """
    p_R = fuse_root_relative(obs)
    lam, _ = _lambda_c(obs.conf_l, obs.conf_r)
    dz, valid = disparity_depth(calib, obs.p2d_l[..., 0], obs.p2d_r[..., 0])
    Kinv = calib.K_inv
    ray_l = dz[..., None] * (_homog(obs.p2d_l) @ Kinv.T)
    ray_r = dz[..., None] * (_homog(obs.p2d_r) @ Kinv.T) + calib.t_right
    lam = lam[..., None]
    p_C = lam * ray_l + (1.0 - lam) * ray_r
    p_C = np.where(valid[..., None], p_C, 0.0)
    conf_C = 0.5 * (np.asarray(obs.conf_l, dtype=np.float64) + np.asarray(obs.conf_r, dtype=np.float64))
    conf_C = np.where(valid, conf_C, 0.0)
    return MetricKeypoints(p_R=p_R, p_C=p_C, conf_C=conf_C)


def project(calib: StereoCalib, view: str, p):
    """Pinhole projection of world points [..., 3] into the chosen view."""
    p = np.asarray(p, dtype=np.float64)
    if view == "right":
        p = p - calib.t_right
    elif view != "left":
        raise ValueError(f"view must be 'left' or 'right', got {view!r}")
    z = p[..., 2]
    if np.any(z <= 0):
        raise BehindCamera("point at or behind the lens plane")
    u = calib.fx * p[..., 0] / z + calib.cx
    v = calib.fy * p[..., 1] / z + calib.cy
    return np.stack([u, v], axis=-1)


def in_view(calib: StereoCalib, p, min_z=0.1):
    """Mask of points that land inside both images in front of both lenses."""
    p = np.asarray(p, dtype=np.float64)
    ok = p[..., 2] > min_z
    safe = np.where(ok[..., None], p, np.array([0.0, 0.0, 1.0]))
    for view in ("left", "right"):
        uv = project(calib, view, safe)
        ok &= (uv[..., 0] >= 0) & (uv[..., 0] <= calib.width) & (uv[..., 1] >= 0) & (uv[..., 1] <= calib.height)
    return ok
