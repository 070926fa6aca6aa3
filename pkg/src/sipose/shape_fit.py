"""Body-shape estimation from a T-pose scan.

The model is posed in its own frame and mapped into the camera frame by an
alignment M = (R, t); the energy compares the mapped COCO keypoints with the
observed skeleton and the mapped vertices with the (fixed) point cloud.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from . import body_model as bm
from . import so3
from .autodiff import Tensor
from .errors import ConfigError, EmptyCloud, FitDiverged

log = logging.getLogger(__name__)

VOXEL_RANGE = (3000, 5000)
DIVERGE_AT = 1e6


@dataclass(frozen=True)
class FitWeights:
    skel: float = 1.0
    cd: float = 15.0
    phi: float = 1.0
    beta: float = 0.01

    def __post_init__(self):
        if min(self.skel, self.cd, self.phi, self.beta) < 0:
            raise ConfigError("fit weights must be nonnegative")


@dataclass
class FitProblem:
    cloud: np.ndarray | None        # [N, 3] or None / empty
    skeleton: np.ndarray            # [17, 3]
    weights: FitWeights = field(default_factory=FitWeights)

    def __post_init__(self):
        self.skeleton = np.asarray(self.skeleton, dtype=np.float64)
        if self.cloud is not None:
            self.cloud = np.asarray(self.cloud, dtype=np.float64).reshape(-1, 3)
        if not self.has_cloud and self.weights.cd != 0:
            # skeleton-only fallback when no scan is available
            self.weights = FitWeights(self.weights.skel, 0.0, self.weights.phi, self.weights.beta)

    @property
    def has_cloud(self):
        return self.cloud is not None and len(self.cloud) > 0


@dataclass
class FitResult:
    beta: np.ndarray
    phi: np.ndarray
    R: np.ndarray
    t: np.ndarray
    trace: list
    iterations: int

    @property
    def energy(self):
        return self.trace[-1]


# ---------------------------------------------------------------------------
# point clouds

def lexsorted(points):
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return p[np.lexsort((p[:, 2], p[:, 1], p[:, 0]))]


def voxel_grid(cloud, edge):
    """One centroid per occupied cube of side ``edge``; output sorted by cell."""
    p = lexsorted(cloud)
    if len(p) == 0:
        raise EmptyCloud("cannot voxelise an empty cloud")
    keys = np.floor((p - p.min(axis=0)) / edge).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inv, p)
    return sums / counts[:, None]


def voxel_downsample(cloud, target=4000, bounds=VOXEL_RANGE, max_iter=60):
    """Voxel-grid downsampling with the edge found by bisection.

    Clouds already within the upper bound are returned with exact duplicates merged.
    """
    p = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise EmptyCloud("cannot downsample an empty cloud")
    lo_n, hi_n = bounds
    if len(p) <= hi_n:
        return lexsorted(np.unique(p, axis=0))
    extent = float(np.max(p.max(axis=0) - p.min(axis=0)))
    if extent == 0.0:
        return p[:1].copy()
    lo, hi = extent * 1e-6, extent
    best = None
    for _ in range(max_iter):
        mid = np.sqrt(lo * hi)
        out = voxel_grid(p, mid)
        n = len(out)
        if best is None or abs(n - target) < abs(len(best) - target):
            best = out
        if lo_n <= n <= hi_n:
            return out
        if n > hi_n:
            lo = mid
        else:
            hi = mid
    return best


def _nearest(tree_pts, query):
    tree = cKDTree(tree_pts)
    _, idx = tree.query(query, k=1)
    return idx


def _chamfer_parts(P, V, tree_P=None):
    idx_v = _nearest(V, P)            # for each p its nearest v
    idx_p = (tree_P.query(V, k=1)[1] if tree_P is not None else _nearest(P, V))
    dp = P - V[idx_v]
    dv = V - P[idx_p]
    sp = np.sum(dp * dp, axis=1)
    sv = np.sum(dv * dv, axis=1)
    return sp, sv, idx_v, idx_p, dp, dv


def chamfer(P, V, tree_P=None):
    """Symmetric mean-of-min squared distance. Differentiable in V when V is a tensor."""
    P = np.asarray(P.data if isinstance(P, Tensor) else P, dtype=np.float64).reshape(-1, 3)
    is_t = isinstance(V, Tensor)
    Vd = np.asarray(V.data if is_t else V, dtype=np.float64)
    if len(P) == 0 or Vd.size == 0:
        raise EmptyCloud("chamfer needs two nonempty point sets")
    Vd = Vd.reshape(-1, 3)
    sp, sv, idx_v, idx_p, dp, dv = _chamfer_parts(P, Vd, tree_P)
    val = np.mean(sp) + np.mean(sv)
    if not is_t:
        return float(val)
    nP, nV = len(P), len(Vd)
    vshape = V.shape

    def bw(g):
        gV = 2.0 * dv / nV
        np.add.at(gV, idx_v, -2.0 * dp / nP)
        return ((g * gV).reshape(vshape),)

    return ad.record(np.array(val), (V,), bw, "chamfer")


# ---------------------------------------------------------------------------
# energy

def _as_rot(R):
    if isinstance(R, Tensor):
        return R
    return ad.Tensor(np.asarray(R, dtype=np.float64))


def model_points(beta, phi, R, t, with_vertices=True):
    """COCO keypoints (and vertices) of the posed model mapped by M into the camera frame."""
    beta, phi = ad.as_tensor(beta), ad.as_tensor(phi)
    R, t = _as_rot(R), ad.as_tensor(t)
    jg = bm.fk_tensor(phi, beta)
    kp = bm.regress_coco(jg)
    Rt = ad.swapaxes(R, -1, -2)
    kp = ad.matmul(kp, Rt) + t
    if not with_vertices:
        return kp, None
    verts = bm.vertices_tensor(jg, beta)
    return kp, ad.matmul(verts, Rt) + t


def energy_terms(problem: FitProblem, beta, phi, R, t, tree_P=None):
    w = problem.weights
    kp, verts = model_points(beta, phi, R, t, with_vertices=w.cd > 0 and problem.has_cloud)
    terms = {"skel": ad.tsum(ad.square(kp - problem.skeleton))}
    if verts is not None:
        terms["cd"] = chamfer(problem.cloud, verts, tree_P)
    terms["phi"] = ad.tsum(ad.square(ad.as_tensor(phi)))
    terms["beta"] = ad.tsum(ad.square(ad.as_tensor(beta)))
    return terms


def energy(problem: FitProblem, beta, phi, R, t, tree_P=None):
    """Weighted sum of the skeleton, chamfer, pose-prior and shape-prior terms."""
    w = problem.weights
    terms = energy_terms(problem, beta, phi, R, t, tree_P)
    total = None
    for k, v in terms.items():
        part = v * getattr(w, k)
        total = part if total is None else total + part
    return total


# ---------------------------------------------------------------------------
# solver

def initial_alignment(skeleton):
    """Start at the observed mid-hip, with the model's x axis on the observed shoulder line.

    Assumes the scene's y axis is vertical.
    """
    J = np.asarray(skeleton, dtype=np.float64)
    t = 0.5 * (J[11] + J[12])
    s = J[5] - J[6]
    s[1] = 0.0
    n = np.linalg.norm(s)
    if n < 1e-9:
        return np.eye(3), t
    x = s / n
    y = np.array([0.0, 1.0, 0.0])
    return np.stack([x, y, np.cross(x, y)], axis=-1), t


@dataclass(frozen=True)
class SolverConfig:
    iterations: int = 500
    lr: float = 1e-2
    lr_rot: float = 1e-3
    momentum: float = 0.9
    downsample: bool = True


def solve(problem: FitProblem, config: SolverConfig = SolverConfig()) -> FitResult:
    """SGD with momentum over (β, Φ, R as 6D, t) from a zero-shape, zero-pose start."""
    if problem.has_cloud:
        cloud = voxel_downsample(problem.cloud) if config.downsample else lexsorted(problem.cloud)
        problem = FitProblem(cloud, problem.skeleton, problem.weights)
        tree_P = cKDTree(problem.cloud)
    else:
        tree_P = None
    R0, t0 = initial_alignment(problem.skeleton)
    params = {
        "beta": np.zeros(bm.N_BETA),
        "phi": np.zeros((bm.N_JOINTS, 3)),
        "r6": so3.to6d(R0),
        "t": t0.copy(),
    }
    lrs = {"beta": config.lr, "phi": config.lr, "t": config.lr, "r6": config.lr_rot}
    vel = {k: np.zeros_like(v) for k, v in params.items()}
    trace = []
    for it in range(config.iterations):
        ts = {k: ad.Tensor(v, requires_grad=True) for k, v in params.items()}
        E = energy(problem, ts["beta"], ts["phi"], so3.from6d(ts["r6"]), ts["t"], tree_P)
        e = E.item()
        trace.append(e)
        if not np.isfinite(e) or e > DIVERGE_AT:
            raise FitDiverged(f"energy {e:.3g} at iteration {it}", trace)
        ad.backward(E)
        for k in params:
            vel[k] = config.momentum * vel[k] + ts[k].grad
            params[k] = params[k] - lrs[k] * vel[k]
    R = so3.from6d(params["r6"])
    with ad.no_grad():
        E = energy(problem, params["beta"], params["phi"], R, params["t"], tree_P).item()
    trace.append(E)
    log.debug("shape fit finished: energy %.6g after %d iterations", E, config.iterations)
    return FitResult(beta=params["beta"], phi=params["phi"], R=R, t=params["t"], trace=trace,
                     iterations=config.iterations)
