"""State-space sequence networks.

A SequenceNet is an input projection, a stack of SsmBlocks and a linear head.
Each block runs a diagonal linear recurrence over time followed by a gated
two-layer MLP with a residual connection. The same parameters drive three
paths: a taped whole-window forward for training, a plain numpy forward for
batch inference and a frame-by-frame streaming step (64- or 32-bit).
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

MAGIC = b"SIPNET\x00\x01"
CKPT_VERSION = 1


def _silu_np(x):
    # tanh form: no overflow for large negative inputs, keeps the input dtype
    return x * (0.5 + 0.5 * np.tanh(0.5 * x))


def transition(log_a):
    """Per-channel decay a = exp(-exp(log_a)), always inside (0, 1)."""
    return np.exp(-np.exp(log_a))


class SsmBlock:
    """Parameter names of block ``i`` are prefixed with ``blk{i}.``."""

    FIELDS = ("log_a", "b", "c", "d", "Wg", "bg", "Wv", "bv", "Wo", "bo")

    def __init__(self, prefix, hidden, mlp=True):
        self.prefix = prefix
        self.hidden = hidden
        self.mlp = mlp

    def names(self):
        f = self.FIELDS if self.mlp else self.FIELDS[:4]
        return [self.prefix + n for n in f]

    def init(self, rng, params):
        H = self.hidden
        p = self.prefix
        a = rng.uniform(0.6, 0.98, size=H)
        params[p + "log_a"] = np.log(-np.log(a))
        params[p + "b"] = 1.0 - a
        params[p + "c"] = rng.uniform(0.5, 1.5, size=H)
        params[p + "d"] = np.ones(H)
        if self.mlp:
            s = np.sqrt(3.0 / H)
            params[p + "Wg"] = rng.uniform(-s, s, size=(H, 2 * H))
            params[p + "bg"] = np.zeros(2 * H)
            params[p + "Wv"] = rng.uniform(-s, s, size=(H, 2 * H))
            params[p + "bv"] = np.zeros(2 * H)
            so = 0.5 * np.sqrt(3.0 / (2 * H))
            params[p + "Wo"] = rng.uniform(-so, so, size=(2 * H, H))
            params[p + "bo"] = np.zeros(H)

    # -- taped path ------------------------------------------------------
    def forward(self, u: Tensor, P):
        p = self.prefix
        a = ad.exp(-ad.exp(P[p + "log_a"]))
        h = ad.linear_scan(u * P[p + "b"], a)
        z = h * P[p + "c"] + u * P[p + "d"]
        return self._mlp(z, P) + u

    def _mlp(self, z, P):
        if not self.mlp:
            return z
        p = self.prefix
        g = ad.silu(ad.matmul(z, P[p + "Wg"]) + P[p + "bg"])
        v = ad.matmul(z, P[p + "Wv"]) + P[p + "bv"]
        return ad.matmul(g * v, P[p + "Wo"]) + P[p + "bo"]

    # -- numpy paths -----------------------------------------------------
    def mlp_np(self, z, P):
        if not self.mlp:
            return z
        p = self.prefix
        g = _silu_np(z @ P[p + "Wg"] + P[p + "bg"])
        v = z @ P[p + "Wv"] + P[p + "bv"]
        return (g * v) @ P[p + "Wo"] + P[p + "bo"]

    def forward_np(self, u, P, h0=None):
        p = self.prefix
        a = transition(P[p + "log_a"])
        bu = u * P[p + "b"]
        hs = np.empty_like(bu)
        h = np.zeros(bu.shape[:-2] + bu.shape[-1:], dtype=bu.dtype) if h0 is None else h0
        for t in range(bu.shape[-2]):
            h = a * h + bu[..., t, :]
            hs[..., t, :] = h
        z = hs * P[p + "c"] + u * P[p + "d"]
        return self.mlp_np(z, P) + u, h

    def step(self, u, h, P, a):
        """One streaming step: h' = a*h + b*u, y = mlp(c*h' + d*u) + u."""
        p = self.prefix
        h = a * h + P[p + "b"] * u
        z = P[p + "c"] * h + P[p + "d"] * u
        return self.mlp_np(z, P) + u, h


def ssm_step(P, prefix, u, h, mlp=True):
    """Differentiable single step of one block; ``P`` maps names to tensors."""
    blk = SsmBlock(prefix, int(np.shape(u)[-1]), mlp=mlp)
    p = prefix
    a = ad.exp(-ad.exp(P[p + "log_a"]))
    h = a * h + P[p + "b"] * u
    z = P[p + "c"] * h + P[p + "d"] * u
    if len(z.shape) == 1:
        # matmul wants a row; single frames are lifted and dropped again
        z = ad.reshape(blk._mlp(ad.reshape(z, (1, -1)), P), (-1,))
        return z + u, h
    return blk._mlp(z, P) + u, h


@dataclass(frozen=True)
class NetSpec:
    name: str
    d_in: int
    d_out: int
    hidden: int = 64
    layers: int = 2
    flags: tuple = ()

    def header(self):
        return {"name": self.name, "d_in": self.d_in, "d_out": self.d_out,
                "hidden": self.hidden, "layers": self.layers, "flags": list(self.flags)}


class SequenceNet:
    def __init__(self, spec: NetSpec, params=None, seed=0):
        if spec.d_in < 1 or spec.d_out < 1 or spec.hidden < 1 or spec.layers < 0:
            raise ConfigError(f"bad network spec {spec}")
        self.spec = spec
        self.blocks = [SsmBlock(f"blk{i}.", spec.hidden) for i in range(spec.layers)]
        if params is None:
            params = self._init(np.random.default_rng(seed))
        missing = [n for n in self.names() if n not in params]
        if missing:
            raise ConfigError(f"missing parameters {missing}")
        self.params = {n: np.asarray(params[n], dtype=np.float64) for n in self.names()}
        self._cache32 = None

    def names(self):
        out = ["W_in", "b_in"]
        for blk in self.blocks:
            out += blk.names()
        return out + ["W_out", "b_out"]

    def _init(self, rng):
        s, H = self.spec, self.spec.hidden
        P = {}
        lim = np.sqrt(3.0 / s.d_in)
        P["W_in"] = rng.uniform(-lim, lim, size=(s.d_in, H))
        P["b_in"] = np.zeros(H)
        for blk in self.blocks:
            blk.init(rng, P)
        # zero head: untrained nets emit exactly zero
        P["W_out"] = np.zeros((H, s.d_out))
        P["b_out"] = np.zeros(s.d_out)
        return P

    @property
    def n_params(self):
        return int(sum(v.size for v in self.params.values()))

    def _check_in(self, shape):
        if shape[-1] != self.spec.d_in:
            raise ShapeError(f"{self.spec.name}: expected input width {self.spec.d_in}, got {shape[-1]}")

    # -- training --------------------------------------------------------
    def tensors(self):
        return {k: Tensor(v, requires_grad=True) for k, v in self.params.items()}

    def forward_tensor(self, x, P=None):
        """Whole-window forward on [..., T, d_in] with parameters ``P`` (tensors)."""
        x = ad.as_tensor(x)
        self._check_in(x.shape)
        if P is None:
            P = {k: Tensor(v) for k, v in self.params.items()}
        u = ad.matmul(x, P["W_in"]) + P["b_in"]
        for blk in self.blocks:
            u = blk.forward(u, P)
        return ad.matmul(u, P["W_out"]) + P["b_out"]

    # -- inference -------------------------------------------------------
    def forward(self, x):
        """Batch inference on [..., T, d_in] from a zero state."""
        x = np.asarray(x, dtype=np.float64)
        self._check_in(x.shape)
        P = self.params
        u = x @ P["W_in"] + P["b_in"]
        for blk in self.blocks:
            u, _ = blk.forward_np(u, P)
        return u @ P["W_out"] + P["b_out"]

    def stream(self, dtype=np.float64):
        return StreamState(self, dtype)

    def params_as(self, dtype):
        if dtype == np.float64:
            return self.params
        if self._cache32 is None:
            self._cache32 = {k: v.astype(np.float32) for k, v in self.params.items()}
        return self._cache32

    def set_params(self, params):
        for k in self.names():
            self.params[k] = np.asarray(params[k], dtype=np.float64)
        self._cache32 = None

    # -- persistence -----------------------------------------------------
    def to_bytes(self):
        hdr = self.spec.header()
        hdr["params"] = [[n, list(self.params[n].shape)] for n in self.names()]
        hdr_b = json.dumps(hdr, sort_keys=True).encode()
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<II", CKPT_VERSION, len(hdr_b)))
        buf.write(hdr_b)
        for n in self.names():
            buf.write(np.ascontiguousarray(self.params[n], dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob):
        if blob[:8] != MAGIC:
            raise ConfigError("not a network checkpoint")
        version, n = struct.unpack("<II", blob[8:16])
        if version != CKPT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        hdr = json.loads(blob[16:16 + n].decode())
        spec = NetSpec(hdr["name"], hdr["d_in"], hdr["d_out"], hdr["hidden"], hdr["layers"],
                       tuple(hdr["flags"]))
        off = 16 + n
        params = {}
        for name, shape in hdr["params"]:
            cnt = int(np.prod(shape)) if shape else 1
            params[name] = np.frombuffer(blob, dtype="<f8", count=cnt, offset=off).reshape(shape).copy()
            off += 8 * cnt
        if off != len(blob):
            raise ConfigError("trailing bytes in checkpoint")
        return cls(spec, params)

    def save(self, path):
        data = self.to_bytes()
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self):
        return hashlib.sha256(self.to_bytes()).hexdigest()


class StreamState:
    """Frame-by-frame evaluation with O(hidden) state per block."""

    def __init__(self, net: SequenceNet, dtype=np.float64):
        self.net = net
        self.dtype = np.dtype(dtype)
        self.P = net.params_as(self.dtype.type)
        self.a = [transition(net.params[b.prefix + "log_a"]).astype(self.dtype) for b in net.blocks]
        self.reset()

    def reset(self):
        H = self.net.spec.hidden
        self.h = [np.zeros(H, dtype=self.dtype) for _ in self.net.blocks]

    def step(self, x):
        P = self.P
        u = np.asarray(x, dtype=self.dtype) @ P["W_in"] + P["b_in"]
        for i, blk in enumerate(self.net.blocks):
            u, self.h[i] = blk.step(u, self.h[i], P, self.a[i])
        return u @ P["W_out"] + P["b_out"]
