"""Single-layer metapath-attention classifier (HAN-style).

Forward pass:
  1. project target features with the target type's projection;
  2. per metapath, node-level attention over metapath neighbors
     (leaky-relu score of a_m . [Wx_v || Wx_u], softmax over neighbors);
  3. semantic attention per node: score_m(v) = q . tanh(z_m(v) W_sem + b_sem),
     softmax over metapaths, H = sum_m S[:, m] * z_m;
  4. logits = H W_cls + b_cls.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor
from .hgraph import HeteroGraph, MetapathNeighborIndex, Schema
from .rng import stream


class DomainError(ValueError):
    pass


@dataclass
class ModelConfig:
    hidden: int = 16
    num_classes: int = 2
    num_metapaths: int = 1
    heads: int = 1
    activation: str = "none"   # applied to node-level aggregates: none | elu
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.hidden < 1 or self.num_classes < 1 or self.num_metapaths < 1:
            raise ValueError("hidden, num_classes and num_metapaths must be >= 1")
        if self.heads != 1:
            raise ValueError("only single-head attention is implemented")
        if self.activation not in ("none", "elu"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class ModelOutput:
    logits: Tensor           # (n, C)
    semantic: Tensor         # (n, M), rows sum to 1
    z: list                  # M tensors (n, h)
    hidden: Tensor           # (n, h)
    node_attention: list     # per metapath: (segment ids, neighbor ids, (E,) weights)


def proj_key(schema: Schema, tau: int) -> str:
    return f"proj.{schema.node_types[tau]}"


def _glorot(rng, fan_in, fan_out, shape):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def init_params(cfg: ModelConfig, schema: Schema, feature_dims, seed: int) -> ParamSet:
    rng = stream(seed, "init")
    h, C = cfg.hidden, cfg.num_classes
    p = {}
    for tau, d in enumerate(feature_dims):
        p[proj_key(schema, tau)] = _glorot(rng, d, h, (d, h))
    for m in range(cfg.num_metapaths):
        p[f"attn.{m}"] = _glorot(rng, 2 * h, 1, (2 * h, 1))
    p["sem.W"] = _glorot(rng, h, h, (h, h))
    p["sem.b"] = np.zeros((1, h))
    p["sem.q"] = _glorot(rng, h, 1, (h, 1))
    p["cls.W"] = _glorot(rng, h, C, (h, C))
    p["cls.b"] = np.zeros((1, C))
    return ParamSet(p)


def forward(graph: HeteroGraph, index: MetapathNeighborIndex, nodes, params,
            cfg: ModelConfig | None = None) -> ModelOutput:
    """Run the classifier on target ``nodes`` of ``graph``.

    ``params`` is either a ParamSet (evaluated as constants, no gradient) or
    a dict of Tensors from ``ParamSet.as_tensors``.
    """
    if isinstance(params, ParamSet):
        params = params.as_tensors()
    nodes = np.asarray(nodes, dtype=np.int64).reshape(-1)
    n_target = graph.num_nodes(graph.target)
    if nodes.size and (nodes.min() < 0 or nodes.max() >= n_target):
        raise DomainError("query nodes must be target-type ids")
    slope = cfg.leaky_slope if cfg else 0.2
    activation = cfg.activation if cfg else "none"

    W = params[proj_key(graph.schema, graph.target)]
    h = W.shape[1]
    proj = ad.matmul(Tensor(graph.features[graph.target]), W)
    p_self = ad.gather_rows(proj, nodes)
    n = nodes.size

    zs, node_att = [], []
    for m in range(index.num_metapaths):
        a = params[f"attn.{m}"]
        seg, nb = index.flat(m, nodes)
        p_nb = ad.gather_rows(proj, nb)
        s_self = ad.gather_rows(ad.matmul(p_self, a[:h]), seg)
        s_nb = ad.matmul(p_nb, a[h:])
        alpha = ad.segment_softmax(ad.leaky_relu(s_self + s_nb, slope), seg, n)
        z = ad.segment_sum(alpha * p_nb, seg, n)
        if activation == "elu":
            z = ad.elu(z)
        zs.append(z)
        node_att.append((seg, nb, alpha.data[:, 0]))

    scores = [ad.matmul(ad.tanh(ad.matmul(z, params["sem.W"]) + params["sem.b"]), params["sem.q"])
              for z in zs]
    S = ad.softmax(ad.concat(scores, axis=1), axis=1)
    H = None
    for m, z in enumerate(zs):
        term = S[:, m:m + 1] * z
        H = term if H is None else H + term
    logits = ad.matmul(H, params["cls.W"]) + params["cls.b"]
    return ModelOutput(logits, S, zs, H, node_att)


def predict(logits, mask) -> np.ndarray:
    """Argmax restricted to the class ids in ``mask``; ties go to the lowest id."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=float)
    allowed = np.array(sorted(set(int(c) for c in mask)), dtype=np.int64)
    if allowed.size == 0:
        raise ValueError("mask must be non-empty")
    sub = arr[:, allowed]
    return allowed[np.argmax(sub, axis=1)]


# -------------------------------------------------------------- checkpoints

_MAGIC = b"HETCL-PARAMS"
_VERSION = 1


def save_checkpoint(params: ParamSet, path) -> None:
    """Version header, key/shape table, then raw little-endian float64 values."""
    out = bytearray(_MAGIC)
    out += struct.pack("<II", _VERSION, len(params))
    for key, arr in params.items():
        kb = key.encode("utf-8")
        out += struct.pack("<I", len(kb)) + kb
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    for _, arr in params.items():
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> ParamSet:
    buf = Path(path).read_bytes()
    if not buf.startswith(_MAGIC):
        raise ValueError(f"{path}: not a parameter checkpoint")
    pos = len(_MAGIC)
    version, count = struct.unpack_from("<II", buf, pos)
    pos += 8
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    table = []
    for _ in range(count):
        (klen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        key = buf[pos:pos + klen].decode("utf-8")
        pos += klen
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        table.append((key, shape))
    arrays = {}
    for key, shape in table:
        size = int(np.prod(shape))
        arrays[key] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
    return ParamSet(arrays)
