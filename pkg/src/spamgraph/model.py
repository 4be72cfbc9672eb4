"""The detection network: risk-embedding fusion, gated graph attention layers,
and the MLP scoring head. Forward-pass definitions only; optimization lives in
the trainer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphbuild import ReviewGraph

# Risk vocabulary: a node's visible label during a forward pass.
RISK_NORMAL, RISK_FRAUD, RISK_UNKNOWN = 0, 1, 2

_CKPT_MAGIC = b"FSQ1"


@dataclass(frozen=True)
class ModelConfig:
    emb_dim: int
    layer_width: int = 96
    heads: int = 3
    layers: int = 2
    prelu_slope_init: float = 0.25
    attention_scaling: bool = False
    use_graph: bool = True
    feature_dim: int = 0

    def __post_init__(self):
        if self.layer_width % self.heads != 0:
            raise ValueError(
                f"layer_width {self.layer_width} not divisible by heads {self.heads}"
            )
        if self.layers < 1:
            raise ValueError("layers must be >= 1")

    @property
    def head_width(self) -> int:
        return self.layer_width // self.heads

    def layer_input_dim(self, layer: int) -> int:
        return self.emb_dim + self.feature_dim if layer == 0 else self.layer_width

    @property
    def mlp_input_dim(self) -> int:
        # Without graph layers the MLP consumes the fused (and
        # feature-concatenated) embedding directly.
        return self.layer_width if self.use_graph else self.emb_dim + self.feature_dim

    def to_dict(self) -> dict:
        return {
            "emb_dim": self.emb_dim,
            "layer_width": self.layer_width,
            "heads": self.heads,
            "layers": self.layers,
            "prelu_slope_init": self.prelu_slope_init,
            "attention_scaling": self.attention_scaling,
            "use_graph": self.use_graph,
            "feature_dim": self.feature_dim,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def param_names(config: ModelConfig) -> list[str]:
    """Canonical tensor order (also the checkpoint order)."""
    names = ["risk_table", "fusion_w1", "fusion_w2", "fusion_w3", "prelu_slope"]
    if config.use_graph:
        for layer in range(config.layers):
            for s in range(config.heads):
                names += [
                    f"layer{layer}_head{s}_wq",
                    f"layer{layer}_head{s}_wk",
                    f"layer{layer}_head{s}_wv",
                ]
            names += [f"layer{layer}_shortcut", f"layer{layer}_gate"]
    names += ["mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2"]
    return names


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def init_params(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Xavier-uniform weights, zero biases, small-normal risk table.

    Draw order follows param_names(), so the result is deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    d_emb = config.emb_dim
    d_l = config.layer_width
    d_h = config.head_width
    params: dict[str, np.ndarray] = {}
    params["risk_table"] = (rng.normal(0.0, 0.02, size=(3, d_emb))).astype(np.float32)
    for name in ("fusion_w1", "fusion_w2", "fusion_w3"):
        params[name] = _xavier(rng, d_emb, d_emb, (d_emb, d_emb))
    params["prelu_slope"] = np.asarray(config.prelu_slope_init, dtype=np.float32)
    if config.use_graph:
        for layer in range(config.layers):
            d_in = config.layer_input_dim(layer)
            for s in range(config.heads):
                for kind in ("wq", "wk", "wv"):
                    params[f"layer{layer}_head{s}_{kind}"] = _xavier(
                        rng, d_in, d_h, (d_in, d_h)
                    )
            params[f"layer{layer}_shortcut"] = _xavier(rng, d_in, d_l, (d_in, d_l))
            params[f"layer{layer}_gate"] = _xavier(rng, 3 * d_l, d_l, (3 * d_l, d_l))
    d_mlp = config.mlp_input_dim
    params["mlp_w1"] = _xavier(rng, d_mlp, d_l, (d_mlp, d_l))
    params["mlp_b1"] = np.zeros((1, d_l), dtype=np.float32)
    params["mlp_w2"] = _xavier(rng, d_l, 1, (d_l, 1))
    params["mlp_b2"] = np.zeros((1, 1), dtype=np.float32)
    return params


def as_tensors(params: dict[str, np.ndarray], dtype=None) -> dict[str, Tensor]:
    """Wrap parameter arrays as trainable tape leaves (optionally cast)."""
    out = {}
    for name, value in params.items():
        data = value if dtype is None else value.astype(dtype)
        out[name] = Tensor(data, requires_grad=True)
    return out


def fuse_node_embedding(x: Tensor, risk: np.ndarray, p: dict[str, Tensor]) -> Tensor:
    """H = X + PReLU(X W1 + Z[risk] W2) W3."""
    z_rows = ad.gather_rows(p["risk_table"], np.asarray(risk, dtype=np.int64))
    inner = ad.add(ad.matmul(x, p["fusion_w1"]), ad.matmul(z_rows, p["fusion_w2"]))
    h = ad.add(x, ad.matmul(ad.prelu(inner, p["prelu_slope"]), p["fusion_w3"]))
    if np.any(np.isnan(h.data)):
        raise FloatingPointError("NaN in fused node embeddings")
    return h


def ggt_layer_forward(
    h: Tensor, graph: ReviewGraph, p: dict[str, Tensor], layer: int, config: ModelConfig
) -> Tensor:
    """One gated graph attention layer.

    Multi-head neighbor attention, head outputs concatenated, blended with the
    linear shortcut projection through an elementwise sigmoid gate.
    """
    scale = 1.0 / np.sqrt(config.head_width) if config.attention_scaling else 1.0
    heads = []
    for s in range(config.heads):
        q = ad.matmul(h, p[f"layer{layer}_head{s}_wq"])
        k = ad.matmul(h, p[f"layer{layer}_head{s}_wk"])
        v = ad.matmul(h, p[f"layer{layer}_head{s}_wv"])
        heads.append(ad.csr_attention(q, k, v, graph.offsets, graph.neighbors, scale))
    h_tilde = ad.concat_cols(heads)
    shortcut = ad.matmul(h, p[f"layer{layer}_shortcut"])
    gate_in = ad.concat_cols([shortcut, h_tilde, ad.sub(shortcut, h_tilde)])
    gate = ad.sigmoid(ad.matmul(gate_in, p[f"layer{layer}_gate"]))
    # gate*O + (1-gate)*H~ written as H~ + gate*(O - H~)
    return ad.add(h_tilde, ad.mul(gate, ad.sub(shortcut, h_tilde)))


def mlp_head(h: Tensor, p: dict[str, Tensor]) -> Tensor:
    """logit = W2 . PReLU(W1 h + b1) + b2, returned as a length-n vector."""
    hidden = ad.prelu(ad.add(ad.matmul(h, p["mlp_w1"]), p["mlp_b1"]), p["prelu_slope"])
    return ad.flatten(ad.add(ad.matmul(hidden, p["mlp_w2"]), p["mlp_b2"]))


def forward(
    x: np.ndarray,
    features: np.ndarray | None,
    risk: np.ndarray,
    graph: ReviewGraph | None,
    p: dict[str, Tensor],
    config: ModelConfig,
) -> Tensor:
    """Full forward pass; returns per-node spam probabilities in (0, 1)."""
    dtype = p["fusion_w1"].data.dtype
    h = fuse_node_embedding(Tensor(np.asarray(x, dtype=dtype)), risk, p)
    if config.feature_dim:
        if features is None:
            raise ValueError("config.feature_dim set but no feature matrix given")
        h = ad.concat_cols([h, Tensor(np.asarray(features, dtype=dtype))])
    if config.use_graph:
        if graph is None:
            raise ValueError("use_graph=True requires a graph")
        for layer in range(config.layers):
            h = ggt_layer_forward(h, graph, p, layer, config)
    return ad.sigmoid(mlp_head(h, p))


def predict(
    x: np.ndarray,
    features: np.ndarray | None,
    risk: np.ndarray,
    graph: ReviewGraph | None,
    params: dict[str, np.ndarray],
    config: ModelConfig,
) -> np.ndarray:
    """Forward pass without gradient tracking; returns a probability array."""
    return forward(x, features, risk, graph, as_tensors(params), config).data


def save_checkpoint(path, config: ModelConfig, params: dict[str, np.ndarray]) -> None:
    """Binary checkpoint: magic, length-prefixed JSON config, named tensors in
    canonical order (name, rank, dims u64, float32 LE payload)."""
    config_blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        for name in param_names(config):
            value = np.atleast_1d(np.ascontiguousarray(params[name], dtype=np.float32))
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", value.ndim))
            for dim in value.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(value.astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError("bad checkpoint magic")
        (config_len,) = struct.unpack("<I", fh.read(4))
        config = ModelConfig.from_dict(json.loads(fh.read(config_len).decode("utf-8")))
        params: dict[str, np.ndarray] = {}
        for expected in param_names(config):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            if name != expected:
                raise ValueError(f"checkpoint tensor order mismatch: {name} != {expected}")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(rank))
            count = int(np.prod(shape)) if shape else 1
            payload = fh.read(4 * count)
            if len(payload) != 4 * count:
                raise ValueError(f"truncated checkpoint tensor {name}")
            params[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    params["prelu_slope"] = np.asarray(params["prelu_slope"].reshape(()), dtype=np.float32)
    return config, params
