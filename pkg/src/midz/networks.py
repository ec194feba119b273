"""Encoders, statistics networks and the joint-vs-marginal discriminator.

Every network is a plain dict of named parameter tensors plus pure
functions over (params, inputs). Encoders factor as ``f(C(x))``: ``C`` is
two strided 4x4 convolutions producing a spatial feature map, ``f`` one
more convolution and a linear layer producing the flat representation.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .autodiff import DTYPE, ShapeError, Tensor, ops

Params = dict[str, Tensor]

LEAK = 0.2
GLOBAL_WIDTH = 512
LOCAL_WIDTH = 128
DISC_WIDTH = 256
_PROB_HI = float(np.nextafter(DTYPE(1), DTYPE(0)))
_PROB_LO = float(np.finfo(DTYPE).tiny)


@dataclass(frozen=True)
class EncoderConfig:
    image_shape: tuple[int, int, int] = (32, 32, 3)
    rep_dim: int = 64
    channels: tuple[int, int, int] = (32, 64, 128)

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        h, w, _ = self.image_shape
        return (h // 4, w // 4, self.channels[1])

    @property
    def head_inputs(self) -> int:
        h, w, _ = self.image_shape
        return (h // 8) * (w // 8) * self.channels[2]


def network_rng(seed: int, name: str) -> np.random.Generator:
    """Per-network generator so one network's init never shifts another's."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(DTYPE), requires_grad=True)


def _dense(params: Params, prefix: str, rng, n_in: int, n_out: int, zero: bool = False) -> None:
    if zero:
        params[f"{prefix}.w"] = Tensor(np.zeros((n_in, n_out), DTYPE), requires_grad=True)
        params[f"{prefix}.b"] = Tensor(np.zeros((n_out,), DTYPE), requires_grad=True)
    else:
        params[f"{prefix}.w"] = _uniform(rng, (n_in, n_out), n_in)
        params[f"{prefix}.b"] = _uniform(rng, (n_out,), n_in)


def _linear(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    return ops.bias_add(ops.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


# ---------------------------------------------------------------- encoders

def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> Params:
    h, w, ch = cfg.image_shape
    if h % 8 or w % 8:
        raise ShapeError(f"encoder: image extents {(h, w)} must be multiples of 8")
    c1, c2, c3 = cfg.channels
    p: Params = {}
    for name, cin, cout in (("conv1", ch, c1), ("conv2", c1, c2), ("conv3", c2, c3)):
        fan_in = 16 * cin
        p[f"{name}.w"] = _uniform(rng, (4, 4, cin, cout), fan_in)
        p[f"{name}.b"] = _uniform(rng, (cout,), fan_in)
    _dense(p, "fc", rng, cfg.head_inputs, cfg.rep_dim)
    return p


def _conv(x: Tensor, params: Mapping[str, Tensor], name: str) -> Tensor:
    y = ops.conv2d(x, params[f"{name}.w"], stride=2, padding=1)
    return ops.leaky_relu(ops.bias_add(y, params[f"{name}.b"]), LEAK)


def feature_map(x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """C(x): the (batch, h/4, w/4, ch) map the local objective scores."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    cin = params["conv1.w"].shape[2]
    if x.ndim != 4 or x.shape[3] != cin:
        raise ShapeError(f"encoder: expected (batch, H, W, {cin}) images, got {x.shape}")
    return _conv(_conv(x, params, "conv1"), params, "conv2")


def representation_head(fmap: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """f(C): flat representation from the feature map."""
    h = ops.flatten(_conv(fmap, params, "conv3"))
    if h.shape[1] != params["fc.w"].shape[0]:
        raise ShapeError(f"encoder: head expects {params['fc.w'].shape[0]} features, got {h.shape[1]}")
    return _linear(h, params, "fc")


def encode(x, params: Mapping[str, Tensor]) -> tuple[Tensor, Tensor]:
    fmap = feature_map(x, params)
    return fmap, representation_head(fmap, params)


def encode_shared(x, params: Mapping[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Feature map and shared representation S."""
    return encode(x, params)


def encode_exclusive(x, params: Mapping[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Feature map and exclusive representation E; never reads shared-encoder params."""
    return encode(x, params)


# ---------------------------------------------------------- statistics nets

def init_global_scorer(feature_shape, z_dim: int, rng, zero_output: bool = False) -> Params:
    n_feat = int(np.prod(feature_shape))
    p: Params = {}
    _dense(p, "summary", rng, n_feat, GLOBAL_WIDTH)
    _dense(p, "joint", rng, GLOBAL_WIDTH + z_dim, GLOBAL_WIDTH)
    _dense(p, "out", rng, GLOBAL_WIDTH, 1, zero=zero_output)
    return p


def global_summary(fmap: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    flat = ops.flatten(fmap)
    if flat.shape[1] != params["summary.w"].shape[0]:
        raise ShapeError(f"global_score: feature map {fmap.shape} does not match scorer input {params['summary.w'].shape[0]}")
    return ops.relu(_linear(flat, params, "summary"))


def global_head(summary: Tensor, z: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    z_dim = params["joint.w"].shape[0] - summary.shape[1]
    if z.ndim != 2 or z.shape[0] != summary.shape[0] or z.shape[1] != z_dim:
        raise ShapeError(f"global_score: representation {z.shape} incompatible with summary {summary.shape} (z_dim {z_dim})")
    h = ops.relu(_linear(ops.concat([summary, z], axis=1), params, "joint"))
    return ops.reshape(_linear(h, params, "out"), (summary.shape[0],))


def global_score(fmap: Tensor, z: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """T(x, z): one unbounded score per row."""
    return global_head(global_summary(fmap, params), z, params)


def init_local_scorer(channels: int, z_dim: int, rng, zero_output: bool = False) -> Params:
    # first 1x1 conv acts on concat(C, z); its weight is kept as two row blocks
    fan_in = channels + z_dim
    p: Params = {
        "embed_c.w": _uniform(rng, (channels, LOCAL_WIDTH), fan_in),
        "embed_z.w": _uniform(rng, (z_dim, LOCAL_WIDTH), fan_in),
        "embed.b": _uniform(rng, (LOCAL_WIDTH,), fan_in),
    }
    _dense(p, "hidden", rng, LOCAL_WIDTH, LOCAL_WIDTH)
    _dense(p, "out", rng, LOCAL_WIDTH, 1, zero=zero_output)
    return p


def local_embed(fmap: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    if fmap.ndim != 4 or fmap.shape[3] != params["embed_c.w"].shape[0]:
        raise ShapeError(f"local_scores: feature map {fmap.shape} incompatible with scorer channels {params['embed_c.w'].shape[0]}")
    return ops.conv1x1(fmap, params["embed_c.w"])


def local_head(embedded: Tensor, z: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    B, H, W, _ = embedded.shape
    if z.ndim != 2 or z.shape[0] != B or z.shape[1] != params["embed_z.w"].shape[0]:
        raise ShapeError(f"local_scores: representation {z.shape} incompatible with feature batch {B} / z_dim {params['embed_z.w'].shape[0]}")
    zc = ops.reshape(ops.matmul(z, params["embed_z.w"]), (B, 1, 1, LOCAL_WIDTH))
    h = ops.relu(ops.bias_add(embedded + zc, params["embed.b"]))
    h = ops.relu(ops.bias_add(ops.conv1x1(h, params["hidden.w"]), params["hidden.b"]))
    out = ops.bias_add(ops.conv1x1(h, params["out.w"]), params["out.b"])
    return ops.reshape(out, (B, H, W))


def local_scores(fmap: Tensor, z: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Per-location scores (batch, h, w) with z broadcast onto every location."""
    return local_head(local_embed(fmap, params), z, params)


# ------------------------------------------------------------ discriminator

def init_discriminator(s_dim: int, e_dim: int, rng, zero_output: bool = False) -> Params:
    p: Params = {}
    _dense(p, "l1", rng, s_dim + e_dim, DISC_WIDTH)
    _dense(p, "l2", rng, DISC_WIDTH, DISC_WIDTH)
    _dense(p, "l3", rng, DISC_WIDTH, 1, zero=zero_output)
    return p


def discriminator_logits(s: Tensor, e: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    if s.ndim != 2 or e.ndim != 2 or s.shape[0] != e.shape[0]:
        raise ShapeError(f"discriminate: row mismatch between s {s.shape} and e {e.shape}")
    if s.shape[1] + e.shape[1] != params["l1.w"].shape[0]:
        raise ShapeError(f"discriminate: |s|+|e| = {s.shape[1] + e.shape[1]} but network expects {params['l1.w'].shape[0]}")
    h = ops.relu(_linear(ops.concat([s, e], axis=1), params, "l1"))
    h = ops.relu(_linear(h, params, "l2"))
    return ops.reshape(_linear(h, params, "l3"), (s.shape[0],))


def discriminate(s: Tensor, e: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Probability that (s, e) comes from the product of marginals; strictly inside (0, 1)."""
    return ops.clip(ops.sigmoid(discriminator_logits(s, e, params)), _PROB_LO, _PROB_HI)


def detached(params: Mapping[str, Tensor]) -> Params:
    return {k: v.detach() for k, v in params.items()}
