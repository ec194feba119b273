"""``MIDZ1`` checkpoints: a flat list of named float32 tensors.

Layout (little-endian): the magic ``MIDZ1``, then records until end of
file, each ``uint32 name_len, name, uint32 rank, uint32 extents[rank],
float32 data``. Records are written in sorted name order so equal bundles
produce equal bytes. Besides network parameters (``net/<key>/<param>``)
the file carries bundle metadata (``meta/...``) and optimizer state
(``adam/<optimizer>/...``).
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .autodiff import AdamState
from .model import OPTIMIZER_ROLES, ModelBundle

MAGIC = b"MIDZ1"


class CheckpointError(ValueError):
    pass


def bundle_tensors(bundle: ModelBundle) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {
        "meta/stage": np.array([bundle.stage]),
        "meta/weight_sharing": np.array([int(bundle.weight_sharing)]),
        "meta/image_shape": np.array(bundle.image_shape),
        "meta/dims": np.array([bundle.shared_dim, bundle.exclusive_dim]),
    }
    for name, t in bundle.flat_params().items():
        out[f"net/{name}"] = t.data
    for opt, st in bundle.optim.items():
        out[f"adam/{opt}/step"] = np.array([st.step])
        for name in st.m:
            out[f"adam/{opt}/m/{name}"] = st.m[name]
            out[f"adam/{opt}/v/{name}"] = st.v[name]
    return {k: np.asarray(v, dtype="<f4") for k, v in out.items()}


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)) + nb)
        buf.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def decode_tensors(raw: bytes) -> dict[str, np.ndarray]:
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"not a MIDZ1 checkpoint: magic {raw[:len(MAGIC)]!r} at byte offset 0")
    pos = len(MAGIC)
    out: dict[str, np.ndarray] = {}

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"truncated checkpoint: {what} at byte offset {pos}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    while pos < len(raw):
        (ln,) = struct.unpack("<I", take(4, "name length"))
        name = take(ln, "name").decode()
        (rank,) = struct.unpack("<I", take(4, f"rank of {name!r}"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, f"extents of {name!r}"))
        count = int(np.prod(shape, dtype=np.int64))
        # copy: frombuffer views are read-only and the optimizer updates in place
        out[name] = np.frombuffer(take(4 * count, f"data of {name!r}"), "<f4").reshape(shape).astype(np.float32)
    return out


def save_checkpoint(bundle: ModelBundle, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_tensors(bundle_tensors(bundle)))
    tmp.replace(path)


def load_checkpoint(path) -> ModelBundle:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    tensors = decode_tensors(path.read_bytes())
    try:
        stage = int(tensors["meta/stage"][0])
        sharing = bool(tensors["meta/weight_sharing"][0])
        image_shape = tuple(int(v) for v in tensors["meta/image_shape"])
        shared_dim, exclusive_dim = (int(v) for v in tensors["meta/dims"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks metadata tensor {exc}") from None

    bundle = ModelBundle.create(image_shape, shared_dim, exclusive_dim, sharing, seed=0)
    for name, t in bundle.flat_params().items():
        key = f"net/{name}"
        if key not in tensors:
            raise CheckpointError(f"checkpoint lacks parameter {name!r}")
        if tensors[key].shape != t.shape:
            raise CheckpointError(f"parameter {name!r}: stored shape {tensors[key].shape} != expected {t.shape}")
        t.data = tensors[key]
    for opt in OPTIMIZER_ROLES:
        st = AdamState()
        if f"adam/{opt}/step" in tensors:
            st.step = int(tensors[f"adam/{opt}/step"][0])
        prefix = f"adam/{opt}/m/"
        for key in tensors:
            if key.startswith(prefix):
                name = key[len(prefix):]
                st.m[name] = tensors[key]
                st.v[name] = tensors[f"adam/{opt}/v/{name}"]
        bundle.optim[opt] = st
    bundle.stage = stage
    if stage >= 2:
        bundle.freeze_shared()
    return bundle

