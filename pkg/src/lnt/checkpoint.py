"""Bit-exact binary checkpoints.

Layout (all little-endian): magic ``LNTC``, version u32, tensor count u32;
then per tensor: name length u16, UTF-8 name, rank u8, each dim u32, and
the values as raw 32-bit IEEE-754 floats in row-major order.  Tensors are
written in sorted name order so identical contents give identical bytes.
"""

from __future__ import annotations

import struct

import numpy as np

from .model import ModelConfig, ModelParams, Tensor
from .tensor import GruParams

MAGIC = b"LNTC"
VERSION = 1


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name in sorted(arrays):
        # note: ascontiguousarray would promote 0-d scalars to shape (1,)
        arr = np.asarray(arrays[name], dtype="<f4")
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise ValueError(f"tensor rank too large: {arr.ndim}")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_arrays(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()

    def chomp(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise ValueError(f"truncated checkpoint: {path}")
        piece = blob[off : off + n]
        off += n
        return piece

    off = 0
    if chomp(4) != MAGIC:
        raise ValueError(f"not a checkpoint file (bad magic): {path}")
    version, count = struct.unpack("<II", chomp(8))
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", chomp(2))
        name = chomp(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", chomp(1))
        shape = struct.unpack(f"<{rank}I", chomp(4 * rank))
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arrays[name] = np.frombuffer(chomp(4 * n), dtype="<f4").reshape(shape).copy()
    if off != len(blob):
        raise ValueError(f"trailing bytes in checkpoint: {path}")
    return arrays


# ---------------------------------------------------------------------------
# model round-trip

_CONFIG_SCALARS = (
    "in_channels", "dim_z", "dim_c", "K", "L",
    "bank_layers", "bank_width", "conv_bias", "separate_ddcl_heads", "sub_seq",
)


def model_to_arrays(params: ModelParams) -> dict[str, np.ndarray]:
    out = {name: t.data for name, t in params.named_parameters().items()}
    cfg = params.config
    for name in _CONFIG_SCALARS:
        out[f"config.{name}"] = np.asarray(float(getattr(cfg, name)))
    out["config.filters"] = np.asarray(cfg.filters, dtype=float)
    out["config.strides"] = np.asarray(cfg.strides, dtype=float)
    return out


def model_from_arrays(arrays: dict[str, np.ndarray]) -> tuple[ModelParams, dict[str, np.ndarray]]:
    """Rebuild a model; returns (params, leftover non-model arrays)."""
    try:
        kwargs = {name: int(arrays[f"config.{name}"]) for name in _CONFIG_SCALARS}
        kwargs["conv_bias"] = bool(kwargs["conv_bias"])
        kwargs["separate_ddcl_heads"] = bool(kwargs["separate_ddcl_heads"])
        kwargs["filters"] = tuple(int(v) for v in arrays["config.filters"])
        kwargs["strides"] = tuple(int(v) for v in arrays["config.strides"])
    except KeyError as missing:
        raise ValueError(f"checkpoint lacks config entry {missing}") from None
    cfg = ModelConfig(**kwargs)

    used = {f"config.{n}" for n in _CONFIG_SCALARS} | {"config.filters", "config.strides"}

    def grab(name: str) -> Tensor:
        if name not in arrays:
            raise ValueError(f"checkpoint lacks tensor {name!r}")
        used.add(name)
        return Tensor(arrays[name], requires_grad=True)

    params = ModelParams(config=cfg)
    for i in range(len(cfg.filters)):
        w = grab(f"encoder.layer{i}.weight")
        b = grab(f"encoder.layer{i}.bias") if cfg.conv_bias else None
        params.encoder.append((w, b))
    gru = {}
    for name in GruParams._fields:
        label = name if name.startswith("b") else name[0].upper() + name[1:]
        gru[name] = grab(f"context.{label}")
    params.context = GruParams(**gru)
    params.context_out_bias = grab("context.out_bias")
    params.heads = [grab(f"heads.W{k}") for k in range(1, cfg.K + 1)]
    if cfg.separate_ddcl_heads:
        params.ddcl_heads = [grab(f"ddcl_heads.W{k}") for k in range(1, cfg.K + 1)]
    for l in range(1, cfg.L + 1):
        params.bank.append(
            [grab(f"bank.T{l}.layer{j}.weight") for j in range(cfg.bank_layers)]
        )
    if "decoder.layer0.weight" in arrays:
        params.decoder = [
            (grab(f"decoder.layer{i}.weight"), grab(f"decoder.layer{i}.bias"))
            for i in range(len(cfg.filters))
        ]
    leftover = {k: v for k, v in arrays.items() if k not in used}
    return params, leftover


def save_model(path, params: ModelParams, extra: dict[str, np.ndarray] | None = None) -> None:
    arrays = model_to_arrays(params)
    if extra:
        overlap = set(arrays) & set(extra)
        if overlap:
            raise ValueError(f"extra arrays collide with model tensors: {sorted(overlap)}")
        arrays.update(extra)
    save_arrays(path, arrays)


def load_model(path) -> tuple[ModelParams, dict[str, np.ndarray]]:
    return model_from_arrays(load_arrays(path))
