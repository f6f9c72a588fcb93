"""Self-describing binary model files.

Layout:

    magic "BGLM" | version u32 LE | header_len u32 LE | header JSON (utf-8)
    | payload: float64 LE arrays in header order | crc32(payload) u32 LE

The header lists every array name and shape (model parameters, batch-norm
running statistics, then optional Adam moments), so the payload length is
fully determined before reading it; a checksum mismatch, bad magic, or an
unknown version each raise their own error type.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .cells import CellVariant
from .errors import BadMagicError, ChecksumError, ModelFormatError, UnsupportedVersionError
from .network import AutoencoderConfig, ModelSnapshot
from .optim import AdamState

MAGIC = b"BGLM"
FORMAT_VERSION = 1


def variant_to_dict(v: CellVariant) -> dict:
    return {
        "tag": v.tag,
        "candidate_activation": v.candidate_activation,
        "ungated_candidate": v.ungated_candidate,
    }


def variant_from_dict(d: dict) -> CellVariant:
    return CellVariant(d["tag"], d["candidate_activation"], d.get("ungated_candidate", False))


def config_to_dict(cfg: AutoencoderConfig) -> dict:
    return {
        "frame_dim": cfg.frame_dim,
        "seq_len": cfg.seq_len,
        "hidden_dims": list(cfg.hidden_dims),
        "variant": variant_to_dict(cfg.variant),
        "activation": cfg.activation,
        "bn_epsilon": cfg.bn_epsilon,
        "bn_momentum": cfg.bn_momentum,
        "seed": cfg.seed,
    }


def config_from_dict(d: dict) -> AutoencoderConfig:
    return AutoencoderConfig(
        frame_dim=d["frame_dim"],
        seq_len=d["seq_len"],
        hidden_dims=tuple(d["hidden_dims"]),
        variant=variant_from_dict(d["variant"]),
        activation=d["activation"],
        bn_epsilon=d["bn_epsilon"],
        bn_momentum=d["bn_momentum"],
        seed=d["seed"],
    )


def adam_to_arrays(state: AdamState) -> tuple:
    meta = {"t": state.t, "lr": state.lr, "beta1": state.beta1,
            "beta2": state.beta2, "eps": state.eps}
    arrays = {f"m.{k}": v for k, v in state.m.items()}
    arrays |= {f"v.{k}": v for k, v in state.v.items()}
    return meta, arrays


def adam_from_arrays(meta: dict, arrays: dict) -> AdamState:
    m = {k[2:]: v for k, v in arrays.items() if k.startswith("m.")}
    v = {k[2:]: v for k, v in arrays.items() if k.startswith("v.")}
    return AdamState(meta["lr"], meta["beta1"], meta["beta2"], meta["eps"], meta["t"], m, v)


def save_model(snapshot: ModelSnapshot, path) -> None:
    """Write a snapshot; load_model(path) reproduces it bit-exactly."""
    names = list(snapshot.arrays.keys())
    arrays = dict(snapshot.arrays)
    optimizer_meta = None
    if snapshot.optimizer is not None:
        optimizer_meta, opt_arrays = snapshot.optimizer
        for k, v in opt_arrays.items():
            arrays[f"opt:{k}"] = v
            names.append(f"opt:{k}")

    header = {
        "config": config_to_dict(snapshot.config),
        "arrays": [[n, list(arrays[n].shape)] for n in names],
        "metadata": snapshot.metadata,
        "optimizer": optimizer_meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes() for n in names)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_model(path) -> ModelSnapshot:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a model file")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version} not supported")
    header_end = 12 + header_len
    if len(raw) < header_end + 4:
        raise ModelFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:header_end].decode("utf-8"))
        names_shapes = [(n, tuple(s)) for n, s in header["arrays"]]
        config = config_from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: malformed header: {exc}") from exc

    expected = sum(int(np.prod(s)) if s else 1 for _, s in names_shapes) * 8
    payload = raw[header_end:-4]
    if len(payload) != expected:
        raise ModelFormatError(
            f"{path}: payload is {len(payload)} bytes, header declares {expected}"
        )
    (stored_crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise ChecksumError(f"{path}: payload checksum mismatch")

    arrays = {}
    offset = 0
    for name, shape in names_shapes:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        arrays[name] = arr.reshape(shape).astype(np.float64)
        offset += count * 8

    model_arrays = {k: v for k, v in arrays.items() if not k.startswith("opt:")}
    optimizer = None
    if header.get("optimizer") is not None:
        opt_arrays = {k[4:]: v for k, v in arrays.items() if k.startswith("opt:")}
        optimizer = (header["optimizer"], opt_arrays)
    return ModelSnapshot(config, model_arrays, header.get("metadata", {}), optimizer)
