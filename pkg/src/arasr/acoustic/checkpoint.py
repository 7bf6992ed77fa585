"""Versioned binary checkpoints.

Layout::

    magic  b"ARASRCKP"
    uint32 format version
    uint32 header length in bytes
    header canonical JSON (sorted keys): architecture, alphabet, training state, tensor table
    body   little-endian float32 tensors: parameters, buffers, then Adam first/second
           moments, each group in parameter declaration order

Tensors are stored as float32 whatever the in-memory dtype, so float64
networks round-trip only to single precision.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import AcousticNet, ArchitectureConfig, ConfigurationError
from .optim import OptimizerState

MAGIC = b"ARASRCKP"
VERSION = 1
_PREFIX = struct.Struct("<8sII")
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    net: AcousticNet
    optimizer: OptimizerState | None = None
    alphabet_symbols: tuple[str, ...] = ()
    alphabet_digest: str = ""
    state: dict = field(default_factory=dict)  # epoch, best dev loss, history, ...


def _tensor_table(net: AcousticNet, with_optimizer: bool):
    table = [["param", k, list(v.shape)] for k, v in net.params.items()]
    table += [["buffer", k, list(v.shape)] for k, v in net.buffers.items()]
    if with_optimizer:
        table += [["adam_m", k, list(v.shape)] for k, v in net.params.items()]
        table += [["adam_v", k, list(v.shape)] for k, v in net.params.items()]
    return table


def header_dict(ckpt: Checkpoint) -> dict:
    net, opt = ckpt.net, ckpt.optimizer
    return {
        "architecture": net.arch.to_dict(),
        "num_classes": net.num_classes,
        "seed": net.seed,
        "alphabet": {"symbols": list(ckpt.alphabet_symbols), "digest": ckpt.alphabet_digest},
        "optimizer": None if opt is None else {"lr": opt.lr, "step": opt.step},
        "state": ckpt.state,
        "tensors": _tensor_table(net, opt is not None),
    }


def dumps(ckpt: Checkpoint) -> bytes:
    header = json.dumps(header_dict(ckpt), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, VERSION, len(header)), header]
    net, opt = ckpt.net, ckpt.optimizer
    groups = [net.params, net.buffers]
    if opt is not None:
        groups += [{k: opt.first_moment[k] for k in net.params}, {k: opt.second_moment[k] for k in net.params}]
    for group in groups:
        for v in group.values():
            parts.append(np.ascontiguousarray(v, dtype=_LE_F32).tobytes())
    return b"".join(parts)


def loads(data: bytes, expect: ArchitectureConfig | None = None) -> Checkpoint:
    """Parse a checkpoint; with ``expect`` the stored architecture must match it exactly."""
    if len(data) < _PREFIX.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    arch = ArchitectureConfig(**header["architecture"])
    if expect is not None and expect.canonical() != arch.canonical():
        raise ConfigurationError(
            "checkpoint architecture does not match the configuration:\n"
            f"  checkpoint: {arch.canonical()}\n  config:     {expect.canonical()}")
    net = AcousticNet(arch, header["num_classes"], seed=header["seed"])
    table = header["tensors"]
    if table != _tensor_table(net, header["optimizer"] is not None):
        raise CheckpointError("tensor table does not match the architecture")
    offset = start + hlen
    expected = offset + 4 * sum(int(np.prod(shape)) for _, _, shape in table)
    if len(data) != expected:
        raise CheckpointError(f"checkpoint body has {len(data) - offset} bytes, expected {expected - offset}")
    opt = None
    if header["optimizer"] is not None:
        opt = OptimizerState(lr=header["optimizer"]["lr"], step=header["optimizer"]["step"])
    dest = {"param": net.params, "buffer": net.buffers}
    if opt is not None:
        dest["adam_m"], dest["adam_v"] = opt.first_moment, opt.second_moment
    for kind, name, shape in table:
        n = int(np.prod(shape))
        arr = np.frombuffer(data, dtype=_LE_F32, count=n, offset=offset).reshape(shape).astype(net.dtype)
        dest[kind][name] = arr
        offset += 4 * n
    alpha = header["alphabet"]
    return Checkpoint(net, opt, tuple(alpha["symbols"]), alpha["digest"], header["state"])


def save(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(ckpt))
    tmp.replace(path)


def load(path, expect: ArchitectureConfig | None = None) -> Checkpoint:
    return loads(Path(path).read_bytes(), expect)
