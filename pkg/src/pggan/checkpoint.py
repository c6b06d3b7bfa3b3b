"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      8 bytes   b"PGGANCKP"
    version    uint32
    cfg hash   32 bytes  sha256 of the canonical network-config JSON
    hdr len    uint32
    header     UTF-8 JSON (sorted keys): configs, step, RNG state, loss
               history, Adam step counts, and a blob table
    blobs      raw arrays, '<f4' unless the table says otherwise

Blob names are ``param/<name>``, ``adam_m/<name>`` and ``adam_v/<name>``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .adam import AdamState
from .networks import Network, build_discriminator, build_generator
from .tensor import Parameter
from .training import LossReport, TrainConfig, TrainState

MAGIC = b"PGGANCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(net_config: dict) -> bytes:
    return hashlib.sha256(json.dumps(net_config, sort_keys=True).encode()).digest()


def _blob(name: str, arr: np.ndarray, table: list, chunks: list, offset: int) -> int:
    data = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
    raw = data.tobytes()
    table.append({"name": name, "shape": list(arr.shape), "dtype": data.dtype.str, "offset": offset,
                  "nbytes": len(raw)})
    chunks.append(raw)
    return offset + len(raw)


def checkpoint_save(state: TrainState, path, generator_only: bool = False) -> None:
    """Write ``state``; ``generator_only`` keeps just the generator weights."""
    net_config = dict(state.net_config)
    if generator_only:
        net_config = {"generator": net_config["generator"]}
    nets = [state.generator] if generator_only else state.networks()
    table, chunks, offset = [], [], 0
    for net in nets:
        for name, p in net.params.items():
            offset = _blob(f"param/{name}", p.data, table, chunks, offset)
    adam_t = {}
    if not generator_only:
        for name in sorted(state.adam.m):
            offset = _blob(f"adam_m/{name}", state.adam.m[name], table, chunks, offset)
            offset = _blob(f"adam_v/{name}", state.adam.v[name], table, chunks, offset)
        adam_t = {k: state.adam.t[k] for k in sorted(state.adam.t)}
    header = {
        "kind": "generator" if generator_only else "full",
        "net_config": net_config,
        "train_config": state.config.to_dict(),
        "step": state.step,
        "rng": None if generator_only else state.rng.bit_generator.state,
        "history": [] if generator_only else [list(vars(r).values()) for r in state.history],
        "adam_t": adam_t,
        "blobs": table,
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(config_hash(net_config))
        f.write(struct.pack("<I", len(hdr)))
        f.write(hdr)
        for c in chunks:
            f.write(c)
    os.replace(tmp, path)


def read_header(path) -> tuple:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {raw[:8]!r})")
    (version,) = struct.unpack("<I", raw[8:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    digest = raw[12:44]
    (n,) = struct.unpack("<I", raw[44:48])
    header = json.loads(raw[48:48 + n].decode())
    if config_hash(header["net_config"]) != digest:
        raise CheckpointError(f"{path}: network config hash does not match header")
    return header, memoryview(raw)[48 + n:]


def _empty_network(spec) -> Network:
    return Network(spec, {k: Parameter(np.zeros(s, dtype=np.float32), k) for k, s in spec.param_shapes().items()})


def _load_params(net: Network, blobs: dict, path) -> None:
    for name, p in net.params.items():
        arr = blobs.get(f"param/{name}")
        if arr is None:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if arr.shape != p.shape:
            raise CheckpointError(f"{path}: parameter {name} has shape {list(arr.shape)}, network expects {list(p.shape)}")
        net.params[name] = Parameter(arr, name)


def checkpoint_load(path, expect_net_config: Optional[dict] = None) -> TrainState:
    """Restore a state; raises :class:`CheckpointError` on version, config or shape mismatch."""
    header, body = read_header(path)
    net_config = header["net_config"]
    if expect_net_config is not None:
        expected = expect_net_config if header["kind"] == "full" else {"generator": expect_net_config["generator"]}
        if config_hash(expected) != config_hash(net_config):
            raise CheckpointError(
                f"{path}: network config mismatch\n  checkpoint: {json.dumps(net_config, sort_keys=True)}"
                f"\n  expected:   {json.dumps(expected, sort_keys=True)}")
    blobs = {}
    for entry in header["blobs"]:
        arr = np.frombuffer(body, dtype=np.dtype(entry["dtype"]), count=int(np.prod(entry["shape"])),
                            offset=entry["offset"]).reshape(entry["shape"])
        blobs[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)

    gen = _empty_network(build_generator(**net_config["generator"]))
    _load_params(gen, blobs, path)
    disc = None
    if net_config.get("discriminator"):
        disc = _empty_network(build_discriminator(**net_config["discriminator"]))
        _load_params(disc, blobs, path)

    adam = AdamState()
    for name, t in header["adam_t"].items():
        adam.m[name] = blobs[f"adam_m/{name}"]
        adam.v[name] = blobs[f"adam_v/{name}"]
        adam.t[name] = int(t)
    rng = np.random.default_rng()
    if header["rng"] is not None:
        rng.bit_generator.state = header["rng"]
    history = [LossReport(*row) for row in header["history"]]
    return TrainState(gen, disc, net_config, TrainConfig.from_dict(header["train_config"]), adam,
                      header["step"], rng, history)


def load_generator(path) -> Network:
    """Generator weights from a full or generator-only checkpoint."""
    return checkpoint_load(path).generator
