"""Binary checkpoints.

Layout::

    b"SPKG" | u16 version | u32 manifest length | manifest (UTF-8 JSON) | float64 arrays

Integers and floats are little-endian. The manifest lists every array's
name and shape in storage order, plus the model and optimizer
hyperparameters, so a reader can validate the file before touching the
payload. Serialization is canonical: saving a restored checkpoint gives the
same bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .network import LayerSpec, SnnModel
from .neurons import NeuronParams, SurrogateSpec
from .tensor import Tensor
from .training import OptimizerState

MAGIC = b"SPKG"
VERSION = 1
_HEADER = struct.Struct("<4sHI")


class CheckpointError(ValueError):
    pass


class ArchitectureMismatchError(CheckpointError):
    pass


def _model_manifest(model: SnnModel) -> dict:
    return {
        "layers": [{"shape": list(l.shape),
                    "neuron": {"tau": l.neuron.tau, "v_th": l.neuron.v_th, "v_reset": l.neuron.v_reset,
                               "noise_variance": l.neuron.noise_variance},
                    "surrogate": {"kind": l.surrogate.kind, "width": l.surrogate.width}}
                   for l in model.layers],
        "readout_shape": list(model.readout.shape),
        "t_steps": model.t_steps,
        "decoder": model.decoder,
        "noise_active": model.noise_active,
        "detach_reset": model.detach_reset,
        "proxy_temperature": model.proxy_temperature,
    }


def encode(model: SnnModel, optimizer: Optional[OptimizerState] = None) -> bytes:
    arrays: List[Tuple[str, np.ndarray]] = [(f"weight{i}", l.weight.data) for i, l in enumerate(model.layers)]
    arrays.append(("readout", model.readout.data))
    opt = None
    if optimizer is not None:
        opt = {"base_lr": optimizer.base_lr, "momentum": optimizer.momentum, "epoch_max": optimizer.epoch_max,
               "weight_decay": optimizer.weight_decay, "epoch": optimizer.epoch,
               "buffers": optimizer.buffers is not None}
        if optimizer.buffers is not None:
            arrays += [(f"momentum{i}", b) for i, b in enumerate(optimizer.buffers)]
    manifest = {"model": _model_manifest(model), "optimizer": opt,
                "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays]}
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    return _HEADER.pack(MAGIC, VERSION, len(blob)) + blob + payload


def save(path, model: SnnModel, optimizer: Optional[OptimizerState] = None) -> None:
    Path(path).write_bytes(encode(model, optimizer))


def _shapes(model: SnnModel) -> List[Tuple[int, ...]]:
    return [tuple(l.shape) for l in model.layers] + [tuple(model.readout.shape)]


def decode(raw: bytes, expected: Optional[SnnModel] = None) -> Tuple[SnnModel, Optional[OptimizerState]]:
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"truncated checkpoint: {len(raw)} bytes, header needs {_HEADER.size}")
    magic, version, n_manifest = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint: magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (this reader handles {VERSION})")
    start = _HEADER.size
    if len(raw) < start + n_manifest:
        raise CheckpointError("truncated checkpoint: manifest cut short")
    try:
        manifest = json.loads(raw[start:start + n_manifest].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from exc
    offset = start + n_manifest
    arrays = []
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if len(raw) < offset + nbytes:
            raise CheckpointError(f"truncated checkpoint: array {entry['name']} needs {nbytes} bytes, "
                                  f"{max(len(raw) - offset, 0)} left")
        arrays.append(np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).astype(np.float64))
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{len(raw) - offset} trailing bytes after the last array")
    m = manifest["model"]
    n_layers = len(m["layers"])
    layers = [LayerSpec(Tensor(arrays[i], requires_grad=True), NeuronParams(**spec["neuron"]),
                        SurrogateSpec(**spec["surrogate"])) for i, spec in enumerate(m["layers"])]
    model = SnnModel(layers, Tensor(arrays[n_layers], requires_grad=True), t_steps=m["t_steps"],
                     decoder=m["decoder"], noise_active=m["noise_active"], detach_reset=m["detach_reset"],
                     proxy_temperature=m["proxy_temperature"])
    if expected is not None and _shapes(expected) != _shapes(model):
        raise ArchitectureMismatchError(f"checkpoint holds weight shapes {_shapes(model)} "
                                        f"but the configured model expects {_shapes(expected)}")
    optimizer = None
    o = manifest["optimizer"]
    if o is not None:
        buffers = [a.copy() for a in arrays[n_layers + 1:]] if o["buffers"] else None
        optimizer = OptimizerState(o["base_lr"], o["momentum"], o["epoch_max"], o["weight_decay"], o["epoch"], buffers)
    return model, optimizer


def load(path, expected: Optional[SnnModel] = None) -> Tuple[SnnModel, Optional[OptimizerState]]:
    """Read a checkpoint; ``expected`` (a model of the configured architecture) enables the shape check."""
    return decode(Path(path).read_bytes(), expected)


restore = load
checkpoint = save
