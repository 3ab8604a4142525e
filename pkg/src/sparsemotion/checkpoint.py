"""Checkpoint container.

Layout (little-endian)::

    offset  size  field
    0       4     magic b"SMCK"
    4       4     uint32 format version (1)
    8       8     uint64 header length H
    16      H     UTF-8 JSON header
    16+H    ...   tensor blobs, concatenated in header order

The header holds ``model_config``, ``train_config``, ``schedule``, ``step``,
free-form ``extra`` and ``tensors``: a list of ``{"name", "dtype", "shape",
"offset", "nbytes"}`` with offsets relative to the start of the blob area.
Blobs are raw row-major data in the listed dtype (``float32``, ``float64``
or ``int64``).  Model parameters are named ``model/<param>``, AdamW moments
``optim/<param>/exp_avg`` and ``optim/<param>/exp_avg_sq`` with the optimizer
step counts in ``optim/<param>/step``.
"""

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .data_io import atomic_write_bytes
from .errors import ConfigMismatch, FormatError, VersionError

MAGIC = b"SMCK"
VERSION = 1
_HEAD = struct.Struct("<4sIQ")
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


def _blob(t):
    arr = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
    name = str(arr.dtype)
    if name not in _DTYPES:
        raise TypeError(f"unsupported tensor dtype {arr.dtype}")
    return name, list(arr.shape), np.ascontiguousarray(arr, dtype=_DTYPES[name]).tobytes()


def encode(header, tensors):
    entries, blobs, off = [], [], 0
    for name, t in tensors.items():
        dtype, shape, data = _blob(t)
        entries.append({"name": name, "dtype": dtype, "shape": shape, "offset": off, "nbytes": len(data)})
        blobs.append(data)
        off += len(data)
    header = dict(header, tensors=entries)
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _HEAD.pack(MAGIC, VERSION, len(hb)) + hb + b"".join(blobs)


def decode(buf, name="<bytes>"):
    if len(buf) < _HEAD.size:
        raise FormatError(f"{name}: truncated checkpoint")
    magic, version, hlen = _HEAD.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"{name}: unsupported checkpoint version {version}")
    base = _HEAD.size + hlen
    header = json.loads(buf[_HEAD.size : base].decode())
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(buf):
            raise FormatError(f"{name}: tensor {e['name']} runs past end of file")
        arr = np.frombuffer(buf, dtype=_DTYPES[e["dtype"]], count=int(np.prod(e["shape"], dtype=np.int64)), offset=start)
        tensors[e["name"]] = torch.from_numpy(arr.reshape(e["shape"]).copy())
    return header, tensors


def state_tensors(model, optimizer=None):
    out = {f"model/{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                st = optimizer.state.get(p)
                if not st:
                    continue
                n = names[id(p)]
                out[f"optim/{n}/exp_avg"] = st["exp_avg"]
                out[f"optim/{n}/exp_avg_sq"] = st["exp_avg_sq"]
                out[f"optim/{n}/step"] = torch.tensor([float(st["step"])], dtype=torch.float64)
    return out


def save(path, model, optimizer=None, **header):
    header = dict(header)
    header["model_config"] = model.cfg.to_dict()
    atomic_write_bytes(path, encode(header, state_tensors(model, optimizer)))


def load(path):
    return decode(Path(path).read_bytes(), name=str(path))


def restore_model(model, tensors, header=None):
    if header is not None and header.get("model_config") != model.cfg.to_dict():
        raise ConfigMismatch("checkpoint model config does not match the requested model")
    state = {k[len("model/") :]: v for k, v in tensors.items() if k.startswith("model/")}
    model.load_state_dict(state)


def restore_optimizer(optimizer, model, tensors):
    for n, p in model.named_parameters():
        key = f"optim/{n}"
        if f"{key}/exp_avg" not in tensors:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(float(tensors[f"{key}/step"][0])),
            "exp_avg": tensors[f"{key}/exp_avg"].clone(),
            "exp_avg_sq": tensors[f"{key}/exp_avg_sq"].clone(),
        }
