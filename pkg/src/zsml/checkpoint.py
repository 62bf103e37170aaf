"""ZSMP parameter checkpoints.

Little-endian binary layout: magic ``ZSMP``, version u32, then one record
per tensor: name length u16, name bytes (utf-8), rank u8, dims u32 each,
float32 payload. Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .autodiff import Tensor
from .errors import FormatError, ShapeError
from .nets import NetConfig, NetParams

MAGIC = b"ZSMP"
VERSION = 1


def write_tensors(path: str | Path, named: Iterable[tuple[str, np.ndarray]]) -> None:
    """Write (name, array) records in the given order."""
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    seen: set[str] = set()
    for name, arr in named:
        if name in seen:
            raise FormatError(f"duplicate tensor name {name!r}")
        seen.add(name)
        arr = np.asarray(arr, dtype="<f4")  # tobytes() below emits C order
        if arr.ndim > 2:
            raise ShapeError(f"tensor {name!r} has rank {arr.ndim}, max is 2")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            chunks.append(struct.pack("<I", d))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_tensors(path: str | Path) -> dict[str, np.ndarray]:
    """Read all records; raises FormatError on bad magic, version or truncation."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise FormatError(f"not a ZSMP file: bad magic {blob[:4]!r}")
    if len(blob) < 8:
        raise FormatError("truncated ZSMP header")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported ZSMP version {version}")
    out: dict[str, np.ndarray] = {}
    pos = 8
    end = len(blob)

    def need(n: int, what: str) -> int:
        nonlocal pos
        if pos + n > end:
            raise FormatError(f"truncated ZSMP file while reading {what}")
        start = pos
        pos += n
        return start

    while pos < end:
        (name_len,) = struct.unpack_from("<H", blob, need(2, "name length"))
        name = blob[need(name_len, "name") : pos].decode("utf-8")
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}")
        (rank,) = struct.unpack_from("<B", blob, need(1, "rank"))
        if rank > 2:
            raise FormatError(f"tensor {name!r} has rank {rank}, max is 2")
        dims = tuple(
            struct.unpack_from("<I", blob, need(4, "dims"))[0] for _ in range(rank)
        )
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = blob[need(4 * count, f"payload of {name!r}") : pos]
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return out


def model_records(named_params: dict[str, NetParams]) -> list[tuple[str, np.ndarray]]:
    """Flatten named parameter sets into prefixed (name, array) records."""
    records = []
    for prefix, params in named_params.items():
        for name, tensor in params.named_tensors():
            records.append((f"{prefix}.{name}", tensor.data))
    return records


def save_model(path: str | Path, named_params: dict[str, NetParams]) -> None:
    write_tensors(path, model_records(named_params))


def load_model(path: str | Path, configs: dict[str, NetConfig]) -> dict[str, NetParams]:
    """Rebuild parameter sets from a checkpoint, validating names and shapes."""
    arrays = read_tensors(path)
    used: set[str] = set()
    out: dict[str, NetParams] = {}
    for prefix, config in configs.items():
        skeleton = _empty_params(config)
        for name, tensor in skeleton.named_tensors():
            full = f"{prefix}.{name}"
            if full not in arrays:
                raise FormatError(f"checkpoint is missing tensor {full!r}")
            arr = arrays[full]
            if arr.shape != tensor.shape:
                raise ShapeError(
                    f"checkpoint tensor {full!r} has shape {arr.shape}, "
                    f"expected {tensor.shape}"
                )
            tensor.data = arr.astype(np.float32, copy=True)
            used.add(full)
        out[prefix] = skeleton
    extra = set(arrays) - used
    if extra:
        raise FormatError(f"checkpoint has unexpected tensors: {sorted(extra)[:4]}")
    return out


def _empty_params(config: NetConfig) -> NetParams:
    n_hidden = len(config.hidden_dims)
    weights, biases, gammas, betas = [], [], [], []
    for i, (fan_in, fan_out) in enumerate(config.layer_dims):
        weights.append(Tensor(np.zeros((fan_in, fan_out), np.float32), requires_grad=True))
        biases.append(Tensor(np.zeros(fan_out, np.float32), requires_grad=True))
        if i < n_hidden:
            if config.use_batchnorm:
                gammas.append(Tensor(np.ones(fan_out, np.float32), requires_grad=True))
                betas.append(Tensor(np.zeros(fan_out, np.float32), requires_grad=True))
            else:
                gammas.append(None)
                betas.append(None)
    return NetParams(config=config, weights=weights, biases=biases, gammas=gammas, betas=betas)
