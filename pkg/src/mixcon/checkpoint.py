"""Binary checkpoint serialization.

Layout, with no padding anywhere:

    magic       4 bytes  b"MXCN"
    version     u32 little-endian, currently 1
    layer count u32 little-endian (layers in the spec, not tensors)
    tensors     for each parameter tensor, in layer order, weights
                before biases: rank u32, each dim u32, payload of
                float64 little-endian values in row-major order

The file carries parameter values only; reconstructing a Network needs
the architecture, so :func:`load_checkpoint` takes the NetworkSpec whose
parameter shapes the stored tensors must match.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError, FormatError
from .network import Network, NetworkSpec

MAGIC = b"MXCN"
VERSION = 1


def save_checkpoint(net: Network, path) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(net.spec.layers))]
    for p in net.params:
        if p is None:
            continue
        for arr in p:
            chunks.append(struct.pack("<I", arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def read_checkpoint_tensors(path):
    """Parse a checkpoint file; returns (layer_count, list of arrays)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r} at byte offset 0")
    if len(data) < 12:
        raise FormatError(f"truncated header at byte offset {len(data)}")
    version, layer_count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at byte offset 4")
    tensors = []
    off = 12
    while off < len(data):
        if off + 4 > len(data):
            raise FormatError(f"truncated tensor rank at byte offset {off}")
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        if rank > 8:
            raise FormatError(f"implausible rank {rank} at byte offset {off - 4}")
        if off + 4 * rank > len(data):
            raise FormatError(f"truncated tensor dims at byte offset {off}")
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        count = 1
        for d in dims:
            count *= d
        nbytes = 8 * count
        if off + nbytes > len(data):
            raise FormatError(f"truncated tensor payload at byte offset {off}")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off)
        tensors.append(arr.reshape(dims).astype(np.float64))
        off += nbytes
    return layer_count, tensors


def load_checkpoint(path, spec: NetworkSpec) -> Network:
    """Rebuild a Network from a checkpoint and its architecture."""
    layer_count, tensors = read_checkpoint_tensors(path)
    if layer_count != len(spec.layers):
        raise ConfigError(
            f"checkpoint stores {layer_count} layers, spec has {len(spec.layers)}"
        )
    params = []
    it = iter(tensors)
    try:
        for layer in spec.layers:
            from .network import _param_shapes

            shapes = _param_shapes(layer)
            if shapes is None:
                params.append(None)
            else:
                params.append((next(it), next(it)))
    except StopIteration:
        raise ConfigError("checkpoint holds fewer tensors than the spec needs")
    leftovers = sum(1 for _ in it)
    if leftovers:
        raise ConfigError(f"checkpoint holds {leftovers} extra tensors")
    return Network(spec, params)
