"""Binary model checkpoints.

Layout: magic ``FRGT1``, one format-version byte, then a block per named
parameter (uint16 name length, UTF-8 name, uint8 rank, uint32 dims,
row-major float64 little-endian values), and a trailing CRC32 of all
block bytes. Architecture is rebuilt from the names and shapes alone:
hidden layers are relu, output layers linear, except gate outputs which
are sigmoid.
"""

from __future__ import annotations

import re
import struct
import zlib

import numpy as np

from .nets import MLP, ForgettingModel
from .tensor import Tensor

MAGIC = b"FRGT1"
VERSION = 1

_NAME_RE = re.compile(r"^(encoder|decoder|gate(\d+)|predictor(\d+)|discriminator(\d+))"
                      r"\.L(\d+)\.(W|b)$")


class CheckpointError(Exception):
    """Base class for unreadable checkpoint files."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


def encode_blocks(named_arrays):
    """Encode (name, array) pairs as the raw block byte stream."""
    payload = bytearray()
    for name, arr in named_arrays:
        arr = np.asarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        payload += struct.pack("<H", len(encoded))
        payload += encoded
        payload += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            payload += struct.pack("<I", d)
        payload += arr.astype("<f8").tobytes()
    return bytes(payload)


def decode_blocks(payload, origin="payload"):
    """Decode a block byte stream back into (name, array) pairs."""
    out = []
    pos = 0
    end = len(payload)

    def take(n, what):
        nonlocal pos
        if pos + n > end:
            raise CheckpointTruncatedError(f"{origin}: truncated inside {what}")
        chunk = payload[pos:pos + n]
        pos += n
        return chunk

    while pos < end:
        (name_len,) = struct.unpack("<H", take(2, "block header"))
        name = take(name_len, "block name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "block rank"))
        dims = [struct.unpack("<I", take(4, "block dims"))[0] for _ in range(rank)]
        count = int(np.prod(dims)) if dims else 1
        raw = take(8 * count, f"values of {name!r}")
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
        out.append((name, arr))
    return out


def save_arrays(path, named_arrays):
    """Write (name, array) pairs in the checkpoint encoding."""
    payload = encode_blocks(named_arrays)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_arrays(path):
    """Read (name, array) pairs; validates magic, version, and checksum."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < len(MAGIC) + 1 + 4:
        raise CheckpointTruncatedError(f"{path}: file too short to be a checkpoint")
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointVersionError(f"{path}: bad magic, not a checkpoint file")
    version = buf[len(MAGIC)]
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, "
                                     f"expected {VERSION}")
    payload = buf[len(MAGIC) + 1:-4]
    (stored_crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(payload) != stored_crc:
        raise CheckpointChecksumError(f"{path}: checksum mismatch, file is corrupt")
    return decode_blocks(payload, origin=str(path))


def _group_layers(named_arrays):
    nets = {}
    for name, arr in named_arrays:
        match = _NAME_RE.match(name)
        if match is None:
            raise CheckpointError(f"unrecognized parameter name {name!r}")
        net_name = match.group(1)
        layer = int(match.group(5))
        kind = match.group(6)
        nets.setdefault(net_name, {}).setdefault(layer, {})[kind] = arr
    return nets


def _build_mlp(net_name, layers_dict):
    indices = sorted(layers_dict)
    if indices != list(range(len(indices))):
        raise CheckpointError(f"{net_name}: non-contiguous layer indices {indices}")
    layers = []
    widths = None
    for i in indices:
        entry = layers_dict[i]
        if "W" not in entry or "b" not in entry:
            raise CheckpointError(f"{net_name}.L{i}: missing weight or bias block")
        w, b = entry["W"], entry["b"]
        if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[1]:
            raise CheckpointError(f"{net_name}.L{i}: inconsistent block shapes")
        if widths is None:
            widths = [w.shape[0]]
        elif widths[-1] != w.shape[0]:
            raise CheckpointError(f"{net_name}.L{i}: width chain broken")
        widths.append(w.shape[1])
        layers.append((Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)))
    activation = "sigmoid" if net_name.startswith("gate") else "linear"
    return MLP(net_name, widths, rng=None, output_activation=activation,
               params=layers)


def model_from_arrays(named_arrays):
    nets = _group_layers(named_arrays)
    if "encoder" not in nets or "decoder" not in nets:
        raise CheckpointError("checkpoint lacks encoder or decoder blocks")
    task_ids = sorted(int(n[4:]) for n in nets if n.startswith("gate"))
    if not task_ids or task_ids != list(range(len(task_ids))):
        raise CheckpointError(f"unexpected gate task indices {task_ids}")
    gates, preds, discs = [], [], []
    for j in task_ids:
        for prefix, dest in (("gate", gates), ("predictor", preds),
                             ("discriminator", discs)):
            key = f"{prefix}{j}"
            if key not in nets:
                raise CheckpointError(f"checkpoint lacks {key} blocks")
            dest.append(_build_mlp(key, nets[key]))
    encoder = _build_mlp("encoder", nets["encoder"])
    decoder = _build_mlp("decoder", nets["decoder"])
    return ForgettingModel(encoder, decoder, gates, preds, discs)


def save_checkpoint(model, path):
    save_arrays(path, [(name, p.data) for name, p in model.named_params()])


def load_checkpoint(path):
    return model_from_arrays(load_arrays(path))
