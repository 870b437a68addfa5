"""Binary containers: sparse mask files, snapshots, and byte accounting.

Mask container (all little-endian):
    magic "SSUP", version u8 = 1, layer count u16
    per layer: rows u32, cols u32, nnz u64,
               column pointers (cols + 1) x u64, row indices nnz x u16

The associative store is embedded in snapshots as an "SSHP" block holding
the coupling matrix and the running mean as little-endian f64 arrays. The
frozen network itself costs only its 8-byte seed.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .hopfield import HopfieldStore
from .masks import LAYER_OUTPUTS, WEIGHTS, Supermask
from .net import NetConfig

MASK_MAGIC = b"SSUP"
MASK_VERSION = 1
SNAPSHOT_MAGIC = b"SSNP"
SNAPSHOT_VERSION = 1
HOPFIELD_MAGIC = b"SSHP"
HOPFIELD_VERSION = 1

SEED_BYTES = 8  # storing the frozen net means storing one u64 seed


def _as_matrix(layer):
    return layer[:, None] if layer.ndim == 1 else layer


def serialize_mask(mask: Supermask) -> bytes:
    """Pack a binary mask in compressed sparse column form with u16 rows."""
    out = io.BytesIO()
    out.write(MASK_MAGIC)
    out.write(struct.pack("<BH", MASK_VERSION, len(mask.layers)))
    for idx, layer in enumerate(mask.layers):
        m = _as_matrix(layer)
        rows, cols = m.shape
        if rows > 0xFFFF:
            raise FormatError(
                f"layer {idx} has {rows} rows; row indices only span 16 bits"
            )
        r, c = np.nonzero(m)
        order = np.lexsort((r, c))  # column-major entry order
        r = r[order].astype("<u2")
        counts = np.bincount(c, minlength=cols)
        col_ptr = np.zeros(cols + 1, dtype="<u8")
        np.cumsum(counts, out=col_ptr[1:])
        out.write(struct.pack("<IIQ", rows, cols, r.size))
        out.write(col_ptr.tobytes())
        out.write(r.tobytes())
    return out.getvalue()


def _take(buf, count, what):
    data = buf.read(count)
    if len(data) != count:
        raise FormatError(f"truncated mask data while reading {what}")
    return data


def deserialize_mask(data: bytes, placement=WEIGHTS) -> Supermask:
    """Rebuild a mask from its container; inverse of serialize_mask.

    Layer-output masks are stored as single-column matrices, so the caller
    states the placement to get the vector shape back.
    """
    buf = io.BytesIO(data)
    magic = _take(buf, 4, "magic")
    if magic != MASK_MAGIC:
        raise FormatError(f"bad mask magic {magic!r} at offset 0")
    version, layer_count = struct.unpack("<BH", _take(buf, 3, "header"))
    if version != MASK_VERSION:
        raise FormatError(f"unsupported mask version {version}")
    layers = []
    for idx in range(layer_count):
        rows, cols, nnz = struct.unpack("<IIQ", _take(buf, 16, f"layer {idx} header"))
        col_ptr = np.frombuffer(
            _take(buf, 8 * (cols + 1), f"layer {idx} pointers"), dtype="<u8"
        )
        row_idx = np.frombuffer(_take(buf, 2 * nnz, f"layer {idx} rows"), dtype="<u2")
        m = np.zeros((rows, cols))
        for j in range(cols):
            m[row_idx[col_ptr[j] : col_ptr[j + 1]].astype(np.int64), j] = 1.0
        if placement == LAYER_OUTPUTS:
            if cols != 1:
                raise FormatError(
                    f"layer {idx} has {cols} columns; layer-output masks store one"
                )
            layers.append(m[:, 0])
        else:
            layers.append(m)
    if buf.read(1):
        raise FormatError("trailing bytes after the final mask layer")
    return Supermask(layers, placement)


def mask_storage_bytes(mask: Supermask) -> int:
    """Container size from the format arithmetic, without serializing."""
    total = 7  # magic + version + layer count
    for layer in mask.layers:
        m = _as_matrix(layer)
        cols = m.shape[1]
        nnz = int(m.sum())
        total += 16 + 8 * (cols + 1) + 2 * nnz
    return total


@dataclass
class StorageReport:
    """Bytes needed to persist a bank: all masks plus the net seed."""

    mask_count: int
    total_bytes: int

    @property
    def csv_row(self):
        return f"{self.mask_count},{self.total_bytes}"


def storage_report(bank) -> StorageReport:
    masks = bank.masks if hasattr(bank, "masks") else list(bank)
    total = SEED_BYTES + sum(len(serialize_mask(m)) for m in masks)
    return StorageReport(len(masks), total)


def _hopfield_block(store: HopfieldStore) -> bytes:
    out = io.BytesIO()
    out.write(HOPFIELD_MAGIC)
    out.write(struct.pack("<BII", HOPFIELD_VERSION, store.d, store.count))
    out.write(store.psi.astype("<f8").tobytes())
    out.write(store.mu.astype("<f8").tobytes())
    return out.getvalue()


def _read_hopfield_block(buf) -> HopfieldStore:
    magic = _take(buf, 4, "store magic")
    if magic != HOPFIELD_MAGIC:
        raise FormatError(f"bad store magic {magic!r}")
    version, d, count = struct.unpack("<BII", _take(buf, 9, "store header"))
    if version != HOPFIELD_VERSION:
        raise FormatError(f"unsupported store version {version}")
    psi = np.frombuffer(_take(buf, 8 * d * d, "couplings"), dtype="<f8").reshape(d, d)
    mu = np.frombuffer(_take(buf, 8 * d, "mean"), dtype="<f8")
    return HopfieldStore(psi.copy(), mu.copy(), count)


def save_snapshot(path, config: NetConfig, masks, store: HopfieldStore = None):
    """Write the run artifact: net config, every mask, optional store."""
    blob = io.BytesIO()
    blob.write(SNAPSHOT_MAGIC)
    blob.write(struct.pack("<B", SNAPSHOT_VERSION))
    meta = json.dumps(
        {
            "layer_dims": list(config.layer_dims),
            "seed": config.seed,
            "nonlinearity": config.nonlinearity,
            "mask_placement": config.mask_placement,
            "real_labels": config.real_labels,
        },
        sort_keys=True,
    ).encode()
    blob.write(struct.pack("<I", len(meta)))
    blob.write(meta)
    blob.write(struct.pack("<H", len(masks)))
    for mask in masks:
        data = serialize_mask(mask)
        blob.write(struct.pack("<I", len(data)))
        blob.write(data)
    blob.write(struct.pack("<B", 1 if store is not None else 0))
    if store is not None:
        blob.write(_hopfield_block(store))
    with open(path, "wb") as f:
        f.write(blob.getvalue())


def load_snapshot(path):
    """Read a snapshot back as (NetConfig, masks, store or None)."""
    with open(path, "rb") as f:
        buf = io.BytesIO(f.read())
    magic = _take(buf, 4, "snapshot magic")
    if magic != SNAPSHOT_MAGIC:
        raise FormatError(f"bad snapshot magic {magic!r} at offset 0")
    (version,) = struct.unpack("<B", _take(buf, 1, "snapshot version"))
    if version != SNAPSHOT_VERSION:
        raise FormatError(f"unsupported snapshot version {version}")
    (meta_len,) = struct.unpack("<I", _take(buf, 4, "config length"))
    meta = json.loads(_take(buf, meta_len, "config"))
    config = NetConfig(
        tuple(meta["layer_dims"]),
        seed=meta["seed"],
        nonlinearity=meta["nonlinearity"],
        mask_placement=meta["mask_placement"],
        real_labels=meta["real_labels"],
    )
    (mask_count,) = struct.unpack("<H", _take(buf, 2, "mask count"))
    masks = []
    for _ in range(mask_count):
        (size,) = struct.unpack("<I", _take(buf, 4, "mask size"))
        masks.append(
            deserialize_mask(_take(buf, size, "mask"), config.mask_placement)
        )
    (has_store,) = struct.unpack("<B", _take(buf, 1, "store flag"))
    store = _read_hopfield_block(buf) if has_store else None
    return config, masks, store
