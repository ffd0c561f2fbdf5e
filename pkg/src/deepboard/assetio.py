"""DBB1 binary asset files for dense volumes and octrees.

Little-endian layout, documented in docs/formats.md:

    magic   4 bytes  "DBB1"
    version u16      (currently 1)
    kind    u8       0 = dense, 1 = octree
    aabb    6 x f32  min xyz, max xyz

dense payload:
    resolution 3 x u32
    sigma      nx*ny*nz f32, C order
    sh         nx*ny*nz*27 f32, C order (3 channels x 9 coefficients per cell)

octree payload:
    max_depth  u8
    node stream, depth-first from the root, children in -x-y-z .. +x+y+z
    order (bit pattern zyx). Per node: tag u8 (0 internal, 1 empty leaf,
    2 occupied leaf); occupied leaves are followed by 28 x f32 (sigma, 27 sh).
"""

from __future__ import annotations

import struct
from io import BytesIO
from pathlib import Path

import numpy as np

from .volume import DenseVolume, SparseOctree

MAGIC = b"DBB1"
VERSION = 1
KIND_DENSE = 0
KIND_OCTREE = 1

_TAG_INTERNAL = 0
_TAG_EMPTY = 1
_TAG_OCCUPIED = 2


class AssetError(ValueError):
    pass


class BadMagic(AssetError):
    pass


class UnsupportedVersion(AssetError):
    pass


class TruncatedFile(AssetError):
    pass


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise TruncatedFile(
                f"truncated while reading {what}: need {n} bytes at offset "
                f"{self.offset}, file has {len(self.data)}")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))

    def array(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32)


def save_asset(path, asset) -> None:
    """Write a DenseVolume or SparseOctree to a DBB1 file."""
    if not isinstance(asset, (DenseVolume, SparseOctree)):
        raise TypeError(f"cannot save {type(asset).__name__}")
    buf = BytesIO()
    buf.write(MAGIC)
    kind = KIND_DENSE if isinstance(asset, DenseVolume) else KIND_OCTREE
    buf.write(struct.pack("<HB", VERSION, kind))
    buf.write(np.concatenate([asset.aabb_min, asset.aabb_max]).astype("<f4").tobytes())
    if isinstance(asset, DenseVolume):
        nx, ny, nz = asset.resolution
        buf.write(struct.pack("<III", nx, ny, nz))
        buf.write(asset.sigma.astype("<f4").tobytes())
        buf.write(asset.sh.astype("<f4").tobytes())
    else:
        buf.write(struct.pack("<B", asset.max_depth))
        _write_nodes(buf, asset)
    Path(path).write_bytes(buf.getvalue())


def _write_nodes(buf: BytesIO, tree: SparseOctree) -> None:
    stack = [int(tree.root)]
    while stack:
        code = stack.pop()
        if code >= 0:
            buf.write(struct.pack("<B", _TAG_INTERNAL))
            row = tree.children[code]
            stack.extend(int(row[c]) for c in reversed(range(8)))
        elif code == -1:
            buf.write(struct.pack("<B", _TAG_EMPTY))
        else:
            payload = -code - 2
            buf.write(struct.pack("<B", _TAG_OCCUPIED))
            buf.write(struct.pack("<f", float(tree.leaf_sigma[payload])))
            buf.write(tree.leaf_sh[payload].astype("<f4").tobytes())


def load_asset(path):
    """Load a DBB1 file; returns DenseVolume or SparseOctree."""
    reader = _Reader(Path(path).read_bytes())
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    version, kind = reader.unpack("HB", "header")
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported version {version} (offset 4)")
    aabb = reader.array(6, "aabb")
    amin, amax = aabb[:3].astype(np.float64), aabb[3:].astype(np.float64)
    if kind == KIND_DENSE:
        nx, ny, nz = reader.unpack("III", "resolution")
        n = nx * ny * nz
        sigma = reader.array(n, "sigma payload").reshape(nx, ny, nz)
        sh = reader.array(n * 27, "sh payload").reshape(nx, ny, nz, 3, 9)
        asset = DenseVolume(amin, amax, sigma, sh)
    elif kind == KIND_OCTREE:
        (max_depth,) = reader.unpack("B", "max_depth")
        asset = _read_nodes(reader, amin, amax, max_depth)
    else:
        raise AssetError(f"unknown asset kind {kind} at offset 6")
    if reader.offset != len(reader.data):
        raise AssetError(
            f"{len(reader.data) - reader.offset} trailing bytes at offset {reader.offset}")
    return asset


def _read_nodes(reader: _Reader, amin, amax, max_depth: int) -> SparseOctree:
    children_rows: list[np.ndarray] = []
    leaf_sigma: list[float] = []
    leaf_sh: list[np.ndarray] = []

    def read_node() -> int:
        (tag,) = reader.unpack("B", "node tag")
        if tag == _TAG_EMPTY:
            return -1
        if tag == _TAG_OCCUPIED:
            payload = len(leaf_sigma)
            (s,) = reader.unpack("f", "leaf sigma")
            leaf_sigma.append(s)
            leaf_sh.append(reader.array(27, "leaf sh"))
            return -payload - 2
        if tag != _TAG_INTERNAL:
            raise AssetError(f"unknown node tag {tag} at offset {reader.offset - 1}")
        node = len(children_rows)
        row = np.empty(8, dtype=np.int32)
        children_rows.append(row)
        for c in range(8):
            row[c] = read_node()
        return node

    root = read_node()
    children = (np.stack(children_rows) if children_rows
                else np.empty((0, 8), dtype=np.int32))
    sig = np.array(leaf_sigma, dtype=np.float32)
    shs = np.stack(leaf_sh) if leaf_sh else np.empty((0, 27), dtype=np.float32)
    return SparseOctree(amin, amax, max_depth, root, children, sig, shs)
