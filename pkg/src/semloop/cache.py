"""Single-file binary cache for semantic graphs.

Record layout (little endian)::

    magic      4s   b"SEMG"
    version    u16
    C          u16  number of classes
    max_nodes  u32
    n_valid    u32
    config     16s  hash of the producing config (zero if unknown)
    mask       u8[max_nodes]
    sem        f64[max_nodes * C]
    cen        f64[max_nodes * 3]
    bbox       f64[max_nodes * 6]
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .graph import SemanticGraph

MAGIC = b"SEMG"
VERSION = 1
_HEADER = struct.Struct("<4sHHII16s")


class CacheError(ValueError):
    pass


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def encode_graph(graph: SemanticGraph, config_hash: bytes = b"") -> bytes:
    header = _HEADER.pack(
        MAGIC, VERSION, graph.num_classes, graph.max_nodes, graph.num_nodes, config_hash[:16].ljust(16, b"\0")
    )
    body = [
        graph.mask.astype(np.uint8).tobytes(),
        graph.sem.astype("<f8").tobytes(),
        graph.cen.astype("<f8").tobytes(),
        graph.bbox.astype("<f8").tobytes(),
    ]
    return header + b"".join(body)


def decode_graph(data: bytes) -> SemanticGraph:
    if len(data) < _HEADER.size:
        raise CacheError("truncated graph record header")
    magic, version, n_cls, max_nodes, n_valid, _ = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CacheError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CacheError(f"graph cache version {version} is not supported (expected {VERSION})")
    sizes = [max_nodes, 8 * max_nodes * n_cls, 8 * max_nodes * 3, 8 * max_nodes * 6]
    if len(data) != _HEADER.size + sum(sizes):
        raise CacheError(f"graph record has {len(data)} bytes, expected {_HEADER.size + sum(sizes)}")
    off = _HEADER.size
    mask = np.frombuffer(data, np.uint8, max_nodes, off).astype(bool)
    off += sizes[0]
    sem = np.frombuffer(data, "<f8", max_nodes * n_cls, off).reshape(max_nodes, n_cls)
    off += sizes[1]
    cen = np.frombuffer(data, "<f8", max_nodes * 3, off).reshape(max_nodes, 3)
    off += sizes[2]
    bbox = np.frombuffer(data, "<f8", max_nodes * 6, off).reshape(max_nodes, 6)
    if int(mask.sum()) != n_valid:
        raise CacheError("node count in header disagrees with mask")
    return SemanticGraph(mask.copy(), sem.copy(), cen.copy(), bbox.copy())


def cache_graph(graph: SemanticGraph, path, config_hash: bytes = b"") -> None:
    _atomic_write(Path(path), encode_graph(graph, config_hash))


def load_graph(path) -> SemanticGraph:
    return decode_graph(Path(path).read_bytes())


def graph_path(root, seq: str, index: int) -> Path:
    return Path(root) / seq / f"{index:06d}.sgr"


def load_graphs(root, pairs) -> tuple[dict, list]:
    """Load every graph referenced by ``pairs``; returns (graphs, missing keys)."""
    graphs, missing = {}, []
    for key in sorted({(p.seq_id, k) for p in pairs for k in (p.i, p.j)}):
        path = graph_path(root, *key)
        if path.exists():
            graphs[key] = load_graph(path)
        else:
            missing.append(key)
    return graphs, missing
