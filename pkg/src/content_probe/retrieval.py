"""Regional max-activation descriptors and exact cosine nearest neighbors.

The descriptor pools a C x H x W activation tensor over square regions
at several scales. At scale ``l`` (1-based) the region side is
``floor(2 * min(H, W) / (l + 1))``, at least 1; regions sit on a uniform
grid per axis, dense enough that consecutive regions overlap by at
least 40% of the side. Each region is max-pooled per channel and
L2-normalized, the region vectors are summed, and the sum is
L2-normalized. An all-zero tensor maps to the zero vector.

Search is exact: cosine similarity against every stored vector, sorted
descending with insertion order breaking ties. At the corpus sizes this
toolkit targets, brute force is both fast enough and the only variant
whose results can be asserted exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError, ValidationError


def _axis_offsets(extent: int, side: int) -> list[int]:
    """Starts of regions along one axis, overlap >= 40% of ``side``.

    Single-pixel regions cannot overlap, so they fall back to the
    densest grid (every start position).
    """
    if side >= extent:
        return [0]
    span = extent - side
    count = max(2, 1 + int(np.ceil(span / (0.6 * side))))
    while count <= span:
        offsets = [int(np.floor(i * span / (count - 1))) for i in range(count)]
        steps = [b - a for a, b in zip(offsets, offsets[1:])]
        if max(steps) <= 0.6 * side:
            return offsets
        count += 1
    return list(range(span + 1))


def rmac_regions(height: int, width: int, scales: int) -> list[tuple[int, int, int]]:
    """(y, x, side) for every pooling region across all scales."""
    regions = []
    for level in range(1, scales + 1):
        side = max(1, (2 * min(height, width)) // (level + 1))
        for y in _axis_offsets(height, side):
            for x in _axis_offsets(width, side):
                regions.append((y, x, side))
    return regions


def rmac(activation: np.ndarray, scales: int = 3) -> np.ndarray:
    """Pool a (C, H, W) activation tensor into a C-dim unit descriptor."""
    if scales < 1:
        raise ParameterError(f"scales must be >= 1, got {scales}")
    act = np.asarray(activation, dtype=np.float64)
    if act.ndim != 3:
        raise ValidationError(f"activation must be (C, H, W), got shape {act.shape}")
    channels, height, width = act.shape
    if min(channels, height, width) < 1:
        raise ValidationError(f"empty activation shape {act.shape}")
    if not np.all(np.isfinite(act)):
        raise ValidationError("activation contains NaN or Inf")
    total = np.zeros(channels)
    for y, x, side in rmac_regions(height, width, scales):
        region = act[:, y : min(y + side, height), x : min(x + side, width)]
        pooled = region.max(axis=(1, 2))
        norm = np.linalg.norm(pooled)
        if norm > 0:
            total += pooled / norm
    norm = np.linalg.norm(total)
    if norm == 0:
        return total
    return total / norm


@dataclass(frozen=True)
class DescriptorIndex:
    """Insertion-ordered ids plus their unit-norm vectors, row per item."""

    ids: tuple[str, ...]
    vectors: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def build_index(items) -> DescriptorIndex:
    """Normalize and stack (id, vector) pairs, rejecting junk.

    Duplicate ids, zero vectors and dimension mismatches are validation
    errors; insertion order is preserved.
    """
    ids: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dim = None
    for item_id, vector in items:
        item_id = str(item_id)
        if item_id in seen:
            raise ValidationError(f"duplicate id {item_id!r}")
        seen.add(item_id)
        vec = np.asarray(vector, dtype=np.float64).ravel()
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise ValidationError(
                f"id {item_id!r}: dimension {vec.size} does not match index dimension {dim}"
            )
        if not np.all(np.isfinite(vec)):
            raise ValidationError(f"id {item_id!r}: non-finite vector")
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ValidationError(f"id {item_id!r}: zero vector cannot be indexed")
        ids.append(item_id)
        rows.append(vec / norm)
    if not ids:
        raise ValidationError("cannot build an empty index")
    matrix = np.vstack(rows)
    matrix.flags.writeable = False
    return DescriptorIndex(tuple(ids), matrix)


def knn_query(index: DescriptorIndex, query: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Top-k ids by exact cosine similarity, descending; ties by insertion order."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        raise ValidationError("query against an empty index")
    vec = np.asarray(query, dtype=np.float64).ravel()
    if vec.size != index.dim:
        raise ValidationError(f"query dimension {vec.size} != index dimension {index.dim}")
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec = vec / norm
    sims = index.vectors @ vec
    order = np.lexsort((np.arange(len(index)), -sims))
    top = order[: min(k, len(index))]
    return [(index.ids[i], float(sims[i])) for i in top]


_INDEX_MAGIC = "knn-index-v1"


def save_index(index: DescriptorIndex, path: str | Path) -> None:
    """Single-file format: JSON header line, then little-endian f32 rows."""
    header = {
        "format": _INDEX_MAGIC,
        "n": len(index),
        "d": index.dim,
        "ids": list(index.ids),
    }
    with open(path, "wb") as handle:
        handle.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        handle.write(b"\n")
        handle.write(np.ascontiguousarray(index.vectors, dtype="<f4").tobytes())


def load_index(path: str | Path) -> DescriptorIndex:
    with open(path, "rb") as handle:
        header_line = handle.readline()
        payload = handle.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not an index file") from exc
    if header.get("format") != _INDEX_MAGIC:
        raise FormatError(f"{path}: unknown index format {header.get('format')!r}")
    n, d = int(header["n"]), int(header["d"])
    vectors = np.frombuffer(payload, dtype="<f4")
    if vectors.size != n * d:
        raise FormatError(f"{path}: payload holds {vectors.size} floats, header says {n * d}")
    matrix = vectors.astype(np.float64).reshape(n, d)
    matrix.flags.writeable = False
    return DescriptorIndex(tuple(str(i) for i in header["ids"]), matrix)


def link_hashtags(
    index: DescriptorIndex,
    queries,
    neighbor_tags: dict[str, list[str]],
    k: int,
) -> list[dict]:
    """Per query, the union of the top-k neighbors' hashtag lists.

    ``queries`` yields (query_id, vector). Tags keep first-seen order,
    walking neighbors by rank; neighbors without tags contribute nothing.
    """
    linked = []
    for query_id, vector in queries:
        hits = knn_query(index, vector, k)
        tags: list[str] = []
        seen: set[str] = set()
        for neighbor_id, _sim in hits:
            for tag in neighbor_tags.get(neighbor_id, []):
                if tag not in seen:
                    seen.add(tag)
                    tags.append(tag)
        linked.append(
            {
                "image_id": str(query_id),
                "neighbors": [nid for nid, _ in hits],
                "hashtags": tags,
            }
        )
    return linked
