"""Hashtag text pipeline: segmentation, filtering, embedding, fusion.

Hashtags are concatenations of words ("coffeeme", "landscapephotography");
they are split against a fixed vocabulary by dynamic programming. Among
all full covers the segmentation with the fewest tokens wins; ties
prefer the longer token at the earliest differing position, which makes
the result a function of dictionary content alone. Strings containing
anything but ASCII letters (after stripping the leading '#' and
lowercasing) are rejected outright - multilingual text and emoji are out
of scope. Rejection is a value, never an exception.

Accepted hashtags map to the mean of their tokens' embedding vectors,
per-image hashtag vectors average into one feature, and that feature is
concatenated after the image feature.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class Dictionary:
    """Lowercase vocabulary with its longest token length precomputed."""

    vocabulary: frozenset[str]
    max_token_len: int

    @classmethod
    def from_tokens(cls, tokens) -> "Dictionary":
        vocab = set()
        for token in tokens:
            token = token.strip().lower()
            if not token:
                continue
            if "#" in token or any(ch.isspace() for ch in token):
                raise ValidationError(f"dictionary token {token!r} contains '#' or whitespace")
            vocab.add(token)
        if not vocab:
            raise ValidationError("dictionary is empty")
        return cls(frozenset(vocab), max(len(t) for t in vocab))

    @classmethod
    def load(cls, path: str | Path) -> "Dictionary":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_tokens(handle)


@dataclass(frozen=True)
class EmbeddingTable:
    """token -> dense vector, all of one dimension."""

    dim: int
    entries: dict[str, np.ndarray]

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingTable":
        """Read the TSV format: header ``dim=<d>``, then ``token\\tv1\\t...``."""
        entries: dict[str, np.ndarray] = {}
        with open(path, "r", encoding="utf-8") as handle:
            header = handle.readline().strip()
            if not header.startswith("dim="):
                raise ParseError("embedding table must start with a 'dim=<d>' header", line=1)
            try:
                dim = int(header[4:])
            except ValueError as exc:
                raise ParseError(f"bad dimension in header {header!r}", line=1) from exc
            if dim < 1:
                raise ParseError(f"bad dimension {dim}", line=1)
            for lineno, raw in enumerate(handle, start=2):
                if not raw.strip():
                    continue
                parts = raw.rstrip("\n").split("\t")
                if len(parts) != dim + 1:
                    raise ParseError(
                        f"expected token plus {dim} floats, got {len(parts)} fields",
                        line=lineno,
                    )
                try:
                    vec = np.array([float(p) for p in parts[1:]], dtype=np.float64)
                except ValueError as exc:
                    raise ParseError(str(exc), line=lineno) from exc
                if not np.all(np.isfinite(vec)):
                    raise ValidationError(f"line {lineno}: non-finite embedding for {parts[0]!r}")
                vec.flags.writeable = False
                entries[parts[0]] = vec
        return cls(dim, entries)


@dataclass(frozen=True)
class HashtagRecord:
    """An accepted hashtag: raw form, normalized form, and its tokens."""

    raw: str
    normalized: str
    tokens: tuple[str, ...]


def normalize_hashtag(raw: str) -> str:
    """Strip leading '#' characters and lowercase."""
    return raw.lstrip("#").lower()


def word_break(hs: str, dictionary: Dictionary) -> list[str] | None:
    """Segment a normalized hashtag into vocabulary tokens, or None.

    Returns the minimal-token full cover; among equal-count covers the
    one whose earliest differing token is longer. None when the string
    contains non-ASCII-letter characters or no full cover exists.
    """
    if not hs or not hs.isascii() or not hs.isalpha():
        return None
    n = len(hs)
    vocab = dictionary.vocabulary
    longest = min(dictionary.max_token_len, n)
    INF = n + 1
    # best[i] = fewest tokens covering hs[i:]
    best = [INF] * (n + 1)
    best[n] = 0
    for i in range(n - 1, -1, -1):
        upper = min(longest, n - i)
        for length in range(1, upper + 1):
            if best[i + length] < INF and hs[i : i + length] in vocab:
                cand = 1 + best[i + length]
                if cand < best[i]:
                    best[i] = cand
    if best[0] >= INF:
        return None
    tokens: list[str] = []
    i = 0
    while i < n:
        upper = min(longest, n - i)
        for length in range(upper, 0, -1):  # longest first realizes the tie-break
            piece = hs[i : i + length]
            if piece in vocab and best[i + length] == best[i] - 1:
                tokens.append(piece)
                i += length
                break
    return tokens


def filter_hashtags(
    tags: list[str],
    dictionary: Dictionary,
    max_tokens: int = 6,
) -> list[HashtagRecord]:
    """Normalize, deduplicate, segment; keep only clean segmentations.

    Duplicates (after normalization) keep their first occurrence. Tags
    that reject or need more than ``max_tokens`` tokens are dropped.
    """
    seen: set[str] = set()
    records: list[HashtagRecord] = []
    for raw in tags:
        normalized = normalize_hashtag(raw)
        if normalized in seen:
            continue
        seen.add(normalized)
        tokens = word_break(normalized, dictionary)
        if tokens is None or len(tokens) > max_tokens:
            continue
        records.append(HashtagRecord(raw=raw, normalized=normalized, tokens=tuple(tokens)))
    return records


def embed_hashtag(tokens, table: EmbeddingTable) -> np.ndarray | None:
    """Mean of the tokens' vectors; unknown tokens are skipped.

    None when no token is in the table.
    """
    vecs = [table.entries[t] for t in tokens if t in table.entries]
    if not vecs:
        return None
    return np.mean(vecs, axis=0)


def aggregate_image_hashtags(
    records: list[HashtagRecord],
    table: EmbeddingTable,
) -> tuple[np.ndarray, int]:
    """Mean over per-hashtag vectors plus the count that contributed.

    With nothing to aggregate the feature is the zero vector and the
    count is 0, which callers should surface as a flag.
    """
    vecs = []
    for record in records:
        vec = embed_hashtag(record.tokens, table)
        if vec is not None:
            vecs.append(vec)
    if not vecs:
        return np.zeros(table.dim), 0
    return np.mean(vecs, axis=0), len(vecs)


def fuse(image_feat: np.ndarray, hashtag_feat: np.ndarray) -> np.ndarray:
    """Concatenate image features first, hashtag features second."""
    image_feat = np.asarray(image_feat, dtype=np.float64).ravel()
    hashtag_feat = np.asarray(hashtag_feat, dtype=np.float64).ravel()
    if not (np.all(np.isfinite(image_feat)) and np.all(np.isfinite(hashtag_feat))):
        raise ValidationError("fuse requires finite features")
    return np.concatenate([image_feat, hashtag_feat])
