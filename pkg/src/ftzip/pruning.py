"""Feature selection (norm, frequency, greedy max-cover) and retained-feature lookup."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

CRITERIA = ("norm", "entropy", "maxcover")


@dataclass
class PruneResult:
    retained: np.ndarray  # sorted feature ids
    criterion: str
    cutoff: int
    train_coverage: float
    over_budget: bool = False

    def __len__(self) -> int:
        return len(self.retained)

    def row(self, feature: int) -> int | None:
        return lookup_retained(self.retained, feature)

    def report(self) -> str:
        flag = "  [K below coverage threshold]" if self.over_budget else ""
        return (f"prune criterion={self.criterion} K={self.cutoff} retained={len(self.retained)} "
                f"train_coverage={self.train_coverage:.4f}{flag}")


def _descending(ids: np.ndarray, scores: np.ndarray) -> np.ndarray:
    # lexsort: last key is primary; ties fall back to the lower id
    return ids[np.lexsort((ids, -scores))]


def rank_by_norm(A: np.ndarray, ids: np.ndarray | None = None) -> np.ndarray:
    """Feature ids by descending L2 norm of their embedding row."""
    ids = np.arange(len(A)) if ids is None else np.asarray(ids, dtype=np.int64)
    norms = np.linalg.norm(A[ids].astype(np.float64), axis=1)
    return _descending(ids, norms)


def rank_by_entropy(counts: np.ndarray) -> np.ndarray:
    """Feature ids by descending corpus count (the frequency proxy for entropy pruning)."""
    counts = np.asarray(counts)
    return _descending(np.arange(len(counts)), counts.astype(np.float64))


def feature_counts(feats: np.ndarray, size: int) -> np.ndarray:
    return np.bincount(feats, minlength=size)


def coverage(feats: np.ndarray, offsets: np.ndarray, kept: np.ndarray) -> float:
    """Fraction of non-empty documents holding at least one kept feature.

    ``kept`` is a boolean mask over the feature space.
    """
    lengths = np.diff(offsets)
    nonempty = lengths > 0
    if not nonempty.any():
        return 1.0
    hits = np.add.reduceat(kept[feats].astype(np.int64), offsets[:-1][nonempty]) > 0
    return float(hits.mean())


def topk_prune(order: np.ndarray, K: int, feats: np.ndarray, offsets: np.ndarray, size: int,
               criterion: str = "norm") -> PruneResult:
    retained = np.sort(np.asarray(order[:K], dtype=np.int64))
    mask = np.zeros(size, dtype=bool)
    mask[retained] = True
    return PruneResult(retained, criterion, K, coverage(feats, offsets, mask))


def maxcover_prune(feats: np.ndarray, offsets: np.ndarray, norms: np.ndarray, K: int) -> PruneResult:
    """Single-pass greedy: every uncovered document donates its highest-norm feature.

    Documents are scanned in the given order. Remaining budget is filled with
    the globally highest-norm features not yet picked. If coverage needs more
    than K features the larger set is returned with ``over_budget`` set.
    """
    norms = np.asarray(norms, dtype=np.float64)
    size = len(norms)
    picked = np.zeros(size, dtype=bool)
    chosen: list[int] = []
    for a, b in zip(offsets[:-1], offsets[1:]):
        if a == b:
            continue
        f = feats[a:b]
        if picked[f].any():
            continue
        w = norms[f]
        best = int(f[w == w.max()].min())
        picked[best] = True
        chosen.append(best)
    over = len(chosen) > K
    if over:
        logger.warning("maxcover: coverage needs %d features, above K=%d", len(chosen), K)
    elif len(chosen) < K:
        need = K - len(chosen)
        # only the top (K + picked) features can be used by the fill
        top = min(size, K + len(chosen))
        cand = np.argpartition(-norms, top - 1)[:top] if top < size else np.arange(size)
        for f in _descending(cand, norms[cand]):
            if need == 0:
                break
            if not picked[f]:
                picked[f] = True
                need -= 1
        if need:
            # argpartition may cut through a tie block; fall back to the full order
            for f in _descending(np.arange(size), norms):
                if need == 0:
                    break
                if not picked[f]:
                    picked[f] = True
                    need -= 1
    retained = np.flatnonzero(picked)
    return PruneResult(retained, "maxcover", K, coverage(feats, offsets, picked), over)


def lookup_retained(index: np.ndarray, f: int) -> int | None:
    """Binary search: rank of f in the sorted retained list, or None if pruned."""
    i = int(np.searchsorted(index, f))
    if i < len(index) and index[i] == f:
        return i
    return None


def lookup_many(index: np.ndarray, fs: np.ndarray) -> np.ndarray:
    """Vectorized ``lookup_retained``; misses are -1."""
    fs = np.asarray(fs)
    if len(index) == 0:
        return np.full(len(fs), -1, dtype=np.int64)
    i = np.searchsorted(index, fs)
    ic = np.minimum(i, len(index) - 1)
    return np.where(index[ic] == fs, ic, -1).astype(np.int64)


# --------------------------------------------------------------------------
# Bloom filter

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SALT_H2 = np.uint64(0x5851F42D4C957F2D)
_SALT_ROW = np.uint64(0x2545F4914F6CDD1D)
BLOOM_HEADER_BYTES = 16


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer; uint64 arithmetic wraps."""
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@dataclass
class BloomFilter:
    m: int
    h: int
    bits: np.ndarray  # ceil(m / 8) uint8
    nrows: int = 0  # row space addressed by member keys

    def positions(self, keys: np.ndarray) -> np.ndarray:
        keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
        h1 = mix64(keys)
        h2 = mix64(keys ^ _SALT_H2) | np.uint64(1)
        i = np.arange(self.h, dtype=np.uint64)
        return (h1[:, None] + i[None, :] * h2[:, None]) % np.uint64(self.m)

    def contains(self, keys: np.ndarray) -> np.ndarray:
        pos = self.positions(keys)
        bit = (self.bits[(pos >> np.uint64(3)).astype(np.int64)] >> (pos & np.uint64(7)).astype(np.uint8)) & 1
        return bit.all(axis=1)

    def nbytes(self) -> int:
        return BLOOM_HEADER_BYTES + len(self.bits)


def bloom_build(keys: np.ndarray, bits_per_key: float = 10, nhashes: int = 7, nrows: int | None = None) -> BloomFilter:
    keys = np.asarray(keys, dtype=np.uint64)
    m = max(8, int(math.ceil(bits_per_key * max(len(keys), 1))))
    bf = BloomFilter(m, nhashes, np.zeros((m + 7) // 8, dtype=np.uint8), len(keys) if nrows is None else nrows)
    if len(keys):
        pos = bf.positions(keys).ravel()
        np.bitwise_or.at(bf.bits, (pos >> np.uint64(3)).astype(np.int64),
                         (np.uint8(1) << (pos & np.uint64(7)).astype(np.uint8)))
    return bf


def bloom_row(keys: np.ndarray, nrows: int) -> np.ndarray:
    """Secondary hash of the key modulo the number of rows."""
    return (mix64(np.asarray(keys, dtype=np.uint64) ^ _SALT_ROW) % np.uint64(max(nrows, 1))).astype(np.int64)


def bloom_lookup_many(bf: BloomFilter, keys: np.ndarray) -> np.ndarray:
    keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
    if len(keys) == 0:
        return np.zeros(0, dtype=np.int64)
    rows = bloom_row(keys, bf.nrows)
    return np.where(bf.contains(keys), rows, -1)


def bloom_lookup(bf: BloomFilter, f: int, K: int | None = None) -> int | None:
    """Row of a key that passes the membership test; false positives alias a row."""
    if not bf.contains(np.array([f]))[0]:
        return None
    return int(bloom_row(np.array([f]), bf.nrows if K is None else K)[0])


def bloom_false_positive_rate(n: int, m: int, h: int) -> float:
    return (1.0 - math.exp(-h * n / m)) ** h
