"""Vector codecs: k-means, PQ, normalized PQ, OPQ and LSH binary codes."""

from __future__ import annotations

import math

from ftzip.codecs.kmeans import KMeansResult, kmeans
from ftzip.codecs.lsh import (
    BinaryCodeMatrix,
    hamming,
    lsh_cos,
    lsh_decode,
    lsh_encode,
    lsh_train,
    quantize_lsh,
)
from ftzip.codecs.pq import (
    CODEC_HEADER_BYTES,
    NORM_BITS,
    NormCodebook,
    PQCodebook,
    QuantizedMatrix,
    norm_decode,
    norm_encode,
    norm_train,
    npq_decode,
    npq_encode,
    opq_train,
    pack_codes,
    pq_decode,
    pq_dot,
    pq_encode,
    pq_error,
    pq_train,
    quantize_pq,
    unpack_codes,
)

CODECS = ("pq", "npq", "opq", "opq_norm", "lsh", "lsh_norm")


def row_payload_bytes(q) -> int:
    """Code bytes per row, norm byte excluded."""
    if isinstance(q, BinaryCodeMatrix):
        return math.ceil(q.nbits / 8)
    return math.ceil(q.k * q.b / 8)


def codec_size_bytes(q) -> int:
    """Exact serialized size of a quantized matrix, fixed header included."""
    norm = q.norm_codebook is not None
    size = CODEC_HEADER_BYTES + q.rows * (row_payload_bytes(q) + (1 if norm else 0))
    if norm:
        size += len(q.norm_codebook.centroids) * 4
    if isinstance(q, BinaryCodeMatrix):
        return size + q.nbits * q.d * 4
    size += q.k * (1 << q.b) * q.codebook.dsub * 4
    if q.rotation is not None:
        size += q.d * q.d * 4
    return size


def quantize(M, codec: str, k: int, b: int = 8, seed: int = 0, **kw):
    """Quantize the rows of M with one of ``CODECS``.

    For LSH codecs ``k`` is the number of code bytes per row (nbits = 8k).
    """
    if codec not in CODECS:
        raise ValueError(f"unknown codec {codec!r}")
    if codec.startswith("lsh"):
        return quantize_lsh(M, 8 * k, normalize=codec == "lsh_norm", seed=seed)
    return quantize_pq(M, k, b, normalize=codec in ("npq", "opq_norm"), rotate=codec.startswith("opq"),
                       seed=seed, **kw)


__all__ = [name for name in dir() if not name.startswith("_") and name != "math"]
