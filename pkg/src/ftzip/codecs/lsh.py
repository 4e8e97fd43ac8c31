"""Sign-of-random-rotation binary codes (cosine LSH)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ftzip.codecs.pq import NormCodebook, norm_decode, norm_encode, norm_train


def lsh_train(d: int, nbits: int, seed: int = 0) -> np.ndarray:
    """First ``nbits`` rows of a seeded random orthogonal matrix."""
    if nbits > d:
        raise ValueError(f"nbits={nbits} exceeds dimension {d}")
    if nbits < 1:
        raise ValueError("nbits must be >= 1")
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(R))[None, :]
    return Q[:nbits].astype(np.float32)


def lsh_encode(rotation: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Packed sign bits of the projections, (n, ceil(nbits/8)) uint8."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    proj = X @ rotation.T.astype(np.float64)
    bits = np.packbits((proj >= 0).astype(np.uint8), axis=1)
    return bits[0] if np.ndim(x) == 1 else bits


def unpack_signs(bits: np.ndarray, nbits: int) -> np.ndarray:
    B = np.atleast_2d(bits)
    s = np.unpackbits(B, axis=1)[:, :nbits].astype(np.float64) * 2.0 - 1.0
    return s[0] if np.ndim(bits) == 1 else s


def hamming(bits1: np.ndarray, bits2: np.ndarray, nbits: int) -> np.ndarray:
    x = np.bitwise_xor(np.atleast_2d(bits1), np.atleast_2d(bits2))
    h = np.unpackbits(x, axis=1)[:, :nbits].sum(axis=1)
    return h[0] if np.ndim(bits1) == 1 and np.ndim(bits2) == 1 else h


def lsh_cos(bits1: np.ndarray, bits2: np.ndarray, nbits: int):
    """Cosine estimate cos(pi * hamming / nbits)."""
    return np.cos(np.pi * hamming(bits1, bits2, nbits) / nbits)


def lsh_decode(rotation: np.ndarray, bits: np.ndarray, norm) -> np.ndarray:
    """norm * R^T s / sqrt(nbits) with s the +-1 signs."""
    nbits = rotation.shape[0]
    s = unpack_signs(bits, nbits)
    direction = s @ rotation.astype(np.float64) / np.sqrt(nbits)
    scale = np.asarray(norm, dtype=np.float64)
    return direction * (scale[:, None] if direction.ndim == 2 else scale)


@dataclass
class BinaryCodeMatrix:
    rows: int
    d: int
    nbits: int
    rotation: np.ndarray  # (nbits, d)
    bits: np.ndarray  # (rows, ceil(nbits / 8)) uint8
    norm_codebook: NormCodebook | None = None
    norm_codes: np.ndarray | None = None
    fallback_norm: float = 1.0  # used for every row when norms are not encoded

    def norms(self, idx=slice(None)) -> np.ndarray:
        if self.norm_codebook is None:
            n = len(np.arange(self.rows)[idx])
            return np.full(n, np.float32(self.fallback_norm), dtype=np.float64)
        return norm_decode(self.norm_codebook, self.norm_codes[idx]).astype(np.float64)

    def decode_rows(self, idx=slice(None)) -> np.ndarray:
        return lsh_decode(self.rotation, np.atleast_2d(self.bits[idx]), self.norms(idx))

    def dot(self, y: np.ndarray, idx=slice(None)) -> np.ndarray:
        return self.decode_rows(idx) @ np.asarray(y, dtype=np.float64)


def quantize_lsh(M: np.ndarray, nbits: int, normalize: bool = False, seed: int = 0) -> BinaryCodeMatrix:
    M = np.asarray(M, dtype=np.float64)
    rows, d = M.shape
    R = lsh_train(d, nbits, seed)
    bits = lsh_encode(R, M)
    r = np.linalg.norm(M, axis=1)
    if normalize:
        ncb = norm_train(r)
        return BinaryCodeMatrix(rows, d, nbits, R, bits, ncb, norm_encode(ncb, r))
    return BinaryCodeMatrix(rows, d, nbits, R, bits, fallback_norm=float(np.float32(r.mean() if rows else 1.0)))
