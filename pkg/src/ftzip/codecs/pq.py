"""Product quantization, its normalized variant and the learned-rotation variant."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ftzip.codecs.kmeans import assign, kmeans

logger = logging.getLogger(__name__)

KMEANS_ITERS = 25
MAX_TRAIN_POINTS = 32768
OPQ_REFIT_ITERS = 5
NORM_BITS = 8
DP_MAX_POINTS = 1024


@dataclass
class PQCodebook:
    k: int
    b: int
    centroids: np.ndarray  # (k, 2**b, dsub) float32

    @property
    def dsub(self) -> int:
        return self.centroids.shape[2]

    @property
    def dim(self) -> int:
        return self.k * self.dsub

    @property
    def ksub(self) -> int:
        return 1 << self.b


@dataclass
class NormCodebook:
    centroids: np.ndarray  # (2**b,) float32, sorted ascending

    @property
    def b(self) -> int:
        return int(len(self.centroids)).bit_length() - 1


def _sample(M: np.ndarray, max_points: int | None, seed: int) -> np.ndarray:
    if max_points is None or len(M) <= max_points:
        return M
    rng = np.random.default_rng(seed)
    return M[np.sort(rng.choice(len(M), max_points, replace=False))]


def _check_kb(d: int, k: int, b: int):
    if k < 1 or d % k:
        raise ValueError(f"k={k} must divide the dimension {d}")
    if not 1 <= b <= 8:
        raise ValueError(f"b={b} must be in [1, 8]")


def pq_train(M: np.ndarray, k: int, b: int = 8, iters: int = KMEANS_ITERS, seed: int = 0,
             max_points: int | None = MAX_TRAIN_POINTS, init: PQCodebook | None = None) -> PQCodebook:
    """Independent k-means on each of the k contiguous coordinate blocks."""
    M = np.asarray(M, dtype=np.float64)
    n, d = M.shape
    _check_kb(d, k, b)
    X = _sample(M, max_points, seed)
    dsub = d // k
    tables = np.empty((k, 1 << b, dsub), dtype=np.float32)
    for i in range(k):
        start = None if init is None else init.centroids[i]
        res = kmeans(X[:, i * dsub:(i + 1) * dsub], 1 << b, iters, seed + i, init=start)
        tables[i] = res.centroids
    return PQCodebook(k, b, tables)


def pq_encode(cb: PQCodebook, x: np.ndarray) -> np.ndarray:
    """Nearest centroid per block; (n, k) uint8 codes, or (k,) for a single vector."""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != cb.dim:
        raise ValueError(f"vector dimension {X.shape[1]} != codebook dimension {cb.dim}")
    codes = np.empty((len(X), cb.k), dtype=np.uint8)
    ds = cb.dsub
    for i in range(cb.k):
        codes[:, i], _ = assign(X[:, i * ds:(i + 1) * ds], cb.centroids[i].astype(np.float64))
    return codes[0] if single else codes


def _check_codes(cb: PQCodebook, codes: np.ndarray):
    if codes.shape[-1] != cb.k:
        raise ValueError(f"expected {cb.k} codes per vector, got {codes.shape[-1]}")
    if codes.size and int(codes.max()) >= cb.ksub:
        raise ValueError(f"code {int(codes.max())} out of range for b={cb.b}")


def pq_decode(cb: PQCodebook, codes: np.ndarray) -> np.ndarray:
    """Concatenate the selected centroid of every block."""
    C = np.asarray(codes, dtype=np.int64)
    _check_codes(cb, C)
    single = C.ndim == 1
    C = np.atleast_2d(C)
    out = cb.centroids[np.arange(cb.k)[None, :], C]  # (n, k, dsub)
    out = out.reshape(len(C), cb.dim)
    return out[0] if single else out


def pq_dot(cb: PQCodebook, codes: np.ndarray, y: np.ndarray) -> np.ndarray | float:
    """Inner product of decoded vector(s) with y via k table lookups."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (cb.dim,):
        raise ValueError(f"query dimension {y.shape} != ({cb.dim},)")
    C = np.asarray(codes, dtype=np.int64)
    _check_codes(cb, C)
    # tables[i, c] = <centroid c of block i, y block i>
    tables = np.einsum("kcs,ks->kc", cb.centroids.astype(np.float64), y.reshape(cb.k, cb.dsub))
    if C.ndim == 1:
        return float(tables[np.arange(cb.k), C].sum())
    return tables[np.arange(cb.k)[None, :], C].sum(axis=1)


# --------------------------------------------------------------------------
# scalar norm quantizer


def _segment_costs(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """cost[i, j] = weighted squared error of the segment x[i:j] (j > i), inf elsewhere."""
    W = np.concatenate([[0.0], np.cumsum(w)])
    S1 = np.concatenate([[0.0], np.cumsum(w * x)])
    S2 = np.concatenate([[0.0], np.cumsum(w * x * x)])
    n = len(x)
    i = np.arange(n + 1)[:, None]
    j = np.arange(n + 1)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        dw = W[j] - W[i]
        ds = S1[j] - S1[i]
        cost = (S2[j] - S2[i]) - ds * ds / dw
    cost = np.maximum(cost, 0.0)
    cost[j <= i] = np.inf
    return cost


def kmeans1d_exact(x: np.ndarray, w: np.ndarray, ncentroids: int) -> np.ndarray:
    """Optimal weighted 1-D k-means on sorted distinct values (dynamic programming)."""
    n = len(x)
    K = min(ncentroids, n)
    cost = _segment_costs(x, w)
    D = cost[0].copy()  # D[j]: best cost of x[:j] with one cluster
    back = np.zeros((K, n + 1), dtype=np.int64)
    for c in range(1, K):
        total = D[:, None] + cost
        back[c] = total.argmin(axis=0)
        D = total[back[c], np.arange(n + 1)]
    # backtrack segment boundaries
    bounds = [n]
    j = n
    for c in range(K - 1, 0, -1):
        j = int(back[c, j])
        bounds.append(j)
    bounds.append(0)
    bounds = bounds[::-1]
    cents = [np.average(x[a:b], weights=w[a:b]) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    return np.array(cents)


def _lloyd1d(x, w, cents, iters):
    for _ in range(iters):
        cents = np.sort(cents)
        mid = (cents[1:] + cents[:-1]) / 2
        lab = np.searchsorted(mid, x, side="right")
        W = np.bincount(lab, weights=w, minlength=len(cents))
        S = np.bincount(lab, weights=w * x, minlength=len(cents))
        new = np.where(W > 0, S / np.where(W > 0, W, 1), cents)
        if np.array_equal(new, cents):
            break
        cents = new
    return np.sort(cents)


def norm_train(norms: np.ndarray, b: int = NORM_BITS, iters: int = KMEANS_ITERS) -> NormCodebook:
    """1-D k-means codebook for vector norms.

    Small inputs are solved exactly; larger ones start from the exact solution
    on quantile groups and refine with Lloyd. Zero norms get their own cell.
    """
    v = np.asarray(norms, dtype=np.float64).ravel()
    if np.any(v < 0):
        raise ValueError("norms must be non-negative")
    K = 1 << b
    has_zero = bool(np.any(v == 0))
    pos = v[v > 0]
    budget = K - 1 if has_zero else K
    cents: np.ndarray
    if len(pos) == 0:
        cents = np.zeros(0)
    else:
        x, w = np.unique(pos, return_counts=True)
        w = w.astype(np.float64)
        if len(x) <= budget:
            cents = x
        elif len(x) <= DP_MAX_POINTS:
            cents = kmeans1d_exact(x, w, budget)
        else:
            groups = np.array_split(np.arange(len(x)), DP_MAX_POINTS)
            gx = np.array([np.average(x[g], weights=w[g]) for g in groups])
            gw = np.array([w[g].sum() for g in groups])
            cents = _lloyd1d(x, w, kmeans1d_exact(gx, gw, budget), iters)
    if has_zero or len(cents) == 0:
        cents = np.concatenate([[0.0], cents])
    cents = np.sort(cents)
    table = np.concatenate([cents, np.full(K - len(cents), cents[-1])]).astype(np.float32)
    return NormCodebook(np.sort(table))


def norm_encode(ncb: NormCodebook, norms: np.ndarray) -> np.ndarray:
    c = ncb.centroids.astype(np.float64)
    v = np.asarray(norms, dtype=np.float64)
    hi = np.clip(np.searchsorted(c, v, side="left"), 0, len(c) - 1)
    lo = np.clip(hi - 1, 0, len(c) - 1)
    # lo is the first index of its value run when values are duplicated
    lo = np.searchsorted(c, c[lo], side="left")
    pick_lo = np.abs(v - c[lo]) <= np.abs(c[hi] - v)
    return np.where(pick_lo, lo, hi).astype(np.uint8)


def norm_decode(ncb: NormCodebook, codes: np.ndarray) -> np.ndarray:
    return ncb.centroids[np.asarray(codes, dtype=np.int64)]


# --------------------------------------------------------------------------
# normalized PQ


def split_norms(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    r = np.linalg.norm(X, axis=-1)
    safe = np.where(r > 0, r, 1.0)
    U = X / safe[..., None]
    return r, U


def npq_encode(cb: PQCodebook, ncb: NormCodebook, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(direction codes, norm codes); zero vectors get all-zero direction codes."""
    r, U = split_norms(x)
    codes = pq_encode(cb, U)
    codes[r == 0] = 0
    return codes, norm_encode(ncb, r)


def npq_decode(cb: PQCodebook, ncb: NormCodebook, codes: np.ndarray, norm_codes) -> np.ndarray:
    r = norm_decode(ncb, norm_codes).astype(np.float64)
    return pq_decode(cb, codes).astype(np.float64) * np.asarray(r)[..., None]


# --------------------------------------------------------------------------
# learned rotation


def pq_error(cb: PQCodebook, X: np.ndarray) -> float:
    X = np.asarray(X, dtype=np.float64)
    return float(((X - pq_decode(cb, pq_encode(cb, X))) ** 2).sum())


def opq_train(M: np.ndarray, k: int, b: int = 8, outer_iters: int = 10, iters: int = KMEANS_ITERS,
              seed: int = 0, max_points: int | None = MAX_TRAIN_POINTS, refit_iters: int = OPQ_REFIT_ITERS):
    """Alternate PQ fitting on rotated rows and an orthogonal Procrustes update.

    Rows are rotated as ``x @ R``. The first fit is exactly ``pq_train`` with the
    same seed, so the error never exceeds plain PQ on the training rows. Later
    fits warm-start from the previous codebook for ``refit_iters`` Lloyd steps.
    Returns (R, codebook, error history).
    """
    X = _sample(np.asarray(M, dtype=np.float64), max_points, seed)
    d = X.shape[1]
    _check_kb(d, k, b)
    R = np.eye(d)
    cb = pq_train(X, k, b, iters, seed, max_points=None)
    Xhat = pq_decode(cb, pq_encode(cb, X)).astype(np.float64)
    history = [float(((X @ R - Xhat) ** 2).sum())]
    for _ in range(outer_iters):
        try:
            U, _, Vt = np.linalg.svd(X.T @ Xhat)
        except np.linalg.LinAlgError:
            logger.warning("opq: SVD failed, keeping previous rotation")
            break
        R_new = U @ Vt
        Y = X @ R_new
        cb_new = pq_train(Y, k, b, refit_iters, seed, max_points=None, init=cb)
        Xhat_new = pq_decode(cb_new, pq_encode(cb_new, Y)).astype(np.float64)
        err = float(((Y - Xhat_new) ** 2).sum())
        if err > history[-1]:
            break
        R, cb, Xhat = R_new, cb_new, Xhat_new
        history.append(err)
    return R.astype(np.float32), cb, history


# --------------------------------------------------------------------------
# quantized matrix container

CODEC_HEADER_BYTES = 16


def pack_codes(codes: np.ndarray, b: int) -> np.ndarray:
    """Bit-pack each row's k codes of b bits; rows are padded to whole bytes."""
    codes = np.asarray(codes, dtype=np.uint8)
    if b == 8:
        return codes.copy()
    bits = np.unpackbits(codes[..., None], axis=-1)[..., 8 - b:]
    return np.packbits(bits.reshape(len(codes), -1), axis=1)


def unpack_codes(packed: np.ndarray, k: int, b: int) -> np.ndarray:
    if b == 8:
        return np.asarray(packed, dtype=np.uint8).reshape(-1, k)
    bits = np.unpackbits(packed, axis=1)[:, :k * b].reshape(len(packed), k, b)
    full = np.concatenate([np.zeros((len(packed), k, 8 - b), dtype=np.uint8), bits], axis=-1)
    return np.packbits(full, axis=-1)[..., 0]


@dataclass
class QuantizedMatrix:
    rows: int
    d: int
    codebook: PQCodebook
    codes: np.ndarray  # (rows, k) uint8
    norm_codebook: NormCodebook | None = None
    norm_codes: np.ndarray | None = None
    rotation: np.ndarray | None = None  # rows are encoded as x @ rotation
    history: list[float] = field(default_factory=list, compare=False, repr=False)

    @property
    def k(self) -> int:
        return self.codebook.k

    @property
    def b(self) -> int:
        return self.codebook.b

    def norms(self, idx=slice(None)) -> np.ndarray | None:
        if self.norm_codebook is None:
            return None
        return norm_decode(self.norm_codebook, self.norm_codes[idx]).astype(np.float64)

    def decode_rows(self, idx=slice(None)) -> np.ndarray:
        out = pq_decode(self.codebook, self.codes[idx]).astype(np.float64)
        r = self.norms(idx)
        if r is not None:
            out *= r[:, None]
        if self.rotation is not None:
            out = out @ self.rotation.T.astype(np.float64)
        return out

    def dot(self, y: np.ndarray, idx=slice(None)) -> np.ndarray:
        """Inner products of decoded rows with y, computed in the code domain."""
        y = np.asarray(y, dtype=np.float64)
        if self.rotation is not None:
            y = y @ self.rotation.astype(np.float64)
        out = pq_dot(self.codebook, self.codes[idx], y)
        r = self.norms(idx)
        return out * r if r is not None else out


def quantize_pq(M: np.ndarray, k: int, b: int = 8, normalize: bool = False, rotate: bool = False,
                seed: int = 0, iters: int = KMEANS_ITERS, opq_iters: int = 10,
                max_points: int | None = MAX_TRAIN_POINTS) -> QuantizedMatrix:
    """Train a codec on the rows of M and encode them (pq / npq / opq / opq_norm)."""
    M = np.asarray(M, dtype=np.float64)
    rows, d = M.shape
    ncb = ncodes = R = None
    X = M
    if normalize:
        r, X = split_norms(M)
        ncb = norm_train(r)
        ncodes = norm_encode(ncb, r)
        # zero rows keep an all-zero direction and must not bias the codebook
        train_rows = X[r > 0] if np.any(r > 0) else X
    else:
        r = None
        train_rows = X
    history: list[float] = []
    if rotate:
        R, cb, history = opq_train(train_rows, k, b, opq_iters, iters, seed, max_points)
        X = X @ R.astype(np.float64)
    else:
        cb = pq_train(train_rows, k, b, iters, seed, max_points)
    codes = pq_encode(cb, X)
    if r is not None:
        codes[r == 0] = 0
    return QuantizedMatrix(rows, d, cb, codes, ncb, ncodes, R, history)
