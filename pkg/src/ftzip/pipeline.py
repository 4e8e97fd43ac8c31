"""Compression recipe: prune, quantize A, retrain B against the frozen A, quantize B, pack."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, asdict, replace
from typing import Iterable, Sequence

import numpy as np

from ftzip import codecs
from ftzip.codecs import BinaryCodeMatrix, QuantizedMatrix
from ftzip.featurizer import hash_token, ngram_buckets, pack_documents, tokenize
from ftzip.linear_model import (
    FrozenInput,
    Model,
    encode_labels,
    featurize_corpus,
    hidden_batch,
    retrain_output,
    scores_to_predictions,
)
from ftzip.pruning import (
    PruneResult,
    bloom_build,
    bloom_lookup_many,
    bloom_row,
    feature_counts,
    lookup_many,
    maxcover_prune,
    rank_by_entropy,
    rank_by_norm,
    topk_prune,
)

logger = logging.getLogger(__name__)

PRUNE_MODES = ("none", "norm", "entropy", "maxcover")
WORD_KEY_TAG = np.uint64(1 << 32)
SWEEP_COLUMNS = ("codec", "k", "b", "prune", "cutoff", "retrain", "quant_output", "bloom",
                 "accuracy", "size_bytes", "coverage", "missed_pct")


@dataclass
class CompressOptions:
    codec: str = "npq"
    k: int | None = None  # defaults to d/2
    b: int = 8
    prune: str = "none"
    cutoff: int | None = None
    retrain: bool = False
    quantize_output: bool = False
    bloom: bool = False
    seed: int = 0
    bloom_bits: float = 10.0
    bloom_hashes: int = 7

    def __post_init__(self):
        if self.codec not in codecs.CODECS:
            raise ValueError(f"unknown codec {self.codec!r}; choose from {codecs.CODECS}")
        if self.prune not in PRUNE_MODES:
            raise ValueError(f"unknown prune mode {self.prune!r}; choose from {PRUNE_MODES}")
        if self.prune != "none" and (self.cutoff is None or self.cutoff < 1):
            raise ValueError("pruning requires a positive cutoff")
        if self.bloom and self.prune == "none":
            raise ValueError("bloom replaces the retained index and requires pruning")
        if not 1 <= self.b <= 8:
            raise ValueError("b must be in [1, 8]")

    def resolved_k(self, dim: int) -> int:
        k = self.k if self.k is not None else max(1, dim // 2)
        if self.codec.startswith("lsh"):
            if 8 * k > dim:
                raise ValueError(f"lsh with {k} bytes needs {8 * k} bits > dim {dim}")
        elif dim % k:
            raise ValueError(f"k={k} must divide dim={dim}")
        return k


@dataclass
class CompressedModel:
    labels: list[str]
    dim: int
    bucket: int
    word_ngrams: int
    A: QuantizedMatrix | BinaryCodeMatrix
    B: np.ndarray | QuantizedMatrix
    word_keys: np.ndarray | None = None  # sorted uint32 token hashes of retained words
    bucket_index: np.ndarray | None = None  # sorted uint32 retained bucket ids; None keeps every bucket
    bloom: object | None = None
    options: CompressOptions = field(default_factory=CompressOptions)
    prune: PruneResult | None = field(default=None, compare=False)
    stages: list[str] = field(default_factory=list, compare=False)

    @property
    def nword_rows(self) -> int:
        return 0 if self.word_keys is None else len(self.word_keys)

    def resolve_tokens(self, tokens: list[bytes]) -> np.ndarray:
        """Rows of A used by a tokenized text; pruned features are dropped."""
        if not tokens:
            return np.zeros(0, dtype=np.int64)
        hashes = np.fromiter(map(hash_token, tokens), dtype=np.uint64, count=len(tokens))
        buckets = ngram_buckets(hashes, self.word_ngrams, self.bucket).astype(np.uint64)
        if self.bloom is not None:
            keys = np.concatenate([hashes | WORD_KEY_TAG, buckets])
            rows = bloom_lookup_many(self.bloom, keys)
        else:
            # hashes and bucket ids fit the uint32 index dtype
            wrows = lookup_many(self.word_keys, hashes.astype(self.word_keys.dtype))
            if self.bucket_index is None:
                brows = buckets.astype(np.int64)
            else:
                brows = lookup_many(self.bucket_index, buckets.astype(self.bucket_index.dtype))
            brows = np.where(brows >= 0, brows + self.nword_rows, -1)
            rows = np.concatenate([wrows, brows])
        return rows[rows >= 0]

    def resolve_texts(self, texts: Iterable[bytes]) -> tuple[np.ndarray, np.ndarray]:
        parts = [self.resolve_tokens(tokenize(t)) for t in texts]
        offsets = np.zeros(len(parts) + 1, dtype=np.int64)
        np.cumsum([len(p) for p in parts], out=offsets[1:])
        rows = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        return rows.astype(np.int64), offsets


# --------------------------------------------------------------------------
# scoring


def quantized_scores(Bq: QuantizedMatrix, H: np.ndarray) -> np.ndarray:
    """Scores of every hidden vector against every class, via PQ table lookups."""
    cb = Bq.codebook
    H = np.asarray(H, dtype=np.float64)
    if Bq.rotation is not None:
        H = H @ Bq.rotation.astype(np.float64)
    # tables[n, i, c] = <centroid c of block i, block i of hidden n>
    tables = np.einsum("kcs,nks->nkc", cb.centroids.astype(np.float64), H.reshape(len(H), cb.k, cb.dsub))
    codes = Bq.codes.astype(np.int64)
    out = tables[:, np.arange(cb.k)[None, :], codes].sum(axis=2)  # (n, L)
    r = Bq.norms()
    return out * r[None, :] if r is not None else out


def dense_scores(B: np.ndarray | QuantizedMatrix, H: np.ndarray) -> np.ndarray:
    Bd = B.decode_rows() if isinstance(B, QuantizedMatrix) else np.asarray(B, dtype=np.float64)
    return np.asarray(H, dtype=np.float64) @ Bd.T


def _decode_hidden(cm: CompressedModel, rows: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, inv = np.unique(rows, return_inverse=True)
    table = cm.A.decode_rows(uniq) if len(uniq) else np.zeros((0, cm.dim))
    return hidden_batch(table, inv.astype(np.int64), offsets)


def predict_texts(cm: CompressedModel, texts: Sequence[bytes]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(labels, probabilities, missed mask) for a batch of raw texts."""
    rows, offsets = cm.resolve_texts(texts)
    H, empty = _decode_hidden(cm, rows, offsets)
    scores = quantized_scores(cm.B, H) if isinstance(cm.B, QuantizedMatrix) else dense_scores(cm.B, H)
    pred, probs = scores_to_predictions(scores, empty)
    return pred, probs, empty


def predict_compressed(cm: CompressedModel, text: bytes | str) -> tuple[int, np.ndarray]:
    t = text.encode("utf-8") if isinstance(text, str) else text
    pred, probs, _ = predict_texts(cm, [t])
    return int(pred[0]), probs[0]


def evaluate_compressed(cm: CompressedModel, corpus) -> tuple[float, float]:
    """(P@1, percentage of documents left without any feature)."""
    if not corpus:
        raise ValueError("empty corpus")
    _, y = encode_labels(corpus, cm.labels)
    pred, _, missed = predict_texts(cm, [t for _, t in corpus])
    return float(np.mean(pred == y)), 100.0 * float(np.mean(missed))


# --------------------------------------------------------------------------
# compression


def _stage(cm_stages: list[str], name: str):
    cm_stages.append(name)
    logger.info("stage: %s", name)


def prune_features(model: Model, opts: CompressOptions, feats=None, offsets=None) -> PruneResult | None:
    size = model.vocab.size
    K = opts.cutoff
    if opts.prune == "none":
        return None
    if opts.prune == "maxcover":
        if feats is None:
            raise ValueError("maxcover pruning needs the training corpus")
        norms = np.linalg.norm(model.A.astype(np.float64), axis=1)
        return maxcover_prune(feats, offsets, norms, K)
    if opts.prune == "norm":
        order = rank_by_norm(model.A)
    else:
        if feats is not None:
            counts = feature_counts(feats, size)
        else:
            logger.warning("entropy pruning without corpus: bucket counts unavailable, words only")
            counts = np.zeros(size, dtype=np.int64)
            counts[:model.vocab.nwords] = model.vocab.counts()
        order = rank_by_entropy(counts)
    if feats is None:
        feats = np.zeros(0, dtype=np.int64)
        offsets = np.zeros(1, dtype=np.int64)
    return topk_prune(order, K, feats, offsets, size, opts.prune)


def _word_hashes(model: Model) -> np.ndarray:
    return np.array([hash_token(w) for w, _ in model.vocab.words], dtype=np.uint64)


def _index_layout(model: Model, retained: np.ndarray | None):
    """Rows ordered as [words by token hash][buckets by id].

    A 32-bit hash shared by two retained words keeps the lower word id.
    Returns (row matrix, word keys, bucket index or None, feature -> row map).
    """
    V, size = model.vocab.nwords, model.vocab.size
    word_hash = _word_hashes(model)
    if retained is None:
        words = np.arange(V)
        bucket_rows = np.arange(V, size)
    else:
        words = retained[retained < V]
        bucket_rows = retained[retained >= V]
    order = np.lexsort((words, word_hash[words]))
    wids = words[order]
    wkeys = word_hash[wids]
    keep = np.ones(len(wids), dtype=bool)
    keep[1:] = wkeys[1:] != wkeys[:-1]
    if not keep.all():
        logger.warning("%d retained words share a 32-bit hash with another word; dropped", int((~keep).sum()))
    wids, wkeys = wids[keep], wkeys[keep]
    f2row = np.full(size, -1, dtype=np.int64)
    f2row[wids] = np.arange(len(wids))
    f2row[bucket_rows] = len(wids) + np.arange(len(bucket_rows))
    M = np.concatenate([model.A[wids], model.A[bucket_rows]]).astype(np.float64)
    bucket_index = None if retained is None else (bucket_rows - V).astype(np.uint32)
    return M, wkeys.astype(np.uint32), bucket_index, f2row


def feature_keys(model: Model, ids: np.ndarray) -> np.ndarray:
    """Hash-space key of each feature: tagged token hash for words, bucket id for n-grams."""
    V = model.vocab.nwords
    ids = np.asarray(ids, dtype=np.int64)
    word_hash = _word_hashes(model)
    keys = np.empty(len(ids), dtype=np.uint64)
    w = ids < V
    keys[w] = word_hash[ids[w]] | WORD_KEY_TAG
    keys[~w] = (ids[~w] - V).astype(np.uint64)
    return keys


def _bloom_layout(model: Model, retained: np.ndarray, opts: CompressOptions):
    """K rows addressed by a secondary hash of the key; colliding members are summed."""
    keys = feature_keys(model, retained)
    K = len(keys)
    bf = bloom_build(keys, opts.bloom_bits, opts.bloom_hashes, nrows=K)
    M = np.zeros((K, model.dim), dtype=np.float64)
    np.add.at(M, bloom_row(keys, K), model.A[retained].astype(np.float64))
    # map every feature the way inference will, false positives included
    size = model.vocab.size
    f2row = np.empty(size, dtype=np.int64)
    for s in range(0, size, 1 << 18):
        ids = np.arange(s, min(size, s + (1 << 18)))
        f2row[ids] = bloom_lookup_many(bf, feature_keys(model, ids))
    return M, bf, f2row


def compress(model: Model, corpus=None, opts: CompressOptions | None = None) -> CompressedModel:
    """Prune, quantize the input matrix, optionally retrain and quantize the output matrix."""
    opts = opts or CompressOptions()
    d = model.dim
    k = opts.resolved_k(d)
    if (opts.retrain or opts.prune == "maxcover") and not corpus:
        raise ValueError("retraining and max-cover pruning need the training corpus")
    stages: list[str] = []
    feats = offsets = None
    if corpus:
        _, y = encode_labels(corpus, model.labels)
        feats, offsets, _ = pack_documents(featurize_corpus(corpus, model.vocab, model.config.word_ngrams, y))

    _stage(stages, "prune")
    t0 = time.perf_counter()
    pr = prune_features(model, opts, feats, offsets)
    if pr is not None:
        logger.info(pr.report())
    retained = None if pr is None else pr.retained
    bloom = None
    word_keys = bucket_index = None
    if opts.bloom:
        M, bloom, f2row = _bloom_layout(model, retained, opts)
    else:
        M, word_keys, bucket_index, f2row = _index_layout(model, retained)

    _stage(stages, "quantize_input")
    A = codecs.quantize(M, opts.codec, k, opts.b, seed=opts.seed)

    B: np.ndarray | QuantizedMatrix = model.B.copy()
    if opts.retrain:
        _stage(stages, "retrain_output")
        table = A.decode_rows()
        frozen = FrozenInput(table, lambda doc: f2row[doc.features][f2row[doc.features] >= 0])
        B = retrain_output(model, corpus, frozen)
    if opts.quantize_output:
        _stage(stages, "quantize_output")
        B = codecs.quantize(B, "npq", max(1, d // 2), 8, seed=opts.seed)

    _stage(stages, "pack")
    logger.info("compression took %.2fs", time.perf_counter() - t0)
    return CompressedModel(list(model.labels), d, model.vocab.bucket, model.config.word_ngrams, A, B,
                           word_keys=word_keys, bucket_index=bucket_index, bloom=bloom,
                           options=replace(opts, k=k), prune=pr, stages=stages)


# --------------------------------------------------------------------------
# sweeps


def sweep(model: Model, test_corpus, grid: Sequence[CompressOptions], train_corpus=None) -> str:
    """CSV text with one row per grid point; failures become rows with accuracy 'error'."""
    from ftzip.model_io import size_report

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for opts in grid:
        head = [opts.codec, opts.k if opts.k is not None else "", opts.b, opts.prune,
                opts.cutoff if opts.cutoff is not None else "", int(opts.retrain),
                int(opts.quantize_output), int(opts.bloom)]
        try:
            cm = compress(model, train_corpus, opts)
            acc, missed = evaluate_compressed(cm, test_corpus)
            cov = 1.0 if cm.prune is None else cm.prune.train_coverage
            head[1] = cm.options.k
            writer.writerow(head + [f"{acc:.6f}", size_report(cm)["total"], f"{cov:.6f}", f"{missed:.4f}"])
        except Exception as exc:  # one bad grid point must not stop the sweep
            logger.error("sweep point %s failed: %s", asdict(opts), exc)
            writer.writerow(head + ["error", "", "", ""])
    return buf.getvalue()
