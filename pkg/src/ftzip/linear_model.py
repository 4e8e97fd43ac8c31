"""Softmax linear classifier over averaged feature embeddings, trained by SGD."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numba
import numpy as np

from ftzip.featurizer import Document, Vocabulary, build_vocab, featurize, pack_documents

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    dim: int = 8
    lr: float = 0.1
    epochs: int = 10
    word_ngrams: int = 2
    bucket: int = 2_000_000
    min_count: int = 1
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.dim < 1 or self.dim & (self.dim - 1):
            raise ValueError(f"dim must be a power of 2, got {self.dim}")
        if not self.lr >= 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.word_ngrams < 1:
            raise ValueError("word_ngrams must be >= 1")
        if self.bucket < 1:
            raise ValueError("bucket must be >= 1")
        if self.min_count < 1:
            raise ValueError("min_count must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Model:
    vocab: Vocabulary
    A: np.ndarray
    B: np.ndarray
    labels: list[str]
    config: TrainConfig
    loss_history: list[float] = field(default_factory=list, compare=False)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def featurize(self, text) -> Document:
        return featurize(text, self.vocab, self.config.word_ngrams)


class EmptyDocument(ValueError):
    """Raised when a document has no features to average."""


def softmax(scores: np.ndarray) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    z = np.exp(s - s.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def hidden(model: Model, doc: Document) -> np.ndarray:
    if len(doc.features) == 0:
        raise EmptyDocument("no features")
    return model.A[doc.features].astype(np.float64).mean(axis=0)


def predict(model: Model, doc: Document) -> tuple[int, np.ndarray]:
    nlabels = model.B.shape[0]
    try:
        h = hidden(model, doc)
    except EmptyDocument:
        return 0, np.full(nlabels, 1.0 / nlabels)
    probs = softmax(model.B.astype(np.float64) @ h)
    return int(np.argmax(probs)), probs


def hidden_batch(table: np.ndarray, rows: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean of ``table[rows]`` per document segment; empty segments give zeros.

    Returns (hidden matrix, boolean mask of empty documents).
    """
    n = len(offsets) - 1
    lengths = np.diff(offsets)
    empty = lengths == 0
    H = np.zeros((n, table.shape[1]), dtype=np.float64)
    if len(rows):
        sums = np.add.reduceat(table[rows].astype(np.float64), offsets[:-1][~empty], axis=0)
        H[~empty] = sums / lengths[~empty, None]
    return H, empty


def scores_to_predictions(scores: np.ndarray, empty: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    probs = softmax(scores)
    probs[empty] = 1.0 / probs.shape[1]
    return probs.argmax(axis=1), probs


# --------------------------------------------------------------------------
# SGD kernels


@numba.njit(cache=True, fastmath=False)
def _sgd_step(feats, start, stop, label, A, B, lr, update_input, h, grad, scores):
    n = stop - start
    d = A.shape[1]
    L = B.shape[0]
    for j in range(d):
        h[j] = 0.0
    for i in range(start, stop):
        row = feats[i]
        for j in range(d):
            h[j] += A[row, j]
    inv = np.float32(1.0) / np.float32(n)
    for j in range(d):
        h[j] *= inv
    smax = -np.inf
    for c in range(L):
        s = np.float32(0.0)
        for j in range(d):
            s += B[c, j] * h[j]
        scores[c] = s
        if s > smax:
            smax = s
    z = 0.0
    for c in range(L):
        scores[c] = math.exp(scores[c] - smax)
        z += scores[c]
    for j in range(d):
        grad[j] = 0.0
    loss = 0.0
    for c in range(L):
        p = scores[c] / z
        target = 1.0 if c == label else 0.0
        if c == label:
            loss = -math.log(max(p, 1e-30))
        alpha = np.float32(lr * (target - p))
        for j in range(d):
            grad[j] += alpha * B[c, j]
            B[c, j] += alpha * h[j]
    if update_input:
        for j in range(d):
            grad[j] *= inv
        for i in range(start, stop):
            row = feats[i]
            for j in range(d):
                A[row, j] += grad[j]
    return loss


@numba.njit(cache=True)
def _sgd_serial(feats, offsets, labels, order, A, B, lr, update_input):
    epochs, n = order.shape
    d = A.shape[1]
    L = B.shape[0]
    h = np.zeros(d, dtype=np.float32)
    grad = np.zeros(d, dtype=np.float32)
    scores = np.zeros(L, dtype=np.float64)
    losses = np.zeros(epochs, dtype=np.float64)
    total = epochs * n
    step = 0
    for e in range(epochs):
        seen = 0
        for k in range(n):
            doc = order[e, k]
            rate = lr * (1.0 - step / total)
            step += 1
            start = offsets[doc]
            stop = offsets[doc + 1]
            if stop == start:
                continue
            loss = _sgd_step(feats, start, stop, labels[doc], A, B, rate, update_input, h, grad, scores)
            if not math.isfinite(loss):
                losses[e] = np.nan
                return losses
            losses[e] += loss
            seen += 1
        if seen:
            losses[e] /= seen
    return losses


@numba.njit(cache=True, parallel=True)
def _sgd_hogwild(feats, offsets, labels, order, A, B, lr, update_input, nthreads):
    # workers share A and B without locks
    epochs, n = order.shape
    d = A.shape[1]
    L = B.shape[0]
    losses = np.zeros((nthreads, epochs), dtype=np.float64)
    counts = np.zeros((nthreads, epochs), dtype=np.float64)
    total = epochs * n
    for w in numba.prange(nthreads):
        h = np.zeros(d, dtype=np.float32)
        grad = np.zeros(d, dtype=np.float32)
        scores = np.zeros(L, dtype=np.float64)
        step = 0
        for e in range(epochs):
            for k in range(w, n, nthreads):
                doc = order[e, k]
                rate = lr * (1.0 - min(step * nthreads, total) / total)
                step += 1
                start = offsets[doc]
                stop = offsets[doc + 1]
                if stop == start:
                    continue
                loss = _sgd_step(feats, start, stop, labels[doc], A, B, rate, update_input, h, grad, scores)
                losses[w, e] += loss
                counts[w, e] += 1.0
    out = np.zeros(epochs, dtype=np.float64)
    for e in range(epochs):
        c = 0.0
        for w in range(nthreads):
            out[e] += losses[w, e]
            c += counts[w, e]
        if c > 0:
            out[e] /= c
    return out


def run_sgd(feats, offsets, labels, A, B, config: TrainConfig, update_input: bool = True) -> np.ndarray:
    """Run ``config.epochs`` of SGD in place on A and B; returns per-epoch mean loss."""
    n = len(offsets) - 1
    rng = np.random.default_rng(config.seed + 1)
    order = np.stack([rng.permutation(n) for _ in range(config.epochs)]) if config.epochs else np.zeros((0, n), dtype=np.int64)
    order = order.astype(np.int64).reshape(config.epochs, n)
    args = (np.ascontiguousarray(feats, dtype=np.int64), offsets.astype(np.int64),
            labels.astype(np.int64), order, A, B, np.float64(config.lr), update_input)
    if config.threads == 1:
        losses = _sgd_serial(*args)
    else:
        numba.set_num_threads(min(config.threads, numba.config.NUMBA_NUM_THREADS))
        losses = _sgd_hogwild(*args, config.threads)
    if np.any(~np.isfinite(losses)):
        raise FloatingPointError("training loss became NaN/inf; try a lower learning rate")
    return losses


# --------------------------------------------------------------------------


def encode_labels(corpus, labels: Sequence[str] | None = None) -> tuple[list[str], np.ndarray]:
    """Label ids for a corpus of (label, text) pairs; new labels are appended in order of appearance."""
    names = list(labels) if labels is not None else []
    index = {name: i for i, name in enumerate(names)}
    ids = np.empty(len(corpus), dtype=np.int64)
    for i, (label, _) in enumerate(corpus):
        if label is None:
            raise ValueError(f"document {i} has no __label__ prefix")
        if label not in index:
            if labels is not None:
                raise KeyError(f"label {label!r} unknown to the model")
            index[label] = len(names)
            names.append(label)
        ids[i] = index[label]
    return names, ids


def featurize_corpus(corpus, vocab: Vocabulary, word_ngrams: int, label_ids=None) -> list[Document]:
    if label_ids is None:
        label_ids = np.full(len(corpus), -1, dtype=np.int64)
    return [featurize(text, vocab, word_ngrams, int(y)) for (_, text), y in zip(corpus, label_ids)]


def init_input(rows: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0 / dim, 1.0 / dim, size=(rows, dim)).astype(np.float32)


def train(corpus, config: TrainConfig | None = None) -> Model:
    """Train on a list of (label, text) pairs."""
    config = config or TrainConfig()
    if not corpus:
        raise ValueError("empty corpus")
    labels, y = encode_labels(corpus)
    if len(labels) < 2:
        raise ValueError("training needs at least two distinct labels")
    vocab = build_vocab(corpus, config.min_count, config.bucket, config.word_ngrams)
    docs = featurize_corpus(corpus, vocab, config.word_ngrams, y)
    feats, offsets, _ = pack_documents(docs)
    A = init_input(vocab.size, config.dim, config.seed)
    B = np.zeros((len(labels), config.dim), dtype=np.float32)
    logger.info("training: %d docs, %d words, %d labels, %s", len(docs), vocab.nwords, len(labels), config)
    losses = run_sgd(feats, offsets, y, A, B, config)
    return Model(vocab, A, B, labels, config, loss_history=list(map(float, losses)))


def predict_docs(model: Model, docs: Sequence[Document]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    feats, offsets, _ = pack_documents(docs)
    H, empty = hidden_batch(model.A, feats, offsets)
    pred, probs = scores_to_predictions(H @ model.B.T.astype(np.float64), empty)
    return pred, probs, empty


def evaluate(model: Model, corpus) -> float:
    """Top-1 accuracy (P@1) on a labeled corpus."""
    if not corpus:
        raise ValueError("empty corpus")
    _, y = encode_labels(corpus, model.labels)
    docs = featurize_corpus(corpus, model.vocab, model.config.word_ngrams, y)
    pred, _, _ = predict_docs(model, docs)
    return float(np.mean(pred == y))


@dataclass
class FrozenInput:
    """Reconstructed input rows plus the feature-to-row resolution used at inference."""

    table: np.ndarray
    resolve: Callable[[Document], np.ndarray]


def exact_frozen_input(model: Model) -> FrozenInput:
    return FrozenInput(model.A, lambda doc: doc.features)


def retrain_output(model: Model, corpus, frozen: FrozenInput, config: TrainConfig | None = None) -> np.ndarray:
    """Retrain B from zero against a frozen (typically quantized) input matrix."""
    config = config or model.config
    if not corpus:
        raise ValueError("empty corpus")
    _, y = encode_labels(corpus, model.labels)
    docs = featurize_corpus(corpus, model.vocab, model.config.word_ngrams, y)
    rows = [Document(d.label, np.asarray(frozen.resolve(d), dtype=np.int64)) for d in docs]
    feats, offsets, _ = pack_documents(rows)
    table = np.ascontiguousarray(frozen.table, dtype=np.float32)
    B = np.zeros_like(model.B, dtype=np.float32)
    run_sgd(feats, offsets, y, table, B, config, update_input=False)
    return B


def loss_and_grads(A: np.ndarray, B: np.ndarray, features: np.ndarray, label: int):
    """Softmax loss of one document and its gradients, in float64.

    Returns (loss, grad_rows, grad_B) where grad_rows[i] is d loss / d A[features[i]]
    for one occurrence; duplicates accumulate.
    """
    A64 = A.astype(np.float64)
    B64 = B.astype(np.float64)
    n = len(features)
    h = A64[features].mean(axis=0)
    p = softmax(B64 @ h)
    loss = -math.log(p[label])
    g = p.copy()
    g[label] -= 1.0
    grad_B = np.outer(g, h)
    grad_h = B64.T @ g
    grad_rows = np.tile(grad_h / n, (n, 1))
    return loss, grad_rows, grad_B
