"""Text to sparse feature ids: word vocabulary plus hashed n-gram buckets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

FNV_OFFSET = 2166136261
FNV_PRIME = 16777619
NGRAM_MULT = 116049371
LABEL_PREFIX = b"__label__"

_MASK32 = 0xFFFFFFFF
_MULT64 = np.uint64(NGRAM_MULT)


def _as_bytes(text: bytes | str) -> bytes:
    return text.encode("utf-8") if isinstance(text, str) else text


def tokenize(text: bytes | str) -> list[bytes]:
    # bytes.split() with no argument splits on runs of ASCII whitespace only
    return _as_bytes(text).split()


@lru_cache(maxsize=1 << 20)
def hash_token(token: bytes) -> int:
    """32-bit FNV-1a."""
    h = FNV_OFFSET
    for byte in token:
        h = ((h ^ byte) * FNV_PRIME) & _MASK32
    return h


def ngram_bucket(token_hashes: Sequence[int], nbuckets: int, offset: int = 0) -> int:
    """Bucket id of one n-gram window; ``offset`` is the vocabulary size V."""
    if len(token_hashes) < 2:
        raise ValueError("n-gram buckets need at least two token hashes")
    h = int(token_hashes[0])
    for g in token_hashes[1:]:
        h = (h * NGRAM_MULT + int(g)) % (1 << 64)
    return offset + h % nbuckets


def ngram_buckets(hashes: np.ndarray, word_ngrams: int, nbuckets: int) -> np.ndarray:
    """Vectorized ``ngram_bucket`` over every window of orders 2..word_ngrams.

    Returns bucket indices in [0, nbuckets) (no vocabulary offset), grouped by
    order and then by window start.
    """
    hashes = np.asarray(hashes, dtype=np.uint64)
    t = len(hashes)
    out = []
    acc = hashes.copy()
    for order in range(2, word_ngrams + 1):
        if t < order:
            break
        # uint64 arithmetic wraps modulo 2**64
        acc = acc[:-1] * _MULT64 + hashes[order - 1:]
        out.append(acc % np.uint64(nbuckets))
    if not out:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(out).astype(np.int64)


def parse_line(line: bytes | str) -> tuple[str | None, bytes]:
    """Split a corpus line into (first label or None, text).

    Every leading ``__label__`` token is stripped; only the first is kept.
    """
    tokens = tokenize(line)
    label = None
    i = 0
    while i < len(tokens) and tokens[i].startswith(LABEL_PREFIX):
        if label is None:
            label = tokens[i][len(LABEL_PREFIX):].decode("utf-8", errors="replace")
        i += 1
    return label, b" ".join(tokens[i:])


def read_corpus(path) -> list[tuple[str | None, bytes]]:
    with open(path, "rb") as fh:
        return [parse_line(line) for line in fh]


def iter_texts(corpus: Iterable[tuple[str | None, bytes] | bytes | str]) -> Iterator[bytes]:
    for item in corpus:
        yield _as_bytes(item[1]) if isinstance(item, tuple) else _as_bytes(item)


@dataclass
class Vocabulary:
    words: list[tuple[bytes, int]]
    min_count: int = 1
    bucket: int = 2_000_000
    word_ngrams: int = 2
    index: dict[bytes, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.index:
            self.index = {w: i for i, (w, _) in enumerate(self.words)}

    @property
    def nwords(self) -> int:
        return len(self.words)

    @property
    def size(self) -> int:
        """Total feature space V + B."""
        return len(self.words) + self.bucket

    def counts(self) -> np.ndarray:
        return np.array([c for _, c in self.words], dtype=np.int64)

    def get_id(self, token: bytes) -> int:
        return self.index.get(token, -1)


def build_vocab(corpus, min_count: int = 1, bucket: int = 2_000_000,
                word_ngrams: int = 2) -> Vocabulary:
    """Words with count >= min_count, in order of first occurrence."""
    counts: dict[bytes, int] = {}
    for text in iter_texts(corpus):
        for tok in tokenize(text):
            counts[tok] = counts.get(tok, 0) + 1
    if not counts:
        logger.warning("empty corpus: vocabulary has no words")
    words = [(w, c) for w, c in counts.items() if c >= min_count]
    return Vocabulary(words, min_count=min_count, bucket=bucket, word_ngrams=word_ngrams)


@dataclass
class Document:
    label: int
    features: np.ndarray


def featurize_tokens(tokens: list[bytes], vocab: Vocabulary, word_ngrams: int) -> np.ndarray:
    ids = [i for i in map(vocab.get_id, tokens) if i >= 0]
    if word_ngrams >= 2 and len(tokens) >= 2:
        hashes = np.fromiter(map(hash_token, tokens), dtype=np.uint64, count=len(tokens))
        buckets = ngram_buckets(hashes, word_ngrams, vocab.bucket) + vocab.nwords
        return np.concatenate([np.asarray(ids, dtype=np.int64), buckets])
    return np.asarray(ids, dtype=np.int64)


def featurize(text: bytes | str, vocab: Vocabulary, word_ngrams: int | None = None,
              label: int = -1) -> Document:
    """Word ids for in-vocabulary tokens, then one bucket per n-gram window.

    Out-of-vocabulary tokens drop their unigram but still take part in the
    n-gram windows.
    """
    n = vocab.word_ngrams if word_ngrams is None else word_ngrams
    if n < 1:
        raise ValueError("word_ngrams must be >= 1")
    return Document(label, featurize_tokens(tokenize(text), vocab, n))


def pack_documents(docs: Sequence[Document]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flatten documents into (features, offsets, labels) arrays."""
    lengths = np.fromiter((len(d.features) for d in docs), dtype=np.int64, count=len(docs))
    offsets = np.zeros(len(docs) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    if docs:
        feats = np.concatenate([d.features for d in docs]).astype(np.int64)
    else:
        feats = np.zeros(0, dtype=np.int64)
    labels = np.fromiter((d.label for d in docs), dtype=np.int64, count=len(docs))
    return feats, offsets, labels
