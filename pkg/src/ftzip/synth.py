"""Generated classification corpus with planted class vocabularies.

Documents mix shared stop-words, a Zipfian neutral vocabulary and class
keywords (a frequent core plus a long rare tail). Some signal words are drawn
from a wrong class, and a small share of documents is very short and made only
of rare tail words, so that aggressive pruning leaves them uncovered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STOPWORDS = [".", ",", "the", "and", "i", "a", "to", "it", "of", "this",
             "is", "in", "that", "was", "for", "with", "on", "but", "not", "you"]


@dataclass
class DeskCorpusConfig:
    n_docs: int = 20000
    n_classes: int = 4
    n_neutral: int = 4000
    n_core: int = 60
    n_tail: int = 2500
    min_len: int = 10
    max_len: int = 40
    p_stop: float = 0.35
    p_signal: float = 0.15
    p_own_class: float = 0.65
    p_core: float = 0.7
    p_short: float = 0.06
    label_noise: float = 0.02


def _zipf(n: int, s: float = 1.0) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def generate(cfg: DeskCorpusConfig | None = None, seed: int = 0) -> list[tuple[str, bytes]]:
    """Labeled documents as (label, text) pairs in a fixed seeded order."""
    cfg = cfg or DeskCorpusConfig()
    rng = np.random.default_rng(seed)
    stop_p = _zipf(len(STOPWORDS), 1.1)
    neutral_p = _zipf(cfg.n_neutral, 1.0)
    core_p = _zipf(cfg.n_core, 0.8)
    docs = []
    for _ in range(cfg.n_docs):
        y = int(rng.integers(cfg.n_classes))
        if rng.random() < cfg.p_short:
            n = int(rng.integers(1, 4))
            toks = [f"c{y}t{rng.integers(cfg.n_tail)}" for _ in range(n)]
        else:
            n = int(rng.integers(cfg.min_len, cfg.max_len + 1))
            kind = rng.random(n)
            stop = rng.choice(len(STOPWORDS), size=n, p=stop_p)
            neutral = rng.choice(cfg.n_neutral, size=n, p=neutral_p)
            own = rng.random(n) < cfg.p_own_class
            cls = np.where(own, y, rng.integers(cfg.n_classes, size=n))
            core = rng.random(n) < cfg.p_core
            core_id = rng.choice(cfg.n_core, size=n, p=core_p)
            tail_id = rng.integers(cfg.n_tail, size=n)
            toks = []
            for j in range(n):
                if kind[j] < cfg.p_stop:
                    toks.append(STOPWORDS[stop[j]])
                elif kind[j] < cfg.p_stop + cfg.p_signal:
                    toks.append(f"c{cls[j]}k{core_id[j]}" if core[j] else f"c{cls[j]}t{tail_id[j]}")
                else:
                    toks.append(f"w{neutral[j]}")
        if rng.random() < cfg.label_noise:
            y = int(rng.integers(cfg.n_classes))
        docs.append((f"c{y}", " ".join(toks).encode()))
    return docs


def desk_split(n_docs: int = 20000, test_fraction: float = 0.2, seed: int = 0, **overrides):
    """(train, test) split of a generated corpus."""
    docs = generate(DeskCorpusConfig(n_docs=n_docs, **overrides), seed)
    cut = int(round(len(docs) * (1 - test_fraction)))
    return docs[:cut], docs[cut:]


def to_lines(docs) -> list[str]:
    return [f"__label__{y} {t.decode()}" for y, t in docs]


SENTIMENT_POS = ["great", "excellent", "superb", "wonderful", "loved", "brilliant"]
SENTIMENT_NEG = ["mediocre", "disappointing", "worthless", "dreadful", "poorly", "worst"]
SENTIMENT_FILLER = ["product", "book", "movie", "time", "story", "price", "one", "really", "just", "very"]


def sentiment_toy(n_docs: int = 2000, seed: int = 0) -> list[tuple[str, bytes]]:
    """Two-class reviews: frequent stop-words, rarer polarity words."""
    rng = np.random.default_rng(seed)
    stop_p = _zipf(len(STOPWORDS), 1.0)
    docs = []
    for _ in range(n_docs):
        pos = rng.random() < 0.5
        polar = SENTIMENT_POS if pos else SENTIMENT_NEG
        n = int(rng.integers(8, 20))
        toks = []
        for _ in range(n):
            u = rng.random()
            if u < 0.55:
                toks.append(STOPWORDS[rng.choice(len(STOPWORDS), p=stop_p)])
            elif u < 0.85:
                toks.append(SENTIMENT_FILLER[rng.integers(len(SENTIMENT_FILLER))])
            else:
                toks.append(polar[rng.integers(len(polar))])
        toks.append(polar[rng.integers(len(polar))])
        docs.append(("pos" if pos else "neg", " ".join(toks).encode()))
    return docs
