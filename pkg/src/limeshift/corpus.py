"""Seeded synthetic two-class bag-of-words corpus.

Tokens come from a mixture of a Zipfian background vocabulary shared by
both classes and a class-specific topic vocabulary.  Documents are stored
as term-frequency vectors.  Labels are 0 and 1; class 1 plays the role of
the explained class.
"""

from __future__ import annotations

import numpy as np

from .datasets import Dataset
from .numkit import SparseVector

DEFAULT_SEED = 20190601


def _zipf_weights(size: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.arange(1, size + 1) ** exponent
    return w / w.sum()


def generate_corpus(seed: int = DEFAULT_SEED, n_train: int = 600, n_test: int = 200,
                    vocab: int = 2000, topic_size: int = 150, topic_share: float = 0.35,
                    zipf_exponent: float = 1.05, mean_length: float = 60.0,
                    min_length: int = 12) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(seed)
    order = rng.permutation(vocab)
    topics = [order[:topic_size], order[topic_size:2 * topic_size]]
    background = np.zeros(vocab)
    background[order[2 * topic_size:]] = _zipf_weights(vocab - 2 * topic_size, zipf_exponent)
    dists = []
    for topic in topics:
        p = (1.0 - topic_share) * background
        p[topic] += topic_share * _zipf_weights(topic_size, 0.8)
        dists.append(p / p.sum())

    def draw(count):
        labels = np.repeat([0, 1], [count - count // 2, count // 2])
        rng.shuffle(labels)
        rows = []
        for lab in labels:
            length = min_length + rng.poisson(mean_length - min_length)
            tf = np.bincount(rng.choice(vocab, size=length, p=dists[lab]), minlength=vocab)
            nz = np.flatnonzero(tf)
            rows.append(SparseVector(nz, tf[nz].astype(np.float64), vocab))
        return Dataset.from_rows(rows, [int(v) for v in labels], vocab)

    return draw(n_train), draw(n_test)
