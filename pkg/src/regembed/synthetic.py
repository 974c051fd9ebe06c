"""Small synthetic stand-ins for the relation and sentiment datasets.

Each class owns a handful of keywords; a sentence mixes one or two keywords
of its class into shared filler words. "Pretrained" vectors place a class's
keywords around a common centroid so embeddings carry useful signal.
Training labels can be corrupted to make overfitting visible.
"""

from dataclasses import dataclass

import numpy as np

from .core import RandomSource
from .data import RELATION_LABELS


@dataclass
class SyntheticTask:
    train: list
    val: list
    vectors: dict
    num_classes: int


def _pick(rng, items):
    return items[rng.randbelow(len(items))]


def _sentence(rng, label, keywords, filler, min_len, max_len):
    n = min_len + rng.randbelow(max_len - min_len + 1)
    tokens = [_pick(rng, filler) for _ in range(n)]
    for _ in range(1 + rng.randbelow(2)):
        tokens[rng.randbelow(n)] = _pick(rng, keywords[label])
    return tokens


def make_vectors(rng, keywords, filler, dim, scale):
    vectors = {}
    for words in keywords:
        centroid = rng.symmetric(scale, dim)
        for w in words:
            vectors[w] = centroid + rng.symmetric(scale, dim)
    for w in filler:
        vectors[w] = rng.symmetric(scale, dim)
    return vectors


def make_task(n_train, n_val, num_classes=10, keywords_per_class=6, filler_size=200,
              min_len=5, max_len=12, label_noise=0.0, dim=50, scale=0.5, seed=0):
    """Rows are ``(label_index, tokens)``; labels are noisy in train only."""
    rng = RandomSource(seed)
    keywords = [[f"k{c}_{j}" for j in range(keywords_per_class)] for c in range(num_classes)]
    filler = [f"f{j}" for j in range(filler_size)]
    vectors = make_vectors(rng.fork("vectors"), keywords, filler, dim, scale)

    def rows(n, noise, stream):
        out = []
        for _ in range(n):
            label = stream.randbelow(num_classes)
            tokens = _sentence(stream, label, keywords, filler, min_len, max_len)
            if noise and stream.random() < noise:
                label = stream.randbelow(num_classes)
            out.append((label, tokens))
        return out

    return SyntheticTask(rows(n_train, label_noise, rng.fork("train")),
                         rows(n_val, 0.0, rng.fork("val")), vectors, num_classes)


def relation_rows(task):
    """Rows with relation label names, ready for a sentence file."""
    return [(RELATION_LABELS[label], tokens) for label, tokens in task.train], \
        [(RELATION_LABELS[label], tokens) for label, tokens in task.val]


def random_bracketing(rng, words):
    """A uniformly chosen split point at every level gives a random binary tree."""
    if len(words) == 1:
        return words[0]
    k = 1 + rng.randbelow(len(words) - 1)
    return (random_bracketing(rng, words[:k]), random_bracketing(rng, words[k:]))


def make_tree_task(n_train, n_val, label_noise=0.0, seed=0, **kw):
    """Sentiment-style variant: 5 classes, each sentence randomly bracketed."""
    task = make_task(n_train, n_val, num_classes=5, label_noise=label_noise, seed=seed, **kw)
    rng = RandomSource(seed).fork("brackets")
    task.train = [(label, random_bracketing(rng, toks)) for label, toks in task.train]
    task.val = [(label, random_bracketing(rng, toks)) for label, toks in task.val]
    return task
