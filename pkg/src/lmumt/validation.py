"""Input validation helpers shared by the estimators."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def check_corpus(corpus, allow_empty_sentences: bool = True) -> None:
    if corpus is None or len(corpus) == 0:
        raise ValueError("corpus is empty")
    if not allow_empty_sentences and any(len(s) == 0 for s in corpus):
        raise ValueError("corpus contains an empty sentence")


def as_ids(sentence, vocab) -> tuple[int, ...]:
    """Accept a token-string or token-id sequence; unknown strings map to ``<unk>``."""
    if isinstance(sentence, str):
        raise TypeError("expected a token sequence, got a raw string")
    if len(sentence) and isinstance(sentence[0], str):
        return vocab.encode(sentence)
    ids = tuple(int(i) for i in sentence)
    n = len(vocab)
    for i in ids:
        if not 0 <= i < n:
            raise ValueError(f"token id {i} outside vocabulary of size {n}")
    return ids


def as_id_corpus(corpus, vocab) -> list[tuple[int, ...]]:
    return [as_ids(s, vocab) for s in corpus]


def check_finite(values: Sequence[float], name: str = "input") -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise ValueError(f"{name} has a non-finite value at index {int(bad[0])}: {arr[bad[0]]}")
    return arr


def check_probability_vector(p, name: str, atol: float = 1e-12) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > atol:
        raise ValueError(f"{name} is not a probability vector (sum={p.sum()!r})")
    return p
