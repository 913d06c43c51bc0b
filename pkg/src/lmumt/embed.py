"""Monolingual PPMI-SVD embeddings, orthogonal cross-lingual mapping, word translation probabilities."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import SPECIALS
from .validation import check_corpus

log = logging.getLogger(__name__)


@dataclass
class EmbeddingSpace:
    """Row ``i`` of ``matrix`` is the unit-length vector of ``words[i]``; words are frequency-ranked."""

    words: list[str]
    matrix: np.ndarray
    counts: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.words)}

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def vector(self, word: str) -> np.ndarray:
        try:
            return self.matrix[self.index[word]]
        except KeyError:
            raise KeyError(f"word {word!r} not in embedding space") from None

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{len(self.words)} {self.dim}\n")
            for w, row in zip(self.words, self.matrix):
                fh.write(w + " " + " ".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path) -> "EmbeddingSpace":
        with open(path, encoding="utf-8") as fh:
            n, d = (int(v) for v in fh.readline().split())
            words, rows = [], []
            for _ in range(n):
                parts = fh.readline().rstrip("\n").split(" ")
                words.append(parts[0])
                rows.append([float(v) for v in parts[1:]])
        matrix = np.array(rows, dtype=float).reshape(n, d)
        return cls(words, matrix)


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return m / norms


class PPMIEmbedding(BaseEstimator, TransformerMixin):
    """Positive PMI co-occurrence matrix factorized by a truncated SVD.

    Parameters
    ----------
    dim : int
        Embedding dimension.
    window : int
        Symmetric context window.
    cds : float
        Context-distribution smoothing exponent for the PMI denominator.
    center : bool
        Mean-center before the final unit normalization.
    """

    def __init__(self, dim: int = 64, window: int = 5, cds: float = 0.75, center: bool = True):
        self.dim = dim
        self.window = window
        self.cds = cds
        self.center = center

    def fit(self, corpus, y=None):
        check_corpus(corpus)
        if self.window < 1:
            raise ValueError("window must be >= 1")
        counts = Counter(t for s in corpus for t in s if t not in SPECIALS)
        if len(counts) < 2:
            raise ValueError("degenerate corpus: need at least two distinct tokens")
        words = sorted(counts, key=lambda t: (-counts[t], t))
        if self.dim > len(words):
            raise ValueError(f"dim={self.dim} exceeds the number of distinct words ({len(words)})")
        index = {w: i for i, w in enumerate(words)}
        n = len(words)
        cooc = np.zeros((n, n))
        for sent in corpus:
            ids = [index[t] for t in sent if t in index]
            for i, a in enumerate(ids):
                for b in ids[i + 1: i + 1 + self.window]:
                    cooc[a, b] += 1.0
                    cooc[b, a] += 1.0
        total = cooc.sum()
        if total == 0:
            raise ValueError("degenerate corpus: no co-occurrences within the window")
        row = cooc.sum(axis=1)
        ctx = cooc.sum(axis=0) ** self.cds
        with np.errstate(divide="ignore", invalid="ignore"):
            pmi = np.log(cooc * ctx.sum() / (row[:, None] * ctx[None, :]))
        ppmi = np.where(np.isfinite(pmi) & (pmi > 0), pmi, 0.0)

        u, s, _ = np.linalg.svd(ppmi)
        u = u[:, : self.dim]
        # sign convention: the largest-magnitude entry of each singular vector is positive
        pivot = np.argmax(np.abs(u), axis=0)
        u = u * np.sign(u[pivot, np.arange(u.shape[1])])
        emb = _normalize_rows(u * np.sqrt(s[: self.dim]))
        if self.center and self.dim > 1:
            emb = _normalize_rows(emb - emb.mean(axis=0))
        self.space_ = EmbeddingSpace(words, emb, [counts[w] for w in words])
        return self

    def transform(self, words: Sequence[str]) -> np.ndarray:
        check_is_fitted(self, "space_")
        return np.array([self.space_.vector(w) for w in words])


def train_embeddings(corpus, dim: int = 64, window: int = 5) -> EmbeddingSpace:
    return PPMIEmbedding(dim=dim, window=window).fit(corpus).space_


# --------------------------------------------------------------------------
# cross-lingual mapping

@dataclass
class CrossLingualMap:
    """Orthogonal ``M`` acting on row vectors: a source row ``e`` maps to ``e @ M``."""

    M: np.ndarray
    induced_dict: list[tuple[str, str, float]] = field(default_factory=list)
    history: list[float] = field(default_factory=list)

    def save(self, path) -> None:
        np.savetxt(path, self.M, fmt="%.17g")

    @classmethod
    def load(cls, path) -> "CrossLingualMap":
        return cls(np.atleast_2d(np.loadtxt(path)))


def _seed_matrices(E_x, E_y, seed_dict):
    pairs = list(seed_dict)
    if not pairs:
        raise ValueError("seed dictionary is empty")
    xs = np.array([E_x.vector(a) for a, _ in pairs])
    ys = np.array([E_y.vector(b) for _, b in pairs])
    return xs, ys


def procrustes(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """argmin over orthogonal M of ||xs @ M - ys||_F."""
    u, _, vt = np.linalg.svd(xs.T @ ys)
    return u @ vt


def procrustes_map(E_x: EmbeddingSpace, E_y: EmbeddingSpace, seed_dict) -> CrossLingualMap:
    xs, ys = _seed_matrices(E_x, E_y, seed_dict)
    return CrossLingualMap(procrustes(xs, ys))


def mutual_nearest_neighbors(E_x: EmbeddingSpace, E_y: EmbeddingSpace, M: np.ndarray,
                             max_words: int | None = None) -> list[tuple[str, str, float]]:
    nx = len(E_x) if max_words is None else min(max_words, len(E_x))
    ny = len(E_y) if max_words is None else min(max_words, len(E_y))
    src = _normalize_rows(E_x.matrix[:nx] @ M)
    tgt = _normalize_rows(E_y.matrix[:ny])
    sims = src @ tgt.T
    fwd = sims.argmax(axis=1)
    bwd = sims.argmax(axis=0)
    return [(E_x.words[i], E_y.words[j], float(sims[i, j]))
            for i, j in enumerate(fwd) if bwd[j] == i]


class SelfLearningAligner(BaseEstimator):
    """Alternate a Procrustes fit with mutual-nearest-neighbour dictionary induction.

    Stops early, keeping the previous round, if the mean cosine of the induced
    dictionary drops.
    """

    def __init__(self, rounds: int = 5, max_words: int | None = None):
        self.rounds = rounds
        self.max_words = max_words

    def fit(self, E_x: EmbeddingSpace, E_y: EmbeddingSpace, seed_dict):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        current = [(a, b) for a, b, *_ in seed_dict]
        best = None
        for r in range(self.rounds):
            M = procrustes(*_seed_matrices(E_x, E_y, current))
            induced = mutual_nearest_neighbors(E_x, E_y, M, self.max_words)
            if not induced:
                raise ValueError(f"self-learning round {r + 1}: induced dictionary is empty "
                                 f"(seed size {len(current)})")
            score = float(np.mean([c for *_, c in induced]))
            log.debug("self-learning round %d: %d pairs, mean cos %.4f", r + 1, len(induced), score)
            if best is not None and score < best.history[-1]:
                break
            history = (best.history if best else []) + [score]
            best = CrossLingualMap(M, induced, history)
            current = [(a, b) for a, b, _ in induced]
        self.map_ = best
        return self


def self_learning(E_x, E_y, init_dict, rounds: int = 5, max_words: int | None = None) -> CrossLingualMap:
    return SelfLearningAligner(rounds=rounds, max_words=max_words).fit(E_x, E_y, init_dict).map_


def seed_dictionary(E_x: EmbeddingSpace, E_y: EmbeddingSpace, min_anchors: int = 25,
                    top: int = 500) -> list[tuple[str, str]]:
    """Identical strings shared by both spaces, else frequency-rank pairing of the top words."""
    shared = [w for w in E_x.words if w in E_y.index]
    if len(shared) >= min_anchors:
        return [(w, w) for w in shared]
    n = min(top, len(E_x), len(E_y))
    return list(zip(E_x.words[:n], E_y.words[:n]))


def bootstrap_seed(E_x: EmbeddingSpace, E_y: EmbeddingSpace, seed_dict, n_anchors: int = 10,
                   rounds: int = 15, grow: float = 1.3, rank_penalty: float = 0.2) -> list[tuple[str, str]]:
    """Grow a reliable dictionary out of the first ``n_anchors`` pairs of a noisy seed.

    Each word is described by its cosines to the current anchors inside its own
    space, which needs no mapping, so the two descriptions are directly
    comparable. Words are paired as mutual nearest neighbours of these
    descriptions, minus ``rank_penalty`` times the gap in log frequency rank;
    the best-scoring pairs become the next anchor set, which grows by a factor
    of ``grow`` per round.
    """
    if n_anchors < 1 or rounds < 1 or grow < 1:
        raise ValueError("n_anchors and rounds must be >= 1 and grow >= 1")
    pairs = [(E_x.index[a], E_y.index[b]) for a, b, *_ in seed_dict if a in E_x and b in E_y][:n_anchors]
    if not pairs:
        raise ValueError("no seed pair is present in both spaces")
    X, Y = E_x.matrix, E_y.matrix
    rx, ry = np.log1p(np.arange(len(E_x))), np.log1p(np.arange(len(E_y)))
    penalty = rank_penalty * np.abs(rx[:, None] - ry[None, :])

    def describe(M, rows):
        d = _normalize_rows(M @ M[rows].T)
        return _normalize_rows(d - d.mean(axis=0))

    mutual = pairs
    for _ in range(rounds):
        ax, ay = zip(*pairs)
        sims = describe(X, list(ax)) @ describe(Y, list(ay)).T - penalty
        fwd, bwd = sims.argmax(axis=1), sims.argmax(axis=0)
        scored = sorted(((-sims[i, j], i, int(j)) for i, j in enumerate(fwd) if bwd[j] == i))
        mutual = [(i, j) for _, i, j in scored]
        size = min(len(mutual), max(int(len(pairs) * grow), len(pairs) + 1))
        pairs = mutual[:size] or pairs
    return [(E_x.words[i], E_y.words[j]) for i, j in mutual]


# --------------------------------------------------------------------------
# word translation probabilities

def translation_log_probs(query: np.ndarray, targets: np.ndarray, lam: float) -> np.ndarray:
    """log softmax of ``lam * cos(query, target_j)`` over the target rows."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    q = query / (np.linalg.norm(query) or 1.0)
    cos = _normalize_rows(np.atleast_2d(targets)) @ q
    return log_softmax(lam * cos)


def word_translation_prob(mapping: CrossLingualMap, E_x: EmbeddingSpace, E_y: EmbeddingSpace,
                          word: str, lam: float = 30.0) -> np.ndarray:
    """P(y_j | word) for every target word ``E_y.words[j]``."""
    if word not in E_x:
        raise KeyError(f"source word {word!r} has no embedding")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    q = E_x.vector(word) @ mapping.M
    # softmax subtracts the max itself, so lam = 0 gives exactly 1/|V_y|
    return softmax(lam * (_normalize_rows(E_y.matrix) @ (q / (np.linalg.norm(q) or 1.0))))
