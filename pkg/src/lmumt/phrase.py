"""Phrase tables inferred from cross-lingual embeddings."""

from __future__ import annotations

from collections import Counter, defaultdict
from typing import Iterable, Sequence

import numpy as np
from scipy.special import log_softmax
from sklearn.base import BaseEstimator

from .corpus import SPECIALS, UNK
from .embed import CrossLingualMap, EmbeddingSpace, _normalize_rows

Phrase = tuple[str, ...]


class PhraseTable:
    """Ranked ``source phrase -> [(target phrase, probability), ...]`` entries."""

    def __init__(self, entries: dict[Phrase, list[tuple[Phrase, float]]] | None = None,
                 max_phrase_len: int = 2, lam: float = 30.0):
        self.entries: dict[Phrase, list[tuple[Phrase, float]]] = entries or {}
        self.max_phrase_len = max_phrase_len
        self.lam = lam
        self._lookup = None
        self._reverse = None

    def __len__(self):
        return len(self.entries)

    def __contains__(self, src):
        return tuple(src) in self.entries

    def candidates(self, src: Sequence[str]) -> list[tuple[Phrase, float]]:
        return self.entries.get(tuple(src), [])

    def log_prob(self, src: Sequence[str], tgt: Sequence[str]) -> float | None:
        """Log of the stored probability, or ``None`` when the pair is absent."""
        if self._lookup is None:
            self._lookup = {(s, t): float(np.log(p)) for s, cands in self.entries.items() for t, p in cands}
        return self._lookup.get((tuple(src), tuple(tgt)))

    def reverse_index(self) -> dict[Phrase, list[tuple[Phrase, float]]]:
        """``target phrase -> [(source phrase, log prob)]`` sorted best first."""
        if self._reverse is None:
            rev = defaultdict(list)
            for s, cands in self.entries.items():
                for t, p in cands:
                    rev[t].append((s, float(np.log(p))))
            for t in rev:
                rev[t].sort(key=lambda sp: (-sp[1], sp[0]))
            self._reverse = dict(rev)
        return self._reverse

    def best_translations(self, k: int = 1) -> dict[str, list[str]]:
        """Top-k unigram translations per source word, for lexicon evaluation."""
        return {s[0]: [t[0] for t, _ in cands[:k]] for s, cands in self.entries.items() if len(s) == 1}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for src in sorted(self.entries, key=lambda s: (len(s), s)):
                for tgt, p in self.entries[src]:
                    fh.write(f"{' '.join(src)}\t{' '.join(tgt)}\t{p!r}\n")

    @classmethod
    def load(cls, path) -> "PhraseTable":
        entries: dict[Phrase, list] = defaultdict(list)
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                src, tgt, p = line.rstrip("\n").split("\t")
                entries[tuple(src.split(" "))].append((tuple(tgt.split(" ")), float(p)))
        max_len = max((len(s) for s in entries), default=1)
        return cls(dict(entries), max_phrase_len=max_len)


def frequent_ngrams(corpus: Iterable[Sequence[str]], n: int, min_count: int) -> list[Phrase]:
    counts = Counter()
    for sent in corpus:
        for i in range(len(sent) - n + 1):
            gram = tuple(sent[i: i + n])
            if not any(t in SPECIALS for t in gram):
                counts[gram] += 1
    return sorted((g for g, c in counts.items() if c >= min_count), key=lambda g: (-counts[g], g))


def _phrase_vectors(phrases: Sequence[Phrase], space: EmbeddingSpace) -> np.ndarray:
    return _normalize_rows(np.array([np.mean([space.vector(w) for w in p], axis=0) for p in phrases]))


def _rank_rows(src: list[Phrase], tgt: list[Phrase], logp: np.ndarray, top_k: int):
    entries = {}
    k = min(top_k, len(tgt))
    for i, s in enumerate(src):
        row = logp[i]
        if k < len(tgt):
            cut = np.partition(row, -k)[-k]
            idx = np.flatnonzero(row >= cut)
        else:
            idx = np.arange(len(tgt))
        ranked = sorted(idx, key=lambda j: (-row[j], tgt[j]))[:k]
        entries[s] = [(tgt[j], float(np.exp(row[j]))) for j in ranked]
    return entries


class EmbeddingPhraseTable(BaseEstimator):
    """Builds a :class:`PhraseTable` by softmax over mapped-embedding cosines.

    Unigram rows are a softmax over the whole target embedding vocabulary;
    longer phrases use the renormalized mean of their word vectors and a
    softmax restricted to frequent target n-grams of the same length.
    """

    def __init__(self, max_phrase_len: int = 2, top_k: int = 20, lam: float = 30.0,
                 min_count: int = 5, max_source_words: int | None = None):
        self.max_phrase_len = max_phrase_len
        self.top_k = top_k
        self.lam = lam
        self.min_count = min_count
        self.max_source_words = max_source_words

    def fit(self, mapping: CrossLingualMap, E_x: EmbeddingSpace, E_y: EmbeddingSpace,
            corpus_x=None, corpus_y=None):
        if self.max_phrase_len < 1 or self.top_k < 1:
            raise ValueError("max_phrase_len and top_k must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        entries = {}
        src_words = [w for w in E_x.words if w != UNK][: self.max_source_words]
        tgt_words = list(E_y.words)
        src = _normalize_rows(E_x.matrix[[E_x.index[w] for w in src_words]] @ mapping.M)
        logp = log_softmax(self.lam * (src @ _normalize_rows(E_y.matrix).T), axis=1)
        entries.update(_rank_rows([(w,) for w in src_words], [(w,) for w in tgt_words], logp, self.top_k))

        if self.max_phrase_len > 1 and (corpus_x is None or corpus_y is None):
            raise ValueError("multi-word phrases need both monolingual corpora")
        for n in range(2, self.max_phrase_len + 1):
            sp = [g for g in frequent_ngrams(corpus_x, n, self.min_count) if all(w in E_x for w in g)]
            tp = [g for g in frequent_ngrams(corpus_y, n, self.min_count) if all(w in E_y for w in g)]
            if not sp or not tp:
                continue
            sv = _phrase_vectors(sp, E_x) @ mapping.M
            tv = _phrase_vectors(tp, E_y)
            logp = log_softmax(self.lam * (_normalize_rows(sv) @ tv.T), axis=1)
            entries.update(_rank_rows(sp, tp, logp, self.top_k))
        self.table_ = PhraseTable(entries, self.max_phrase_len, self.lam)
        return self


def infer_phrase_table(mapping, E_x, E_y, max_phrase_len: int = 2, top_k: int = 20, lam: float = 30.0,
                       corpus_x=None, corpus_y=None, min_count: int = 5) -> PhraseTable:
    est = EmbeddingPhraseTable(max_phrase_len=max_phrase_len, top_k=top_k, lam=lam, min_count=min_count)
    return est.fit(mapping, E_x, E_y, corpus_x, corpus_y).table_


def phrase_log_prob(table: PhraseTable, src_phrase, tgt_phrase) -> float | None:
    return table.log_prob(src_phrase, tgt_phrase)


def invert_table(table: PhraseTable, top_k: int | None = None) -> PhraseTable:
    """Swap the roles of source and target, keeping the forward probabilities.

    Handy for noisy-channel decoding in the opposite direction, where the
    channel model is still ``phi(tgt | src)`` of the forward table.
    """
    rev: dict[Phrase, list] = defaultdict(list)
    for s, cands in table.entries.items():
        for t, p in cands:
            rev[t].append((s, p))
    entries = {t: sorted(v, key=lambda sp: (-sp[1], sp[0]))[:top_k] for t, v in rev.items()}
    return PhraseTable(entries, table.max_phrase_len, table.lam)
