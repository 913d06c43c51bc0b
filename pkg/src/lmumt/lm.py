"""Interpolated Kneser-Ney n-gram language model."""

from __future__ import annotations

import io
import math
import struct
from collections import defaultdict
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import Vocabulary, build_vocab
from .validation import as_id_corpus, as_ids, check_corpus

_MAGIC = b"KNLM"
_VERSION = 1


class KneserNeyLM(BaseEstimator):
    """Interpolated Kneser-Ney with one absolute discount shared by all orders.

    The highest order uses raw counts, lower orders use continuation counts,
    and the unigram level interpolates with a uniform distribution over the
    whole vocabulary so every token (``<unk>`` included) keeps positive mass.
    Log-probabilities are natural logs.

    Parameters
    ----------
    order : int
        n-gram order, 1 to 5.
    discount : float
        Absolute discount in (0, 1).
    """

    def __init__(self, order: int = 3, discount: float = 0.75):
        self.order = order
        self.discount = discount

    def fit(self, corpus, vocab: Vocabulary | None = None):
        if not 1 <= self.order <= 5:
            raise ValueError(f"order must lie in [1, 5], got {self.order}")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        check_corpus(corpus)
        if vocab is None:
            vocab = build_vocab(corpus, max_size=10 ** 9)
        self.vocab_ = vocab
        ids = as_id_corpus(corpus, vocab)
        n = self.order
        top: dict[tuple, int] = defaultdict(int)
        for sent in ids:
            padded = (vocab.bos_id,) * (n - 1) + tuple(sent) + (vocab.eos_id,)
            for i in range(n - 1, len(padded)):
                top[padded[i - n + 1: i + 1]] += 1
        counts = {n: dict(top)}
        for k in range(n - 1, 0, -1):
            cont: dict[tuple, int] = defaultdict(int)
            for gram in counts[k + 1]:
                cont[gram[1:]] += 1
            counts[k] = dict(cont)
        self._set_counts(counts)
        return self

    def _set_counts(self, counts):
        self.counts_ = counts
        # per-context (total count, number of distinct followers)
        self.context_stats_ = {}
        for k, table in counts.items():
            stats: dict[tuple, list] = defaultdict(lambda: [0, 0])
            for gram, c in table.items():
                s = stats[gram[:-1]]
                s[0] += c
                s[1] += 1
            self.context_stats_[k] = {ctx: tuple(v) for ctx, v in stats.items()}
        self._cache = {}

    @classmethod
    def uniform(cls, vocab: Vocabulary) -> "KneserNeyLM":
        """A unigram model with no data: every token gets 1/|V|."""
        lm = cls(order=1)
        lm.vocab_ = vocab
        lm._set_counts({1: {}})
        return lm

    # ------------------------------------------------------------------
    def _prob(self, word: int, context: tuple) -> float:
        k = len(context) + 1
        if k == 1:
            lower = 1.0 / len(self.vocab_)
        else:
            lower = self._prob(word, context[1:])
        stats = self.context_stats_[k].get(context)
        if stats is None:
            return lower
        total, types = stats
        c = self.counts_[k].get(context + (word,), 0)
        return (max(c - self.discount, 0.0) + self.discount * types * lower) / total

    def _context(self, history: Sequence[int]) -> tuple:
        n = self.order
        if n == 1:
            return ()
        ctx = (self.vocab_.bos_id,) * (n - 1) + tuple(history)
        return ctx[len(ctx) - (n - 1):]

    def _require_fitted(self):
        # cheap stand-in for check_is_fitted on per-token hot paths
        if not hasattr(self, "counts_"):
            check_is_fitted(self, "counts_")

    def token_log_prob(self, word: int, history: Sequence[int] = ()) -> float:
        """log P(word | history); history is un-padded, only its tail is used."""
        self._require_fitted()
        return self._cached(word, self._context(history))

    def _cached(self, word: int, ctx: tuple) -> float:
        key = (word, ctx)
        lp = self._cache.get(key)
        if lp is None:
            lp = math.log(self._prob(word, ctx))
            self._cache[key] = lp
        return lp

    def unigram_log_prob(self, word: int) -> float:
        """Context-free estimate used for decoder future costs."""
        self._require_fitted()
        return math.log(self._prob(word, ()))

    def state_log_prob(self, state: tuple, word: int) -> tuple[tuple, float]:
        """Score ``word`` after an explicit context state; returns (next state, log-prob)."""
        self._require_fitted()
        lp = self._cached(word, state) if len(state) == self.order - 1 else self.token_log_prob(word, state)
        nxt = (state + (word,))[-(self.order - 1):] if self.order > 1 else ()
        return nxt, lp

    def initial_state(self) -> tuple:
        return (self.vocab_.bos_id,) * (self.order - 1)

    def next_token_dist(self, history: Sequence[int] = ()) -> np.ndarray:
        """Full next-token distribution over every vocabulary id."""
        check_is_fitted(self, "counts_")
        ctx = self._context(as_ids(history, self.vocab_))
        return np.array([self._prob(w, ctx) for w in range(len(self.vocab_))])

    def sentence_log_prob(self, sentence) -> float:
        """Sum of natural-log conditionals over the tokens and the closing ``<eos>``."""
        check_is_fitted(self, "counts_")
        ids = as_ids(sentence, self.vocab_)
        state = self.initial_state()
        total = 0.0
        for w in ids + (self.vocab_.eos_id,):
            state, lp = self.state_log_prob(state, w)
            total += lp
        return total

    def score_samples(self, corpus) -> np.ndarray:
        return np.array([self.sentence_log_prob(s) for s in corpus])

    def perplexity(self, corpus) -> float:
        check_corpus(corpus, allow_empty_sentences=True)
        total = 0.0
        n_tokens = 0
        for sent in corpus:
            total += self.sentence_log_prob(sent)
            n_tokens += len(sent) + 1
        return math.exp(-total / n_tokens)

    # ------------------------------------------------------------------
    def to_bytes(self) -> bytes:
        check_is_fitted(self, "counts_")
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<IIId", _VERSION, self.order, len(self.vocab_), self.discount))
        for tok in self.vocab_.tokens:
            raw = tok.encode("utf-8")
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
        for k in range(1, self.order + 1):
            table = self.counts_.get(k, {})
            buf.write(struct.pack("<IQ", k, len(table)))
            fmt = "<" + "I" * k + "Q"
            for gram in sorted(table):
                buf.write(struct.pack(fmt, *gram, table[gram]))
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "KneserNeyLM":
        buf = io.BytesIO(data)
        if buf.read(4) != _MAGIC:
            raise ValueError("not a KN language model file (bad magic)")
        version, order, vsize, discount = struct.unpack("<IIId", buf.read(20))
        if version != _VERSION:
            raise ValueError(f"unsupported LM file version {version}")
        tokens = []
        for _ in range(vsize):
            (n,) = struct.unpack("<I", buf.read(4))
            tokens.append(buf.read(n).decode("utf-8"))
        vocab = Vocabulary(tokens[5:])
        counts = {}
        for _ in range(order):
            k, n = struct.unpack("<IQ", buf.read(12))
            fmt = "<" + "I" * k + "Q"
            size = struct.calcsize(fmt)
            table = {}
            for _ in range(n):
                *gram, c = struct.unpack(fmt, buf.read(size))
                table[tuple(gram)] = c
            counts[k] = table
        lm = cls(order=order, discount=discount)
        lm.vocab_ = vocab
        lm._set_counts(counts)
        return lm

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "KneserNeyLM":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def train_ngram(corpus, order: int = 3, discount: float = 0.75, vocab: Vocabulary | None = None) -> KneserNeyLM:
    return KneserNeyLM(order=order, discount=discount).fit(corpus, vocab=vocab)


def sentence_log_prob(model: KneserNeyLM, sentence) -> float:
    return model.sentence_log_prob(sentence)


def perplexity(model: KneserNeyLM, corpus) -> float:
    return model.perplexity(corpus)
