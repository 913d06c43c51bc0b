"""Corpus ingestion, vocabularies, BPE, and synthetic cipher language pairs."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, BOS, EOS, UNK, DUMMY = "<pad>", "<bos>", "<eos>", "<unk>", "<dummy>"
SPECIALS = (PAD, BOS, EOS, UNK, DUMMY)
BPE_MARK = "@@"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(line: str | bytes) -> list[str]:
    """Lowercase, split off punctuation, split on whitespace."""
    if isinstance(line, (bytes, bytearray)):
        line = bytes(line).decode("utf-8")
    return _TOKEN_RE.findall(line.lower())


class Vocabulary:
    """Dense token <-> id map. Specials always occupy ids 0..4."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens: list[str] = list(SPECIALS)
        self._index = {t: i for i, t in enumerate(self.tokens)}
        for tok in tokens:
            if tok not in self._index:
                self._index[tok] = len(self.tokens)
                self.tokens.append(tok)

    pad_id = property(lambda self: 0)
    bos_id = property(lambda self: 1)
    eos_id = property(lambda self: 2)
    unk_id = property(lambda self: 3)
    dummy_id = property(lambda self: 4)

    @property
    def specials(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(SPECIALS)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)})"

    def id(self, token: str) -> int:
        return self._index.get(token, 3)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, tokens: Sequence[str]) -> tuple[int, ...]:
        return tuple(self._index.get(t, 3) for t in tokens)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def word_ids(self) -> list[int]:
        """Ids of the non-special tokens."""
        return list(range(len(SPECIALS), len(self.tokens)))

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")[:-1]
        if tuple(lines[: len(SPECIALS)]) != SPECIALS:
            raise ValueError(f"{path}: vocabulary file does not start with the reserved specials")
        return cls(lines[len(SPECIALS):])


def build_vocab(corpus: Sequence[Sequence[str]], max_size: int = 10_000, min_count: int = 1) -> Vocabulary:
    """Keep the most frequent tokens (ties broken lexicographically) up to ``max_size`` entries."""
    if max_size <= len(SPECIALS):
        raise ValueError(f"max_size must exceed the {len(SPECIALS)} reserved specials")
    counts = Counter(tok for sent in corpus for tok in sent)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    for s in SPECIALS:
        counts.pop(s, None)
    ranked = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(ranked[: max_size - len(SPECIALS)])


# --------------------------------------------------------------------------
# byte-pair encoding

@dataclass
class BpeMergeTable:
    merges: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self):
        return len(self.merges)

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{a} {b}\n" for a, b in self.merges), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BpeMergeTable":
        merges = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            a, b = line.split(" ")
            merges.append((a, b))
        return cls(merges)


def _pair_counts(words: dict[tuple[str, ...], int]) -> Counter:
    stats: Counter = Counter()
    for symbols, freq in words.items():
        for pair in zip(symbols, symbols[1:]):
            stats[pair] += freq
    return stats


def _merge_word(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    out, i = [], 0
    while i < len(symbols):
        if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == pair:
            out.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def learn_bpe(corpus: Sequence[Sequence[str]], num_merges: int) -> BpeMergeTable:
    """Greedy most-frequent-pair merging over word types; ties go to the smaller pair."""
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    words: dict[tuple[str, ...], int] = Counter(tuple(tok) for sent in corpus for tok in sent)
    table = BpeMergeTable()
    for _ in range(num_merges):
        stats = _pair_counts(words)
        if not stats:
            break
        best = min(stats, key=lambda p: (-stats[p], p))
        table.merges.append(best)
        merged: Counter = Counter()
        for symbols, freq in words.items():
            merged[_merge_word(symbols, best)] += freq
        words = merged
    return table


def _segment(token: str, ranks: dict[tuple[str, str], int]) -> tuple[str, ...]:
    symbols = tuple(token)
    while len(symbols) > 1:
        pairs = [(ranks.get(p, len(ranks)), p) for p in zip(symbols, symbols[1:])]
        rank, pair = min(pairs)
        if rank == len(ranks):
            break
        symbols = _merge_word(symbols, pair)
    return symbols


def apply_bpe(tokens: Sequence[str], table: BpeMergeTable) -> list[str]:
    """Split tokens into subwords; every non-final piece carries the ``@@`` marker."""
    ranks = {p: i for i, p in enumerate(table.merges)}
    out = []
    for tok in tokens:
        pieces = _segment(tok, ranks)
        out.extend(p + BPE_MARK for p in pieces[:-1])
        out.append(pieces[-1])
    return out


def undo_bpe(subwords: Sequence[str]) -> list[str]:
    out, buf = [], ""
    for piece in subwords:
        if piece.endswith(BPE_MARK):
            buf += piece[: -len(BPE_MARK)]
        else:
            out.append(buf + piece)
            buf = ""
    if buf:
        out.append(buf)
    return out


# --------------------------------------------------------------------------
# cipher language pairs

@dataclass(frozen=True)
class CipherSpec:
    seed: int = 0
    reorder_window: int = 2
    drop_rate: float = 0.0

    def __post_init__(self):
        if self.reorder_window < 0:
            raise ValueError("reorder_window must be >= 0")
        if not 0.0 <= self.drop_rate <= 0.2:
            raise ValueError("drop_rate must lie in [0, 0.2]")


@dataclass
class CipherPair:
    """Non-parallel train halves plus aligned dev/test sets and the gold dictionary."""

    train_x: list[list[str]]
    train_y: list[list[str]]
    dev_x: list[list[str]]
    dev_y: list[list[str]]
    test_x: list[list[str]]
    test_y: list[list[str]]
    gold_dict: dict[str, str]  # y-token -> x-token

    @property
    def gold_x_to_y(self) -> dict[str, str]:
        return {v: k for k, v in self.gold_dict.items()}


_ONSETS = ["b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z",
           "br", "ch", "dr", "gl", "kr", "pl", "sh", "st", "th", "tr"]
_NUCLEI = ["a", "e", "i", "o", "u", "ai", "ou", "ee", "oa"]
_CODAS = ["", "", "n", "r", "s", "l", "k", "m", "t"]


def _pseudo_words(n: int, rng: np.random.Generator, taken: set[str] = frozenset()) -> list[str]:
    words, seen = [], set(taken)
    while len(words) < n:
        n_syl = int(rng.integers(1, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _NUCLEI[rng.integers(len(_NUCLEI))]
                    + _CODAS[rng.integers(len(_CODAS))] for _ in range(n_syl))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def local_shuffle(n: int, window: int, rng: np.random.Generator) -> np.ndarray:
    """Permutation with every element displaced by at most ``window`` positions."""
    if window == 0 or n < 2:
        return np.arange(n)
    keys = np.arange(n) + rng.uniform(0, window + 1, size=n)
    return np.argsort(keys, kind="stable")


def encipher(sentence: Sequence[str], table: dict[str, str], spec: CipherSpec,
             rng: np.random.Generator) -> list[str]:
    toks = [table[t] for t in sentence]
    if spec.drop_rate > 0 and len(toks) > 1:
        keep = rng.random(len(toks)) >= spec.drop_rate
        if not keep.any():
            keep[0] = True
        toks = [t for t, k in zip(toks, keep) if k]
    order = local_shuffle(len(toks), spec.reorder_window, rng)
    return [toks[i] for i in order]


def generate_cipher_pair(corpus_y: Sequence[Sequence[str]], spec: CipherSpec,
                         dev_size: int = 500, test_size: int = 500) -> CipherPair:
    """Derive language X from ``corpus_y`` via a seeded substitution cipher.

    The train halves of X and Y come from disjoint sentence subsets; dev and
    test keep each Y sentence next to its enciphered counterpart.
    """
    corpus_y = [list(s) for s in corpus_y if len(s)]
    if not corpus_y:
        raise ValueError("corpus_y is empty")
    if dev_size + test_size + 2 > len(corpus_y):
        raise ValueError("corpus too small for the requested dev/test sizes")
    rng = np.random.default_rng(spec.seed)
    types = sorted({t for s in corpus_y for t in s} - set(SPECIALS))
    if len(types) < 2:
        raise ValueError("vocabulary too small to build a substitution bijection")
    # cipher words never coincide with a Y word, so no identical-string anchors leak in
    targets = _pseudo_words(len(types), np.random.default_rng([spec.seed, 7919]), taken=set(SPECIALS) | set(types))
    table = dict(zip(types, targets))

    order = rng.permutation(len(corpus_y))
    dev_idx = order[:dev_size]
    test_idx = order[dev_size: dev_size + test_size]
    rest = order[dev_size + test_size:]
    half = len(rest) // 2
    y_idx, x_idx = rest[:half], rest[half:]

    def enc(idx):
        return [encipher(corpus_y[i], table, spec, rng) for i in idx]

    return CipherPair(
        train_x=enc(x_idx),
        train_y=[corpus_y[i] for i in y_idx],
        dev_x=enc(dev_idx),
        dev_y=[corpus_y[i] for i in dev_idx],
        test_x=enc(test_idx),
        test_y=[corpus_y[i] for i in test_idx],
        gold_dict=table,
    )


def generate_toy_corpus(n_sentences: int, seed: int = 0, n_topics: int = 8,
                        sizes: dict[str, int] | None = None, collocation: float = 0.6) -> list[list[str]]:
    """Sample sentences from a small topic-conditioned phrase-structure grammar.

    Word choice within each part of speech is Zipfian and biased toward the
    sentence topic. Nouns carry a gender that selects their determiners, and
    nouns/verbs have a few preferred collocates (adjectives, verbs, objects,
    adverbs) drawn with probability ``collocation``, which gives every word a
    distinctive co-occurrence profile.
    """
    sizes = {"det": 6, "pron": 6, "adj": 40, "noun": 120, "verb": 80, "prep": 10, "adv": 16,
             "conj": 3, **(sizes or {})}
    rng = np.random.default_rng(seed)
    words = _pseudo_words(sum(sizes.values()), rng)
    lex, pos = {}, 0
    for cat, n in sizes.items():
        lex[cat] = words[pos: pos + n]
        pos += n

    cdfs = {}
    for cat, ws in lex.items():
        base = 1.0 / np.arange(1, len(ws) + 1)
        if cat in ("noun", "verb", "adj", "adv"):
            topic_of = rng.integers(n_topics, size=len(ws))
            rows = [base * np.where(topic_of == t, 12.0, 1.0) for t in range(n_topics)]
        else:
            rows = [base] * n_topics
        cdfs[cat] = np.cumsum([r / r.sum() for r in rows], axis=1)

    def draw(cat, topic):
        return int(min(np.searchsorted(cdfs[cat][topic], rng.random()), len(lex[cat]) - 1))

    n_noun, n_verb = sizes["noun"], sizes["verb"]
    gender = rng.integers(3, size=n_noun)
    dets_of = [[g, g + 3] for g in range(3)]
    pref_adj = rng.integers(sizes["adj"], size=(n_noun, 3))
    pref_verb = rng.integers(n_verb, size=(n_noun, 3))
    pref_obj = rng.integers(n_noun, size=(n_verb, 4))
    pref_adv = rng.integers(sizes["adv"], size=(n_verb, 2))
    pref_prep = rng.integers(sizes["prep"], size=(n_verb, 2))

    def prefer(options, cat, topic):
        if rng.random() < collocation:
            return int(options[rng.integers(len(options))])
        return draw(cat, topic)

    def noun_phrase(topic, noun, depth):
        if noun is None and rng.random() < 0.15:
            return [lex["pron"][draw("pron", topic)]], None
        noun = draw("noun", topic) if noun is None else noun
        out = [lex["det"][dets_of[gender[noun]][int(rng.random() < 0.3)]]]
        if rng.random() < 0.4:
            out.append(lex["adj"][prefer(pref_adj[noun], "adj", topic)])
        out.append(lex["noun"][noun])
        if depth < 1 and rng.random() < 0.2:
            out.append(lex["prep"][draw("prep", topic)])
            out += noun_phrase(topic, None, depth + 1)[0]
        return out, noun

    def clause(topic):
        subj, noun = noun_phrase(topic, None, 0)
        verb = prefer(pref_verb[noun], "verb", topic) if noun is not None else draw("verb", topic)
        out = subj + [lex["verb"][verb]]
        r = rng.random()
        if r < 0.6:
            obj = prefer(pref_obj[verb], "noun", topic)
            out += noun_phrase(topic, obj, 0)[0]
        elif r < 0.8:
            out.append(lex["prep"][prefer(pref_prep[verb], "prep", topic)])
            out += noun_phrase(topic, None, 1)[0]
        if rng.random() < 0.25:
            out.append(lex["adv"][prefer(pref_adv[verb], "adv", topic)])
        return out

    sentences = []
    for _ in range(n_sentences):
        topic = int(rng.integers(n_topics))
        s = clause(topic)
        if rng.random() < 0.15:
            s += [",", lex["conj"][draw("conj", topic)]] + clause(topic)
        sentences.append(s + ["."])
    return sentences


# --------------------------------------------------------------------------
# file formats

def read_corpus(path, tokenized: bool = False) -> list[list[str]]:
    """One sentence per line; ``tokenized`` files are split on single spaces only."""
    with open(path, "rb") as fh:
        data = fh.read().decode("utf-8")
    lines = data.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line.split() if tokenized else tokenize(line) for line in lines]


def write_corpus(path, corpus: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sent in corpus:
            fh.write(" ".join(sent) + "\n")


def write_dictionary(path, pairs: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for src, tgt in pairs:
            fh.write(f"{src}\t{tgt}\n")


def read_dictionary(path) -> list[tuple[str, str]]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line:
            src, tgt = line.split("\t")[:2]
            out.append((src, tgt))
    return out
