"""Noisy-channel phrase-based stack decoder for the initial synthetic data.

Decodes a hidden sentence ``x`` from an observed sentence ``y`` by
maximizing ``tm * log phi(y | x) + lm * log P(x)`` plus a distortion cost
and an unknown-word penalty. The phrase table is keyed by hidden-side
phrases, so it is searched through its reverse index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import UNK
from .lm import KneserNeyLM
from .phrase import PhraseTable
from .weighting import WeightedPair

_NEG_INF = float("-inf")


@dataclass
class DecoderConfig:
    """``beam_size=None`` disables pruning (exhaustive dynamic programming)."""

    beam_size: int | None = 8
    distortion_limit: int = 3
    distortion_weight: float = -0.5
    unk_penalty: float = -1.0
    lm_weight: float = 1.0
    tm_weight: float = 1.0
    max_candidates: int = 5
    future_cost: bool = True

    def __post_init__(self):
        if self.beam_size is not None and self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.distortion_limit < 0:
            raise ValueError("distortion_limit must be >= 0")
        if self.distortion_weight > 0 or self.unk_penalty > 0:
            raise ValueError("distortion_weight and unk_penalty must be <= 0")
        if self.lm_weight <= 0 or self.tm_weight <= 0:
            raise ValueError("lm_weight and tm_weight must be > 0")


class Step(NamedTuple):
    start: int
    end: int  # exclusive
    output: tuple[str, ...]
    log_phi: float | None  # None for an <unk> emission


class Hypothesis(NamedTuple):
    score: float
    covered: int
    last_end: int
    lm_state: tuple
    output: tuple[str, ...]
    steps: tuple[Step, ...]


class DecodeResult(NamedTuple):
    tokens: list[str]
    score: float
    steps: tuple[Step, ...]


def span_options(y: Sequence[str], table: PhraseTable, cfg: DecoderConfig) -> dict:
    """``(start, end) -> [(output phrase, log phi or None)]`` for every coverable span."""
    rev = table.reverse_index()
    n = len(y)
    opts = {}
    for i in range(n):
        for j in range(i + 1, min(n, i + table.max_phrase_len) + 1):
            cands = rev.get(tuple(y[i:j]), [])[: cfg.max_candidates]
            row = [(tuple(x), lp) for x, lp in cands]
            if j == i + 1:
                row.append(((UNK,), None))
            if row:
                opts[(i, j)] = row
    return opts


def score_derivation(steps: Sequence[Step], lm: KneserNeyLM, cfg: DecoderConfig) -> float:
    """Recompute a complete derivation's score from its phrase steps."""
    tm = sum(s.log_phi for s in steps if s.log_phi is not None)
    n_unk = sum(1 for s in steps if s.log_phi is None)
    jumps = 0
    prev_end = 0
    for s in steps:
        jumps += abs(s.start - prev_end)
        prev_end = s.end
    tokens = [w for s in steps for w in s.output]
    return (cfg.tm_weight * tm + cfg.lm_weight * lm.sentence_log_prob(tokens)
            + cfg.distortion_weight * jumps + cfg.unk_penalty * n_unk)


class NoisyChannelDecoder(BaseEstimator):
    """Stack decoder over coverage of the observed sentence.

    Stacks are indexed by the number of covered positions and pruned to
    ``beam_size`` by score plus a future-cost estimate. Hypotheses sharing
    coverage, LM state and last covered position are recombined.
    """

    def __init__(self, beam_size: int | None = 8, distortion_limit: int = 3,
                 distortion_weight: float = -0.5, unk_penalty: float = -1.0,
                 lm_weight: float = 1.0, tm_weight: float = 1.0, max_candidates: int = 5,
                 future_cost: bool = True):
        self.beam_size = beam_size
        self.distortion_limit = distortion_limit
        self.distortion_weight = distortion_weight
        self.unk_penalty = unk_penalty
        self.lm_weight = lm_weight
        self.tm_weight = tm_weight
        self.max_candidates = max_candidates
        self.future_cost = future_cost

    def fit(self, table: PhraseTable, lm: KneserNeyLM):
        self.config_ = DecoderConfig(**self.get_params())
        self.table_ = table
        self.lm_ = lm
        return self

    def predict(self, sentences) -> list[list[str]]:
        return [self.decode(s).tokens for s in sentences]

    def decode(self, y: Sequence[str]) -> DecodeResult:
        check_is_fitted(self, "config_")
        return decode_noisy_channel(y, self.table_, self.lm_, self.config_)


def _future_costs(n, opts, lm, cfg):
    est = [[_NEG_INF] * (n + 1) for _ in range(n + 1)]
    vocab = lm.vocab_
    for (i, j), row in opts.items():
        for out, lp in row:
            tm = cfg.unk_penalty if lp is None else cfg.tm_weight * lp
            lmp = sum(lm.unigram_log_prob(vocab.id(w)) for w in out)
            est[i][j] = max(est[i][j], tm + cfg.lm_weight * lmp)
    for length in range(2, n + 1):
        for i in range(n - length + 1):
            j = i + length
            for k in range(i + 1, j):
                est[i][j] = max(est[i][j], est[i][k] + est[k][j])
    return est


def _gap_cost(covered, n, fc):
    total, i = 0.0, 0
    while i < n:
        if covered >> i & 1:
            i += 1
            continue
        j = i
        while j < n and not covered >> j & 1:
            j += 1
        total += fc[i][j]
        i = j
    return total


def decode_noisy_channel(y: Sequence[str], table: PhraseTable, lm_x: KneserNeyLM,
                         cfg: DecoderConfig | None = None) -> DecodeResult:
    """Highest-scoring hidden sentence for the observed sentence ``y``."""
    cfg = cfg or DecoderConfig()
    y = list(y)
    n = len(y)
    if n == 0:
        raise ValueError("cannot decode an empty sentence")
    opts = span_options(y, table, cfg)
    result = _stack_search(y, opts, lm_x, cfg, cfg.distortion_limit)
    if result is None and cfg.distortion_limit > 0:
        result = _stack_search(y, opts, lm_x, cfg, 0)
    return result


def _stack_search(y, opts, lm, cfg, limit):
    n = len(y)
    full = (1 << n) - 1
    vocab = lm.vocab_
    eos = vocab.eos_id
    fc = _future_costs(n, opts, lm, cfg) if cfg.future_cost else None
    by_start = [[] for _ in range(n)]
    for (i, j) in sorted(opts):
        by_start[i].append((j, ((1 << (j - i)) - 1) << i,
                            [(out, lp, tuple(vocab.id(w) for w in out)) for out, lp in opts[(i, j)]]))
    gap_memo: dict[int, float] = {}
    lm_memo: dict[tuple, tuple] = {}

    def future(h):
        g = gap_memo.get(h.covered)
        if g is None:
            g = gap_memo[h.covered] = _gap_cost(h.covered, n, fc)
        # an uncovered position left of the last phrase forces at least that much backward jumping
        first = (~h.covered & (h.covered + 1)).bit_length() - 1
        if first < h.last_end:
            g += cfg.distortion_weight * (h.last_end - first)
        return g

    def extend_lm(state, ids, final):
        key = (state, ids, final)
        hit = lm_memo.get(key)
        if hit is None:
            total = 0.0
            for w in ids:
                state, wl = lm.state_log_prob(state, w)
                total += wl
            if final:
                total += lm.token_log_prob(eos, state)
            hit = lm_memo[key] = (state, total)
        return hit

    stacks: list[dict] = [dict() for _ in range(n + 1)]
    start = Hypothesis(0.0, 0, 0, lm.initial_state(), (), ())
    stacks[0][(0, start.lm_state, 0)] = start
    for k in range(n):
        hyps = list(stacks[k].values())
        if cfg.beam_size is not None and len(hyps) > cfg.beam_size:
            if fc is not None:
                hyps.sort(key=lambda h: (-(h.score + future(h)), h.output))
            else:
                hyps.sort(key=lambda h: (-h.score, h.output))
            hyps = hyps[: cfg.beam_size]
        for h in hyps:
            for i in range(max(0, h.last_end - limit), min(n, h.last_end + limit + 1)):
                jump = abs(i - h.last_end)
                for j, mask, options in by_start[i]:
                    if h.covered & mask:
                        continue
                    covered = h.covered | mask
                    final = covered == full
                    base = h.score + cfg.distortion_weight * jump
                    stack = stacks[k + j - i]
                    for out, lp, ids in options:
                        state, lm_lp = extend_lm(h.lm_state, ids, final)
                        score = base + (cfg.unk_penalty if lp is None else cfg.tm_weight * lp) \
                            + cfg.lm_weight * lm_lp
                        key = (covered, state, j)
                        old = stack.get(key)
                        output = h.output + out
                        if old is not None and (old.score > score or (old.score == score and old.output <= output)):
                            continue
                        stack[key] = Hypothesis(score, covered, j, state, output,
                                                h.steps + (Step(i, j, out, lp),))
    finals = list(stacks[n].values())
    if not finals:
        return None
    best = min(finals, key=lambda h: (-h.score, h.output))
    return DecodeResult(list(best.output), best.score, best.steps)


def generate_initial_synthetic(corpus_y, table: PhraseTable, lm_x: KneserNeyLM,
                               cfg: DecoderConfig | None = None) -> list[WeightedPair]:
    """One unweighted ``(decoded x, y)`` pair per observed sentence, order preserved."""
    cfg = cfg or DecoderConfig()
    pairs = []
    for y in corpus_y:
        res = decode_noisy_channel(y, table, lm_x, cfg)
        pairs.append(WeightedPair(res.tokens, list(y)))
    return pairs
