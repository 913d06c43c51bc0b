"""Weights for synthetic sentence pairs from two LMs and the current translation model.

The raw log-weight of a pair is

    log P(y) - log P(y; theta) + log P(x) + log P(y | x; theta)

with ``P(y; theta)`` read off the decoder fed a dummy source. Final weights
are the logistic sigmoid of the zero-mean raw log-weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .validation import check_finite

WEIGHTED, UNIFORM = "weighted", "uniform"
_LOW, _HIGH = np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0)


@dataclass
class WeightedPair:
    x: list[str]
    y: list[str]
    log_w_raw: float = math.nan
    w_star: float = 1.0
    # (log P(y), log P(y; theta), log P(x), log P(y | x; theta))
    components: tuple[float, float, float, float] | None = field(default=None, repr=False)


def raw_log_weight(x, y, lm_x, lm_y, forward) -> WeightedPair:
    return raw_log_weights([x], [y], lm_x, lm_y, forward)[0]


def raw_log_weights(xs: Sequence, ys: Sequence, lm_x, lm_y, forward) -> list[WeightedPair]:
    """Score every pair; ``forward`` translates from the language of ``lm_x`` into that of ``lm_y``."""
    log_py = [lm_y.sentence_log_prob(y) for y in ys]
    log_px = [lm_x.sentence_log_prob(x) for x in xs]
    log_py_model = forward.decoder_lm_log_prob_batch(ys)
    log_pyx = forward.log_prob_batch(xs, ys)
    out = []
    for x, y, a, b, c, d in zip(xs, ys, log_py, log_py_model, log_px, log_pyx):
        comps = (float(a), float(b), float(c), float(d))
        out.append(WeightedPair(list(x), list(y), comps[0] - comps[1] + comps[2] + comps[3], 1.0, comps))
    return out


def normalize_weights(log_weights: Sequence[float]) -> np.ndarray:
    """sigmoid(v - mean(v)), element-wise, order preserved."""
    v = check_finite(log_weights, "log-weights")
    if v.size == 0:
        raise ValueError("cannot normalize an empty list of log-weights")
    # float64 sigmoid saturates to exactly 0 or 1 beyond |z| ~ 37 (upper) / 745 (lower)
    return np.clip(expit(v - v.mean()), _LOW, _HIGH)


def weigh_batch(pairs: Sequence[WeightedPair], lm_x, lm_y, forward, mode: str = WEIGHTED) -> list[WeightedPair]:
    """Attach ``w_star`` to every pair; ``uniform`` mode is plain back-translation (all ones)."""
    if not pairs:
        raise ValueError("empty batch")
    if mode == UNIFORM:
        return [WeightedPair(p.x, p.y, p.log_w_raw, 1.0, p.components) for p in pairs]
    if mode != WEIGHTED:
        raise ValueError(f"unknown weighting mode {mode!r}")
    scored = raw_log_weights([p.x for p in pairs], [p.y for p in pairs], lm_x, lm_y, forward)
    for p, w in zip(scored, normalize_weights([p.log_w_raw for p in scored])):
        p.w_star = float(w)
    return scored


def write_inspection(path, pairs: Sequence[WeightedPair]) -> None:
    """TSV dump: x, y, logPy, logPy_model, logPx, logPyx, w_star."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            comps = p.components or (math.nan,) * 4
            fields = [" ".join(p.x), " ".join(p.y)] + [repr(float(c)) for c in comps] + [repr(float(p.w_star))]
            fh.write("\t".join(fields) + "\n")


def write_synthetic(path, pairs: Sequence[WeightedPair]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            fh.write(f"{' '.join(p.x)}\t{' '.join(p.y)}\t{p.w_star!r}\n")


def read_synthetic(path) -> list[WeightedPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            x, y, w = line.rstrip("\n").split("\t")
            pairs.append(WeightedPair(x.split(), y.split(), w_star=float(w)))
    return pairs
