"""Corpus BLEU, lexicon precision@k and iteration-curve CSV output."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

CURVE_HEADER = ("epoch", "direction", "dev_bleu", "mean_weight", "train_loss")


@dataclass
class BleuReport:
    score: float
    precisions: list[float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    smoothed: bool

    def __str__(self):
        p = ", ".join(f"{v:.6f}" for v in self.precisions)
        return (f"{{score: {self.score:.4f}, precisions: [{p}], bp: {self.brevity_penalty:.6f}, "
                f"hyp_len: {self.hyp_len}, ref_len: {self.ref_len}, smoothed: {str(self.smoothed).lower()}}}")


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]], max_n: int = 4) -> BleuReport:
    """Corpus BLEU with clipped n-gram counts and a single reference per segment.

    A zero match count at order n >= 2 is add-one smoothed; a zero unigram
    precision gives a score of 0.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = ngram_counts(hyp, n), ngram_counts(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    smoothed = False
    precisions = []
    for n in range(max_n):
        if n > 0 and matches[n] == 0:
            smoothed = True
            precisions.append(1.0 / (totals[n] + 1))
        else:
            precisions.append(matches[n] / totals[n] if totals[n] else 0.0)
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len >= ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / hyp_len)
    if min(precisions) <= 0 or bp == 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    return BleuReport(score, precisions, bp, hyp_len, ref_len, smoothed)


def lexicon_precision_at_k(induced: Mapping[str, Sequence[str]], gold: Mapping[str, str], k: int = 1) -> float:
    """Fraction of gold source words whose gold target is among the first ``k`` induced candidates."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not gold:
        raise ValueError("gold dictionary is empty")
    hits = sum(1 for src, tgt in gold.items() if tgt in list(induced.get(src, ()))[:k])
    return hits / len(gold)


def emit_curves(history) -> str:
    """CSV text with one row per (epoch, direction)."""
    if not history:
        raise ValueError("history is empty")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_HEADER)
    for rec in history:
        for direction in sorted(rec.directions):
            d = rec.directions[direction]
            writer.writerow([rec.epoch, direction, repr(d.dev_bleu), repr(d.mean_weight), repr(d.train_loss)])
    return buf.getvalue()


def parse_curves(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    for r in rows:
        r["epoch"] = int(r["epoch"])
        for key in ("dev_bleu", "mean_weight", "train_loss"):
            r[key] = float(r[key])
    return rows
