"""Sentence-level BLEU with add-one smoothing."""

from __future__ import annotations

import math
from collections import Counter

MAX_ORDER = 4


def tokenize(text: str) -> list[str]:
    return text.casefold().split()


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, reference: str, max_order: int = MAX_ORDER) -> float:
    """BLEU of ``candidate`` against a single ``reference``.

    Uniform weights over n-gram orders 1..max_order, brevity penalty, and
    add-one smoothing of every precision: ``(matches + 1) / (total + 1)``.
    Orders longer than the candidate are dropped and the weights spread over
    the remaining ones, so one-word strings compare on unigrams only.
    """
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand:
        return 0.0
    orders = min(max_order, len(cand))
    log_p = 0.0
    for n in range(1, orders + 1):
        c_counts = _ngrams(cand, n)
        r_counts = _ngrams(ref, n)
        matches = sum(min(c, r_counts[g]) for g, c in c_counts.items())
        total = len(cand) - n + 1
        log_p += math.log((matches + 1) / (total + 1))
    log_p /= orders
    c, r = len(cand), len(ref)
    log_bp = 0.0 if c > r else 1.0 - r / c
    return min(1.0, math.exp(log_p + log_bp))
