"""Reference implementations used as test oracles.

These are written from the definitions, deliberately without reusing code
from the package.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from fractions import Fraction

from scipy import stats


# -- BLEU ------------------------------------------------------------------------

def _grams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def reference_bleu(candidate: str, reference: str, max_order: int = 4) -> float:
    """Sentence BLEU: clipped n-gram precision with add-one smoothing on every
    order, orders capped at the candidate length, geometric mean, brevity
    penalty exp(1 - r/c) when the candidate is not longer than the reference."""
    cand = [w.casefold() for w in candidate.split()]
    ref = [w.casefold() for w in reference.split()]
    if not cand:
        return 0.0
    order = min(max_order, len(cand))
    product = Fraction(1)
    for n in range(1, order + 1):
        cg, rg = _grams(cand, n), _grams(ref, n)
        matched = 0
        for gram in set(cg):
            matched += min(cg.count(gram), rg.count(gram))
        product *= Fraction(matched + 1, len(cg) + 1)
    c, r = len(cand), len(ref)
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return min(1.0, float(product) ** (1.0 / order) * bp)


# -- knapsack --------------------------------------------------------------------

def best_subset_value(items, budget: int, max_items: int) -> float:
    """Exhaustive optimum of sum(w) subject to sum(len) <= budget and |S| <= max_items.

    ``items`` is a sequence of ``(weight, length)``.
    """
    best = 0.0
    for k in range(1, min(max_items, len(items)) + 1):
        for combo in itertools.combinations(items, k):
            if sum(l for _, l in combo) <= budget:
                best = max(best, sum(w for w, _ in combo))
    return best


# -- simulation ------------------------------------------------------------------

def outcome(trace) -> tuple:
    return trace.path, trace.choices


def chi_square_p(traces, exact) -> float:
    """p-value of observed outcome counts against exact outcome probabilities.

    Bins with expected count below 5 are pooled; a single bin gives p = 1.
    An observed outcome missing from ``exact`` gives p = 0.
    """
    n = len(traces)
    observed = Counter(outcome(t) for t in traces)
    probs = {outcome(t): t.probability for t in exact}
    if set(observed) - set(probs):
        return 0.0
    obs, exp, pool_o, pool_e = [], [], 0, 0.0
    for key in sorted(probs, key=repr):
        e = probs[key] * n
        if e < 5:
            pool_o += observed.get(key, 0)
            pool_e += e
        else:
            obs.append(observed.get(key, 0))
            exp.append(e)
    if pool_e > 0:
        obs.append(pool_o)
        exp.append(pool_e)
    if len(obs) < 2:
        return 1.0
    scale = sum(obs) / sum(exp)
    return float(stats.chisquare(obs, [e * scale for e in exp]).pvalue)
