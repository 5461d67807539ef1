"""Feedback scoring and budget-constrained selection."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Hashable, Iterable, Mapping, Optional, Sequence

from .bleu import bleu

STRUCTURAL = "structural"
SEMANTIC = "semantic"


def token_length(text: str) -> int:
    """Feedback length in whitespace-separated tokens."""
    return len(text.split())


@dataclass(frozen=True)
class FeedbackItem:
    kind: str
    text: str
    origin: str
    round: int = 0
    length: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.kind not in (STRUCTURAL, SEMANTIC):
            raise ValueError(f"unknown feedback kind {self.kind!r}")
        if not self.text.strip():
            raise ValueError("feedback text must be non-empty")
        object.__setattr__(self, "length", token_length(self.text))

    def to_dict(self) -> dict:
        return {"round": self.round, "kind": self.kind, "origin": self.origin, "text": self.text}

    @classmethod
    def from_dict(cls, d: dict) -> "FeedbackItem":
        return cls(d["kind"], d["text"], d["origin"], d.get("round", 0))


@dataclass(frozen=True)
class FeedbackScore:
    utility: float
    repeat: float
    weight: float


@dataclass(frozen=True)
class PrioritizerConfig:
    budget: int = 400
    max_items: int = 3

    def __post_init__(self):
        if self.budget < 1 or self.max_items < 1:
            raise ValueError("budget and max_items must be positive")


def utility(counts: Mapping[Hashable, int]) -> dict:
    """Normalized issue frequencies over failing simulations."""
    if any(c < 0 for c in counts.values()):
        raise ValueError("counts must be non-negative")
    total = sum(counts.values())
    if total == 0:
        return {}
    return {k: c / total for k, c in counts.items()}


def repeat_score(item: FeedbackItem, history: Iterable[FeedbackItem],
                 unresolved: Optional[set] = None) -> float:
    """Max BLEU against earlier feedback whose origin is still open.

    ``unresolved`` is the set of origins seen again in the current round;
    ``None`` considers the whole history.
    """
    best = 0.0
    for prior in history:
        if prior.round >= item.round:
            continue
        if unresolved is not None and prior.origin not in unresolved:
            continue
        best = max(best, bleu(item.text, prior.text))
    return best


def unified_score(item: FeedbackItem, utilities: Mapping[str, float],
                  history: Iterable[FeedbackItem] = (), unresolved: Optional[set] = None) -> FeedbackScore:
    r = repeat_score(item, history, unresolved)
    if item.kind == STRUCTURAL:
        u = float(utilities.get(item.origin, 0.0))
        return FeedbackScore(u, r, u + r)
    return FeedbackScore(0.0, r, r)


def _tiebreak(pos: int, item: FeedbackItem, score: FeedbackScore) -> tuple:
    return (item.kind != STRUCTURAL, -score.utility, pos)


def _by_efficiency(entry) -> tuple:
    pos, item, score = entry
    return (score.weight <= 0, -score.weight / item.length) + _tiebreak(pos, item, score)


def _by_weight(entry) -> tuple:
    pos, item, score = entry
    return (score.weight <= 0, -score.weight) + _tiebreak(pos, item, score)


def _greedy(entries, key, config: PrioritizerConfig) -> tuple[list, float]:
    chosen, used, value = [], 0, 0.0
    for _, item, score in sorted(entries, key=key):
        if len(chosen) >= config.max_items:
            break
        if used + item.length > config.budget:
            continue
        chosen.append(item)
        used += item.length
        value += score.weight
    return chosen, value


def select(scored: Sequence[tuple[FeedbackItem, FeedbackScore]],
           config: PrioritizerConfig = PrioritizerConfig()) -> list[FeedbackItem]:
    """Greedy pick by ``weight / length`` under the token budget and item cap.

    Items that would overflow the budget are skipped; zero-weight items only
    fill leftover room. When the item cap binds before the budget, ordering
    by efficiency can strand the heavy items, so a second pass ordered by
    weight alone is run and wins if its total weight is strictly larger.
    Returned in selection order.
    """
    entries = [(i, it, sc) for i, (it, sc) in enumerate(scored)]
    chosen, value = _greedy(entries, _by_efficiency, config)
    alt, alt_value = _greedy(entries, _by_weight, config)
    return alt if alt_value > value else chosen


def ledger_rows(round_index: int, scored: Sequence[tuple[FeedbackItem, FeedbackScore]],
                selected: Sequence[FeedbackItem]) -> list[dict]:
    picked = {id(it) for it in selected}
    return [{"round": round_index, "kind": it.kind, "origin": it.origin, "text": it.text,
             "u": sc.utility, "R": sc.repeat, "w": sc.weight, "len": it.length,
             "selected": id(it) in picked}
            for it, sc in scored]


def write_ledger(rows: Iterable[dict], fp) -> None:
    for row in rows:
        fp.write(json.dumps(row, ensure_ascii=False) + "\n")
