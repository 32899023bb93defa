"""Strict-match entity-level scoring.

A prediction counts as a true positive only when entity type, start and end
all match a gold entity exactly; no partial credit.  Micro scores pool
TP/FP/FN over entity types.  Percentages render half-up at two decimals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .textdata import Sequence, extract_entities

OVERALL = "Overall"


def _pct(num: int, den: int) -> float:
    return 100.0 * num / den if den else 0.0


@dataclass
class TypeScore:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return _pct(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _pct(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class ScoreReport:
    per_type: dict[str, TypeScore] = field(default_factory=dict)

    @property
    def overall(self) -> TypeScore:
        return TypeScore(
            tp=sum(s.tp for s in self.per_type.values()),
            fp=sum(s.fp for s in self.per_type.values()),
            fn=sum(s.fn for s in self.per_type.values()),
        )

    def to_dict(self) -> dict:
        def block(s: TypeScore) -> dict:
            return {
                "tp": s.tp, "fp": s.fp, "fn": s.fn,
                "precision": render_pct(s.precision),
                "recall": render_pct(s.recall),
                "f1": render_pct(s.f1),
            }

        return {
            "types": {t: block(s) for t, s in sorted(self.per_type.items())},
            "overall": block(self.overall),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n"

    def to_text(self) -> str:
        rows = [("Type", "TP", "FP", "FN", "Prec.", "Rec.", "F1")]
        for t in sorted(self.per_type):
            s = self.per_type[t]
            rows.append((t, str(s.tp), str(s.fp), str(s.fn),
                         render_pct(s.precision), render_pct(s.recall), render_pct(s.f1)))
        s = self.overall
        rows.append((OVERALL, str(s.tp), str(s.fp), str(s.fn),
                     render_pct(s.precision), render_pct(s.recall), render_pct(s.f1)))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
            if i == 0 or i == len(rows) - 2:
                lines.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
        return "\n".join(lines) + "\n"


def render_pct(value: float) -> str:
    return str(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def score(gold: list[Sequence], pred: list[Sequence]) -> ScoreReport:
    """Entity-level strict-match scores over aligned tagged corpora."""
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold sequences vs {len(pred)} predicted")
    report = ScoreReport()

    def bucket(etype: str) -> TypeScore:
        return report.per_type.setdefault(etype, TypeScore())

    for idx, (g, p) in enumerate(zip(gold, pred)):
        if len(g.tokens) != len(p.tokens):
            raise ValueError(
                f"sequence {idx}: gold has {len(g.tokens)} tokens, prediction {len(p.tokens)}"
            )
        if g.tags is None or p.tags is None:
            raise ValueError(f"sequence {idx}: untagged input")
        gold_ents = {(e.etype, e.start, e.end) for e in extract_entities(g.tags)}
        pred_ents = {(e.etype, e.start, e.end) for e in extract_entities(p.tags)}
        for ent in gold_ents & pred_ents:
            bucket(ent[0]).tp += 1
        for ent in pred_ents - gold_ents:
            bucket(ent[0]).fp += 1
        for ent in gold_ents - pred_ents:
            bucket(ent[0]).fn += 1
    return report


def f1_from(precision: float, recall: float) -> float:
    """Harmonic mean of percentages; zero when both are zero."""
    if not (0 <= precision <= 100 and 0 <= recall <= 100):
        raise ValueError("precision and recall must be percentages in [0, 100]")
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def aggregate(f1s) -> tuple[float, float]:
    """(mean, sample standard deviation) across runs, Table-4 style."""
    values = np.asarray(list(f1s), dtype=float)
    if values.size < 2:
        raise ValueError("aggregate needs at least two values")
    return float(values.mean()), float(values.std(ddof=1))


def render_mean_std(mean: float, std: float) -> str:
    return f"{render_pct(mean)} ± {render_pct(std)}"
