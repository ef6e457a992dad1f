"""Confusion matrices, per-class F1, label distributions and report files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import GOLD_CLASSES, AnnotationVector, BehaviorLabel, GoldAnnotations

PRED_COLUMNS: tuple[BehaviorLabel, ...] = GOLD_CLASSES + (BehaviorLabel.UNKNOWN,)
REPORT_HEADER = ("config_id", "prompt_style", "icl", "input_mode", "class", "precision", "recall", "f1", "support")


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts keyed by (gold, predicted). Gold rows exclude Unknown."""

    counts: Mapping[tuple[BehaviorLabel, BehaviorLabel], int]

    @classmethod
    def empty(cls) -> "ConfusionMatrix":
        return cls({(g, p): 0 for g in GOLD_CLASSES for p in PRED_COLUMNS})

    def __getitem__(self, key: tuple[BehaviorLabel, BehaviorLabel]) -> int:
        return self.counts.get(key, 0)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        keys = set(self.counts) | set(other.counts)
        return ConfusionMatrix({k: self[k] + other[k] for k in keys})

    def tp(self, c: BehaviorLabel) -> int:
        return self[c, c]

    def fp(self, c: BehaviorLabel) -> int:
        return sum(self[g, c] for g in GOLD_CLASSES if g is not c)

    def fn(self, c: BehaviorLabel) -> int:
        # Includes seconds predicted Unknown.
        return sum(self[c, p] for p in PRED_COLUMNS if p is not c)

    def support(self, c: BehaviorLabel) -> int:
        return sum(self[c, p] for p in PRED_COLUMNS)

    def accuracy(self) -> float:
        total = self.total
        return sum(self.tp(c) for c in GOLD_CLASSES) / total if total else 0.0

    def rows(self) -> list[list]:
        """Matrix as CSV rows, header first."""
        out: list[list] = [["gold\\pred"] + [p.value for p in PRED_COLUMNS]]
        for g in GOLD_CLASSES:
            out.append([g.value] + [self[g, p] for p in PRED_COLUMNS])
        return out


def _labels_of(x: AnnotationVector | GoldAnnotations | Sequence[BehaviorLabel]) -> Sequence[BehaviorLabel]:
    return x.labels if hasattr(x, "labels") else x


def confusion_matrix(pred, gold) -> ConfusionMatrix:
    p_labels, g_labels = _labels_of(pred), _labels_of(gold)
    if len(p_labels) != len(g_labels):
        raise LengthMismatch(f"prediction has {len(p_labels)} seconds, gold has {len(g_labels)}")
    counts = dict(ConfusionMatrix.empty().counts)
    for g, p in zip(g_labels, p_labels):
        if g is BehaviorLabel.UNKNOWN:
            raise ValueError("gold labels cannot be Unknown")
        counts[g, p] += 1
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int
    undefined_support: bool = False


@dataclass(frozen=True)
class EvalReport:
    per_class: Mapping[BehaviorLabel, ClassScore]
    total_seconds: int
    config_id: str = ""
    config: Mapping[str, object] = field(default_factory=dict)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def per_class_f1(cm: ConfusionMatrix, config_id: str = "", config: Mapping | None = None) -> EvalReport:
    """Precision, recall and F1 per gold class with the 0/0 -> 0 convention."""
    scores = {}
    for c in GOLD_CLASSES:
        tp, fp, fn = cm.tp(c), cm.fp(c), cm.fn(c)
        precision = _ratio(tp, tp + fp)
        recall = _ratio(tp, tp + fn)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        support = cm.support(c)
        scores[c] = ClassScore(precision, recall, f1, support, undefined_support=support == 0)
    return EvalReport(scores, cm.total, config_id, dict(config or {}))


@dataclass(frozen=True)
class Distribution:
    counts: Mapping[BehaviorLabel, int]
    percentages: Mapping[BehaviorLabel, float]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def _pct(count: int, total: int) -> float:
    if not total:
        return 0.0
    exact = Decimal(count) * 100 / Decimal(total)
    return float(exact.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def label_distribution(golds: Iterable[GoldAnnotations | Sequence[BehaviorLabel]]) -> Distribution:
    counts = {c: 0 for c in GOLD_CLASSES}
    for gold in golds:
        for label in _labels_of(gold):
            counts[label] += 1
    total = sum(counts.values())
    return Distribution(counts, {c: _pct(n, total) for c, n in counts.items()})


# --- report files -----------------------------------------------------------


@dataclass(frozen=True)
class ReportEntry:
    report: EvalReport
    matrix: ConfusionMatrix


def _fmt(x: float) -> str:
    return repr(float(x))


def report_rows(entries: Sequence[ReportEntry]) -> list[dict]:
    rows = []
    for entry in entries:
        rep, cfg = entry.report, entry.report.config
        for c in GOLD_CLASSES:
            s = rep.per_class[c]
            rows.append({
                "config_id": rep.config_id,
                "prompt_style": cfg.get("prompt_style", ""),
                "icl": cfg.get("icl_enabled", ""),
                "input_mode": cfg.get("input_mode", ""),
                "class": c.value,
                "precision": s.precision,
                "recall": s.recall,
                "f1": s.f1,
                "support": s.support,
                "undefined_support": s.undefined_support,
            })
    return rows


def _matrix_json(cm: ConfusionMatrix) -> dict:
    return {g.value: {p.value: cm[g, p] for p in PRED_COLUMNS} for g in GOLD_CLASSES}


def _matrix_from_json(data: Mapping) -> ConfusionMatrix:
    return ConfusionMatrix({
        (BehaviorLabel(g), BehaviorLabel(p)): int(n) for g, row in data.items() for p, n in row.items()
    })


def render_report(entries: Sequence[ReportEntry], out_dir: str | Path, chart: bool = True) -> list[Path]:
    """Write report.csv, report.json, cm_<config_id>.csv and f1_comparison.svg.

    Output is a pure function of ``entries``: rerendering gives identical bytes.
    """
    if not entries:
        raise ValueError("render_report needs at least one report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    rows = report_rows(entries)

    path = out / "report.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for r in rows:
            writer.writerow([
                r["config_id"], r["prompt_style"], str(r["icl"]).lower(), r["input_mode"], r["class"],
                _fmt(r["precision"]), _fmt(r["recall"]), _fmt(r["f1"]), r["support"],
            ])
    written.append(path)

    payload = {
        "rows": rows,
        "configs": [
            {
                "config_id": e.report.config_id,
                "config": dict(e.report.config),
                "total_seconds": e.report.total_seconds,
                "accuracy": e.matrix.accuracy(),
                "confusion_matrix": _matrix_json(e.matrix),
            }
            for e in entries
        ],
    }
    path = out / "report.json"
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    written.append(path)

    for e in entries:
        path = out / f"cm_{e.report.config_id}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(e.matrix.rows())
        written.append(path)

    if chart:
        from .plotting import f1_comparison_chart

        written.append(f1_comparison_chart(entries, out / "f1_comparison.svg"))
    return written


def load_report(path: str | Path) -> list[ReportEntry]:
    """Inverse of :func:`render_report` for ``report.json``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = []
    for item in data["configs"]:
        cm = _matrix_from_json(item["confusion_matrix"])
        entries.append(ReportEntry(per_class_f1(cm, item["config_id"], item["config"]), cm))
    return entries
