"""Confusion counts, screening metrics and the comparison table.

ASD is the positive class throughout. A metric whose denominator is zero is
reported as ``None`` (rendered ``undefined``) rather than 0 or NaN.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal

from hybridx.records import DatasetStats, Label


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ConfusionMatrix":
        """The same predictions scored with non-ASD as the positive class."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)


def confusion(preds, truth) -> ConfusionMatrix:
    preds, truth = list(preds), list(truth)
    if len(preds) != len(truth):
        raise ValueError(f"{len(preds)} predictions for {len(truth)} labels")
    if not preds:
        raise ValueError("nothing to score")
    tp = fp = fn = tn = 0
    for p, t in zip(preds, truth):
        if p == Label.ASD:
            if t == Label.ASD:
                tp += 1
            else:
                fp += 1
        elif t == Label.ASD:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fp, fn, tn)


def _ratio(num, den):
    return None if den == 0 else num / den


def accuracy(cm: ConfusionMatrix) -> float | None:
    return _ratio(cm.tp + cm.tn, cm.total)


def sensitivity(cm: ConfusionMatrix) -> float | None:
    return _ratio(cm.tp, cm.tp + cm.fn)


def precision(cm: ConfusionMatrix) -> float | None:
    return _ratio(cm.tp, cm.tp + cm.fp)


@dataclass(frozen=True)
class EvalReport:
    model: str
    stats: DatasetStats
    confusion: ConfusionMatrix
    accuracy: float | None
    sensitivity: float | None
    precision: float | None
    seed: int
    dataset_size: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        d["stats"] = DatasetStats(**d["stats"])
        d["confusion"] = ConfusionMatrix(**d["confusion"])
        return cls(**d)


def make_report(model: str, preds, truth, seed: int, dataset_size: str | None = None,
                stats: DatasetStats | None = None) -> EvalReport:
    """Score predictions; ``stats`` overrides the class counts reported
    (e.g. to describe a whole input file rather than its test split)."""
    truth = list(truth)
    cm = confusion(preds, truth)
    if stats is None:
        stats = DatasetStats.from_labels(truth)
    return EvalReport(model, stats, cm,
                      accuracy(cm), sensitivity(cm), precision(cm), seed, dataset_size)


def consistent_confusions(n, acc, sens, prec, n_asd=None, tol=0.005):
    """All confusion matrices over ``n`` samples whose metrics lie within
    ``tol`` of a reported (accuracy, sensitivity, precision) triple.

    ``n_asd`` optionally pins the number of truly positive samples. Useful
    for checking whether reported whole-percent figures can coexist.
    """
    found = []
    positives = range(n + 1) if n_asd is None else [n_asd]
    for pos in positives:
        neg = n - pos
        for tp in range(pos + 1):
            s = sensitivity(ConfusionMatrix(tp, 0, pos - tp, 0))
            if s is None or abs(s - sens) > tol:
                continue
            for fp in range(neg + 1):
                cm = ConfusionMatrix(tp, fp, pos - tp, neg - fp)
                p = precision(cm)
                if p is None or abs(p - prec) > tol:
                    continue
                if abs(accuracy(cm) - acc) <= tol:
                    found.append(cm)
    return found


def percent(value: float | None) -> str:
    """Whole percent, rounded half-up: 0.866 -> '87%'."""
    if value is None:
        return "undefined"
    pct = (Decimal(repr(value)) * 100).quantize(Decimal(1), rounding=ROUND_HALF_UP)
    return f"{pct}%"


TABLE_ROWS = ("Accuracy", "Sensitivity", "Precision", "Dataset Size", "N_ASD/N_non-ASD")


def table_cells(report: EvalReport) -> list[str]:
    size = report.dataset_size or str(report.stats.n_total)
    return [percent(report.accuracy), percent(report.sensitivity), percent(report.precision),
            size, f"{report.stats.n_asd}/{report.stats.n_non_asd}"]


def render_table(reports) -> str:
    """Fixed-width text table: a Statistic column, then one column per report."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to render")
    columns = [["Statistic", *TABLE_ROWS]]
    columns += [[r.model, *table_cells(r)] for r in reports]
    widths = [max(len(cell) for cell in col) for col in columns]
    lines = []
    for row in range(len(TABLE_ROWS) + 1):
        cells = [col[row].ljust(w) for col, w in zip(columns, widths)]
        lines.append("  ".join(cells).rstrip())
        if row == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def reports_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", "n_total", "n_asd", "n_non_asd", "tp", "fp", "fn", "tn",
                     "accuracy", "sensitivity", "precision", "seed"])
    for r in reports:
        cm = r.confusion
        writer.writerow([r.model, r.stats.n_total, r.stats.n_asd, r.stats.n_non_asd,
                         cm.tp, cm.fp, cm.fn, cm.tn,
                         *("" if v is None else repr(v) for v in (r.accuracy, r.sensitivity, r.precision)),
                         r.seed])
    return buf.getvalue()
