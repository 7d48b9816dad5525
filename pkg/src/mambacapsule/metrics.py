"""Confusion matrices and one-vs-rest per-class scores.

Two F1 variants are reported side by side:

* ``f1_acc_sen`` = 2 * ACC * SEN / (ACC + SEN), the harmonic mean of one-vs-rest
  accuracy and sensitivity.
* ``f1_std`` = 2 * PPV * SEN / (PPV + SEN), the conventional definition.

All scores are percentages kept at full precision; rounding (half-up, two
decimals) happens only when formatting.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import DimensionError

METRICS = ("acc", "sen", "f1_acc_sen", "ppv", "spec", "f1_std")
LABELS = {
    "acc": "ACC",
    "sen": "SEN",
    "f1_acc_sen": "F1(ACC,SEN)",
    "ppv": "PPV",
    "spec": "SPEC",
    "f1_std": "F1(PPV,SEN)",
}


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted
    names: tuple = ()

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = self.counts.shape[0]
        if self.counts.shape != (k, k):
            raise DimensionError(f"confusion matrix must be square, got {self.counts.shape}")
        if np.any(self.counts < 0):
            raise ValueError("confusion counts must be non-negative")
        if not self.names:
            self.names = tuple(str(i) for i in range(k))

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts, self.names)

    def one_vs_rest(self):
        c = self.counts
        tp = np.diag(c)
        fn = c.sum(axis=1) - tp
        fp = c.sum(axis=0) - tp
        tn = c.sum() - tp - fn - fp
        return tp, tn, fp, fn

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["true\\pred", *self.names])
        for name, row in zip(self.names, self.counts):
            out.writerow([name, *(int(v) for v in row)])
        return buf.getvalue()


def confusion(preds, labels, n_classes: int, names: tuple = ()) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.shape != labels.shape:
        raise DimensionError(f"{preds.size} predictions for {labels.size} labels")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts, names)


def _ratio(num, den, metric, names, flags):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    ok = den != 0
    out[ok] = 100.0 * num[ok] / den[ok]
    for i in np.flatnonzero(~ok):
        flags.append((metric, names[i]))
    return out


def _harmonic(a, b, metric, names, flags):
    s = a + b
    out = np.zeros_like(a)
    ok = s != 0
    out[ok] = 2.0 * a[ok] * b[ok] / s[ok]
    for i in np.flatnonzero(~ok):
        flags.append((metric, names[i]))
    return out


@dataclass
class ClassReport:
    names: tuple
    scores: dict  # metric -> per-class array (percent)
    overall_accuracy: float  # trace / total, percent
    zero_division: list = field(default_factory=list)  # (metric, class name)

    @property
    def macro(self) -> dict:
        return {m: float(np.mean(v)) for m, v in self.scores.items()}

    def __getattr__(self, name):
        scores = self.__dict__.get("scores", {})
        if name in scores:
            return scores[name]
        raise AttributeError(name)


def per_class_metrics(cm: ConfusionMatrix) -> ClassReport:
    if cm.total == 0:
        raise ValueError("cannot score an empty confusion matrix")
    tp, tn, fp, fn = cm.one_vs_rest()
    flags: list = []
    names = cm.names
    acc = _ratio(tp + tn, tp + tn + fp + fn, "acc", names, flags)
    sen = _ratio(tp, tp + fn, "sen", names, flags)
    ppv = _ratio(tp, tp + fp, "ppv", names, flags)
    spec = _ratio(tn, tn + fp, "spec", names, flags)
    scores = {
        "acc": acc,
        "sen": sen,
        "f1_acc_sen": _harmonic(acc, sen, "f1_acc_sen", names, flags),
        "ppv": ppv,
        "spec": spec,
        "f1_std": _harmonic(ppv, sen, "f1_std", names, flags),
    }
    overall = 100.0 * np.trace(cm.counts) / cm.total
    return ClassReport(names, scores, float(overall), flags)


def standard_f1(cm: ConfusionMatrix) -> tuple[np.ndarray, list]:
    """Conventional per-class F1 (percent) and the zero-division flags raised."""
    tp, _, fp, fn = cm.one_vs_rest()
    flags: list = []
    ppv = _ratio(tp, tp + fp, "ppv", cm.names, flags)
    sen = _ratio(tp, tp + fn, "sen", cm.names, flags)
    return _harmonic(ppv, sen, "f1_std", cm.names, flags), flags


def round_half_up(x: float, places: int = 2) -> Decimal:
    q = Decimal(1).scaleb(-places)
    return Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP)


def format_report(report: ClassReport) -> str:
    header = ["Metric"] + list(report.names) + ["Macro-Avg"]
    rows = [header]
    macro = report.macro
    for m in METRICS:
        rows.append([LABELS[m]] + [str(round_half_up(v)) for v in report.scores[m]]
                    + [str(round_half_up(macro[m]))])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths)))
             for r in rows]
    lines.append(f"overall accuracy: {round_half_up(report.overall_accuracy)}")
    if report.zero_division:
        lines.append("zero division (reported as 0): "
                     + ", ".join(f"{m}[{c}]" for m, c in report.zero_division))
    return "\n".join(lines)


def report_csv(report: ClassReport) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["metric", *report.names, "macro"])
    macro = report.macro
    for m in METRICS:
        out.writerow([LABELS[m]] + [str(round_half_up(v)) for v in report.scores[m]]
                     + [str(round_half_up(macro[m]))])
    return buf.getvalue()
