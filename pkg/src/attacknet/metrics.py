"""Confusion matrix, biometric error rates and ROC.

Positive class is Genuine/Bonafide (label 0).  Rows are the actual class,
columns the prediction::

                     pred genuine   pred attack
    actual genuine       TP             FN
    actual attack        FP             TN

so FAR = FP/(FP+TN) and FRR = FN/(TP+FN).
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

GENUINE, ATTACK = 0, 1


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fn_: int = 0
    fp: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fn_ + self.fp + self.tn


def confusion(preds, labels) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise MetricError(f"{preds.size} predictions for {labels.size} labels")
    if np.any((preds != GENUINE) & (preds != ATTACK)) or np.any((labels != GENUINE) & (labels != ATTACK)):
        raise MetricError("classes must be 0 (genuine) or 1 (attack)")
    g_true = labels == GENUINE
    g_pred = preds == GENUINE
    return ConfusionMatrix(
        tp=int(np.sum(g_true & g_pred)),
        fn_=int(np.sum(g_true & ~g_pred)),
        fp=int(np.sum(~g_true & g_pred)),
        tn=int(np.sum(~g_true & ~g_pred)),
    )


def class_swap(cm: ConfusionMatrix) -> ConfusionMatrix:
    """Exchange the roles of the two classes."""
    return ConfusionMatrix(tp=cm.tn, fn_=cm.fp, fp=cm.fn_, tn=cm.tp)


def _ratio(num: int, den: int) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def precision(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fp)[0]


def recall(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fn_)[0]


def f1(cm: ConfusionMatrix) -> float:
    p, r = precision(cm), recall(cm)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def far(cm: ConfusionMatrix) -> float:
    if cm.fp + cm.tn == 0:
        raise MetricError("FAR undefined: no attack samples")
    return cm.fp / (cm.fp + cm.tn)


def frr(cm: ConfusionMatrix) -> float:
    if cm.tp + cm.fn_ == 0:
        raise MetricError("FRR undefined: no genuine samples")
    return cm.fn_ / (cm.tp + cm.fn_)


def hter(cm: ConfusionMatrix) -> float:
    return (far(cm) + frr(cm)) / 2


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    degenerate: tuple[str, ...] = ()


def class_metrics(cm: ConfusionMatrix) -> ClassMetrics:
    """Precision/recall/F1 for the positive class of ``cm``.

    An undefined ratio is reported as 0 and named in ``degenerate``.
    """
    p, p_bad = _ratio(cm.tp, cm.tp + cm.fp)
    r, r_bad = _ratio(cm.tp, cm.tp + cm.fn_)
    flags = []
    if p_bad:
        flags.append("precision")
    if r_bad:
        flags.append("recall")
    if p + r == 0:
        flags.append("f1")
        f = 0.0
    else:
        f = 2 * p * r / (p + r)
    return ClassMetrics(p, r, f, tuple(flags))


@dataclass(frozen=True)
class EvalReport:
    bonafide: ClassMetrics
    attack: ClassMetrics
    far: float
    frr: float
    hter: float
    confusion: ConfusionMatrix

    @property
    def degenerate(self) -> bool:
        return bool(self.bonafide.degenerate or self.attack.degenerate)

    def csv_rows(self) -> list[tuple[str, float, float, float]]:
        return [
            ("bonafide", self.bonafide.precision, self.bonafide.recall, self.bonafide.f1),
            ("attack", self.attack.precision, self.attack.recall, self.attack.f1),
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("class,precision,recall,f1\n")
        for name, p, r, f in self.csv_rows():
            buf.write(f"{name},{p:.6f},{r:.6f},{f:.6f}\n")
        buf.write(f"far,{self.far:.6f}\nfrr,{self.frr:.6f}\nhter,{self.hter:.6f}\n")
        return buf.getvalue()

    def to_text(self) -> str:
        cm = self.confusion
        lines = [
            f"{'class':<10}{'precision':>11}{'recall':>11}{'f1':>11}",
            *(f"{name:<10}{p:>11.6f}{r:>11.6f}{f:>11.6f}" for name, p, r, f in self.csv_rows()),
            f"{'FAR':<10}{self.far:>11.6f}",
            f"{'FRR':<10}{self.frr:>11.6f}",
            f"{'HTER':<10}{self.hter:>11.6f}",
            f"confusion: TP={cm.tp} FN={cm.fn_} FP={cm.fp} TN={cm.tn}",
        ]
        if self.degenerate:
            flags = [f"bonafide.{d}" for d in self.bonafide.degenerate] + [f"attack.{d}" for d in self.attack.degenerate]
            lines.append("degenerate (reported as 0): " + ", ".join(flags))
        return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> dict[str, tuple[float, ...]]:
    """Inverse of ``EvalReport.to_csv`` into a ``{row name: values}`` mapping."""
    out = {}
    for line in text.strip().splitlines()[1:]:
        name, *vals = line.split(",")
        out[name] = tuple(float(v) for v in vals)
    return out


def evaluate_report(preds, labels) -> EvalReport:
    cm = confusion(preds, labels)
    fa, fr = far(cm), frr(cm)
    return EvalReport(
        bonafide=class_metrics(cm),
        attack=class_metrics(class_swap(cm)),
        far=fa,
        frr=fr,
        hter=(fa + fr) / 2,
        confusion=cm,
    )


def predictions_from_probs(probs: np.ndarray) -> np.ndarray:
    """Argmax decision; a tie goes to class 0 (genuine)."""
    return np.asarray(probs).argmax(axis=1)


@dataclass
class RocCurve:
    thresholds: list[float] = field(default_factory=list)
    far: list[float] = field(default_factory=list)
    tpr: list[float] = field(default_factory=list)
    auc: float = 0.0

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.far, self.tpr))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("threshold,far,tpr\n")
        for t, a, b in zip(self.thresholds, self.far, self.tpr):
            buf.write(f"{t:.6f},{a:.6f},{b:.6f}\n")
        return buf.getvalue()


def roc(scores, labels) -> RocCurve:
    """Sweep "accept as genuine if score >= threshold" over every distinct score.

    ``scores`` are genuine-class probabilities.  Sentinel thresholds +inf
    (accept nobody) and -inf (accept everybody) bracket the sweep.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise MetricError("scores and labels differ in length")
    genuine = labels == GENUINE
    n_pos, n_neg = int(genuine.sum()), int((~genuine).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC needs samples of both classes")
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    g_sorted = genuine[order]
    tp_cum = np.cumsum(g_sorted)
    fp_cum = np.cumsum(~g_sorted)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    thresholds = [np.inf] + s_sorted[ends].tolist() + [-np.inf]
    tpr = [0.0] + (tp_cum[ends] / n_pos).tolist() + [1.0]
    fpr = [0.0] + (fp_cum[ends] / n_neg).tolist() + [1.0]
    auc = float(np.sum(np.diff(fpr) * (np.array(tpr[1:]) + np.array(tpr[:-1])) / 2))
    return RocCurve(thresholds, fpr, tpr, auc)
