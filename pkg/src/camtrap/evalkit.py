"""Top-k metrics, confusion matrices, and table/figure-style reports.

Ranking rule: descending score, lower class index first on ties.  Every
metric is computed from integer counts, so sample order never matters.
"""
import csv
import io
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from .autograd import no_grad


@dataclass
class PredictionSet:
    logits: np.ndarray
    labels: np.ndarray
    class_table: list

    def __post_init__(self):
        self.logits = np.asarray(self.logits)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n, c = self.logits.shape
        if n < 1:
            raise ValueError("a prediction set needs at least one sample")
        if self.labels.shape != (n,):
            raise ValueError(f"expected {n} labels, got {self.labels.shape}")
        if self.labels.min() < 0 or self.labels.max() >= c:
            raise ValueError(f"labels must lie in [0, {c})")
        if len(self.class_table) != c:
            raise ValueError(f"class_table has {len(self.class_table)} names for {c} logit columns")


@dataclass
class EvalReport:
    topk: dict
    per_class: dict
    confusion: np.ndarray
    n_samples: int
    metadata: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "topk": {str(k): v for k, v in sorted(self.topk.items())},
            "per_class": self.per_class,
            "confusion": self.confusion.tolist(),
            "n_samples": self.n_samples,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            topk={int(k): v for k, v in d["topk"].items()},
            per_class=d["per_class"],
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            n_samples=d["n_samples"],
            metadata=d.get("metadata", {}),
        )


def label_ranks(logits, labels):
    """0-based rank of each true label under the tie rule."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, c = logits.shape
    true = logits[np.arange(n), labels][:, None]
    above = logits > true
    tied_before = (logits == true) & (np.arange(c)[None, :] < labels[:, None])
    return (above | tied_before).sum(axis=1)


def topk_accuracy(preds, k):
    c = preds.logits.shape[1]
    if not 1 <= k <= c:
        raise ValueError(f"k={k} outside [1, {c}]")
    return float(np.mean(label_ranks(preds.logits, preds.labels) < k))


def top1_predictions(logits):
    # np.argmax returns the first maximal index, matching the tie rule
    return np.asarray(logits).argmax(axis=1)


def confusion_matrix(preds):
    c = preds.logits.shape[1]
    cm = np.zeros((c, c), dtype=np.int64)
    np.add.at(cm, (preds.labels, top1_predictions(preds.logits)), 1)
    return cm


def per_class_accuracy(confusion, class_table):
    """Diagonal over row sum; classes without samples are reported as None."""
    confusion = np.asarray(confusion)
    out = {}
    for i, name in enumerate(class_table):
        total = int(confusion[i].sum())
        out[name] = None if total == 0 else float(confusion[i, i] / total)
    return out


def macro_average(per_class):
    vals = [v for v in per_class.values() if v is not None]
    return float(np.mean(vals)) if vals else float("nan")


def predict(model, data, batch_size=256):
    with no_grad():
        parts = [model.forward(x, mode="eval").data for x, _ in data.batches(batch_size)]
    return np.concatenate(parts, axis=0)


def evaluate(model, data, ks=(1, 5), class_table=None, metadata=None):
    """Evaluate once over ``data`` (an ArrayDataset) and assemble an EvalReport."""
    c = model.spec.num_classes
    class_table = list(class_table) if class_table is not None else [str(i) for i in range(c)]
    if len(class_table) != c:
        raise ValueError(f"model predicts {c} classes but the dataset has {len(class_table)}")
    preds = PredictionSet(predict(model, data), data.y, class_table)
    return report_from_predictions(preds, ks, metadata)


def report_from_predictions(preds, ks=(1, 5), metadata=None):
    cm = confusion_matrix(preds)
    meta = dict(metadata or {})
    per_class = per_class_accuracy(cm, preds.class_table)
    absent = [name for name, v in per_class.items() if v is None]
    if absent:
        meta["absent_classes"] = absent
    return EvalReport(
        topk={k: topk_accuracy(preds, k) for k in ks},
        per_class=per_class,
        confusion=cm,
        n_samples=int(len(preds.labels)),
        metadata=meta,
    )


def percent(value):
    """Accuracy fraction -> percent string, half-up to one decimal."""
    d = Decimal(repr(float(value))) * 100
    return str(d.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def per_class_csv(per_class):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["species", "accuracy_percent"])
    for name, acc in per_class.items():
        if acc is not None:
            w.writerow([name, percent(acc)])
    return buf.getvalue()


def bars_csv(rows):
    """rows: iterable of (architecture_label, top1, top5) fractions."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["architecture_label", "top1", "top5"])
    for label, top1, top5 in rows:
        w.writerow([label, percent(top1), percent(top5)])
    return buf.getvalue()


def emit_report(report, path, fmt="csv", label=None):
    """Write ``report`` to ``path`` (a directory).

    csv: ``per_class.csv`` plus a one-row ``bars.csv``; structured-text:
    ``report.json`` bundling everything.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        (out / "per_class.csv").write_text(per_class_csv(report.per_class), encoding="utf-8")
        written.append(out / "per_class.csv")
        label = label or report.metadata.get("architecture", "model")
        (out / "bars.csv").write_text(
            bars_csv([(label, report.topk.get(1, 0.0), report.topk.get(5, report.topk.get(1, 0.0)))]),
            encoding="utf-8",
        )
        written.append(out / "bars.csv")
    elif fmt == "structured-text":
        (out / "report.json").write_text(
            json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        written.append(out / "report.json")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return written


def load_report(path):
    return EvalReport.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
