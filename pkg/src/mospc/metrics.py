"""MOS evaluation: error and correlation metrics, segment ranking accuracy,
and per-category squared-error summaries.

KTAU is Kendall's tau-b; SRCC uses average ranks for ties.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.stats

from mospc.losses import TIE_EPS

PRED_TIE_EPS = 1e-9
TABLE_SEGMENTS = ((1.0, 2.0), (2.0, 3.0), (3.0, 4.0), (4.0, 5.0), (1.0, 5.0))


class UndefinedCorrelationError(ValueError):
    """A correlation was requested on constant (or fully tied) input."""


def _pair(pred, truth, min_len=1):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions, {truth.size} labels")
    if pred.size < min_len:
        raise ValueError(f"need at least {min_len} values, got {pred.size}")
    return pred, truth


def mse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean((pred - truth) ** 2))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt(np.dot(da, da))
    sb = np.sqrt(np.dot(db, db))
    if sa == 0 or sb == 0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    r = np.dot(da, db) / (sa * sb)
    return float(np.clip(r, -1.0, 1.0))


def lcc(pred, truth) -> float:
    pred, truth = _pair(pred, truth, 2)
    return _pearson(pred, truth)


def srcc(pred, truth) -> float:
    pred, truth = _pair(pred, truth, 2)
    return _pearson(scipy.stats.rankdata(pred), scipy.stats.rankdata(truth))


def ktau(pred, truth) -> float:
    pred, truth = _pair(pred, truth, 2)
    if np.all(pred == pred[0]) or np.all(truth == truth[0]):
        raise UndefinedCorrelationError("Kendall tau undefined when every pair is tied")
    tau = scipy.stats.kendalltau(pred, truth, variant="b").statistic
    return float(tau)


@dataclass(frozen=True)
class MetricSet:
    mse: float
    lcc: float
    srcc: float
    ktau: float


def metric_set(pred, truth) -> MetricSet:
    return MetricSet(mse(pred, truth), lcc(pred, truth), srcc(pred, truth), ktau(pred, truth))


def system_aggregate(samples: Iterable[tuple[str, float, float]]) -> dict[str, tuple[float, float]]:
    """Per-system ``(mean prediction, mean label)``, in first-seen system order."""
    preds: dict[str, list[float]] = defaultdict(list)
    truths: dict[str, list[float]] = defaultdict(list)
    for sys_id, p, t in samples:
        preds[sys_id].append(p)
        truths[sys_id].append(t)
    if not preds:
        raise ValueError("system_aggregate needs at least one sample")
    return {s: (float(np.mean(preds[s])), float(np.mean(truths[s]))) for s in preds}


@dataclass(frozen=True)
class EvalReport:
    utterance: MetricSet
    system: MetricSet
    n_utterances: int
    n_systems: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "mse", "lcc", "srcc", "ktau", "n"])
        for level, ms, n in (("utterance", self.utterance, self.n_utterances), ("system", self.system, self.n_systems)):
            w.writerow([level, repr(ms.mse), repr(ms.lcc), repr(ms.srcc), repr(ms.ktau), n])
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'level':<10} {'MSE':>8} {'LCC':>8} {'SRCC':>8} {'KTAU':>8} {'n':>6}"]
        for level, ms, n in (("utterance", self.utterance, self.n_utterances), ("system", self.system, self.n_systems)):
            lines.append(f"{level:<10} {ms.mse:8.4f} {ms.lcc:8.4f} {ms.srcc:8.4f} {ms.ktau:8.4f} {n:6d}")
        return "\n".join(lines)


def evaluate(system_ids: Sequence[str], pred, truth) -> EvalReport:
    pred, truth = _pair(pred, truth, 2)
    if len(system_ids) != pred.size:
        raise ValueError("system_ids length does not match predictions")
    agg = system_aggregate(zip(system_ids, pred.tolist(), truth.tolist()))
    sys_pred = np.array([v[0] for v in agg.values()])
    sys_truth = np.array([v[1] for v in agg.values()])
    return EvalReport(metric_set(pred, truth), metric_set(sys_pred, sys_truth), int(pred.size), len(agg))


# -- segment ranking accuracy -------------------------------------------------


@dataclass(frozen=True)
class SegmentResult:
    lo: float
    hi: float
    n_pairs: int
    accuracy: float | None  # None when the segment has no eligible pairs

    @property
    def label(self) -> str:
        return f"{self.lo:g}-{self.hi:g}"


@dataclass(frozen=True)
class SegmentReport:
    segments: tuple[SegmentResult, ...]

    def __getitem__(self, label: str) -> SegmentResult:
        for s in self.segments:
            if s.label == label:
                return s
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "segments": [
                {"segment": s.label, "lo": s.lo, "hi": s.hi, "n_pairs": s.n_pairs, "accuracy": s.accuracy}
                for s in self.segments
            ]
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["segment", "n_pairs", "accuracy"])
        for s in self.segments:
            w.writerow([s.label, s.n_pairs, "" if s.accuracy is None else repr(s.accuracy)])
        return buf.getvalue()

    def to_table(self) -> str:
        head = " ".join(f"{s.label:>8}" for s in self.segments)
        acc = " ".join(f"{'-':>8}" if s.accuracy is None else f"{s.accuracy:8.4f}" for s in self.segments)
        pairs = " ".join(f"{s.n_pairs:8d}" for s in self.segments)
        return f"{'segment':<9}{head}\n{'accuracy':<9}{acc}\n{'pairs':<9}{pairs}"


def _segment_counts(pred: np.ndarray, truth: np.ndarray, chunk: int = 2048) -> tuple[int, int]:
    """(eligible, correct) over unordered pairs with 0 < |dy| <= 1."""
    n = truth.size
    eligible = correct = 0
    for start in range(0, n, chunk):
        rows = slice(start, min(start + chunk, n))
        dy = truth[rows, None] - truth[None, :]
        dm = pred[rows, None] - pred[None, :]
        # count each unordered pair once: column index strictly above row index
        upper = np.arange(n)[None, :] > np.arange(start, rows.stop)[:, None]
        ok = upper & (np.abs(dy) > TIE_EPS) & (np.abs(dy) <= 1.0 + TIE_EPS)
        hit = ok & (np.abs(dm) > PRED_TIE_EPS) & (np.sign(dm) == np.sign(dy))
        eligible += int(ok.sum())
        correct += int(hit.sum())
    return eligible, correct


def segment_ranking_accuracy(samples: Iterable[tuple[float, float]], segments=TABLE_SEGMENTS) -> SegmentReport:
    """Pairwise ordering accuracy inside closed label intervals.

    A pair is eligible when both labels lie in ``[lo, hi]`` and differ by a
    nonzero amount of at most 1. Predicted ties count as errors.
    """
    arr = np.asarray(list(samples), dtype=np.float64).reshape(-1, 2)
    if arr.shape[0] == 0:
        raise ValueError("segment_ranking_accuracy needs at least one sample")
    pred, truth = arr[:, 0], arr[:, 1]
    out = []
    for lo, hi in segments:
        inside = (truth >= lo - TIE_EPS) & (truth <= hi + TIE_EPS)
        n_pairs, correct = _segment_counts(pred[inside], truth[inside])
        out.append(SegmentResult(float(lo), float(hi), n_pairs, correct / n_pairs if n_pairs else None))
    return SegmentReport(tuple(out))


# -- per-category squared errors ------------------------------------------------


@dataclass(frozen=True)
class CategoryStats:
    mean: float
    std: float
    n: int


@dataclass(frozen=True)
class CategoryErrorReport:
    categories: dict[str, CategoryStats]

    def to_dict(self) -> dict:
        return {"categories": {k: asdict(v) for k, v in self.categories.items()}}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "mean_sq_error", "std_sq_error", "n"])
        for k, v in self.categories.items():
            w.writerow([k, repr(v.mean), repr(v.std), v.n])
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'category':<20} {'squared error':>18} {'n':>6}"]
        for k, v in self.categories.items():
            lines.append(f"{k:<20} {v.mean:8.3f}±{v.std:<9.3f} {v.n:6d}")
        return "\n".join(lines)


def category_error_report(samples: Iterable[tuple[str, float, float]]) -> CategoryErrorReport:
    """Mean and population std of squared error per category (first-seen order)."""
    errs: dict[str, list[float]] = defaultdict(list)
    for cat, p, t in samples:
        errs[cat].append((p - t) ** 2)
    if not errs:
        raise ValueError("category_error_report needs at least one sample")
    return CategoryErrorReport(
        {c: CategoryStats(float(np.mean(e)), float(np.std(e)), len(e)) for c, e in errs.items()}
    )
