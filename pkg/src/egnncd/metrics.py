"""Classification metrics and the model-comparison statistics.

All six metrics are larger-is-better. A score of exactly 0.5 counts as a
negative prediction.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import chi2, norm, rankdata

METRICS = ("acc", "aupr", "auc", "f1", "pre", "rec")
THRESHOLD = 0.5
SUMMARY_ROWS = ("win/tie/loss", "statistic")


def _pairs(labels, scores):
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if labels.shape != scores.shape:
        raise ValueError(f"labels ({labels.size}) and scores ({scores.size}) differ in length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    return labels, scores


def confusion(labels, scores, threshold=THRESHOLD):
    """``(TP, FP, FN, TN)`` with prediction positive iff ``score > threshold``."""
    labels, scores = _pairs(labels, scores)
    pred = scores > threshold
    pos = labels == 1
    return (int(np.sum(pred & pos)), int(np.sum(pred & ~pos)),
            int(np.sum(~pred & pos)), int(np.sum(~pred & ~pos)))


def accuracy(labels, scores, threshold=THRESHOLD):
    labels, scores = _pairs(labels, scores)
    if labels.size == 0:
        raise ValueError("accuracy of an empty sample")
    return float(np.mean((scores > threshold) == (labels == 1)))


def precision_recall_f1(labels, scores, threshold=THRESHOLD):
    """Precision, recall and F1; any zero denominator yields 0."""
    tp, fp, fn, _ = confusion(labels, scores, threshold)
    pre = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * pre * rec / (pre + rec) if pre + rec else 0.0
    return pre, rec, f1


def roc_auc(labels, scores):
    """Area under the ROC curve from tie-averaged ranks (Mann-Whitney form)."""
    labels, scores = _pairs(labels, scores)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC AUC is undefined for single-class input")
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr(labels, scores):
    """Average precision: sum over distinct thresholds (descending) of
    precision times the recall increment."""
    labels, scores = _pairs(labels, scores)
    n_pos = labels.sum()
    if n_pos == 0:
        raise ValueError("AUPR is undefined without positive labels")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    # last index of each run of equal scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp_at = tp[last]
    precision = tp_at / (last + 1)
    recall_step = np.diff(np.r_[0.0, tp_at]) / n_pos
    return float(np.sum(precision * recall_step))


@dataclass
class MetricsReport:
    acc: float
    aupr: float
    auc: float
    f1: float
    pre: float
    rec: float
    tp: int
    fp: int
    fn: int
    tn: int

    def as_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.as_dict())


def evaluate(labels, scores) -> MetricsReport:
    labels, scores = _pairs(labels, scores)
    pre, rec, f1 = precision_recall_f1(labels, scores)
    tp, fp, fn, tn = confusion(labels, scores)
    return MetricsReport(acc=accuracy(labels, scores), aupr=aupr(labels, scores),
                         auc=roc_auc(labels, scores), f1=f1, pre=pre, rec=rec,
                         tp=tp, fp=fp, fn=fn, tn=tn)


# -- comparison statistics --------------------------------------------------

def _wilcoxon_null_counts(doubled_ranks):
    """Number of sign assignments giving each value of 2*W+ (subset-sum DP)."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        counts[r:] = counts[r:] + counts[:total + 1 - r].copy()
    return counts


def wilcoxon_signed_rank(x, y, exact_max_n=25):
    """Two-sided Wilcoxon signed-rank p-value for paired samples.

    Zero differences are dropped. Up to ``exact_max_n`` remaining pairs the
    exact permutation distribution of W+ is used (midranks for ties);
    otherwise a normal approximation with tie and continuity corrections.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("paired samples differ in length")
    d = x - y
    d = d[d != 0]
    n = d.size
    if n < 5:
        raise ValueError(f"need at least 5 nonzero differences, got {n}")
    ranks = rankdata(np.abs(d))
    w_plus = ranks[d > 0].sum()
    if n <= exact_max_n:
        doubled = np.rint(2 * ranks).astype(int)
        counts = _wilcoxon_null_counts(doubled)
        total = counts.sum()
        k = int(round(2 * w_plus))
        lower = counts[:k + 1].sum() / total
        upper = counts[k:].sum() / total
        return float(min(1.0, 2 * min(lower, upper)))
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - (tie_counts ** 3 - tie_counts).sum() / 48.0
    z = (abs(w_plus - mean) - 0.5) / math.sqrt(var)
    return float(min(1.0, 2 * norm.sf(max(z, 0.0))))


def friedman_ranks(table):
    """Mean rank per model (columns) across rows; rank 1 is the largest value,
    ties share the average rank."""
    t = np.asarray(table, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] < 2 or t.shape[1] < 2:
        raise ValueError("need at least 2 rows and 2 models")
    if np.isnan(t).any():
        raise ValueError("table has missing cells")
    ranks = np.apply_along_axis(lambda r: rankdata(-r), 1, t)
    return ranks.mean(axis=0)


def friedman_test(table):
    """Friedman chi-square statistic and p-value (tie-corrected) for rows x models."""
    t = np.asarray(table, dtype=np.float64)
    n, k = t.shape
    ranks = np.apply_along_axis(lambda r: rankdata(-r), 1, t)
    rsum = ranks.sum(axis=0)
    stat = 12.0 / (n * k * (k + 1)) * (rsum ** 2).sum() - 3.0 * n * (k + 1)
    ties = sum((c ** 3 - c).sum() for c in (np.unique(r, return_counts=True)[1] for r in t))
    denom = 1.0 - ties / (n * (k ** 3 - k))
    stat = stat / denom if denom > 0 else 0.0
    return float(stat), float(chi2.sf(stat, k - 1))


def win_tie_loss(reference, others, epsilon=1e-4):
    """Tally reference vs each competitor row by row.

    ``others`` maps competitor name to a value sequence aligned with
    ``reference``. Returns ``{name: (win, tie, loss)}`` plus a ``"total"`` entry.
    """
    ref = np.asarray(reference, dtype=np.float64)
    out, total = {}, np.zeros(3, dtype=int)
    for name, vals in others.items():
        v = np.asarray(vals, dtype=np.float64)
        if v.shape != ref.shape:
            raise ValueError(f"rows of {name!r} are not aligned with the reference")
        win = int(np.sum(ref > v + epsilon))
        tie = int(np.sum(np.abs(ref - v) <= epsilon))
        loss = v.size - win - tie
        out[name] = (win, tie, loss)
        total += (win, tie, loss)
    out["total"] = tuple(int(t) for t in total)
    return out


@dataclass
class ComparisonTable:
    rows: list            # (dataset, metric) pairs
    models: list          # column names; first is the reference
    values: np.ndarray    # len(rows) x len(models)
    epsilon: float = 1e-4
    wtl: dict = field(default_factory=dict)
    p_values: dict = field(default_factory=dict)
    mean_ranks: dict = field(default_factory=dict)

    def compute(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.rows), len(self.models)):
            raise ValueError("value matrix does not match rows x models")
        if np.isnan(v).any():
            raise ValueError("comparison table has missing cells")
        self.values = v
        ref = v[:, 0]
        others = {m: v[:, j] for j, m in enumerate(self.models) if j > 0}
        self.wtl = win_tie_loss(ref, others, self.epsilon)
        self.p_values = {}
        for m, col in others.items():
            try:
                self.p_values[m] = wilcoxon_signed_rank(ref, col)
            except ValueError:
                self.p_values[m] = None
        self.mean_ranks = dict(zip(self.models, friedman_ranks(v).tolist()))
        return self

    @classmethod
    def from_csv(cls, path, epsilon=1e-4):
        """Read ``dataset,metric,<model>,...`` with a header row naming the models.

        Summary rows written by ``write`` are ignored."""
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows, values = [], []
            for rec in reader:
                if not rec:
                    continue
                if rec[0] in SUMMARY_ROWS:  # statistics appended by ``write``
                    break
                rows.append((rec[0], rec[1]))
                values.append([float(c) if c.strip() else np.nan for c in rec[2:]])
        return cls(rows=rows, models=header[2:], values=np.array(values), epsilon=epsilon)

    def to_dict(self):
        return {
            "models": list(self.models),
            "rows": [list(r) for r in self.rows],
            "values": np.asarray(self.values).tolist(),
            "epsilon": self.epsilon,
            "win_tie_loss": {k: list(v) for k, v in self.wtl.items()},
            "wilcoxon_p": self.p_values,
            "mean_rank": self.mean_ranks,
        }

    def write(self, out_dir, stem="comparison"):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=1))
        with (out / f"{stem}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "metric", *self.models])
            for (ds, metric), row in zip(self.rows, np.asarray(self.values)):
                w.writerow([ds, metric, *(repr(float(x)) for x in row)])
            if self.wtl:
                w.writerow(["win/tie/loss", "", "/".join(map(str, self.wtl["total"])),
                            *("/".join(map(str, self.wtl[m])) for m in self.models[1:])])
                w.writerow(["statistic", "p-value", "", *("" if self.p_values[m] is None
                                                          else repr(self.p_values[m])
                                                          for m in self.models[1:])])
                w.writerow(["statistic", "F-rank", *(repr(self.mean_ranks[m]) for m in self.models)])
        return out / f"{stem}.json", out / f"{stem}.csv"
