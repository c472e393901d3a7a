"""Classification metrics, ROC/AUC, and cross-validation planning.

Metrics with zero denominators are reported as None (JSON null), never
silently coerced to 0.  The CV plan performs the outer 4:1 train+val/test
split followed by 5 inner folds, optionally grouped so that all samples
of one cell land in the same fold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from celltransit.errors import ConfigError, UndefinedStatisticError


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(predictions, labels) -> ConfusionMatrix:
    """Exact binary confusion counts; class 1 is the positive class."""
    preds = np.asarray(predictions).astype(int)
    labs = np.asarray(labels).astype(int)
    if preds.shape != labs.shape:
        raise ConfigError("predictions and labels must have equal length")
    if not np.all(np.isin(preds, (0, 1))) or not np.all(np.isin(labs, (0, 1))):
        raise ConfigError("binary labels/predictions must be 0 or 1")
    tp = int(np.sum((preds == 1) & (labs == 1)))
    tn = int(np.sum((preds == 0) & (labs == 0)))
    fp = int(np.sum((preds == 1) & (labs == 0)))
    fn = int(np.sum((preds == 0) & (labs == 1)))
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


@dataclass(frozen=True)
class Metrics:
    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Accuracy, precision, recall, F1 from the confusion counts.

    Each undefined ratio (zero denominator) is returned as None.
    """
    def ratio(num, den):
        return num / den if den > 0 else None

    accuracy = ratio(cm.tp + cm.tn, cm.total)
    precision = ratio(cm.tp, cm.tp + cm.fp)
    recall = ratio(cm.tp, cm.tp + cm.fn)
    f1 = ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn)
    return Metrics(accuracy=accuracy, precision=precision, recall=recall,
                   f1=f1)


@dataclass
class RocCurve:
    """ROC points ordered by descending threshold, plus trapezoidal AUC."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_auc(scores, labels) -> RocCurve:
    """ROC curve by threshold sweep; AUC equals the pairwise ranking
    probability with ties counted 0.5.

    Tied scores are collapsed into one threshold step, which makes the
    trapezoid rule handle ties exactly like the Mann-Whitney statistic.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape or s.ndim != 1:
        raise ConfigError("scores and labels must be 1-D and equal length")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedStatisticError("AUC undefined: single-class labels")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # collapse groups of tied scores
    distinct = np.concatenate([np.flatnonzero(np.diff(s_sorted)) ,
                               [len(s_sorted) - 1]])
    tp_cum = np.cumsum(y_sorted == 1)[distinct]
    fp_cum = np.cumsum(y_sorted == 0)[distinct]
    tpr = np.concatenate([[0.0], tp_cum / n_pos])
    fpr = np.concatenate([[0.0], fp_cum / n_neg])
    thresholds = np.concatenate([[np.inf], s_sorted[distinct]])
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=auc)


# ---------------------------------------------------------------------------
# cross-validation plan
# ---------------------------------------------------------------------------


@dataclass
class CvPlan:
    """Outer 4:1 split plus 5 inner validation folds over train+val.

    ``fold_of`` holds one entry per sample: -1 for test samples, otherwise
    the inner fold index in [0, n_folds).  Grouped samples (same cell)
    always share an assignment.
    """

    fold_of: np.ndarray
    n_folds: int
    seed: int

    @property
    def test_indices(self) -> np.ndarray:
        return np.flatnonzero(self.fold_of == -1)

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero((self.fold_of >= 0) & (self.fold_of != fold))


def make_cv_plan(n: int, seed: int, groups=None, n_folds: int = 5,
                 test_fraction: float = 0.2) -> CvPlan:
    """Seeded grouped split: shuffle groups, carve off ~test_fraction for
    the test set, then deal the remaining groups into n_folds balanced
    folds (greedy smallest-fold assignment).

    Without groups every sample is its own group, which yields fold sizes
    within +-1 sample of each other and a test set within +-1 of the
    exact 4:1 ratio.
    """
    if n < 10:
        raise ConfigError("cross-validation plan needs at least 10 samples")
    if groups is None:
        groups = np.arange(n)
    groups = np.asarray(groups)
    if len(groups) != n:
        raise ConfigError("groups must have one entry per sample")

    rng = np.random.default_rng(seed)
    unique_groups = []
    members: dict = {}
    for i, g in enumerate(groups.tolist()):
        if g not in members:
            members[g] = []
            unique_groups.append(g)
        members[g].append(i)
    order = rng.permutation(len(unique_groups))

    target_test = int(round(n * test_fraction))
    fold_of = np.full(n, -2, dtype=int)
    test_count = 0
    remaining = []
    for gi in order:
        g = unique_groups[gi]
        size = len(members[g])
        if test_count + size <= target_test:
            for i in members[g]:
                fold_of[i] = -1
            test_count += size
        else:
            remaining.append(g)
    # deal remaining groups to the currently smallest fold (stable greedy)
    fold_sizes = np.zeros(n_folds, dtype=int)
    for g in remaining:
        f = int(np.argmin(fold_sizes))
        for i in members[g]:
            fold_of[i] = f
        fold_sizes[f] += len(members[g])
    assert not np.any(fold_of == -2)
    return CvPlan(fold_of=fold_of, n_folds=n_folds, seed=seed)


# ---------------------------------------------------------------------------
# embedding quality
# ---------------------------------------------------------------------------


def silhouette_score(x: np.ndarray, labels) -> float:
    """Mean silhouette coefficient with Euclidean distances (O(n^2))."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ConfigError("silhouette needs at least two clusters")
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    dist = np.sqrt(np.maximum(d2, 0.0))
    scores = np.zeros(len(x))
    for i in range(len(x)):
        same = labels == labels[i]
        n_same = int(np.sum(same)) - 1
        if n_same == 0:
            scores[i] = 0.0
            continue
        a = np.sum(dist[i][same]) / n_same
        b = min(np.mean(dist[i][labels == other])
                for other in uniq if other != labels[i])
        scores[i] = (b - a) / max(a, b)
    return float(np.mean(scores))
