"""Evaluation: margins, accuracies, correlations and a simulated judge."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np
from scipy import stats

from .datagen import Batch, Dataset, as_arrays
from .policy import PolicyTable, check_compatible, log_ratio
from .reward import GroundTruth, quantize_scores

CSV_COLUMNS = ("step", "loss", "avg_marginal", "accuracy", "aug_accuracy", "pearson", "spearman", "kendall_tau")


@dataclass
class MetricsReport:
    avg_marginal: float
    accuracy: float
    aug_accuracy: float | None = None
    pearson: float | None = None
    spearman: float | None = None
    kendall_tau: float | None = None
    win_rate: float | None = None
    tie_rate: float | None = None
    lose_rate: float | None = None
    step: int | None = None
    loss: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> list:
        d = self.to_dict()
        return ["" if d[c] is None else d[c] for c in CSV_COLUMNS]

    @classmethod
    def from_dict(cls, d: dict) -> MetricsReport:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class Correlations(NamedTuple):
    pearson: float | None
    spearman: float | None
    kendall_tau: float | None


def tuple_margins(pi: PolicyTable, ref: PolicyTable, batch: Batch, augmented=False) -> np.ndarray:
    """Unscaled ``log-ratio(y+) - log-ratio(y-)`` per tuple, at x or aug(x)."""
    check_compatible(pi, ref)
    q, yp, yn = as_arrays(batch)
    if q.size == 0:
        raise ValueError("dataset must be non-empty")
    rows = pi.aug_rows(q) if augmented else q
    return log_ratio(pi, ref, rows, yp) - log_ratio(pi, ref, rows, yn)


def average_marginal(pi, ref, dataset: Batch, beta: float | None = None) -> float:
    """Mean log-ratio margin; beta-free unless ``beta`` is given."""
    m = float(np.mean(tuple_margins(pi, ref, dataset)))
    return m if beta is None else beta * m


def accuracy(pi, ref, dataset: Batch, augmented=False) -> float:
    """Fraction of tuples whose margin is strictly positive."""
    return float(np.mean(tuple_margins(pi, ref, dataset, augmented) > 0))


def correlations(margins, gaps) -> Correlations:
    """Pearson, Spearman (average ranks) and Kendall tau-b.

    Returns all ``None`` when either input is constant.
    """
    a = np.asarray(margins, dtype=np.float64)
    b = np.asarray(gaps, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("margins and gaps must be equal-length vectors")
    if a.size < 3:
        raise ValueError("need at least 3 observations")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return Correlations(None, None, None)
    pearson = float(stats.pearsonr(a, b)[0])
    spearman = float(stats.spearmanr(a, b)[0])
    kendall = float(stats.kendalltau(a, b, variant="b")[0])
    return Correlations(pearson, spearman, kendall)


def quality_gaps(dataset: Dataset) -> np.ndarray | None:
    gaps = dataset.true_gaps()
    return gaps if gaps is not None else dataset.score_gaps()


def evaluate(pi, ref, dataset: Dataset, *, step=None, loss=None, sample=None) -> MetricsReport:
    """Compute every dataset-level metric available for ``dataset``.

    ``sample`` optionally restricts the correlation triple to a random
    subset ``(size, seed)`` of tuples.
    """
    m = tuple_margins(pi, ref, dataset)
    aug_acc = None
    if pi.has_augmentation:
        aug_acc = float(np.mean(tuple_margins(pi, ref, dataset, augmented=True) > 0))
    corr = Correlations(None, None, None)
    gaps = quality_gaps(dataset)
    if gaps is not None and len(gaps) >= 3:
        idx = np.arange(len(gaps))
        if sample is not None:
            size, seed = sample
            idx = np.random.default_rng(seed).choice(len(gaps), size=min(size, len(gaps)), replace=False)
        corr = correlations(m[idx], gaps[idx])
    return MetricsReport(
        avg_marginal=float(np.mean(m)),
        accuracy=float(np.mean(m > 0)),
        aug_accuracy=aug_acc,
        pearson=corr.pearson,
        spearman=corr.spearman,
        kendall_tau=corr.kendall_tau,
        step=step,
        loss=loss,
    )


def _choose(policy: PolicyTable, x: int, u) -> int:
    row = policy.logits[x]
    if u is None:
        return int(np.argmax(row))
    cdf = np.cumsum(np.exp(row - row.max()))
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), row.size - 1))


def judge_compare(policy_a, policy_b, gt: GroundTruth, queries, mode="argmax", seed=0):
    """Win/tie/lose rates of ``policy_a`` against ``policy_b`` under the oracle judge.

    Each policy answers every query (argmax, or a categorical draw when
    ``mode == "sample"``); answers are scored by quantized r* on 0..5.
    Sampling feeds both policies the same uniform draw per query, so
    swapping the policies swaps win and lose exactly.
    """
    queries = list(queries)
    if not queries:
        raise ValueError("need at least one query")
    if mode not in ("argmax", "sample"):
        raise ValueError(f"unknown mode {mode!r}")
    scores = quantize_scores(gt.rewards)
    rng = np.random.default_rng(seed) if mode == "sample" else None
    win = tie = lose = 0
    for x in queries:
        u = None if rng is None else rng.random()
        sa = scores[x, _choose(policy_a, x, u)]
        sb = scores[x, _choose(policy_b, x, u)]
        if sa > sb:
            win += 1
        elif sa < sb:
            lose += 1
        else:
            tie += 1
    n = len(queries)
    return win / n, tie / n, lose / n
