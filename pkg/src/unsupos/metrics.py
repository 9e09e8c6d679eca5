"""Clustering evaluation for induced tags against gold tags.

All three metrics work off a gold-by-predicted contingency matrix:

* many-to-one (M-1): map every predicted index to its most frequent gold
  tag and score as accuracy.  Under the cross-validation protocol the
  mapping is built on the dev split and reused unchanged on test.
* one-to-one (1-1): the best injective mapping, a linear assignment problem.
* V-measure: the harmonic mean of homogeneity and completeness, both
  defined through conditional entropies with natural logarithms.

All metrics are invariant under relabeling of the predicted indexes, and
1-1 can never exceed M-1 (an injective mapping is one feasible choice of
the unconstrained one).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


class MetricError(ValueError):
    """Raised for shape or alignment problems in metric inputs."""


@dataclass
class ContingencyMatrix:
    """counts[g, p] = number of tokens with gold tag g and predicted index p."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.size == 0:
            raise MetricError(f"contingency matrix must be 2-D, got shape {self.counts.shape}")
        if np.any(self.counts < 0):
            raise MetricError("negative counts")
        if self.counts.sum() == 0:
            raise MetricError("empty contingency matrix")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def build_contingency(
    gold_seqs: list,
    pred_seqs: list,
    num_gold: int | None = None,
    num_pred: int | None = None,
) -> ContingencyMatrix:
    """Tally token-level (gold, predicted) pairs over aligned sequences.
    Explicit sizes let several splits share one index space."""
    if len(gold_seqs) != len(pred_seqs):
        raise MetricError(
            f"{len(gold_seqs)} gold sentences vs {len(pred_seqs)} predicted"
        )
    flat_gold: list[int] = []
    flat_pred: list[int] = []
    for i, (g, p) in enumerate(zip(gold_seqs, pred_seqs)):
        if len(g) != len(p):
            raise MetricError(f"sentence {i}: {len(g)} gold tokens vs {len(p)} predicted")
        flat_gold.extend(int(x) for x in g)
        flat_pred.extend(int(x) for x in p)
    if not flat_gold:
        raise MetricError("no tokens to evaluate")
    gold = np.asarray(flat_gold)
    pred = np.asarray(flat_pred)
    if gold.min() < 0 or pred.min() < 0:
        raise MetricError("negative tag ids")
    g_size = num_gold if num_gold is not None else int(gold.max()) + 1
    p_size = num_pred if num_pred is not None else int(pred.max()) + 1
    if gold.max() >= g_size or pred.max() >= p_size:
        raise MetricError("tag id outside the declared index space")
    counts = np.zeros((g_size, p_size), dtype=np.int64)
    np.add.at(counts, (gold, pred), 1)
    return ContingencyMatrix(counts)


@dataclass
class TagMapping:
    """Predicted index -> gold tag, total on the indexes it was built from."""

    mapping: dict[int, int]
    source: str = "dev"

    def apply(self, pred_index: int) -> int:
        # Indexes never seen when the mapping was built fall back to gold
        # tag 0 and in effect count as errors.
        return self.mapping.get(pred_index, 0)


def m1_mapping(cm: ContingencyMatrix, source: str = "dev") -> TagMapping:
    """Majority mapping: each predicted index goes to the gold tag it
    co-occurs with most (ties toward the lowest gold id).  Indexes with no
    occurrences are left out of the mapping."""
    mapping = {}
    for p in range(cm.counts.shape[1]):
        column = cm.counts[:, p]
        if column.sum() > 0:
            mapping[p] = int(column.argmax())
    return TagMapping(mapping, source)


def m1_score(cm: ContingencyMatrix, mapping: TagMapping | None = None) -> float:
    """Accuracy after applying the mapping to every predicted index.  Without
    an explicit mapping the matrix maps itself (single-split evaluation)."""
    if mapping is None:
        mapping = m1_mapping(cm)
    correct = 0
    for p in range(cm.counts.shape[1]):
        correct += int(cm.counts[mapping.apply(p), p])
    return correct / cm.total


def unmapped_indexes(cm: ContingencyMatrix, mapping: TagMapping) -> list[int]:
    """Predicted indexes that occur in this matrix but were unseen when the
    mapping was built."""
    present = np.nonzero(cm.counts.sum(axis=0) > 0)[0]
    return [int(p) for p in present if p not in mapping.mapping]


def one_to_one(cm: ContingencyMatrix) -> float:
    """Best injective predicted-to-gold mapping (Hungarian algorithm);
    rectangular matrices are zero-padded to square."""
    counts = cm.counts
    size = max(counts.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[: counts.shape[0], : counts.shape[1]] = counts
    rows, cols = linear_sum_assignment(padded, maximize=True)
    return float(padded[rows, cols].sum()) / cm.total


def _entropy(freq: np.ndarray, total: float) -> float:
    """H of a count vector, natural log, 0 log 0 = 0.  Exactly-rounded
    summation keeps the result independent of label order."""
    return -math.fsum(
        (c / total) * math.log(c / total) for c in freq if c > 0
    )


def v_measure(cm: ContingencyMatrix, beta: float = 1.0) -> tuple[float, float, float]:
    """(homogeneity, completeness, V).  Degenerate cases follow the usual
    conventions: a zero unconditional entropy makes the corresponding score
    1, and V is 0 when both scores are 0."""
    counts = cm.counts.astype(np.float64)
    total = float(cm.total)
    gold_freq = counts.sum(axis=1)
    pred_freq = counts.sum(axis=0)
    h_gold = _entropy(gold_freq, total)
    h_pred = _entropy(pred_freq, total)
    # H(G | P) = -sum_{g,p} (n_gp / N) log(n_gp / n_p)
    nonzero = [
        (counts[g, p], gold_freq[g], pred_freq[p])
        for g in range(counts.shape[0])
        for p in range(counts.shape[1])
        if counts[g, p] > 0
    ]
    h_gold_given_pred = -math.fsum(
        (n / total) * math.log(n / np_) for n, _, np_ in nonzero
    )
    h_pred_given_gold = -math.fsum(
        (n / total) * math.log(n / ng) for n, ng, _ in nonzero
    )
    hom = 1.0 if h_gold == 0.0 else 1.0 - h_gold_given_pred / h_gold
    com = 1.0 if h_pred == 0.0 else 1.0 - h_pred_given_gold / h_pred
    if hom + com == 0.0:
        return hom, com, 0.0
    v = (1.0 + beta) * hom * com / (beta * hom + com)
    return hom, com, v


def evaluate_run(
    gold_dev: list,
    pred_dev: list,
    gold_test: list | None = None,
    pred_test: list | None = None,
    num_gold: int | None = None,
    num_pred: int | None = None,
) -> dict:
    """Metric report over one run.

    The M-1 mapping is built on dev and applied to both splits; 1-1 and
    V-measure are computed per split.  Returns a dict of per-split metric
    dicts plus the mapping, with predicted indexes unseen on dev flagged.
    """
    if num_gold is None or num_pred is None:
        seqs_gold = list(gold_dev) + (list(gold_test) if gold_test else [])
        seqs_pred = list(pred_dev) + (list(pred_test) if pred_test else [])
        num_gold = max(max(s) for s in seqs_gold if len(s)) + 1
        num_pred = max(max(s) for s in seqs_pred if len(s)) + 1
    report: dict = {"splits": {}}
    cm_dev = build_contingency(gold_dev, pred_dev, num_gold, num_pred)
    mapping = m1_mapping(cm_dev)
    report["mapping"] = mapping
    splits = [("dev", cm_dev)]
    if gold_test is not None:
        if pred_test is None:
            raise MetricError("gold test split without predictions")
        splits.append(("test", build_contingency(gold_test, pred_test, num_gold, num_pred)))
    for name, cm in splits:
        hom, com, v = v_measure(cm)
        report["splits"][name] = {
            "m1": m1_score(cm, mapping),
            "one_to_one": one_to_one(cm),
            "vm": v,
            "homogeneity": hom,
            "completeness": com,
            "tokens": cm.total,
            "unmapped": unmapped_indexes(cm, mapping),
        }
    return report


def summarize_runs(values: list[float]) -> tuple[float, float]:
    """Mean and population standard deviation over per-run metric values."""
    if not values:
        raise MetricError("no values to summarize")
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())
