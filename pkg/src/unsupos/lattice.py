"""Log-semiring dynamic programming over linear-chain lattices.

A lattice bundles per-position unary scores, a shared transition matrix
(rows indexed by the previous tag) and a start vector.  The score of a tag
sequence y is

    start[y_1] + sum_i unary[i, y_i] + sum_i trans[y_{i-1}, y_i]

and the three classic quantities over it are computed here: the log
partition function (Forward), the best sequence (Viterbi, ties broken toward
the lowest tag index), and posterior marginals (Forward-Backward).  All sums
are carried out in log space with per-step max subtraction.

``brute_force`` recomputes all three by explicit enumeration; it is the
oracle the fast routines are checked against.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


class LatticeError(ValueError):
    """Raised for malformed lattices or infeasible brute-force requests."""


@dataclass
class SequenceLattice:
    unary: np.ndarray  # (n, Y)
    trans: np.ndarray  # (Y, Y), row = previous tag
    start: np.ndarray  # (Y,)

    def __post_init__(self) -> None:
        self.unary = np.asarray(self.unary, dtype=np.float64)
        self.trans = np.asarray(self.trans, dtype=np.float64)
        self.start = np.asarray(self.start, dtype=np.float64)
        if self.unary.ndim != 2 or self.unary.shape[0] < 1 or self.unary.shape[1] < 1:
            raise LatticeError(f"bad unary shape {self.unary.shape}")
        y = self.unary.shape[1]
        if self.trans.shape != (y, y):
            raise LatticeError(f"bad trans shape {self.trans.shape}, expected ({y}, {y})")
        if self.start.shape != (y,):
            raise LatticeError(f"bad start shape {self.start.shape}, expected ({y},)")
        for name, arr in (("unary", self.unary), ("trans", self.trans), ("start", self.start)):
            if not np.all(np.isfinite(arr)):
                raise LatticeError(f"non-finite values in {name}")

    @property
    def n(self) -> int:
        return self.unary.shape[0]

    @property
    def num_tags(self) -> int:
        return self.unary.shape[1]


def _logsumexp(x: np.ndarray, axis: int | None = None) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())


def sequence_score(lattice: SequenceLattice, tags) -> float:
    """Unnormalized log score of one tag sequence."""
    tags = np.asarray(tags, dtype=np.int64)
    if tags.shape != (lattice.n,):
        raise LatticeError(f"tag sequence length {tags.shape} != lattice length {lattice.n}")
    if np.any(tags < 0) or np.any(tags >= lattice.num_tags):
        raise LatticeError("tag index out of range")
    score = lattice.start[tags[0]] + lattice.unary[np.arange(lattice.n), tags].sum()
    if lattice.n > 1:
        score += lattice.trans[tags[:-1], tags[1:]].sum()
    return float(score)


def _forward(lattice: SequenceLattice) -> np.ndarray:
    """All forward vectors alpha[i, t] = log sum over prefixes ending in t."""
    n, y = lattice.unary.shape
    alpha = np.empty((n, y))
    alpha[0] = lattice.start + lattice.unary[0]
    for i in range(1, n):
        prev = alpha[i - 1][:, None] + lattice.trans
        m = prev.max(axis=0)
        alpha[i] = lattice.unary[i] + m + np.log(np.exp(prev - m).sum(axis=0))
    return alpha


def log_partition(lattice: SequenceLattice) -> float:
    """Log of the sum of exp(score) over all tag sequences."""
    return float(_logsumexp(_forward(lattice)[-1]))


def viterbi(lattice: SequenceLattice) -> tuple[np.ndarray, float]:
    """Best tag sequence and its score; argmax ties resolve to the lowest
    tag index at every backpointer decision."""
    n, y = lattice.unary.shape
    delta = lattice.start + lattice.unary[0]
    back = np.empty((n, y), dtype=np.int64)
    for i in range(1, n):
        cand = delta[:, None] + lattice.trans
        back[i] = cand.argmax(axis=0)
        delta = lattice.unary[i] + cand[back[i], np.arange(y)]
    best_last = int(delta.argmax())
    tags = np.empty(n, dtype=np.int64)
    tags[-1] = best_last
    for i in range(n - 1, 0, -1):
        tags[i - 1] = back[i, tags[i]]
    return tags, float(delta[best_last])


def forward_backward(lattice: SequenceLattice) -> tuple[float, np.ndarray, np.ndarray]:
    """Log partition plus per-position (n, Y) and adjacent-pair (n-1, Y, Y)
    posteriors in a single pass."""
    n, y = lattice.unary.shape
    alpha = _forward(lattice)
    beta = np.zeros((n, y))
    for i in range(n - 2, -1, -1):
        nxt = lattice.trans + (lattice.unary[i + 1] + beta[i + 1])[None, :]
        m = nxt.max(axis=1)
        beta[i] = m + np.log(np.exp(nxt - m[:, None]).sum(axis=1))
    log_z = _logsumexp(alpha[-1])
    unary_post = np.exp(alpha + beta - log_z)
    pair_post = np.empty((n - 1, y, y))
    for i in range(n - 1):
        pair_post[i] = np.exp(
            alpha[i][:, None]
            + lattice.trans
            + (lattice.unary[i + 1] + beta[i + 1])[None, :]
            - log_z
        )
    return float(log_z), unary_post, pair_post


def posterior_marginals(lattice: SequenceLattice) -> tuple[np.ndarray, np.ndarray]:
    """Per-position tag posteriors (n, Y) and adjacent-pair posteriors
    (n-1, Y, Y) under the Gibbs distribution the lattice defines."""
    _, unary_post, pair_post = forward_backward(lattice)
    return unary_post, pair_post


def brute_force(lattice: SequenceLattice) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Enumerate every tag sequence and return (log_partition, argmax
    sequence, unary posteriors, pairwise posteriors).

    Refuses lattices with more than 10^6 sequences.  Argmax ties resolve to
    the lexicographically smallest sequence.
    """
    n, y = lattice.unary.shape
    if y ** n > 10 ** 6:
        raise LatticeError(f"brute force over {y}^{n} sequences refused")
    seqs = np.array(list(itertools.product(range(y), repeat=n)), dtype=np.int64)
    scores = lattice.start[seqs[:, 0]] + lattice.unary[np.arange(n)[None, :], seqs].sum(axis=1)
    if n > 1:
        scores = scores + lattice.trans[seqs[:, :-1], seqs[:, 1:]].sum(axis=1)
    log_z = float(_logsumexp(scores))
    best = seqs[int(scores.argmax())]
    weights = np.exp(scores - log_z)
    unary_post = np.zeros((n, y))
    for t in range(y):
        unary_post[:, t] = weights @ (seqs == t)
    pair_post = np.zeros((n - 1, y, y))
    for i in range(n - 1):
        for a in range(y):
            sel = seqs[:, i] == a
            for b in range(y):
                pair_post[i, a, b] = weights[sel & (seqs[:, i + 1] == b)].sum()
    return log_z, best, unary_post, pair_post
