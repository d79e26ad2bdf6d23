"""Content-aware GoP partitioning.

Boundary ``t`` (``1 <= t <= T-1``) splits frames ``[0, t)`` from ``[t, T)``.
Scores are cosine distances between consecutive fused embeddings; the greedy
partitioner seeds the ``K-1`` highest-scoring boundaries and repairs any GoP
shorter than ``min_length`` by swapping its weaker boundary for the next
unused candidate.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DegenerateInputError(ValueError):
    pass


class InfeasiblePartitionError(ValueError):
    pass


def divergence(embeddings: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """``D[t-1] = 1 - cos(x_t, x_{t-1})`` for ``t = 1 .. T-1`` (length ``T-1``)."""
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DegenerateInputError(f"need at least two flat embeddings, got shape {X.shape}")
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateInputError(f"zero-norm embedding at frame {int(zero[0])}")
    cos = np.einsum("td,td->t", X[1:], X[:-1]) / (norms[1:] * norms[:-1])
    return np.clip(1.0 - cos, 0.0, 2.0)


@dataclass(frozen=True)
class GopPartition:
    boundaries: tuple[int, ...]
    frames: int

    def __post_init__(self):
        b = self.boundaries
        if any(x >= y for x, y in zip(b, b[1:])):
            raise ValueError(f"boundaries must be strictly increasing: {b}")
        if b and (b[0] < 1 or b[-1] > self.frames - 1):
            raise ValueError(f"boundaries must lie in [1, {self.frames - 1}]: {b}")

    @property
    def count(self) -> int:
        return len(self.boundaries) + 1

    def intervals(self) -> list[tuple[int, int]]:
        edges = (0,) + self.boundaries + (self.frames,)
        return list(zip(edges[:-1], edges[1:]))

    def lengths(self) -> list[int]:
        return [v - u for u, v in self.intervals()]

    def gop_of(self, t: int) -> int:
        return frame_to_gop(self, t)

    def gop_indices(self) -> np.ndarray:
        return np.array([frame_to_gop(self, t) for t in range(self.frames)], dtype=np.int64)


def frame_to_gop(p: GopPartition, t: int) -> int:
    """Number of boundaries ``<= t``; a boundary frame opens the later GoP."""
    if not 0 <= t < p.frames:
        raise IndexError(f"frame {t} outside [0, {p.frames - 1}]")
    return bisect.bisect_right(p.boundaries, t)


def partition(scores: Sequence[float], K: int, min_length: int) -> GopPartition:
    """Greedy content-aware partition into at most ``K`` GoPs.

    ``scores[t-1]`` is the divergence at boundary ``t``; ``T = len(scores)+1``.
    Candidates are ranked by descending score, ties by ascending position.
    """
    D = np.asarray(scores, dtype=np.float64)
    T = D.size + 1
    if K < 1 or min_length < 1:
        raise ValueError(f"K and min_length must be positive, got K={K}, min_length={min_length}")
    if K * min_length > T:
        raise InfeasiblePartitionError(
            f"{K} GoPs of length >= {min_length} do not fit in {T} frames"
        )
    if K == 1:
        return GopPartition((), T)
    positions = np.arange(1, T)
    candidates = [int(c) for c in positions[np.lexsort((positions, -D))]]
    score = {t: D[t - 1] for t in positions}

    chosen = set(candidates[: K - 1])
    p = K - 1
    while True:
        edges = sorted(chosen | {0, T})
        bad = next(((u, v) for u, v in zip(edges, edges[1:]) if v - u < min_length), None)
        if bad is None:
            return GopPartition(tuple(sorted(chosen)), T)
        removable = [x for x in bad if x in chosen]
        # stable on ties: the earlier boundary is dropped
        target = min(removable, key=lambda x: (score[x], x))
        chosen.discard(target)
        while p < len(candidates) and candidates[p] in chosen:
            p += 1
        if p < len(candidates):
            chosen.add(candidates[p])
            p += 1


def fixed_length_partition(T: int, length: int) -> GopPartition:
    """Content-agnostic GoPs of ``length`` frames (the last one may be longer)."""
    if length < 1:
        raise ValueError("GoP length must be positive")
    b = list(range(length, T, length))
    if b and T - b[-1] < length:
        b.pop()
    return GopPartition(tuple(b), T)


def uniform_partition(T: int, K: int) -> GopPartition:
    """``K`` GoPs of near-equal length chosen from the video length alone."""
    K = max(1, min(K, T))
    b = sorted({round(T * i / K) for i in range(1, K)})
    return GopPartition(tuple(x for x in b if 0 < x < T), T)


def default_gop_count(T: int, target_length: int = 8) -> int:
    return max(1, math.ceil(T / target_length))


def validate_partition(p: GopPartition, K: int, min_length: int) -> list[str]:
    """Independent feasibility check; returns a list of violations."""
    problems = []
    if len(p.boundaries) > K - 1:
        problems.append(f"{len(p.boundaries)} boundaries exceed K-1={K - 1}")
    covered = 0
    for u, v in p.intervals():
        if u != covered:
            problems.append(f"gap or overlap at {u}")
        if v - u < min_length:
            problems.append(f"GoP [{u},{v}) shorter than {min_length}")
        covered = v
    if covered != p.frames:
        problems.append("intervals do not reach T")
    return problems
