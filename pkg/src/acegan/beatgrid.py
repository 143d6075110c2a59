"""Beat segmentation, dual-beat vectors and rank-1 coupling matrices.

A coupling matrix is the outer product of two scaled dual-beat vectors, so
collections keep only the two factors (``u`` rows times ``v`` columns) and
materialise ``M x M`` matrices per batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import TooFewBeats
from .wfdb import AamiClass, EcgRecord

M_DEFAULT = 73
GENERATED = 5  # label index of the "generated" pseudo-class in label arrays


@dataclass(frozen=True)
class SegmentationPlan:
    record_id: str
    L: int
    beat_centers: np.ndarray
    labels: np.ndarray  # AamiClass values, same order as beat_centers


@dataclass(frozen=True)
class CouplingMatrix:
    values: np.ndarray
    center_beat_class: int
    subject_id: str
    beat_index: int = -1


def plan_segmentation(record: EcgRecord) -> SegmentationPlan:
    beats = record.beats()
    if len(beats) < 3:
        raise TooFewBeats(f"record {record.name} has {len(beats)} beats, need at least 3")
    centers = np.array([b.sample for b in beats], dtype=np.int64)
    labels = np.array([int(b.beat_class) for b in beats], dtype=np.int64)
    return SegmentationPlan(record.name, segment_length(centers), centers, labels)


def segment_length(centers: np.ndarray) -> int:
    """Mean R-R interval over the whole record, rounded to the nearest sample."""
    centers = np.asarray(centers)
    if centers.size < 2:
        raise TooFewBeats("need at least two R peaks for an R-R interval")
    L = int(np.floor(np.mean(np.diff(centers)) + 0.5))
    return max(L, 2)


def extract_segments(signal: np.ndarray, centers: np.ndarray, L: int) -> np.ndarray:
    """``(n_beats, L)`` windows starting ``L // 2`` samples before each R peak.

    Windows running off either end of the signal are edge-replicated.
    """
    signal = np.asarray(signal, dtype=np.float64)
    pre = L // 2
    idx = np.asarray(centers)[:, None] - pre + np.arange(L)[None, :]
    return signal[np.clip(idx, 0, signal.size - 1)]


def extract_segment(signal: np.ndarray, plan: SegmentationPlan, i: int) -> np.ndarray:
    return extract_segments(signal, plan.beat_centers[i : i + 1], plan.L)[0]


def dual_beats(segments: np.ndarray) -> np.ndarray:
    """``(n + 1, 2L)`` array; row ``k`` joins beat ``k - 1`` and beat ``k``.

    The first and last beats borrow themselves as the missing neighbour, so
    beat ``i`` uses rows ``i`` (previous pair) and ``i + 1`` (next pair).
    """
    padded = np.concatenate([segments[:1], segments, segments[-1:]], axis=0)
    return np.concatenate([padded[:-1], padded[1:]], axis=1)


@lru_cache(maxsize=64)
def scaling_matrix(n: int, M: int) -> np.ndarray:
    """Linear map taking a length-``n`` vector to its length-``M`` scaled version.

    The vector is linearly interpolated by a factor ``M`` (points at ``j / M``
    for ``j < n * M``, held at the last sample past the end) and then averaged
    over consecutive blocks of ``n`` points.
    """
    pos = np.arange(n * M) / M
    lo = np.minimum(np.floor(pos).astype(np.int64), n - 1)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    frac[lo == n - 1] = 0.0
    A = np.zeros((M, n))
    rows = np.arange(n * M) // n
    np.add.at(A, (rows, lo), 1.0 - frac)
    np.add.at(A, (rows, hi), frac)
    A /= n
    A.setflags(write=False)
    return A


def scale_dual_beat(x: np.ndarray, M: int = M_DEFAULT) -> np.ndarray:
    """Scale one vector (or each row of a 2-D array) to length ``M``."""
    x = np.asarray(x, dtype=np.float64)
    return x @ scaling_matrix(x.shape[-1], M).T


def record_factors(signal: np.ndarray, plan: SegmentationPlan, M: int = M_DEFAULT):
    """Scaled factor pairs for every beat: ``u[i]`` (previous pair), ``v[i]`` (next pair)."""
    scaled = scale_dual_beat(dual_beats(extract_segments(signal, plan.beat_centers, plan.L)), M)
    return scaled[:-1], scaled[1:]


def coupling_matrix(signal: np.ndarray, plan: SegmentationPlan, i: int, M: int = M_DEFAULT) -> CouplingMatrix:
    n = plan.beat_centers.size
    lo, hi = max(i - 1, 0), min(i + 1, n - 1)
    segs = extract_segments(signal, plan.beat_centers[[lo, i, hi]], plan.L)
    u = scale_dual_beat(np.concatenate([segs[0], segs[1]]), M)
    v = scale_dual_beat(np.concatenate([segs[1], segs[2]]), M)
    return CouplingMatrix(np.outer(u, v), int(plan.labels[i]), plan.record_id, i)


class CouplingSet:
    """Labelled collection of coupling matrices held as factor pairs.

    ``labels`` use AamiClass values, plus ``GENERATED`` where relevant.
    ``provenance`` is one of ``real``, ``generated``, ``estimated``.
    """

    def __init__(self, u, v, labels, record_ids=None, beat_indices=None, provenance=None, stratum=None):
        self.u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        self.v = np.atleast_2d(np.asarray(v, dtype=np.float64))
        n = self.u.shape[0]
        if self.v.shape != self.u.shape:
            raise ValueError("u and v must have equal shapes")
        self.labels = np.asarray(labels, dtype=np.int64).reshape(n)
        self.record_ids = np.asarray(record_ids if record_ids is not None else [""] * n, dtype=object).reshape(n)
        self.beat_indices = np.asarray(beat_indices if beat_indices is not None else np.arange(n), dtype=np.int64).reshape(n)
        self.provenance = np.asarray(provenance if provenance is not None else ["real"] * n, dtype=object).reshape(n)
        self.stratum = np.asarray(stratum if stratum is not None else [""] * n, dtype=object).reshape(n)

    @property
    def M(self) -> int:
        return self.u.shape[1]

    def __len__(self) -> int:
        return self.u.shape[0]

    def __getitem__(self, i: int) -> CouplingMatrix:
        return CouplingMatrix(np.outer(self.u[i], self.v[i]), int(self.labels[i]), str(self.record_ids[i]), int(self.beat_indices[i]))

    def matrices(self, idx=None) -> np.ndarray:
        u, v = (self.u, self.v) if idx is None else (self.u[idx], self.v[idx])
        return u[:, :, None] * v[:, None, :]

    def subset(self, idx) -> CouplingSet:
        idx = np.asarray(idx, dtype=np.int64)
        return CouplingSet(
            self.u[idx], self.v[idx], self.labels[idx], self.record_ids[idx],
            self.beat_indices[idx], self.provenance[idx], self.stratum[idx],
        )

    def with_stratum(self, name: str) -> CouplingSet:
        out = self.subset(np.arange(len(self)))
        out.stratum[:] = name
        return out

    def indices_of(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def counts(self) -> dict[str, int]:
        names = {int(c): c.name for c in AamiClass} | {GENERATED: "generated"}
        return {names[k]: int(np.sum(self.labels == k)) for k in sorted(names)}

    @classmethod
    def empty(cls, M: int = M_DEFAULT) -> CouplingSet:
        return cls(np.zeros((0, M)), np.zeros((0, M)), np.zeros(0))

    @classmethod
    def concat(cls, parts, M: int = M_DEFAULT) -> CouplingSet:
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(M)
        return cls(
            np.concatenate([p.u for p in parts]),
            np.concatenate([p.v for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.record_ids for p in parts]),
            np.concatenate([p.beat_indices for p in parts]),
            np.concatenate([p.provenance for p in parts]),
            np.concatenate([p.stratum for p in parts]),
        )


def record_coupling_set(record: EcgRecord, channel: int = 0, M: int = M_DEFAULT) -> CouplingSet:
    """Coupling matrices (as factors) for every annotated beat of ``record``."""
    plan = plan_segmentation(record)
    u, v = record_factors(record.physical(channel), plan, M)
    n = plan.beat_centers.size
    return CouplingSet(u, v, plan.labels, [record.name] * n, np.arange(n), ["real"] * n)
