"""Unsupervised estimation of patient-specific normal beats.

Each beat is described by the magnitude spectrograms of its two dual-beat
segments. A beat joins the pool when its two spectrograms agree, or when
either of them matches the corresponding spectrogram of a pool member above
an epoch-dependent threshold. The estimator never sees beat labels.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .beatgrid import dual_beats, extract_segments, segment_length
from .errors import DegenerateInput, SegmentTooShort

log = logging.getLogger(__name__)

WINDOW = 64
NFFT = 1024
N_BINS = 32


@dataclass
class EstimatorConfig:
    base_threshold: float = 0.9
    pool_threshold_start: float = 0.95
    pool_threshold_step: float = 0.01
    max_pool: int = 400

    def pool_threshold(self, epoch: int) -> float:
        return self.pool_threshold_start + epoch * self.pool_threshold_step


@dataclass
class NormalPool:
    subject_id: str
    beat_indices: list[int] = field(default_factory=list)
    admitted_epoch: list[int] = field(default_factory=list)
    spectrograms: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.beat_indices)


def spectrogram(dual_beat: np.ndarray) -> np.ndarray:
    """Rectangular-window STFT magnitude, window 64, hop 1, 1024-point FFT, bins 0-31.

    Returned flattened frame-major, length ``32 * (len(dual_beat) - 63)``.
    """
    x = np.asarray(dual_beat, dtype=np.float64)
    if x.size < WINDOW:
        raise SegmentTooShort(f"segment of {x.size} samples is shorter than the {WINDOW}-sample window")
    return spectrograms(x[None])[0]


def _dft_basis() -> tuple[np.ndarray, np.ndarray]:
    # only 32 of the 513 bins are kept, so a direct 64 x 32 DFT beats a padded FFT
    k = np.arange(WINDOW)[:, None] * np.arange(N_BINS)[None, :]
    ang = 2.0 * np.pi * k / NFFT
    return np.cos(ang), np.sin(ang)


_COS, _SIN = _dft_basis()


def spectrograms(dual_beats_2d: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Row-wise ``spectrogram`` of a ``(n, 2L)`` array."""
    x = np.asarray(dual_beats_2d, dtype=np.float64)
    if x.shape[-1] < WINDOW:
        raise SegmentTooShort(f"segment of {x.shape[-1]} samples is shorter than the {WINDOW}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(x, WINDOW, axis=-1)
    out = np.empty((x.shape[0], frames.shape[1] * N_BINS))
    for s in range(0, x.shape[0], chunk):
        f = frames[s : s + chunk]
        out[s : s + chunk] = np.hypot(f @ _COS, f @ _SIN).reshape(f.shape[0], -1)
    return out


def correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; DegenerateInput when either side has zero variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("correlation needs equal-length vectors")
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt(da @ da), np.sqrt(db @ db)
    if na == 0 or nb == 0:
        raise DegenerateInput("zero-variance spectrogram")
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


def _standardise(x: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Rows centred and scaled to unit norm; zero-variance rows become zero."""
    out = np.empty_like(x, dtype=np.float64)
    for s in range(0, x.shape[0], chunk):
        d = x[s : s + chunk] - x[s : s + chunk].mean(axis=-1, keepdims=True)
        n = np.sqrt(np.einsum("ij,ij->i", d, d))[:, None]
        out[s : s + chunk] = np.divide(d, n, out=np.zeros_like(d), where=n > 0)
    return out


def estimate_normals(signal: np.ndarray, beat_centers: np.ndarray, config: EstimatorConfig | None = None,
                     L: int | None = None, subject_id: str = "") -> NormalPool:
    """Run the admission passes over one record.

    Only the signal and the R-peak positions are consumed, never labels.
    """
    config = config or EstimatorConfig()
    centers = np.asarray(beat_centers)
    L = segment_length(centers) if L is None else L
    duals = dual_beats(extract_segments(signal, centers, L))
    specs = spectrograms(duals)
    z = _standardise(specs)
    prev, nxt = z[:-1], z[1:]  # beat i: dual (i-1, i) and dual (i, i+1)
    n = centers.size

    pool = NormalPool(subject_id)
    if config.max_pool <= 0:
        return pool
    admitted = np.zeros(n, dtype=bool)
    pool_prev = np.empty((config.max_pool, z.shape[1]))
    pool_next = np.empty_like(pool_prev)

    def admit(i: int, epoch: int) -> None:
        k = len(pool)
        pool_prev[k], pool_next[k] = prev[i], nxt[i]
        pool.beat_indices.append(i)
        pool.admitted_epoch.append(epoch)
        pool.spectrograms.append((specs[i], specs[i + 1]))
        admitted[i] = True

    self_r = np.sum(prev * nxt, axis=1)
    epoch = 0
    while len(pool) < config.max_pool:
        threshold = config.pool_threshold(epoch)
        added = 0
        for i in range(n):
            if admitted[i]:
                continue
            if self_r[i] > config.base_threshold:
                admit(i, epoch)
                added += 1
            elif len(pool) and threshold < 1.0 - 1e-12:
                k = len(pool)
                r_prev = pool_prev[:k] @ prev[i]
                r_next = pool_next[:k] @ nxt[i]
                if np.any(r_prev > threshold) or np.any(r_next > threshold):
                    admit(i, epoch)
                    added += 1
            if len(pool) >= config.max_pool:
                break
        log.debug("epoch %d threshold %.2f added %d (pool %d)", epoch, threshold, added, len(pool))
        epoch += 1
        if added == 0 or config.pool_threshold(epoch) >= 1.0 - 1e-12:
            break
    return pool
