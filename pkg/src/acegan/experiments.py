"""Desk-scale experiment drivers shared by ``scripts/`` and the acceptance tests."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import gan
from .beatgrid import CouplingSet, plan_segmentation, record_coupling_set
from .datasets import DS1_RECORDS
from .normpool import EstimatorConfig, estimate_normals
from .synth import SynthConfig, synth_cohort
from .wfdb import AamiClass


def synthetic_training_pool(seed: int = 0, beats_per_record: int = 200, records=DS1_RECORDS) -> CouplingSet:
    """N, S, V and F coupling matrices from a synthetic DS1-like cohort."""
    cohort = synth_cohort(SynthConfig(record_ids=tuple(records), beats_per_record=beats_per_record), seed=seed)
    parts = []
    for rec in cohort.records.values():
        cs = record_coupling_set(rec)
        parts.append(cs.subset(np.flatnonzero(cs.labels != AamiClass.Q)))
    return CouplingSet.concat(parts)


@dataclass
class GanSmokeResult:
    telemetry: list[dict]
    seconds: float
    final_accuracy: float
    fd_first: float
    fd_last: float
    window: int = 5
    extra: dict = field(default_factory=dict)


def gan_smoke(pool: CouplingSet, config: gan.GanTrainConfig, window: int = 5, progress=None) -> GanSmokeResult:
    """Train on ``pool`` and summarise the telemetry.

    ``final_accuracy`` is the class-balanced real-sample accuracy at the last
    measurement; ``fd_first`` and ``fd_last`` average the first and last
    ``window`` Fréchet distances.
    """
    t0 = time.time()
    res = gan.train_gan(pool, config, progress=progress)
    secs = time.time() - t0
    tel = res.telemetry
    last = tel[-1]
    acc = float(np.mean([last[f"acc_{n}"] for n in gan.CLASS_NAMES]))
    fds = [r["fd"] for r in tel]
    return GanSmokeResult(tel, secs, acc, float(np.mean(fds[:window])), float(np.mean(fds[-window:])), window)


@dataclass
class PurityResult:
    pool_sizes: dict[str, int]
    available_normals: dict[str, int]
    purity: float
    total_beats: int
    seconds: float


def estimator_purity(n_records: int = 4, beats_per_record: int = 600, seed: int = 0,
                     config: EstimatorConfig | None = None, fractions=None) -> PurityResult:
    """Pool purity over synthetic records, by default 90% template N and 10% V.

    Synthetic S beats differ from N mainly in the P wave, so including them
    measures something else: how near-normal ectopics leak into the pool.
    """
    fractions = fractions or {"N": 0.9, "V": 0.1}
    scfg = SynthConfig(record_ids=tuple(f"p{i}" for i in range(n_records)), beats_per_record=beats_per_record,
                       fractions=fractions, no_s_records=())
    cohort = synth_cohort(scfg, seed=seed)
    t0 = time.time()
    sizes, avail, hits, total = {}, {}, 0, 0
    n_beats = 0
    for rid, rec in cohort.records.items():
        plan = plan_segmentation(rec)
        pool = estimate_normals(rec.physical(0), plan.beat_centers, config, L=plan.L, subject_id=rid)
        truth = plan.labels[np.asarray(pool.beat_indices, dtype=np.int64)]
        sizes[rid] = len(pool)
        avail[rid] = int(np.sum(plan.labels == AamiClass.N))
        hits += int(np.sum(truth == AamiClass.N))
        total += len(pool)
        n_beats += plan.labels.size
    return PurityResult(sizes, avail, hits / total if total else float("nan"), n_beats, time.time() - t0)
