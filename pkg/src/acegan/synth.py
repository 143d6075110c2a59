"""Seeded synthetic ECG cohorts with exact ground truth.

Each beat is a mixture of Gaussian bumps (P, Q, R, S, T). Every subject gets
its own heart rate and a mild random perturbation of the bump parameters;
the ectopic classes differ from the subject's normal beat in morphology and
timing:

* S: premature, inverted early P wave, normal QRS.  A "near-normal" S
  sub-population keeps the normal morphology and is only slightly early.
* V: premature, no P wave, wide inverted QRS, discordant T, compensatory pause.
* F: average of the subject's N and V waveforms, slightly early.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import DS1_RECORDS, DS2_RECORDS
from .wfdb import SYMBOL_TO_CODE, AamiClass, Annotation, EcgRecord, make_header

# (centre s, amplitude mV, width s) for P, Q, R, S, T
NORMAL_SHAPE = np.array([
    [-0.200, 0.15, 0.025],
    [-0.035, -0.12, 0.010],
    [0.000, 1.10, 0.011],
    [0.035, -0.25, 0.011],
    [0.280, 0.30, 0.045],
])
S_SHAPE = NORMAL_SHAPE.copy()
S_SHAPE[0] = [-0.140, -0.18, 0.020]
V_SHAPE = np.array([
    [-0.200, 0.00, 0.025],
    [-0.050, 0.10, 0.015],
    [0.000, -1.30, 0.035],
    [0.060, 0.35, 0.020],
    [0.300, 0.50, 0.060],
])

PREMATURITY = {AamiClass.N: 1.0, AamiClass.S: 0.62, AamiClass.V: 0.65, AamiClass.F: 0.90, AamiClass.Q: 1.0}
NEAR_NORMAL_S_PREMATURITY = 1.0
RAW_SYMBOL = {AamiClass.N: "N", AamiClass.S: "A", AamiClass.V: "V", AamiClass.F: "F", AamiClass.Q: "Q"}

SUBTYPE_DEFAULT = 0
SUBTYPE_NEAR_NORMAL = 1


@dataclass
class SynthConfig:
    record_ids: tuple[str, ...] = DS1_RECORDS + DS2_RECORDS
    beats_per_record: int = 200
    fs: float = 360.0
    fractions: dict = field(default_factory=lambda: {"N": 0.85, "S": 0.06, "V": 0.06, "F": 0.03})
    no_s_records: tuple[str, ...] = DS1_RECORDS[-6:]
    near_normal_s_fraction: float = 0.0
    near_normal_s_records: tuple[str, ...] = ()  # every S beat of these records is near-normal
    noise_std: float = 0.01
    rr_jitter: float = 0.02
    wander_mv: float = 0.03
    subject_variation: float = 0.08
    rr_range: tuple[float, float] = (0.70, 0.95)
    gain: float = 200.0
    adc_zero: int = 1024

    def class_counts(self, record_id: str) -> dict[AamiClass, int]:
        fr = {AamiClass[k]: float(v) for k, v in self.fractions.items()}
        if record_id in self.no_s_records:
            fr.pop(AamiClass.S, None)
        total = sum(fr.values())
        n = self.beats_per_record
        counts = {c: int(round(n * f / total)) for c, f in fr.items() if c != AamiClass.N}
        counts[AamiClass.N] = n - sum(counts.values())
        return counts


@dataclass(eq=False)
class SyntheticCohort:
    config: SynthConfig
    records: dict[str, EcgRecord]
    subtypes: dict[str, np.ndarray]

    def labels(self, record_id: str) -> np.ndarray:
        return np.array([int(b.beat_class) for b in self.records[record_id].beats()])


def _bumps(t: np.ndarray, shape: np.ndarray) -> np.ndarray:
    c, a, w = shape[:, 0:1], shape[:, 1:2], shape[:, 2:3]
    return np.sum(a * np.exp(-0.5 * ((t[None, :] - c) / w) ** 2), axis=0)


def _subject_shapes(rng: np.random.Generator, variation: float) -> dict[AamiClass, np.ndarray]:
    def perturb(base):
        out = base.copy()
        out[:, 0] += rng.normal(0.0, 0.15 * variation, len(base)) * np.abs(base[:, 0]).clip(0.02)
        out[:, 1] *= 1.0 + rng.normal(0.0, variation, len(base))
        out[:, 2] *= 1.0 + rng.normal(0.0, variation, len(base)).clip(-0.5, 0.5)
        return out

    scale = 1.0 + rng.normal(0.0, variation)
    n = perturb(NORMAL_SHAPE)
    s = perturb(S_SHAPE)
    s[1:] = n[1:]  # supraventricular beats share the subject's QRS-T
    v = perturb(V_SHAPE)
    shapes = {AamiClass.N: n, AamiClass.S: s, AamiClass.V: v}
    for k in shapes:
        shapes[k] = shapes[k].copy()
        shapes[k][:, 1] *= scale
    return shapes


def _beat_sequence(rng, counts: dict[AamiClass, int]) -> np.ndarray:
    n = sum(counts.values())
    ectopic = np.concatenate([np.full(k, int(c)) for c, k in counts.items() if c != AamiClass.N] or [np.zeros(0, int)])
    seq = np.full(n, int(AamiClass.N))
    # keep the two beats at either end normal and ectopics non-adjacent where room allows
    interior = np.arange(2, n - 2)
    slots = interior[::2] if ectopic.size <= interior[::2].size else interior
    pos = np.sort(rng.choice(slots, size=min(ectopic.size, slots.size), replace=False))
    seq[pos] = rng.permutation(ectopic)[: pos.size]
    return seq


def synth_record(record_id: str, config: SynthConfig, rng: np.random.Generator) -> tuple[EcgRecord, np.ndarray]:
    fs = config.fs
    shapes = _subject_shapes(rng, config.subject_variation)
    base_rr = rng.uniform(*config.rr_range)
    seq = _beat_sequence(rng, config.class_counts(record_id))
    subtypes = np.zeros(seq.size, dtype=np.int64)
    s_idx = np.flatnonzero(seq == AamiClass.S)
    frac = 1.0 if record_id in config.near_normal_s_records else config.near_normal_s_fraction
    n_near = int(round(frac * s_idx.size))
    if n_near:
        subtypes[rng.choice(s_idx, size=n_near, replace=False)] = SUBTYPE_NEAR_NORMAL

    r_times = np.empty(seq.size)
    t = 0.6
    prev = AamiClass.N
    for k, c in enumerate(seq):
        c = AamiClass(int(c))
        if k:
            factor = NEAR_NORMAL_S_PREMATURITY if subtypes[k] == SUBTYPE_NEAR_NORMAL else PREMATURITY[c]
            if prev == AamiClass.V:
                factor = max(factor, 2.0 - PREMATURITY[AamiClass.V])
            elif prev == AamiClass.S and c == AamiClass.N:
                factor = 1.1
            t += base_rr * factor * (1.0 + config.rr_jitter * rng.standard_normal())
        r_times[k] = t
        prev = c

    n_samples = int(np.ceil((r_times[-1] + 0.8) * fs))
    time = np.arange(n_samples) / fs
    sig = np.zeros(n_samples)
    half = int(0.6 * fs)
    for k, (c, rt) in enumerate(zip(seq, r_times)):
        c = AamiClass(int(c))
        if c == AamiClass.F:
            shape = None
        elif c == AamiClass.S and subtypes[k] == SUBTYPE_NEAR_NORMAL:
            shape = NORMAL_SHAPE  # the population template, free of subject variation
        else:
            shape = shapes.get(c, shapes[AamiClass.N])
        centre = int(round(rt * fs))
        lo, hi = max(centre - half, 0), min(centre + half, n_samples)
        local = time[lo:hi] - rt
        if shape is None:
            wave = 0.5 * (_bumps(local, shapes[AamiClass.N]) + _bumps(local, shapes[AamiClass.V]))
        else:
            wave = _bumps(local, shape)
        sig[lo:hi] += wave
    sig += config.wander_mv * np.sin(2 * np.pi * 0.25 * time + rng.uniform(0, 2 * np.pi))
    sig += config.noise_std * rng.standard_normal(n_samples)
    lead2 = 0.6 * sig + config.noise_std * rng.standard_normal(n_samples)

    digital = np.round(np.stack([sig, lead2]) * config.gain) + config.adc_zero
    digital = np.clip(digital, -2048, 2047).astype(np.int64)
    header = make_header(record_id, digital, fs=fs, gain=config.gain, adc_zero=config.adc_zero,
                         descriptions=("MLII", "V1"))
    anns = [Annotation(0, 28, aux=b"(N\x00")]  # rhythm label, as in MIT-BIH files
    for c, rt in zip(seq, r_times):
        sample = int(round(rt * fs))
        anns.append(Annotation(sample, SYMBOL_TO_CODE[RAW_SYMBOL[AamiClass(int(c))]]))
    return EcgRecord(header, digital, anns), subtypes


def synth_cohort(config: SynthConfig | None = None, seed: int = 0) -> SyntheticCohort:
    config = config or SynthConfig()
    children = np.random.SeedSequence(seed).spawn(len(config.record_ids))
    records, subtypes = {}, {}
    for rid, ss in zip(config.record_ids, children):
        rec, sub = synth_record(rid, config, np.random.default_rng(ss))
        records[rid] = rec
        subtypes[rid] = sub
    return SyntheticCohort(config, records, subtypes)
