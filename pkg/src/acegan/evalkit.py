"""Confusion matrices, beat-detection metrics, Fréchet distance and feature PCA."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSamples, LengthMismatch

LABELS = ("N", "S", "V", "F", "Q", "generated")
N_LABELS = len(LABELS)
S_IDX, V_IDX, N_IDX = 1, 2, 0


@dataclass
class ConfusionMatrix:
    """Counts indexed ``[ground truth, prediction]`` over N, S, V, F, Q, generated."""

    counts: np.ndarray

    @classmethod
    def zeros(cls) -> ConfusionMatrix:
        return cls(np.zeros((N_LABELS, N_LABELS), dtype=np.int64))

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        return ConfusionMatrix(self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def accuracy(self) -> float | None:
        t = self.total
        return float(np.trace(self.counts)) / t if t else None

    def binary(self, positive: int) -> BinaryCounts:
        """One-vs-rest reduction; "generated" predictions count as negative predictions."""
        c = self.counts
        tp = int(c[positive, positive])
        fn = int(c[positive].sum()) - tp
        fp = int(c[:, positive].sum()) - tp
        tn = self.total - tp - fn - fp
        return BinaryCounts(tp, tn, fp, fn)

    def to_text(self) -> str:
        head = "truth\\pred " + " ".join(f"{n:>9}" for n in LABELS) + f" {'total':>9}"
        lines = [head]
        for i, name in enumerate(LABELS):
            lines.append(f"{name:<10} " + " ".join(f"{int(x):>9}" for x in self.counts[i]) + f" {int(self.counts[i].sum()):>9}")
        lines.append(f"{'total':<10} " + " ".join(f"{int(x):>9}" for x in self.counts.sum(axis=0)) + f" {self.total:>9}")
        return "\n".join(lines)


def confusion(truth, predictions) -> ConfusionMatrix:
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    predictions = np.asarray(predictions, dtype=np.int64).reshape(-1)
    if truth.shape != predictions.shape:
        raise LengthMismatch(f"{truth.size} labels vs {predictions.size} predictions")
    cm = ConfusionMatrix.zeros()
    np.add.at(cm.counts, (truth, predictions), 1)
    return cm


@dataclass(frozen=True)
class BinaryCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class Metrics:
    """Ratios that are 0/0 are ``None`` and render as ``-``."""

    acc: float | None
    sen: float | None
    spe: float | None
    ppr: float | None
    f1: float | None


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def metrics(b: BinaryCounts) -> Metrics:
    return Metrics(
        acc=_ratio(b.tp + b.tn, b.total),
        sen=_ratio(b.tp, b.tp + b.fn),
        spe=_ratio(b.tn, b.tn + b.fp),
        ppr=_ratio(b.tp, b.tp + b.fp),
        # harmonic mean of Sen and Ppr written over counts; equal whenever both exist
        f1=_ratio(2 * b.tp, 2 * b.tp + b.fp + b.fn) if (b.tp + b.fn) and (b.tp + b.fp) else None,
    )


def fmt_pct(x: float | None, digits: int = 0) -> str:
    return "-" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{100 * x:.{digits}f}"


# ------------------------------------------------------------------ Fréchet


@dataclass(frozen=True)
class FrechetStats:
    mu: np.ndarray
    sigma: np.ndarray

    @classmethod
    def of(cls, features: np.ndarray) -> FrechetStats:
        f = np.asarray(features, dtype=np.float64)
        if f.ndim == 1:
            f = f[:, None]
        if f.shape[0] < 2:
            raise InsufficientSamples(f"need at least 2 samples for a covariance, got {f.shape[0]}")
        sigma = np.atleast_2d(np.cov(f, rowvar=False))
        return cls(f.mean(axis=0), 0.5 * (sigma + sigma.T))


EIG_CLIP = 1e-10


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, q = np.linalg.eigh(0.5 * (a + a.T))
    w = np.where(w < EIG_CLIP, 0.0, w)
    return (q * np.sqrt(w)) @ q.T


def frechet_from_stats(real: FrechetStats, gen: FrechetStats) -> float:
    """``|mu_r - mu_g|^2 + tr(S_r) + tr(S_g) - 2 tr((S_r^1/2 S_g S_r^1/2)^1/2)``."""
    diff = real.mu - gen.mu
    root_r = _psd_sqrt(real.sigma)
    inner = root_r @ gen.sigma @ root_r
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    tr_cross = float(np.sum(np.sqrt(np.where(w < EIG_CLIP, 0.0, w))))
    fd = float(diff @ diff + np.trace(real.sigma) + np.trace(gen.sigma) - 2.0 * tr_cross)
    return max(fd, 0.0)


def frechet_distance(features_real, features_generated) -> float:
    return frechet_from_stats(FrechetStats.of(features_real), FrechetStats.of(features_generated))


# ---------------------------------------------------------------------- PCA


@dataclass
class PcaResult:
    projections: np.ndarray  # (n, 2)
    explained_variance: np.ndarray  # all components, descending
    components: np.ndarray  # (2, d)
    mean: np.ndarray


def pca_export(features, labels=None, path=None, n_components: int = 2) -> PcaResult:
    """Project mean-centred features on the leading covariance eigenvectors.

    Eigenvector signs are fixed so each component's largest-magnitude entry is
    positive. When ``path`` is given a CSV ``label,pc1,pc2`` is written.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 3:
        raise InsufficientSamples("PCA needs at least 3 samples")
    mean = f.mean(axis=0)
    centred = f - mean
    cov = centred.T @ centred / (f.shape[0] - 1)
    w, q = np.linalg.eigh(0.5 * (cov + cov.T))
    order = np.argsort(w, kind="stable")[::-1]
    w = np.clip(w[order], 0.0, None)
    q = q[:, order]
    k = min(n_components, q.shape[1])
    comps = q[:, :k].T.copy()
    flip = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
    comps *= np.where(flip == 0, 1.0, flip)[:, None]
    proj = centred @ comps.T
    if k < n_components:
        proj = np.concatenate([proj, np.zeros((proj.shape[0], n_components - k))], axis=1)
    result = PcaResult(proj, w, comps, mean)
    if path is not None:
        labels = [""] * len(proj) if labels is None else list(labels)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["label"] + [f"pc{i + 1}" for i in range(n_components)])
            for lab, row in zip(labels, proj):
                wr.writerow([lab] + [repr(float(x)) for x in row])
    return result


# ------------------------------------------------------------- DS2 reports


REPORT_COLUMNS = ("record", "n_N", "n_SVEB", "n_VEB", "N_sen", "N_ppr", "SVEB_sen", "SVEB_ppr",
                  "VEB_sen", "VEB_ppr", "acc")


def record_row(record_id: str, cm: ConfusionMatrix) -> dict:
    rows = cm.row_totals()
    n, s, v = metrics(cm.binary(N_IDX)), metrics(cm.binary(S_IDX)), metrics(cm.binary(V_IDX))
    return {
        "record": record_id, "n_N": int(rows[0]), "n_SVEB": int(rows[1]), "n_VEB": int(rows[2]),
        "N_sen": n.sen, "N_ppr": n.ppr, "SVEB_sen": s.sen, "SVEB_ppr": s.ppr,
        "VEB_sen": v.sen, "VEB_ppr": v.ppr, "acc": cm.accuracy(),
    }


@dataclass
class Ds2Report:
    per_record: dict[str, ConfusionMatrix]

    @property
    def pooled(self) -> ConfusionMatrix:
        total = ConfusionMatrix.zeros()
        for cm in self.per_record.values():
            total = total + cm
        return total

    def rows(self) -> list[dict]:
        out = [record_row(r, cm) for r, cm in self.per_record.items()]
        out.append(record_row("Total", self.pooled))
        return out

    def summary(self) -> dict[str, Metrics]:
        """Pooled one-vs-rest metrics for SVEB and VEB."""
        pooled = self.pooled
        return {"SVEB": metrics(pooled.binary(S_IDX)), "VEB": metrics(pooled.binary(V_IDX))}

    def to_text(self) -> str:
        hdr = f"{'Record':<8}{'N':>7}{'SVEB':>7}{'VEB':>7}  {'N Sen':>6}{'N Ppr':>6}  {'S Sen':>6}{'S Ppr':>6}  {'V Sen':>6}{'V Ppr':>6}  {'Acc':>6}"
        lines = [hdr]
        for r in self.rows():
            lines.append(
                f"{r['record']:<8}{r['n_N']:>7}{r['n_SVEB']:>7}{r['n_VEB']:>7}  "
                f"{fmt_pct(r['N_sen']):>6}{fmt_pct(r['N_ppr']):>6}  {fmt_pct(r['SVEB_sen']):>6}{fmt_pct(r['SVEB_ppr']):>6}  "
                f"{fmt_pct(r['VEB_sen']):>6}{fmt_pct(r['VEB_ppr']):>6}  {fmt_pct(r['acc']):>6}"
            )
        lines.append("")
        for name, m in self.summary().items():
            lines.append(
                f"{name}: Acc {fmt_pct(m.acc, 1)}  Sen {fmt_pct(m.sen, 1)}  Spe {fmt_pct(m.spe, 1)}  "
                f"Ppr {fmt_pct(m.ppr, 1)}  F1 {fmt_pct(m.f1, 1)}"
            )
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            w.writeheader()
            for r in self.rows():
                w.writerow({k: ("-" if r[k] is None else r[k]) for k in REPORT_COLUMNS})


def evaluate_ds2(classify_fn, records: dict) -> Ds2Report:
    """``classify_fn(record_id, data) -> predicted labels``; ``records`` maps id -> CouplingSet."""
    per = {}
    for rid, data in records.items():
        per[rid] = confusion(data.labels, classify_fn(rid, data))
    return Ds2Report(per)


def aggregate_runs(values) -> tuple[float, float]:
    """Mean and sample standard deviation over repeated runs (absent values skipped)."""
    xs = np.array([v for v in values if v is not None], dtype=np.float64)
    if xs.size == 0:
        return float("nan"), float("nan")
    return float(xs.mean()), float(xs.std(ddof=1)) if xs.size > 1 else 0.0
