"""Pipeline stages with on-disk artifacts.

Every stage writes ``<out>/<stage>/meta.json`` holding a hash of the config
keys it depends on, chained with its upstream stages' hashes. Before running,
a stage re-derives the hashes of its upstream chain from the current config
and aborts on any difference.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datasets, gan
from .beatgrid import plan_segmentation, record_coupling_set
from .config import PipelineConfig
from .datasets import SplitSpec, load_set, save_set
from .errors import ConfigError, MissingArtifact, StaleArtifact
from .evalkit import Ds2Report, confusion, pca_export
from .normpool import estimate_normals
from .synth import synth_cohort
from .tensornet import container
from .wfdb import AamiClass, read_record, write_record

log = logging.getLogger(__name__)

DATA_DIR_ENV = "ACEGAN_DATA_DIR"


def _section(cfg: PipelineConfig, name: str) -> list[str]:
    return [k for k in cfg.items() if k.startswith(name + ".")]


@dataclass(frozen=True)
class Stage:
    name: str
    upstream: tuple[str, ...]

    def keys(self, cfg: PipelineConfig) -> list[str]:
        return {
            "ingest": [],
            "segment": ["channel_index", "M"],
            "normals": _section(cfg, "estimator"),
            "select_s": ["seed"] + _section(cfg, "selection"),
            "pool": [],
            "gan": ["seed"] + _section(cfg, "gan"),
            "finetune": ["seed", "eval_records"] + _section(cfg, "finetune") + _section(cfg, "finetune_set"),
            "classify": [],
            "evaluate": [],
        }[self.name]


STAGES = {s.name: s for s in (
    Stage("ingest", ()),
    Stage("segment", ("ingest",)),
    Stage("normals", ("segment",)),
    Stage("select_s", ("segment",)),
    Stage("pool", ("select_s",)),
    Stage("gan", ("pool",)),
    Stage("finetune", ("gan", "normals")),
    Stage("classify", ("finetune",)),
    Stage("evaluate", ("classify",)),
)}


class Workspace:
    def __init__(self, cfg: PipelineConfig, out: str | Path | None = None):
        self.cfg = cfg
        self.out = Path(out if out is not None else cfg.output_dir)
        self.split = SplitSpec()

    def dir(self, stage: str) -> Path:
        return self.out / stage

    def _meta_path(self, stage: str) -> Path:
        return self.dir(stage) / "meta.json"

    def read_meta(self, stage: str) -> dict:
        path = self._meta_path(stage)
        if not path.exists():
            raise MissingArtifact(f"stage '{stage}' has not been run (no {path})")
        return json.loads(path.read_text())

    def verified_hash(self, stage: str) -> str:
        """Recorded hash of ``stage`` after checking its whole chain against the config."""
        meta = self.read_meta(stage)
        ups = [self.verified_hash(u) for u in STAGES[stage].upstream]
        expected = self.cfg.stage_hash(STAGES[stage].keys(self.cfg), ups, meta.get("fingerprint"))
        if meta["config_hash"] != expected:
            raise StaleArtifact(f"stage '{stage}' was produced under a different configuration; re-run it")
        return meta["config_hash"]

    def begin(self, stage: str, fingerprint: str | None = None) -> dict:
        ups = [self.verified_hash(u) for u in STAGES[stage].upstream]
        d = self.dir(stage)
        d.mkdir(parents=True, exist_ok=True)
        meta_path = self._meta_path(stage)
        if meta_path.exists():
            meta_path.unlink()  # an interrupted run must not look complete
        return {"stage": stage, "upstream": ups,
                "config_hash": self.cfg.stage_hash(STAGES[stage].keys(self.cfg), ups, fingerprint),
                "fingerprint": fingerprint}

    def finish(self, meta: dict, **extra) -> None:
        meta = meta | extra
        self._meta_path(meta["stage"]).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    # ----------------------------------------------------------- data access

    def data_dir(self) -> Path:
        meta = self.read_meta("ingest")
        return Path(meta["data_dir"])

    def record_ids(self) -> list[str]:
        return list(self.read_meta("ingest")["records"])

    def ds1_ids(self) -> list[str]:
        return [r for r in self.record_ids() if self.split.split_of(r) == "DS1"]

    def eval_ids(self) -> list[str]:
        ds2 = [r for r in self.record_ids() if self.split.split_of(r) == "DS2"]
        if self.cfg.eval_records:
            missing = sorted(set(self.cfg.eval_records) - set(ds2))
            if missing:
                raise ConfigError(f"eval_records not among ingested DS2 records: {missing}")
            return [r for r in ds2 if r in self.cfg.eval_records]
        return ds2

    def record_set(self, rid: str):
        return load_set(self.dir("segment") / rid)


def _seed(cfg: PipelineConfig, *key: int) -> int:
    return int(np.random.SeedSequence(cfg.seed, spawn_key=key).generate_state(1)[0])


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        raise MissingArtifact(f"missing artifact {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(x) -> str:
    return "-" if x is None else repr(float(x))


# ------------------------------------------------------------------- stages


def run_synth(cfg: PipelineConfig, out: Path) -> Path:
    """Write the synthetic cohort as WFDB files plus a ground-truth table."""
    cohort = synth_cohort(cfg.synth, seed=cfg.seed)
    rec_dir = out / "synth" / "records"
    rec_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for rid, rec in cohort.records.items():
        write_record(rec, rec_dir)
        for i, (b, sub) in enumerate(zip(rec.beats(), cohort.subtypes[rid])):
            rows.append((rid, i, b.beat_class.name, int(sub)))
    _write_csv(out / "synth" / "truth.csv", ("record_id", "beat_index", "class", "subtype"), rows)
    log.info("synthesised %d records into %s", len(cohort.records), rec_dir)
    return rec_dir


def resolve_data_dir(ws: Workspace, explicit: str | None = None) -> Path:
    for candidate in (explicit, ws.cfg.data_dir, os.environ.get(DATA_DIR_ENV)):
        if candidate:
            return Path(candidate)
    synth_dir = ws.out / "synth" / "records"
    if synth_dir.exists():
        return synth_dir
    raise ConfigError(f"no data directory: pass --data-dir, set data_dir in the config or {DATA_DIR_ENV}")


def run_ingest(ws: Workspace, data_dir: str | Path | None = None) -> list[str]:
    ddir = resolve_data_dir(ws, str(data_dir) if data_dir else None).resolve()
    wanted = list(ws.split.ds1) + list(ws.split.ds2)
    present = [r for r in wanted if (ddir / f"{r}.hea").exists()]
    if not present:
        raise MissingArtifact(f"no DS1/DS2 records found in {ddir}")
    digest = hashlib.sha256()
    rows = []
    for rid in present:
        rec = read_record(ddir, rid)
        for suffix in ("hea", "atr"):
            digest.update((ddir / f"{rid}.{suffix}").read_bytes())
        digest.update((ddir / rec.header.signals[0].file_name).read_bytes())
        counts = np.bincount([int(b.beat_class) for b in rec.beats()], minlength=5)
        rows.append((rid, ws.split.split_of(rid), rec.header.num_samples, rec.fs, *map(int, counts)))
    meta = ws.begin("ingest", fingerprint=digest.hexdigest()[:16])
    _write_csv(ws.dir("ingest") / "records.csv", ("record_id", "split", "num_samples", "fs", "N", "S", "V", "F", "Q"), rows)
    ws.finish(meta, data_dir=str(ddir), records=present)
    log.info("ingested %d records from %s", len(present), ddir)
    return present


def run_segment(ws: Workspace) -> None:
    meta = ws.begin("segment")
    ddir = ws.data_dir()
    rows = []
    for rid in ws.record_ids():
        rec = read_record(ddir, rid)
        plan = plan_segmentation(rec)
        data = record_coupling_set(rec, ws.cfg.channel_index, ws.cfg.M)
        save_set(data, ws.dir("segment") / rid, ws.split)
        rows.append((rid, plan.L, len(data)))
    _write_csv(ws.dir("segment") / "segments.csv", ("record_id", "L", "n_beats"), rows)
    ws.finish(meta)


def run_normals(ws: Workspace) -> None:
    meta = ws.begin("normals")
    ddir = ws.data_dir()
    purity_rows = []
    for rid in ws.eval_ids():
        rec = read_record(ddir, rid)
        plan = plan_segmentation(rec)
        pool = estimate_normals(rec.physical(ws.cfg.channel_index), plan.beat_centers, ws.cfg.estimator,
                                L=plan.L, subject_id=rid)
        _write_csv(ws.dir("normals") / f"{rid}.csv", ("beat_index", "admitted_epoch"),
                   zip(pool.beat_indices, pool.admitted_epoch))
        # annotations double as ground truth for the purity report only
        truth = plan.labels[np.asarray(pool.beat_indices, dtype=np.int64)]
        n_true = int(np.sum(truth == AamiClass.N))
        purity_rows.append((rid, len(pool), n_true, _fmt(n_true / len(pool) if len(pool) else None)))
    _write_csv(ws.dir("normals") / "purity.csv", ("record_id", "pool_size", "true_N", "purity"), purity_rows)
    ws.finish(meta)


def run_select_s(ws: Workspace) -> datasets.SelectionResult:
    meta = ws.begin("select_s")
    ds1 = {r: ws.record_set(r) for r in ws.ds1_ids()}
    res = datasets.select_representative_s(ds1, seed=_seed(ws.cfg, 1), config=ws.cfg.selection, split=ws.split)
    chosen = {(str(r), int(b)) for r, b in zip(res.selected.record_ids, res.selected.beat_indices)}
    _write_csv(ws.dir("select_s") / "scores.csv", ("record_id", "beat_index", "draws", "mean_credit", "selected"),
               [(r, b, int(d), _fmt(None if np.isnan(c) else c), int((r, b) in chosen))
                for (r, b), d, c in zip(res.s_keys, res.draws, res.mean_credit)])
    _write_csv(ws.dir("select_s") / "repetitions.csv", ("repetition", "n_accuracy"),
               [(i, repr(a)) for i, a in enumerate(res.repetition_accuracy)])
    save_set(res.selected, ws.dir("select_s") / "selected", ws.split)
    ws.finish(meta)
    return res


def run_pool(ws: Workspace):
    meta = ws.begin("pool")
    ds1 = {r: ws.record_set(r) for r in ws.ds1_ids()}
    selected = load_set(ws.dir("select_s") / "selected")
    pool = datasets.build_common_pool(ds1, selected, ws.split)
    save_set(pool, ws.dir("pool") / "pool", ws.split)
    ws.finish(meta, counts=pool.counts())
    return pool


def run_gan(ws: Workspace, progress=None) -> gan.GanResult:
    meta = ws.begin("gan")
    pool = load_set(ws.dir("pool") / "pool")
    result = gan.train_gan(pool, ws.cfg.gan, checkpoint_dir=ws.dir("gan"), progress=progress)
    ws.finish(meta)
    return result


def run_generate(ws: Workspace, label: str, count: int, seed: int | None = None) -> Path:
    ws.verified_hash("gan")
    G = gan.load_generator(ws.dir("gan") / "generator.tnet")
    c = gan.CLASS_NAMES.index(label)
    data = gan.generate(G, c, count, seed=_seed(ws.cfg, 4, c) if seed is None else seed)
    d = ws.out / "generate"
    d.mkdir(parents=True, exist_ok=True)
    stem = d / f"{label}_{count}"
    save_set(data, stem, ws.split)
    return stem


def run_finetune(ws: Workspace) -> dict[str, list[float]]:
    meta = ws.begin("finetune")
    pool = load_set(ws.dir("pool") / "pool")
    G = gan.load_generator(ws.dir("gan") / "generator.tnet")
    D = gan.load_discriminator(ws.dir("gan") / "discriminator.tnet")
    histories, rows = {}, []
    for k, rid in enumerate(ws.eval_ids()):
        data = ws.record_set(rid)
        est = [int(r["beat_index"]) for r in _read_csv(ws.dir("normals") / f"{rid}.csv")]
        normal_set = datasets.normal_set_from_pool(data, est)
        ft_set = datasets.assemble_finetune(pool, G, normal_set, seed=_seed(ws.cfg, 2, k), config=ws.cfg.finetune_set)
        save_set(ft_set, ws.dir("finetune") / f"{rid}_set", ws.split)
        ft_cfg = gan.FinetuneConfig(**{**gan.config_dict(ws.cfg.finetune), "seed": _seed(ws.cfg, 3, k)})
        res = gan.finetune(D, ft_set, ft_cfg)
        gan.save_discriminator(ws.dir("finetune") / f"{rid}.tnet", res.classifier)
        histories[rid] = res.history
        rows.append((rid, len(ft_set), len(res.history), repr(res.history[-1])))
        log.info("fine-tuned %s: %d samples, %d epochs, accuracy %.4f", rid, len(ft_set), len(res.history), res.history[-1])
    _write_csv(ws.dir("finetune") / "finetune.csv", ("record_id", "n_samples", "epochs", "final_accuracy"), rows)
    ws.finish(meta)
    return histories


def run_classify(ws: Workspace) -> None:
    meta = ws.begin("classify")
    for rid in ws.eval_ids():
        clf = gan.load_discriminator(ws.dir("finetune") / f"{rid}.tnet")
        data = ws.record_set(rid)
        pred, feats = gan.classify(clf, data)
        _write_csv(ws.dir("classify") / f"{rid}.csv", ("beat_index", "truth", "prediction"),
                   zip(data.beat_indices, data.labels, pred))
        container.save(ws.dir("classify") / f"{rid}_features.tnet", {"features": feats})
    ws.finish(meta)


def load_predictions(ws: Workspace, rid: str) -> tuple[np.ndarray, np.ndarray]:
    rows = _read_csv(ws.dir("classify") / f"{rid}.csv")
    return (np.array([int(r["truth"]) for r in rows], dtype=np.int64),
            np.array([int(r["prediction"]) for r in rows], dtype=np.int64))


def run_evaluate(ws: Workspace) -> Ds2Report:
    meta = ws.begin("evaluate")
    d = ws.dir("evaluate")
    per, feats, labels = {}, [], []
    for rid in ws.eval_ids():
        truth, pred = load_predictions(ws, rid)
        per[rid] = confusion(truth, pred)
        feats.append(container.load(ws.dir("classify") / f"{rid}_features.tnet")["features"])
        labels.extend(AamiClass(int(t)).name for t in truth)
    report = Ds2Report(per)
    (d / "report.txt").write_text(report.to_text() + "\n")
    report.write_csv(d / "report.csv")
    pooled = report.pooled
    (d / "confusion.txt").write_text(pooled.to_text() + "\n")
    np.savetxt(d / "confusion.csv", pooled.counts, fmt="%d", delimiter=",")
    all_feats = np.concatenate(feats) if feats else np.zeros((0, gan.FEATURE_DIM))
    if len(all_feats) >= 3:
        pca = pca_export(all_feats, labels, d / "pca.csv")
        explained = [float(x) for x in pca.explained_variance[:2]]
    else:
        explained = []
    summary = {"accuracy": pooled.accuracy(), "records": list(per),
               "pca_explained_variance": explained}
    for name, m in report.summary().items():
        summary[name] = {k: getattr(m, k) for k in ("acc", "sen", "spe", "ppr", "f1")}
    (d / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    ws.finish(meta)
    return report


PIPELINE = ("ingest", "segment", "normals", "select_s", "pool", "gan", "finetune", "classify", "evaluate")


def run_all(ws: Workspace, data_dir: str | None = None, synthetic: bool = False) -> Ds2Report:
    if synthetic:
        data_dir = str(run_synth(ws.cfg, ws.out))
    run_ingest(ws, data_dir)
    run_segment(ws)
    run_normals(ws)
    run_select_s(ws)
    run_pool(ws)
    run_gan(ws)
    run_finetune(ws)
    run_classify(ws)
    return run_evaluate(ws)
