"""DS1/DS2 split, common pool, representative S-beat selection and fine-tune sets."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .beatgrid import M_DEFAULT, CouplingSet
from .errors import InsufficientSBearingRecords, SplitViolation
from .wfdb import AamiClass

log = logging.getLogger(__name__)

DS1_RECORDS = ("101", "106", "108", "109", "112", "114", "115", "116", "118", "119", "122", "124",
               "201", "203", "205", "207", "208", "209", "215", "220", "223", "230")
DS2_RECORDS = ("100", "103", "105", "111", "113", "117", "121", "123", "200", "202", "210", "212",
               "213", "214", "219", "221", "222", "228", "231", "232", "233", "234")
EXCLUDED_RECORDS = ("102", "104", "107", "217")

TRAIN_CLASSES = (AamiClass.N, AamiClass.S, AamiClass.V, AamiClass.F)


@dataclass(frozen=True)
class SplitSpec:
    ds1: tuple[str, ...] = DS1_RECORDS
    ds2: tuple[str, ...] = DS2_RECORDS
    excluded: tuple[str, ...] = EXCLUDED_RECORDS

    def __post_init__(self):
        if set(self.ds1) & set(self.ds2):
            raise SplitViolation(f"records in both DS1 and DS2: {sorted(set(self.ds1) & set(self.ds2))}")
        if set(self.excluded) & (set(self.ds1) | set(self.ds2)):
            raise SplitViolation("excluded records may not appear in DS1 or DS2")

    def split_of(self, record_id: str) -> str:
        if record_id in self.ds1:
            return "DS1"
        if record_id in self.ds2:
            return "DS2"
        if record_id in self.excluded:
            return "excluded"
        return "other"


def _check_ds1_only(sets: dict[str, CouplingSet], split: SplitSpec, what: str) -> None:
    bad = sorted(r for r in sets if split.split_of(r) != "DS1")
    if bad:
        raise SplitViolation(f"{what} may only use DS1 records, got {bad}")


# --------------------------------------------------------------- common pool


def build_common_pool(ds1_sets: dict[str, CouplingSet], selected_s: CouplingSet,
                      split: SplitSpec | None = None) -> CouplingSet:
    """All DS1 N, V and F beats plus the selected S beats; Q beats are left out."""
    split = split or SplitSpec()
    _check_ds1_only(ds1_sets, split, "the common pool")
    bad = sorted({str(r) for r in selected_s.record_ids} - set(split.ds1))
    if bad:
        raise SplitViolation(f"selected S beats come from non-DS1 records {bad}")
    parts = []
    for rid in sorted(ds1_sets):
        data = ds1_sets[rid]
        keep = np.flatnonzero(np.isin(data.labels, [AamiClass.N, AamiClass.V, AamiClass.F]))
        parts.append(data.subset(keep).with_stratum("common"))
    parts.append(selected_s.with_stratum("selected_S"))
    pool = CouplingSet.concat(parts, M=selected_s.M if len(selected_s) else _m_of(ds1_sets))
    for c in TRAIN_CLASSES:
        if not np.any(pool.labels == c):
            warnings.warn(f"common pool has no {c.name} beats", stacklevel=2)
    return pool


def _m_of(sets: dict[str, CouplingSet]) -> int:
    for s in sets.values():
        return s.M
    return M_DEFAULT


# -------------------------------------------------- representative S selection


@dataclass
class SelectionConfig:
    repetitions: int = 200
    n_train_per_class: int = 75
    n_test_normal: int = 100
    n_select: int = 400
    n_train_records: int = 16
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999


@dataclass
class SelectionResult:
    selected: CouplingSet
    s_keys: list[tuple[str, int]]  # (record_id, beat_index) for every DS1 S beat
    mean_credit: np.ndarray  # NaN where a beat was never drawn
    draws: np.ndarray
    repetition_accuracy: list[float] = field(default_factory=list)


def _train_binary(train_x: CouplingSet, targets: np.ndarray, seed: int, config: SelectionConfig):
    from .gan import Discriminator, head_loss
    from .tensornet import Adam

    rng = np.random.default_rng(seed)
    clf = Discriminator(int(rng.integers(2**31)), M=train_x.M, n_classes=2, validity=False)
    opt = Adam(clf.params(), config.lr, config.beta1, config.beta2)
    for _ in range(config.epochs):
        order = rng.permutation(len(train_x))
        for s in range(0, len(order), config.batch_size):
            idx = order[s : s + config.batch_size]
            p, _, _ = clf.forward(train_x.matrices(idx), training=True)
            _, dp, _ = head_loss(p, None, targets[idx], None)
            clf.backward(dp, None, input_grad=False)
            opt.step()
    return clf


def select_representative_s(ds1_sets: dict[str, CouplingSet], seed: int = 0,
                            config: SelectionConfig | None = None, split: SplitSpec | None = None) -> SelectionResult:
    """Rank DS1 S beats by how well N beats of unseen records are recognised
    when that S beat is part of a binary N-vs-S training draw.

    Each repetition splits the S-bearing records into ``n_train_records``
    training records and uses the remaining DS1 records for testing. Only the
    N accuracy on the test records is credited, so test-record S labels are
    never consulted.
    """
    config = config or SelectionConfig()
    split = split or SplitSpec()
    _check_ds1_only(ds1_sets, split, "S-beat selection")
    rids = sorted(ds1_sets)
    s_bearing = [r for r in rids if np.any(ds1_sets[r].labels == AamiClass.S)]
    if len(s_bearing) < config.n_train_records:
        raise InsufficientSBearingRecords(
            f"{len(s_bearing)} DS1 records contain S beats, need {config.n_train_records}")

    s_keys = [(r, int(b)) for r in s_bearing for b in ds1_sets[r].beat_indices[ds1_sets[r].labels == AamiClass.S]]
    key_pos = {k: i for i, k in enumerate(s_keys)}
    credit = np.zeros(len(s_keys))
    draws = np.zeros(len(s_keys), dtype=np.int64)
    rep_acc = []

    rep_seeds = np.random.SeedSequence(seed).spawn(config.repetitions)
    for rep, ss in enumerate(rep_seeds):
        rng = np.random.default_rng(ss)
        if len(s_bearing) > config.n_train_records:
            train_recs = sorted(rng.choice(s_bearing, size=config.n_train_records, replace=False))
        else:
            train_recs = list(s_bearing)
        test_recs = [r for r in rids if r not in train_recs]
        train_all = CouplingSet.concat([ds1_sets[r] for r in train_recs])
        n_idx = train_all.indices_of(AamiClass.N)
        s_idx = train_all.indices_of(AamiClass.S)
        pick_n = rng.choice(n_idx, size=min(config.n_train_per_class, n_idx.size), replace=False)
        pick_s = rng.choice(s_idx, size=min(config.n_train_per_class, s_idx.size), replace=False)
        train = train_all.subset(np.concatenate([pick_n, pick_s]))
        targets = np.concatenate([np.zeros(pick_n.size, np.int64), np.ones(pick_s.size, np.int64)])

        test_pool = CouplingSet.concat([ds1_sets[r].subset(ds1_sets[r].indices_of(AamiClass.N)) for r in test_recs])
        if len(test_pool) == 0:
            raise InsufficientSBearingRecords("no N beats in the held-out DS1 records")
        test = test_pool.subset(rng.choice(len(test_pool), size=min(config.n_test_normal, len(test_pool)), replace=False))

        clf = _train_binary(train, targets, int(rng.integers(2**31)), config)
        probs, _ = clf.predict(test.matrices())
        acc = float(np.mean(np.argmax(probs, axis=1) == 0))
        rep_acc.append(acc)
        for i in pick_s:
            k = key_pos[(str(train_all.record_ids[i]), int(train_all.beat_indices[i]))]
            credit[k] += acc
            draws[k] += 1
        log.debug("selection repetition %d: N accuracy %.3f", rep, acc)

    with np.errstate(invalid="ignore", divide="ignore"):
        mean_credit = np.where(draws > 0, credit / np.maximum(draws, 1), np.nan)
    # never-drawn beats sit at a neutral score: the mean over all repetitions
    neutral = float(np.mean(rep_acc)) if rep_acc else 0.0
    score = np.where(draws > 0, mean_credit, neutral)
    order = sorted(range(len(s_keys)), key=lambda i: (-score[i], s_keys[i]))
    chosen = order[: config.n_select]

    parts = []
    for i in chosen:
        rid, beat = s_keys[i]
        data = ds1_sets[rid]
        parts.append(data.subset(np.flatnonzero(data.beat_indices == beat)))
    selected = CouplingSet.concat(parts, M=_m_of(ds1_sets)).with_stratum("selected_S")
    return SelectionResult(selected, s_keys, mean_credit, draws, rep_acc)


# --------------------------------------------------------------- fine-tune set


@dataclass
class FinetuneSetConfig:
    real_per_class: int = 400
    generated_per_class: int = 400
    max_estimated: int = 400


def assemble_finetune(common_pool: CouplingSet, G, normal_set: CouplingSet, seed: int = 0,
                      config: FinetuneSetConfig | None = None) -> CouplingSet:
    """Part i: selected S plus random V and F from the pool; part ii: generated
    N, S, V, F; part iii: estimated patient N beats. All are training targets
    for the real class, so provenance is kept only for bookkeeping."""
    from .gan import GEN_CLASSES, generate

    config = config or FinetuneSetConfig()
    rng = np.random.default_rng(seed)
    parts = []
    for c in (AamiClass.S, AamiClass.V, AamiClass.F):
        ix = common_pool.indices_of(c)
        if ix.size > config.real_per_class:
            ix = np.sort(rng.choice(ix, size=config.real_per_class, replace=False))
        parts.append(common_pool.subset(ix).with_stratum("part_i"))
    gen_seeds = rng.integers(2**31, size=GEN_CLASSES)
    if config.generated_per_class:
        for c in range(GEN_CLASSES):
            parts.append(generate(G, c, config.generated_per_class, int(gen_seeds[c])).with_stratum("part_ii"))
    est = normal_set.subset(np.arange(min(len(normal_set), config.max_estimated)))
    est.labels[:] = AamiClass.N
    est.provenance[:] = "estimated"
    parts.append(est.with_stratum("part_iii"))
    return CouplingSet.concat(parts, M=common_pool.M)


def normal_set_from_pool(record_set: CouplingSet, beat_indices) -> CouplingSet:
    """Coupling matrices of the estimated normal beats, labelled N regardless of truth."""
    pos = {int(b): i for i, b in enumerate(record_set.beat_indices)}
    out = record_set.subset([pos[int(b)] for b in beat_indices])
    out.labels[:] = AamiClass.N
    out.provenance[:] = "estimated"
    return out


# ------------------------------------------------------------------- manifests


MANIFEST_FIELDS = ("record_id", "beat_index", "class", "split", "stratum", "provenance")
_LABEL_NAMES = {int(c): c.name for c in AamiClass} | {5: "generated"}


def write_manifest(data: CouplingSet, path, split: SplitSpec | None = None) -> None:
    split = split or SplitSpec()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_FIELDS)
        for i in range(len(data)):
            rid = str(data.record_ids[i])
            prov = str(data.provenance[i])
            w.writerow([rid, int(data.beat_indices[i]), _LABEL_NAMES[int(data.labels[i])],
                        "-" if prov == "generated" else split.split_of(rid), data.stratum[i], prov])


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


_NAME_TO_LABEL = {v: k for k, v in _LABEL_NAMES.items()}


def save_set(data: CouplingSet, stem, split: SplitSpec | None = None) -> None:
    """Factors to ``<stem>.tnet`` and per-sample metadata to ``<stem>.csv``."""
    from .tensornet import container

    stem = str(stem)
    container.save(stem + ".tnet", {"u": data.u, "v": data.v})
    write_manifest(data, stem + ".csv", split)


def load_set(stem) -> CouplingSet:
    from .tensornet import container

    stem = str(stem)
    arrays = container.load(stem + ".tnet")
    rows = read_manifest(stem + ".csv")
    return CouplingSet(
        arrays["u"], arrays["v"], [_NAME_TO_LABEL[r["class"]] for r in rows], [r["record_id"] for r in rows],
        [int(r["beat_index"]) for r in rows], [r["provenance"] for r in rows], [r["stratum"] for r in rows],
    )
