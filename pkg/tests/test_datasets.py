import warnings

import numpy as np
import pytest

from acegan import datasets, gan
from acegan.beatgrid import CouplingSet
from acegan.datasets import DS1_RECORDS, DS2_RECORDS, EXCLUDED_RECORDS, FinetuneSetConfig, SelectionConfig, SplitSpec
from acegan.errors import InsufficientSBearingRecords, SplitViolation
from acegan.wfdb import AamiClass

M = 55


def fake_set(rid, labels, rng, shift=0.0):
    n = len(labels)
    u = rng.normal(size=(n, M)) + shift * np.asarray(labels)[:, None]
    return CouplingSet(u, rng.normal(size=(n, M)), labels, [rid] * n, np.arange(n))


def test_split_tables():
    assert len(DS1_RECORDS) == 22 and len(DS2_RECORDS) == 22 and len(EXCLUDED_RECORDS) == 4
    assert not set(DS1_RECORDS) & set(DS2_RECORDS)
    split = SplitSpec()
    assert [split.split_of(r) for r in ("101", "100", "102", "999")] == ["DS1", "DS2", "excluded", "other"]
    with pytest.raises(SplitViolation):
        SplitSpec(ds1=("100",), ds2=("100",))
    with pytest.raises(SplitViolation):
        SplitSpec(ds1=("102",), ds2=(), excluded=("102",))


def test_common_pool_contents_and_split_guard():
    rng = np.random.default_rng(0)
    ds1 = {"101": fake_set("101", [0, 1, 2, 3, 4, 0], rng), "106": fake_set("106", [0, 2, 1], rng)}
    sel = ds1["101"].subset([1]).with_stratum("selected_S")
    pool = datasets.build_common_pool(ds1, sel)
    assert pool.counts()["Q"] == 0 and pool.counts()["S"] == 1
    assert set(pool.stratum) == {"common", "selected_S"}
    assert sorted(pool.labels.tolist()) == [0, 0, 0, 1, 2, 2, 3]
    with pytest.raises(SplitViolation):
        datasets.build_common_pool({"100": fake_set("100", [0], rng)}, sel)
    bad_sel = fake_set("100", [1], rng)
    with pytest.raises(SplitViolation):
        datasets.build_common_pool(ds1, bad_sel)


def test_common_pool_warns_on_missing_class():
    rng = np.random.default_rng(1)
    ds1 = {"101": fake_set("101", [0, 2], rng)}
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        datasets.build_common_pool(ds1, CouplingSet.empty(M))
    assert any("F" in str(x.message) for x in w) and any("S" in str(x.message) for x in w)


def _selection_cohort(rng, n_records=4):
    out = {}
    for rid in DS1_RECORDS[:n_records]:
        labels = [0] * 12 + [1] * 3
        out[rid] = fake_set(rid, labels, rng, shift=1.0)
    return out


TINY_SELECTION = SelectionConfig(repetitions=3, n_train_per_class=3, n_test_normal=5, n_select=4,
                                 n_train_records=2, epochs=1, batch_size=4)


def test_selection_bookkeeping_and_determinism():
    ds1 = _selection_cohort(np.random.default_rng(2))
    a = datasets.select_representative_s(ds1, seed=1, config=TINY_SELECTION)
    b = datasets.select_representative_s(ds1, seed=1, config=TINY_SELECTION)
    assert a.s_keys == b.s_keys and np.array_equal(a.draws, b.draws)
    assert a.repetition_accuracy == b.repetition_accuracy
    assert len(a.s_keys) == 12 and a.draws.sum() == 3 * 3
    assert len(a.selected) == 4 and set(a.selected.labels) == {AamiClass.S}
    assert set(a.selected.stratum) == {"selected_S"}
    # drawn beats score their mean repetition credit; the top pick has the best score
    scored = np.where(a.draws > 0, a.mean_credit, np.mean(a.repetition_accuracy))
    top = (str(a.selected.record_ids[0]), int(a.selected.beat_indices[0]))
    assert scored[a.s_keys.index(top)] == scored.max()
    assert np.all(np.isnan(a.mean_credit[a.draws == 0]))


def test_selection_requires_enough_s_bearing_records():
    ds1 = _selection_cohort(np.random.default_rng(3), n_records=2)
    with pytest.raises(InsufficientSBearingRecords):
        datasets.select_representative_s(ds1, config=SelectionConfig(n_train_records=3))


def test_selection_rejects_non_ds1():
    rng = np.random.default_rng(4)
    with pytest.raises(SplitViolation):
        datasets.select_representative_s({"100": fake_set("100", [0, 1], rng)}, config=TINY_SELECTION)


def test_assemble_finetune_parts():
    rng = np.random.default_rng(5)
    pool = fake_set("101", [0] * 5 + [1] * 6 + [2] * 2 + [3] * 4, rng)
    normals = datasets.normal_set_from_pool(fake_set("100", [0, 1, 0, 2], rng), [0, 1, 3])
    assert normals.labels.tolist() == [0, 0, 0] and set(normals.provenance) == {"estimated"}
    G = gan.Generator(0, M=M, noise_dim=4, hidden=4)
    cfg = FinetuneSetConfig(real_per_class=3, generated_per_class=2, max_estimated=2)
    ft = datasets.assemble_finetune(pool, G, normals, seed=1, config=cfg)
    strata = {s: int(np.sum(ft.stratum == s)) for s in ("part_i", "part_ii", "part_iii")}
    assert strata == {"part_i": 3 + 2 + 3, "part_ii": 8, "part_iii": 2}
    assert not np.any(ft.labels[ft.stratum == "part_i"] == AamiClass.N)
    ablated = datasets.assemble_finetune(pool, G, normals, seed=1,
                                         config=FinetuneSetConfig(3, 0, 2))
    assert not np.any(ablated.stratum == "part_ii")
    again = datasets.assemble_finetune(pool, G, normals, seed=1, config=cfg)
    assert np.array_equal(again.u, ft.u)


def test_save_and_load_set(tmp_path):
    rng = np.random.default_rng(6)
    cs = CouplingSet.concat([fake_set("101", [0, 1, 2], rng), gan.generate(gan.Generator(0, M=M, noise_dim=4, hidden=4), 3, 2)])
    datasets.save_set(cs, tmp_path / "x")
    back = datasets.load_set(tmp_path / "x")
    assert np.array_equal(back.u, cs.u) and back.labels.tolist() == cs.labels.tolist()
    rows = datasets.read_manifest(tmp_path / "x.csv")
    assert tuple(rows[0]) == datasets.MANIFEST_FIELDS
    assert [r["split"] for r in rows] == ["DS1", "DS1", "DS1", "-", "-"]
