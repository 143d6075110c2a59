import numpy as np
import pytest

from acegan import wfdb
from acegan.synth import SUBTYPE_NEAR_NORMAL, SynthConfig, synth_cohort
from acegan.wfdb import AamiClass

CFG = SynthConfig(record_ids=("101", "106", "124", "p1"), beats_per_record=120, no_s_records=("124",))


@pytest.fixture(scope="module")
def cohort():
    return synth_cohort(CFG, seed=11)


def test_same_seed_same_bytes(cohort):
    again = synth_cohort(CFG, seed=11)
    for rid, rec in cohort.records.items():
        assert wfdb.encode_record(rec) == wfdb.encode_record(again.records[rid])
    other = synth_cohort(CFG, seed=12)
    assert wfdb.encode_record(other.records["101"]) != wfdb.encode_record(cohort.records["101"])


def test_class_counts(cohort):
    for rid in CFG.record_ids:
        labels = cohort.labels(rid)
        expected = CFG.class_counts(rid)
        assert labels.size == CFG.beats_per_record
        for c, n in expected.items():
            assert np.sum(labels == c) == n, (rid, c)
    assert not np.any(cohort.labels("124") == AamiClass.S)
    assert np.any(cohort.labels("101") == AamiClass.S)


def test_records_survive_the_file_format(cohort, tmp_path):
    rec = cohort.records["106"]
    wfdb.write_record(rec, tmp_path)
    back = wfdb.read_record(tmp_path, "106")
    assert back == rec
    assert [int(b.beat_class) for b in back.beats()] == cohort.labels("106").tolist()


def test_edges_are_normal_and_samples_in_range(cohort):
    for rid, rec in cohort.records.items():
        labels = cohort.labels(rid)
        assert np.all(labels[:2] == AamiClass.N) and np.all(labels[-2:] == AamiClass.N)
        assert rec.samples.min() >= -2048 and rec.samples.max() <= 2047
        samples = [b.sample for b in rec.beats()]
        assert np.all(np.diff(samples) > 0) and samples[-1] < rec.samples.shape[1]


def test_near_normal_subtype():
    cfg = SynthConfig(record_ids=("101", "103"), beats_per_record=200, near_normal_s_fraction=0.5,
                      near_normal_s_records=("103",))
    c = synth_cohort(cfg, seed=0)
    s101 = c.labels("101") == AamiClass.S
    assert np.sum(c.subtypes["101"][s101] == SUBTYPE_NEAR_NORMAL) == round(0.5 * s101.sum())
    s103 = c.labels("103") == AamiClass.S
    assert np.all(c.subtypes["103"][s103] == SUBTYPE_NEAR_NORMAL)
    assert np.all(c.subtypes["101"][~s101] == 0)


def test_ectopic_morphology_differs_from_normal(cohort):
    rec = cohort.records["101"]
    x = rec.physical(0)
    beats = rec.beats()
    r_amp = {c: np.mean([x[b.sample] for b in beats if b.beat_class == c]) for c in (AamiClass.N, AamiClass.V)}
    assert r_amp[AamiClass.N] > 0.7 and r_amp[AamiClass.V] < -0.7
