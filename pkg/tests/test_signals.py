import math

import numpy as np
import pytest

from vcsflow.exceptions import (
    EmptyInput,
    MissingChannelStats,
    MissingColumn,
    NonFiniteValue,
    NonUniformSampling,
    RatioSumInvalid,
    TooFewSamples,
)
from vcsflow.signals import (
    ChannelStats,
    compute_stats,
    load_recording,
    save_recording,
    split_dataset,
    standardize,
    standardize_array,
)

from conftest import make_recording

HEADER = "t,C,omega,P_in,T_in,P_out,T_out,mdot\n"


def write_csv(path, times, header=HEADER):
    cols = header.strip().split(",")
    with open(path, "w") as fh:
        fh.write(header)
        for i, t in enumerate(times):
            fh.write(",".join([repr(t)] + [str(float(i + j)) for j in range(len(cols) - 1)]) + "\n")
    return path


def test_load_infers_rate(tmp_path):
    rec = load_recording(write_csv(tmp_path / "r.csv", [0.0, 0.1, 0.2]))
    assert rec.sample_rate_hz == 10.0
    assert rec.n_samples == 3
    assert rec.has_flow


def test_load_rejects_gap(tmp_path):
    with pytest.raises(NonUniformSampling):
        load_recording(write_csv(tmp_path / "r.csv", [0.0, 0.1, 0.3]))


def test_load_missing_column_names_it(tmp_path):
    header = "t,C,omega,P_in,T_in,T_out,mdot\n"
    with pytest.raises(MissingColumn) as err:
        load_recording(write_csv(tmp_path / "r.csv", [0.0, 0.1], header))
    assert err.value.column == "P_out"


def test_load_rejects_non_finite(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text(HEADER + "0,1,1,1,1,1,1,1\n0.1,1,nan,1,1,1,1,1\n")
    with pytest.raises(NonFiniteValue) as err:
        load_recording(path)
    assert err.value.column == "omega" and err.value.row == 1


def test_load_without_flow_and_comments(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("# a comment\nt,C,omega,P_in,T_in,P_out,T_out\n0,1,2,3,4,5,6\n0.5,1,2,3,4,5,6\n")
    rec = load_recording(path)
    assert not rec.has_flow and rec.sample_rate_hz == 2.0


def test_round_trip(tmp_path):
    rec = make_recording(n=200, fs=10.0)
    save_recording(rec, tmp_path / "r.csv", comment="provenance line")
    back = load_recording(tmp_path / "r.csv", id=rec.id)
    assert back.sample_rate_hz == rec.sample_rate_hz
    for name in rec.channels:
        np.testing.assert_allclose(back.channels[name], rec.channels[name], rtol=0, atol=1e-12)


def test_stats_direct_formula():
    rec = make_recording(n=3).replace_channels(C=[1.0, 2.0, 3.0])
    stats = compute_stats([rec], ["C"])
    assert stats.mean["C"] == pytest.approx(2.0)
    assert stats.std["C"] == pytest.approx(math.sqrt(2 / 3))


def test_stats_constant_and_pooled():
    a = make_recording(n=2).replace_channels(C=[5.0, 5.0])
    stats = compute_stats([a], ["C"])
    assert stats.mean["C"] == 5.0 and stats.std["C"] == 0.0
    r1 = make_recording(n=1).replace_channels(C=[1.0])
    r3 = make_recording(n=1).replace_channels(C=[3.0])
    pooled = compute_stats([r1, r3], ["C"])
    assert pooled.mean["C"] == pytest.approx(2.0) and pooled.std["C"] == pytest.approx(1.0)


def test_stats_empty():
    with pytest.raises(EmptyInput):
        compute_stats([])


def test_standardize_examples():
    assert np.allclose(standardize_array([2.0, 4.0], 3.0, 1.0), [-1.0, 1.0])
    assert np.all(standardize_array([7.0, 7.0], 7.0, 0.0) == 0.0)


def test_standardize_moments_and_idempotence(recording):
    stats = compute_stats([recording])
    z = standardize(recording, stats)
    for x in z.channels.values():
        assert abs(x.mean()) < 1e-9 and abs(x.std() - 1) < 1e-9
    zz = standardize(z, compute_stats([z]))
    for name in z.channels:
        np.testing.assert_allclose(zz.channels[name], z.channels[name], atol=1e-12)


def test_standardize_missing_stats(recording):
    stats = ChannelStats({"C": 0.0}, {"C": 1.0})
    with pytest.raises(MissingChannelStats):
        standardize(recording, stats)


def test_stats_file_round_trip(tmp_path, recording):
    stats = compute_stats([recording])
    stats.save(tmp_path / "s.json", {"seed": 1})
    assert ChannelStats.load(tmp_path / "s.json") == stats


def test_split_single_recording_contiguous():
    rec = make_recording(n=1000)
    split = split_dataset([rec])
    sizes = [p[0].n_samples for p in (split.train, split.validation, split.test)]
    assert sizes == [640, 180, 180]
    assert split.offsets == {"train": 0, "validation": 640, "test": 820}
    np.testing.assert_array_equal(split.test[0].flow, rec.flow[820:])


def test_split_all_train():
    split = split_dataset([make_recording(n=100)], (1.0, 0.0, 0.0))
    assert split.train[0].n_samples == 100 and not split.validation and not split.test


def test_split_many_recordings_deterministic_and_exhaustive():
    recs = [make_recording(n=100, seed=i, id=f"r{i}") for i in range(10)]
    a = split_dataset(recs, seed=3)
    b = split_dataset(recs, seed=3)
    ids = lambda s: [[r.id for r in p] for p in (s.train, s.validation, s.test)]
    assert ids(a) == ids(b)
    flat = sum(ids(a), [])
    assert sorted(flat) == sorted(r.id for r in recs)


def test_split_errors():
    with pytest.raises(RatioSumInvalid):
        split_dataset([make_recording(n=200)], (0.5, 0.2, 0.2))
    with pytest.raises(TooFewSamples):
        split_dataset([make_recording(n=50)])
