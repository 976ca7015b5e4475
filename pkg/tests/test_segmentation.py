import numpy as np
import pytest

from vcsflow.dtw import Clustering
from vcsflow.exceptions import MalformedSelectionFile, MissingFlowChannel, RecordingTooShort
from vcsflow.segmentation import (
    OTHER,
    PatternInstance,
    SegmentationConfig,
    apply_manual_selection,
    canonical_templates,
    detect_static_states,
    extract_patterns,
    iou,
    label_clusters,
    load_instances,
    match_annotations,
    precision_recall,
    save_instances,
    segment,
    segment_detailed,
)
from vcsflow.signals import INPUT_CHANNELS, Recording
from vcsflow.synthgen import TRANSIENT_KINDS, GeneratorConfig, PatternKind, generate_recording

from conftest import make_recording


def constant_recording(n=4000, value=1.0):
    channels = {name: np.full(n, value) for name in INPUT_CHANNELS + ("mdot",)}
    return Recording(10.0, channels, 0.0, "const")


@pytest.fixture(scope="module")
def five_thousand_seconds():
    return generate_recording(GeneratorConfig(duration_s=5000.0, seed=3), id="s3")


def test_injected_overshoots_found(five_thousand_seconds):
    rec, ann = five_thousand_seconds
    n_true = sum(a.kind is PatternKind.Overshoot for a in ann)
    assert n_true >= 20
    tp, _, _ = match_annotations(segment(rec), ann, (PatternKind.Overshoot,))[PatternKind.Overshoot]
    assert tp >= 0.8 * n_true


def test_precision_recall_on_synthetic(five_thousand_seconds):
    rec, ann = five_thousand_seconds
    p, r = precision_recall(match_annotations(segment(rec), ann, TRANSIENT_KINDS))
    assert p >= 0.8 and r >= 0.8


def test_constant_recording_has_no_transients():
    assert segment(constant_recording()) == []


def test_deterministic(synthetic):
    rec, _ = synthetic
    assert segment(rec) == segment(rec)


def test_output_sorted_and_disjoint(five_thousand_seconds):
    inst = extract_patterns(five_thousand_seconds[0])
    for a, b in zip(inst, inst[1:]):
        assert a.end_idx <= b.start_idx
    assert {i.kind for i in segment(five_thousand_seconds[0])} <= set(TRANSIENT_KINDS)
    assert len({i.id for i in inst}) == len(inst)


def test_errors():
    with pytest.raises(MissingFlowChannel):
        segment(make_recording(n=1000, flow=False))
    with pytest.raises(RecordingTooShort):
        segment(make_recording(n=300))


def test_static_examples():
    const = constant_recording(n=1000)
    st = detect_static_states(const, 15.0, 0.03)
    assert len(st) == 1 and st[0].start_idx == 0 and st[0].end_idx == 1000
    ramp = constant_recording(n=1000).replace_channels(mdot=np.linspace(0, 10, 1000))
    assert detect_static_states(ramp, 15.0, 0.03) == []


def test_static_states_match_annotations(five_thousand_seconds):
    rec, ann = five_thousand_seconds
    tp, _, n_true = match_annotations(extract_patterns(rec), ann, (PatternKind.StaticState,))[PatternKind.StaticState]
    assert n_true > 0 and tp >= 0.8 * n_true


def test_static_exclusions():
    const = constant_recording(n=1000)
    blocker = PatternInstance(PatternKind.Overshoot, 400, 600)
    st = detect_static_states(const, 15.0, 0.03, exclude=[blocker])
    assert [(s.start_idx, s.end_idx) for s in st] == [(0, 400), (600, 1000)]


def _clustering(centers):
    return Clustering(len(centers), [np.asarray(c, dtype=float) for c in centers], np.zeros(1, int), 0.0)


def test_label_exact_match_with_two_others():
    templates = canonical_templates(101)
    sinus = [np.sin(np.linspace(0, 8 * np.pi, 101)), np.cos(np.linspace(0, 6 * np.pi, 101))]
    order = [PatternKind.Overshoot, PatternKind.RisingRamp, PatternKind.Undershoot, PatternKind.DescendingRamp]
    centers = [sinus[0]] + [templates[k] for k in order] + [sinus[1]]
    labels = label_clusters(_clustering(centers), templates)
    assert labels == {0: OTHER, 1: order[0], 2: order[1], 3: order[2], 4: order[3], 5: OTHER}


def test_label_single_center():
    templates = canonical_templates(101)
    center = templates[PatternKind.RisingRamp] + 0.01
    assert label_clusters(_clustering([center]), templates) == {0: PatternKind.RisingRamp}


def test_label_tie_goes_to_lower_cluster():
    templates = {PatternKind.RisingRamp: np.array([0.0, 1.0, 2.0])}
    centers = [[0.0, 1.0, 2.5], [0.0, 1.0, 1.5]]
    assert label_clusters(_clustering(centers), templates) == {0: PatternKind.RisingRamp, 1: OTHER}


def _instances():
    return [PatternInstance(PatternKind.RisingRamp, 10 * i, 10 * i + 5, "r", 0, f"r-{i:04d}") for i in range(4)]


def test_selection_empty_file(tmp_path):
    path = tmp_path / "sel.txt"
    path.write_text("")
    kept, unknown = apply_manual_selection(_instances(), path)
    assert kept == _instances() and unknown == []


def test_selection_drop_all_and_one(tmp_path):
    path = tmp_path / "sel.txt"
    path.write_text("".join(f"r-{i:04d} drop\n" for i in range(4)))
    assert apply_manual_selection(_instances(), path)[0] == []
    path.write_text("# reviewed\nr-0002 drop  # spurious\nr-0001 keep\nghost drop\n")
    kept, unknown = apply_manual_selection(_instances(), path)
    assert len(kept) == 3 and "r-0002" not in {k.id for k in kept}
    assert unknown == ["ghost"]


def test_selection_malformed(tmp_path):
    path = tmp_path / "sel.txt"
    path.write_text("r-0001 maybe\n")
    with pytest.raises(MalformedSelectionFile):
        apply_manual_selection(_instances(), path)


def test_selection_file_in_config(tmp_path, synthetic):
    rec, _ = synthetic
    inst = segment(rec)
    path = tmp_path / "sel.txt"
    path.write_text(f"{inst[0].id} drop\n")
    kept = segment(rec, SegmentationConfig(selection_file=str(path)))
    assert len(kept) == len(inst) - 1


def test_instances_file_round_trip(tmp_path, synthetic):
    inst = extract_patterns(synthetic[0])
    save_instances(inst, tmp_path / "i.csv", provenance="seed=1")
    assert load_instances(tmp_path / "i.csv") == inst


def test_iou_and_matching():
    assert iou(0, 10, 5, 15) == pytest.approx(5 / 15)
    assert iou(0, 10, 20, 30) == 0.0
    res = segment_detailed(constant_recording())
    assert res.clustering is None and res.instances == []
