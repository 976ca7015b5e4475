"""Semi-automatic extraction of ramps, overshoots, undershoots and static states.

Pipeline on the flow channel: band-pass filter, peak picking on the filtered
magnitude, symmetric candidate windows, per-window z-score, DTW k-means,
template labeling of clusters, DTW-ball pruning, overlap resolution, a
rolling-std static-state detector and finally an optional reviewed
selection file.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import uniform_filter1d

from .dsp import PeakConfig, design_butterworth_bandpass, extract_windows, filter_signal, find_peaks
from .dtw import Clustering, dtw_cost, dtw_ball_filter, dtw_kmeans, znormalize
from .exceptions import MalformedSelectionFile, MissingFlowChannel, RecordingTooShort
from .signals import FLOW_CHANNEL, Recording, standardize_array
from .synthgen import TRANSIENT_KINDS, PatternKind, first_order_lowpass, pattern_template

log = logging.getLogger(__name__)

OTHER = "Other"


@dataclass(frozen=True)
class PatternInstance:
    kind: PatternKind
    start_idx: int
    end_idx: int  # exclusive
    recording_id: str = "rec"
    cluster_id: int = -1
    id: str = ""
    #: filtered-signal magnitude at the window's peak (0 for static states)
    peak_value: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PatternKind(self.kind))
        if not 0 <= self.start_idx < self.end_idx:
            raise ValueError(f"invalid instance range [{self.start_idx}, {self.end_idx})")

    @property
    def length(self) -> int:
        return self.end_idx - self.start_idx

    def overlaps(self, other) -> bool:
        return self.start_idx < other.end_idx and other.start_idx < self.end_idx


@dataclass
class SegmentationConfig:
    f_lo_hz: float = 0.05
    f_hi_hz: float = 0.5
    filter_order: int = 6
    #: centred RMS window applied to the band-passed flow before peak picking
    envelope_s: float = 10.0
    #: prominence threshold on the envelope of the standardized flow
    min_prominence: float = 0.05
    #: None means 2 * half_width + 1, so candidate windows never overlap
    min_distance: int | None = None
    half_width: int = 175
    k: int = 6
    #: absolute DTW radius; None uses ``ball_factor`` x median member cost per cluster
    ball_radius: float | None = None
    ball_factor: float = 2.0
    seed: int = 0
    n_init: int = 3
    max_iters: int = 30
    dba_iters: int = 5
    #: block-average factor applied to windows before clustering
    decimate: int = 5
    #: lag applied to the reference templates (matches the generator default)
    template_tau_s: float = 2.0
    band: int | None = None
    static_min_len_s: float = 15.0
    #: rolling std threshold in units of the recording's flow std
    static_max_std: float = 0.03
    selection_file: str | None = None

    def validate(self) -> None:
        positive = ("f_lo_hz", "f_hi_hz", "envelope_s", "half_width", "k", "ball_factor", "static_min_len_s",
                    "static_max_std", "n_init", "max_iters", "decimate")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.ball_radius is not None and self.ball_radius < 0:
            raise ValueError("ball_radius must be >= 0")

    def peak_config(self) -> PeakConfig:
        dist = self.min_distance if self.min_distance is not None else 2 * self.half_width + 1
        return PeakConfig(self.min_prominence, dist)

    def to_dict(self) -> dict:
        return asdict(self)


def canonical_templates(n: int, sample_rate_hz: float = 10.0, tau_s: float = 2.0, decimate: int = 1) -> dict:
    """Z-normalized reference shapes of the four transient kinds.

    Shapes are the synthetic generator's templates over ``n`` samples, with
    the event placed where the envelope peak leaves it inside a candidate
    window, lagged by a first-order low-pass of ``tau_s`` and block-averaged
    by ``decimate``.
    """
    onset = 0.21
    ramp = {"amplitude": 1.0, "onset_fraction": onset, "ramp_fraction": 4.5 * sample_rate_hz / n}
    shoot = {"amplitude": 1.0, "peak_overshoot_fraction": 0.8, "onset_fraction": onset,
             "rise_fraction": 2.0 * sample_rate_hz / n, "settle_fraction": 7.0 * sample_rate_hz / n}
    shapes = {
        PatternKind.RisingRamp: pattern_template(PatternKind.RisingRamp, ramp, n),
        PatternKind.DescendingRamp: pattern_template(PatternKind.DescendingRamp, ramp, n),
        PatternKind.Overshoot: pattern_template(PatternKind.Overshoot, shoot, n),
        PatternKind.Undershoot: pattern_template(PatternKind.Undershoot, shoot, n),
    }
    return {kind: znormalize(block_mean(first_order_lowpass(x, sample_rate_hz, tau_s), decimate))
            for kind, x in shapes.items()}


def label_clusters(clustering: Clustering, templates: Mapping, band: int | None = None) -> dict:
    """Match template kinds to cluster centers by greedy minimum DTW cost.

    The globally cheapest (cluster, kind) pair is fixed first, then the next
    cheapest among unused clusters and kinds, and so on. Ties go to the lower
    cluster id, then to the earlier template. Unmatched clusters map to
    ``"Other"``.
    """
    kinds = list(templates)
    costs = []
    for c, center in enumerate(clustering.centers):
        for t, kind in enumerate(kinds):
            costs.append((dtw_cost(center, templates[kind], band), c, t))
    costs.sort()
    out = {c: OTHER for c in range(len(clustering.centers))}
    used_c, used_t = set(), set()
    for _, c, t in costs:
        if c in used_c or t in used_t:
            continue
        out[c] = kinds[t]
        used_c.add(c)
        used_t.add(t)
    return out


def _runs(mask: np.ndarray):
    """Half-open ``(start, stop)`` runs of True values."""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def detect_static_states(recording: Recording, min_len_s: float, max_std: float,
                         exclude: Sequence[PatternInstance] = ()) -> list[PatternInstance]:
    """Maximal stretches where the rolling flow std stays below ``max_std``.

    The std is taken over windows of ``min_len_s`` on the flow standardized by
    the recording's own statistics. Samples covered by ``exclude`` are
    removed and pieces shorter than ``min_len_s`` are dropped.
    """
    if min_len_s <= 0 or max_std <= 0:
        raise ValueError("thresholds must be positive")
    if not recording.has_flow:
        raise MissingFlowChannel(FLOW_CHANNEL)
    flow = recording.flow
    x = standardize_array(flow, float(flow.mean()), float(flow.std()))
    if float(flow.std()) < 1e-12:
        x = np.zeros_like(flow)
    n = x.size
    length = max(2, int(round(min_len_s * recording.sample_rate_hz)))
    if n < length:
        return []
    rolling = sliding_window_view(x, length).std(axis=1)
    cover = np.zeros(n + 1, dtype=np.int64)
    starts = np.flatnonzero(rolling < max_std)
    np.add.at(cover, starts, 1)
    np.add.at(cover, starts + length, -1)
    mask = np.cumsum(cover[:-1]) > 0
    for inst in exclude:
        mask[inst.start_idx:inst.end_idx] = False
    return [PatternInstance(PatternKind.StaticState, s, e, recording.id)
            for s, e in _runs(mask) if e - s >= length]


def read_selection_file(path) -> dict:
    verdicts = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or parts[1].lower() not in ("keep", "drop"):
                raise MalformedSelectionFile(f"{path}:{lineno}: expected '<id> keep|drop', got {raw.strip()!r}")
            verdicts[parts[0]] = parts[1].lower()
    return verdicts


def apply_manual_selection(instances: Sequence[PatternInstance], selection_file):
    """Drop instances marked ``drop``; returns ``(kept, unknown_ids)``."""
    verdicts = read_selection_file(selection_file)
    known = {inst.id for inst in instances}
    unknown = sorted(set(verdicts) - known)
    for uid in unknown:
        log.warning("selection file names unknown instance %s", uid)
    kept = [inst for inst in instances if verdicts.get(inst.id) != "drop"]
    return kept, unknown


@dataclass
class SegmentationResult:
    instances: list
    clustering: Clustering | None = None
    cluster_labels: dict = field(default_factory=dict)
    windows: list = field(default_factory=list)  # z-normalized candidate windows
    window_starts: list = field(default_factory=list)
    peaks: list = field(default_factory=list)
    skipped_peaks: list = field(default_factory=list)
    unknown_selection_ids: list = field(default_factory=list)
    filtered: np.ndarray | None = None


def block_mean(x, factor: int) -> np.ndarray:
    """Average consecutive blocks of ``factor`` samples (trailing partial block included)."""
    x = np.asarray(x, dtype=np.float64)
    if factor <= 1:
        return x
    edges = np.arange(0, x.size, factor)
    return np.add.reduceat(x, edges) / np.diff(np.append(edges, x.size))


def band_envelope(y, length: int) -> np.ndarray:
    """Centred moving RMS of ``y`` over ``length`` samples."""
    y = np.asarray(y, dtype=np.float64)
    if length <= 1:
        return np.abs(y)
    return np.sqrt(np.maximum(uniform_filter1d(y * y, length, mode="nearest"), 0.0))


def _resolve_overlaps(instances):
    kept = []
    for inst in sorted(instances, key=lambda i: (-i.peak_value, i.start_idx)):
        if not any(inst.overlaps(k) for k in kept):
            kept.append(inst)
    return sorted(kept, key=lambda i: i.start_idx)


def segment_detailed(recording: Recording, cfg: SegmentationConfig = None, static_states: bool = False
                     ) -> SegmentationResult:
    """Full segmentation with intermediate products.

    With ``static_states`` the rolling-std detector adds StaticState
    instances outside the transient windows before ids are assigned and the
    selection file is applied.
    """
    cfg = cfg or SegmentationConfig()
    cfg.validate()
    if not recording.has_flow:
        raise MissingFlowChannel(FLOW_CHANNEL)
    hw = cfg.half_width
    if recording.n_samples <= 2 * hw:
        raise RecordingTooShort(f"need more than {2 * hw} samples, got {recording.n_samples}")

    flow = recording.flow
    std = float(flow.std())
    fz = standardize_array(flow, float(flow.mean()), std)
    filt = design_butterworth_bandpass(cfg.filter_order, cfg.f_lo_hz, cfg.f_hi_hz, recording.sample_rate_hz)
    envelope = band_envelope(filter_signal(filt, fz), int(round(cfg.envelope_s * recording.sample_rate_hz)))
    peaks = find_peaks(envelope, cfg.peak_config()) if std >= 1e-12 else np.array([], dtype=int)
    candidates, skipped = extract_windows(fz, FLOW_CHANNEL, peaks, hw)
    kept_peaks = [int(p) for p in peaks if int(p) not in set(skipped)]
    windows = [znormalize(block_mean(w, cfg.decimate)) for w, _ in candidates]
    starts = [s for _, s in candidates]
    result = SegmentationResult([], windows=windows, window_starts=starts, peaks=kept_peaks,
                                skipped_peaks=skipped, filtered=envelope)

    transients = []
    if len(windows) >= cfg.k:
        clustering = dtw_kmeans(windows, cfg.k, cfg.seed, cfg.max_iters, n_init=cfg.n_init,
                                dba_iters=cfg.dba_iters, band=cfg.band)
        templates = canonical_templates(2 * hw + 1, recording.sample_rate_hz, cfg.template_tau_s, cfg.decimate)
        labels = label_clusters(clustering, templates, cfg.band)
        result.clustering, result.cluster_labels = clustering, labels
        for c, kind in labels.items():
            if kind == OTHER:
                continue
            idx = clustering.members(c)
            if idx.size == 0:
                continue
            members = [windows[i] for i in idx]
            center = clustering.centers[c]
            if cfg.ball_radius is None:
                radius = cfg.ball_factor * float(np.median([dtw_cost(m, center, cfg.band) for m in members]))
            else:
                radius = cfg.ball_radius
            for local in dtw_ball_filter(members, center, radius, cfg.band):
                i = int(idx[local])
                p = kept_peaks[i]
                transients.append(PatternInstance(kind, starts[i], starts[i] + 2 * hw + 1, recording.id,
                                                  c, peak_value=float(envelope[p])))
    else:
        log.info("only %d candidate windows for k=%d; skipping clustering", len(windows), cfg.k)
    transients = _resolve_overlaps(transients)
    statics = []
    if static_states:
        statics = detect_static_states(recording, cfg.static_min_len_s, cfg.static_max_std, exclude=transients)

    merged = sorted(transients + statics, key=lambda i: i.start_idx)
    instances = [PatternInstance(i.kind, i.start_idx, i.end_idx, i.recording_id, i.cluster_id,
                                 f"{recording.id}-{n:04d}", i.peak_value) for n, i in enumerate(merged)]
    if cfg.selection_file:
        instances, result.unknown_selection_ids = apply_manual_selection(instances, cfg.selection_file)
    result.instances = instances
    return result


def segment(recording: Recording, cfg: SegmentationConfig = None) -> list[PatternInstance]:
    """Sorted, non-overlapping ramp/overshoot/undershoot instances of ``recording``."""
    return segment_detailed(recording, cfg).instances


def extract_patterns(recording: Recording, cfg: SegmentationConfig = None) -> list[PatternInstance]:
    """Transient instances plus the static states between them."""
    return segment_detailed(recording, cfg, static_states=True).instances


def iou(a_start, a_end, b_start, b_end) -> float:
    inter = max(0, min(a_end, b_end) - max(a_start, b_start))
    union = max(a_end, b_end) - min(a_start, b_start)
    return inter / union if union > 0 else 0.0


def match_annotations(instances, annotations, kinds=TRANSIENT_KINDS, min_iou: float = 0.5):
    """One-to-one same-kind matching at ``min_iou``; returns per-kind (tp, n_pred, n_true)."""
    out = {}
    for kind in kinds:
        preds = [i for i in instances if i.kind == kind]
        truth = [a for a in annotations if a.kind == kind]
        pairs = sorted(((iou(p.start_idx, p.end_idx, t.start_idx, t.end_idx), pi, ti)
                        for pi, p in enumerate(preds) for ti, t in enumerate(truth)), reverse=True)
        used_p, used_t, tp = set(), set(), 0
        for score, pi, ti in pairs:
            if score < min_iou:
                break
            if pi in used_p or ti in used_t:
                continue
            used_p.add(pi)
            used_t.add(ti)
            tp += 1
        out[kind] = (tp, len(preds), len(truth))
    return out


def precision_recall(counts: Mapping) -> tuple[float, float]:
    tp = sum(v[0] for v in counts.values())
    n_pred = sum(v[1] for v in counts.values())
    n_true = sum(v[2] for v in counts.values())
    return (tp / n_pred if n_pred else 0.0, tp / n_true if n_true else 0.0)


def save_instances(instances, path, provenance: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "kind", "recording_id", "start_idx", "end_idx", "cluster_id", "peak_value"])
        for i in instances:
            w.writerow([i.id, i.kind.value, i.recording_id, i.start_idx, i.end_idx, i.cluster_id,
                        repr(i.peak_value)])


def load_instances(path) -> list[PatternInstance]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    return [PatternInstance(PatternKind(r["kind"]), int(r["start_idx"]), int(r["end_idx"]), r["recording_id"],
                            int(r["cluster_id"]), r["id"], float(r["peak_value"]))
            for r in csv.DictReader(rows)]
