"""MSE and engineering-performance (EP) metrics on segmented pattern instances.

Time metrics are in seconds, crossing times use linear interpolation between
samples (error bounded by one sample period), and aggregates are
nearest-rank 90% quantiles.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .exceptions import EmptyList, FlatRamp, LengthMismatch, NoCrossing, VcsFlowError
from .synthgen import PatternKind

METRICS = ("dt80", "dt10", "dt_conv", "dt_peak", "E_abs", "E_rel")
#: metrics computed for each pattern kind
ROUTES = {
    PatternKind.RisingRamp: ("dt10", "dt80", "dt_conv"),
    PatternKind.DescendingRamp: ("dt10", "dt80", "dt_conv"),
    PatternKind.Overshoot: ("dt_peak",),
    PatternKind.Undershoot: ("dt_peak",),
    PatternKind.StaticState: ("E_abs", "E_rel"),
}
PLATEAU_FRACTION = 0.10
CONVERGENCE_TOLERANCE = 0.03
FLAT_EPS = 1e-9
ZERO_MEAN_GUARD = 1e-9


@dataclass(frozen=True)
class MetricInstance:
    metric: str
    value: float
    pattern_id: str
    kind: str = ""

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not self.value >= 0:
            raise ValueError(f"{self.metric} must be >= 0, got {self.value}")


def _as_1d(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise LengthMismatch("empty sequence")
    return x


def _same_length(a, b):
    a, b = _as_1d(a), _as_1d(b)
    if a.size != b.size:
        raise LengthMismatch(f"lengths differ: {a.size} vs {b.size}")
    return a, b


def mse(pred, truth) -> float:
    pred, truth = _same_length(pred, truth)
    r = pred - truth
    return float(np.mean(r * r))


def plateaus(signal) -> tuple[float, float]:
    """Means of the first and last 10% of the window (at least one sample each)."""
    x = _as_1d(signal)
    m = max(1, int(round(PLATEAU_FRACTION * x.size)))
    return float(np.mean(x[:m])), float(np.mean(x[-m:]))


def response_time(signal, frac: float, fs: float, initial: float | None = None, final: float | None = None) -> float:
    """First time, from the window start, at which ``frac`` of the ramp amplitude is covered.

    The signal is mapped affinely so that the initial level (mean of the
    first 10%) becomes 0 and the final level (mean of the last 10%) becomes 1;
    this makes the result independent of offset, scale and ramp direction.
    ``initial``/``final`` override the plateau estimates.
    """
    x = _as_1d(signal)
    if not 0 < frac < 1:
        raise ValueError("frac must be in (0, 1)")
    x0, x1 = plateaus(x)
    x0 = x0 if initial is None else float(initial)
    x1 = x1 if final is None else float(final)
    amplitude = x1 - x0
    if abs(amplitude) < FLAT_EPS:
        raise FlatRamp(f"ramp amplitude {abs(amplitude):.3g} below {FLAT_EPS}")
    u = (x - x0) / amplitude
    hit = np.flatnonzero(u >= frac)
    if hit.size == 0:
        raise NoCrossing(f"signal never covers {frac:.0%} of the amplitude")
    i = int(hit[0])
    if i == 0:
        return 0.0
    return (i - 1 + (frac - u[i - 1]) / (u[i] - u[i - 1])) / fs


def delta_response(truth, pred, frac: float, fs: float, pattern_id: str = "", kind: str = "") -> MetricInstance:
    """``|t_frac(truth) - t_frac(pred)|`` as a ``dt10`` or ``dt80`` instance."""
    truth, pred = _same_length(truth, pred)
    name = {0.1: "dt10", 0.8: "dt80"}.get(round(frac, 12))
    if name is None:
        raise ValueError("frac must be 0.1 or 0.8")
    value = abs(response_time(truth, frac, fs) - response_time(pred, frac, fs))
    return MetricInstance(name, value, pattern_id, kind)


def convergence_time(signal, fs: float) -> float:
    """Earliest time after which the signal stays within 3% of the window amplitude of its final value.

    The final value is the mean of the last 10% of the window and the
    amplitude is the window's peak-to-peak range. The exit from the last
    out-of-band sample is linearly interpolated.
    """
    x = _as_1d(signal)
    amplitude = float(np.ptp(x))
    if amplitude < FLAT_EPS:
        raise FlatRamp(f"window amplitude {amplitude:.3g} below {FLAT_EPS}")
    final = plateaus(x)[1]
    band = CONVERGENCE_TOLERANCE * amplitude
    dev = np.abs(x - final)
    outside = np.flatnonzero(dev > band)
    if outside.size == 0:
        return 0.0
    i = int(outside[-1])
    if i == x.size - 1:
        return i / fs
    return (i + (dev[i] - band) / (dev[i] - dev[i + 1])) / fs


def delta_convergence(truth, pred, fs: float, pattern_id: str = "", kind: str = "") -> MetricInstance:
    truth, pred = _same_length(truth, pred)
    return MetricInstance("dt_conv", abs(convergence_time(truth, fs) - convergence_time(pred, fs)), pattern_id, kind)


def peak_delay(truth, pred, fs: float, undershoot: bool = False, pattern_id: str = "", kind: str = "") -> MetricInstance:
    """Index distance of the extreme values (argmax, or argmin for undershoots) in seconds.

    Ties resolve to the earliest index.
    """
    truth, pred = _same_length(truth, pred)
    pick = np.argmin if undershoot else np.argmax
    return MetricInstance("dt_peak", abs(int(pick(truth)) - int(pick(pred))) / fs, pattern_id, kind)


def static_errors(truth, pred) -> tuple[float, float]:
    """``(E_abs, E_rel)`` of the window means; E_rel guards ``|mean(truth)|`` at 1e-9."""
    truth, pred = _same_length(truth, pred)
    mt = float(np.mean(truth))
    e_abs = abs(float(np.mean(pred)) - mt)
    return e_abs, e_abs / max(abs(mt), ZERO_MEAN_GUARD)


def quantile90(values: Sequence[float]) -> float:
    """Nearest-rank 90% quantile: the ``ceil(0.9 n)``-th smallest value."""
    vals = sorted(float(v) for v in values)
    if not vals:
        raise EmptyList("quantile of an empty list")
    rank = (9 * len(vals) + 9) // 10  # ceil(0.9 n) in exact integer arithmetic
    return vals[rank - 1]


@dataclass
class EpReport:
    mse: float
    instances: dict = field(default_factory=lambda: {m: [] for m in METRICS})
    quantiles: dict = field(default_factory=lambda: {m: None for m in METRICS})
    counts: dict = field(default_factory=dict)
    #: ``(pattern_id, metric, reason)`` for patterns a metric could not be computed on
    skipped: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mse": self.mse,
            "quantile90": dict(self.quantiles),
            "n_instances": {m: len(v) for m, v in self.instances.items()},
            "counts": dict(self.counts),
            "skipped": [list(s) for s in self.skipped],
        }

    def save(self, path, provenance: Mapping | None = None) -> None:
        payload = self.to_dict()
        if provenance:
            payload["provenance"] = dict(provenance)
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    def save_instances(self, path, provenance: str | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if provenance:
                fh.write(f"# {provenance}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["pattern_id", "kind", "metric", "value"])
            for metric in METRICS:
                for inst in self.instances[metric]:
                    writer.writerow([inst.pattern_id, inst.kind, inst.metric, repr(inst.value)])


def build_report(pred, truth, patterns: Sequence, fs: float, mse_scale: float = 1.0) -> EpReport:
    """Route each pattern to its metrics, aggregate 90% quantiles and count patterns per kind.

    ``pred`` and ``truth`` are aligned full-length flow sequences; pattern
    ranges index into them. The global MSE is computed on ``x / mse_scale``
    (pass the flow standard deviation to report it in standardized units).
    Failures on individual patterns are recorded in ``skipped``.
    """
    pred, truth = _same_length(pred, truth)
    if not mse_scale > 0:
        raise ValueError("mse_scale must be positive")
    report = EpReport(mse=mse(pred / mse_scale, truth / mse_scale))
    counts = {kind.value: 0 for kind in ROUTES}
    for pat in patterns:
        kind = PatternKind(pat.kind)
        if kind not in ROUTES:
            continue
        counts[kind.value] += 1
        lo, hi = int(pat.start_idx), int(pat.end_idx)
        t, p = truth[lo:hi], pred[lo:hi]
        pid = getattr(pat, "id", "") or f"{lo}-{hi}"
        if hi > truth.size or hi - lo < 2:
            report.skipped.append((pid, ",".join(ROUTES[kind]), "range outside the signal"))
            continue
        try:
            if kind is PatternKind.StaticState:
                e_abs, e_rel = static_errors(t, p)
                report.instances["E_abs"].append(MetricInstance("E_abs", e_abs, pid, kind.value))
                report.instances["E_rel"].append(MetricInstance("E_rel", e_rel, pid, kind.value))
            elif kind in (PatternKind.Overshoot, PatternKind.Undershoot):
                inst = peak_delay(t, p, fs, kind is PatternKind.Undershoot, pid, kind.value)
                report.instances["dt_peak"].append(inst)
        except VcsFlowError as exc:
            report.skipped.append((pid, ",".join(ROUTES[kind]), f"{type(exc).__name__}: {exc}"))
        if kind in (PatternKind.RisingRamp, PatternKind.DescendingRamp):
            # each ramp metric succeeds or fails on its own
            for name, compute in (("dt10", lambda: delta_response(t, p, 0.1, fs, pid, kind.value)),
                                  ("dt80", lambda: delta_response(t, p, 0.8, fs, pid, kind.value)),
                                  ("dt_conv", lambda: delta_convergence(t, p, fs, pid, kind.value))):
                try:
                    report.instances[name].append(compute())
                except VcsFlowError as exc:
                    report.skipped.append((pid, name, f"{type(exc).__name__}: {exc}"))
    report.counts = counts
    report.quantiles = {m: (quantile90([i.value for i in v]) if v else None) for m, v in report.instances.items()}
    return report
