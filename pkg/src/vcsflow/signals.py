"""Recordings, channel statistics, CSV I/O and train/validation/test splitting."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import (
    EmptyInput,
    MissingChannelStats,
    MissingColumn,
    NonFiniteValue,
    NonUniformSampling,
    RatioSumInvalid,
    TooFewSamples,
)

#: Model inputs, in the column order used by every estimator.
INPUT_CHANNELS = ("C", "omega", "P_in", "T_in", "P_out", "T_out")
FLOW_CHANNEL = "mdot"
ALL_CHANNELS = INPUT_CHANNELS + (FLOW_CHANNEL,)

UNIFORM_RTOL = 1e-6
ZERO_STD = 1e-12


@dataclass(frozen=True)
class Recording:
    """Fixed-rate multivariate time series.

    ``channels`` maps channel name to a read-only float64 array; all arrays
    share one length. ``mdot`` may be absent for inference-only data.
    """

    sample_rate_hz: float
    channels: Mapping[str, np.ndarray]
    t0_s: float = 0.0
    id: str = "rec"

    def __post_init__(self):
        if not (self.sample_rate_hz > 0 and math.isfinite(self.sample_rate_hz)):
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not self.channels:
            raise EmptyInput("recording has no channels")
        frozen = {}
        n = None
        for name, values in self.channels.items():
            arr = np.array(values, dtype=np.float64)
            if arr.ndim != 1 or arr.size < 1:
                raise ValueError(f"channel {name!r} must be a non-empty 1-D sequence")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise ValueError(f"channel {name!r} has length {arr.size}, expected {n}")
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise NonFiniteValue(name, int(bad[0]))
            arr.flags.writeable = False
            frozen[name] = arr
        unknown = set(frozen) - set(ALL_CHANNELS)
        if unknown:
            raise ValueError(f"unknown channels: {sorted(unknown)}")
        for name in INPUT_CHANNELS:
            if name not in frozen:
                raise MissingColumn(name)
        # keep a canonical channel order
        ordered = {name: frozen[name] for name in ALL_CHANNELS if name in frozen}
        object.__setattr__(self, "channels", ordered)

    @property
    def n_samples(self) -> int:
        return next(iter(self.channels.values())).size

    @property
    def has_flow(self) -> bool:
        return FLOW_CHANNEL in self.channels

    @property
    def flow(self) -> np.ndarray:
        return self.channels[FLOW_CHANNEL]

    @property
    def times(self) -> np.ndarray:
        return self.t0_s + np.arange(self.n_samples) / self.sample_rate_hz

    def inputs(self) -> np.ndarray:
        """Input channels stacked as an ``(n_samples, 6)`` array."""
        return np.column_stack([self.channels[c] for c in INPUT_CHANNELS])

    def slice(self, start: int, stop: int, id: str | None = None) -> "Recording":
        if not 0 <= start < stop <= self.n_samples:
            raise IndexError(f"invalid slice [{start}, {stop}) for {self.n_samples} samples")
        return Recording(
            sample_rate_hz=self.sample_rate_hz,
            channels={k: v[start:stop] for k, v in self.channels.items()},
            t0_s=self.t0_s + start / self.sample_rate_hz,
            id=id or f"{self.id}[{start}:{stop}]",
        )

    def replace_channels(self, **updates) -> "Recording":
        channels = dict(self.channels)
        channels.update(updates)
        return Recording(self.sample_rate_hz, channels, self.t0_s, self.id)


@dataclass(frozen=True)
class ChannelStats:
    mean: Mapping[str, float]
    std: Mapping[str, float]

    def __post_init__(self):
        for name, s in self.std.items():
            if not s >= 0:
                raise ValueError(f"negative std for channel {name!r}")

    def to_dict(self) -> dict:
        return {name: {"mean": self.mean[name], "std": self.std[name]} for name in self.mean}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ChannelStats":
        return cls(
            mean={k: float(v["mean"]) for k, v in data.items()},
            std={k: float(v["std"]) for k, v in data.items()},
        )

    def save(self, path, provenance: Mapping | None = None) -> None:
        payload = {"channels": self.to_dict()}
        if provenance:
            payload["provenance"] = dict(provenance)
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ChannelStats":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8"))["channels"])


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    #: start sample of each partition inside the source, single-recording splits only
    offsets: dict = field(default_factory=dict)

    def parts(self):
        return {"train": self.train, "validation": self.validation, "test": self.test}


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip() and not line.lstrip().startswith("#")]
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise EmptyInput(f"{path}: empty file") from None
    return header, list(reader)


def load_recording(path, id: str | None = None) -> Recording:
    """Read a recording CSV (``t,C,omega,P_in,T_in,P_out,T_out[,mdot]``).

    Lines starting with ``#`` are comments. The sample rate is the inverse of
    the median timestamp delta, rounded to 9 significant digits; every delta
    must match the median within 1e-6 relative tolerance.
    """
    path = Path(path)
    header, rows = _read_rows(path)
    for name in ("t",) + INPUT_CHANNELS:
        if name not in header:
            raise MissingColumn(name)
    wanted = ["t"] + [c for c in ALL_CHANNELS if c in header]
    cols = {name: header.index(name) for name in wanted}
    data = {name: np.empty(len(rows)) for name in wanted}
    for r, row in enumerate(rows):
        for name, j in cols.items():
            try:
                value = float(row[j])
            except (IndexError, ValueError):
                raise NonFiniteValue(name, r) from None
            if not math.isfinite(value):
                raise NonFiniteValue(name, r)
            data[name][r] = value
    t = data.pop("t")
    if t.size < 2:
        raise TooFewSamples(f"{path}: need at least 2 rows to infer the sample rate")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise NonUniformSampling(int(np.flatnonzero(dt <= 0)[0]) + 1, "timestamps not strictly increasing")
    step = float(np.median(dt))
    off = np.flatnonzero(np.abs(dt - step) > UNIFORM_RTOL * step)
    if off.size:
        raise NonUniformSampling(int(off[0]) + 1)
    # 9 significant digits strip the rounding noise of printed timestamps
    rate = float(f"{1.0 / step:.9g}")
    return Recording(sample_rate_hz=rate, channels=data, t0_s=float(t[0]), id=id or path.stem)


def save_recording(recording: Recording, path, comment: str | None = None) -> None:
    names = list(recording.channels)
    cols = [recording.times] + [recording.channels[n] for n in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + names)
        for row in zip(*cols):
            writer.writerow([repr(float(v)) for v in row])


def compute_stats(recordings: Sequence[Recording], channels: Iterable[str] | None = None) -> ChannelStats:
    """Pooled mean and population std per channel over all recordings."""
    if not recordings:
        raise EmptyInput("no recordings")
    channels = list(channels) if channels is not None else list(recordings[0].channels)
    mean, std = {}, {}
    for name in channels:
        parts = [r.channels[name] for r in recordings if name in r.channels]
        if not parts:
            raise EmptyInput(f"no samples for channel {name!r}")
        x = np.concatenate(parts)
        mu = float(np.mean(x))
        mean[name] = mu
        std[name] = float(np.sqrt(np.mean((x - mu) ** 2)))
    return ChannelStats(mean, std)


def standardize_array(x, mean: float, std: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if std < ZERO_STD:
        return np.zeros_like(x)
    return (x - mean) / std


def standardize(recording: Recording, stats: ChannelStats) -> Recording:
    out = {}
    for name, x in recording.channels.items():
        if name not in stats.mean:
            raise MissingChannelStats(name)
        out[name] = standardize_array(x, stats.mean[name], stats.std[name])
    return Recording(recording.sample_rate_hz, out, recording.t0_s, recording.id)


def split_dataset(recordings: Sequence[Recording], ratios=(0.64, 0.18, 0.18), seed: int = 0) -> DatasetSplit:
    """Partition recordings into train/validation/test.

    A single recording is cut into three contiguous time segments, in that
    order. Several recordings are shuffled with ``seed`` and each whole
    recording goes to the partition furthest below its target sample count.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise RatioSumInvalid(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    if not recordings:
        raise EmptyInput("no recordings")
    total = sum(r.n_samples for r in recordings)
    if total < 100:
        raise TooFewSamples(f"need at least 100 samples, got {total}")

    names = ("train", "validation", "test")
    if len(recordings) == 1:
        rec = recordings[0]
        n = rec.n_samples
        n_train = int(round(ratios[0] * n))
        n_val = min(int(round(ratios[1] * n)), n - n_train)
        bounds = [0, n_train, n_train + n_val, n]
        parts, offsets = {}, {}
        for name, lo, hi in zip(names, bounds[:-1], bounds[1:]):
            parts[name] = [rec.slice(lo, hi, id=f"{rec.id}:{name}")] if hi > lo else []
            offsets[name] = lo
        return DatasetSplit(parts["train"], parts["validation"], parts["test"], offsets)

    order = np.random.default_rng(seed).permutation(len(recordings))
    targets = [r * total for r in ratios]
    assigned = [0, 0, 0]
    parts = ([], [], [])
    for idx in order:
        rec = recordings[int(idx)]
        need = [targets[p] - assigned[p] for p in range(3)]
        p = int(np.argmax(need))
        parts[p].append(rec)
        assigned[p] += rec.n_samples
    return DatasetSplit(*parts)
