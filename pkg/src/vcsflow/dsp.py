"""Butterworth band-pass design, causal filtering and peak picking."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import find_peaks as _local_maxima
from scipy.signal import peak_prominences, sosfilt

from .exceptions import InvalidBand, TooShort


@dataclass(frozen=True)
class IirFilter:
    """Cascade of second-order sections ``(b0, b1, b2, a1, a2)`` with ``a0 = 1``."""

    sections: tuple
    sample_rate_hz: float

    @property
    def order(self) -> int:
        return 2 * len(self.sections)

    def poles(self) -> np.ndarray:
        out = []
        for _, _, _, a1, a2 in self.sections:
            out.extend(np.roots([1.0, a1, a2]))
        return np.asarray(out)

    def is_stable(self, margin: float = 1e-9) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0 - margin))

    def frequency_response(self, freqs_hz) -> np.ndarray:
        """Complex gain of the cascade at the given frequencies."""
        w = 2.0 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / self.sample_rate_hz
        zi = np.exp(-1j * w)
        h = np.ones_like(zi)
        for b0, b1, b2, a1, a2 in self.sections:
            h = h * (b0 + b1 * zi + b2 * zi**2) / (1.0 + a1 * zi + a2 * zi**2)
        return h

    def gain_db(self, freqs_hz) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 20.0 * np.log10(np.abs(self.frequency_response(freqs_hz)))

    def as_sos(self) -> np.ndarray:
        """Coefficients in the ``[b0, b1, b2, 1, a1, a2]`` row layout."""
        return np.array([[b0, b1, b2, 1.0, a1, a2] for b0, b1, b2, a1, a2 in self.sections])

    def to_dict(self) -> dict:
        return {"sample_rate_hz": self.sample_rate_hz,
                "sections": [dict(zip(("b0", "b1", "b2", "a1", "a2"), s)) for s in self.sections]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "IirFilter":
        secs = tuple(tuple(float(s[k]) for k in ("b0", "b1", "b2", "a1", "a2")) for s in data["sections"])
        return cls(secs, float(data["sample_rate_hz"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def design_butterworth_bandpass(order: int, f_lo_hz: float, f_hi_hz: float, fs_hz: float) -> IirFilter:
    """Digital Butterworth band-pass with -3 dB points exactly at ``f_lo_hz`` and ``f_hi_hz``.

    ``order`` is the analog low-pass prototype order; the band-pass has
    ``2 * order`` poles, returned as ``order`` second-order sections.

    The prototype poles are mapped to the band-pass with
    ``s**2 - p*B*s + W0**2 = 0`` on pre-warped edges ``W = 2 fs tan(pi f / fs)``
    and then discretized by the bilinear transform. Each section carries a
    zero pair at ``z = +-1`` and is scaled to unit gain at the digital centre
    frequency, where the ideal response is exactly 0 dB.
    """
    if order < 1:
        raise InvalidBand(f"order must be >= 1, got {order}")
    if not (0 < f_lo_hz < f_hi_hz < fs_hz / 2):
        raise InvalidBand(f"need 0 < f_lo < f_hi < fs/2, got {f_lo_hz}, {f_hi_hz}, fs={fs_hz}")
    fs2 = 2.0 * fs_hz
    w_lo = fs2 * math.tan(math.pi * f_lo_hz / fs_hz)
    w_hi = fs2 * math.tan(math.pi * f_hi_hz / fs_hz)
    bw = w_hi - w_lo
    w0 = math.sqrt(w_lo * w_hi)

    k = np.arange(1, order + 1)
    proto = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))
    disc = np.sqrt((proto * bw) ** 2 - 4 * w0**2)
    analog = np.concatenate([(proto * bw + disc) / 2, (proto * bw - disc) / 2])
    digital = (fs2 + analog) / (fs2 - analog)

    # conjugate pairs form one section each; real poles (very wide bands) are paired by value
    is_real = np.abs(digital.imag) <= 1e-10 * np.maximum(np.abs(digital), 1.0)
    pairs = [(p, p.conjugate()) for p in digital[~is_real & (digital.imag > 0)]]
    real = np.sort(digital[is_real].real)
    pairs += [(complex(real[i]), complex(real[i + 1])) for i in range(0, real.size - 1, 2)]
    if len(pairs) != order:
        raise InvalidBand("could not arrange the poles into second-order sections")
    pairs.sort(key=lambda pq: max(abs(pq[0]), abs(pq[1])))
    w_c = 2.0 * math.atan(w0 / fs2)
    zc = np.exp(-1j * w_c)
    sections = []
    for p, q in pairs:
        a1 = float(-(p + q).real)
        a2 = float((p * q).real)
        gain = abs((1.0 + a1 * zc + a2 * zc**2) / (1.0 - zc**2))
        sections.append((gain, 0.0, -gain, a1, a2))
    return IirFilter(tuple(sections), float(fs_hz))


def filter_signal(filt: IirFilter, x) -> np.ndarray:
    """Causal zero-state evaluation of the cascade (transposed direct form II)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 1:
        raise TooShort("empty input")
    return sosfilt(filt.as_sos(), x)


@dataclass(frozen=True)
class PeakConfig:
    min_prominence: float = 0.0
    min_distance: int = 1

    def __post_init__(self):
        if self.min_prominence < 0:
            raise ValueError("min_prominence must be >= 0")
        if self.min_distance < 1:
            raise ValueError("min_distance must be >= 1")


def find_peaks(x, cfg: PeakConfig = PeakConfig()) -> np.ndarray:
    """Local maxima filtered by prominence, then thinned by distance.

    Plateaus report their floor-midpoint index. Peaks below
    ``cfg.min_prominence`` are dropped first; remaining peaks are then visited
    highest first (earlier index on ties) and any peak closer than
    ``cfg.min_distance`` samples to an already kept one is discarded.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 3:
        raise TooShort("find_peaks needs at least 3 samples")
    peaks, _ = _local_maxima(x)
    if peaks.size == 0:
        return peaks.astype(np.intp)
    prom = peak_prominences(x, peaks)[0]
    peaks = peaks[prom >= cfg.min_prominence]
    if cfg.min_distance <= 1 or peaks.size < 2:
        return peaks.astype(np.intp)
    order = sorted(range(peaks.size), key=lambda i: (-x[peaks[i]], peaks[i]))
    kept: list[int] = []
    for i in order:
        p = peaks[i]
        if all(abs(p - q) >= cfg.min_distance for q in kept):
            kept.append(int(p))
    return np.array(sorted(kept), dtype=np.intp)


def extract_windows(recording, channel: str, peaks: Sequence[int], half_width: int):
    """Symmetric windows ``[p - half_width, p + half_width]`` around each peak.

    Returns ``(windows, skipped)`` where ``windows`` is a list of
    ``(values, start_idx)`` in peak order and ``skipped`` lists the peaks too
    close to a boundary.
    """
    if half_width < 1:
        raise ValueError("half_width must be >= 1")
    x = recording.channels[channel] if hasattr(recording, "channels") else np.asarray(recording)
    n = len(x)
    windows, skipped = [], []
    for p in peaks:
        p = int(p)
        lo, hi = p - half_width, p + half_width
        if lo < 0 or hi > n - 1:
            skipped.append(p)
            continue
        windows.append((np.array(x[lo:hi + 1], dtype=np.float64), lo))
    return windows, skipped
