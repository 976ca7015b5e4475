"""Synthetic VCS-like recordings with ground-truth pattern annotations.

A latent command signal ``z`` is built as a seeded concatenation of pattern
templates. Each of the six input channels is a distinct, smooth, strictly
monotone function of ``z`` plus independent Gaussian noise. The flow is a
fixed nonlinear static map of the (noisy) inputs passed through a
first-order low-pass with time constant ``tau_sys_s``::

    mdot_static = 0.8 + 0.25*n_omega + 0.05*n_C + 0.06*n_C*n_Pout
                  + 0.02*n_Tin**2 - 0.04*n_Pin + 0.03*n_Tout
    mdot[t] = a*mdot[t-1] + (1 - a)*mdot_static[t],   a = exp(-dt/tau_sys_s)

where ``n_<ch> = (x - center) / scale`` uses each channel's nominal center
and half-span. The low-pass state starts at the first static value, so a
constant input produces a constant flow from the first sample.

Randomness comes from ``numpy.random.Generator`` with the PCG64 bit
generator, seeded from ``GeneratorConfig.seed``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.signal import lfilter

from .exceptions import BadLength, InvalidConfig, MissingParam
from .signals import FLOW_CHANNEL, INPUT_CHANNELS, Recording


class PatternKind(str, enum.Enum):
    RisingRamp = "RisingRamp"
    DescendingRamp = "DescendingRamp"
    Overshoot = "Overshoot"
    Undershoot = "Undershoot"
    StaticState = "StaticState"
    Sinusoid = "Sinusoid"

    def __str__(self):
        return self.value


TRANSIENT_KINDS = (
    PatternKind.RisingRamp,
    PatternKind.DescendingRamp,
    PatternKind.Overshoot,
    PatternKind.Undershoot,
)


@dataclass(frozen=True)
class Annotation:
    kind: PatternKind
    start_idx: int
    end_idx: int
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", PatternKind(self.kind))
        if not 0 <= self.start_idx < self.end_idx:
            raise ValueError(f"invalid annotation range [{self.start_idx}, {self.end_idx})")
        amp = self.params.get("amplitude", 0.0)
        if not math.isfinite(amp):
            raise ValueError("annotation amplitude must be finite")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "start_idx": self.start_idx, "end_idx": self.end_idx,
                "params": dict(self.params)}


def save_annotations(annotations, path, provenance: Mapping | None = None) -> None:
    payload = {"annotations": [a.to_dict() for a in annotations]}
    if provenance:
        payload["provenance"] = dict(provenance)
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def load_annotations(path) -> list[Annotation]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [Annotation(PatternKind(a["kind"]), int(a["start_idx"]), int(a["end_idx"]), a.get("params", {}))
            for a in data["annotations"]]


DEFAULT_MIX = {
    PatternKind.RisingRamp: 0.18,
    PatternKind.DescendingRamp: 0.18,
    PatternKind.Overshoot: 0.18,
    PatternKind.Undershoot: 0.18,
    PatternKind.StaticState: 0.16,
    PatternKind.Sinusoid: 0.12,
}


@dataclass
class GeneratorConfig:
    sample_rate_hz: float = 10.0
    duration_s: float = 14_000.0
    #: noise std as a fraction of each channel's nominal half-span
    noise_std: float = 0.01
    pattern_mix: Mapping = field(default_factory=lambda: dict(DEFAULT_MIX))
    tau_sys_s: float = 2.0
    seed: int = 0
    transient_duration_s: float = 50.0
    #: where the event starts inside a transient pattern
    onset_fraction: float = 0.3
    static_duration_s: tuple = (20.0, 40.0)
    sinusoid_duration_s: float = 45.0
    #: |latent level| bound between patterns; excursions add at most ``amplitude_range[1]``
    latent_limit: float = 1.0
    amplitude_range: tuple = (0.4, 0.9)
    overshoot_fraction_range: tuple = (0.6, 1.0)

    def __post_init__(self):
        self.pattern_mix = {PatternKind(k): float(v) for k, v in dict(self.pattern_mix).items()}
        self.static_duration_s = tuple(self.static_duration_s)
        self.amplitude_range = tuple(self.amplitude_range)
        self.overshoot_fraction_range = tuple(self.overshoot_fraction_range)

    def validate(self) -> None:
        positive = {
            "sample_rate_hz": self.sample_rate_hz,
            "duration_s": self.duration_s,
            "tau_sys_s": self.tau_sys_s,
            "transient_duration_s": self.transient_duration_s,
            "sinusoid_duration_s": self.sinusoid_duration_s,
            "latent_limit": self.latent_limit,
        }
        for name, value in positive.items():
            if not (math.isfinite(value) and value > 0):
                raise InvalidConfig(f"{name} must be positive, got {value}")
        if not (self.noise_std >= 0 and math.isfinite(self.noise_std)):
            raise InvalidConfig(f"noise_std must be non-negative, got {self.noise_std}")
        probs = list(self.pattern_mix.values())
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise InvalidConfig("pattern_mix probabilities must be non-negative and sum to 1")
        lo, hi = self.static_duration_s
        if not 0 < lo <= hi:
            raise InvalidConfig("static_duration_s must be an increasing positive pair")
        lo, hi = self.amplitude_range
        if not 0 < lo <= hi <= self.latent_limit:
            raise InvalidConfig("amplitude_range must satisfy 0 < lo <= hi <= latent_limit")
        if int(round(self.duration_s * self.sample_rate_hz)) < 1:
            raise InvalidConfig("duration_s * sample_rate_hz must be at least one sample")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pattern_mix"] = {k.value: v for k, v in self.pattern_mix.items()}
        return d


def _require(params, kind, *names):
    for name in names:
        if name not in params:
            raise MissingParam(f"{kind.value} template needs parameter {name!r}")


def pattern_template(kind, params: Mapping[str, float], n: int) -> np.ndarray:
    """Canonical shape of ``kind`` over ``n`` samples, starting at 0.

    Optional shape parameters are fractions of ``n``: ``onset_fraction``
    (default 0) is where the event starts, ``ramp_fraction`` (default 0.5) the
    ramp length, ``rise_fraction`` (default 0.1) the overshoot rise and
    ``settle_fraction`` (default 0.1) the overshoot decay time constant.
    ``period`` for sinusoids is in samples.
    """
    kind = PatternKind(kind)
    if n < 4:
        raise BadLength(f"template length must be >= 4, got {n}")
    idx = np.arange(n, dtype=np.float64)
    onset = int(round(params.get("onset_fraction", 0.0) * n))
    if kind is PatternKind.StaticState:
        return np.full(n, float(params.get("amplitude", 0.0)))
    if kind is PatternKind.Sinusoid:
        _require(params, kind, "amplitude", "period")
        return params["amplitude"] * np.sin(2.0 * np.pi * idx / params["period"])
    if kind in (PatternKind.RisingRamp, PatternKind.DescendingRamp):
        _require(params, kind, "amplitude")
        length = max(2, int(round(params.get("ramp_fraction", 0.5) * n)))
        u = np.clip((idx - onset) / (length - 1), 0.0, 1.0)
        sign = 1.0 if kind is PatternKind.RisingRamp else -1.0
        return sign * params["amplitude"] * u
    _require(params, kind, "amplitude", "peak_overshoot_fraction")
    amp = params["amplitude"]
    frac = params["peak_overshoot_fraction"]
    rise = max(1, int(round(params.get("rise_fraction", 0.1) * n)))
    settle = max(1e-9, params.get("settle_fraction", 0.1) * n)
    peak_at = onset + rise
    out = np.zeros(n)
    rising = (idx > onset) & (idx <= peak_at)
    out[rising] = amp * (1 + frac) * 0.5 * (1 - np.cos(np.pi * (idx[rising] - onset) / rise))
    after = idx > peak_at
    out[after] = amp * (1 + frac * np.exp(-(idx[after] - peak_at) / settle))
    return out if kind is PatternKind.Overshoot else -out


# (center, half-span) of each input channel over latent z in [-1, 1]
def _channel_maps():
    return {
        "C": lambda z: 12.0 * np.exp(0.25 * z),
        "omega": lambda z: 600.0 + 150.0 * z,
        "P_in": lambda z: 2.5e5 - 0.4e5 * np.tanh(0.6 * z),
        "T_in": lambda z: 285.0 + 4.0 * z + 0.5 * z**3,
        "P_out": lambda z: 9.0e5 + 2.5e5 * z + 0.3e5 * z**2,
        "T_out": lambda z: 330.0 + 12.0 * np.tanh(0.7 * z) + 3.0 * z,
    }


CHANNEL_MAPS = _channel_maps()
CHANNEL_CENTER = {k: float(f(0.0)) for k, f in CHANNEL_MAPS.items()}
CHANNEL_SCALE = {k: float(abs(f(1.0) - f(-1.0)) / 2.0) for k, f in CHANNEL_MAPS.items()}
FLOW_SCALE = 0.2


def static_flow(inputs: Mapping[str, np.ndarray]) -> np.ndarray:
    """Fixed nonlinear static map from the six inputs to mass flow [kg/s]."""
    n = {k: (np.asarray(inputs[k], dtype=np.float64) - CHANNEL_CENTER[k]) / CHANNEL_SCALE[k]
         for k in INPUT_CHANNELS}
    return (0.8 + 0.25 * n["omega"] + 0.05 * n["C"] + 0.06 * n["C"] * n["P_out"]
            + 0.02 * n["T_in"] ** 2 - 0.04 * n["P_in"] + 0.03 * n["T_out"])


def first_order_lowpass(u, sample_rate_hz: float, tau_s: float) -> np.ndarray:
    """Exact discretization of a unit-gain first-order lag, started at steady state."""
    u = np.asarray(u, dtype=np.float64)
    a = math.exp(-1.0 / (sample_rate_hz * tau_s))
    y, _ = lfilter([1.0 - a], [1.0, -a], u, zi=[a * u[0]])
    return y


def flow_from_inputs(inputs: Mapping[str, np.ndarray], sample_rate_hz: float, tau_s: float) -> np.ndarray:
    """Noise-free flow implied by an input history."""
    return first_order_lowpass(static_flow(inputs), sample_rate_hz, tau_s)


def channel_limits(cfg: GeneratorConfig, n_sigma: float = 8.0) -> dict:
    """Bounds every generated channel respects (latent excursion plus noise margin)."""
    zmax = cfg.latent_limit + cfg.amplitude_range[1] * (1 + cfg.overshoot_fraction_range[1])
    z = np.linspace(-zmax, zmax, 2001)
    limits = {}
    for k, f in CHANNEL_MAPS.items():
        v = f(z)
        margin = n_sigma * cfg.noise_std * CHANNEL_SCALE[k]
        limits[k] = (float(v.min() - margin), float(v.max() + margin))
    inputs = {k: f(z) for k, f in CHANNEL_MAPS.items()}
    # static map over the joint input box bounds the low-passed flow
    grid = np.meshgrid(*[np.array(limits[k]) for k in INPUT_CHANNELS], indexing="ij")
    corners = static_flow({k: g.ravel() for k, g in zip(INPUT_CHANNELS, grid)})
    along = static_flow(inputs)
    lo = min(corners.min(), along.min())
    hi = max(corners.max(), along.max())
    margin = n_sigma * cfg.noise_std * FLOW_SCALE
    limits[FLOW_CHANNEL] = (float(lo - margin), float(hi + margin))
    return limits


def _draw_pattern(kind, level, cfg, rng):
    """Pick parameters for one pattern; returns (kind, latent offsets, params)."""
    fs = cfg.sample_rate_hz
    lim = cfg.latent_limit
    if kind is PatternKind.StaticState:
        dur = rng.uniform(*cfg.static_duration_s)
        n = max(4, int(round(dur * fs)))
        return kind, np.zeros(n), {"amplitude": 0.0, "duration_s": n / fs}
    if kind is PatternKind.Sinusoid:
        n = max(4, int(round(cfg.sinusoid_duration_s * fs)))
        period_s = rng.uniform(8.0, 10.0)
        amp = rng.uniform(0.15, 0.3)
        params = {"amplitude": amp, "period": period_s * fs}
        return kind, pattern_template(kind, params, n), {
            "amplitude": amp, "period_s": period_s, "duration_s": n / fs}

    n = max(4, int(round(cfg.transient_duration_s * fs)))
    amp = rng.uniform(*cfg.amplitude_range)
    rising = kind in (PatternKind.RisingRamp, PatternKind.Overshoot)
    # flip direction when the new level would leave [-lim, lim]
    if rising and level + amp > lim:
        rising = False
    elif not rising and level - amp < -lim:
        rising = True
    if kind in (PatternKind.RisingRamp, PatternKind.DescendingRamp):
        kind = PatternKind.RisingRamp if rising else PatternKind.DescendingRamp
        ramp_s = rng.uniform(3.0, 6.0)
        params = {"amplitude": amp, "onset_fraction": cfg.onset_fraction, "ramp_fraction": ramp_s * fs / n}
        meta = {"amplitude": amp, "duration_s": n / fs, "onset_s": cfg.onset_fraction * n / fs,
                "ramp_duration_s": ramp_s}
    else:
        kind = PatternKind.Overshoot if rising else PatternKind.Undershoot
        frac = rng.uniform(*cfg.overshoot_fraction_range)
        rise_s = rng.uniform(1.5, 2.5)
        tc_s = rng.uniform(5.0, 9.0)
        params = {"amplitude": amp, "peak_overshoot_fraction": frac, "onset_fraction": cfg.onset_fraction,
                  "rise_fraction": rise_s * fs / n, "settle_fraction": tc_s * fs / n}
        meta = {"amplitude": amp, "duration_s": n / fs, "onset_s": cfg.onset_fraction * n / fs, "rise_s": rise_s,
                "time_constant_s": tc_s, "peak_overshoot_fraction": frac}
    return kind, pattern_template(kind, params, n), meta


def generate_latent(cfg: GeneratorConfig, rng: np.random.Generator):
    n_total = int(round(cfg.duration_s * cfg.sample_rate_hz))
    kinds = list(cfg.pattern_mix)
    probs = np.array([cfg.pattern_mix[k] for k in kinds])
    probs = probs / probs.sum()
    z = np.zeros(n_total)
    annotations = []
    pos, level = 0, 0.0
    previous = None
    while True:
        kind = kinds[int(rng.choice(len(kinds), p=probs))]
        # back-to-back static states would be one indistinguishable plateau
        if kind is PatternKind.StaticState and previous is PatternKind.StaticState and len(kinds) > 1:
            continue
        kind, offsets, meta = _draw_pattern(kind, level, cfg, rng)
        if pos + offsets.size > n_total:
            break
        z[pos:pos + offsets.size] = level + offsets
        annotations.append(Annotation(kind, pos, pos + offsets.size, meta))
        pos += offsets.size
        previous = kind
        level = level + offsets[-1] if kind in TRANSIENT_KINDS else level
    z[pos:] = level
    return z, annotations


def generate_recording(cfg: GeneratorConfig, id: str = "synth"):
    """Build a labeled recording and its pattern annotations."""
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    z, annotations = generate_latent(cfg, rng)
    channels = {}
    for name in INPUT_CHANNELS:
        noise = rng.standard_normal(z.size) * cfg.noise_std * CHANNEL_SCALE[name]
        channels[name] = CHANNEL_MAPS[name](z) + noise
    flow = flow_from_inputs(channels, cfg.sample_rate_hz, cfg.tau_sys_s)
    channels[FLOW_CHANNEL] = flow + rng.standard_normal(z.size) * cfg.noise_std * FLOW_SCALE
    return Recording(cfg.sample_rate_hz, channels, 0.0, id), annotations
