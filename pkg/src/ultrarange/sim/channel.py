"""Acoustic propagation paths and the abstract control channel.

Acoustics: each link carries a direct path plus optional reflected paths
with extra travel length. Amplitudes combine the configured path gain,
spherical spreading (reference gain at 1 m), and the obstruction model:
a partial obstruction attenuates the direct path by a fixed dB figure,
a total obstruction removes it entirely so only reflections, if any,
arrive. Reflected extra lengths may be redrawn per emission within a
configured jitter range to model paths that shift between measurements.

Control: a latency-bearing, lossy message channel standing in for the
radio link that coordinates devices. Per-pair FIFO ordering is preserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..dsp import PulseTemplate, _oversampled_waveform, _PLACE_GUARD, _PLACE_UPSAMPLE

__all__ = [
    "ChannelPath",
    "AcousticLink",
    "Arrival",
    "arrivals_for_link",
    "ControlChannel",
    "OBSTRUCTION_KINDS",
]

OBSTRUCTION_KINDS = ("none", "partial", "total")

# Spreading loss reference: unity gain at 1 m, clamped below 0.1 m.
_MIN_SPREAD_DISTANCE = 0.1


@dataclass(frozen=True)
class ChannelPath:
    kind: str = "direct"                      # "direct" | "reflected"
    extra_path_length_m: float = 0.0
    gain_factor: float = 1.0
    extra_jitter_m: tuple | None = None       # (lo, hi) redraw added per emission

    def __post_init__(self):
        if self.kind not in ("direct", "reflected"):
            raise ValueError(f"unknown path kind {self.kind!r}")
        if self.kind == "direct" and self.extra_path_length_m != 0.0:
            raise ValueError("direct path cannot have extra length")
        if self.kind == "reflected" and self.extra_path_length_m <= 0.0:
            raise ValueError("reflected path needs positive extra length")
        if not 0.0 < self.gain_factor <= 1.0:
            raise ValueError("gain_factor must be in (0, 1]")
        if self.extra_jitter_m is not None:
            lo, hi = self.extra_jitter_m
            if lo > hi or lo < 0:
                raise ValueError("extra_jitter_m must be (lo, hi) with 0 <= lo <= hi")


@dataclass(frozen=True)
class AcousticLink:
    paths: tuple = (ChannelPath(),)
    obstruction: str = "none"
    attenuation_db: float = 0.0

    def __post_init__(self):
        if self.obstruction not in OBSTRUCTION_KINDS:
            raise ValueError(f"unknown obstruction {self.obstruction!r}")
        if self.obstruction == "partial" and self.attenuation_db <= 0:
            raise ValueError("partial obstruction needs attenuation_db > 0")
        kinds = [p.kind for p in self.paths]
        if kinds.count("direct") > 1:
            raise ValueError("at most one direct path per link")


class Arrival(tuple):
    """(delay_s, amplitude) of one deliverable path copy."""
    __slots__ = ()

    def __new__(cls, delay_s, amplitude):
        return tuple.__new__(cls, (delay_s, amplitude))

    @property
    def delay_s(self):
        return self[0]

    @property
    def amplitude(self):
        return self[1]


def arrivals_for_link(link: AcousticLink, distance_m: float, tx_amplitude: float,
                      speed_of_sound: float, rng: np.random.Generator) -> list[Arrival]:
    """Deliverable (delay, amplitude) pairs for one emission over one link."""
    out = []
    for path in link.paths:
        if path.kind == "direct":
            if link.obstruction == "total":
                continue
            path_len = distance_m
            amp = tx_amplitude * path.gain_factor / max(path_len, _MIN_SPREAD_DISTANCE)
            if link.obstruction == "partial":
                amp *= 10.0 ** (-link.attenuation_db / 20.0)
        else:
            extra = path.extra_path_length_m
            if path.extra_jitter_m is not None:
                lo, hi = path.extra_jitter_m
                extra += float(rng.uniform(lo, hi))
            path_len = distance_m + extra
            amp = tx_amplitude * path.gain_factor / max(path_len, _MIN_SPREAD_DISTANCE)
        out.append(Arrival(path_len / speed_of_sound, amp))
    return out


# ---------------------------------------------------------------------------
# waveform rendering into receiver streams


@lru_cache(maxsize=32)
def _arrival_waveform(tx_template: PulseTemplate, rx_rate: float):
    """Band-limited x64-oversampled emission waveform on the receiver's grid.

    Same-rate pairs reuse the transmit oversampling directly. For mixed
    rates the transmit x64 grid is interpolated onto the receiver x64 grid
    (accurate to about -70 dB at these band centers). Returns
    (oversampled array, leading guard as an integer receiver-sample count);
    the pulse starts exactly ``guard`` receiver samples into the array.
    """
    ov_tx = _oversampled_waveform(tx_template)
    fs_tx = tx_template.sample_rate_hz
    if fs_tx == rx_rate:
        return ov_tx, _PLACE_GUARD
    up = _PLACE_UPSAMPLE
    dt_tx = 1.0 / (fs_tx * up)
    lead_tx = _PLACE_GUARD / fs_tx                  # seconds before pulse start
    total = len(ov_tx) * dt_tx
    guard_rx = math.ceil(lead_tx * rx_rate)
    lead_rx = guard_rx / rx_rate
    n_rx = int((total - lead_tx + lead_rx) * rx_rate * up)
    t = np.arange(n_rx) / (rx_rate * up) - lead_rx  # time relative to pulse start
    ov_rx = np.interp(t, np.arange(len(ov_tx)) * dt_tx - lead_tx, ov_tx,
                      left=0.0, right=0.0)
    return ov_rx, guard_rx


def add_arrival(buf: np.ndarray, buf_base: int, tx_template: PulseTemplate,
                rx_rate: float, position_samples: float, amplitude: float) -> None:
    """Mix one arriving pulse copy into a stream buffer.

    ``position_samples`` is the absolute (stream) sample position of the
    pulse start; ``buf_base`` is the absolute index of ``buf[0]``. Samples
    before the buffer base are dropped (sub-0.1% leading interpolation
    tails at most).
    """
    ov, guard = _arrival_waveform(tx_template, rx_rate)
    pos = position_samples - buf_base
    i0 = math.floor(pos)
    frac = pos - i0
    q = round(frac * _PLACE_UPSAMPLE)
    if q == _PLACE_UPSAMPLE:
        i0 += 1
        q = 0
    k0 = -guard + (1 if q > 0 else 0)
    first = (k0 + guard) * _PLACE_UPSAMPLE - q
    w = ov[first::_PLACE_UPSAMPLE]
    start = i0 + k0
    s = max(0, -start)
    e = min(len(w), len(buf) - start)
    if e > s:
        buf[start + s : start + e] += amplitude * w[s:e]


# ---------------------------------------------------------------------------
# control channel


@dataclass
class ControlChannel:
    """Radio-style message delivery with latency, loss and per-pair FIFO."""

    latency_min_s: float = 0.005
    latency_max_s: float = 0.030
    loss_probability: float = 0.0
    radio_range_m: float = 50.0
    _last_delivery: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.latency_min_s <= self.latency_max_s:
            raise ValueError("need 0 <= latency_min_s <= latency_max_s")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError("loss_probability must be within [0, 1]")

    def delivery_time(self, src: str, dst: str, send_true_time_s: float,
                      distance_m: float, rng: np.random.Generator) -> float | None:
        """Delivery time, or None if dropped. Draws from ``rng`` in call order."""
        latency = float(rng.uniform(self.latency_min_s, self.latency_max_s))
        lost = float(rng.random()) < self.loss_probability
        if distance_m > self.radio_range_m or lost:
            return None
        t = send_true_time_s + latency
        key = (src, dst)
        prev = self._last_delivery.get(key)
        if prev is not None and t <= prev:
            t = prev + 1e-9  # enforce FIFO per ordered pair
        self._last_delivery[key] = t
        return t
