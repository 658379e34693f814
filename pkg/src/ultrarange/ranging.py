"""Pairwise distance from exchanged pulse timestamps, and neighbor state.

Each device timestamps pulses with its own free-running clock. For a pair
(A, C) a ranging round collects four timestamps: A emits a pulse (t_a1 on
A's clock), C hears it (t_c1 on C's clock), C later emits its own pulse
(t_c3) and A hears that (t_a3). The distance is

    d = c * ((t_c1 - t_a1) + (t_a3 - t_c3)) / 2

Constant clock offsets appear once positively and once negatively in the
sum and cancel exactly; only the drift difference over the round span
remains, which at crystal-oscillator magnitudes is sub-millimeter.

The neighbor table classifies known devices as breaching (closer than the
alert tolerance), close (within audio range) or merely connected, and
derives the alert decision with optional hysteresis and staleness expiry.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

__all__ = [
    "DEFAULT_SPEED_OF_SOUND",
    "BREACHING",
    "CLOSE",
    "CONNECTED",
    "DeviceClock",
    "RangingRound",
    "RangingConfig",
    "NeighborTable",
    "AlertDecision",
    "IncompleteRoundError",
    "InconsistentRoundError",
    "local_time",
    "compute_distance",
]

DEFAULT_SPEED_OF_SOUND = 343.0

BREACHING = "breaching"
CLOSE = "close"
CONNECTED = "connected"


class IncompleteRoundError(ValueError):
    """A distance was requested from a round that is missing timestamps."""


class InconsistentRoundError(ValueError):
    """The four timestamps imply a non-positive distance.

    This signals clock corruption or pulses attributed to the wrong round,
    not a measurement that merely happens to be small.
    """


@dataclass(frozen=True)
class DeviceClock:
    """Affine local clock: ``local = true * (1 + drift_ppm * 1e-6) + offset``."""

    offset_s: float = 0.0
    drift_ppm: float = 0.0

    def __post_init__(self):
        if abs(self.drift_ppm) >= 1e6:
            raise ValueError("drift must stay below 10^6 ppm for a monotone clock")

    def local_time(self, true_time_s: float) -> float:
        return true_time_s * (1.0 + self.drift_ppm * 1e-6) + self.offset_s

    def true_time(self, local_time_s: float) -> float:
        return (local_time_s - self.offset_s) / (1.0 + self.drift_ppm * 1e-6)


def local_time(clock: DeviceClock, true_time_s: float) -> float:
    """Local reading of ``clock`` at the given true time."""
    return clock.local_time(true_time_s)


@dataclass
class RangingRound:
    """Four-timestamp record for an ordered pair (initiator, responder).

    All timestamps are seconds on the owning device's own clock: t_a1/t_a3
    on the initiator's, t_c1/t_c3 on the responder's.
    """

    initiator: str
    responder: str
    t_a1: float | None = None
    t_c1: float | None = None
    t_c3: float | None = None
    t_a3: float | None = None

    def is_complete(self) -> bool:
        return None not in (self.t_a1, self.t_c1, self.t_c3, self.t_a3)


@dataclass(frozen=True)
class RangingConfig:
    speed_of_sound_mps: float = DEFAULT_SPEED_OF_SOUND
    tolerance_m: float = 2.0
    close_range_m: float = 3.5
    staleness_horizon_s: float = 5.0
    alert_hysteresis: int = 1

    def __post_init__(self):
        if min(self.speed_of_sound_mps, self.tolerance_m, self.close_range_m,
               self.staleness_horizon_s) <= 0:
            raise ValueError("all ranging parameters must be strictly positive")
        if self.tolerance_m > self.close_range_m:
            raise ValueError("tolerance_m must not exceed close_range_m")
        if self.alert_hysteresis < 1:
            raise ValueError("alert_hysteresis must be >= 1")


def compute_distance(rnd: RangingRound, config: RangingConfig) -> float:
    """Distance in meters from a complete round; offsets cancel exactly."""
    if not rnd.is_complete():
        missing = [name for name in ("t_a1", "t_c1", "t_c3", "t_a3")
                   if getattr(rnd, name) is None]
        raise IncompleteRoundError(
            f"round {rnd.initiator}->{rnd.responder} missing {', '.join(missing)}"
        )
    if rnd.t_a3 <= rnd.t_a1:
        raise InconsistentRoundError(
            f"initiator timestamps not causal: t_a3={rnd.t_a3} <= t_a1={rnd.t_a1}"
        )
    if rnd.t_c3 <= rnd.t_c1:
        raise InconsistentRoundError(
            f"responder timestamps not causal: t_c3={rnd.t_c3} <= t_c1={rnd.t_c1}"
        )
    d = config.speed_of_sound_mps * ((rnd.t_c1 - rnd.t_a1) + (rnd.t_a3 - rnd.t_c3)) / 2.0
    if d <= 0:
        raise InconsistentRoundError(
            f"round {rnd.initiator}->{rnd.responder} yields non-positive distance {d:.6f} m"
        )
    return d


class AlertDecision(NamedTuple):
    alert: bool
    neighbor_id: str | None
    distance_m: float | None


@dataclass
class _NeighborRecord:
    last_distance_m: float | None = None
    last_update_s: float | None = None
    classification: str = CONNECTED
    # recent (time, distance) estimates, newest last; sized for hysteresis checks
    history: deque = field(default_factory=lambda: deque(maxlen=64))


class NeighborTable:
    """Per-device view of its neighbors and their latest distance estimates."""

    def __init__(self, config: RangingConfig | None = None):
        self.config = config or RangingConfig()
        self._records: dict[str, _NeighborRecord] = {}

    def __contains__(self, neighbor_id: str) -> bool:
        return neighbor_id in self._records

    def register(self, neighbor_id: str) -> None:
        """Make a device known (connected) without a distance estimate."""
        self._records.setdefault(neighbor_id, _NeighborRecord())

    def forget(self, neighbor_id: str) -> None:
        self._records.pop(neighbor_id, None)

    def update(self, neighbor_id: str, distance_m: float, now_s: float) -> None:
        """Store a fresh estimate and reclassify; unknown ids auto-register."""
        if distance_m <= 0:
            raise ValueError(f"distance must be positive, got {distance_m}")
        rec = self._records.setdefault(neighbor_id, _NeighborRecord())
        rec.last_distance_m = distance_m
        rec.last_update_s = now_s
        rec.history.append((now_s, distance_m))
        rec.classification = self._classify(rec, now_s)

    def _classify(self, rec: _NeighborRecord, now_s: float) -> str:
        if rec.last_distance_m is None or rec.last_update_s is None:
            return CONNECTED
        if now_s - rec.last_update_s > self.config.staleness_horizon_s:
            return CONNECTED
        if rec.last_distance_m < self.config.tolerance_m:
            return BREACHING
        if rec.last_distance_m < self.config.close_range_m:
            return CLOSE
        return CONNECTED

    def classification_of(self, neighbor_id: str, now_s: float) -> str:
        return self._classify(self._records[neighbor_id], now_s)

    def last_distance(self, neighbor_id: str) -> float | None:
        rec = self._records.get(neighbor_id)
        return rec.last_distance_m if rec else None

    def breaching_set(self, now_s: float) -> set[str]:
        return {k for k, r in self._records.items()
                if self._classify(r, now_s) == BREACHING}

    def close_set(self, now_s: float) -> set[str]:
        return {k for k, r in self._records.items()
                if self._classify(r, now_s) in (BREACHING, CLOSE)}

    def connected_set(self) -> set[str]:
        return set(self._records)

    def check_alert(self, now_s: float) -> AlertDecision:
        """Alert iff some neighbor shows `alert_hysteresis` consecutive
        breaching estimates, all fresher than the staleness horizon; the
        nearest such neighbor is reported."""
        h = self.config.alert_hysteresis
        tol = self.config.tolerance_m
        horizon = self.config.staleness_horizon_s
        best: tuple[float, str] | None = None
        for nid, rec in self._records.items():
            if len(rec.history) < h:
                continue
            recent = list(rec.history)[-h:]
            if all(d < tol and now_s - t <= horizon for t, d in recent):
                d_last = recent[-1][1]
                if best is None or d_last < best[0]:
                    best = (d_last, nid)
        if best is None:
            return AlertDecision(False, None, None)
        return AlertDecision(True, best[1], best[0])
