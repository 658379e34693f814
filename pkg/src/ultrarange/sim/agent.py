"""Per-device protocol logic: coordination, attribution, ranging, alerting.

Each agent owns one device's state and reacts to three event sources: slot
ticks (the radio-coordinated TDMA heartbeat), control-channel messages, and
pulse detections from its own microphone stream. Nothing here reads another
device's state directly; all coordination flows through messages.

Attribution: pulses are not acoustically identifiable, so arrivals are
matched to announced transmissions (slot + sequence number) by expected
arrival windows anchored at the announcement's receipt time. A device that
repeatedly announces pulses we never hear is marked inaudible and its
announcements stop opening match windows (except for occasional probe
windows, so devices that move back into range are rehabilitated). The
inaudibility declarations are gossiped and drive the spatial-reuse half of
the schedule: pairs with no audibility evidence are conservatively assumed
to conflict, so a freshly joined network starts as pure TDMA and relaxes
into slot reuse as evidence accumulates.

Ranging: an agent initiates a round toward every radio neighbor each time
it hears its own pulse (the self-detection is the emission timestamp).
Responder-side timestamps arrive as control reports; whenever the four
timestamps of a round are present the distance is computed, sanity-checked,
and fed into the neighbor table that drives alerts.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

from ..dsp import DetectionEvent
from ..mac import SlotSchedule, assign_slots, build_conflict_graph
from ..ranging import (
    InconsistentRoundError,
    NeighborTable,
    RangingConfig,
    RangingRound,
    compute_distance,
)

__all__ = [
    "Hello",
    "Prep",
    "EmitReport",
    "ArrivalReport",
    "AgentConfig",
    "DeviceAgent",
]


class Hello(NamedTuple):
    src: str
    heard: frozenset
    deaf: frozenset


class Prep(NamedTuple):
    src: str
    seq: int


class EmitReport(NamedTuple):
    src: str
    seq: int
    t_local: float


class ArrivalReport(NamedTuple):
    src: str
    pulse_src: str
    pulse_seq: int
    t_local: float


@dataclass(frozen=True)
class AgentConfig:
    slot_duration_s: float = 0.2
    tx_offset_s: float = 0.010        # pulse emission delay after the slot tick
    hello_interval_s: float = 0.5
    radio_expiry_s: float = 1.6       # drop radio neighbors silent this long
    acoustic_memory_s: float = 3.0    # how long "I heard j" stays fresh
    miss_limit: int = 3               # consecutive missed announcements -> inaudible
    probe_every: int = 8              # open a probe window every k-th announcement
    warmup_s: float = 0.6             # listen-only period after start
    window_early_s: float = 0.045     # match window before receipt + tx_offset
    window_late_s: float = 0.040      # match window after receipt + tx_offset
    window_expire_s: float = 1.5      # give up (and count a miss) after this
    stash_keep_s: float = 1.0         # retro-match budget for unmatched arrivals
    plausible_max_factor: float = 2.0  # discard estimates beyond factor*close_range


@dataclass
class _Window:
    src: str
    seq: int
    open_local: float
    lo: float
    hi: float
    expire: float
    probe: bool = False
    matched: bool = False


@dataclass
class _Round:
    seq_a: int
    t_a1: float


@dataclass
class _RadioEntry:
    last_local: float
    heard: frozenset = frozenset()
    deaf: frozenset = frozenset()


class DeviceAgent:
    """Protocol state machine for one device.

    ``services`` is the world adapter providing: ``broadcast(payload)``,
    ``send(dst, payload)``, ``emit_pulse(seq)``, ``record_estimate(responder,
    seq_a, seq_b, est_m, t_table_local)``, ``record_alert(neighbor, est_m)``
    and ``count(name)``.
    """

    def __init__(self, device_id: str, clock, ranging_config: RangingConfig,
                 agent_config: AgentConfig, services):
        self.id = device_id
        self.clock = clock
        self.rcfg = ranging_config
        self.cfg = agent_config
        self.services = services
        self.table = NeighborTable(ranging_config)
        self.alert_on = False

        self._seq = 0
        self._radio: dict[str, _RadioEntry] = {}
        self._heard: dict[str, float] = {}          # j -> last matched arrival (local)
        self._deaf: set[str] = set()
        self._miss: dict[str, int] = {}
        self._announce_count: dict[str, int] = {}
        self._windows: list[_Window] = []
        self._stash: deque = deque()                # unmatched detections (local t, amp)
        self._schedule: SlotSchedule = SlotSchedule({device_id: 0}, 1, agent_config.slot_duration_s)
        self._dirty = True
        self._started_local: float | None = None

        self._my_emissions: dict[int, float] = {}
        self._their_emissions: dict[str, dict[int, float]] = {}
        self._their_arrivals_of_mine: dict[str, dict[int, float]] = {}
        self._my_arrivals: dict[str, dict[int, float]] = {}
        self._rounds: dict[str, deque] = {}
        self._completed: set = set()
        self._completed_order: deque = deque()

    # ------------------------------------------------------------------ events

    def on_slot_tick(self, t_true: float, slot_counter: int) -> None:
        now = self.clock.local_time(t_true)
        if self._started_local is None:
            self._started_local = now
        self._expire_state(now)
        if now - self._started_local < self.cfg.warmup_s:
            return
        if self._dirty:
            self._rebuild_schedule(now)
        slot = slot_counter % self._schedule.frame_length
        if self._schedule.assignment.get(self.id) == slot:
            self._seq += 1
            self.services.broadcast(Prep(self.id, self._seq))
            self.services.emit_pulse(self._seq)
            t_nom = now + self.cfg.tx_offset_s
            self._windows.append(_Window(
                src=self.id, seq=self._seq, open_local=now,
                lo=t_nom - 0.010, hi=t_nom + 0.030,
                expire=now + self.cfg.window_expire_s,
            ))

    def on_hello_timer(self, t_true: float) -> None:
        now = self.clock.local_time(t_true)
        fresh = frozenset(j for j, t in self._heard.items()
                          if now - t <= self.cfg.acoustic_memory_s)
        self.services.broadcast(Hello(self.id, fresh, frozenset(self._deaf)))

    def on_sweep(self, t_true: float) -> None:
        now = self.clock.local_time(t_true)
        self._expire_state(now)
        self._eval_alert(now)

    def on_control(self, payload, t_true: float) -> None:
        now = self.clock.local_time(t_true)
        if isinstance(payload, Hello):
            self._radio[payload.src] = _RadioEntry(now, payload.heard, payload.deaf)
            self._rounds.setdefault(payload.src, deque(maxlen=2))
            self._dirty = True
        elif isinstance(payload, Prep):
            self._on_prep(payload, now)
        elif isinstance(payload, EmitReport):
            em = self._their_emissions.setdefault(payload.src, {})
            em[payload.seq] = payload.t_local
            self._prune_map(em)
            self._try_assemble(payload.src, now)
        elif isinstance(payload, ArrivalReport):
            if payload.pulse_src == self.id:
                ar = self._their_arrivals_of_mine.setdefault(payload.src, {})
                ar[payload.pulse_seq] = payload.t_local
                self._prune_map(ar)
                self._try_assemble(payload.src, now)
        else:
            raise TypeError(f"unknown control payload {payload!r}")

    def on_detection(self, event: DetectionEvent) -> None:
        arrival = event.arrival_time_s
        window = self._match_window(arrival)
        if window is None:
            self._stash.append(arrival)
            self.services.count("detections_unmatched")
            return
        self._handle_match(window, arrival)

    # ------------------------------------------------------------------ guts

    def _on_prep(self, prep: Prep, now: float) -> None:
        j = prep.src
        self._announce_count[j] = self._announce_count.get(j, 0) + 1
        self._rounds.setdefault(j, deque(maxlen=2))
        probe = False
        if j in self._deaf:
            if self._announce_count[j] % self.cfg.probe_every != 0:
                return
            probe = True
        t_nom = now + self.cfg.tx_offset_s
        window = _Window(
            src=j, seq=prep.seq, open_local=now,
            lo=t_nom - self.cfg.window_early_s,
            hi=t_nom + self.cfg.window_late_s,
            expire=now + self.cfg.window_expire_s,
            probe=probe,
        )
        self._windows.append(window)
        # late announcement: an already-seen arrival may belong to it
        for arrival in list(self._stash):
            if window.lo <= arrival <= window.hi:
                self._stash.remove(arrival)
                self._handle_match(window, arrival)
                break

    def _match_window(self, arrival: float) -> _Window | None:
        best = None
        for w in self._windows:
            if w.matched or w.probe or not (w.lo <= arrival <= w.hi):
                continue
            if best is None or (w.open_local, w.src) < (best.open_local, best.src):
                best = w
        if best is not None:
            return best
        for w in self._windows:
            if w.matched or not w.probe or not (w.lo <= arrival <= w.hi):
                continue
            if best is None or (w.open_local, w.src) < (best.open_local, best.src):
                best = w
        return best

    def _handle_match(self, window: _Window, arrival: float) -> None:
        window.matched = True
        j = window.src
        if j == self.id:
            self._my_emissions[window.seq] = arrival
            self._prune_map(self._my_emissions)
            self.services.broadcast(EmitReport(self.id, window.seq, arrival))
            for other in self._radio:
                self._rounds.setdefault(other, deque(maxlen=2)).append(
                    _Round(window.seq, arrival))
                self.services.count("rounds_started")
            return
        self._heard[j] = arrival
        self._miss[j] = 0
        if j in self._deaf:
            self._deaf.discard(j)
            self._dirty = True
        ar = self._my_arrivals.setdefault(j, {})
        ar[window.seq] = arrival
        self._prune_map(ar)
        self.services.send(j, ArrivalReport(self.id, j, window.seq, arrival))
        self._try_assemble(j, arrival)

    def _try_assemble(self, j: str, now: float) -> None:
        rounds = self._rounds.get(j)
        if not rounds:
            return
        their_em = self._their_emissions.get(j, {})
        their_ar = self._their_arrivals_of_mine.get(j, {})
        my_ar = self._my_arrivals.get(j, {})
        for rnd in list(rounds):
            t_c1 = their_ar.get(rnd.seq_a)
            if t_c1 is None:
                continue
            for seq_j, t_c3 in sorted(their_em.items(), key=lambda kv: kv[1]):
                if t_c3 <= t_c1:
                    continue
                t_a3 = my_ar.get(seq_j)
                if t_a3 is None or t_a3 <= rnd.t_a1:
                    continue
                key = (j, rnd.seq_a, seq_j)
                if key in self._completed:
                    continue
                self._completed.add(key)
                self._completed_order.append(key)
                while len(self._completed_order) > 64:
                    self._completed.discard(self._completed_order.popleft())
                self.services.count("rounds_completed")
                self._finish_round(j, rnd, seq_j, t_c1, t_c3, t_a3, now)
                # this round and older ones are spent
                while rounds and rounds[0].seq_a <= rnd.seq_a:
                    rounds.popleft()
                break
            else:
                continue
            break

    def _finish_round(self, j, rnd, seq_j, t_c1, t_c3, t_a3, now) -> None:
        record = RangingRound(self.id, j, t_a1=rnd.t_a1, t_c1=t_c1,
                              t_c3=t_c3, t_a3=t_a3)
        try:
            dist = compute_distance(record, self.rcfg)
        except InconsistentRoundError:
            self.services.count("estimates_discarded")
            return
        if dist > self.cfg.plausible_max_factor * self.rcfg.close_range_m:
            self.services.count("estimates_discarded")
            return
        self.table.update(j, dist, now)
        self.services.record_estimate(j, rnd.seq_a, seq_j, dist)
        self._eval_alert(now)

    def _eval_alert(self, now: float) -> None:
        decision = self.table.check_alert(now)
        if decision.alert and not self.alert_on:
            self.services.record_alert(decision.neighbor_id, decision.distance_m)
        self.alert_on = decision.alert

    def _rebuild_schedule(self, now: float) -> None:
        ids = {self.id} | set(self._radio)
        heard_rel = {self.id: {j for j, t in self._heard.items()
                               if now - t <= self.cfg.acoustic_memory_s}}
        deaf_rel = {self.id: set(self._deaf)}
        for j, entry in self._radio.items():
            heard_rel[j] = set(entry.heard) & ids
            deaf_rel[j] = set(entry.deaf)
        audible: dict[str, set] = {i: set() for i in ids}
        ordered = sorted(ids)
        for a_idx, u in enumerate(ordered):
            for v in ordered[a_idx + 1:]:
                present = v in heard_rel.get(u, ()) or u in heard_rel.get(v, ())
                declared_deaf = v in deaf_rel.get(u, ()) or u in deaf_rel.get(v, ())
                # no evidence at all counts as a conflict: new networks start
                # as pure TDMA and relax into reuse as evidence accumulates
                if present or not declared_deaf:
                    audible[u].add(v)
                    audible[v].add(u)
        graph = build_conflict_graph(audible)
        self._schedule = assign_slots(graph, self.cfg.slot_duration_s)
        self._dirty = False

    def _expire_state(self, now: float) -> None:
        expired_radio = [j for j, e in self._radio.items()
                         if now - e.last_local > self.cfg.radio_expiry_s]
        for j in expired_radio:
            del self._radio[j]
            self._dirty = True
        keep: list[_Window] = []
        for w in self._windows:
            if w.matched:
                continue
            if now > w.expire:
                if not w.probe and w.src != self.id:
                    self._miss[w.src] = self._miss.get(w.src, 0) + 1
                    if (self._miss[w.src] >= self.cfg.miss_limit
                            and w.src not in self._deaf):
                        self._deaf.add(w.src)
                        self._dirty = True
                continue
            keep.append(w)
        self._windows = keep
        while self._stash and self._stash[0] < now - self.cfg.stash_keep_s:
            self._stash.popleft()

    @staticmethod
    def _prune_map(m: dict, keep: int = 8) -> None:
        while len(m) > keep:
            del m[next(iter(m))]

    # ------------------------------------------------------------------ views

    @property
    def schedule(self) -> SlotSchedule:
        return self._schedule

    def audible_neighbors(self, now_local: float) -> set:
        return {j for j, t in self._heard.items()
                if now_local - t <= self.cfg.acoustic_memory_s}
