"""Deterministic discrete-event world: acoustics, radio, clocks, agents.

All state advances through a single time-ordered event queue (ties broken
by insertion order, so runs are exactly reproducible for a fixed seed).
Event kinds:

- slot ticks: the shared TDMA heartbeat; agents decide locally whether to
  transmit from their own schedule view
- pulse emissions: compute every deliverable path copy at emission time and
  mix it into the receiving devices' streams at the true arrival instant
  converted through each receiver's own clock and sample grid
- block completions: per device, render one block (pending pulse copies
  plus ambient noise), feed it to the streaming detector, and hand any
  detections to the agent
- control deliveries, hello timers, and periodic staleness sweeps

Randomness is split into independent seeded streams (clocks, control
channel, path jitter, per-device noise) so event interleaving cannot
perturb any of them.
"""

from __future__ import annotations

import heapq
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..dsp import DetectorConfig, PulseDetector, PulseTemplate, SampleBuffer
from ..ranging import DeviceClock, RangingConfig
from .agent import AgentConfig, DeviceAgent
from .channel import AcousticLink, ControlChannel, add_arrival, arrivals_for_link
from .trajectory import Trajectory

__all__ = ["DeviceSpec", "WorldConfig", "Observations", "World"]


@dataclass(frozen=True)
class DeviceSpec:
    device_id: str
    trajectory: Trajectory
    sample_rate_hz: float = 48000.0
    clock: DeviceClock = DeviceClock()
    tx_amplitude: float = 1.0
    noise_rms: float = 0.0


@dataclass(frozen=True)
class WorldConfig:
    duration_s: float = 10.0
    slot_duration_s: float = 0.2
    speed_of_sound_mps: float = 343.0
    block_samples: int = 2048
    audible_cutoff_m: float = 5.25      # also the conflict radius devices assume
    tx_offset_s: float = 0.010
    hello_interval_s: float = 0.5
    sweep_interval_s: float = 0.25
    warmup_s: float = 0.6
    control_latency_min_s: float = 0.005
    control_latency_max_s: float = 0.030
    control_loss_probability: float = 0.0
    radio_range_m: float = 50.0
    ranging: RangingConfig = RangingConfig()
    detector: DetectorConfig = DetectorConfig()
    pulse: PulseTemplate | None = None  # None: per-device default at its rate


class EstimateRecord(tuple):
    __slots__ = ()

    def __new__(cls, t_s, initiator, responder, est_m, true_m):
        return tuple.__new__(cls, (t_s, initiator, responder, est_m, true_m))

    t_s = property(lambda s: s[0])
    initiator = property(lambda s: s[1])
    responder = property(lambda s: s[2])
    est_m = property(lambda s: s[3])
    true_m = property(lambda s: s[4])


class AlertRecord(tuple):
    __slots__ = ()

    def __new__(cls, t_s, device, neighbor, est_m, true_m):
        return tuple.__new__(cls, (t_s, device, neighbor, est_m, true_m))

    t_s = property(lambda s: s[0])
    device = property(lambda s: s[1])
    neighbor = property(lambda s: s[2])
    est_m = property(lambda s: s[3])
    true_m = property(lambda s: s[4])


@dataclass
class Observations:
    estimates: list = field(default_factory=list)
    alerts: list = field(default_factory=list)
    counters: Counter = field(default_factory=Counter)
    streams: dict = field(default_factory=dict)   # id -> SampleBuffer (optional)


class _SimDevice:
    def __init__(self, spec: DeviceSpec, template: PulseTemplate,
                 detector_cfg: DetectorConfig, noise_rng: np.random.Generator,
                 record: bool):
        self.spec = spec
        self.template = template
        self.clock = spec.clock
        self.fs = spec.sample_rate_hz
        self.origin_local = spec.clock.local_time(0.0)
        self.detector = PulseDetector(template, detector_cfg,
                                      origin_time_s=self.origin_local)
        self.noise_rng = noise_rng
        self.record = record
        self.recorded: list[np.ndarray] = []
        self.blocks_done = 0
        self.mix_base = 0
        self.mix = np.zeros(0)

    def local_sample_of(self, true_time_s: float) -> float:
        return (self.clock.local_time(true_time_s) - self.origin_local) * self.fs

    def block_end_true(self, block_index: int, block_samples: int) -> float:
        local_end = self.origin_local + (block_index + 1) * block_samples / self.fs
        return self.clock.true_time(local_end)

    def ensure_mix(self, upto: int) -> None:
        need = upto - self.mix_base - len(self.mix)
        if need > 0:
            self.mix = np.concatenate((self.mix, np.zeros(max(need, 4096))))

    def mix_arrival(self, tx_template: PulseTemplate, pos: float, amp: float) -> None:
        n_rx = math.ceil(tx_template.length_samples * self.fs
                         / tx_template.sample_rate_hz)
        self.ensure_mix(math.ceil(pos) + n_rx + 512)
        add_arrival(self.mix, self.mix_base, tx_template, self.fs, pos, amp)

    def pop_block(self, block_samples: int) -> np.ndarray:
        b0 = self.blocks_done * block_samples
        b1 = b0 + block_samples
        self.ensure_mix(b1)
        out = self.mix[b0 - self.mix_base : b1 - self.mix_base].copy()
        if self.spec.noise_rms > 0:
            out += self.noise_rng.normal(0.0, self.spec.noise_rms, block_samples)
        self.mix = self.mix[b1 - self.mix_base :]
        self.mix_base = b1
        self.blocks_done += 1
        if self.record:
            self.recorded.append(out)
        return out


class _AgentServices:
    def __init__(self, world: "World", device_id: str):
        self._world = world
        self._id = device_id

    def broadcast(self, payload) -> None:
        self._world._send_control(self._id, None, payload)

    def send(self, dst: str, payload) -> None:
        self._world._send_control(self._id, dst, payload)

    def emit_pulse(self, seq: int) -> None:
        world = self._world
        t_emit = world.now + world.config.tx_offset_s
        world._schedule(t_emit, lambda: world._emit(self._id, seq))

    def record_estimate(self, responder, seq_a, seq_b, est_m) -> None:
        self._world._record_estimate(self._id, responder, seq_a, seq_b, est_m)

    def record_alert(self, neighbor, est_m) -> None:
        self._world._record_alert(self._id, neighbor, est_m)

    def count(self, name: str) -> None:
        self._world.observations.counters[name] += 1


class World:
    def __init__(self, devices: list[DeviceSpec], links: dict | None = None,
                 config: WorldConfig | None = None, seed: int = 0,
                 record_streams: bool = False):
        self.config = config or WorldConfig()
        self.seed = seed
        self.now = 0.0
        self.observations = Observations()
        self._queue: list = []
        self._eventseq = 0
        self._pulse_registry: dict = {}

        root = np.random.SeedSequence(seed)
        ss_control, ss_jitter, ss_noise = root.spawn(3)
        self._ctrl_rng = np.random.default_rng(ss_control)
        self._jitter_rng = np.random.default_rng(ss_jitter)
        noise_seeds = ss_noise.spawn(len(devices))

        self.control = ControlChannel(
            latency_min_s=self.config.control_latency_min_s,
            latency_max_s=self.config.control_latency_max_s,
            loss_probability=self.config.control_loss_probability,
            radio_range_m=self.config.radio_range_m,
        )
        self.links: dict = {frozenset(k): v for k, v in (links or {}).items()}

        flight_max = self.config.audible_cutoff_m / self.config.speed_of_sound_mps
        agent_cfg = AgentConfig(
            slot_duration_s=self.config.slot_duration_s,
            tx_offset_s=self.config.tx_offset_s,
            hello_interval_s=self.config.hello_interval_s,
            warmup_s=self.config.warmup_s,
            radio_expiry_s=3.2 * self.config.hello_interval_s,
            window_early_s=self.config.control_latency_max_s + 0.015,
            window_late_s=flight_max + 0.015,
            plausible_max_factor=2.0,
        )

        self.devices: dict[str, _SimDevice] = {}
        self.agents: dict[str, DeviceAgent] = {}
        specs = sorted(devices, key=lambda s: s.device_id)
        if len({s.device_id for s in specs}) != len(specs):
            raise ValueError("device ids must be unique")
        for i, spec in enumerate(specs):
            template = self.config.pulse
            if template is None or template.sample_rate_hz != spec.sample_rate_hz:
                template = PulseTemplate(sample_rate_hz=spec.sample_rate_hz)
            dev = _SimDevice(spec, template, self.config.detector,
                             np.random.default_rng(noise_seeds[i]), record_streams)
            self.devices[spec.device_id] = dev
            self.agents[spec.device_id] = DeviceAgent(
                spec.device_id, spec.clock, self.config.ranging, agent_cfg,
                _AgentServices(self, spec.device_id))

        # recurring event seeds
        self._schedule(0.0, lambda: self._slot_tick(0))
        self._schedule(self.config.sweep_interval_s, lambda: self._sweep(1))
        for i, dev_id in enumerate(sorted(self.devices)):
            phase = 0.05 + i * self.config.hello_interval_s / max(len(self.devices), 1)
            self._schedule(phase, self._hello_fn(dev_id, 0))
            dev = self.devices[dev_id]
            self._schedule(dev.block_end_true(0, self.config.block_samples),
                           self._block_fn(dev_id, 0))

    # ------------------------------------------------------------------ events

    def _schedule(self, t: float, fn) -> None:
        if t < self.now:
            raise RuntimeError(f"event scheduled in the past: {t} < {self.now}")
        self._eventseq += 1
        heapq.heappush(self._queue, (t, self._eventseq, fn))

    def advance(self, until_true_time_s: float) -> None:
        if until_true_time_s < self.now:
            raise ValueError("cannot advance backwards")
        while self._queue and self._queue[0][0] <= until_true_time_s:
            t, _, fn = heapq.heappop(self._queue)
            if t < self.now:
                raise RuntimeError("event queue corrupted: non-monotonic time")
            self.now = t
            fn()
        self.now = until_true_time_s

    def run(self) -> Observations:
        self.advance(self.config.duration_s)
        for dev_id in sorted(self.devices):
            dev = self.devices[dev_id]
            if dev.record:
                samples = (np.concatenate(dev.recorded)
                           if dev.recorded else np.zeros(0))
                self.observations.streams[dev_id] = SampleBuffer(
                    samples, dev.fs, origin_time_s=dev.origin_local)
        return self.observations

    def _slot_tick(self, k: int) -> None:
        t = self.now
        for dev_id in sorted(self.agents):
            self.agents[dev_id].on_slot_tick(t, k)
        self._schedule((k + 1) * self.config.slot_duration_s,
                       lambda: self._slot_tick(k + 1))

    def _sweep(self, k: int) -> None:
        for dev_id in sorted(self.agents):
            self.agents[dev_id].on_sweep(self.now)
        self._schedule((k + 1) * self.config.sweep_interval_s,
                       lambda: self._sweep(k + 1))

    def _hello_fn(self, dev_id: str, k: int):
        def fire():
            self.agents[dev_id].on_hello_timer(self.now)
            self._schedule(self.now + self.config.hello_interval_s,
                           self._hello_fn(dev_id, k + 1))
        return fire

    def _block_fn(self, dev_id: str, block_index: int):
        def fire():
            dev = self.devices[dev_id]
            block = dev.pop_block(self.config.block_samples)
            events = dev.detector.feed(block)
            agent = self.agents[dev_id]
            for ev in events:
                self.observations.counters["detections_total"] += 1
                agent.on_detection(ev)
            self._schedule(dev.block_end_true(block_index + 1, self.config.block_samples),
                           self._block_fn(dev_id, block_index + 1))
        return fire

    # ------------------------------------------------------------------ physics

    def position_of(self, dev_id: str, t: float) -> tuple:
        return self.devices[dev_id].spec.trajectory.position_at(t)

    def true_distance(self, a: str, b: str, t: float) -> float:
        return math.dist(self.position_of(a, t), self.position_of(b, t))

    def link_for(self, a: str, b: str) -> AcousticLink:
        return self.links.get(frozenset((a, b)), _DEFAULT_LINK)

    def _emit(self, tx_id: str, seq: int) -> None:
        t_e = self.now
        self._pulse_registry[(tx_id, seq)] = t_e
        tx = self.devices[tx_id]
        for rx_id in sorted(self.devices):
            rx = self.devices[rx_id]
            if rx_id == tx_id:
                # self-pulse: near-zero delay, full amplitude
                pos = rx.local_sample_of(t_e)
                rx.mix_arrival(tx.template, pos, tx.spec.tx_amplitude)
                continue
            d = self.true_distance(tx_id, rx_id, t_e)
            if d > self.config.audible_cutoff_m:
                continue
            link = self.link_for(tx_id, rx_id)
            for delay, amp in arrivals_for_link(
                    link, d, tx.spec.tx_amplitude,
                    self.config.speed_of_sound_mps, self._jitter_rng):
                pos = rx.local_sample_of(t_e + delay)
                rx.mix_arrival(tx.template, pos, amp)

    # ------------------------------------------------------------------ control

    def _send_control(self, src: str, dst: str | None, payload) -> None:
        targets = [dst] if dst is not None else [d for d in sorted(self.devices)
                                                 if d != src]
        for target in targets:
            self.observations.counters["control_sent"] += 1
            d = self.true_distance(src, target, self.now)
            t_del = self.control.delivery_time(src, target, self.now, d,
                                               self._ctrl_rng)
            if t_del is None:
                self.observations.counters["control_dropped"] += 1
                continue
            agent = self.agents[target]
            self._schedule(t_del, lambda a=agent, p=payload: a.on_control(p, self.now))

    # ------------------------------------------------------------------ records

    def _record_estimate(self, initiator, responder, seq_a, seq_b, est_m) -> None:
        te_a = self._pulse_registry.get((initiator, seq_a))
        te_b = self._pulse_registry.get((responder, seq_b))
        if te_a is None or te_b is None:
            self.observations.counters["estimates_unregistered"] += 1
            return
        t_mid = 0.5 * (te_a + te_b)
        true_d = self.true_distance(initiator, responder, t_mid)
        self.observations.estimates.append(
            EstimateRecord(self.now, initiator, responder, est_m, true_d))

    def _record_alert(self, device, neighbor, est_m) -> None:
        true_d = self.true_distance(device, neighbor, self.now)
        self.observations.alerts.append(
            AlertRecord(self.now, device, neighbor, est_m, true_d))


_DEFAULT_LINK = AcousticLink()
