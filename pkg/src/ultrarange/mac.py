"""Decentralized slot scheduling: who may pulse when.

Two devices conflict when some listener could hear both of them, in which
case simultaneous pulses would be unattributable. The conflict graph is the
audibility relation plus its common-listener closure (two devices that share
an audible third party conflict even if they cannot hear each other). A
deterministic greedy coloring in ascending device-id order maps devices to
time slots; disconnected clusters naturally reuse the same slots, which is
what makes the frame length track local cluster size instead of the global
population.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

__all__ = [
    "ConflictGraph",
    "SlotSchedule",
    "MembershipEvent",
    "audibility_from_positions",
    "build_conflict_graph",
    "assign_slots",
    "update_membership",
    "next_transmitters",
]

log = logging.getLogger(__name__)

DEFAULT_SLOT_DURATION_S = 0.2


@dataclass(frozen=True)
class ConflictGraph:
    vertices: frozenset
    edges: frozenset  # of frozenset pairs

    def has_edge(self, u, v) -> bool:
        return frozenset((u, v)) in self.edges

    def neighbors(self, u) -> set:
        return {next(iter(e - {u})) for e in self.edges if u in e}

    def degree(self, u) -> int:
        return sum(1 for e in self.edges if u in e)


def audibility_from_positions(positions: Mapping[str, tuple], range_m: float) -> dict:
    """Symmetric who-hears-whom relation from positions and an audio range."""
    ids = sorted(positions)
    rel: dict = {i: set() for i in ids}
    for a_idx, a in enumerate(ids):
        pa = positions[a]
        for b in ids[a_idx + 1 :]:
            pb = positions[b]
            d = math.dist(pa, pb)
            if d <= range_m:
                rel[a].add(b)
                rel[b].add(a)
    return rel


def build_conflict_graph(audible: Mapping[str, Iterable[str]]) -> ConflictGraph:
    """Conflict edges: directly audible pairs plus common-listener pairs."""
    vertices = set(audible)
    for others in audible.values():
        vertices.update(others)
    adj = {v: set() for v in vertices}
    for u, others in audible.items():
        for v in others:
            if v != u:
                adj[u].add(v)
                adj[v].add(u)  # enforce symmetry defensively
    edges = set()
    verts = sorted(vertices)
    for i, u in enumerate(verts):
        for v in verts[i + 1 :]:
            if v in adj[u] or (adj[u] & adj[v]) - {u, v}:
                edges.add(frozenset((u, v)))
    return ConflictGraph(frozenset(vertices), frozenset(edges))


@dataclass(frozen=True)
class SlotSchedule:
    assignment: Mapping[str, int] = field(default_factory=dict)
    frame_length: int = 1
    slot_duration_s: float = DEFAULT_SLOT_DURATION_S

    def devices_in_slot(self, slot: int) -> tuple:
        return tuple(sorted(d for d, s in self.assignment.items() if s == slot))

    @property
    def frame_duration_s(self) -> float:
        return self.frame_length * self.slot_duration_s


def assign_slots(graph: ConflictGraph,
                 slot_duration_s: float = DEFAULT_SLOT_DURATION_S) -> SlotSchedule:
    """Greedy coloring in ascending device-id order; conflict-free and
    deterministic, with frame length at most max-degree + 1."""
    assignment: dict[str, int] = {}
    for dev in sorted(graph.vertices):
        taken = {assignment[o] for o in graph.neighbors(dev) if o in assignment}
        slot = 0
        while slot in taken:
            slot += 1
        assignment[dev] = slot
    frame = 1 + max(assignment.values(), default=0)
    return SlotSchedule(dict(assignment), frame, slot_duration_s)


class MembershipEvent:
    JOIN = "join"
    LEAVE = "leave"

    def __init__(self, kind: str, device_id: str):
        if kind not in (self.JOIN, self.LEAVE):
            raise ValueError(f"unknown membership event kind {kind!r}")
        self.kind = kind
        self.device_id = device_id


def update_membership(schedule: SlotSchedule, graph: ConflictGraph,
                      event: MembershipEvent) -> SlotSchedule:
    """Recompute the schedule after a join/leave against the updated graph.

    A duplicate join or an unknown leave is an idempotent no-op (logged);
    the input schedule is returned unchanged.
    """
    if event.kind == MembershipEvent.JOIN and event.device_id in schedule.assignment:
        log.warning("duplicate join for %s ignored", event.device_id)
        return schedule
    if event.kind == MembershipEvent.LEAVE and event.device_id not in schedule.assignment:
        log.warning("leave for unknown device %s ignored", event.device_id)
        return schedule
    return assign_slots(graph, schedule.slot_duration_s)


def next_transmitters(schedule: SlotSchedule, now_s: float) -> tuple:
    """Devices permitted to transmit in the slot containing ``now_s``.

    Devices sharing the returned slot are mutually conflict-free by
    construction of the schedule.
    """
    if not schedule.assignment:
        return ()
    slot = int(now_s // schedule.slot_duration_s) % schedule.frame_length
    return schedule.devices_in_slot(slot)
