"""Deterministic discrete-event acoustic/network simulator."""

from .agent import AgentConfig, DeviceAgent
from .channel import AcousticLink, ChannelPath, ControlChannel, arrivals_for_link
from .trajectory import Trajectory, distance_between, first_time_within, position_at
from .world import DeviceSpec, Observations, World, WorldConfig

__all__ = [
    "AgentConfig",
    "DeviceAgent",
    "AcousticLink",
    "ChannelPath",
    "ControlChannel",
    "arrivals_for_link",
    "Trajectory",
    "distance_between",
    "first_time_within",
    "position_at",
    "DeviceSpec",
    "Observations",
    "World",
    "WorldConfig",
]
