"""Scenario files: a strict TOML schema describing a simulated world.

Every knob a run depends on lives in the scenario (devices, clocks, links,
noise, control model, protocol timing), so a scenario plus a seed pins the
whole experiment. Validation is strict: unknown keys are errors, as are
references to undeclared devices.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .dsp import DetectorConfig
from .ranging import DeviceClock, RangingConfig
from .sim import AcousticLink, ChannelPath, DeviceSpec, Trajectory, World, WorldConfig

__all__ = [
    "ScenarioError",
    "ScenarioConfig",
    "load_scenario",
    "load_scenario_text",
    "load_preset",
    "list_presets",
    "preset_text",
]

NOISE_PRESETS = {
    "none": 0.0,
    "quiet": 0.0008,
    "office": 0.004,
    "noisy": 0.012,
    "windy": 0.030,
}

RANDOM = "random"
CLOCK_OFFSET_RANGE_S = 1000.0
CLOCK_DRIFT_RANGE_PPM = 50.0


class ScenarioError(ValueError):
    """Scenario file rejected: parse failure, schema violation or dangling
    reference. The message names the offending key or field."""


@dataclass(frozen=True)
class DeviceDecl:
    device_id: str
    trajectory: Trajectory
    sample_rate_hz: float = 48000.0
    clock_offset_s: float | str = RANDOM
    clock_drift_ppm: float | str = RANDOM
    tx_amplitude: float = 1.0
    noise_rms: float | None = None      # None: scenario-wide noise level


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    duration_s: float
    seed: int = 1
    replicates: int = 1
    record_streams: bool = False
    description: str = ""
    devices: tuple = ()
    links: dict = field(default_factory=dict)
    ambient_rms: float = 0.0
    world: WorldConfig = WorldConfig()

    def build_world(self, seed: int | None = None,
                    record_streams: bool | None = None) -> World:
        """Instantiate a deterministic world; 'random' clocks resolve here."""
        use_seed = self.seed if seed is None else seed
        record = self.record_streams if record_streams is None else record_streams
        clock_rng = np.random.default_rng(np.random.SeedSequence((use_seed, 0xC10C)))
        specs = []
        for d in self.devices:
            offset = d.clock_offset_s
            if offset == RANDOM:
                offset = float(clock_rng.uniform(-CLOCK_OFFSET_RANGE_S,
                                                 CLOCK_OFFSET_RANGE_S))
            drift = d.clock_drift_ppm
            if drift == RANDOM:
                drift = float(clock_rng.uniform(-CLOCK_DRIFT_RANGE_PPM,
                                                CLOCK_DRIFT_RANGE_PPM))
            noise = self.ambient_rms if d.noise_rms is None else d.noise_rms
            specs.append(DeviceSpec(
                device_id=d.device_id,
                trajectory=d.trajectory,
                sample_rate_hz=d.sample_rate_hz,
                clock=DeviceClock(offset_s=offset, drift_ppm=drift),
                tx_amplitude=d.tx_amplitude,
                noise_rms=noise,
            ))
        world_cfg = self.world
        if world_cfg.duration_s != self.duration_s:
            world_cfg = _replace_dataclass(world_cfg, duration_s=self.duration_s)
        return World(specs, links=self.links, config=world_cfg, seed=use_seed,
                     record_streams=record)


def _replace_dataclass(obj, **kw):
    import dataclasses
    return dataclasses.replace(obj, **kw)


# ---------------------------------------------------------------------------
# parsing


def _require(table: dict, context: str, required: tuple, optional: tuple) -> None:
    for key in table:
        if key not in required and key not in optional:
            raise ScenarioError(f"unknown key '{context}.{key}'" if context
                                else f"unknown key '{key}'")
    for key in required:
        if key not in table:
            raise ScenarioError(f"missing required key "
                                f"'{context + '.' if context else ''}{key}'")


def _number(table, context, key, default=None, minimum=None):
    if key not in table:
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"'{context}.{key}' must be a number, got {v!r}")
    if minimum is not None and v < minimum:
        raise ScenarioError(f"'{context}.{key}' must be >= {minimum}, got {v}")
    return float(v)


def _parse_trajectory(tab: dict, ctx: str) -> Trajectory:
    has_pos = "position" in tab
    has_traj = "trajectory" in tab
    if has_pos == has_traj:
        raise ScenarioError(f"{ctx}: give exactly one of 'position' or 'trajectory'")
    try:
        if has_pos:
            p = tab["position"]
            if len(p) != 3:
                raise ScenarioError(f"{ctx}.position must have 3 coordinates")
            return Trajectory.stationary(tuple(float(c) for c in p))
        wps = tab["trajectory"]
        return Trajectory(tuple((float(w[0]), (float(w[1]), float(w[2]), float(w[3])))
                                for w in wps))
    except ScenarioError:
        raise
    except (TypeError, ValueError, IndexError) as exc:
        raise ScenarioError(f"{ctx}: bad trajectory/position: {exc}") from exc


def _parse_clock_field(tab, ctx, key, default):
    v = tab.get(key, default)
    if v == RANDOM:
        return RANDOM
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"'{ctx}.{key}' must be a number or \"{RANDOM}\"")
    return float(v)


def _parse_device(tab: dict, index: int) -> DeviceDecl:
    ctx = f"devices[{index}]"
    _require(tab, ctx, required=("id",),
             optional=("position", "trajectory", "sample_rate_hz",
                       "clock_offset_s", "clock_drift_ppm", "tx_amplitude",
                       "noise_rms"))
    dev_id = tab["id"]
    if not isinstance(dev_id, str) or not dev_id:
        raise ScenarioError(f"{ctx}.id must be a non-empty string")
    rate = _number(tab, ctx, "sample_rate_hz", 48000.0, minimum=8000.0)
    if rate not in (44100.0, 48000.0):
        raise ScenarioError(f"{ctx}.sample_rate_hz must be 44100 or 48000, got {rate}")
    return DeviceDecl(
        device_id=dev_id,
        trajectory=_parse_trajectory(tab, ctx),
        sample_rate_hz=rate,
        clock_offset_s=_parse_clock_field(tab, ctx, "clock_offset_s", RANDOM),
        clock_drift_ppm=_parse_clock_field(tab, ctx, "clock_drift_ppm", RANDOM),
        tx_amplitude=_number(tab, ctx, "tx_amplitude", 1.0, minimum=1e-9),
        noise_rms=_number(tab, ctx, "noise_rms", None, minimum=0.0),
    )


def _parse_path(tab: dict, ctx: str) -> ChannelPath:
    _require(tab, ctx, required=("kind",),
             optional=("extra_path_length_m", "gain", "jitter_m"))
    kind = tab["kind"]
    jitter = tab.get("jitter_m")
    if jitter is not None:
        try:
            jitter = (float(jitter[0]), float(jitter[1]))
        except (TypeError, ValueError, IndexError) as exc:
            raise ScenarioError(f"{ctx}.jitter_m must be [lo, hi]") from exc
    try:
        return ChannelPath(
            kind=kind,
            extra_path_length_m=_number(tab, ctx, "extra_path_length_m", 0.0),
            gain_factor=_number(tab, ctx, "gain", 1.0),
            extra_jitter_m=jitter,
        )
    except ValueError as exc:
        raise ScenarioError(f"{ctx}: {exc}") from exc


def _parse_link(tab: dict, index: int, device_ids: set) -> tuple:
    ctx = f"links[{index}]"
    _require(tab, ctx, required=("pair",),
             optional=("obstruction", "attenuation_db", "paths"))
    pair = tab["pair"]
    if (not isinstance(pair, list) or len(pair) != 2
            or not all(isinstance(p, str) for p in pair)):
        raise ScenarioError(f"{ctx}.pair must be a list of two device ids")
    for p in pair:
        if p not in device_ids:
            raise ScenarioError(f"{ctx}.pair references undeclared device '{p}'")
    if pair[0] == pair[1]:
        raise ScenarioError(f"{ctx}.pair must name two distinct devices")
    paths = tuple(_parse_path(p, f"{ctx}.paths[{i}]")
                  for i, p in enumerate(tab.get("paths", [])))
    if not paths:
        paths = (ChannelPath(),)
    try:
        link = AcousticLink(
            paths=paths,
            obstruction=tab.get("obstruction", "none"),
            attenuation_db=_number(tab, ctx, "attenuation_db", 0.0),
        )
    except ValueError as exc:
        raise ScenarioError(f"{ctx}: {exc}") from exc
    return frozenset(pair), link


_WORLD_KEYS = ("slot_duration_s", "speed_of_sound_mps", "block_samples",
               "audible_range_m", "tx_offset_s", "hello_interval_s",
               "warmup_s")
_RANGING_KEYS = ("tolerance_m", "close_range_m", "staleness_horizon_s",
                 "alert_hysteresis")
_CONTROL_KEYS = ("latency_min_s", "latency_max_s", "loss_probability",
                 "radio_range_m")
_DETECTOR_KEYS = tuple(f.name for f in fields(DetectorConfig))


def load_scenario_text(text: str, name_hint: str = "scenario") -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"parse error: {exc}") from exc
    _require(data, "", required=("name", "duration_s", "devices"),
             optional=("description", "seed", "replicates", "record_streams",
                       "world", "ranging", "control", "detector", "noise",
                       "links"))
    name = data["name"]
    if not isinstance(name, str) or not name:
        raise ScenarioError("'name' must be a non-empty string")
    duration = _number(data, "", "duration_s", minimum=1e-3)
    seed = data.get("seed", 1)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScenarioError("'seed' must be an integer")
    replicates = data.get("replicates", 1)
    if isinstance(replicates, bool) or not isinstance(replicates, int) or replicates < 1:
        raise ScenarioError("'replicates' must be a positive integer")
    record = data.get("record_streams", False)
    if not isinstance(record, bool):
        raise ScenarioError("'record_streams' must be a boolean")
    description = data.get("description", "")

    devices_tab = data["devices"]
    if not isinstance(devices_tab, list) or not devices_tab:
        raise ScenarioError("'devices' must be a non-empty array of tables")
    devices = tuple(_parse_device(d, i) for i, d in enumerate(devices_tab))
    ids = [d.device_id for d in devices]
    if len(set(ids)) != len(ids):
        raise ScenarioError("device ids must be unique")

    links = {}
    for i, tab in enumerate(data.get("links", [])):
        key, link = _parse_link(tab, i, set(ids))
        if key in links:
            raise ScenarioError(f"links[{i}]: duplicate link for pair {sorted(key)}")
        links[key] = link

    noise_tab = data.get("noise", {})
    _require(noise_tab, "noise", required=(), optional=("preset", "ambient_rms"))
    if "preset" in noise_tab and "ambient_rms" in noise_tab:
        raise ScenarioError("'noise': give either preset or ambient_rms, not both")
    if "preset" in noise_tab:
        preset = noise_tab["preset"]
        if preset not in NOISE_PRESETS:
            raise ScenarioError(
                f"'noise.preset' must be one of {sorted(NOISE_PRESETS)}, got {preset!r}")
        ambient = NOISE_PRESETS[preset]
    else:
        ambient = _number(noise_tab, "noise", "ambient_rms", 0.0, minimum=0.0)

    world_tab = data.get("world", {})
    _require(world_tab, "world", required=(), optional=_WORLD_KEYS)
    ranging_tab = data.get("ranging", {})
    _require(ranging_tab, "ranging", required=(), optional=_RANGING_KEYS)
    control_tab = data.get("control", {})
    _require(control_tab, "control", required=(), optional=_CONTROL_KEYS)
    detector_tab = data.get("detector", {})
    _require(detector_tab, "detector", required=(), optional=_DETECTOR_KEYS)

    try:
        ranging = RangingConfig(
            speed_of_sound_mps=_number(world_tab, "world", "speed_of_sound_mps", 343.0),
            tolerance_m=_number(ranging_tab, "ranging", "tolerance_m", 2.0),
            close_range_m=_number(ranging_tab, "ranging", "close_range_m", 3.5),
            staleness_horizon_s=_number(ranging_tab, "ranging",
                                        "staleness_horizon_s", 5.0),
            alert_hysteresis=int(_number(ranging_tab, "ranging",
                                         "alert_hysteresis", 1, minimum=1)),
        )
        detector_kwargs = {}
        for key in _DETECTOR_KEYS:
            if key in detector_tab:
                default = getattr(DetectorConfig(), key)
                value = detector_tab[key]
                detector_kwargs[key] = type(default)(value)
        detector = DetectorConfig(**detector_kwargs)
        audible_default = 1.5 * ranging.close_range_m
        world = WorldConfig(
            duration_s=duration,
            slot_duration_s=_number(world_tab, "world", "slot_duration_s", 0.2,
                                    minimum=0.01),
            speed_of_sound_mps=ranging.speed_of_sound_mps,
            block_samples=int(_number(world_tab, "world", "block_samples", 2048,
                                      minimum=256)),
            audible_cutoff_m=_number(world_tab, "world", "audible_range_m",
                                     audible_default, minimum=0.1),
            tx_offset_s=_number(world_tab, "world", "tx_offset_s", 0.010),
            hello_interval_s=_number(world_tab, "world", "hello_interval_s", 0.5,
                                     minimum=0.05),
            warmup_s=_number(world_tab, "world", "warmup_s", 0.6, minimum=0.0),
            control_latency_min_s=_number(control_tab, "control",
                                          "latency_min_s", 0.005, minimum=0.0),
            control_latency_max_s=_number(control_tab, "control",
                                          "latency_max_s", 0.030),
            control_loss_probability=_number(control_tab, "control",
                                             "loss_probability", 0.0, minimum=0.0),
            radio_range_m=_number(control_tab, "control", "radio_range_m", 50.0,
                                  minimum=0.1),
            ranging=ranging,
            detector=detector,
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc

    return ScenarioConfig(
        name=name, duration_s=duration, seed=seed, replicates=replicates,
        record_streams=record, description=description, devices=devices,
        links=links, ambient_rms=ambient, world=world,
    )


def load_scenario(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {p}: {exc}") from exc
    return load_scenario_text(text, name_hint=p.stem)


# ---------------------------------------------------------------------------
# shipped presets


def list_presets() -> list[str]:
    pkg = resources.files("ultrarange.presets")
    return sorted(p.name[: -len(".toml")] for p in pkg.iterdir()
                  if p.name.endswith(".toml"))


def preset_text(name: str) -> str:
    pkg = resources.files("ultrarange.presets")
    f = pkg / f"{name}.toml"
    if not f.is_file():
        raise ScenarioError(
            f"unknown preset '{name}'; available: {', '.join(list_presets())}")
    return f.read_text()


def load_preset(name: str) -> ScenarioConfig:
    return load_scenario_text(preset_text(name), name_hint=name)
