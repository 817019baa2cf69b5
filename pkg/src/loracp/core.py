"""Shared vocabulary: channels, frames, scenario configuration and seeded streams.

Simulated time is carried as integer milliseconds (``SimTime``).  Quantities
that need sub-millisecond resolution, such as clock offsets, travel alongside
as floats.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

__version__ = "0.1.0"

SimTime = int
NodeId = int

BROADCAST: NodeId = -1
MAX_CONTROL_PAYLOAD = 51
MIN_SF, MAX_SF = 7, 12


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class ChannelRole(str, enum.Enum):
    TDMA = "TDMA"
    URGENT = "URGENT"


class FrameKind(str, enum.Enum):
    DATA = "DATA"
    BEACON = "BEACON"
    REPORT = "REPORT"
    HEARTBEAT = "HEARTBEAT"
    COMMAND = "COMMAND"
    NAK = "NAK"
    ACK = "ACK"


UPLINK = "up"
DOWNLINK = "down"


@dataclass(frozen=True)
class Channel:
    sf: int
    role: ChannelRole = ChannelRole.TDMA
    slot_length_s: float | None = None


@dataclass
class Frame:
    src: NodeId
    dst: NodeId
    kind: FrameKind
    payload_bytes: int
    counter: int | None = None
    direction: str | None = None
    piggyback_t0: float | None = None
    piggyback_delta: float | None = None
    body: dict[str, Any] = field(default_factory=dict)
    urgent: bool = False

    def __post_init__(self) -> None:
        if self.payload_bytes < 0:
            raise ValueError("payload_bytes must be >= 0")
        if self.dst == BROADCAST and self.kind is not FrameKind.BEACON:
            raise ValueError("only data-plane beacons may be broadcast")


class FrameCounters:
    """Per (node, direction) counters; each ``next`` call yields 0, 1, 2, ..."""

    def __init__(self) -> None:
        self._next: dict[tuple[NodeId, str], int] = {}

    def next(self, node: NodeId, direction: str) -> int:
        key = (node, direction)
        value = self._next.get(key, 0)
        self._next[key] = value + 1
        return value

    def peek(self, node: NodeId, direction: str) -> int:
        return self._next.get((node, direction), 0)


# --------------------------------------------------------------------------
# Scenario configuration


@dataclass
class ChannelConfig:
    sf: int
    role: str = "TDMA"
    slot_length_s: float | None = None


@dataclass
class NodeConfig:
    id: int
    position: tuple[float, float]
    tdma_sf: int | None = None
    data_period_s: float = 8.0
    clock_drift_ppm: float = 0.0
    initial_clock_offset_ms: float = 0.0


@dataclass
class RootConfig:
    id: int = 0
    position: tuple[float, float] = (0.0, 0.0)


@dataclass
class RegionConfig:
    width_m: float = 200.0
    height_m: float = 200.0


@dataclass
class MacConfig:
    heartbeat_period: int = 10
    wait_time_s: float = 1.0
    guard_s: float = 0.1
    wake_lead_s: float = 0.85
    wake_latency_mean_ms: float = 826.9
    wake_latency_sd_ms: float = 0.044
    queue_capacity: int = 8
    nak: bool = True
    rx2_fallback: bool = False
    rx_window_symbols: int = 8
    urgent_max_attempts: int = 5
    max_frame_bytes: int = MAX_CONTROL_PAYLOAD
    report_header_bytes: int = 7
    report_entry_bytes: int = 3
    heartbeat_bytes: int = 7
    command_bytes: int = 9
    ack_bytes: int = 5
    heartbeat_sync: bool = True
    report_threshold: float = 0.5
    urgent_report_threshold: float | None = None
    liveness_slack_slots: int = 1


@dataclass
class WorkloadConfig:
    report_every_slot: bool = False
    report_bytes: int = 20
    reply_probability: float | None = None
    reply_bytes: tuple[int, int] = (29, 33)
    urgent_rate_per_hour: float = 0.0
    # (node, rotation) pairs whose scheduled uplink is forced lost
    scripted_losses: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class ClockConfig:
    noise_sigma_ms: float = 1.7
    noise_truncation: float = 3.0
    rate_feedback: bool = False
    rate_gain: float = 0.5


@dataclass
class CtpConfig:
    beacon_interval_s: float = 8.0
    beacon_jitter: float = 0.1
    alpha: float = 0.9
    etx_max: float = 20.0
    epsilon: float = 0.05
    staleness_beacons: int = 3
    max_attempts: int = 5
    ttl: int = 32


@dataclass
class ControllerConfig:
    position: tuple[float, float] | None = None
    recompute_threshold: float = 0.1
    ideal_report_threshold: float = 0.0


@dataclass
class DataPlaneConfig:
    frame_bytes: int = 40
    airtime_ms: int = 4
    tx_power_dbm: float = 0.0
    pl_d0_db: float = 40.0
    path_loss_exponent: float = 3.0
    shadowing_sigma_db: float = 4.0
    noise_floor_dbm: float = -90.0
    snr50_db: float = 4.0
    snr_width_db: float = 1.5
    interference_k_db: float = 0.1
    fluct_base_sd_db: float = 0.5
    fluct_per_unit_db: float = 0.04
    fluct_tau_s: float = 30.0
    min_link_prr: float = 0.05


@dataclass
class InterferencePhase:
    start_s: float
    setpoint: float


@dataclass
class InterferenceConfig:
    schedule: list[InterferencePhase] = field(default_factory=list)
    jitter: bool = True
    step_s: float = 10.0
    source: tuple[float, float] | None = None
    coupling_range_m: float = 50.0
    coupling_floor: float = 0.3


@dataclass
class CurrentsConfig:
    tx_current: float = 39.5
    rx_current: float = 14.2
    sleep_current: float = 0.0016
    supply_voltage: float = 3.3


@dataclass
class PhyConfig:
    bandwidth: int = 125000
    preamble_symbols: int = 8
    loss_table: dict[str, list[tuple[float, float]]] | None = None
    currents: CurrentsConfig = field(default_factory=CurrentsConfig)


@dataclass
class MetricsConfig:
    bucket_s: float = 10.0
    trace_events: bool = False


@dataclass
class FailureConfig:
    node: int
    at_s: float


PROTOCOLS = ("ctp", "scdp", "none")
CONTROL_PLANES = ("loracp", "ideal", "none")


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    duration_s: float = 60.0
    protocol: str = "scdp"
    control_plane: str = "loracp"
    region: RegionConfig = field(default_factory=RegionConfig)
    root: RootConfig = field(default_factory=RootConfig)
    channels: list[ChannelConfig] = field(default_factory=list)
    nodes: list[NodeConfig] = field(default_factory=list)
    mac: MacConfig = field(default_factory=MacConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    clock: ClockConfig = field(default_factory=ClockConfig)
    ctp: CtpConfig = field(default_factory=CtpConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    dataplane: DataPlaneConfig = field(default_factory=DataPlaneConfig)
    interference: InterferenceConfig = field(default_factory=InterferenceConfig)
    phy: PhyConfig = field(default_factory=PhyConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    failures: list[FailureConfig] = field(default_factory=list)
    defaults_applied: list[str] = field(default_factory=list, compare=False)

    # derived helpers ------------------------------------------------------
    def channel_map(self) -> dict[int, Channel]:
        return {
            c.sf: Channel(c.sf, ChannelRole(c.role), c.slot_length_s) for c in self.channels
        }

    def urgent_channel(self) -> Channel | None:
        for ch in self.channel_map().values():
            if ch.role is ChannelRole.URGENT:
                return ch
        return None

    def controller_position(self) -> tuple[float, float]:
        return self.controller.position or self.root.position

    def node(self, node_id: int) -> NodeConfig:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)


# --------------------------------------------------------------------------
# strict dict <-> dataclass conversion


def _is_optional(tp: Any) -> tuple[bool, Any]:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1 and len(typing.get_args(tp)) == 2:
            return True, args[0]
    return False, tp


def _convert(tp: Any, value: Any, path: str, missing: list[str]) -> Any:
    optional, inner = _is_optional(tp)
    if value is None:
        if optional:
            return None
        raise ScenarioError(path, "must not be null")
    tp = inner
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ScenarioError(path, "expected an object")
        return _from_dict(tp, value, path, missing)
    if origin is list:
        (item_tp,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ScenarioError(path, "expected a list")
        return [_convert(item_tp, v, f"{path}[{i}]", missing) for i, v in enumerate(value)]
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ScenarioError(path, f"expected a list of {len(args)} items")
        return tuple(_convert(a, v, f"{path}[{i}]", missing) for i, (a, v) in enumerate(zip(args, value)))
    if origin is dict:
        _, val_tp = typing.get_args(tp)
        if not isinstance(value, dict):
            raise ScenarioError(path, "expected an object")
        return {str(k): _convert(val_tp, v, f"{path}.{k}", missing) for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise ScenarioError(path, "expected a boolean")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(path, "expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(path, "expected a number")
        if not math.isfinite(value):
            raise ScenarioError(path, "must be finite")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ScenarioError(path, "expected a string")
        return value
    raise TypeError(f"unsupported field type {tp!r} at {path}")


def _from_dict(cls: type, data: dict, path: str, missing: list[str]) -> Any:
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls) if f.name != "defaults_applied"}
    for key in data:
        if key not in known:
            raise ScenarioError(f"{path}.{key}" if path else key, "unknown field")
    kwargs = {}
    for name, f in known.items():
        sub = f"{path}.{name}" if path else name
        if name in data:
            kwargs[name] = _convert(hints[name], data[name], sub, missing)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ScenarioError(sub, "required field missing")
        else:
            missing.append(sub)
    return cls(**kwargs)


def _to_plain(value: Any) -> Any:
    if dataclasses.is_dataclass(value):
        return {
            f.name: _to_plain(getattr(value, f.name))
            for f in dataclasses.fields(value)
            if f.name != "defaults_applied"
        }
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (list, tuple)):
        return [_to_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _to_plain(v) for k, v in value.items()}
    return value


def parse_scenario(raw: dict) -> Scenario:
    """Structural parse: types and unknown-field rejection only."""
    if not isinstance(raw, dict):
        raise ScenarioError("$", "scenario must be a JSON object")
    missing: list[str] = []
    scn = _from_dict(Scenario, raw, "", missing)
    scn.defaults_applied = missing
    return scn


def scenario_to_dict(scn: Scenario) -> dict:
    return _to_plain(scn)


def _in_region(pos: tuple[float, float], region: RegionConfig) -> bool:
    return 0.0 <= pos[0] <= region.width_m and 0.0 <= pos[1] <= region.height_m


def validate_scenario(raw: Scenario | dict) -> Scenario:
    """Check every scenario invariant and fill derived defaults.

    Accepts a parsed ``Scenario`` or a raw dict.  Raises ``ScenarioError``
    carrying the field path on the first violation.
    """
    from .phy import LoraPhyParams, LoraLossModel, lora_airtime

    scn = parse_scenario(raw) if isinstance(raw, dict) else dataclasses.replace(raw)
    scn.channels = [dataclasses.replace(c) for c in scn.channels]
    if scn.duration_s <= 0:
        raise ScenarioError("duration_s", "must be > 0")
    if not 0 <= scn.seed < 2**64:
        raise ScenarioError("seed", "must be a 64-bit unsigned integer")
    if scn.protocol not in PROTOCOLS:
        raise ScenarioError("protocol", f"must be one of {PROTOCOLS}")
    if scn.control_plane not in CONTROL_PLANES:
        raise ScenarioError("control_plane", f"must be one of {CONTROL_PLANES}")
    if scn.protocol == "scdp" and scn.control_plane == "none":
        raise ScenarioError("control_plane", "scdp routing needs a control plane")
    if scn.protocol == "none" and scn.control_plane != "loracp":
        raise ScenarioError("control_plane", "a scenario without data plane must run loracp")

    params = LoraPhyParams(bandwidth=scn.phy.bandwidth, preamble_symbols=scn.phy.preamble_symbols)
    seen_sf: set[int] = set()
    for i, ch in enumerate(scn.channels):
        p = f"channels[{i}]"
        if not MIN_SF <= ch.sf <= MAX_SF:
            raise ScenarioError(f"{p}.sf", "spreading factor must be within [7, 12]")
        if ch.sf in seen_sf:
            raise ScenarioError(f"{p}.sf", "duplicate channel for this SF")
        seen_sf.add(ch.sf)
        if ch.role not in ("TDMA", "URGENT"):
            raise ScenarioError(f"{p}.role", "must be TDMA or URGENT")
        if ch.role == "TDMA":
            if ch.slot_length_s is None:
                raise ScenarioError(f"{p}.slot_length_s", "required for TDMA channels")
            need = lora_airtime(ch.sf, scn.mac.max_frame_bytes, params) / 1000.0 + scn.mac.guard_s
            if ch.slot_length_s < need:
                raise ScenarioError(
                    f"{p}.slot_length_s",
                    f"slot {ch.slot_length_s} s shorter than max-frame airtime plus guard ({need:.3f} s)",
                )
    urgent = [c for c in scn.channels if c.role == "URGENT"]
    if len(urgent) > 1:
        raise ScenarioError("channels", "exactly one channel may be URGENT")
    tdma_sfs = {c.sf for c in scn.channels if c.role == "TDMA"}
    if scn.control_plane == "loracp" and scn.channels and not urgent:
        spare = [sf for sf in range(MAX_SF, MIN_SF - 1, -1) if sf not in tdma_sfs]
        if not spare:
            raise ScenarioError("channels", "no SF left for the urgent channel")
        chosen = max(sf for sf in seen_sf if sf not in tdma_sfs) if seen_sf - tdma_sfs else spare[0]
        for c in scn.channels:
            if c.sf == chosen:
                c.role = "URGENT"
                break
        else:
            scn.channels.append(ChannelConfig(sf=chosen, role="URGENT"))
        scn.defaults_applied = [*scn.defaults_applied, "channels.urgent"]

    if not _in_region(scn.root.position, scn.region):
        raise ScenarioError("root.position", "outside scenario region")
    ids: set[int] = {scn.root.id}
    for i, n in enumerate(scn.nodes):
        p = f"nodes[{i}]"
        if n.id in ids:
            raise ScenarioError(f"{p}.id", "duplicate node id (or equals root id)")
        if n.id < 0:
            raise ScenarioError(f"{p}.id", "node ids must be non-negative")
        ids.add(n.id)
        if not _in_region(n.position, scn.region):
            raise ScenarioError(f"{p}.position", "outside scenario region")
        if scn.control_plane == "loracp":
            if n.tdma_sf is None:
                raise ScenarioError(f"{p}.tdma_sf", "required when the LoRa control plane is used")
            if n.tdma_sf not in tdma_sfs:
                raise ScenarioError(f"{p}.tdma_sf", "must reference a TDMA channel")
        if n.data_period_s <= 0:
            raise ScenarioError(f"{p}.data_period_s", "must be > 0")
        if abs(n.clock_drift_ppm) > 100:
            raise ScenarioError(f"{p}.clock_drift_ppm", "|drift| must be <= 100 ppm")

    m = scn.mac
    if m.heartbeat_period < 1:
        raise ScenarioError("mac.heartbeat_period", "must be >= 1")
    if m.wait_time_s < 0:
        raise ScenarioError("mac.wait_time_s", "must be >= 0")
    if m.queue_capacity < 1:
        raise ScenarioError("mac.queue_capacity", "must be >= 1")
    if m.max_frame_bytes > MAX_CONTROL_PAYLOAD:
        raise ScenarioError("mac.max_frame_bytes", f"must be <= {MAX_CONTROL_PAYLOAD}")
    w = scn.workload
    if w.reply_probability is not None and not 0.0 <= w.reply_probability <= 1.0:
        raise ScenarioError("workload.reply_probability", "must be within [0, 1]")
    if not 0 <= w.reply_bytes[0] <= w.reply_bytes[1] <= m.max_frame_bytes:
        raise ScenarioError("workload.reply_bytes", "invalid byte range")
    if not 0 <= w.report_bytes <= m.max_frame_bytes:
        raise ScenarioError("workload.report_bytes", "exceeds max frame size")
    if scn.ctp.beacon_interval_s <= 0:
        raise ScenarioError("ctp.beacon_interval_s", "must be > 0")
    if not 0.0 <= scn.ctp.alpha < 1.0:
        raise ScenarioError("ctp.alpha", "must be within [0, 1)")
    if scn.ctp.etx_max <= 1.0:
        raise ScenarioError("ctp.etx_max", "must be > 1")
    if scn.interference.step_s <= 0:
        raise ScenarioError("interference.step_s", "must be > 0")
    last = -math.inf
    for i, ph in enumerate(scn.interference.schedule):
        if ph.start_s < last:
            raise ScenarioError(f"interference.schedule[{i}].start_s", "phases must be sorted")
        if ph.setpoint < 0:
            raise ScenarioError(f"interference.schedule[{i}].setpoint", "must be >= 0")
        last = ph.start_s
    if scn.metrics.bucket_s <= 0:
        raise ScenarioError("metrics.bucket_s", "must be > 0")
    for i, f in enumerate(scn.failures):
        if f.node == scn.root.id:
            raise ScenarioError(f"failures[{i}].node", "the root/controller cannot fail")
        if f.node not in ids:
            raise ScenarioError(f"failures[{i}].node", "unknown node")
    if scn.phy.loss_table is not None:
        try:
            LoraLossModel.from_config(scn.phy.loss_table)
        except ValueError as exc:
            raise ScenarioError("phy.loss_table", str(exc)) from None
    c = scn.phy.currents
    if not (c.tx_current > c.rx_current > c.sleep_current > 0 and c.supply_voltage > 0):
        raise ScenarioError("phy.currents", "need tx > rx > sleep > 0 and a positive voltage")
    return scn


def load_scenario(path: str | Path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return validate_scenario(raw)


def run_manifest(scn: Scenario) -> dict:
    return {
        "tool": "loracp",
        "version": __version__,
        "seed": scn.seed,
        "defaults_applied": sorted(scn.defaults_applied),
        "scenario": scenario_to_dict(scn),
    }


# --------------------------------------------------------------------------
# randomness


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")


def rng_stream(seed: int, stream_label: str) -> np.random.Generator:
    """Deterministic generator for ``(seed, label)``.

    Streams for distinct labels are spawned from independent seed-sequence
    entropy, so they do not overlap in practice.
    """
    seq = np.random.SeedSequence([int(seed) & (2**64 - 1), _label_key(stream_label)])
    return np.random.Generator(np.random.PCG64(seq))
