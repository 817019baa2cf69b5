"""Ready-made scenarios for the three studies: route-cost replication, downlink pressure, side by side."""

from __future__ import annotations

import numpy as np

from .core import rng_stream

TESTBED_CHANNELS = [
    {"sf": 7, "slot_length_s": 3.0},
    {"sf": 8, "slot_length_s": 4.0},
    {"sf": 9, "slot_length_s": 5.0},
    {"sf": 10, "role": "URGENT"},
]

# downlink queue capacity used by the pressure preset (see README)
PRESSURE_QUEUE_CAPACITY = 3


def _testbed_nodes(count: int, spacing_m: float, origin=(10.0, 10.0), per_channel=None, drift=None):
    """Grid-placed nodes split over SF7/8/9; node ids start at 1."""
    per_channel = per_channel or _even_split(count)
    sfs = [sf for sf, k in zip((7, 8, 9), per_channel) for _ in range(k)]
    cols = int(np.ceil(np.sqrt(count + 1)))
    nodes = []
    for i in range(count):
        cell = i + 1  # cell 0 is the root
        x = origin[0] + spacing_m * (cell % cols)
        y = origin[1] + spacing_m * (cell // cols)
        n = {"id": i + 1, "position": [x, y], "tdma_sf": sfs[i]}
        if drift is not None:
            n["clock_drift_ppm"] = float(drift[i])
        nodes.append(n)
    return nodes


def _even_split(count: int) -> list[int]:
    base, extra = divmod(count, 3)
    return [base + (1 if k < extra else 0) for k in range(3)]


def pressure(reply_probability: float, seed: int = 0, duration_s: float = 3600.0,
             queue_capacity: int = PRESSURE_QUEUE_CAPACITY) -> dict:
    """15 nodes reporting in every owned slot; the controller replies with ``reply_probability``."""
    return {
        "name": f"pressure-p{reply_probability:g}",
        "seed": seed,
        "duration_s": duration_s,
        "protocol": "none",
        "control_plane": "loracp",
        "root": {"id": 0, "position": [10.0, 10.0]},
        "channels": TESTBED_CHANNELS,
        "nodes": _testbed_nodes(15, 5.0),
        "mac": {"nak": False, "heartbeat_sync": False, "queue_capacity": queue_capacity},
        "workload": {"report_every_slot": True, "reply_probability": reply_probability},
    }


def clock_sync(seed: int = 0, drift_ppm: float = 50.0, heartbeat_period: int = 10,
               duration_s: float = 3600.0, fixed_drift: bool = False) -> dict:
    """Heartbeat-only control plane with drifting node clocks.

    Drifts are drawn uniformly in [-drift_ppm, drift_ppm] unless
    ``fixed_drift`` puts every node at exactly +drift_ppm.
    """
    if fixed_drift:
        drift = np.full(15, drift_ppm)
    else:
        drift = rng_stream(seed, "preset-drift").uniform(-drift_ppm, drift_ppm, 15)
    return {
        "name": f"clock-{drift_ppm:g}ppm-h{heartbeat_period}",
        "seed": seed,
        "duration_s": duration_s,
        "protocol": "none",
        "control_plane": "loracp",
        "root": {"id": 0, "position": [10.0, 10.0]},
        "channels": TESTBED_CHANNELS,
        "nodes": _testbed_nodes(15, 5.0, drift=drift),
        "mac": {"heartbeat_period": heartbeat_period},
    }


def nak_script(seed: int = 0, node: int = 2, lost_rotation: int = 4, urgent_rate_per_hour: float = 2.0,
               duration_s: float = 150.0) -> dict:
    """One scripted uplink loss on an otherwise lossless control plane with background urgent traffic."""
    lossless = {f"SF{sf}": [[0.0, 1.0], [2500.0, 1.0]] for sf in range(7, 13)}
    return {
        "name": f"nak-n{node}-r{lost_rotation}",
        "seed": seed,
        "duration_s": duration_s,
        "protocol": "none",
        "control_plane": "loracp",
        "root": {"id": 0, "position": [10.0, 10.0]},
        "channels": TESTBED_CHANNELS,
        "nodes": _testbed_nodes(15, 5.0),
        "mac": {"heartbeat_sync": False},
        "workload": {
            "report_every_slot": True,
            "urgent_rate_per_hour": urgent_rate_per_hour,
            "scripted_losses": [[node, lost_rotation]],
        },
        "phy": {"loss_table": lossless},
    }


SIDE_BY_SIDE_SETPOINTS = (0.0, 5.0, 80.0, 90.0)


def side_by_side(protocol: str, setpoint: float, seed: int = 0, duration_s: float = 3600.0,
                 heartbeat_period: int = 10) -> dict:
    """One of the two co-located 8-node networks under a constant interference setpoint.

    The CTP and CTP-SCDP variants share topology, shadowing and the link
    fluctuation process for a given seed.
    """
    scdp = protocol == "scdp"
    scn = {
        "name": f"side-{protocol}-{setpoint:g}",
        "seed": seed,
        "duration_s": duration_s,
        "protocol": protocol,
        "control_plane": "loracp" if scdp else "none",
        "root": {"id": 0, "position": [10.0, 10.0]},
        "nodes": _testbed_nodes(8, 12.0, per_channel=[3, 3, 2]),
        "mac": {"heartbeat_period": heartbeat_period},
        "ctp": {"beacon_interval_s": 30.0},
        "interference": {"schedule": [{"start_s": 0.0, "setpoint": setpoint}]},
    }
    if scdp:
        scn["channels"] = TESTBED_CHANNELS
    return scn


def replicate_sim(protocol: str, seed: int = 0, nodes: int = 60, duration_s: float = 7200.0,
                  region_m: float | None = None) -> dict:
    """Random ``nodes``-node deployment with a time-varying interference schedule.

    The square region defaults to 200 m for 60 nodes and scales with
    sqrt(nodes) so smaller runs keep the same density.

    CTP-SCDP uses an ideal control channel here: the controller sees the
    true link costs and commands arrive after the wait time.
    """
    if region_m is None:
        region_m = 200.0 * float(np.sqrt(nodes / 60.0))
    rng = rng_stream(seed, "preset-layout")
    pts = rng.uniform(0.0, region_m, size=(nodes, 2))
    phases = []
    t = 0.0
    levels = [0.0, 30.0, 80.0, 10.0, 60.0, 90.0, 20.0]
    k = 0
    while t < duration_s:
        phases.append({"start_s": t, "setpoint": levels[k % len(levels)]})
        t += 600.0
        k += 1
    return {
        "name": f"replicate-{protocol}-{nodes}",
        "seed": seed,
        "duration_s": duration_s,
        "protocol": protocol,
        "control_plane": "ideal" if protocol == "scdp" else "none",
        "region": {"width_m": region_m, "height_m": region_m},
        "root": {"id": 0, "position": [region_m / 2, region_m / 2]},
        "nodes": [{"id": i + 1, "position": [float(x), float(y)]} for i, (x, y) in enumerate(pts)],
        "interference": {
            "schedule": phases,
            "source": [region_m / 2, region_m / 2],
            "coupling_range_m": region_m / 2,
        },
    }
