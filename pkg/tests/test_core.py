import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loracp import ScenarioError, load_scenario, presets, validate_scenario
from loracp.core import (
    BROADCAST,
    Frame,
    FrameCounters,
    FrameKind,
    parse_scenario,
    rng_stream,
    run_manifest,
    scenario_to_dict,
)
from loracp.phy import lora_airtime


def _testbed():
    return presets.pressure(0.5, seed=1)


def test_testbed_layout_accepted():
    scn = validate_scenario(_testbed())
    sfs = [n.tdma_sf for n in scn.nodes]
    assert [sfs.count(sf) for sf in (7, 8, 9)] == [5, 5, 5]
    assert scn.urgent_channel().sf == 10


def test_zero_nodes_accepted():
    scn = validate_scenario({"protocol": "none", "control_plane": "loracp", "duration_s": 10.0})
    assert scn.nodes == []


def test_short_slot_rejected():
    raw = _testbed()
    raw["channels"] = [dict(c) for c in raw["channels"]]
    raw["channels"][0]["slot_length_s"] = 0.01
    assert 0.01 < lora_airtime(7, 51) / 1000.0
    with pytest.raises(ScenarioError) as err:
        validate_scenario(raw)
    assert err.value.path == "channels[0].slot_length_s"


@pytest.mark.parametrize(
    "patch,path",
    [
        ({"bogus": 1}, "bogus"),
        ({"mac": {"heartbeat_period": 0}}, "mac.heartbeat_period"),
        ({"duration_s": -1.0}, "duration_s"),
        ({"protocol": "rpl"}, "protocol"),
        ({"mac": {"queue_capacity": 0}}, "mac.queue_capacity"),
        ({"workload": {"reply_probability": 1.5}}, "workload.reply_probability"),
        ({"root": {"id": 0, "position": [500.0, 10.0]}}, "root.position"),
        ({"mac": {"wait_time_s": "1"}}, "mac.wait_time_s"),
    ],
)
def test_invalid_fields_report_path(patch, path):
    raw = {**_testbed(), **patch}
    with pytest.raises(ScenarioError) as err:
        validate_scenario(raw)
    assert err.value.path == path


def test_duplicate_node_and_missing_sf():
    raw = _testbed()
    raw["nodes"] = [dict(n) for n in raw["nodes"]]
    raw["nodes"][1]["id"] = raw["nodes"][0]["id"]
    with pytest.raises(ScenarioError, match="duplicate"):
        validate_scenario(raw)
    raw = _testbed()
    raw["nodes"] = [dict(n) for n in raw["nodes"]]
    raw["nodes"][0].pop("tdma_sf")
    with pytest.raises(ScenarioError):
        validate_scenario(raw)


def test_drift_limit():
    raw = _testbed()
    raw["nodes"] = [dict(n) for n in raw["nodes"]]
    raw["nodes"][0]["clock_drift_ppm"] = 120.0
    with pytest.raises(ScenarioError):
        validate_scenario(raw)


def test_defaults_recorded_in_manifest():
    scn = validate_scenario(presets.clock_sync(seed=1))
    man = run_manifest(scn)
    assert "mac.heartbeat_period" not in man["defaults_applied"]
    assert "mac.wait_time_s" in man["defaults_applied"]
    assert "mac.heartbeat_period" in run_manifest(validate_scenario(_testbed()))["defaults_applied"]
    assert man["scenario"]["mac"]["wait_time_s"] == 1.0
    assert man["seed"] == 1


def test_round_trip(tmp_path):
    scn = validate_scenario(presets.side_by_side("scdp", 80.0, seed=3))
    blob = json.dumps(scenario_to_dict(scn))
    p = tmp_path / "s.json"
    p.write_text(blob)
    again = load_scenario(p)
    assert scenario_to_dict(again) == scenario_to_dict(scn)


def test_parse_is_structural_only():
    scn = parse_scenario({"duration_s": -5.0})
    assert scn.duration_s == -5.0


def test_rng_determinism_and_labels():
    a = rng_stream(42, "phy-loss").random(1000)
    b = rng_stream(42, "phy-loss").random(1000)
    c = rng_stream(42, "aloha").random(1000)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@given(st.integers(0, 2**64 - 1), st.text(min_size=1, max_size=12))
def test_rng_any_seed(seed, label):
    assert rng_stream(seed, label).random() == rng_stream(seed, label).random()


def test_frame_counters():
    c = FrameCounters()
    assert [c.next(1, "up") for _ in range(3)] == [0, 1, 2]
    assert c.next(1, "down") == 0 and c.next(2, "up") == 0
    assert c.peek(1, "up") == 3


def test_frame_checks():
    with pytest.raises(ValueError):
        Frame(1, 0, FrameKind.REPORT, -1)
    with pytest.raises(ValueError):
        Frame(1, BROADCAST, FrameKind.DATA, 10)
    Frame(1, BROADCAST, FrameKind.BEACON, 8)
