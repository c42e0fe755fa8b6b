import json

import pytest

from incsim.engine import packet_latency
from incsim.errors import WorkloadError
from incsim.stats import dumps, percentile
from incsim.workload import PATTERNS, WorkloadRunner, load_workload, parse_workload, run_workload


def wl(*traffic, **extra):
    raw = {"schema": 1, "preset": "card", "seed": 3, "duration_us": 30, "traffic": list(traffic)}
    raw.update(extra)
    return raw


PATTERN_ENTRIES = {
    "UniformRandom": {"pattern": "UniformRandom", "rate": 300000, "size": 128},
    "NearestNeighbor": {"pattern": "NearestNeighbor", "rate": 300000, "size": 128},
    "BroadcastStorm": {"pattern": "BroadcastStorm", "rate": 50000},
    "PostmasterScatter": {"pattern": "PostmasterScatter", "count": 5, "size": 900, "targets": 3},
    "BridgeFifoPairs": {"pattern": "BridgeFifoPairs", "pairs": 6, "rate": 2000000, "width": 24},
    "EthernetMesh": {"pattern": "EthernetMesh", "rate": 100000, "size": 1500},
}


def test_every_pattern_covered():
    assert set(PATTERN_ENTRIES) == set(PATTERNS)


@pytest.mark.parametrize("name", sorted(PATTERN_ENTRIES))
def test_pattern_runs_clean(name):
    report = run_workload(wl(PATTERN_ENTRIES[name]))
    w = report["workload"]
    assert w["generated"] > 0
    assert w["bridge_fifo_order_violations"] == 0
    assert w["postmaster_order_violations"] == 0
    assert w["ethernet_frames_mismatched"] == 0
    assert w["broadcasts"] == w["broadcasts_complete"]
    assert report["dropped"] == 0 and not report["queues"]["in_fabric_at_end"]
    for st in report["protocols"].values():
        assert st["injected"] == st["delivered"] or name == "BroadcastStorm"


def test_ethernet_polling_mode_pattern():
    entry = dict(PATTERN_ENTRIES["EthernetMesh"], mode="polling", poll_interval_us=4)
    report = run_workload(wl(entry))
    assert report["workload"]["ethernet_frames_mismatched"] == 0
    assert report["channels"]["ethernet"]["frames_received"] == report["channels"]["ethernet"]["frames_sent"]


def test_same_seed_same_bytes(tmp_path):
    raw = wl(PATTERN_ENTRIES["UniformRandom"], PATTERN_ENTRIES["BridgeFifoPairs"])
    a = dumps(run_workload(raw, tmp_path / "a.jsonl"))
    b = dumps(run_workload(raw, tmp_path / "b.jsonl"))
    assert a == b
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    other = dumps(run_workload(dict(raw, seed=4)))
    assert other != a


def test_trace_lines_are_json(tmp_path):
    run_workload(wl(PATTERN_ENTRIES["NearestNeighbor"]), tmp_path / "t.jsonl")
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    assert set(rec) >= {"t_inject", "t_deliver", "src", "dst", "protocol", "hops", "path"}
    assert rec["t_deliver"] >= rec["t_inject"] and len(rec["path"]) == rec["hops"] + 1


def test_report_shape():
    report = run_workload(wl(PATTERN_ENTRIES["UniformRandom"]))
    assert list(report) == ["schema", "system", "sim", "protocols", "dropped", "channels", "queues", "links", "workload"]
    lat = report["protocols"]["POSTMASTER"]["latency_ns"]
    assert lat["p50"] <= lat["p99"] <= lat["max"]


@pytest.mark.parametrize("raw,msg", [
    ({"schema": 2, "preset": "card"}, "schema"),
    ({"schema": 1}, "preset"),
    ({"schema": 1, "preset": "card", "dims": [3, 3, 3]}, "preset"),
    ({"schema": 1, "preset": "huge"}, "unknown preset"),
    ({"schema": 1, "preset": "card", "bogus": 1}, "unknown keys"),
    ({"schema": 1, "preset": "card", "traffic": [{"pattern": "Nope", "rate": 1}]}, "pattern"),
    ({"schema": 1, "preset": "card", "traffic": [{"pattern": "UniformRandom"}]}, "rate"),
    ({"schema": 1, "preset": "card", "duration_us": -1}, "duration"),
])
def test_bad_workloads(raw, msg):
    with pytest.raises(WorkloadError, match=msg):
        parse_workload(raw)


def test_bad_sim_params():
    with pytest.raises(Exception, match="unknown simulation parameters"):
        run_workload(wl(params={"warp_drive": True}))


def test_json_error_has_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"schema": 1,\n "preset": }')
    with pytest.raises(WorkloadError, match=r"bad.json:2:"):
        load_workload(path)


def test_percentile_nearest_rank():
    assert percentile([5, 1, 3, 2, 4], 50) == 3
    assert percentile(list(range(1, 101)), 99) == 99
    assert percentile([], 50) is None


def test_broadcast_storm_delivers_nodes_squared():
    report = run_workload(wl({"pattern": "BroadcastStorm", "count": 1}))
    assert report["protocols"]["NET_TUNNEL"]["delivered"] == 27 * 27
    assert report["workload"]["broadcasts_complete"] == 27


def test_low_rate_bridge_fifo_latency_matches_model():
    runner = WorkloadRunner(parse_workload(wl({"pattern": "BridgeFifoPairs", "pairs": 8, "rate": 20000})))
    gaps = []
    runner.system.network.delivery_hooks.append(
        lambda node, pkt, now: gaps.append(now - pkt.t_inject - packet_latency(pkt.hops, len(pkt.payload))))
    runner.run()
    assert gaps and sorted(gaps)[len(gaps) // 2] == 0
