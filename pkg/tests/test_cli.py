import json
import threading

import pytest

from dtrms import frame_codec
from dtrms.cli import main
from dtrms.config import load_scenario
from dtrms.coordinator import Coordinator, DeviceProfile
from dtrms.service import CoordinatorServer, request, send_frames

from scenarios import single_device_doc


def read(p):
    return p.read_bytes()


def test_simulate_twice_identical(demo_config, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(demo_config), "--seed", "7", "--out", str(a)]) == 0
    assert main(["simulate", "--config", str(demo_config), "--seed", "7", "--out", str(b)]) == 0
    for name in ("trace.jsonl", "readings.jsonl", "alarms.jsonl", "capture.bin"):
        assert read(a / name) == read(b / name)


def test_simulate_missing_config(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["simulate", "--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_simulate_config_from_env(demo_config, tmp_path, monkeypatch):
    monkeypatch.setenv("DTRMS_CONFIG", str(demo_config))
    assert main(["simulate", "--out", str(tmp_path / "o")]) == 0


def test_bad_field_exit_2(tmp_path, capsys):
    doc = single_device_doc()
    doc["devices"][0]["adc_channel_temp"] = 9
    p = tmp_path / "s.json"
    p.write_text(json.dumps(doc))
    assert main(["simulate", "--config", str(p)]) == 2
    assert "devices[0].adc_channel_temp" in capsys.readouterr().err


def test_usage_error_exit_2(capsys):
    assert main(["frobnicate"]) == 2
    assert main(["simulate", "--seed", "x"]) == 2


def test_duration_override_counts(tmp_path, capsys):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(single_device_doc(period=60, duration=60)))
    assert main(["simulate", "--config", str(p), "--duration", "600", "--out", str(tmp_path / "o")]) == 0
    assert "frames ok 10," in capsys.readouterr().out


def test_replay_reproduces_logs(demo_config, tmp_path, capsys):
    out, rep = tmp_path / "o", tmp_path / "r"
    assert main(["simulate", "--config", str(demo_config), "--out", str(out), "--duration", "3000"]) == 0
    assert main(["replay", str(out / "trace.jsonl"), "--config", str(demo_config), "--out", str(rep)]) == 0
    assert read(rep / "readings.jsonl") == read(out / "readings.jsonl")
    assert read(rep / "alarms.jsonl") == read(out / "alarms.jsonl")


def test_replay_capture_file(demo_config, tmp_path, capsys):
    out, rep = tmp_path / "o", tmp_path / "r"
    main(["simulate", "--config", str(demo_config), "--out", str(out)])
    assert main(["replay", str(out / "capture.bin"), "--config", str(demo_config), "--out", str(rep)]) == 0
    orig = [json.loads(x) for x in (out / "readings.jsonl").read_text().splitlines()]
    again = [json.loads(x) for x in (rep / "readings.jsonl").read_text().splitlines()]
    keys = ("addr", "seq", "t_dev", "temp_c", "temp_code", "oil", "batt_mv")
    assert [{k: r[k] for k in keys} for r in again] == [{k: r[k] for k in keys} for r in orig]


def test_inspect_empty(tmp_path, capsys):
    assert main(["inspect", str(tmp_path / "empty")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["rings"] == {} and doc["reading_log_lines"] == 0 and doc["alarm_log_lines"] == 0
    assert doc["stats"]["frames_ok"] == 0 and doc["stats"]["alarms_raised"] == 0


def test_inspect_after_simulate(demo_config, tmp_path, capsys):
    out = tmp_path / "o"
    main(["simulate", "--config", str(demo_config), "--out", str(out)])
    capsys.readouterr()
    assert main(["inspect", str(out)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["reading_log_lines"] == doc["stats"]["frames_ok"]
    assert main(["inspect", str(out), "--what", "rings"]) == 0
    rows = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert {r["device"] for r in rows} == set(doc["rings"])


def test_calibrate_default_chain(tmp_path, capsys):
    csv_p, json_p = tmp_path / "cal.csv", tmp_path / "cal.json"
    assert main(["calibrate", "--csv", str(csv_p), "--json", str(json_p)]) == 0
    assert "constancy PASS" in capsys.readouterr().out
    assert csv_p.read_text().startswith("temp_c,tx_volts,rx_code\n")
    table = json.loads(json_p.read_text())
    assert abs(table["slope_codes_per_volt"] - 204.6) <= 0.5


def test_calibrate_zero_offset_and_simulated(tmp_path, capsys):
    args = ["calibrate", "--zero-offset", "--start", "0", "--transport", "simulated",
            "--csv", str(tmp_path / "c.csv"), "--json", str(tmp_path / "c.json")]
    assert main(args) == 0
    assert "ratio spread" in capsys.readouterr().out


@pytest.fixture
def server(demo_config):
    s = load_scenario(demo_config)
    profiles = {d.device_addr: DeviceProfile.from_config(d) for d in s.devices}
    srv = CoordinatorServer(("127.0.0.1", 0), Coordinator(profiles, s.coordinator))
    th = threading.Thread(target=srv.serve_forever, daemon=True)
    th.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def _wait_for(srv, n):
    import time
    for _ in range(500):
        if request(srv.server_address, {"query": "stats"})["result"]["frames_ok"] >= n:
            return
        time.sleep(0.01)
    raise AssertionError("frames not ingested")


def test_serve_devices_never_seen(server):
    reply = request(server.server_address, {"query": "devices"})
    assert reply["ok"]
    assert len(reply["result"]) == 3
    assert not any(d["seen"] for d in reply["result"])


def test_serve_malformed_query_stays_up(server):
    reply = request(server.server_address, {"query": "bogus"})
    assert reply == {"ok": False, "error": "MalformedQuery", "message": "unknown query kind 'bogus'"}
    reply = request(server.server_address, [1, 2])
    assert reply["error"] == "MalformedQuery"
    assert request(server.server_address, {"query": "stats"})["ok"]


def test_serve_frame_stream_matches_offline_decode(server, demo_config, tmp_path, capsys):
    out = tmp_path / "o"
    main(["simulate", "--config", str(demo_config), "--out", str(out)])
    capture = (out / "capture.bin").read_bytes()
    frames = list(frame_codec.iter_frames(capture))
    send_frames(server.server_address, capture)
    _wait_for(server, len(frames))
    got = request(server.server_address, {"query": "readings"})["result"]
    offline = [frame_codec.decode(f) for f in frames]
    assert [(int(r["addr"], 16), r["seq"], r["t_dev"], r["temp_code"], r["batt_mv"]) for r in got] == \
        [(p.source_addr, p.sequence, p.timestamp_s, p.temp_code, p.battery_mv) for p in offline]


def test_serve_ingest_op_and_bad_frame(server):
    raw = frame_codec.encode(frame_codec.TelemetryPayload(0x0013A2004100BEEF, 0, 0, 700, 0, 3300))
    ok = request(server.server_address, {"op": "ingest", "frame": raw.hex(), "hops": 1})
    assert ok["ok"] and ok["result"]["temp_code"] == 700
    bad = request(server.server_address, {"op": "ingest", "frame": raw[:-1].hex()})
    assert bad == {"ok": False, "error": "TruncatedFrame", "message": bad["message"]}
    stats = request(server.server_address, {"query": "stats"})["result"]
    assert stats["frames_ok"] == 1 and stats["frames_bad"] == 1


def test_serve_address_in_use(server, demo_config, capsys):
    host, port = server.server_address
    assert main(["serve", "--config", str(demo_config), "--listen", f"{host}:{port}"]) == 1
    assert "AddressInUse" in capsys.readouterr().err


def test_query_cli(server, capsys):
    host, port = server.server_address
    assert main(["query", '{"query": "stats"}', "--connect", f"{host}:{port}"]) == 0
    assert main(["query", '{"query": "nope"}', "--connect", f"{host}:{port}"]) == 1
