"""Command line: exit codes, file outputs, threaded runner equivalence."""

from __future__ import annotations

import json

import numpy as np
import pytest

from evcatch import cli, formats
from evcatch.config import AppConfig, scene_from
from evcatch.core import EVENT_DTYPE
from evcatch.pipeline import run_stream
from evcatch import simgen


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert cli.main(["generate", "--output", str(out), "--seed", "3"]) == cli.EXIT_OK
    return out


class TestGenerateRun:
    def test_generate_writes_all_files(self, generated):
        names = {p.name for p in generated.iterdir()}
        assert {"events.evt", "imu.txt", "odometry.txt", "camera.json", "truth.json", "labels.u8"} <= names
        ef = formats.read_events(generated / "events.evt")
        assert len(ef.events) == (generated / "labels.u8").stat().st_size

    def test_run_matches_in_process_pipeline(self, generated, tmp_path):
        cfg = AppConfig().with_seed(3)
        threaded = cli.run_files(cfg, generated, tmp_path)
        scene, throw = scene_from(cfg.scene, 3)
        data = simgen.generate(scene, throw)
        # The file runner also flushes the trailing partial window.
        w = 10_000_000
        t_end = (int(data.events["t"][-1]) // w + 1) * w
        direct = run_stream(cfg.pipeline, scene.intrinsics, scene.camera_to_body, data.events, data.imu,
                            data.odometry, 0, t_end)
        assert len(threaded) == len(direct)
        for a, b in zip(threaded, direct):
            assert a.status == b.status
            if a.filtered is not None:
                np.testing.assert_array_equal(a.filtered.p_imp, b.filtered.p_imp)

    def test_run_reports_small_error(self, generated, tmp_path):
        assert cli.main(["run", "--input", str(generated), "--output", str(tmp_path)]) == cli.EXIT_OK
        err = json.loads((tmp_path / "impact_error.json").read_text())
        assert err["final_error"] < 0.15
        assert all(r["schema"] == formats.LOG_SCHEMA for r in formats.read_jsonl(tmp_path / "impacts.jsonl"))

    def test_noiseless_scene_converges(self, tmp_path):
        cfg = tmp_path / "noiseless.yaml"
        cfg.write_text("scene:\n  noise:\n    rate_hz: 0.0\n    t_jitter_us: 0.0\n"
                       "    px_jitter: 0.0\n    imu_sigma: 0.0\n")
        gen, out = tmp_path / "gen", tmp_path / "out"
        assert cli.main(["generate", "--config", str(cfg), "--output", str(gen)]) == cli.EXIT_OK
        assert cli.main(["run", "--config", str(cfg), "--input", str(gen), "--output", str(out)]) == cli.EXIT_OK
        assert json.loads((out / "impact_error.json").read_text())["final_error"] < 0.05

    def test_empty_event_file(self, generated, tmp_path):
        inp = tmp_path / "in"
        inp.mkdir()
        for name in ("imu.txt", "odometry.txt", "camera.json", "truth.json"):
            (inp / name).write_bytes((generated / name).read_bytes())
        formats.write_events(inp / "events.evt", np.zeros(0, EVENT_DTYPE), 640, 480)
        assert cli.main(["run", "--input", str(inp), "--output", str(tmp_path / "out")]) == cli.EXIT_OK
        assert (tmp_path / "out" / "impacts.jsonl").read_text() == ""


class TestExitCodes:
    def test_missing_input(self, tmp_path):
        assert cli.main(["run", "--input", str(tmp_path / "nope"), "--output", str(tmp_path)]) == 1

    def test_bad_config(self, tmp_path, generated):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("pipeline:\n  bogus: 1\n")
        code = cli.main(["run", "--config", str(cfg), "--input", str(generated), "--output", str(tmp_path)])
        assert code == 1

    def test_corrupt_events(self, tmp_path, generated):
        inp = tmp_path / "in"
        inp.mkdir()
        for name in ("imu.txt", "odometry.txt", "camera.json"):
            (inp / name).write_bytes((generated / name).read_bytes())
        (inp / "events.evt").write_bytes(b"EVT1" + bytes(12) + bytes(5))
        assert cli.main(["run", "--input", str(inp), "--output", str(tmp_path / "o")]) == 1

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["frobnicate"])
        assert info.value.code == 1

    def test_runtime_error_maps_to_2(self, monkeypatch, tmp_path):
        def boom(*a, **k):
            raise RuntimeError("boom")

        monkeypatch.setattr(cli.simgen, "generate", boom)
        assert cli.main(["generate", "--output", str(tmp_path)]) == 2


class TestLatencyCommand:
    def test_prints_closed_form(self, capsys):
        assert cli.main(["latency", "--fps", "30", "--dtc-ms", "5"]) == 0
        assert "worst_case_ms=71.6667" in capsys.readouterr().out

    def test_json_output(self, capsys):
        assert cli.main(["latency", "--dtc-ms", "10", "--mode", "event_one_shot", "--json"]) == 0
        rec = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert rec["worst_case_ms"] == pytest.approx(20.0)

    def test_invalid_values(self):
        assert cli.main(["latency", "--fps", "-3", "--dtc-ms", "5"]) == 1


class TestEvaluateBench:
    def test_evaluate_writes_tables(self, tmp_path):
        assert cli.main(["evaluate", "--throws", "2", "--output", str(tmp_path)]) == 0
        for name in ("catch_table.csv", "vision_table.csv", "throws.csv"):
            assert (tmp_path / name).read_text().count("\n") >= 2

    def test_bench_baseline_gate(self, tmp_path, generated):
        base = tmp_path / "b.json"
        assert cli.main(["bench", "--input", str(generated), "--write-baseline", str(base)]) == 0
        data = json.loads(base.read_text())
        data["p99_ms"] = 1e-6  # impossible to meet
        base.write_text(json.dumps(data))
        assert cli.main(["bench", "--input", str(generated), "--baseline", str(base)]) == 1
