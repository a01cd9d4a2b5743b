"""Pipeline runs end to end on scripted sessions plus mock tools."""
from __future__ import annotations

import json

import pytest

from soundstage.errors import ConfigError, InputError, ManifestError
from soundstage.events import InputDescriptor
from soundstage.pipeline import RunConfig, bench, input_from_file, inspect_tree, run
from soundstage.wav_io import read_wav

from conftest import street_scene_input, street_scene_script


def write_script(tmp_path, script=None, name="session.json"):
    path = tmp_path / name
    path.write_text(json.dumps(script or street_scene_script()), "utf-8")
    return path


def write_input(tmp_path, name="input.json"):
    descriptor = street_scene_input()
    path = tmp_path / name
    path.write_text(
        json.dumps(
            {
                "text": descriptor.text,
                "precomputed_caption": descriptor.precomputed_caption,
                "duration_s": descriptor.duration_s,
            }
        ),
        "utf-8",
    )
    return path


def street_config(tmp_path, out_name="out", **overrides) -> RunConfig:
    config = RunConfig(
        backend=f"scripted:{write_script(tmp_path, name=f'{out_name}_session.json')}",
        tools={"*": "mock"},
        out_dir=str(tmp_path / out_name),
    )
    for key, value in overrides.items():
        setattr(config, key, value)
    return config


class TestRun:
    def test_street_scene_end_to_end(self, tmp_path):
        result = run(street_config(tmp_path), street_scene_input())
        mix = read_wav(result.mix_path)
        assert mix.frames == round(30.0 * 48000)  # max end_time, frame-accurate
        assert mix.sample_rate == 48000
        assert len(result.stem_paths) == 4
        assert len(result.trace_paths) == 4
        report = result.report
        assert report["stage1"]["approved"] is True
        assert report["mix"]["stems"] == 4
        assert report["stage1"]["backend_calls"] == {"planner": 1, "plan_supervisor": 1}
        assert report["stage3"]["backend_calls"] == {"audio_evaluator": 4}
        assert report["backend_calls_total"] == 24

    def test_two_runs_byte_identical(self, tmp_path):
        first = run(street_config(tmp_path, "out_a"), street_scene_input())
        second = run(street_config(tmp_path, "out_b"), street_scene_input())
        assert first.mix_path.read_bytes() == second.mix_path.read_bytes()
        for a, b in zip(first.stem_paths, second.stem_paths):
            assert a.read_bytes() == b.read_bytes()
        for a, b in zip(first.trace_paths, second.trace_paths):
            assert a.read_bytes() == b.read_bytes()
        assert first.report_path.read_bytes() == second.report_path.read_bytes()

    def test_plan_only_stops_after_stage1(self, tmp_path):
        config = street_config(tmp_path, plan_only=True)
        result = run(config, street_scene_input())
        assert result.mix_path is None
        assert result.stem_paths == []
        plan = json.loads(result.plan_path.read_text("utf-8"))
        assert len(plan["events"]) == 4
        # nothing beyond stage 1 ran
        assert "stage2" not in result.report

    def test_missing_endpoint_fails_before_any_backend_call(self, tmp_path):
        config = RunConfig(
            backend="scripted:/nonexistent/session.json",
            tools={"MMAudio": "mock"},  # DiffRhythm and friends unresolved
            out_dir=str(tmp_path / "out"),
        )
        with pytest.raises(ConfigError) as err:
            run(config, street_scene_input())
        assert "DiffRhythm" in str(err.value) or "no endpoint" in str(err.value)

    def test_bad_target_rate_rejected(self, tmp_path):
        config = street_config(tmp_path, target_rate=12345)
        with pytest.raises(ConfigError):
            run(config, street_scene_input())

    def test_invalid_input_rejected(self, tmp_path):
        with pytest.raises(InputError):
            run(street_config(tmp_path), InputDescriptor())

    def test_report_paths_relative(self, tmp_path):
        result = run(street_config(tmp_path), street_scene_input())
        for entry in result.report["stage3"]["events"]:
            assert not entry["stem"].startswith("/")
            assert not entry["trace"].startswith("/")

    def test_seed_changes_audio(self, tmp_path):
        base = run(street_config(tmp_path, "out_s0", seed=0), street_scene_input())
        salted = run(street_config(tmp_path, "out_s7", seed=7), street_scene_input())
        assert base.mix_path.read_bytes() != salted.mix_path.read_bytes()

    def test_http_backend_with_parallel_stage3(self, tmp_path, agent_server):
        server, url = agent_server(role_replies=street_scene_script())
        config = RunConfig(
            backend=url, tools={"*": "mock"}, out_dir=str(tmp_path / "http_out"), parallel=2
        )
        result = run(config, street_scene_input())
        mix = read_wav(result.mix_path)
        assert mix.frames == round(30.0 * 48000)
        assert len(result.stem_paths) == 4
        # report entries stay in event order no matter how stage 3 interleaved
        indices = [e["event_index"] for e in result.report["stage3"]["events"]]
        assert indices == [0, 1, 2, 3]
        assert len(server.requests) == result.report["backend_calls_total"] == 24


class TestInputFile:
    def test_load(self, tmp_path):
        descriptor = input_from_file(write_input(tmp_path))
        assert descriptor.duration_s == 30.0
        assert descriptor.precomputed_caption

    def test_invalid_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{}", "utf-8")
        with pytest.raises(InputError):
            input_from_file(path)


class TestBench:
    def manifest(self, tmp_path):
        path = tmp_path / "manifest.json"
        descriptor = street_scene_input()
        base_input = {
            "text": descriptor.text,
            "precomputed_caption": descriptor.precomputed_caption,
            "duration_s": 30.0,
        }
        path.write_text(
            json.dumps(
                {
                    "cases": [
                        {"id": "case_ok", "input": base_input, "expected_event_count": 4},
                        {"id": "case_mismatch", "input": base_input, "expected_event_count": 3},
                        {"id": "case_broken", "input": {}},
                    ]
                }
            ),
            "utf-8",
        )
        return path

    def test_rows_and_isolation(self, tmp_path):
        config = street_config(tmp_path, "bench_out")
        rows = bench(config, self.manifest(tmp_path))
        assert [r["id"] for r in rows] == ["case_ok", "case_mismatch", "case_broken"]
        ok, mismatch, broken = rows
        assert ok["ok"] is True and ok["event_match"] is True
        assert mismatch["ok"] is True and mismatch["event_match"] is False
        assert broken["ok"] is False and broken["error"]
        out_dir = tmp_path / "bench_out"
        assert (out_dir / "bench_results.json").exists()
        csv_text = (out_dir / "bench_results.csv").read_text("utf-8")
        assert csv_text.splitlines()[0].startswith("id,ok,events")
        assert len(csv_text.splitlines()) == 4

    def test_manifest_errors(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("not json", "utf-8")
        with pytest.raises(ManifestError):
            bench(street_config(tmp_path), bad)
        dup = tmp_path / "dup.json"
        dup.write_text(
            json.dumps([{"id": "a", "input": {"text": "x"}}, {"id": "a", "input": {"text": "y"}}]),
            "utf-8",
        )
        with pytest.raises(ManifestError):
            bench(street_config(tmp_path), dup)


class TestInspectTree:
    def test_rendering_matches_node_count(self, tmp_path):
        result = run(street_config(tmp_path), street_scene_input())
        text, dot = inspect_tree(result.trace_paths[0])
        trace = json.loads(result.trace_paths[0].read_text("utf-8"))
        assert len(text.splitlines()) == len(trace["nodes"]) == 2
        assert text.splitlines()[0].startswith("n0 initial")
        assert dot.startswith("digraph")
        assert '"n0" -> "n1"' in dot

    def test_dot_written(self, tmp_path):
        result = run(street_config(tmp_path), street_scene_input())
        dot_path = tmp_path / "tree.dot"
        inspect_tree(result.trace_paths[0], dot_path=dot_path)
        assert dot_path.read_text("utf-8").startswith("digraph")

    def test_malformed_trace(self, tmp_path):
        from soundstage.errors import TraceParseError

        bad = tmp_path / "trace.json"
        bad.write_text('{"nodes": "nope"}', "utf-8")
        with pytest.raises(TraceParseError):
            inspect_tree(bad)

    def test_max_budget_trace_renders_ten_nodes(self, tmp_path):
        from soundstage.gateway import ToolGateway
        from soundstage.library import default_library
        from soundstage.search import Budget, run_event
        from soundstage.trace import write_trace
        from test_search import SequencedEvaluator, sfx_assignment

        # fixable, fixable, retry per branch exhausts every fix chain and
        # every retry: 1 initial + 3 generations + 6 refinements = 10 nodes
        backend = SequencedEvaluator(["fixable", "fixable", "retry"] * 3)
        result = run_event(
            sfx_assignment(duration=0.2), Budget(2, 2),
            ToolGateway({"*": "mock"}), backend, default_library(),
        )
        assert len(result.tree) == 10
        path = tmp_path / "max_trace.json"
        write_trace(path, result.tree, 0)
        text, _ = inspect_tree(path)
        assert len(text.splitlines()) == 10


class TestRunConfigFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(
            json.dumps({"tools": "mock", "seed": 5, "parallel": 3, "max_retries": 1}),
            "utf-8",
        )
        config = RunConfig.from_file(path)
        assert config.tools == {"*": "mock"}
        assert config.seed == 5
        assert config.parallel == 3
        assert config.max_retries == 1

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text('{"wibble": 1}', "utf-8")
        with pytest.raises(ConfigError):
            RunConfig.from_file(path)
