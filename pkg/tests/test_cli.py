"""CLI verbs and the documented exit-code table."""
from __future__ import annotations

import json

from soundstage.cli import main

from test_pipeline import street_config, write_input, write_script


def run_config_file(tmp_path, config):
    path = tmp_path / "config.json"
    payload = {
        "backend": config.backend,
        "tools": config.tools,
        "out_dir": config.out_dir,
    }
    path.write_text(json.dumps(payload), "utf-8")
    return path


class TestRunVerb:
    def test_full_run_exit_zero(self, tmp_path, capsys):
        config = street_config(tmp_path)
        code = main([
            "run",
            "--input", str(write_input(tmp_path)),
            "--config", str(run_config_file(tmp_path, config)),
        ])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["stems"] == 4
        assert (tmp_path / "out" / "mix.wav").exists()

    def test_plan_only_flag(self, tmp_path, capsys):
        config = street_config(tmp_path)
        code = main([
            "run",
            "--input", str(write_input(tmp_path)),
            "--config", str(run_config_file(tmp_path, config)),
            "--plan-only",
        ])
        assert code == 0
        assert (tmp_path / "out" / "plan.json").exists()
        assert not (tmp_path / "out" / "mix.wav").exists()

    def test_plan_verb_equivalent(self, tmp_path):
        config = street_config(tmp_path)
        code = main([
            "plan",
            "--input", str(write_input(tmp_path)),
            "--config", str(run_config_file(tmp_path, config)),
        ])
        assert code == 0
        assert not (tmp_path / "out" / "mix.wav").exists()

    def test_cli_flags_override_config(self, tmp_path):
        config = street_config(tmp_path)
        out_dir = tmp_path / "elsewhere"
        code = main([
            "run",
            "--input", str(write_input(tmp_path)),
            "--config", str(run_config_file(tmp_path, config)),
            "--out", str(out_dir),
            "--backend", config.backend,
            "--tools", "mock",
            "--seed", "3",
            "--parallel", "1",
        ])
        assert code == 0
        assert (out_dir / "mix.wav").exists()

    def test_env_overrides(self, tmp_path, monkeypatch):
        config = street_config(tmp_path)
        env_out = tmp_path / "env_out"
        monkeypatch.setenv("SOUNDSTAGE_OUT", str(env_out))
        monkeypatch.setenv("SOUNDSTAGE_BACKEND", config.backend)
        code = main([
            "run",
            "--input", str(write_input(tmp_path)),
            "--tools", "mock",
        ])
        assert code == 0
        assert (env_out / "mix.wav").exists()


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path):
        bad = tmp_path / "config.json"
        bad.write_text('{"wibble": 1}', "utf-8")
        code = main(["run", "--input", str(write_input(tmp_path)), "--config", str(bad)])
        assert code == 2

    def test_input_error_is_3(self, tmp_path):
        config = street_config(tmp_path)
        empty = tmp_path / "empty.json"
        empty.write_text("{}", "utf-8")
        code = main([
            "run", "--input", str(empty),
            "--config", str(run_config_file(tmp_path, config)),
        ])
        assert code == 3

    def test_stage1_failure_is_4(self, tmp_path):
        script = write_script(tmp_path, script={"planner": []}, name="empty_session.json")
        config = street_config(tmp_path)
        config.backend = f"scripted:{script}"
        code = main([
            "run", "--input", str(write_input(tmp_path)),
            "--config", str(run_config_file(tmp_path, config)),
        ])
        assert code == 4

    def test_stage2_failure_is_5(self, tmp_path):
        from conftest import street_scene_script

        script = street_scene_script()
        script["expert:sound_effect"] = []  # stage 2 has nothing to replay
        path = write_script(tmp_path, script=script, name="broken_stage2.json")
        config = street_config(tmp_path)
        config.backend = f"scripted:{path}"
        code = main([
            "run", "--input", str(write_input(tmp_path)),
            "--config", str(run_config_file(tmp_path, config)),
        ])
        assert code == 5

    def test_stage3_failure_is_6(self, tmp_path):
        from conftest import street_scene_script

        script = street_scene_script()
        script["audio_evaluator"] = []  # evaluation cannot run
        path = write_script(tmp_path, script=script, name="broken_stage3.json")
        config = street_config(tmp_path)
        config.backend = f"scripted:{path}"
        code = main([
            "run", "--input", str(write_input(tmp_path)),
            "--config", str(run_config_file(tmp_path, config)),
        ])
        assert code == 6

    def test_trace_error_is_8(self, tmp_path, capsys):
        bad = tmp_path / "trace.json"
        bad.write_text("[]", "utf-8")
        assert main(["inspect-tree", str(bad)]) == 8

    def test_manifest_error_is_9(self, tmp_path):
        config = street_config(tmp_path)
        bad = tmp_path / "manifest.json"
        bad.write_text("[]", "utf-8")
        code = main([
            "bench", "--manifest", str(bad),
            "--config", str(run_config_file(tmp_path, config)),
        ])
        assert code == 9


class TestBenchAndInspectVerbs:
    def test_bench_verb(self, tmp_path, capsys):
        config = street_config(tmp_path)
        manifest = tmp_path / "manifest.json"
        descriptor_input = {
            "text": "street",
            "precomputed_caption": "street at night",
            "duration_s": 30.0,
        }
        manifest.write_text(
            json.dumps([{"id": "only", "input": descriptor_input, "expected_event_count": 4}]),
            "utf-8",
        )
        code = main([
            "bench", "--manifest", str(manifest),
            "--config", str(run_config_file(tmp_path, config)),
        ])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary == {"cases": 1, "failed": []}

    def test_inspect_verb(self, tmp_path, capsys):
        from soundstage.pipeline import run as run_pipeline
        from conftest import street_scene_input

        result = run_pipeline(street_config(tmp_path), street_scene_input())
        dot_path = tmp_path / "tree.dot"
        code = main(["inspect-tree", str(result.trace_paths[0]), "--dot", str(dot_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert out.startswith("n0 initial")
        assert dot_path.exists()
