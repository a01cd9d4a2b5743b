"""Stage 2: routing, candidate selection, spec refinement, collaboration."""
from __future__ import annotations

import json
import random

import pytest

from soundstage.errors import NoToolForType, SchemaViolation, StructuredParseFailed
from soundstage.events import AudioType, EventPlan, parse_plan
from soundstage.experts import (
    EventAssignment,
    apply_replacement_specs,
    check_assignment,
    collaborative_refine,
    refine_spec,
    route,
    run_stage2,
    select_candidates,
    self_refine,
    supervise_assignments,
)
from soundstage.library import GenerationSpec, ToolLibrary, default_library
from soundstage.protocol import ScriptedBackend

from conftest import (
    APPROVE,
    NO_CHANGES,
    make_event,
    spec_reply,
    street_events_json,
    street_scene_script,
)

LIB = default_library()


def street_plan() -> EventPlan:
    plan = parse_plan(json.dumps(street_events_json()))
    plan.scene_caption = "busy street at night"
    plan.total_duration = 30.0
    return plan


def assignment_for(event, candidates, prompts=None) -> EventAssignment:
    prompts = prompts or {c: f"prompt for {c}" for c in candidates}
    return EventAssignment(
        event=event,
        event_index=0,
        candidates=list(candidates),
        specs={
            c: GenerationSpec(tool_id=c, prompt=prompts[c], duration_s=event.span_s)
            for c in candidates
        },
    )


class TestRoute:
    def test_street_plan_partition(self):
        buckets = route(street_plan())
        assert len(buckets[AudioType.SOUND_EFFECT]) == 3
        assert len(buckets[AudioType.SONG]) == 1
        assert AudioType.SPEECH not in buckets

    def test_single_speech_event(self):
        event = make_event(audio_type=AudioType.SPEECH)
        buckets = route(EventPlan(events=[event]))
        assert buckets == {AudioType.SPEECH: [event]}

    def test_partition_property_random_plans(self):
        rng = random.Random(99)
        for _ in range(50):
            events = [
                make_event(audio_type=rng.choice(list(AudioType)), start=i, end=i + 1.0)
                for i in range(rng.randint(1, 10))
            ]
            plan = EventPlan(events=events)
            buckets = route(plan)
            # every event exactly once
            flattened = [e for bucket in buckets.values() for e in bucket]
            assert len(flattened) == len(events)
            assert all(any(e is f for f in flattened) for e in events)
            # relative order preserved inside each bucket
            for audio_type, bucket in buckets.items():
                expected = [e for e in events if e.audio_type is audio_type]
                assert all(a is b for a, b in zip(bucket, expected))


class TestSelectCandidates:
    def test_music_event_subset_of_table(self):
        backend = ScriptedBackend(
            {"expert:music": [json.dumps({"candidates": ["InspireMusic", "MusicGen"]})]}
        )
        event = make_event(audio_type=AudioType.MUSIC)
        picked = select_candidates(backend, event, LIB)
        assert picked == ["InspireMusic", "MusicGen"]
        assert set(picked) <= {"InspireMusic", "MusicGen"}

    def test_song_event_single_candidate(self):
        backend = ScriptedBackend(
            {"expert:song": [json.dumps({"candidates": ["DiffRhythm"]})]}
        )
        event = make_event(audio_type=AudioType.SONG)
        assert select_candidates(backend, event, LIB) == ["DiffRhythm"]

    def test_unknown_id_falls_back_to_covering_set(self):
        backend = ScriptedBackend(
            {"expert:sound_effect": [json.dumps({"candidates": ["FooGen"]})]}
        )
        event = make_event(audio_type=AudioType.SOUND_EFFECT)
        # oracle = the filter rule: covering generators in library order
        assert select_candidates(backend, event, LIB) == ["MMAudio", "Auffusion"]

    def test_non_covering_id_filtered(self):
        backend = ScriptedBackend(
            {"expert:music": [json.dumps({"candidates": ["DiffRhythm", "MusicGen"]})]}
        )
        event = make_event(audio_type=AudioType.MUSIC)
        assert select_candidates(backend, event, LIB) == ["MusicGen"]

    def test_truncated_to_two(self):
        backend = ScriptedBackend(
            {"expert:music": [json.dumps(["MusicGen", "InspireMusic", "MusicGen"])]}
        )
        event = make_event(audio_type=AudioType.MUSIC)
        assert select_candidates(backend, event, LIB) == ["MusicGen", "InspireMusic"]

    def test_no_tool_for_type_before_any_call(self):
        no_song = ToolLibrary(
            [d for d in LIB if AudioType.SONG not in d.audio_types or d.kind != "generator"]
        )
        backend = ScriptedBackend({})
        with pytest.raises(NoToolForType):
            select_candidates(backend, make_event(audio_type=AudioType.SONG), no_song)
        assert backend.total_calls == 0


class TestRefineSpec:
    def test_duration_from_event_bounds(self):
        backend = ScriptedBackend(
            {"expert:sound_effect": [spec_reply("fireworks crackling in the sky")]}
        )
        event = make_event(start=2.0, end=6.5, description="fireworks")
        spec = refine_spec(backend, event, "Auffusion", LIB)
        assert spec.duration_s == 4.5  # oracle: 6.5 - 2.0
        assert spec.tool_id == "Auffusion"

    def test_song_spec_gets_lyrics(self):
        backend = ScriptedBackend({"expert:song": [spec_reply("folk ballad")]})
        event = make_event(
            audio_type=AudioType.SONG, start=0.0, end=20.0,
            description="a song about evening streets",
        )
        spec = refine_spec(backend, event, "DiffRhythm", LIB)
        assert spec.extra["lyrics"] == "a song about evening streets"

    def test_agent_lyrics_respected(self):
        backend = ScriptedBackend(
            {"expert:song": [spec_reply("folk ballad", {"lyrics": "la la la"})]}
        )
        event = make_event(audio_type=AudioType.SONG, end=20.0)
        assert refine_spec(backend, event, "DiffRhythm", LIB).extra["lyrics"] == "la la la"

    def test_empty_prompt_is_schema_violation(self):
        backend = ScriptedBackend(
            {"expert:sound_effect": [spec_reply("  "), spec_reply(""), spec_reply(" ")]}
        )
        with pytest.raises(StructuredParseFailed) as err:
            refine_spec(backend, make_event(), "Auffusion", LIB)
        assert isinstance(err.value.last_error, SchemaViolation)

    def test_tool_must_cover_event_type(self):
        backend = ScriptedBackend({})
        with pytest.raises(NoToolForType):
            refine_spec(backend, make_event(audio_type=AudioType.MUSIC), "DiffRhythm", LIB)


class TestSelfRefine:
    def test_no_change_fixed_point(self):
        backend = ScriptedBackend({"expert:sound_effect": [NO_CHANGES]})
        assignment = assignment_for(make_event(), ["MMAudio", "Auffusion"])
        out = self_refine(backend, assignment, LIB, max_iters=2)
        assert out.specs == assignment.specs
        assert backend.calls_for("expert:sound_effect") == 1

    def test_rewrite_then_no_change(self):
        rewrite = json.dumps(
            {"specs": {"MMAudio": {"prompt": "sharper crowd roar", "extra": {}}}}
        )
        backend = ScriptedBackend({"expert:sound_effect": [rewrite, NO_CHANGES]})
        assignment = assignment_for(make_event(), ["MMAudio", "Auffusion"])
        out = self_refine(backend, assignment, LIB, max_iters=2)
        assert backend.calls_for("expert:sound_effect") == 2
        assert out.specs["MMAudio"].prompt == "sharper crowd roar"
        assert out.specs["Auffusion"] == assignment.specs["Auffusion"]

    def test_zero_iters_identity_zero_calls(self):
        backend = ScriptedBackend({})
        assignment = assignment_for(make_event(), ["MMAudio"])
        out = self_refine(backend, assignment, LIB, max_iters=0)
        assert out == assignment
        assert backend.total_calls == 0

    def test_timing_immutable(self):
        rewrite = json.dumps(
            {"specs": {"MMAudio": {"prompt": "new", "extra": {}, "duration_s": 99.0}}}
        )
        backend = ScriptedBackend({"expert:sound_effect": [rewrite, NO_CHANGES]})
        event = make_event(start=1.0, end=3.5)
        out = self_refine(backend, assignment_for(event, ["MMAudio"]), LIB)
        assert out.specs["MMAudio"].duration_s == 2.5


class TestCollaborativeRefine:
    def two_type_assignments(self):
        music_event = make_event(audio_type=AudioType.MUSIC, description="underscore")
        song_event = make_event(audio_type=AudioType.SONG, description="live song")
        music = assignment_for(music_event, ["InspireMusic"])
        song = assignment_for(song_event, ["DiffRhythm"], {"DiffRhythm": "street folk song"})
        song.event_index = 1
        return [music, song]

    def test_all_no_change_identity(self):
        backend = ScriptedBackend({"expert:music": [NO_CHANGES], "expert:song": [NO_CHANGES]})
        assignments = self.two_type_assignments()
        out = collaborative_refine(backend, assignments, LIB)
        assert [a.specs for a in out] == [a.specs for a in assignments]

    def test_music_expert_tags_song_prompt(self):
        amendment = json.dumps({
            "amendments": [
                {"event_index": 1, "tool_id": "DiffRhythm",
                 "prompt": "street folk song, folk, live"}
            ]
        })
        backend = ScriptedBackend({"expert:music": [amendment], "expert:song": [NO_CHANGES]})
        out = collaborative_refine(backend, self.two_type_assignments(), LIB)
        assert "folk, live" in out[1].specs["DiffRhythm"].prompt

    def test_foreign_full_rewrite_ignored(self):
        amendment = json.dumps({
            "amendments": [
                {"event_index": 1, "tool_id": "DiffRhythm", "prompt": "something unrelated"}
            ]
        })
        backend = ScriptedBackend({"expert:music": [amendment], "expert:song": [NO_CHANGES]})
        out = collaborative_refine(backend, self.two_type_assignments(), LIB)
        assert out[1].specs["DiffRhythm"].prompt == "street folk song"

    def test_foreign_extra_restricted_to_cross_cutting_keys(self):
        amendment = json.dumps({
            "amendments": [
                {"event_index": 1, "tool_id": "DiffRhythm",
                 "extra": {"style": "folk", "lyrics": "hijacked"}}
            ]
        })
        backend = ScriptedBackend({"expert:music": [amendment], "expert:song": [NO_CHANGES]})
        out = collaborative_refine(backend, self.two_type_assignments(), LIB)
        extra = out[1].specs["DiffRhythm"].extra
        assert extra["style"] == "folk"
        assert extra["lyrics"] != "hijacked"

    def test_exactly_one_pass_per_present_type(self):
        backend = ScriptedBackend({"expert:music": [NO_CHANGES], "expert:song": [NO_CHANGES]})
        collaborative_refine(backend, self.two_type_assignments(), LIB)
        assert backend.calls_for("expert:music") == 1
        assert backend.calls_for("expert:song") == 1
        assert backend.total_calls == 2

    def test_order_must_cover_present_types(self):
        backend = ScriptedBackend({})
        with pytest.raises(ValueError):
            collaborative_refine(
                backend, self.two_type_assignments(), LIB, expert_order=(AudioType.MUSIC,)
            )


class TestSuperviseAssignments:
    def test_approve_pass_through(self):
        backend = ScriptedBackend({"assignment_supervisor": [APPROVE]})
        verdict = supervise_assignments(backend, [assignment_for(make_event(), ["MMAudio"])])
        assert verdict.decision == "approve"

    def test_rewrite_replacement_applied_and_validated(self):
        assignment = assignment_for(make_event(start=0.0, end=2.0), ["MMAudio", "Auffusion"])
        replacement = {0: {"MMAudio": {"prompt": "supervisor rewrite", "extra": {}}}}
        out = apply_replacement_specs([assignment], replacement, LIB)
        assert out[0].specs["MMAudio"].prompt == "supervisor rewrite"
        assert out[0].specs["MMAudio"].duration_s == 2.0
        check_assignment(out[0], LIB)

    def test_rewrite_outside_candidates_dropped(self):
        assignment = assignment_for(make_event(), ["MMAudio"])
        replacement = {0: {"MusicGen": {"prompt": "wrong tool", "extra": {}}}}
        out = apply_replacement_specs([assignment], replacement, LIB)
        assert "MusicGen" not in out[0].specs
        check_assignment(out[0], LIB)


class TestRunStage2:
    def test_street_scene_full_pass(self):
        backend = ScriptedBackend(street_scene_script())
        result = run_stage2(backend, street_plan(), LIB)
        assert len(result.assignments) == 4
        assert result.verdicts == ["approve"]
        assert result.collab_passes == 1
        song = result.assignments[3]
        assert song.candidates == ["DiffRhythm"]
        assert "lyrics" in song.specs["DiffRhythm"].extra
        for a in result.assignments:
            check_assignment(a, LIB)
            for spec in a.specs.values():
                assert abs(spec.duration_s - a.event.span_s) < 1e-9

    def test_street_scene_exact_call_count(self):
        # closed form: per event 1 select + |candidates| refines + 1 self pass,
        # plus one collab pass per present type, plus one supervision round
        backend = ScriptedBackend(street_scene_script())
        run_stage2(backend, street_plan(), LIB)
        per_event = (1 + 2 + 1) + (1 + 2 + 1) + (1 + 2 + 1) + (1 + 1 + 1)
        expected = per_event + 2 + 1
        assert backend.total_calls == expected == 18

    def test_call_bound_formula(self):
        backend = ScriptedBackend(street_scene_script())
        result = run_stage2(backend, street_plan(), LIB, self_refine_iters=2)
        n_events = 4
        present_types = 2
        bound = n_events * (1 + 2 + 2) + present_types * result.collab_passes + len(result.verdicts)
        assert backend.total_calls <= bound

    def test_revise_triggers_one_more_collab_then_forced_accept(self):
        script = street_scene_script()
        script["assignment_supervisor"] = [
            json.dumps({"decision": "revise", "suggestions": ["tighten the song style"]}),
            json.dumps({"decision": "revise", "suggestions": ["still unhappy"]}),
        ]
        script["expert:sound_effect"].append(NO_CHANGES)  # second collab pass
        script["expert:song"].append(NO_CHANGES)
        backend = ScriptedBackend(script)
        result = run_stage2(backend, street_plan(), LIB)
        assert result.verdicts == ["revise", "revise"]
        assert result.collab_passes == 2
        assert len(result.assignments) == 4  # forced acceptance still yields output

    def test_supervisor_rewrite_replaces_one_spec(self):
        script = street_scene_script()
        script["assignment_supervisor"] = [
            json.dumps({
                "decision": "rewrite",
                "replacement_specs": {
                    "3": {"DiffRhythm": {"prompt": "slower ballad, intimate", "extra": {}}}
                },
            })
        ]
        backend = ScriptedBackend(script)
        result = run_stage2(backend, street_plan(), LIB)
        assert result.assignments[3].specs["DiffRhythm"].prompt == "slower ballad, intimate"
        check_assignment(result.assignments[3], LIB)
