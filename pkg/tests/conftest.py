"""Shared fixtures: the street-scene scripted session, plan builders, and a
loopback agent server for HTTP backend tests."""
from __future__ import annotations

import json
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from soundstage.events import AudioEvent, AudioType, EventPlan, InputDescriptor

APPROVE = json.dumps({"decision": "approve", "suggestions": []})
NO_CHANGES = json.dumps({"no_changes": True})


def accept_report(quality=4.5, alignment=4.2, aesthetics=4.0):
    return json.dumps(
        {
            "quality": quality,
            "alignment": alignment,
            "aesthetics": aesthetics,
            "issues": [],
            "verdict": "accept",
        }
    )


def street_events_json() -> list[dict]:
    """Four sub-events of a busy street: crowd, fireworks, shops, live song."""
    return [
        {
            "audio_type": "sound_effect",
            "object": "pedestrians",
            "start_time": 0.0,
            "end_time": 12.0,
            "description": "footsteps and cheers of passing pedestrians",
            "volume": 0.9,
        },
        {
            "audio_type": "sound_effect",
            "object": "fireworks",
            "start_time": 2.0,
            "end_time": 6.5,
            "description": "fireworks bursting in the night sky",
            "volume": 1.0,
        },
        {
            "audio_type": "sound_effect",
            "object": "shops",
            "start_time": 0.0,
            "end_time": 30.0,
            "description": "ambient noise from surrounding shops",
            "volume": 0.6,
        },
        {
            "audio_type": "song",
            "object": "street performer",
            "start_time": 5.0,
            "end_time": 30.0,
            "description": "warm folk song performed live for the crowd",
            "volume": 1.0,
        },
    ]


def street_scene_input() -> InputDescriptor:
    return InputDescriptor(
        text=(
            "A bustling commercial street where a performer sings a folk song; "
            "pedestrians watch, applaud, and cheer while fireworks light the sky."
        ),
        precomputed_caption="Busy commercial street at night, crowd and fireworks.",
        duration_s=30.0,
    )


def spec_reply(prompt: str, extra: dict | None = None) -> str:
    return json.dumps({"prompt": prompt, "extra": extra or {}})


def street_scene_script() -> dict[str, list[str]]:
    """Full scripted session: approve-first planning, two-candidate effects,
    single-candidate song, evaluator accepts every first artifact."""
    return {
        "planner": [json.dumps(street_events_json())],
        "plan_supervisor": [APPROVE],
        "expert:sound_effect": [
            json.dumps({"candidates": ["MMAudio", "Auffusion"]}),
            spec_reply("footsteps and cheering crowd on a busy street"),
            spec_reply("crowd footsteps and applause, street ambience"),
            NO_CHANGES,
            json.dumps({"candidates": ["MMAudio", "Auffusion"]}),
            spec_reply("fireworks bursting with sharp crackles"),
            spec_reply("fireworks booms, distant echoes"),
            NO_CHANGES,
            json.dumps({"candidates": ["Auffusion", "MMAudio"]}),
            spec_reply("storefront ambience with faint chatter"),
            spec_reply("shop interior hum and street chatter"),
            NO_CHANGES,
            NO_CHANGES,  # collaborative pass
        ],
        "expert:song": [
            json.dumps({"candidates": ["DiffRhythm"]}),
            spec_reply(
                "warm acoustic folk song, live street performance",
                {"lyrics": "city lights and evening crowds"},
            ),
            NO_CHANGES,
            NO_CHANGES,  # collaborative pass
        ],
        "assignment_supervisor": [APPROVE],
        "audio_evaluator": [accept_report() for _ in range(4)],
    }


def make_event(
    audio_type=AudioType.SOUND_EFFECT,
    object="thing",
    start=0.0,
    end=1.0,
    description="a sound",
    volume=1.0,
) -> AudioEvent:
    return AudioEvent(
        audio_type=audio_type,
        object=object,
        start_time=start,
        end_time=end,
        description=description,
        volume=volume,
    )


def random_plan(rng: random.Random) -> EventPlan:
    """Valid random plan with millisecond-quantized times (round-trip safe)."""
    words = ["rain", "crowd", "engine", "violin", "door", "wind", "chatter", "bells"]
    events = []
    for _ in range(rng.randint(1, 6)):
        start_ms = rng.randint(0, 20_000)
        end_ms = start_ms + rng.randint(100, 10_000)
        events.append(
            AudioEvent(
                audio_type=rng.choice(list(AudioType)),
                object=rng.choice(words),
                start_time=start_ms / 1000,
                end_time=end_ms / 1000,
                description=" ".join(rng.choices(words, k=3)) + ' "quoted" é',
                volume=rng.randint(1, 2000) / 1000,
            )
        )
    max_end_ms = max(round(e.end_time * 1000) for e in events)
    return EventPlan(
        events=events,
        scene_caption=rng.choice(["", "a scene with sound", "night street"]),
        total_duration=None if rng.random() < 0.5 else max_end_ms / 1000,
    )


class MockAgentServer:
    """Loopback /v1/chat server: flat scripted replies, per-role scripted
    replies, or injected failures."""

    def __init__(self, replies: list[str] | None = None, status: int = 200,
                 error_code: str = "backend_error", delay_s: float = 0.0,
                 role_replies: dict[str, list[str]] | None = None):
        self.replies = list(replies or [])
        self.role_replies = {k: list(v) for k, v in (role_replies or {}).items()}
        self.status = status
        self.error_code = error_code
        self.delay_s = delay_s
        self.requests: list[dict] = []
        self._server = None
        self._lock = threading.Lock()

    def start(self) -> str:
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                import time

                if outer.delay_s:
                    time.sleep(outer.delay_s)
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length))
                with outer._lock:
                    outer.requests.append(body)
                    role_queue = outer.role_replies.get(body.get("role"))
                    if role_queue:
                        reply = role_queue.pop(0)
                    else:
                        reply = outer.replies.pop(0) if outer.replies else ""
                if outer.status != 200:
                    payload = json.dumps({"code": outer.error_code, "message": "injected"}).encode()
                    self.send_response(outer.status)
                else:
                    payload = json.dumps({"content": reply}).encode()
                    self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        threading.Thread(target=self._server.serve_forever, daemon=True).start()
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def stop(self):
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()


@pytest.fixture
def agent_server():
    servers = []

    def factory(**kwargs) -> tuple[MockAgentServer, str]:
        server = MockAgentServer(**kwargs)
        url = server.start()
        servers.append(server)
        return server, url

    yield factory
    for server in servers:
        server.stop()
