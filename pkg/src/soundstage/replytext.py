"""Locating JSON payloads inside chatty agent reply text."""
from __future__ import annotations

import json
from typing import Any

from .errors import NoJsonFound

_decoder = json.JSONDecoder()


def extract_first_json(text: str) -> Any:
    """Return the first syntactically valid JSON object or array in ``text``.

    Replies may wrap their payload in prose or code fences; the scan anchors
    at every ``{`` and ``[`` in order and keeps the earliest decode that
    succeeds. Later blocks are ignored by design so repair behavior stays
    deterministic.
    """
    for pos, ch in enumerate(text):
        if ch not in "{[":
            continue
        try:
            value, _ = _decoder.raw_decode(text, pos)
        except ValueError:
            continue
        return value
    raise NoJsonFound("reply contains no valid JSON object or array")
