"""Tree trace files: persistence, inspection rendering, DOT export.

Traces are written with a fixed key order and relative artifact names so
replay runs produce byte-identical files.
"""
from __future__ import annotations

import json
from pathlib import Path

from .errors import TraceParseError
from .events import event_to_json_dict
from .experts import EventAssignment
from .library import GenerationSpec
from .mixer import PostProcessAction
from .search import GenerationTree, ToTNode


def _payload_to_json(node: ToTNode) -> dict:
    payload = node.payload
    if isinstance(payload, EventAssignment):
        return {
            "event": event_to_json_dict(payload.event),
            "candidates": list(payload.candidates),
        }
    if isinstance(payload, GenerationSpec):
        return {
            "spec": {
                "tool_id": payload.tool_id,
                "prompt": payload.prompt,
                "duration_s": payload.duration_s,
                "extra": dict(sorted(payload.extra.items())),
            }
        }
    if isinstance(payload, PostProcessAction):
        return {
            "action": {
                "kind": payload.kind,
                "params": dict(sorted(payload.params.items())),
                "tool_id": payload.tool_id,
                "external_action": payload.action,
            }
        }
    return {}


def _report_to_json(node: ToTNode) -> dict | None:
    if node.report is None:
        return None
    return {
        "quality": node.report.quality,
        "alignment": node.report.alignment,
        "aesthetics": node.report.aesthetics,
        "issues": [{"tag": i.tag, "detail": i.detail} for i in node.report.issues],
        "verdict": node.report.verdict,
    }


def tree_to_trace(tree: GenerationTree, event_index: int) -> dict:
    nodes = []
    for node in sorted(tree.nodes.values(), key=lambda n: n.order):
        nodes.append(
            {
                "id": node.id,
                "kind": node.kind,
                "parent": node.parent,
                "order": node.order,
                "status": node.status,
                "children": list(node.children),
                "payload": _payload_to_json(node),
                "artifact": Path(node.artifact_path).name if node.artifact_path else None,
                "report": _report_to_json(node),
                "error": node.error,
            }
        )
    return {
        "event_index": event_index,
        "budget": {
            "max_retries": tree.budget.max_retries,
            "max_fix_chain": tree.budget.max_fix_chain,
        },
        "root": tree.root,
        "nodes": nodes,
    }


def write_trace(path, tree: GenerationTree, event_index: int) -> None:
    Path(path).write_text(json.dumps(tree_to_trace(tree, event_index), indent=2) + "\n", "utf-8")


def load_trace(path) -> dict:
    try:
        data = json.loads(Path(path).read_text("utf-8"))
    except (OSError, ValueError) as exc:
        raise TraceParseError(f"cannot read trace {path}: {exc}") from exc
    if not isinstance(data, dict) or "nodes" not in data or "root" not in data:
        raise TraceParseError(f"trace {path} is missing nodes/root")
    by_id = {}
    for node in data["nodes"]:
        if not isinstance(node, dict) or "id" not in node or "kind" not in node:
            raise TraceParseError(f"trace {path} has a malformed node")
        by_id[node["id"]] = node
    if data["root"] not in by_id:
        raise TraceParseError(f"trace {path} root {data['root']!r} not among nodes")
    for node in data["nodes"]:
        for child in node.get("children", []):
            if child not in by_id:
                raise TraceParseError(f"trace {path} has dangling child {child!r}")
    return data


def _node_label(node: dict) -> str:
    bits = [node["kind"]]
    payload = node.get("payload") or {}
    if "spec" in payload:
        bits.append(f"tool={payload['spec']['tool_id']}")
    if "action" in payload:
        bits.append(payload["action"]["external_action"] or payload["action"]["kind"])
    bits.append(f"[{node.get('status', '?')}]")
    report = node.get("report")
    if report:
        bits.append(
            f"q={report['quality']:.1f} a={report['alignment']:.1f} ae={report['aesthetics']:.1f}"
        )
        if report.get("verdict"):
            bits.append(f"verdict={report['verdict']}")
    if node.get("error"):
        bits.append(f"error={node['error']}")
    return " ".join(bits)


def render_trace(trace: dict) -> str:
    """Deterministic indented rendering, root first, children in trial order."""
    by_id = {node["id"]: node for node in trace["nodes"]}
    lines: list[str] = []

    def walk(node_id: str, depth: int) -> None:
        node = by_id[node_id]
        lines.append("  " * depth + f"{node_id} {_node_label(node)}")
        for child in node.get("children", []):
            walk(child, depth + 1)

    walk(trace["root"], 0)
    return "\n".join(lines)


def trace_to_dot(trace: dict) -> str:
    lines = ["digraph generation_tree {", "  node [shape=box];"]
    for node in trace["nodes"]:
        label = _node_label(node).replace('"', "'")
        lines.append(f'  "{node["id"]}" [label="{label}"];')
    for node in trace["nodes"]:
        for child in node.get("children", []):
            lines.append(f'  "{node["id"]}" -> "{child}";')
    lines.append("}")
    return "\n".join(lines)
