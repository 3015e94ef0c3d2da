"""Stack-trace fingerprinting: regex set over plain-text and JSON-embedded 500 bodies."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources


@dataclass(frozen=True)
class TracePattern:
    name: str
    language: str
    regex: re.Pattern


@dataclass(frozen=True)
class TraceMatch:
    pattern: str
    language: str
    snippet: str


def _compile(entries: list[dict]) -> list[TracePattern]:
    patterns = []
    for entry in entries:
        patterns.append(
            TracePattern(entry["name"], entry.get("language", ""), re.compile(entry["pattern"]))
        )
    return patterns


def load_default_patterns() -> list[TracePattern]:
    raw = resources.files("restsec").joinpath("data/stack_trace_patterns.json").read_text()
    return _compile(json.loads(raw)["patterns"])


def load_patterns_file(path: str) -> list[TracePattern]:
    """Load a named-pattern JSON file: {"patterns": [{"name", "language", "pattern"}]}."""
    with open(path, encoding="utf-8") as fh:
        return _compile(json.load(fh)["patterns"])


def _collect_strings(node, out: list[str]):
    if isinstance(node, str):
        out.append(node)
    elif isinstance(node, dict):
        for value in node.values():
            _collect_strings(value, out)
    elif isinstance(node, list):
        for item in node:
            _collect_strings(item, out)


def _candidates(body: str) -> list[str]:
    """Views of the body worth scanning: raw text, JSON string content, unescaped text."""
    views = [body]
    stripped = body.lstrip()
    if stripped.startswith(("{", "[")):
        try:
            data = json.loads(body)
        except json.JSONDecodeError:
            data = None
        if data is not None:
            strings: list[str] = []
            _collect_strings(data, strings)
            if strings:
                views.append("\n".join(strings))
    if "\\n" in body or "\\t" in body:
        views.append(body.replace("\\r", "").replace("\\n", "\n").replace("\\t", "\t"))
    return views


def scan_body(body: str, patterns: list[TracePattern]) -> TraceMatch | None:
    """First pattern matching any view of the body, or None."""
    if not body:
        return None
    views = _candidates(body)
    for pattern in patterns:
        for view in views:
            m = pattern.regex.search(view)
            if m:
                snippet = m.group(0).strip()
                if len(snippet) > 200:
                    snippet = snippet[:200] + "..."
                return TraceMatch(pattern.name, pattern.language, snippet)
    return None
