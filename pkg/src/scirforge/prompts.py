"""Prompt template loading and rendering.

Templates are plain text files with {lowercase_name} placeholders.  Braces
that do not wrap a lowercase identifier (JSON examples, set notation) pass
through untouched, which is why rendering is regex-based rather than
str.format.
"""
from __future__ import annotations

import re
from pathlib import Path

TEMPLATE_DIR = Path(__file__).parent / "templates"

_PLACEHOLDER = re.compile(r"\{([a-z][a-z0-9_]*)\}")


def load_template(name: str, template_dir: Path | None = None) -> str:
    directory = Path(template_dir) if template_dir else TEMPLATE_DIR
    path = directory / name
    if not path.exists():
        raise FileNotFoundError(f"template not found: {path}")
    return path.read_text(encoding="utf-8")


def render(template: str, **values: str) -> str:
    """Substitute every {name} placeholder; missing values are an error."""
    found = set(_PLACEHOLDER.findall(template))
    missing = found - set(values)
    if missing:
        raise KeyError(f"template placeholders without values: {sorted(missing)}")
    return _PLACEHOLDER.sub(lambda m: str(values[m.group(1)]), template)


_ROLE_MARKER = re.compile(r"^(SYSTEM|USER):\s*$", re.MULTILINE)


def split_roles(text: str) -> tuple[tuple[str, str], ...]:
    """Split a template on SYSTEM:/USER: marker lines into chat messages.

    Text without markers becomes a single user message.
    """
    markers = list(_ROLE_MARKER.finditer(text))
    if not markers:
        return (("user", text.strip()),)
    messages = []
    for i, m in enumerate(markers):
        start = m.end()
        end = markers[i + 1].start() if i + 1 < len(markers) else len(text)
        body = text[start:end].strip()
        if body:
            messages.append((m.group(1).lower(), body))
    if not messages:
        raise ValueError("role markers present but every section is empty")
    return tuple(messages)
