"""Prompt templates: loading, slot filling, and block rendering.

Templates are versioned text files shipped with the package. Slots use
``{{name}}`` syntax; the standard slots are ``{{sentence}}``,
``{{ontology}}``, and ``{{dreamed}}`` (the verdict template adds
``{{event_type}}`` and ``{{trigger}}``).
"""

from __future__ import annotations

import re
from importlib import resources
from typing import Iterable, Sequence

from .errors import ConfigError
from .ontology import EventOntology, EventType

_SLOT_RE = re.compile(r"\{\{(\w+)\}\}")

TEMPLATE_NAMES = ("dreamer", "grounder", "judge", "md", "ms_types", "ms_triggers")


def load_template(name: str, version: str = "v1") -> str:
    if name not in TEMPLATE_NAMES:
        raise ConfigError(f"unknown template {name!r}; expected one of {TEMPLATE_NAMES}")
    filename = f"{name}.{version}.txt"
    try:
        return (
            resources.files("dreamground.templates").joinpath(filename).read_text("utf-8")
        )
    except FileNotFoundError:
        raise ConfigError(f"template file {filename} not found") from None


def render(template: str, **slots: str) -> str:
    """Fill every ``{{name}}`` slot; unfilled slots raise ConfigError."""

    def _sub(match: re.Match) -> str:
        key = match.group(1)
        if key not in slots:
            raise ConfigError(f"template slot {{{{{key}}}}} was not provided")
        return slots[key]

    return _SLOT_RE.sub(_sub, template)


def ontology_block(ontology: EventOntology, definitions: bool = True) -> str:
    """One line per event type, optionally with its definition."""
    lines = []
    for t in ontology:
        if definitions and t.definition:
            lines.append(f"- {t.name}: {t.definition}")
        else:
            lines.append(f"- {t.name}")
    return "\n".join(lines)


def event_type_block(event_type: EventType) -> str:
    if event_type.definition:
        return f"- {event_type.name}: {event_type.definition}"
    return f"- {event_type.name}"


def pairs_block(pairs: Iterable[tuple[str, str]]) -> str:
    """Compact JSON-style rendering of (name, trigger) pairs."""
    body = ",".join(f'["{e}","{t}"]' for e, t in pairs)
    return f"[{body}]"


def names_block(names: Sequence[str]) -> str:
    body = ",".join(f'"{n}"' for n in names)
    return f"[{body}]"
