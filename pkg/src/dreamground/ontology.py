"""Event ontologies, documents, and trigger-candidate atomization.

The grounding stage may only emit event types drawn from a closed ontology
and trigger phrases drawn from the input sentence. This module owns those
two alphabets: loading ontologies, slicing a document into candidate
trigger phrases, and checking a mention against both.
"""

from __future__ import annotations

import enum
import json
import os
import re
from dataclasses import dataclass
from typing import BinaryIO, Iterator, Optional, Union

from .errors import IoFailureError, MalformedOntologyError

# Punctuation stripped from word boundaries when atomizing. Interior
# hyphens/apostrophes survive because stripping only touches the ends.
_BOUNDARY_PUNCT = set(".,;:!?\"'()[]")

_WORD_RE = re.compile(r"\S+")


@dataclass(frozen=True)
class EventType:
    """One entry of a closed event ontology."""

    name: str  # unique identifier, e.g. "Life:Be-Born"
    definition: Optional[str] = None  # free-text gloss, shown in prompts

    def __post_init__(self):
        if not self.name or not self.name.strip():
            raise MalformedOntologyError("event type name must be non-empty")
        if "\n" in self.name:
            raise MalformedOntologyError(
                f"event type name may not contain newlines: {self.name!r}"
            )


@dataclass(frozen=True)
class EventOntology:
    """Ordered collection of event types with unique names."""

    types: tuple[EventType, ...]

    def __post_init__(self):
        if not self.types:
            raise MalformedOntologyError("ontology must contain at least one event type")
        seen = set()
        for t in self.types:
            if t.name in seen:
                raise MalformedOntologyError(f"duplicate event type name: {t.name!r}")
            seen.add(t.name)

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.types]

    def __contains__(self, name: object) -> bool:
        return any(t.name == name for t in self.types)

    def __iter__(self) -> Iterator[EventType]:
        return iter(self.types)

    def __len__(self) -> int:
        return len(self.types)

    def get(self, name: str) -> Optional[EventType]:
        for t in self.types:
            if t.name == name:
                return t
        return None


@dataclass(frozen=True)
class Document:
    """A single input unit (usually one sentence)."""

    id: str
    text: str
    tokens: Optional[tuple[str, ...]] = None  # optional pre-tokenized words

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("document text must be non-empty")
        if self.tokens is not None:
            if " ".join(self.tokens).split() != self.text.split():
                raise ValueError(
                    "document tokens do not reproduce the text's word sequence"
                )


class AtomizationMode(str, enum.Enum):
    SINGLE_WORD = "SINGLE_WORD"
    SUBSTRING = "SUBSTRING"


@dataclass(frozen=True)
class AtomizationPolicy:
    """How a document is sliced into candidate trigger phrases.

    SINGLE_WORD keeps individual words only; SUBSTRING additionally keeps
    contiguous word n-grams up to ``max_phrase_words`` words. Use the
    single-word mode for corpora whose gold triggers are single words and
    the substring mode for corpora with multi-word triggers.
    """

    mode: AtomizationMode = AtomizationMode.SINGLE_WORD
    max_phrase_words: int = 5

    def __post_init__(self):
        if self.max_phrase_words < 1:
            raise ValueError("max_phrase_words must be >= 1")


@dataclass(frozen=True)
class GroundedMention:
    """An (event type, trigger) pair tied to a document."""

    event_type: str
    trigger: str


class Violation(str, enum.Enum):
    EVENT_NOT_IN_ONTOLOGY = "EVENT_NOT_IN_ONTOLOGY"
    TRIGGER_NOT_IN_TEXT = "TRIGGER_NOT_IN_TEXT"


def _word_spans(doc: Document) -> list[tuple[int, int]]:
    """Character spans of the document's words, boundary punctuation stripped."""
    raw: list[tuple[int, int]] = []
    if doc.tokens is not None:
        cursor = 0
        for tok in doc.tokens:
            start = doc.text.find(tok, cursor)
            if start < 0:
                raise ValueError(f"token {tok!r} not found in document text")
            raw.append((start, start + len(tok)))
            cursor = start + len(tok)
    else:
        raw = [m.span() for m in _WORD_RE.finditer(doc.text)]

    spans = []
    for start, end in raw:
        while start < end and doc.text[start] in _BOUNDARY_PUNCT:
            start += 1
        while end > start and doc.text[end - 1] in _BOUNDARY_PUNCT:
            end -= 1
        if start < end:
            spans.append((start, end))
    return spans


def atomize(doc: Document, policy: AtomizationPolicy) -> list[str]:
    """Candidate trigger phrases for ``doc`` under ``policy``.

    SINGLE_WORD returns each stripped word once, in first-occurrence order.
    SUBSTRING returns every contiguous span from word i to word j with
    j - i < max_phrase_words, cut from the original text (so interior
    punctuation and spacing are preserved), ordered by (start, length)
    and deduplicated.
    """
    spans = _word_spans(doc)
    out: list[str] = []
    seen: set[str] = set()

    if policy.mode is AtomizationMode.SINGLE_WORD:
        for start, end in spans:
            word = doc.text[start:end]
            if word not in seen:
                seen.add(word)
                out.append(word)
        return out

    for i in range(len(spans)):
        for n in range(1, policy.max_phrase_words + 1):
            j = i + n - 1
            if j >= len(spans):
                break
            phrase = doc.text[spans[i][0] : spans[j][1]]
            if phrase not in seen:
                seen.add(phrase)
                out.append(phrase)
    return out


def validate_mention(
    mention: GroundedMention,
    doc: Document,
    ontology: EventOntology,
    policy: AtomizationPolicy,
) -> list[Violation]:
    """Check a mention against the ontology and the document's candidates.

    Returns the (possibly empty) list of violations; an empty list means
    the mention is admissible. Matching is exact and case-sensitive; the
    evaluation layer, not this check, decides how forgiving scoring is.
    """
    violations = []
    if mention.event_type not in ontology:
        violations.append(Violation.EVENT_NOT_IN_ONTOLOGY)
    if mention.trigger not in atomize(doc, policy):
        violations.append(Violation.TRIGGER_NOT_IN_TEXT)
    return violations


OntologySource = Union[bytes, str, os.PathLike, BinaryIO]


def load_ontology(source: OntologySource) -> EventOntology:
    """Load an ontology from JSON: ``[{"name": ..., "definition"?: ...}]``.

    ``source`` may be raw bytes/str, a path, or a binary file object.
    Raises MalformedOntologyError for anything that does not decode to a
    non-empty array of uniquely named entries.
    """
    if isinstance(source, bytes):
        data = source
    elif isinstance(source, str) and source.lstrip().startswith("["):
        data = source.encode("utf-8")
    elif isinstance(source, (str, os.PathLike)):
        try:
            with open(source, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise IoFailureError(f"cannot read ontology file: {exc}") from None
    else:
        data = source.read()

    try:
        parsed = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedOntologyError(f"ontology is not valid JSON: {exc}") from None

    if not isinstance(parsed, list):
        raise MalformedOntologyError("ontology JSON must be an array of objects")
    if not parsed:
        raise MalformedOntologyError("ontology must contain at least one event type")

    types = []
    for i, item in enumerate(parsed):
        if not isinstance(item, dict) or "name" not in item:
            raise MalformedOntologyError(f"ontology entry {i} lacks a name")
        name = item["name"]
        if not isinstance(name, str):
            raise MalformedOntologyError(f"ontology entry {i} has a non-string name")
        definition = item.get("definition")
        if definition is not None and not isinstance(definition, str):
            raise MalformedOntologyError(f"ontology entry {i} has a non-string definition")
        types.append(EventType(name=name, definition=definition))
    return EventOntology(types=tuple(types))
