"""The detection pipeline: draft openly, ground strictly, verify.

Three stages run per document. The drafting stage asks a chat backend for
free-form (event name, trigger) pairs with recall-maximizing wording. The
grounding stage re-expresses those drafts in a closed ontology by decoding
under the document's token automaton, which makes constraint violations
impossible rather than merely unlikely. The verdict stage asks the chat
backend to confirm each grounded pair and keeps only confirmed ones.

Two single-prompt baselines (direct and staged) share the entry point and
are filtered after the fact instead of constrained during decoding.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .automaton import build_grounder_fsm
from .backends import ChatRequest, SamplingParams, complete_chat
from .decoding import decode
from .errors import ParseFailureError
from .evaluation import map_to_span
from .ontology import (
    AtomizationPolicy,
    Document,
    EventOntology,
    GroundedMention,
    atomize,
    validate_mention,
)
from .prompts import (
    event_type_block,
    load_template,
    names_block,
    ontology_block,
    pairs_block,
    render,
)
from .vocabulary import Vocabulary

logger = logging.getLogger(__name__)


class PromptStyle(str, enum.Enum):
    DICORE = "DICORE"  # draft -> ground -> verify
    MD = "MD"  # one direct extraction prompt
    MS = "MS"  # staged: types first, then triggers


@dataclass(frozen=True)
class FreeFormMention:
    """A drafted mention before grounding; names are unconstrained."""

    event_name: str
    trigger: str
    in_text: bool = True  # False when the trigger never occurs in the document

    @property
    def pair(self) -> tuple[str, str]:
        return (self.event_name, self.trigger)


@dataclass(frozen=True)
class JudgeVerdict:
    mention: GroundedMention
    accepted: bool
    raw_reply: str
    flagged: bool = False  # reply started with neither Yes nor No


@dataclass(frozen=True)
class PipelineConfig:
    style: PromptStyle = PromptStyle.DICORE
    atomization: AtomizationPolicy = AtomizationPolicy()
    judge_enabled: bool = True
    temperature: float = 0.4
    top_p: float = 0.9
    runs: int = 3
    seed: int = 0
    max_mentions: int = 20
    max_new_tokens_dreamer: int = 512
    max_new_tokens_judge: int = 4
    ontology_definitions: bool = True
    template_version: str = "v1"

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")


@dataclass
class Backends:
    """Capability bundle handed to run_document."""

    chat: Optional[object] = None
    logits: Optional[object] = None


@dataclass
class RunTrace:
    dreamer: list[FreeFormMention] = field(default_factory=list)
    grounder: list[GroundedMention] = field(default_factory=list)
    judge: list[JudgeVerdict] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


@dataclass
class RunResult:
    mentions: list[GroundedMention]
    trace: RunTrace


# --- lenient reply parsing ---------------------------------------------------

_FENCE_RE = re.compile(r"```[a-zA-Z]*\s*(.*?)```", re.DOTALL)


def _balanced_arrays(text: str) -> list[str]:
    """Top-level [...] substrings, skipping over string literals."""
    arrays = []
    depth = 0
    start = -1
    quote = None
    i = 0
    while i < len(text):
        ch = text[i]
        if quote is not None:
            if ch == "\\":
                i += 2
                continue
            if ch == quote:
                quote = None
        elif ch in "\"'":
            if depth > 0:
                quote = ch
        elif ch == "[":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "]":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    arrays.append(text[start : i + 1])
        i += 1
    return arrays


def _loads_lenient(snippet: str):
    try:
        return json.loads(snippet)
    except json.JSONDecodeError:
        pass
    import ast

    try:
        return ast.literal_eval(snippet)
    except (ValueError, SyntaxError):
        return None


_PAIR_NAME_KEYS = ("event_name", "event", "name", "event_type", "type")
_PAIR_TRIGGER_KEYS = ("trigger", "trigger_word", "word", "span")


def _item_to_pair(item) -> Optional[tuple[str, str]]:
    if isinstance(item, (list, tuple)):
        if len(item) < 2:
            return None
        first, second = item[0], item[1]
        if not isinstance(first, str) or not isinstance(second, str):
            return None
        first, second = first.strip(), second.strip()
        return (first, second) if first and second else None
    if isinstance(item, dict):
        name = next((item[k] for k in _PAIR_NAME_KEYS if isinstance(item.get(k), str)), None)
        trig = next((item[k] for k in _PAIR_TRIGGER_KEYS if isinstance(item.get(k), str)), None)
        if name and trig and name.strip() and trig.strip():
            return (name.strip(), trig.strip())
    return None


def _candidate_snippets(text: str) -> list[str]:
    snippets = []
    for fenced in _FENCE_RE.findall(text):
        snippets.extend(_balanced_arrays(fenced))
    snippets.extend(_balanced_arrays(text))
    return snippets


def parse_freeform_json(text: str) -> list[tuple[str, str]]:
    """Recover (event name, trigger) pairs from a free-text reply.

    Tolerates code fences, surrounding prose, python-style tuples, and
    single quotes. Malformed items are dropped and exact duplicate pairs
    removed. Raises ParseFailureError when no array can be recovered.
    """
    for snippet in _candidate_snippets(text):
        parsed = _loads_lenient(snippet)
        if not isinstance(parsed, (list, tuple)):
            continue
        if len(parsed) == 0:
            return []
        if not any(isinstance(x, (list, tuple, dict)) for x in parsed):
            continue  # an array, but not an array of pairs
        pairs = []
        seen = set()
        for item in parsed:
            pair = _item_to_pair(item)
            if pair is not None and pair not in seen:
                seen.add(pair)
                pairs.append(pair)
        return pairs
    raise ParseFailureError(f"no JSON array of pairs found in reply: {text[:120]!r}")


def parse_name_list(text: str) -> list[str]:
    """Recover a list of names (strings) from a free-text reply."""
    for snippet in _candidate_snippets(text):
        parsed = _loads_lenient(snippet)
        if not isinstance(parsed, (list, tuple)):
            continue
        if len(parsed) == 0:
            return []
        names = []
        seen = set()
        for item in parsed:
            if isinstance(item, str) and item.strip() and item.strip() not in seen:
                seen.add(item.strip())
                names.append(item.strip())
            elif isinstance(item, dict):
                pair = _item_to_pair(item)
                if pair and pair[0] not in seen:
                    seen.add(pair[0])
                    names.append(pair[0])
        if names or all(isinstance(x, str) for x in parsed):
            return names
    raise ParseFailureError(f"no JSON array of names found in reply: {text[:120]!r}")


# --- pipeline stages ---------------------------------------------------------


def _chat_sampling(config: PipelineConfig, max_new_tokens: int, seed: Optional[int]) -> SamplingParams:
    return SamplingParams(
        temperature=config.temperature,
        top_p=config.top_p,
        max_new_tokens=max_new_tokens,
        seed=seed,
    )


def dreamer(
    doc: Document,
    backend,
    config: PipelineConfig,
    seed: Optional[int] = None,
    diagnostics: Optional[list[str]] = None,
) -> list[FreeFormMention]:
    """Draft free-form mentions for ``doc``; parse failures degrade to []."""
    prompt = render(load_template("dreamer", config.template_version), sentence=doc.text)
    request = ChatRequest.user(
        prompt, _chat_sampling(config, config.max_new_tokens_dreamer, seed)
    )
    reply = complete_chat(backend, request)
    try:
        pairs = parse_freeform_json(reply)
    except ParseFailureError as exc:
        logger.warning("draft reply unparseable for doc %s: %s", doc.id, exc.message)
        if diagnostics is not None:
            diagnostics.append(f"dreamer: {exc.message}")
        return []
    lowered = doc.text.casefold()
    mentions = []
    for name, trigger in pairs:
        in_text = trigger.casefold() in lowered
        if not in_text and diagnostics is not None:
            diagnostics.append(f"dreamer: trigger {trigger!r} not in text")
        mentions.append(FreeFormMention(event_name=name, trigger=trigger, in_text=in_text))
    return mentions


def grounder(
    doc: Document,
    dreamed: Sequence[FreeFormMention],
    ontology: EventOntology,
    backend,
    vocab: Vocabulary,
    config: PipelineConfig,
    rng: Optional[np.random.Generator] = None,
    seed: Optional[int] = None,
) -> list[GroundedMention]:
    """Constrained re-expression of drafts in the closed ontology.

    Every returned mention is admissible by construction: the decoder can
    only move along automaton transitions, so event types come from the
    ontology and triggers from the document's candidate phrases.
    """
    if not atomize(doc, config.atomization):
        return []
    automaton = build_grounder_fsm(
        ontology, doc, config.atomization, vocab, max_mentions=config.max_mentions
    )
    prompt = render(
        load_template("grounder", config.template_version),
        sentence=doc.text,
        ontology=ontology_block(ontology, definitions=config.ontology_definitions),
        dreamed=pairs_block([m.pair for m in dreamed]),
    )
    sampling = SamplingParams(
        temperature=config.temperature,
        top_p=config.top_p,
        max_new_tokens=config.max_new_tokens_dreamer,
        seed=seed,
    )
    output = decode(automaton, backend, vocab.encode(prompt), sampling, rng=rng)
    mentions = []
    seen = set()
    for event_type, trigger in json.loads(output):
        pair = (event_type, trigger)
        if pair not in seen:
            seen.add(pair)
            mentions.append(GroundedMention(event_type=event_type, trigger=trigger))
    return mentions


_REPLY_TRIM = " \t\r\n\"'*`.:!"


def _reply_starts_with(reply: str, word: str) -> bool:
    return reply.lstrip(_REPLY_TRIM).casefold().startswith(word)


def judge(
    mention: GroundedMention,
    doc: Document,
    ontology: EventOntology,
    backend,
    config: PipelineConfig,
    seed: Optional[int] = None,
) -> JudgeVerdict:
    """Ask for a Yes/No verdict on one grounded mention.

    Fail-closed: anything that does not begin with Yes is a rejection, and
    replies beginning with neither Yes nor No are additionally flagged.
    """
    event_type = ontology.get(mention.event_type)
    block = event_type_block(event_type) if event_type else f"- {mention.event_type}"
    prompt = render(
        load_template("judge", config.template_version),
        sentence=doc.text,
        ontology=block,
        event_type=mention.event_type,
        trigger=mention.trigger,
    )
    request = ChatRequest.user(
        prompt, _chat_sampling(config, config.max_new_tokens_judge, seed)
    )
    reply = complete_chat(backend, request)
    accepted = _reply_starts_with(reply, "yes")
    flagged = not accepted and not _reply_starts_with(reply, "no")
    return JudgeVerdict(mention=mention, accepted=accepted, raw_reply=reply, flagged=flagged)


def _order_by_occurrence(mentions: list[GroundedMention], doc: Document) -> list[GroundedMention]:
    def key(pair):
        index, mention = pair
        span = map_to_span(mention.trigger, doc.text)
        return (span[0] if span else len(doc.text) + 1, index)

    return [m for _, m in sorted(enumerate(mentions), key=key)]


def _filtered_baseline_mentions(
    pairs: Sequence[tuple[str, str]],
    doc: Document,
    ontology: EventOntology,
    config: PipelineConfig,
) -> list[GroundedMention]:
    out = []
    seen = set()
    for event_type, trigger in pairs:
        if (event_type, trigger) in seen:
            continue
        seen.add((event_type, trigger))
        mention = GroundedMention(event_type=event_type, trigger=trigger)
        if not validate_mention(mention, doc, ontology, config.atomization):
            out.append(mention)
    return out


def run_document(
    doc: Document,
    ontology: EventOntology,
    backends: Backends,
    vocab: Optional[Vocabulary],
    config: PipelineConfig,
    seed: Optional[int] = None,
) -> RunResult:
    """Run the configured prompt style on one document.

    Returns the final mentions (deduplicated, ordered by first occurrence
    in the text) together with the per-stage trace.
    """
    trace = RunTrace()
    rng = np.random.default_rng(seed)

    if config.style is PromptStyle.DICORE:
        if backends.chat is None or backends.logits is None or vocab is None:
            raise ValueError("this style needs a chat backend, a logit backend, and a vocabulary")
        dreamed = dreamer(doc, backends.chat, config, seed=seed, diagnostics=trace.diagnostics)
        trace.dreamer = dreamed
        grounded = grounder(
            doc, dreamed, ontology, backends.logits, vocab, config, rng=rng, seed=seed
        )
        trace.grounder = grounded
        if config.judge_enabled:
            final = []
            for mention in grounded:
                verdict = judge(mention, doc, ontology, backends.chat, config, seed=seed)
                trace.judge.append(verdict)
                if verdict.accepted:
                    final.append(mention)
        else:
            final = list(grounded)
        return RunResult(mentions=_order_by_occurrence(final, doc), trace=trace)

    if backends.chat is None:
        raise ValueError("this style needs a chat backend")

    if config.style is PromptStyle.MD:
        prompt = render(
            load_template("md", config.template_version),
            sentence=doc.text,
            ontology=ontology_block(ontology, definitions=config.ontology_definitions),
        )
        reply = complete_chat(
            backends.chat,
            ChatRequest.user(prompt, _chat_sampling(config, config.max_new_tokens_dreamer, seed)),
        )
        try:
            pairs = parse_freeform_json(reply)
        except ParseFailureError as exc:
            trace.diagnostics.append(f"md: {exc.message}")
            pairs = []
        final = _filtered_baseline_mentions(pairs, doc, ontology, config)
        return RunResult(mentions=_order_by_occurrence(final, doc), trace=trace)

    # staged baseline: pick types, then extract triggers for those types
    stage1_prompt = render(
        load_template("ms_types", config.template_version),
        sentence=doc.text,
        ontology=ontology_block(ontology, definitions=config.ontology_definitions),
    )
    stage1_reply = complete_chat(
        backends.chat,
        ChatRequest.user(stage1_prompt, _chat_sampling(config, config.max_new_tokens_dreamer, seed)),
    )
    try:
        names = [n for n in parse_name_list(stage1_reply) if n in ontology]
    except ParseFailureError as exc:
        trace.diagnostics.append(f"ms_types: {exc.message}")
        names = []
    if not names:
        return RunResult(mentions=[], trace=trace)
    trace.dreamer = [FreeFormMention(event_name=n, trigger=n, in_text=False) for n in names]

    stage2_prompt = render(
        load_template("ms_triggers", config.template_version),
        sentence=doc.text,
        dreamed=names_block(names),
    )
    stage2_reply = complete_chat(
        backends.chat,
        ChatRequest.user(stage2_prompt, _chat_sampling(config, config.max_new_tokens_dreamer, seed)),
    )
    try:
        pairs = parse_freeform_json(stage2_reply)
    except ParseFailureError as exc:
        trace.diagnostics.append(f"ms_triggers: {exc.message}")
        pairs = []
    final = _filtered_baseline_mentions(pairs, doc, ontology, config)
    return RunResult(mentions=_order_by_occurrence(final, doc), trace=trace)
