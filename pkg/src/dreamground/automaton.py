"""Token-level automaton that constrains the grounding stage's decoder.

The accepted language is the set of well-formed outputs for one document:
either ``[]`` or ``[["E","T"],...]`` where every E is an ontology type
name, every T is an atomized trigger candidate from the document, and the
number of pairs never exceeds ``max_mentions``. Strings are JSON with
minimal escaping and no whitespace.

States fall into five roles:

* PREAMBLE: the start state, where the decoder commits to "no events"
  (``[]``) or opens the first mention.
* EVENT_CHOICE: fan-out over ontology type names.
* TRIGGER_CHOICE: fan-out over trigger candidates.
* CONTINUE_OR_END: after a completed pair, open another mention or close.
* INTERIOR: positions inside a multi-token literal.

Transitions along each literal follow the vocabulary's canonical encoding
(computed with a left context covering the adjacent punctuation), merged
into a prefix-sharing trie so the automaton stays deterministic.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import (
    BudgetExceededError,
    IllegalTransitionError,
    UnknownStateError,
    VocabEncodeError,
)
from .ontology import AtomizationPolicy, Document, EventOntology, atomize
from .vocabulary import Vocabulary, canonical_token_path


class StateTag(str, enum.Enum):
    PREAMBLE = "PREAMBLE"
    EVENT_CHOICE = "EVENT_CHOICE"
    TRIGGER_CHOICE = "TRIGGER_CHOICE"
    CONTINUE_OR_END = "CONTINUE_OR_END"
    INTERIOR = "INTERIOR"


@dataclass(frozen=True)
class LogitMask:
    """Allowed token ids at one state."""

    allowed: frozenset[int]

    def __len__(self) -> int:
        return len(self.allowed)

    def __contains__(self, token_id: object) -> bool:
        return token_id in self.allowed


def _escape(s: str) -> str:
    """JSON string-body escaping (quotes, backslashes, control chars)."""
    return json.dumps(s, ensure_ascii=False)[1:-1]


def canonical_output(mentions: Sequence[tuple[str, str]]) -> str:
    """The unique surface form the automaton accepts for ``mentions``."""
    if not mentions:
        return "[]"
    body = ",".join(f'["{_escape(e)}","{_escape(t)}"]' for e, t in mentions)
    return f"[{body}]"


def output_segments(mentions: Sequence[tuple[str, str]]) -> list[str]:
    """Decomposition of ``canonical_output(mentions)`` into builder segments.

    Concatenating the segments reproduces the canonical output exactly.
    The same decomposition drives automaton construction, so walking these
    segments through ``canonical_token_path`` with accumulated context
    yields the automaton's accepting token path.
    """
    if not mentions:
        return ["[]"]
    segs = ['[["']
    for i, (e, t) in enumerate(mentions):
        if i > 0:
            segs.append('],["')
        segs.append(_escape(e) + '","')
        segs.append(_escape(t) + '"')
    segs.append("]]")
    return segs


@dataclass
class TokenAutomaton:
    """Deterministic token automaton with a single accepting state."""

    vocab: Vocabulary
    start: int
    accept: int
    transitions: list[dict[int, int]]  # state -> {token id -> next state}
    tags: list[StateTag]
    max_mentions: int
    candidates: tuple[str, ...] = ()
    _mask_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_states(self) -> int:
        return len(self.transitions)

    @property
    def n_transitions(self) -> int:
        return sum(len(t) for t in self.transitions)

    def tag_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for tag in self.tags:
            counts[tag.value] = counts.get(tag.value, 0) + 1
        return counts


def build_grounder_fsm(
    ontology: EventOntology,
    doc: Document,
    policy: AtomizationPolicy,
    vocab: Vocabulary,
    max_mentions: int = 20,
) -> TokenAutomaton:
    """Compile the per-document output grammar into a token automaton.

    Raises VocabEncodeError (naming the offending string) when an event
    type name, a trigger candidate, or the structural punctuation cannot
    be expressed with ``vocab``.
    """
    if max_mentions < 1:
        raise ValueError("max_mentions must be >= 1")
    candidates = atomize(doc, policy)
    names = ontology.names

    transitions: list[dict[int, int]] = []
    tags: list[StateTag] = []

    def new_state(tag: StateTag) -> int:
        transitions.append({})
        tags.append(tag)
        return len(transitions) - 1

    start = new_state(StateTag.PREAMBLE)
    accept = new_state(StateTag.INTERIOR)

    def context_tokens(literal: str) -> list[int]:
        if not literal:
            return []
        try:
            return vocab.encode(literal)
        except VocabEncodeError:
            return []

    def seg_path(text: str, ctx_literal: str) -> list[int]:
        try:
            path = canonical_token_path(vocab, text, context_tokens(ctx_literal))
        except VocabEncodeError as exc:
            raise VocabEncodeError(
                f"cannot encode output segment {text!r}: {exc.message}"
            ) from None
        if not path:
            raise VocabEncodeError(f"output segment {text!r} encodes to no tokens")
        return path

    def add_path(src: int, tokens: list[int], dst: int) -> None:
        cur = src
        for tok in tokens[:-1]:
            nxt = transitions[cur].get(tok)
            if nxt is None:
                nxt = new_state(StateTag.INTERIOR)
                transitions[cur][tok] = nxt
            elif tags[nxt] is not StateTag.INTERIOR:
                # would tunnel through a decision state; the escaping scheme
                # makes segment paths prefix-free, so this is a builder bug
                raise RuntimeError("token path collides with a decision state")
            cur = nxt
        last = tokens[-1]
        existing = transitions[cur].get(last)
        if existing is None:
            transitions[cur][last] = dst
        elif existing != dst:
            raise RuntimeError("ambiguous token path during construction")

    add_path(start, seg_path("[]", ""), accept)

    if candidates:
        event_paths = {e: seg_path(_escape(e) + '","', '["') for e in names}
        trigger_paths = {t: seg_path(_escape(t) + '"', '","') for t in candidates}
        open_path = seg_path('[["', "")
        continue_path = seg_path('],["', '"')
        end_path = seg_path("]]", '"')

        prev_continue: Optional[int] = None
        for i in range(max_mentions):
            event_state = new_state(StateTag.EVENT_CHOICE)
            trigger_state = new_state(StateTag.TRIGGER_CHOICE)
            continue_state = new_state(StateTag.CONTINUE_OR_END)
            if i == 0:
                add_path(start, open_path, event_state)
            else:
                add_path(prev_continue, continue_path, event_state)
            for path in event_paths.values():
                add_path(event_state, path, trigger_state)
            for path in trigger_paths.values():
                add_path(trigger_state, path, continue_state)
            add_path(continue_state, end_path, accept)
            prev_continue = continue_state

    return TokenAutomaton(
        vocab=vocab,
        start=start,
        accept=accept,
        transitions=transitions,
        tags=tags,
        max_mentions=max_mentions,
        candidates=tuple(candidates),
    )


def allowed_tokens(automaton: TokenAutomaton, state: int) -> LogitMask:
    """Mask of legal next tokens at ``state`` (empty only when accepting)."""
    if not 0 <= state < automaton.n_states:
        raise UnknownStateError(f"state {state} is not in the automaton")
    cached = automaton._mask_cache.get(state)
    if cached is None:
        cached = LogitMask(frozenset(automaton.transitions[state].keys()))
        automaton._mask_cache[state] = cached
    return cached


@dataclass
class DecodeSession:
    """Mutable cursor over one decode. Single-owner; do not share threads."""

    automaton: TokenAutomaton
    state: int
    emitted: list[int] = field(default_factory=list)
    mention_count: int = 0

    @classmethod
    def new(cls, automaton: TokenAutomaton) -> "DecodeSession":
        return cls(automaton=automaton, state=automaton.start)

    @property
    def is_done(self) -> bool:
        return self.state == self.automaton.accept

    def step(self, token_id: int) -> "DecodeSession":
        """Advance by one token; on error the session is left unchanged."""
        if not 0 <= self.state < self.automaton.n_states:
            raise UnknownStateError(f"state {self.state} is not in the automaton")
        nxt = self.automaton.transitions[self.state].get(token_id)
        if nxt is None:
            raise IllegalTransitionError(
                f"token {token_id} is not legal at state {self.state}"
            )
        self.state = nxt
        self.emitted.append(token_id)
        if self.automaton.tags[nxt] is StateTag.CONTINUE_OR_END:
            self.mention_count += 1
        return self

    @property
    def text(self) -> str:
        return self.automaton.vocab.decode(self.emitted)


def step(session: DecodeSession, token_id: int) -> DecodeSession:
    return session.step(token_id)


def enumerate_language(
    automaton: TokenAutomaton,
    max_tokens: int,
    node_budget: int = 1_000_000,
) -> set[str]:
    """All accepted strings reachable within ``max_tokens`` tokens.

    Intended for tests and the CLI on small automata; raises
    BudgetExceededError once more than ``node_budget`` search nodes have
    been expanded.
    """
    out: set[str] = set()
    stack: list[tuple[int, list[int]]] = [(automaton.start, [])]
    expanded = 0
    while stack:
        state, toks = stack.pop()
        expanded += 1
        if expanded > node_budget:
            raise BudgetExceededError(
                f"language enumeration exceeded {node_budget} nodes"
            )
        if state == automaton.accept:
            out.add(automaton.vocab.decode(toks))
            continue
        if len(toks) >= max_tokens:
            continue
        for tok, nxt in automaton.transitions[state].items():
            stack.append((nxt, toks + [tok]))
    return out
