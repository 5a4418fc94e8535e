"""Shared test utilities.

Vocabulary factories, random instance generators, and brute-force oracles.
The oracles deliberately avoid the package's own data structures and
algorithms so that tests compare two independent computations.
"""

from __future__ import annotations

import itertools
import re
import string
import zlib

import numpy as np

from dreamground import (
    BackendDescriptor,
    BackendKind,
    Document,
    EncoderMode,
    EventOntology,
    EventType,
    Vocabulary,
    canonical_output,
    canonical_token_path,
    output_segments,
)

# every printable ASCII character exactly once, in a stable order
PRINTABLE = list(dict.fromkeys(string.printable))

# merge tokens spanning the structural punctuation of the output grammar,
# so greedy tokenization straddles the literal boundaries that matter
STRUCTURAL_MERGES = ('[["', '","', '"],["', '],["', '"]]', "]]", "[]", "[[")

NAME_CHARS = string.ascii_letters + string.digits + ":-._"


def char_vocab(extra: str = "") -> Vocabulary:
    tokens = PRINTABLE + [c for c in dict.fromkeys(extra) if c not in PRINTABLE]
    return Vocabulary(tokens, mode=EncoderMode.CHAR)


def bpe_vocab(merges=STRUCTURAL_MERGES, extra: str = "") -> Vocabulary:
    tokens = list(dict.fromkeys(PRINTABLE + list(extra) + list(merges)))
    return Vocabulary(tokens, mode=EncoderMode.GREEDY_BPE_LONGEST_MATCH)


_PIECE_RE = re.compile(r"\w+|[^\w\s]|\s")


def word_vocab(texts) -> Vocabulary:
    """WORD-mode vocabulary covering every piece of every given text."""
    pieces = []
    for text in texts:
        pieces.extend(_PIECE_RE.findall(text))
    return Vocabulary(list(dict.fromkeys(pieces)), mode=EncoderMode.WORD)


def ontology_of(*names: str) -> EventOntology:
    return EventOntology(types=tuple(EventType(name=n) for n in names))


def doc_of(text: str, doc_id: str = "d0") -> Document:
    return Document(id=doc_id, text=text)


# --- random instances ---------------------------------------------------------


def rand_text(rng: np.random.Generator, alphabet: str, lo: int, hi: int) -> str:
    length = int(rng.integers(lo, hi + 1))
    idx = rng.integers(0, len(alphabet), size=length)
    return "".join(alphabet[int(i)] for i in idx)


def random_ontology(rng: np.random.Generator, lo: int = 2, hi: int = 10) -> EventOntology:
    n = int(rng.integers(lo, hi + 1))
    names: list[str] = []
    while len(names) < n:
        name = rand_text(rng, NAME_CHARS, 3, 9)
        if name not in names:
            names.append(name)
    return ontology_of(*names)


def random_sentence(rng: np.random.Generator, w_lo: int = 3, w_hi: int = 40) -> str:
    n = int(rng.integers(w_lo, w_hi + 1))
    return " ".join(rand_text(rng, string.ascii_lowercase, 1, 7) for _ in range(n))


# --- brute-force oracles ------------------------------------------------------


def brute_language(names, candidates, max_mentions: int) -> set[str]:
    """Every legal grounding output, enumerated without the automaton."""
    pairs = [(e, t) for e in names for t in candidates]
    out = {"[]"}
    for k in range(1, max_mentions + 1):
        for combo in itertools.product(pairs, repeat=k):
            out.add(canonical_output(combo))
    return out


def oracle_accepting_path(vocab: Vocabulary, mentions) -> list[int]:
    """Context-accumulated canonical token path for one output string."""
    acc: list[int] = []
    for seg in output_segments(mentions):
        acc.extend(canonical_token_path(vocab, seg, acc))
    return acc


def assert_no_dead_ends(automaton) -> None:
    """Every state is reachable from start and can reach the accept state."""
    from collections import deque

    n = automaton.n_states
    seen = {automaton.start}
    queue = deque([automaton.start])
    while queue:
        state = queue.popleft()
        for nxt in automaton.transitions[state].values():
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    assert seen == set(range(n)), "builder created unreachable states"

    rev: list[list[int]] = [[] for _ in range(n)]
    for state, edges in enumerate(automaton.transitions):
        for nxt in edges.values():
            rev[nxt].append(state)
    can_finish = {automaton.accept}
    queue = deque([automaton.accept])
    while queue:
        state = queue.popleft()
        for prev in rev[state]:
            if prev not in can_finish:
                can_finish.add(prev)
                queue.append(prev)
    assert can_finish == set(range(n)), "some state cannot reach accept"


def assert_greedy_canonical(vocab: Vocabulary, text: str, path) -> None:
    """Check that ``path`` is the longest-match segmentation of ``text``."""
    pos = 0
    for tid in path:
        tok = vocab.token_text(tid)
        assert text.startswith(tok, pos), f"token {tok!r} does not match at {pos}"
        longer = [u for u in vocab.tokens if len(u) > len(tok) and text.startswith(u, pos)]
        assert not longer, f"{tok!r} at {pos} is not the longest match ({longer[:3]})"
        pos += len(tok)
    assert pos == len(text)


def ti_key(m):
    return m.trigger.casefold()


def tc_key(m):
    return (m.event_type, m.trigger.casefold())


def ei_key(m):
    return m.event_type


def oracle_counts(preds: dict, golds, key) -> tuple[int, int, int]:
    """Per-document set matching computed with plain loops, no set algebra."""
    tp = fp = fn = 0
    for gold in golds:
        gkeys: list = []
        for m in gold.mentions:
            k = key(m)
            if k not in gkeys:
                gkeys.append(k)
        pkeys: list = []
        for m in preds.get(gold.id, ()):
            k = key(m)
            if k not in pkeys:
                pkeys.append(k)
        tp += sum(1 for k in pkeys if k in gkeys)
        fp += sum(1 for k in pkeys if k not in gkeys)
        fn += sum(1 for k in gkeys if k not in pkeys)
    return tp, fp, fn


def oracle_prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


# --- deterministic chat stub --------------------------------------------------


class SeededChatStub:
    """Chat backend whose reply is a pure function of (seed, prompt).

    Prompts containing ``dreamer_marker`` get ``dreamer_reply``; every
    other prompt draws pseudo-randomly from ``replies``.
    """

    def __init__(
        self,
        seed: int,
        replies=("Yes", "No", "Maybe so"),
        dreamer_marker: str = "increase the coverage",
        dreamer_reply: str = "[]",
    ):
        self.seed = seed
        self.replies = tuple(replies)
        self.dreamer_marker = dreamer_marker
        self.dreamer_reply = dreamer_reply
        self.descriptor = BackendDescriptor(
            kind=BackendKind.SCRIPTED,
            name=f"chat-stub-{seed}",
            supports_chat=True,
            supports_logits=False,
        )

    def complete(self, request) -> str:
        prompt = request.text
        if self.dreamer_marker in prompt:
            return self.dreamer_reply
        key = zlib.crc32(prompt.encode("utf-8"))
        rng = np.random.default_rng([self.seed, key])
        return self.replies[int(rng.integers(0, len(self.replies)))]
