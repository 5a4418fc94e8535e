"""Constrained sampling: masked softmax, nucleus truncation, decode loop.

The mask zeroes the probability of every token that is not a valid
transition at the current automaton state; allowed tokens keep exactly
the pairwise odds they had under the unrestricted softmax.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .automaton import DecodeSession, LogitMask, TokenAutomaton, allowed_tokens
from .backends import SamplingParams, next_token_logits
from .errors import EmptyMaskError, ShapeMismatchError


def apply_mask(logits: Sequence[float], mask: LogitMask) -> np.ndarray:
    """Probability vector over the full vocabulary under ``mask``.

    Disallowed entries are exactly 0.0; allowed entries are the softmax of
    their logits restricted to the allowed set.
    """
    if not mask.allowed:
        raise EmptyMaskError("mask allows no tokens")
    scores = np.asarray(logits, dtype=np.float64)
    if scores.ndim != 1:
        raise ShapeMismatchError(f"logits must be one-dimensional, got {scores.shape}")
    ids = np.fromiter(mask.allowed, dtype=np.int64, count=len(mask.allowed))
    ids.sort()
    if ids[0] < 0 or ids[-1] >= scores.shape[0]:
        raise ShapeMismatchError(
            f"mask references token ids outside logits of length {scores.shape[0]}"
        )
    sub = scores[ids]
    sub = np.exp(sub - sub.max())
    probs = np.zeros_like(scores)
    probs[ids] = sub / sub.sum()
    return probs


def _sample_allowed(
    logits: np.ndarray,
    mask: LogitMask,
    sampling: SamplingParams,
    rng: np.random.Generator,
) -> int:
    """One token id from the allowed set under temperature + top-p."""
    ids = np.fromiter(mask.allowed, dtype=np.int64, count=len(mask.allowed))
    ids.sort()
    sub = logits[ids]

    if sampling.temperature == 0:
        return int(ids[int(np.argmax(sub))])

    z = sub / sampling.temperature
    z = np.exp(z - z.max())
    probs = z / z.sum()

    # nucleus truncation within the allowed set; the most probable allowed
    # token always survives because no mass precedes it
    order = np.argsort(-probs, kind="stable")
    sorted_probs = probs[order]
    cumulative = np.cumsum(sorted_probs)
    keep = (cumulative - sorted_probs) < sampling.top_p
    sorted_probs = np.where(keep, sorted_probs, 0.0)
    sorted_probs /= sorted_probs.sum()

    choice = rng.choice(len(sorted_probs), p=sorted_probs)
    return int(ids[order[choice]])


def decode(
    automaton: TokenAutomaton,
    backend,
    prompt_tokens: Sequence[int],
    sampling: SamplingParams,
    rng: Optional[np.random.Generator] = None,
) -> str:
    """Run one constrained decode from the automaton's start state.

    At every step the backend scores all tokens, the mask for the current
    state is applied, and one allowed token is sampled. The automaton is a
    finite DAG, so decoding always terminates at the accepting state; the
    decoded output string is returned.
    """
    if rng is None:
        rng = np.random.default_rng(sampling.seed)
    prompt = list(prompt_tokens)
    session = DecodeSession.new(automaton)
    vocab_size = len(automaton.vocab)

    while not session.is_done:
        mask = allowed_tokens(automaton, session.state)
        if not mask.allowed:
            raise EmptyMaskError(f"non-accepting state {session.state} has no transitions")
        tag = automaton.tags[session.state].value
        logits = np.asarray(
            next_token_logits(backend, prompt + session.emitted, state_tag=tag),
            dtype=np.float64,
        )
        if logits.shape != (vocab_size,):
            raise ShapeMismatchError(
                f"backend returned logits of shape {logits.shape}, expected ({vocab_size},)"
            )
        token = _sample_allowed(logits, mask, sampling, rng)
        session.step(token)

    return session.text
