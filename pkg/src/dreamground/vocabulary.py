"""Token vocabularies and canonical encoding.

A Vocabulary maps between text and dense integer token ids. Three built-in
encoders cover testing and local experimentation:

* CHAR: every character is one token.
* WORD: text splits into word runs, single punctuation marks, and single
  whitespace characters; each piece must be a vocabulary entry.
* GREEDY_BPE_LONGEST_MATCH: at each position the longest vocabulary entry
  matching the remaining text wins, emulating subword tokenizers with
  multi-character merge tokens.

All built-in encoders are concatenative: decoding is the concatenation of
token texts, so decode(encode(s)) == s whenever encode succeeds.
"""

from __future__ import annotations

import enum
import json
import os
import re
from typing import Callable, Optional, Sequence, Union

from .errors import IoFailureError, VocabEncodeError

_LEAF = -1  # trie key marking "a token ends here"; values are token ids

_WORD_PIECE_RE = re.compile(r"\w+|[^\w\s]|\s")


class EncoderMode(str, enum.Enum):
    CHAR = "CHAR"
    WORD = "WORD"
    GREEDY_BPE_LONGEST_MATCH = "GREEDY_BPE_LONGEST_MATCH"


def _build_trie(tokens: Sequence[str]) -> dict:
    root: dict = {}
    for tok_id, text in enumerate(tokens):
        node = root
        for ch in text:
            node = node.setdefault(ch, {})
        # first entry wins if the same surface form appears twice
        node.setdefault(_LEAF, tok_id)
    return root


class Vocabulary:
    """Immutable token table plus an encoder strategy.

    Token ids are dense: id == index into ``tokens``. Custom encoders can
    be supplied through ``encoder_fn`` for vocabularies whose canonical
    segmentation is not one of the built-in modes.
    """

    def __init__(
        self,
        tokens: Sequence[str],
        mode: Union[EncoderMode, str, None] = EncoderMode.CHAR,
        encoder_fn: Optional[Callable[[str], list[int]]] = None,
    ):
        if not tokens:
            raise ValueError("vocabulary must contain at least one token")
        for i, t in enumerate(tokens):
            if not isinstance(t, str) or t == "":
                raise ValueError(f"token {i} must be a non-empty string")
        self.tokens: tuple[str, ...] = tuple(tokens)
        self.mode = EncoderMode(mode) if mode is not None else None
        self._encoder_fn = encoder_fn
        if encoder_fn is None and self.mode is None:
            raise ValueError("either a mode or an encoder_fn is required")

        if encoder_fn is not None:
            self._encode = encoder_fn
        elif self.mode is EncoderMode.CHAR:
            self._char_ids = {}
            for i, t in enumerate(self.tokens):
                if len(t) == 1:
                    self._char_ids.setdefault(t, i)
            self._encode = self._encode_char
        elif self.mode is EncoderMode.WORD:
            self._piece_ids = {}
            for i, t in enumerate(self.tokens):
                self._piece_ids.setdefault(t, i)
            self._encode = self._encode_word
        else:
            self._trie = _build_trie(self.tokens)
            self._encode = self._encode_greedy

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def token_text(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise VocabEncodeError(f"token id {token_id} out of range")
        return self.tokens[token_id]

    def encode(self, text: str) -> list[int]:
        """Canonical token ids for ``text``; VocabEncodeError if impossible."""
        if text == "":
            return []
        return self._encode(text)

    def decode(self, token_ids: Sequence[int]) -> str:
        return "".join(self.token_text(t) for t in token_ids)

    # --- built-in encoders -------------------------------------------------

    def _encode_char(self, text: str) -> list[int]:
        out = []
        for ch in text:
            tok = self._char_ids.get(ch)
            if tok is None:
                raise VocabEncodeError(
                    f"character {ch!r} of {text!r} is not in the vocabulary"
                )
            out.append(tok)
        return out

    def _encode_word(self, text: str) -> list[int]:
        out = []
        for piece in _WORD_PIECE_RE.findall(text):
            tok = self._piece_ids.get(piece)
            if tok is None:
                raise VocabEncodeError(
                    f"piece {piece!r} of {text!r} is not in the vocabulary"
                )
            out.append(tok)
        return out

    def _encode_greedy(self, text: str) -> list[int]:
        out = []
        pos = 0
        n = len(text)
        while pos < n:
            node = self._trie
            best = None
            i = pos
            while i < n:
                node = node.get(text[i])
                if node is None:
                    break
                i += 1
                if _LEAF in node:
                    best = (i, node[_LEAF])
            if best is None:
                raise VocabEncodeError(
                    f"no token matches {text[pos:pos + 12]!r}... at offset {pos}"
                )
            pos, tok = best
            out.append(tok)
        return out


def canonical_token_path(
    vocab: Vocabulary,
    text: str,
    left_context: Sequence[int] = (),
) -> list[int]:
    """Tokens the canonical encoder assigns to ``text`` after ``left_context``.

    Encodes decode(left_context) + text and returns the tokens past the
    character boundary where the context ends. If the canonical encoding
    merges a token across that boundary, the standalone encoding of
    ``text`` is returned instead so that decoding the concatenated path
    still reproduces the concatenated string byte for byte.
    """
    if text == "":
        return []
    if not left_context:
        return vocab.encode(text)
    ctx_text = vocab.decode(left_context)
    full = vocab.encode(ctx_text + text)
    pos = 0
    for i, tok in enumerate(full):
        if pos == len(ctx_text):
            return full[i:]
        if pos > len(ctx_text):
            break
        pos += len(vocab.token_text(tok))
    return vocab.encode(text)


def load_vocabulary(
    path: Union[str, os.PathLike],
    mode: Union[EncoderMode, str] = EncoderMode.GREEDY_BPE_LONGEST_MATCH,
) -> Vocabulary:
    """Read a vocabulary file: JSON ``{"tokens": [...]}``, id == index."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise IoFailureError(f"cannot read vocabulary file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise IoFailureError(f"vocabulary file is not valid JSON: {exc}") from None
    if not isinstance(data, dict) or not isinstance(data.get("tokens"), list):
        raise IoFailureError('vocabulary file must be {"tokens": [...]}')
    return Vocabulary(data["tokens"], mode=mode)
