"""Provider-independent token length estimation.

The engine never assumes a particular model vocabulary. Budgeting uses a
word-and-punctuation piece count inflated by a BPE-typical factor, rounded
up. A provider-exact tokenizer can be swapped in through ``set_token_counter``.
"""

from __future__ import annotations

import math
import re
from typing import Callable

TokenCounter = Callable[[str], int]

_PIECE_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

# Empirical words-per-token inflation for BPE-style vocabularies.
_PIECES_TO_TOKENS = 1.3


def approximate_token_length(text: str) -> int:
    """Count word/punctuation pieces and scale by 1.3, rounded up."""
    pieces = _PIECE_RE.findall(text)
    if not pieces:
        return 0
    return math.ceil(len(pieces) * _PIECES_TO_TOKENS)


_counter: TokenCounter = approximate_token_length


def token_length(text: str) -> int:
    """Token length of ``text`` under the engine tokenizer."""
    return _counter(text)


def set_token_counter(counter: TokenCounter | None) -> None:
    """Install a replacement tokenizer (``None`` restores the default)."""
    global _counter
    _counter = counter if counter is not None else approximate_token_length
