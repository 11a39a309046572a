"""Word-level tokenizer with atomic marker tokens.

The report decoder works at word granularity: whitespace-separated
pieces of the normalized report text, plus a small closed set of marker
tokens that stay atomic even when they touch other characters. Vocabulary
is built from a training corpus; unseen words map to the unk id.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

CT_OPEN, CT_CLOSE = "⟨ct⟩", "⟨/ct⟩"
PET_OPEN, PET_CLOSE = "⟨pet⟩", "⟨/pet⟩"
TEMPLATE_OPEN, TEMPLATE_CLOSE = "⟨template⟩", "⟨/template⟩"
STOP_TOKEN = "[end-of-report]"

SPECIAL_TOKENS: Tuple[str, ...] = (
    CT_OPEN, CT_CLOSE, PET_OPEN, PET_CLOSE, TEMPLATE_OPEN, TEMPLATE_CLOSE, STOP_TOKEN,
)


class WordTokenizer:
    """Whitespace word vocabulary plus substring-atomic special tokens."""

    def __init__(self):
        self._token_to_id: Dict[str, int] = {PAD_TOKEN: 0, UNK_TOKEN: 1}
        self._id_to_token: List[str] = [PAD_TOKEN, UNK_TOKEN]
        self._special_pattern = None
        self.register_special_tokens(SPECIAL_TOKENS)

    # -- vocabulary ---------------------------------------------------

    def _add(self, token: str) -> int:
        existing = self._token_to_id.get(token)
        if existing is not None:
            return existing
        idx = len(self._id_to_token)
        self._token_to_id[token] = idx
        self._id_to_token.append(token)
        return idx

    def register_special_tokens(self, tokens: Sequence[str]) -> Dict[str, int]:
        """Idempotent: re-registering returns the existing ids."""
        ids = {tok: self._add(tok) for tok in tokens}
        specials = [t for t in self._id_to_token if t in set(SPECIAL_TOKENS) | set(tokens)]
        self._special_pattern = re.compile(
            "|".join(re.escape(t) for t in sorted(specials, key=len, reverse=True))
        )
        return ids

    def add_corpus(self, texts: Iterable[str]):
        for text in texts:
            for piece in self._split(text):
                self._add(piece)

    @property
    def vocab_size(self) -> int:
        return len(self._id_to_token)

    @property
    def special_ids(self) -> Tuple[int, ...]:
        return tuple(self._token_to_id[t] for t in SPECIAL_TOKENS)

    @property
    def special_id_range(self) -> Tuple[int, int]:
        """Specials occupy a contiguous id block right after pad/unk."""
        ids = self.special_ids
        lo, hi = min(ids), max(ids) + 1
        assert sorted(ids) == list(range(lo, hi))
        return lo, hi

    def token_id(self, token: str) -> int:
        return self._token_to_id.get(token, self._token_to_id[UNK_TOKEN])

    @property
    def pad_id(self) -> int:
        return self._token_to_id[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self._token_to_id[UNK_TOKEN]

    @property
    def stop_id(self) -> int:
        return self._token_to_id[STOP_TOKEN]

    # -- encode / decode ----------------------------------------------

    def _split(self, text: str) -> List[str]:
        pieces: List[str] = []
        pos = 0
        for m in self._special_pattern.finditer(text):
            pieces.extend(text[pos:m.start()].split())
            pieces.append(m.group(0))
            pos = m.end()
        pieces.extend(text[pos:].split())
        return pieces

    def encode(self, text: str, add_stop: bool = False) -> List[int]:
        ids = [self.token_id(p) for p in self._split(text)]
        if add_stop:
            ids.append(self.stop_id)
        return ids

    def decode(self, ids: Sequence[int], skip_special: bool = False) -> str:
        specials = set(self.special_ids) | {self.pad_id}
        words = []
        for i in ids:
            if skip_special and i in specials:
                continue
            words.append(self._id_to_token[i] if 0 <= i < self.vocab_size else UNK_TOKEN)
        return " ".join(words)

    # -- persistence --------------------------------------------------

    def save(self, path):
        Path(path).write_text(
            json.dumps({"tokens": self._id_to_token}, ensure_ascii=False), "utf-8"
        )

    @classmethod
    def load(cls, path) -> "WordTokenizer":
        data = json.loads(Path(path).read_text("utf-8"))
        tok = cls()
        for token in data["tokens"]:
            tok._add(token)
        return tok
