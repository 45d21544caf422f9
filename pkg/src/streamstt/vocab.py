"""Token vocabulary: toy subword table plus the reserved stream tokens.

Layout of token ids, lowest to highest:
  [0, n_subwords)                      subword units (syllables)
  [n_subwords, n_subwords + 30)        delay tokens, one per frame delay 1..30
                                       (inputs only, used by the special_token
                                       conditioning mode)
  size - 2                             [P], the non-emitting pad token
  size - 1                             [W], the word-boundary token
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .config import TAU_MAX_FRAMES, TAU_MIN_FRAMES

SYLLABLES = ["ba", "da", "ga", "ka", "la", "ma", "na", "pa", "ra", "sa", "ta", "wa"]


class TokenKind(enum.Enum):
    SUBWORD = "subword"
    PAD = "pad"
    WORD_BOUNDARY = "word_boundary"
    DELAY = "delay"


@dataclass(frozen=True)
class StreamToken:
    id: int
    kind: TokenKind


@dataclass
class Vocab:
    subwords: list[str]
    words: dict[str, list[int]]  # word text -> subword ids, the fixed toy table

    @property
    def n_subwords(self) -> int:
        return len(self.subwords)

    @property
    def delay_base_id(self) -> int:
        return self.n_subwords

    @property
    def size(self) -> int:
        return self.n_subwords + TAU_MAX_FRAMES + 2

    @property
    def pad_id(self) -> int:
        return self.size - 2

    @property
    def word_boundary_id(self) -> int:
        return self.size - 1

    def delay_token_id(self, tau_frames: int) -> int:
        if not (TAU_MIN_FRAMES <= tau_frames <= TAU_MAX_FRAMES):
            raise ValueError(f"delay out of range: {tau_frames}")
        return self.delay_base_id + (tau_frames - TAU_MIN_FRAMES)

    def kind_of(self, token_id: int) -> TokenKind:
        if token_id == self.pad_id:
            return TokenKind.PAD
        if token_id == self.word_boundary_id:
            return TokenKind.WORD_BOUNDARY
        if self.delay_base_id <= token_id < self.delay_base_id + TAU_MAX_FRAMES:
            return TokenKind.DELAY
        if 0 <= token_id < self.n_subwords:
            return TokenKind.SUBWORD
        raise ValueError(f"token id out of range: {token_id}")

    def token(self, token_id: int) -> StreamToken:
        return StreamToken(token_id, self.kind_of(token_id))

    def encode_word(self, text: str) -> list[int]:
        try:
            return list(self.words[text])
        except KeyError:
            raise KeyError(f"word not in vocabulary: {text!r}") from None

    def subword_text(self, token_id: int) -> str:
        if self.kind_of(token_id) is not TokenKind.SUBWORD:
            return ""
        return self.subwords[token_id]

    def to_dict(self) -> dict:
        return {"subwords": list(self.subwords), "words": {w: list(t) for w, t in self.words.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(subwords=list(d["subwords"]), words={w: list(t) for w, t in d["words"].items()})


def build_toy_vocab(n_words: int = 32) -> Vocab:
    """Deterministic word table: all single syllables, then two-syllable words."""
    if n_words > len(SYLLABLES) + len(SYLLABLES) * (len(SYLLABLES) - 1):
        raise ValueError("n_words exceeds the toy word inventory")
    words: dict[str, list[int]] = {}
    for i, s in enumerate(SYLLABLES):
        if len(words) >= n_words:
            break
        words[s] = [i]
    for i in range(len(SYLLABLES)):
        for j in range(len(SYLLABLES)):
            if len(words) >= n_words:
                break
            if i == j:
                continue
            words[SYLLABLES[i] + SYLLABLES[j]] = [i, j]
        if len(words) >= n_words:
            break
    return Vocab(subwords=list(SYLLABLES), words=words)
