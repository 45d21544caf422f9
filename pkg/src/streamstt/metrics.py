"""Word and character error rates plus the evaluation report structure."""

from __future__ import annotations

import json
from dataclasses import dataclass, field


def normalize_text(text: str) -> str:
    """Lowercase and collapse whitespace; the only normalization applied."""
    return " ".join(text.lower().split())


def edit_distance(ref: list, hyp: list) -> int:
    """Levenshtein distance with unit costs, iterative two-row DP."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            sub = prev[j - 1] + (0 if r == h else 1)
            cur[j] = min(sub, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[-1]


def wer(ref: str | list[str], hyp: str | list[str]) -> float:
    """(S + D + I) / max(1, len(ref words))."""
    r = normalize_text(ref).split() if isinstance(ref, str) else list(ref)
    h = normalize_text(hyp).split() if isinstance(hyp, str) else list(hyp)
    return edit_distance(r, h) / max(1, len(r))


def cer(ref: str, hyp: str) -> float:
    """Character error rate over normalized text (single spaces included)."""
    r = list(normalize_text(ref))
    h = list(normalize_text(hyp))
    return edit_distance(r, h) / max(1, len(r))


@dataclass
class EvalCell:
    tau_ms: int
    left_pad_frames: int
    n_utterances: int = 0
    ref_words: int = 0
    word_edits: int = 0
    ref_chars: int = 0
    char_edits: int = 0
    utterance_wers: list = field(default_factory=list)

    def add(self, ref: str, hyp: str) -> None:
        r, h = normalize_text(ref), normalize_text(hyp)
        wd = edit_distance(r.split(), h.split())
        cd = edit_distance(list(r), list(h))
        self.n_utterances += 1
        self.ref_words += len(r.split())
        self.word_edits += wd
        self.ref_chars += len(r)
        self.char_edits += cd
        self.utterance_wers.append(wd / max(1, len(r.split())))

    @property
    def corpus_wer(self) -> float:
        return self.word_edits / max(1, self.ref_words)

    @property
    def corpus_cer(self) -> float:
        return self.char_edits / max(1, self.ref_chars)

    @property
    def macro_wer(self) -> float:
        if not self.utterance_wers:
            return 0.0
        return sum(self.utterance_wers) / len(self.utterance_wers)

    def to_record(self) -> dict:
        return {
            "tau_ms": self.tau_ms,
            "left_pad_frames": self.left_pad_frames,
            "n_utterances": self.n_utterances,
            "corpus_wer": self.corpus_wer,
            "corpus_cer": self.corpus_cer,
            "macro_wer": self.macro_wer,
            "ref_words": self.ref_words,
            "word_edits": self.word_edits,
        }


@dataclass
class EvalReport:
    cells: list[EvalCell] = field(default_factory=list)

    def cell(self, tau_ms: int, pad: int) -> EvalCell:
        for c in self.cells:
            if c.tau_ms == tau_ms and c.left_pad_frames == pad:
                return c
        c = EvalCell(tau_ms, pad)
        self.cells.append(c)
        return c

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(c.to_record()) for c in self.cells)

    def render_table(self) -> str:
        """Plain-text WER grid: rows = left padding, columns = delay."""
        taus = sorted({c.tau_ms for c in self.cells})
        pads = sorted({c.left_pad_frames for c in self.cells})
        header = "Padding Frames | " + " | ".join(f"{t} ms" for t in taus)
        lines = [header, "-" * len(header)]
        by_key = {(c.tau_ms, c.left_pad_frames): c for c in self.cells}
        for p in pads:
            row = [f"{p:>14}"]
            for t in taus:
                c = by_key.get((t, p))
                row.append(f"{100 * c.corpus_wer:6.2f}" if c else "   -  ")
            lines.append(" | ".join(row))
        return "\n".join(lines)
