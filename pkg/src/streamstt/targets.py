"""Frame-synchronous target construction.

Compiles (words, word-end timestamps, delay) into one token per 80 ms frame:
[P] while nothing may be emitted, then a [W] followed by subword tokens once
a word's audio is complete and the delay has elapsed.  With grouping enabled
a [W] opens each maximal run of uninterrupted emission and words whose
tokens join an in-flight run get no [W] of their own; with grouping disabled
every word carries one.

`build_targets` is the production scheduler (a frame-by-frame FIFO queue).
`oracle_build` implements the same contract by direct analytic placement of
each word's token run, sharing no scheduling code; the two are compared
exhaustively in the test suite.

Frame conventions: frame t covers [80t, 80(t+1)) ms, and a word with end
time e and delay tau first becomes emittable at the frame whose end reaches
e + tau, i.e. ceil((e + tau) / 80) - 1.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .config import MS_PER_FRAME, DelaySpec
from .vocab import Vocab


@dataclass(frozen=True)
class TimedWord:
    text: str
    end_ms: int

    def __post_init__(self) -> None:
        if self.end_ms < 0:
            raise ValueError("end_ms must be non-negative")


@dataclass
class TargetStream:
    tokens: list[int]
    n_frames: int

    def __post_init__(self) -> None:
        if len(self.tokens) != self.n_frames:
            raise ValueError("TargetStream must hold exactly one token per frame")

    def serialize(self) -> str:
        return " ".join(str(t) for t in self.tokens)


class TargetOverflowError(ValueError):
    """The utterance has too few frames to flush every word's tokens."""

    def __init__(self, word: str, n_frames: int):
        super().__init__(
            f"utterance too short: tokens of word {word!r} do not fit in {n_frames} frames"
        )
        self.word = word
        self.n_frames = n_frames


def emission_frame(end_ms: int, tau_ms: int) -> int:
    """Smallest frame t with (t+1)*80 >= end_ms + tau_ms."""
    total = end_ms + tau_ms
    return (total + MS_PER_FRAME - 1) // MS_PER_FRAME - 1


def _check_sorted(words: list[TimedWord]) -> None:
    for a, b in zip(words, words[1:]):
        if b.end_ms < a.end_ms:
            raise ValueError("words must be sorted by end_ms")


def build_targets(
    words: list[TimedWord],
    tau: DelaySpec,
    n_frames: int,
    vocab: Vocab,
    grouping: bool = True,
    strict_same_frame: bool = False,
) -> TargetStream:
    """Frame-by-frame FIFO scheduler.

    At each frame, words whose emission frame was reached enqueue their
    subword tokens (with a [W] prefix according to the grouping rule), then
    exactly one token is emitted: the queue head, or [P] when idle.

    ``strict_same_frame`` switches the grouping rule to the narrow reading:
    a word is merged into the previous group only when its emission frame is
    strictly equal to the previous word's.
    """
    _check_sorted(words)
    frames = [emission_frame(w.end_ms, tau.tau_ms) for w in words]
    queue: deque[tuple[int, int]] = deque()  # (token_id, word_index)
    out: list[int] = []
    next_word = 0
    emitted_prev = False  # frame t-1 emitted a non-[P] token
    for t in range(n_frames):
        while next_word < len(words) and frames[next_word] == t:
            i = next_word
            if not grouping:
                with_w = True
            elif strict_same_frame:
                with_w = i == 0 or frames[i] != frames[i - 1]
            else:
                with_w = not queue and not emitted_prev
            if with_w:
                queue.append((vocab.word_boundary_id, i))
            for tok in vocab.encode_word(words[i].text):
                queue.append((tok, i))
            next_word += 1
        if queue:
            out.append(queue.popleft()[0])
            emitted_prev = True
        else:
            out.append(vocab.pad_id)
            emitted_prev = False
    if queue:
        raise TargetOverflowError(words[queue[0][1]].text, n_frames)
    if next_word < len(words):
        raise TargetOverflowError(words[next_word].text, n_frames)
    return TargetStream(out, n_frames)


def oracle_build(
    words: list[TimedWord],
    tau: DelaySpec,
    n_frames: int,
    vocab: Vocab,
    grouping: bool = True,
    strict_same_frame: bool = False,
) -> TargetStream:
    """Analytic construction: place each word's token run directly.

    A word's run starts at max(its emission frame, first frame after the
    previous run); runs are contiguous because one token leaves the queue
    every frame once emission starts.  No code shared with build_targets.
    """
    _check_sorted(words)
    out = [vocab.pad_id] * n_frames
    cursor = -1  # last frame that emitted a token
    prev_frame: int | None = None
    for i, word in enumerate(words):
        e = emission_frame(word.end_ms, tau.tau_ms)
        start = max(e, cursor + 1)
        if not grouping:
            with_w = True
        elif strict_same_frame:
            with_w = prev_frame is None or e != prev_frame
        else:
            with_w = cursor == -1 or start > cursor + 1
        run = vocab.encode_word(word.text)
        if with_w:
            run = [vocab.word_boundary_id] + run
        if start + len(run) > n_frames:
            raise TargetOverflowError(word.text, n_frames)
        for j, tok in enumerate(run):
            out[start + j] = tok
        cursor = start + len(run) - 1
        prev_frame = e
    return TargetStream(out, n_frames)
