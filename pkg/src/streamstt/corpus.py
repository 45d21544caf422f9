"""Synthetic tone-word corpus with exact word-end timestamps.

Every vocabulary word owns a fixed two-tone signature (word-specific
frequencies, duration, and envelope), so word identity is trivially
decodable from the spectrogram and timestamps are exact by construction.
Utterances are 2-8 words with random gaps and at least 240 ms of trailing
silence.  Word timing is coarse enough (>= 400 ms between consecutive word
ends) that each word's tokens form their own emission group at any delay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import MS_PER_FRAME, SAMPLE_RATE
from .targets import TimedWord
from .vocab import Vocab

MS = SAMPLE_RATE // 1000  # samples per millisecond
TRAILING_SILENCE_MS = 240


@dataclass
class SynthSample:
    samples: np.ndarray  # float32 waveform
    words: list[TimedWord]
    n_frames: int  # ceil(duration_ms / 80)

    @property
    def text(self) -> str:
        return " ".join(w.text for w in self.words)


def word_signature(word_index: int) -> np.ndarray:
    """Deterministic tone pattern for one word; identical at every occurrence."""
    dur_ms = 240 + 20 * (word_index % 9)
    f1 = 400.0 + 85.0 * word_index
    f2 = 4200.0 + 110.0 * word_index
    n = dur_ms * MS
    t = np.arange(n, dtype=np.float64) / SAMPLE_RATE
    sig = 0.22 * np.sin(2 * np.pi * f1 * t) + 0.18 * np.sin(2 * np.pi * f2 * t)
    ramp = min(160, n // 8)
    env = np.ones(n)
    env[:ramp] = np.linspace(0.0, 1.0, ramp)
    env[-ramp:] = np.linspace(1.0, 0.0, ramp)
    return (sig * env).astype(np.float32)


def signature_duration_ms(word_index: int) -> int:
    return 240 + 20 * (word_index % 9)


def synth_corpus(
    vocab: Vocab,
    n_samples: int,
    seed: int,
    min_words: int = 2,
    max_words: int = 8,
) -> list[SynthSample]:
    """Deterministic corpus: same (vocab, n_samples, seed) -> identical bytes."""
    rng = np.random.default_rng(seed)
    word_list = list(vocab.words)
    out = []
    for _ in range(n_samples):
        k = int(rng.integers(min_words, max_words + 1))
        idxs = rng.integers(0, len(word_list), size=k)
        t_ms = int(rng.integers(80, 401))
        placements = []
        words = []
        for idx in idxs:
            idx = int(idx)
            dur = signature_duration_ms(idx)
            placements.append((t_ms, idx))
            words.append(TimedWord(word_list[idx], t_ms + dur))
            t_ms = t_ms + dur + int(rng.integers(160, 401))
        total_ms = words[-1].end_ms + int(rng.integers(TRAILING_SILENCE_MS, 401))
        samples = np.zeros(total_ms * MS, dtype=np.float32)
        for start_ms, idx in placements:
            sig = word_signature(idx)
            samples[start_ms * MS : start_ms * MS + sig.size] = sig
        out.append(
            SynthSample(samples=samples, words=words, n_frames=math.ceil(total_ms / MS_PER_FRAME))
        )
    return out


def split_corpus(samples: list[SynthSample], heldout_fraction: float = 0.1) -> tuple[list, list]:
    n_held = max(1, int(len(samples) * heldout_fraction))
    return samples[:-n_held], samples[-n_held:]
