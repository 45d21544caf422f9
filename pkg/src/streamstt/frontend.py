"""Streaming log-Mel frontend: 16 kHz PCM -> 128-bin log-Mel frames at 100 Hz.

Analysis window is 400 samples (25 ms) with a periodic Hann window, hop 160
samples (10 ms), causal alignment: frame t covers samples
[(t+1)*160 - 400, (t+1)*160) with zeros filling the negative range, so frame
t is available as soon as (t+1)*160 samples have arrived and a stream of T
samples yields exactly floor(T/160) frames.

The DFT is a direct real transform against a precomputed [400, 201] basis;
each frame is computed by the same fixed-shape matvec in both the batch and
the streaming path, which makes the two bitwise identical for any chunking.

Mel scale is the HTK formula, 128 triangular filters spanning 0..8 kHz; the
log applies an additive floor of 1e-10.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .config import MEL_HOP, SAMPLE_RATE

WIN_LENGTH = 400
N_MELS = 128
N_FFT_BINS = WIN_LENGTH // 2 + 1  # 201, bin k at k * 40 Hz
LOG_FLOOR = 1e-10
FMIN = 0.0
FMAX = 8000.0


def hz_to_mel(f: float | np.ndarray) -> float | np.ndarray:
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m: float | np.ndarray) -> float | np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int = N_MELS) -> np.ndarray:
    """Center frequency in Hz of each triangular filter."""
    pts = np.linspace(hz_to_mel(FMIN), hz_to_mel(FMAX), n_mels + 2)
    return np.asarray(mel_to_hz(pts[1:-1]), dtype=np.float64)


@lru_cache(maxsize=4)
def mel_filterbank(n_mels: int = N_MELS) -> torch.Tensor:
    """[N_FFT_BINS, n_mels] triangular filters on the HTK mel scale."""
    pts = np.asarray(mel_to_hz(np.linspace(hz_to_mel(FMIN), hz_to_mel(FMAX), n_mels + 2)))
    bin_freqs = np.arange(N_FFT_BINS) * (SAMPLE_RATE / WIN_LENGTH)
    fb = np.zeros((N_FFT_BINS, n_mels), dtype=np.float64)
    for m in range(n_mels):
        lo, c, hi = pts[m], pts[m + 1], pts[m + 2]
        up = (bin_freqs - lo) / max(c - lo, 1e-9)
        down = (hi - bin_freqs) / max(hi - c, 1e-9)
        fb[:, m] = np.clip(np.minimum(up, down), 0.0, None)
    return torch.from_numpy(fb.astype(np.float32))


@lru_cache(maxsize=4)
def _dft_basis() -> torch.Tensor:
    """[WIN_LENGTH, 2 * N_FFT_BINS] columns: cos then sin, Hann pre-applied."""
    n = np.arange(WIN_LENGTH, dtype=np.float64)
    k = np.arange(N_FFT_BINS, dtype=np.float64)
    ang = 2.0 * np.pi * np.outer(n, k) / WIN_LENGTH
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / WIN_LENGTH)  # periodic
    basis = np.concatenate([np.cos(ang), -np.sin(ang)], axis=1) * hann[:, None]
    return torch.from_numpy(basis.astype(np.float32))


def _frame_from_window(window: torch.Tensor) -> torch.Tensor:
    """One [128] log-mel frame from a [400] sample window."""
    spec = window @ _dft_basis()  # [402]
    re, im = spec[:N_FFT_BINS], spec[N_FFT_BINS:]
    power = re * re + im * im
    mel = power @ mel_filterbank()
    return torch.log(mel + LOG_FLOOR)


def _as_samples(x) -> torch.Tensor:
    """Accept float arrays in [-1, 1] or int16 PCM; returns float32 tensor."""
    if isinstance(x, torch.Tensor):
        t = x
    else:
        t = torch.as_tensor(np.asarray(x))
    if t.dtype == torch.int16:
        t = t.to(torch.float32) / 32768.0
    return t.to(torch.float32).reshape(-1)


class MelFrontend:
    """Stateful streaming frontend; one instance per audio stream."""

    def __init__(self) -> None:
        self._carry = torch.zeros(WIN_LENGTH - MEL_HOP)  # causal left zero padding
        self._pending = torch.zeros(0)
        self.frames_emitted = 0

    def feed(self, samples) -> torch.Tensor:
        """Consume samples, return all newly complete frames as [n, 128].

        Concatenating the frames from any chunking of a stream is bitwise
        identical to one batch pass over the full stream.
        """
        new = _as_samples(samples)
        if new.numel() == 0 and self._pending.numel() < MEL_HOP:
            return torch.zeros((0, N_MELS))
        buf = torch.cat([self._pending, new])
        frames = []
        off = 0
        while buf.numel() - off >= MEL_HOP:
            hop = buf[off : off + MEL_HOP]
            window = torch.cat([self._carry, hop])
            frames.append(_frame_from_window(window))
            self._carry = window[MEL_HOP:].clone()
            off += MEL_HOP
            self.frames_emitted += 1
        self._pending = buf[off:].clone()
        if not frames:
            return torch.zeros((0, N_MELS))
        return torch.stack(frames)


def log_mel(samples) -> torch.Tensor:
    """Batch log-mel: [T samples] -> [floor(T/160), 128]."""
    x = _as_samples(samples)
    if x.numel() == 0:
        raise ValueError("log_mel requires a non-empty sample stream")
    return MelFrontend().feed(x)


def log_mel_fast(samples) -> torch.Tensor:
    """Vectorized batch log-mel for the training data path.

    Same frames as `log_mel` up to float accumulation order (~1e-5); the
    serving paths use the per-frame variant, which is the bitwise reference.
    """
    x = _as_samples(samples)
    if x.numel() == 0:
        raise ValueError("log_mel_fast requires a non-empty sample stream")
    n_frames = x.numel() // MEL_HOP
    if n_frames == 0:
        return torch.zeros((0, N_MELS))
    padded = torch.cat([torch.zeros(WIN_LENGTH - MEL_HOP), x])
    windows = padded.unfold(0, WIN_LENGTH, MEL_HOP)[:n_frames]
    spec = windows @ _dft_basis()
    re, im = spec[:, :N_FFT_BINS], spec[:, N_FFT_BINS:]
    power = re * re + im * im
    return torch.log(power @ mel_filterbank() + LOG_FLOOR)
