"""Causal audio encoder: conv stem with 2x downsampling plus a sliding-window
Transformer, emitting one embedding per 20 ms of audio.

Three evaluation paths over the same weights:

* ``AudioEncoder.forward`` — vectorized, autograd-friendly; used for training
  and as the dense numerical reference (agrees with the others to ~1e-5).
* ``encode_batch`` — offline pass computed position by position with the
  deterministic kernels; the ground truth for streaming equivalence.
* ``encode_step`` — incremental pass holding a 4-frame conv history and a
  windowed KV cache; bitwise identical to ``encode_batch``.

The stem is conv(k=3, s=1) -> GELU -> conv(k=3, s=2) -> GELU, both causal, so
output frame t reads mel frames 2t-4 .. 2t exactly.  Log-mel input is passed
through a fixed affine squash (see ``condition_input``) before the stem to
bring the raw log scale into unit range.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn as tnn

from .config import EncoderConfig
from .nn import (
    AttentionConfig,
    attention_one_query,
    causal_conv1d,
    causal_conv1d_dense,
    conv_window_output,
    dense_windowed_attention,
    gelu,
    rms_norm,
    rope_apply,
    swiglu_ffn,
)
from .paging import ContiguousCache

INPUT_SHIFT = 10.0
INPUT_SCALE = 0.1


def condition_input(mel: torch.Tensor) -> torch.Tensor:
    """Fixed affine squash of raw log-mel values into roughly [-1.5, 1]."""
    return (mel + INPUT_SHIFT) * INPUT_SCALE


class RMSNorm(tnn.Module):
    def __init__(self, dim: int, eps: float):
        super().__init__()
        self.weight = tnn.Parameter(torch.ones(dim))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return rms_norm(x, self.weight, self.eps)


class SwiGLU(tnn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.gate = tnn.Linear(dim, hidden, bias=False)
        self.up = tnn.Linear(dim, hidden, bias=False)
        self.down = tnn.Linear(hidden, dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return swiglu_ffn(x, self.gate.weight, self.up.weight, self.down.weight)


class EncoderBlock(tnn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d, h = cfg.d_model, cfg.n_heads
        self.cfg = cfg
        self.attn_cfg = AttentionConfig(h, h, cfg.head_dim, cfg.window, cfg.rope_theta)
        self.ln_attn = RMSNorm(d, cfg.norm_eps)
        self.ln_ffn = RMSNorm(d, cfg.norm_eps)
        self.wq = tnn.Linear(d, d, bias=False)
        self.wk = tnn.Linear(d, d, bias=False)
        self.wv = tnn.Linear(d, d, bias=False)
        self.wo = tnn.Linear(d, d, bias=False)
        self.ffn = SwiGLU(d, cfg.ffn_hidden)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Vectorized training path: x [B, T, d]."""
        B, T, d = x.shape
        h, dh = self.cfg.n_heads, self.cfg.head_dim
        xn = self.ln_attn(x)
        q = self.wq(xn).view(B, T, h, dh)
        k = self.wk(xn).view(B, T, h, dh)
        v = self.wv(xn).view(B, T, h, dh)
        attn = dense_windowed_attention(q, k, v, self.cfg.window, self.cfg.rope_theta)
        res = x + self.wo(attn)
        return res + self.ffn(self.ln_ffn(res))


class AudioEncoder(tnn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.conv1 = tnn.Parameter(torch.empty(cfg.conv_channels, cfg.n_mels, 3))
        self.conv2 = tnn.Parameter(torch.empty(cfg.d_model, cfg.conv_channels, 3))
        self.blocks = tnn.ModuleList(EncoderBlock(cfg) for _ in range(cfg.n_layers))
        self.ln_out = RMSNorm(cfg.d_model, cfg.norm_eps)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        """Vectorized training path: mel [B, T, n_mels] -> [B, T//2, d]."""
        T2 = (mel.shape[1] // 2) * 2
        x = condition_input(mel[:, :T2])
        x = gelu(causal_conv1d_dense(x, self.conv1, stride=1))
        x = gelu(causal_conv1d_dense(x, self.conv2, stride=2))
        for block in self.blocks:
            x = block(x)
        return self.ln_out(x)


# ---------------------------------------------------------------------------
# deterministic per-position paths
# ---------------------------------------------------------------------------


def _stem_rows(x: torch.Tensor, weight: torch.Tensor, stride: int) -> torch.Tensor:
    """Causal conv + per-row GELU so activation shapes match the step path."""
    rows = causal_conv1d(x, weight, stride)
    return torch.stack([gelu(r) for r in rows])


@torch.no_grad()
def stem_batch(enc: AudioEncoder, mel: torch.Tensor) -> torch.Tensor:
    """Conv stem only: mel [T, n_mels] -> [floor(T/2), d].

    Output t reads exactly mel frames 2t-4 .. 2t (the attention stack above
    widens the receptive field; this is the finite-history part).
    """
    T2 = (mel.shape[0] // 2) * 2
    x = condition_input(mel[:T2])
    x = _stem_rows(x, enc.conv1, 1)
    return _stem_rows(x, enc.conv2, 2)


def _finish_position(block: EncoderBlock, x: torch.Tensor, attn_vec: torch.Tensor) -> torch.Tensor:
    h = x + block.wo(attn_vec)
    return h + block.ffn(block.ln_ffn(h))


def _project_position(block: EncoderBlock, x: torch.Tensor, pos: int):
    cfg = block.attn_cfg
    xn = block.ln_attn(x)
    q = block.wq(xn).view(cfg.n_heads, cfg.head_dim)
    k = block.wk(xn).view(cfg.n_kv_heads, cfg.head_dim)
    v = block.wv(xn).view(cfg.n_kv_heads, cfg.head_dim)
    return rope_apply(q, pos, cfg.rope_theta), rope_apply(k, pos, cfg.rope_theta), v


@torch.no_grad()
def encode_batch(enc: AudioEncoder, mel: torch.Tensor) -> torch.Tensor:
    """Offline encode: mel [T, n_mels] -> [floor(T/2), d], deterministic.

    Output frame t depends only on mel[0 .. 2t]; odd trailing mel frames are
    ignored (they stay buffered in the streaming path).
    """
    if mel.ndim != 2 or mel.shape[0] < 2:
        raise ValueError("encode_batch requires at least 2 mel frames")
    x = stem_batch(enc, mel)
    n = x.shape[0]
    window = enc.cfg.window
    for block in enc.blocks:
        qs, ks, vs = [], [], []
        for t in range(n):
            q, k, v = _project_position(block, x[t], t)
            qs.append(q)
            ks.append(k)
            vs.append(v)
        k_all, v_all = torch.stack(ks), torch.stack(vs)
        new_x = []
        for t in range(n):
            lo = max(0, t - window + 1)
            attn = attention_one_query(qs[t], k_all[lo : t + 1], v_all[lo : t + 1])
            new_x.append(_finish_position(block, x[t], attn))
        x = torch.stack(new_x)
    return torch.stack([enc.ln_out(x[t]) for t in range(n)])


class EncoderState:
    """Incremental state: conv history plus per-layer windowed KV."""

    def __init__(self, enc: AudioEncoder, cache=None):
        self.conv_history = torch.zeros(4, enc.cfg.n_mels)  # conditioned mel
        self.cache = cache if cache is not None else ContiguousCache(enc.cfg.n_layers)
        self.frames_emitted = 0


@torch.no_grad()
def encode_step(enc: AudioEncoder, state: EncoderState, mel_pair: torch.Tensor) -> torch.Tensor:
    """Consume 2 mel frames (20 ms), emit 1 embedding; bitwise == encode_batch.

    The 4-frame history buffer plus the incoming pair covers mel positions
    2t-4 .. 2t+1, which is exactly the stem receptive field of output t plus
    the lookahead stored for t+1.
    """
    if mel_pair.shape != (2, enc.cfg.n_mels):
        raise ValueError(f"encode_step expects [2, {enc.cfg.n_mels}] mel frames")
    t = state.frames_emitted
    seq6 = torch.cat([state.conv_history, condition_input(mel_pair)])  # mel 2t-4..2t+1
    # conv1 at absolute positions 2t-2, 2t-1, 2t (local 2, 3, 4); the zero
    # history at stream start reproduces the batch path's left zero padding
    # exactly because conv-of-zeros is zero (no biases) and gelu(0) == 0.
    out1 = torch.stack(
        [gelu(conv_window_output(seq6[i - 2 : i + 1], enc.conv1)) for i in (2, 3, 4)]
    )
    x = gelu(conv_window_output(out1, enc.conv2))
    window = enc.cfg.window
    pos = state.cache.advance(1)
    assert pos == t, "encoder cache desynchronized from frame counter"
    for layer, block in enumerate(enc.blocks):
        q, k, v = _project_position(block, x, pos)
        state.cache.write(layer, pos, k, v)
        lo = max(0, pos - window + 1)
        k_win, v_win = state.cache.gather(layer, lo, pos)
        attn = attention_one_query(q, k_win, v_win)
        x = _finish_position(block, x, attn)
    state.cache.evict_before(max(0, pos - window + 1))
    state.conv_history = seq6[2:]
    state.frames_emitted += 1
    return enc.ln_out(x)
