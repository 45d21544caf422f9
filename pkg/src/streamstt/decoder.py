"""Temporal adapter plus the delay-conditioned text decoder.

The adapter concatenates 4 consecutive 50 Hz encoder embeddings and projects
them to the decoder width, one output per 80 ms of audio.  The decoder is a
pre-norm Transformer with GQA and sliding-window attention whose input at
each step is the sum of the current audio embedding and the embedding of the
previously generated token (tied with the output head).

Delay conditioning comes in three flavours, selected by config:

* ``ada_rmsnorm``  — each block's FFN branch computes
                     FFN(RMSNorm(h) * (1 + g(tau))); the attention branch
                     never sees tau.  g is a per-layer MLP (d -> 32 -> d,
                     GELU, no biases) over a sinusoidal embedding of tau.
* ``sum_embedding``— a sinusoidal embedding of tau is added to every fused
                     input vector.
* ``special_token``— a reserved per-tau token is fed as the "previous token"
                     at stream start and again whenever the previous delay
                     token has slid out of the attention window.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn as tnn

from .config import DecoderConfig, DelaySpec
from .encoder import RMSNorm, SwiGLU
from .nn import (
    AttentionConfig,
    attention_one_query,
    dense_windowed_attention,
    gelu,
    greedy_pick,
    rms_norm,
    rope_apply,
    sinusoidal_embedding,
)
from .paging import ContiguousCache
from .vocab import Vocab


class Adapter(tnn.Module):
    """4x temporal pooling: concat 4 encoder frames, one linear map down."""

    def __init__(self, d_encoder: int, d_decoder: int, pooling: int = 4):
        super().__init__()
        self.pooling = pooling
        self.proj = tnn.Linear(pooling * d_encoder, d_decoder, bias=False)

    def forward(self, enc: torch.Tensor) -> torch.Tensor:
        """[B, T_enc, d_e] -> [B, T_enc // pooling, d_d]; tail frames dropped."""
        B, T, d = enc.shape
        n = T // self.pooling
        x = enc[:, : n * self.pooling].reshape(B, n, self.pooling * d)
        return self.proj(x)


def adapt(adapter: Adapter, frames: torch.Tensor) -> torch.Tensor:
    """One adapter output from exactly `pooling` encoder frames [p, d_e]."""
    if frames.shape[0] != adapter.pooling:
        raise ValueError(f"adapt requires exactly {adapter.pooling} encoder frames")
    return adapter.proj(frames.reshape(-1))


class DelayConditioner(tnn.Module):
    """Per-layer conditioning vectors g(tau) for the ada_rmsnorm mode."""

    def __init__(self, n_layers: int, d_model: int, inner: int = 32):
        super().__init__()
        self.d_model = d_model
        self.down = tnn.ModuleList(tnn.Linear(d_model, inner, bias=False) for _ in range(n_layers))
        self.up = tnn.ModuleList(tnn.Linear(inner, d_model, bias=False) for _ in range(n_layers))

    def g(self, tau: DelaySpec, layer: int) -> torch.Tensor:
        emb = sinusoidal_embedding(tau.tau_frames, self.d_model)
        return self.up[layer](gelu(self.down[layer](emb)))

    def g_all(self, tau: DelaySpec) -> list[torch.Tensor]:
        return [self.g(tau, layer) for layer in range(len(self.down))]

    def g_batch(self, tau_frames: torch.Tensor, layer: int) -> torch.Tensor:
        emb = torch.stack([sinusoidal_embedding(int(t), self.d_model) for t in tau_frames])
        return self.up[layer](gelu(self.down[layer](emb)))


def delay_embedding(tau: DelaySpec, d_model: int) -> torch.Tensor:
    """Sinusoidal tau embedding used by the sum_embedding mode."""
    return sinusoidal_embedding(tau.tau_frames, d_model)


def needs_delay_token(pos: int, last_inject_pos: int | None, window: int) -> bool:
    """special_token mode: inject at stream start and at window boundaries,
    i.e. at the first position whose window no longer sees the previous one."""
    if pos == 0 or last_inject_pos is None:
        return True
    return pos - last_inject_pos >= window


class DecoderBlock(tnn.Module):
    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        d = cfg.d_model
        self.cfg = cfg
        self.attn_cfg = AttentionConfig(
            cfg.n_heads, cfg.n_kv_heads, cfg.head_dim, cfg.window, cfg.rope_theta
        )
        self.ln_attn = RMSNorm(d, cfg.norm_eps)
        self.ln_ffn = RMSNorm(d, cfg.norm_eps)
        self.wq = tnn.Linear(d, d, bias=False)
        self.wk = tnn.Linear(d, cfg.n_kv_heads * cfg.head_dim, bias=False)
        self.wv = tnn.Linear(d, cfg.n_kv_heads * cfg.head_dim, bias=False)
        self.wo = tnn.Linear(d, d, bias=False)
        self.ffn = SwiGLU(d, cfg.ffn_hidden)

    def attend(self, x: torch.Tensor) -> torch.Tensor:
        """Attention half: h = x + Attn(RMSNorm(x)).  Never conditioned on tau."""
        B, T, d = x.shape
        cfg = self.cfg
        xn = self.ln_attn(x)
        q = self.wq(xn).view(B, T, cfg.n_heads, cfg.head_dim)
        k = self.wk(xn).view(B, T, cfg.n_kv_heads, cfg.head_dim)
        v = self.wv(xn).view(B, T, cfg.n_kv_heads, cfg.head_dim)
        attn = dense_windowed_attention(q, k, v, cfg.window, cfg.rope_theta)
        return x + self.wo(attn)

    def feed_forward(self, h: torch.Tensor, g: torch.Tensor | None) -> torch.Tensor:
        """FFN half: y = h + FFN(RMSNorm(h) * (1 + g)); g is None outside
        ada_rmsnorm mode."""
        hn = self.ln_ffn(h)
        if g is not None:
            hn = hn * (1.0 + g)
        return h + self.ffn(hn)

    def forward(self, x: torch.Tensor, g: torch.Tensor | None = None) -> torch.Tensor:
        """x [B, T, d]; g broadcastable to [B, 1, d] or None."""
        return self.feed_forward(self.attend(x), g)


class TextDecoder(tnn.Module):
    def __init__(self, cfg: DecoderConfig, vocab_size: int, conditioning: str):
        super().__init__()
        self.cfg = cfg
        self.conditioning = conditioning
        self.embed = tnn.Embedding(vocab_size, cfg.d_model)
        self.blocks = tnn.ModuleList(DecoderBlock(cfg) for _ in range(cfg.n_layers))
        self.ln_out = RMSNorm(cfg.d_model, cfg.norm_eps)
        self.conditioner = (
            DelayConditioner(cfg.n_layers, cfg.d_model, cfg.cond_inner)
            if conditioning == "ada_rmsnorm"
            else None
        )

    def head(self, hidden: torch.Tensor) -> torch.Tensor:
        """Tied output head: logits via the embedding matrix."""
        return F.linear(hidden, self.embed.weight)

    def forward(self, fused: torch.Tensor, tau_frames: torch.Tensor) -> torch.Tensor:
        """Vectorized training path: fused [B, T, d], tau_frames [B] -> logits."""
        x = fused
        for layer, block in enumerate(self.blocks):
            g = None
            if self.conditioner is not None:
                g = self.conditioner.g_batch(tau_frames, layer)[:, None, :]
            x = block(x, g)
        return self.head(self.ln_out(x))


# ---------------------------------------------------------------------------
# stepwise decoding
# ---------------------------------------------------------------------------


def fuse_streams(decoder: TextDecoder, audio_emb: torch.Tensor, prev_token_id: int) -> torch.Tensor:
    """Elementwise sum of the audio embedding and the previous token embedding."""
    return audio_emb + decoder.embed.weight[prev_token_id]


class DecoderState:
    """Incremental decode state over a windowed (optionally paged) KV cache."""

    def __init__(self, dec: TextDecoder, tau: DelaySpec, cache=None):
        self.tau = tau
        self.cache = cache if cache is not None else ContiguousCache(dec.cfg.n_layers)
        self.position = 0
        self.last_inject_pos: int | None = None
        # g vectors are fixed per stream: tau is constant and weights frozen
        self.g_vectors = dec.conditioner.g_all(tau) if dec.conditioner is not None else None


@torch.no_grad()
def decode_position(
    dec: TextDecoder,
    state: DecoderState,
    fused: torch.Tensor,
    collect: dict | None = None,
) -> torch.Tensor:
    """One decoder forward over the fused input vector; returns logits [V].

    Appends this position's KV, attends over the visible window, evicts KV
    beyond it.  ``collect["attn"]`` receives the per-layer attention-branch
    residuals when a dict is passed (used by the branch-isolation tests).
    """
    window = dec.cfg.window
    pos = state.cache.advance(1)
    if pos != state.position:
        raise RuntimeError("decoder cache desynchronized from frame counter")
    x = fused
    for layer, block in enumerate(dec.blocks):
        cfg = block.attn_cfg
        xn = block.ln_attn(x)
        q = rope_apply(block.wq(xn).view(cfg.n_heads, cfg.head_dim), pos, cfg.rope_theta)
        k = rope_apply(block.wk(xn).view(cfg.n_kv_heads, cfg.head_dim), pos, cfg.rope_theta)
        v = block.wv(xn).view(cfg.n_kv_heads, cfg.head_dim)
        state.cache.write(layer, pos, k, v)
        lo = max(0, pos - window + 1)
        k_win, v_win = state.cache.gather(layer, lo, pos)
        attn = attention_one_query(q, k_win, v_win)
        h = x + block.wo(attn)
        if collect is not None:
            collect.setdefault("attn", []).append(h.clone())
        g = state.g_vectors[layer] if state.g_vectors is not None else None
        x = block.feed_forward(h, g)
    state.cache.evict_before(max(0, pos - window + 1))
    state.position += 1
    return dec.head(dec.ln_out(x))


@torch.no_grad()
def decode_step(
    dec: TextDecoder,
    state: DecoderState,
    fused: torch.Tensor,
) -> int:
    """Greedy decode of one frame: argmax token id, lowest id wins ties."""
    return greedy_pick(decode_position(dec, state, fused))


def stepwise_input(
    dec: TextDecoder,
    state: DecoderState,
    audio_emb: torch.Tensor,
    prev_token_id: int,
    vocab: Vocab,
) -> torch.Tensor:
    """Build the decoder input for one frame, applying the conditioning mode.

    In special_token mode the reserved delay token replaces the previous
    token at injection positions; in sum_embedding mode the sinusoidal delay
    embedding is added on top of the fused vector.
    """
    if dec.conditioning == "special_token" and needs_delay_token(
        state.position, state.last_inject_pos, dec.cfg.window
    ):
        prev_token_id = vocab.delay_token_id(state.tau.tau_frames)
        state.last_inject_pos = state.position
    fused = fuse_streams(dec, audio_emb, prev_token_id)
    if dec.conditioning == "sum_embedding":
        fused = fused + delay_embedding(state.tau, dec.cfg.d_model)
    return fused
