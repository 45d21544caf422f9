"""Deterministic numeric kernels: norms, activations, rotary embeddings,
windowed causal attention and causal convolution.

Every kernel here is written so that a full-sequence pass and an incremental
per-position pass perform the same floating point operations in the same
order.  That is what makes the streaming-vs-offline equivalence tests bitwise
rather than approximate.  Per-position code paths always operate on tensors
with identical shapes and layouts regardless of how much history exists.

Kernels are dtype-generic (float32 in production, float64 for gradient
checks) and differentiable through torch autograd.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import torch
import torch.nn.functional as F


class NumericsError(RuntimeError):
    """A kernel produced or received a non-finite value."""


def check_finite(x: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NumericsError(f"non-finite values in {what}")
    return x


@dataclass(frozen=True)
class AttentionConfig:
    """Shape and masking parameters for one attention stack.

    ``window`` counts visible past positions inclusive of the current one:
    position t attends to [max(0, t - window + 1), t].
    """

    n_heads: int
    n_kv_heads: int
    head_dim: int
    window: int
    rope_theta: float = 10000.0

    def __post_init__(self) -> None:
        if self.n_heads % self.n_kv_heads != 0:
            raise ValueError("n_heads must be a multiple of n_kv_heads")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.head_dim % 2 != 0:
            raise ValueError("head_dim must be even for rotary embeddings")


# ---------------------------------------------------------------------------
# norms and activations
# ---------------------------------------------------------------------------


def rms_norm(x: torch.Tensor, weight: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """y = x / sqrt(mean(x^2) + eps) * weight, over the last dimension."""
    if x.shape[-1] != weight.shape[-1]:
        raise ValueError(f"rms_norm dim mismatch: {x.shape[-1]} vs {weight.shape[-1]}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    ms = (x * x).mean(dim=-1, keepdim=True)
    return check_finite(x * torch.rsqrt(ms + eps) * weight, "rms_norm")


def silu(x: torch.Tensor) -> torch.Tensor:
    return x * torch.sigmoid(x)


def swiglu_ffn(
    x: torch.Tensor,
    w_gate: torch.Tensor,
    w_up: torch.Tensor,
    w_down: torch.Tensor,
) -> torch.Tensor:
    """Gated feed-forward: down( silu(gate(x)) * up(x) ).  No biases."""
    if x.shape[-1] != w_gate.shape[1]:
        raise ValueError("swiglu_ffn input dim mismatch")
    h = silu(F.linear(x, w_gate)) * F.linear(x, w_up)
    return check_finite(F.linear(h, w_down), "swiglu_ffn")


# ---------------------------------------------------------------------------
# rotary position embeddings
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _rope_inv_freq(head_dim: int, theta: float, dtype: torch.dtype) -> torch.Tensor:
    idx = torch.arange(head_dim // 2, dtype=dtype)
    return theta ** (-2.0 * idx / head_dim)


@lru_cache(maxsize=8192)
def _rope_cos_sin(
    position: int, head_dim: int, theta: float, dtype: torch.dtype
) -> tuple[torch.Tensor, torch.Tensor]:
    # Cached per position so streaming and batch passes read the exact same
    # angle tables; cos/sin on a [dh/2] tensor is shape-stable and therefore
    # bitwise reproducible on recomputation after cache eviction.
    ang = float(position) * _rope_inv_freq(head_dim, theta, dtype)
    return torch.cos(ang), torch.sin(ang)


def _rope_rotate(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    x2 = x.reshape(*x.shape[:-1], x.shape[-1] // 2, 2)
    rot = torch.stack(
        (x2[..., 0] * cos - x2[..., 1] * sin, x2[..., 0] * sin + x2[..., 1] * cos),
        dim=-1,
    )
    return rot.reshape(x.shape)


def rope_apply(x: torch.Tensor, position: int, theta: float = 10000.0) -> torch.Tensor:
    """Rotate consecutive pairs of x's last dimension by position-scaled angles.

    Pair i of a head vector is rotated by position * theta^(-2i/head_dim).
    Accepts any leading shape; the last dimension must be even.
    """
    dh = x.shape[-1]
    if dh % 2 != 0:
        raise ValueError("rope_apply requires an even head_dim")
    cos, sin = _rope_cos_sin(int(position), dh, float(theta), x.dtype)
    return _rope_rotate(x, cos, sin)


def rope_apply_seq(x: torch.Tensor, positions: torch.Tensor, theta: float = 10000.0) -> torch.Tensor:
    """Vectorized rope over a sequence: x is [..., T, H, dh], positions [T]."""
    dh = x.shape[-1]
    inv = _rope_inv_freq(dh, float(theta), x.dtype)
    ang = positions.to(x.dtype)[:, None] * inv  # [T, dh/2]
    cos = torch.cos(ang)[:, None, :]  # [T, 1, dh/2] broadcast over heads
    sin = torch.sin(ang)[:, None, :]
    x2 = x.reshape(*x.shape[:-1], dh // 2, 2)
    rot = torch.stack(
        (x2[..., 0] * cos - x2[..., 1] * sin, x2[..., 0] * sin + x2[..., 1] * cos),
        dim=-1,
    )
    return rot.reshape(x.shape)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def attention_one_query(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Attention for a single query position.

    q: [n_heads, head_dim] (rope already applied)
    k, v: [L, n_kv_heads, head_dim] visible window in stream order
    returns [n_heads * head_dim]

    GQA: query head h reads KV head h // (n_heads // n_kv_heads).
    """
    n_heads, dh = q.shape
    if k.shape != v.shape:
        raise ValueError("k and v must have the same shape")
    if k.shape[0] == 0:
        raise ValueError("empty visible set")
    if k.shape[2] != dh:
        raise ValueError("head_dim mismatch between q and k")
    group = n_heads // k.shape[1]
    kh = k.permute(1, 0, 2).contiguous()  # [KVH, L, dh]
    vh = v.permute(1, 0, 2).contiguous()
    if group > 1:
        kh = kh.repeat_interleave(group, dim=0)  # [H, L, dh]
        vh = vh.repeat_interleave(group, dim=0)
    scale = dh ** -0.5
    scores = torch.bmm(kh, q.unsqueeze(-1)).squeeze(-1) * scale  # [H, L]
    weights = torch.softmax(scores, dim=-1)
    out = torch.bmm(weights.unsqueeze(1), vh).squeeze(1)  # [H, dh]
    return check_finite(out.reshape(-1), "attention")


def causal_attention(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, cfg: AttentionConfig
) -> torch.Tensor:
    """Sliding-window causal attention over a whole sequence.

    q: [T, n_heads, head_dim], k/v: [T, n_kv_heads, head_dim], all pre-rope.
    Returns [T, n_heads * head_dim].  Rope is applied per position and each
    query is evaluated against exactly its visible window, so the result is
    bitwise identical to an incremental pass over the same KV entries.
    """
    T = q.shape[0]
    if k.shape[0] != T or v.shape[0] != T:
        raise ValueError("q/k/v length mismatch")
    k_roped = torch.stack([rope_apply(k[t], t, cfg.rope_theta) for t in range(T)])
    rows = []
    for t in range(T):
        lo = max(0, t - cfg.window + 1)
        qt = rope_apply(q[t], t, cfg.rope_theta)
        rows.append(attention_one_query(qt, k_roped[lo : t + 1], v[lo : t + 1]))
    return torch.stack(rows)


def dense_windowed_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    window: int,
    rope_theta: float = 10000.0,
) -> torch.Tensor:
    """Vectorized masked-softmax attention used by the training forward.

    q: [B, T, H, dh], k/v: [B, T, KVH, dh], pre-rope.  Returns [B, T, H*dh].
    Numerically equivalent to `causal_attention` within float tolerance, not
    bitwise; the per-position kernels are the reference for streaming.

    Sequences much longer than the window dispatch to a chunk-banded layout
    (each query chunk sees its own and the previous key chunk) instead of
    materializing T x T scores.
    """
    B, T, H, dh = q.shape
    kvh = k.shape[2]
    positions = torch.arange(T)
    q = rope_apply_seq(q, positions, rope_theta)
    k = rope_apply_seq(k, positions, rope_theta)
    if H != kvh:
        k = k.repeat_interleave(H // kvh, dim=2)
        v = v.repeat_interleave(H // kvh, dim=2)
    q = q.permute(0, 2, 1, 3)  # [B, H, T, dh]
    k = k.permute(0, 2, 1, 3)
    v = v.permute(0, 2, 1, 3)
    if T > 2 * window:
        out = _banded_attention(q, k, v, window)
    else:
        scores = torch.matmul(q, k.transpose(-1, -2)) * (dh ** -0.5)  # [B, H, T, T]
        rel = positions[:, None] - positions[None, :]  # query - key
        allowed = (rel >= 0) & (rel < window)
        scores = scores.masked_fill(~allowed, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = torch.matmul(weights, v)  # [B, H, T, dh]
    return out.permute(0, 2, 1, 3).reshape(B, T, H * dh)


def _banded_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, window: int) -> torch.Tensor:
    """Windowed attention in chunks of the window size: query chunk i attends
    to key chunks i-1 and i, which covers every position within the window.

    q/k/v: [B, H, T, dh] post-rope; returns [B, H, T, dh].
    """
    B, H, T, dh = q.shape
    c = window
    nc = (T + c - 1) // c
    pad = nc * c - T
    if pad:
        q = F.pad(q, (0, 0, 0, pad))
        k = F.pad(k, (0, 0, 0, pad))
        v = F.pad(v, (0, 0, 0, pad))
    qc = q.reshape(B, H, nc, c, dh)
    # prepend one zero chunk so chunk i pairs with (i-1, i)
    kz = F.pad(k, (0, 0, c, 0)).reshape(B, H, nc + 1, c, dh)
    vz = F.pad(v, (0, 0, c, 0)).reshape(B, H, nc + 1, c, dh)
    kw = torch.cat([kz[:, :, :-1], kz[:, :, 1:]], dim=3)  # [B, H, nc, 2c, dh]
    vw = torch.cat([vz[:, :, :-1], vz[:, :, 1:]], dim=3)
    scores = torch.matmul(qc, kw.transpose(-1, -2)) * (dh ** -0.5)  # [B, H, nc, c, 2c]
    qi = torch.arange(c)[:, None]
    kj = torch.arange(2 * c)[None, :]
    # query global = i*c + qi, key global = (i-1)*c + kj: visible iff
    # 0 <= (c + qi - kj) < window, i.e. qi < kj <= qi + c
    allowed = (kj > qi) & (kj <= qi + c)
    first_chunk_allowed = allowed & (kj >= c)  # chunk -1 does not exist
    mask = allowed.expand(nc, c, 2 * c).clone()
    mask[0] = first_chunk_allowed
    scores = scores.masked_fill(~mask, float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    out = torch.matmul(weights, vw).reshape(B, H, nc * c, dh)
    return out[:, :, :T]


# ---------------------------------------------------------------------------
# causal convolution
# ---------------------------------------------------------------------------


def conv_window_output(window: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """One causal conv output from a [K, C_in] window (oldest tap first)."""
    c_out, c_in, k = weight.shape
    w_flat = weight.permute(0, 2, 1).reshape(c_out, k * c_in)
    return F.linear(window.reshape(k * c_in), w_flat)


def causal_conv1d(x: torch.Tensor, weight: torch.Tensor, stride: int = 1) -> torch.Tensor:
    """Causal 1-D convolution with implicit left zero padding.

    x: [T, C_in], weight: [C_out, C_in, K].  Output position t reads inputs
    stride*t - (K-1) .. stride*t, so it depends only on indices <= stride*t.
    Output length is ceil(T / stride).
    """
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("causal_conv1d requires a non-empty [T, C_in] input")
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    T, c_in = x.shape
    k = weight.shape[2]
    out_len = (T + stride - 1) // stride
    zero = x.new_zeros(c_in)
    rows = []
    for t in range(out_len):
        base = stride * t - (k - 1)
        taps = [x[base + j] if base + j >= 0 else zero for j in range(k)]
        rows.append(conv_window_output(torch.stack(taps), weight))
    return check_finite(torch.stack(rows), "causal_conv1d")


def causal_conv1d_dense(x: torch.Tensor, weight: torch.Tensor, stride: int = 1) -> torch.Tensor:
    """Vectorized causal conv for training: x [B, T, C_in] -> [B, ceil(T/s), C_out]."""
    k = weight.shape[2]
    xt = x.transpose(1, 2)  # [B, C_in, T]
    xt = F.pad(xt, (k - 1, 0))
    y = F.conv1d(xt, weight, stride=stride)
    return y.transpose(1, 2)


# ---------------------------------------------------------------------------
# misc embeddings
# ---------------------------------------------------------------------------


def sinusoidal_embedding(value: float, dim: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Transformer-style sinusoidal embedding of a scalar (even dim)."""
    if dim % 2 != 0:
        raise ValueError("sinusoidal embedding dim must be even")
    idx = torch.arange(dim // 2, dtype=dtype)
    freq = 10000.0 ** (-2.0 * idx / dim)
    ang = float(value) * freq
    emb = torch.empty(dim, dtype=dtype)
    emb[0::2] = torch.sin(ang)
    emb[1::2] = torch.cos(ang)
    return emb


def gelu(x: torch.Tensor) -> torch.Tensor:
    return F.gelu(x)


def greedy_pick(logits: torch.Tensor) -> int:
    """Argmax with ties broken toward the lowest token id."""
    m = torch.max(logits)
    return int((logits == m).nonzero()[0, 0])
