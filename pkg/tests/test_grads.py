"""Analytic (autograd) gradients vs central finite differences, float64,
dims <= 8, relative error <= 1e-3."""

import torch

from streamstt.nn import (
    AttentionConfig,
    causal_attention,
    causal_conv1d,
    gelu,
    rms_norm,
    sinusoidal_embedding,
    swiglu_ffn,
)
from streamstt.train import loss_fn

from oracles import assert_gradients_match

torch.manual_seed(0)


def _w(*shape):
    return (torch.randn(*shape, dtype=torch.float64) * 0.5).requires_grad_(True)


def test_rms_norm_gradients():
    x, w = _w(6), _w(6)
    probe = torch.randn(6, dtype=torch.float64)
    assert_gradients_match(lambda: (rms_norm(x, w, 1e-5) * probe).sum(), [x, w])


def test_swiglu_gradients():
    x, wg, wu, wd = _w(4), _w(6, 4), _w(6, 4), _w(4, 6)
    probe = torch.randn(4, dtype=torch.float64)
    assert_gradients_match(lambda: (swiglu_ffn(x, wg, wu, wd) * probe).sum(), [x, wg, wu, wd])


def test_attention_gradients():
    T, H, KVH, dh = 5, 2, 1, 4
    q, k, v = _w(T, H, dh), _w(T, KVH, dh), _w(T, KVH, dh)
    cfg = AttentionConfig(H, KVH, dh, window=3)
    probe = torch.randn(T, H * dh, dtype=torch.float64)
    assert_gradients_match(lambda: (causal_attention(q, k, v, cfg) * probe).sum(), [q, k, v])


def test_conv_stem_gradients():
    x, w1, w2 = _w(6, 3), _w(4, 3, 3), _w(2, 4, 3)
    probe = torch.randn(3, 2, dtype=torch.float64)

    def fn():
        h = gelu(causal_conv1d(x, w1, stride=1))
        y = gelu(causal_conv1d(h, w2, stride=2))
        return (y * probe).sum()

    assert_gradients_match(fn, [x, w1, w2])


def test_adapter_gradients():
    frames, w = _w(4, 2), _w(3, 8)
    probe = torch.randn(3, dtype=torch.float64)
    assert_gradients_match(
        lambda: (torch.nn.functional.linear(frames.reshape(-1), w) * probe).sum(), [frames, w]
    )


def test_delay_mlp_gradients():
    w1, w2 = _w(3, 6), _w(6, 3)
    emb = sinusoidal_embedding(7, 6, dtype=torch.float64)
    probe = torch.randn(6, dtype=torch.float64)

    def fn():
        g = torch.nn.functional.linear(gelu(torch.nn.functional.linear(emb, w1)), w2)
        return (g * probe).sum()

    assert_gradients_match(fn, [w1, w2])


def test_zloss_cross_entropy_gradients():
    logits = _w(1, 3, 5)
    targets = torch.tensor([[0, 4, 2]])
    mask = torch.ones(1, 3, dtype=torch.float64)

    def fn():
        loss, _ = loss_fn(logits, targets, mask, zloss_coeff=1e-2, pad_id=4)
        return loss

    assert_gradients_match(fn, [logits])
