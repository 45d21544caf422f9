"""Full model assembly, weight initialization, and checkpoint files.

Checkpoint layout (one directory):
  config.json    model dims, conditioning mode, vocabulary table, metadata
  manifest.json  tensor name / shape / byte offset into the blob
  weights.bin    all tensors as little-endian float32, concatenated
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn as tnn

from .config import ModelConfig, PRESETS
from .decoder import Adapter, TextDecoder, delay_embedding
from .encoder import AudioEncoder
from .vocab import Vocab
from .config import DelaySpec


class StreamingModel(tnn.Module):
    def __init__(self, cfg: ModelConfig, vocab: Vocab):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.encoder = AudioEncoder(cfg.encoder)
        self.adapter = Adapter(cfg.encoder.d_model, cfg.decoder.d_model, cfg.pooling)
        self.decoder = TextDecoder(cfg.decoder, vocab.size, cfg.conditioning)

    def forward_parts(
        self, mel: torch.Tensor, tokens_in: torch.Tensor, tau_frames: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Teacher-forced training pass.

        mel [B, 8n, 128], tokens_in [B, n], tau_frames [B] ->
        (logits [B, n, V], adapter outputs [B, n, d]).
        """
        enc = self.encoder(mel)
        audio = self.adapter(enc)
        fused = audio + self.decoder.embed(tokens_in)
        if self.cfg.conditioning == "sum_embedding":
            demb = torch.stack(
                [delay_embedding(DelaySpec(int(t)), self.cfg.decoder.d_model) for t in tau_frames]
            )
            fused = fused + demb[:, None, :]
        logits = self.decoder(fused, tau_frames)
        return logits, audio

    def forward(
        self, mel: torch.Tensor, tokens_in: torch.Tensor, tau_frames: torch.Tensor
    ) -> torch.Tensor:
        return self.forward_parts(mel, tokens_in, tau_frames)[0]


def teacher_inputs(vocab: Vocab, targets: list[int], tau: DelaySpec, conditioning: str, window: int) -> list[int]:
    """Previous-token input stream for teacher forcing.

    Starts from [P]; in special_token mode the reserved delay token replaces
    the input at stream start and at every attention-window boundary, exactly
    where the stepwise decoder injects it.
    """
    inputs = [vocab.pad_id] + list(targets[:-1])
    if conditioning == "special_token":
        pos = 0
        while pos < len(inputs):
            inputs[pos] = vocab.delay_token_id(tau.tau_frames)
            pos += window
    return inputs


def init_weights(model: tnn.Module, seed: int) -> None:
    """Deterministic init: N(0, 0.02) for projection/embedding/conv weights,
    ones for norm gains (set at construction)."""
    gen = torch.Generator().manual_seed(seed)
    for name, p in model.named_parameters():
        if name.endswith(("ln_attn.weight", "ln_ffn.weight", "ln_out.weight")):
            continue
        p.data.normal_(0.0, 0.02, generator=gen)


def build_model(preset: str = "tiny", conditioning: str = "ada_rmsnorm", n_words: int = 32, seed: int = 0) -> StreamingModel:
    from .vocab import build_toy_vocab

    cfg = PRESETS[preset](conditioning)
    model = StreamingModel(cfg, build_toy_vocab(n_words))
    init_weights(model, seed)
    return model


# ---------------------------------------------------------------------------
# checkpoint io
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, model: StreamingModel, meta: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    sd = model.state_dict()
    entries = []
    offset = 0
    with open(path / "weights.bin", "wb") as blob:
        for name, tensor in sd.items():
            arr = tensor.detach().cpu().numpy().astype("<f4")
            entries.append({"name": name, "shape": list(tensor.shape), "offset": offset})
            blob.write(arr.tobytes())
            offset += arr.nbytes
    (path / "manifest.json").write_text(
        json.dumps({"dtype": "float32", "byte_order": "little", "tensors": entries}, indent=1)
    )
    (path / "config.json").write_text(
        json.dumps(
            {
                "model": model.cfg.to_dict(),
                "vocab": model.vocab.to_dict(),
                "meta": meta or {},
            },
            indent=1,
        )
    )
    return path


def load_checkpoint(path: str | Path) -> tuple[StreamingModel, dict]:
    path = Path(path)
    cfg_doc = json.loads((path / "config.json").read_text())
    manifest = json.loads((path / "manifest.json").read_text())
    cfg = ModelConfig.from_dict(cfg_doc["model"])
    vocab = Vocab.from_dict(cfg_doc["vocab"])
    model = StreamingModel(cfg, vocab)
    raw = (path / "weights.bin").read_bytes()
    sd = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=entry["offset"])
        sd[entry["name"]] = torch.from_numpy(arr.copy()).reshape(shape)
    model.load_state_dict(sd)
    return model, cfg_doc.get("meta", {})
