import json

import numpy as np
import torch

from streamstt.config import DelaySpec
from streamstt.model import build_model, load_checkpoint, save_checkpoint
from streamstt.session import offline_events


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        model = build_model("tiny", seed=42)
        save_checkpoint(tmp_path / "ckpt", model, meta={"note": "unit"})
        loaded, meta = load_checkpoint(tmp_path / "ckpt")
        assert meta == {"note": "unit"}
        orig = model.state_dict()
        for name, tensor in loaded.state_dict().items():
            assert torch.equal(tensor, orig[name]), name

    def test_manifest_structure(self, tmp_path):
        model = build_model("tiny", seed=1)
        save_checkpoint(tmp_path / "ckpt", model)
        manifest = json.loads((tmp_path / "ckpt" / "manifest.json").read_text())
        assert manifest["dtype"] == "float32"
        assert manifest["byte_order"] == "little"
        size = (tmp_path / "ckpt" / "weights.bin").stat().st_size
        last = manifest["tensors"][-1]
        last_bytes = 4 * int(np.prod(last["shape"]))
        assert last["offset"] + last_bytes == size
        # offsets strictly increasing and gap-free
        offset = 0
        for entry in manifest["tensors"]:
            assert entry["offset"] == offset
            offset += 4 * int(np.prod(entry["shape"]))
        cfg = json.loads((tmp_path / "ckpt" / "config.json").read_text())
        assert "vocab" in cfg and "model" in cfg
        assert cfg["model"]["preset"] == "tiny"

    def test_loaded_model_transcribes_identically(self, tmp_path):
        model = build_model("tiny", seed=3)
        save_checkpoint(tmp_path / "ckpt", model)
        loaded, _ = load_checkpoint(tmp_path / "ckpt")
        rng = np.random.default_rng(0)
        audio = (rng.standard_normal(1280 * 5) * 0.2).astype(np.float32)
        ev_a, tr_a = offline_events(model, audio, DelaySpec(4))
        ev_b, tr_b = offline_events(loaded, audio, DelaySpec(4))
        assert [e.token_id for e in ev_a] == [e.token_id for e in ev_b]
        assert tr_a == tr_b

    def test_tied_head_preserved_after_load(self, tmp_path):
        model = build_model("tiny", seed=5)
        save_checkpoint(tmp_path / "ckpt", model)
        loaded, _ = load_checkpoint(tmp_path / "ckpt")
        h = torch.randn(64)
        assert torch.allclose(loaded.decoder.head(h), loaded.decoder.embed.weight @ h, atol=1e-6)
