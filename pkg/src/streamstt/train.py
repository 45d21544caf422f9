"""End-to-end training on the synthetic corpus.

Two phases: an encoder warm-up (5% of steps, decoder frozen, lr 4e-4) and a
joint phase (lr 6e-5, all parameters).  The objective is mean cross-entropy
over every frame, [P] frames included, plus a z-loss penalty on the squared
log softmax normalizer that keeps tied-embedding logit growth in check.

Delays are sampled per utterance, uniformly over 1..30 frames, and each
utterance's frame count is extended past the audio by tau plus a small
margin so every word's tokens flush inside the target stream.
"""

from __future__ import annotations

import json
import math
import queue
import threading
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .config import MEL_FRAMES_PER_STEP, MS_PER_FRAME, SAMPLES_PER_FRAME, DelaySpec
from .corpus import SynthSample
from .frontend import LOG_FLOOR, log_mel_fast
from .model import StreamingModel, save_checkpoint, teacher_inputs
from .targets import build_targets

SILENCE_LOG_MEL = float(math.log(LOG_FLOOR))


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    total_steps: int = 4000
    warmup_fraction: float = 0.05
    lr_warmup: float = 4e-4
    lr_joint: float = 6e-5
    zloss_coeff: float = 1e-4
    batch_size: int = 8
    adam_betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.1
    pad_ce_weight: float = 1.0  # down-weighting of [P] frames; 1.0 = full weight
    grouping: bool = True
    tau_min: int = 1
    tau_max: int = 30
    flush_margin_frames: int = 2
    seed: int = 0
    use_producer: bool = True
    producer_depth: int = 4

    @property
    def warmup_steps(self) -> int:
        return int(round(self.total_steps * self.warmup_fraction))


def sample_delay(rng: np.random.Generator, lo: int = 1, hi: int = 30) -> DelaySpec:
    """Uniform over {lo..hi} decoder frames (80 ms units)."""
    return DelaySpec(int(rng.integers(lo, hi + 1)))


def loss_fn(
    logits: torch.Tensor,
    targets: torch.Tensor,
    mask: torch.Tensor,
    zloss_coeff: float,
    pad_id: int,
    pad_ce_weight: float = 1.0,
) -> tuple[torch.Tensor, dict]:
    """Masked mean CE + zloss_coeff * masked mean (log Z)^2.

    logits [B, T, V], targets [B, T] ids, mask [B, T] in {0, 1}.
    """
    if logits.shape[:2] != targets.shape:
        raise ValueError("logits/targets length mismatch")
    log_z = torch.logsumexp(logits, dim=-1)  # [B, T]
    log_p = logits - log_z[..., None]
    nll = -log_p.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    weights = mask * torch.where(targets == pad_id, pad_ce_weight, 1.0)
    ce = (nll * weights).sum() / weights.sum().clamp_min(1.0)
    denom = mask.sum().clamp_min(1.0)
    z_term = ((log_z ** 2) * mask).sum() / denom
    loss = ce + zloss_coeff * z_term
    stats = {
        "ce": float(ce.detach()),
        "zloss": float(z_term.detach()),
        "logZ_abs_mean": float((log_z.abs() * mask).sum().detach() / denom),
    }
    return loss, stats


@dataclass
class Batch:
    mel: torch.Tensor  # [B, 8n, 128]
    tokens_in: torch.Tensor  # [B, n]
    targets: torch.Tensor  # [B, n]
    mask: torch.Tensor  # [B, n]
    tau_frames: torch.Tensor  # [B]


def build_batch(
    model: StreamingModel, samples: list[SynthSample], rng: np.random.Generator, cfg: TrainConfig
) -> Batch:
    vocab = model.vocab
    chosen = [samples[int(i)] for i in rng.integers(0, len(samples), size=cfg.batch_size)]
    taus = [sample_delay(rng, cfg.tau_min, cfg.tau_max) for _ in chosen]
    n_frames = [s.n_frames + t.tau_frames + cfg.flush_margin_frames for s, t in zip(chosen, taus)]
    n_max = max(n_frames)
    B = len(chosen)
    mel = torch.full((B, n_max * MEL_FRAMES_PER_STEP, 128), SILENCE_LOG_MEL)
    targets = torch.full((B, n_max), vocab.pad_id, dtype=torch.long)
    tokens_in = torch.full((B, n_max), vocab.pad_id, dtype=torch.long)
    mask = torch.zeros(B, n_max)
    for b, (s, tau, n) in enumerate(zip(chosen, taus, n_frames)):
        wav = np.zeros(n * SAMPLES_PER_FRAME, dtype=np.float32)
        wav[: s.samples.size] = s.samples
        mel[b, : n * MEL_FRAMES_PER_STEP] = log_mel_fast(wav)
        ts = build_targets(s.words, tau, n, vocab, grouping=cfg.grouping)
        targets[b, :n] = torch.tensor(ts.tokens, dtype=torch.long)
        tokens_in[b, :n] = torch.tensor(
            teacher_inputs(vocab, ts.tokens, tau, model.cfg.conditioning, model.cfg.decoder.window),
            dtype=torch.long,
        )
        mask[b, :n] = 1.0
    return Batch(mel, tokens_in, targets, mask, torch.tensor([t.tau_frames for t in taus]))


def batch_stream(model: StreamingModel, samples: list[SynthSample], cfg: TrainConfig):
    """Deterministic batch sequence; identical with or without the producer."""
    rng = np.random.default_rng(cfg.seed + 1)
    while True:
        yield build_batch(model, samples, rng, cfg)


class _Producer:
    """Runs batch construction ahead of the optimizer on a bounded queue."""

    def __init__(self, generator, depth: int):
        self._gen = generator
        self._queue: queue.Queue = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        try:
            for item in self._gen:
                if self._stop.is_set():
                    return
                while True:
                    try:
                        self._queue.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        if self._stop.is_set():
                            return
        except Exception as exc:  # surface in consumer
            self._queue.put(exc)

    def get(self):
        item = self._queue.get()
        if isinstance(item, Exception):
            raise item
        return item

    def stop(self):
        self._stop.set()


def _param_groups(model: StreamingModel):
    front = list(model.encoder.parameters()) + list(model.adapter.parameters())
    dec = list(model.decoder.parameters())
    return front, dec


def train(
    model: StreamingModel,
    train_samples: list[SynthSample],
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    log_hook=None,
) -> list[dict]:
    """Run the two-phase schedule; returns the per-step metrics records.

    Writes metrics.jsonl and a final checkpoint under out_dir when given.
    Aborts with DivergenceError if the loss goes non-finite.
    """
    torch.manual_seed(cfg.seed)
    vocab = model.vocab
    front, dec = _param_groups(model)
    opt = torch.optim.AdamW(
        [{"params": front, "lr": cfg.lr_warmup}, {"params": dec, "lr": 0.0}],
        betas=cfg.adam_betas,
        weight_decay=cfg.weight_decay,
    )
    for p in dec:
        p.requires_grad_(False)

    gen = batch_stream(model, train_samples, cfg)
    producer = _Producer(gen, cfg.producer_depth) if cfg.use_producer else None
    records: list[dict] = []
    out_path = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_file = open(out_path / "metrics.jsonl", "w")
    try:
        for step in range(cfg.total_steps):
            if step == cfg.warmup_steps:
                for p in dec:
                    p.requires_grad_(True)
                for group in opt.param_groups:
                    group["lr"] = cfg.lr_joint
            batch = producer.get() if producer else next(gen)
            model.train()
            logits, audio = model.forward_parts(batch.mel, batch.tokens_in, batch.tau_frames)
            loss, stats = loss_fn(
                logits, batch.targets, batch.mask, cfg.zloss_coeff, vocab.pad_id, cfg.pad_ce_weight
            )
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at step {step}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            with torch.no_grad():
                text_norm = float(model.decoder.embed.weight.norm(dim=1).mean())
                denom = batch.mask.sum().clamp_min(1.0)
                audio_norm = float((audio.norm(dim=-1) * batch.mask).sum() / denom)
            rec = {
                "step": step,
                "phase": 1 if step < cfg.warmup_steps else 2,
                **stats,
                "text_emb_norm": text_norm,
                "audio_emb_norm": audio_norm,
            }
            records.append(rec)
            if log_file is not None:
                log_file.write(json.dumps(rec) + "\n")
            if log_hook is not None:
                log_hook(rec)
    finally:
        if producer:
            producer.stop()
        if log_file is not None:
            log_file.close()
    if out_path is not None:
        save_checkpoint(
            out_path / "checkpoint",
            model,
            meta={"train_config": asdict(cfg), "steps": cfg.total_steps},
        )
    model.eval()
    return records
