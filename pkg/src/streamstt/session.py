"""Resumable streaming transcription sessions.

A session consumes raw 16 kHz samples and emits exactly one token event per
80 ms frame: samples buffer until a full 1280-sample frame is available,
which becomes 8 mel frames, 4 encoder steps, one adapter output, and one
greedy decode step fused with the previously emitted token.

Creation runs a prefill of ``left_pad_frames`` frames of silence with the
text stream forced to [P] (tokens forced, not sampled), building KV state
without emitting events.  ``finish`` appends tau + 8 frames of synthetic
silence so pending words can flush, then frees the session's pool blocks.

`offline_events` is the single-shot batch reference: the same audio in one
pass through `encode_batch` and a stepwise greedy decode over contiguous KV.
Session output is bitwise identical to it for any chunking schedule.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass

import numpy as np
import torch

from .config import SAMPLES_PER_FRAME, DelaySpec
from .decoder import DecoderState, adapt, decode_position, stepwise_input
from .encoder import EncoderState, encode_batch, encode_step
from .frontend import MelFrontend, log_mel
from .model import StreamingModel
from .nn import greedy_pick
from .paging import BlockTable, KindSpec, PagedKvPool
from .vocab import TokenKind, Vocab

DEFAULT_FLUSH_EXTRA_FRAMES = 8


@dataclass(frozen=True)
class TokenEvent:
    frame_index: int  # audio frame clock; prefill frames are not events
    token_id: int
    kind: str
    text: str  # empty for [P] and [W]


def event_for(vocab: Vocab, frame_index: int, token_id: int) -> TokenEvent:
    kind = vocab.kind_of(token_id)
    text = vocab.subword_text(token_id) if kind is TokenKind.SUBWORD else ""
    return TokenEvent(frame_index, token_id, kind.value, text)


def transcript_from_events(events: list[TokenEvent], vocab: Vocab) -> str:
    """Join subword deltas into words, one space per word boundary."""
    words: list[str] = []
    current: str | None = None
    for ev in events:
        if ev.kind == TokenKind.WORD_BOUNDARY.value:
            if current is not None:
                words.append(current)
            current = ""
        elif ev.kind == TokenKind.SUBWORD.value:
            current = (current or "") + ev.text
    if current is not None:
        words.append(current)
    return " ".join(w for w in words if w)


class SessionClosedError(RuntimeError):
    pass


class Session:
    """Single-owner streaming state; see Engine.create_session."""

    def __init__(self, engine: "Engine", session_id: str, tau: DelaySpec, left_pad_frames: int):
        if left_pad_frames < 0:
            raise ValueError("left_pad_frames must be >= 0")
        self.engine = engine
        self.id = session_id
        self.tau = tau
        self.left_pad_frames = left_pad_frames
        model = engine.model
        self.vocab: Vocab = model.vocab
        self.frontend = MelFrontend()
        self.enc_table = BlockTable(engine.pool, "encoder", session_id)
        self.dec_table = BlockTable(engine.pool, "decoder", session_id)
        self.enc_state = EncoderState(model.encoder, cache=self.enc_table)
        self.dec_state = DecoderState(model.decoder, tau, cache=self.dec_table)
        self.last_token = self.vocab.pad_id
        self.frames_processed = 0  # includes prefill and flush frames
        self.audio_frames = 0  # event clock, post-prefill
        self.tokens_emitted = 0
        self.events: list[TokenEvent] = []
        self.closed = False
        self._pending = np.zeros(0, dtype=np.float32)
        silence = np.zeros(SAMPLES_PER_FRAME, dtype=np.float32)
        for _ in range(left_pad_frames):
            self._process_frame(silence, forced_token=self.vocab.pad_id)

    def _process_frame(self, samples: np.ndarray, forced_token: int | None = None) -> TokenEvent | None:
        model = self.engine.model
        mel = self.frontend.feed(samples)
        assert mel.shape[0] == 8, "one 80 ms frame must yield 8 mel frames"
        embs = [encode_step(model.encoder, self.enc_state, mel[2 * i : 2 * i + 2]) for i in range(4)]
        audio_emb = adapt(model.adapter, torch.stack(embs))
        fused = stepwise_input(model.decoder, self.dec_state, audio_emb, self.last_token, self.vocab)
        logits = decode_position(model.decoder, self.dec_state, fused)
        token = forced_token if forced_token is not None else greedy_pick(logits)
        self.last_token = token
        self.frames_processed += 1
        if forced_token is not None:
            return None
        event = event_for(self.vocab, self.audio_frames, token)
        self.audio_frames += 1
        self.tokens_emitted += 1
        self.events.append(event)
        return event

    def append_audio(self, samples) -> list[TokenEvent]:
        """Buffer samples; emit one TokenEvent per completed 80 ms frame."""
        if self.closed:
            raise SessionClosedError(f"session {self.id} is closed")
        arr = np.asarray(samples)
        if arr.dtype == np.int16:
            arr = arr.astype(np.float32) / 32768.0
        arr = arr.astype(np.float32).reshape(-1)
        buf = np.concatenate([self._pending, arr])
        events = []
        off = 0
        while buf.size - off >= SAMPLES_PER_FRAME:
            ev = self._process_frame(buf[off : off + SAMPLES_PER_FRAME])
            assert ev is not None
            events.append(ev)
            off += SAMPLES_PER_FRAME
        self._pending = buf[off:].copy()
        return events

    def finish(self, flush_frames: int | None = None) -> tuple[list[TokenEvent], str]:
        """Flush with silence so pending words emit, then free all blocks.

        A trailing partial frame (< 1280 samples) is dropped: the frame clock
        only ever advances in whole frames.
        """
        if self.closed:
            raise SessionClosedError(f"session {self.id} already finished")
        if flush_frames is None:
            flush_frames = self.tau.tau_frames + DEFAULT_FLUSH_EXTRA_FRAMES
        silence = np.zeros(SAMPLES_PER_FRAME, dtype=np.float32)
        events = []
        for _ in range(flush_frames):
            ev = self._process_frame(silence)
            assert ev is not None
            events.append(ev)
        transcript = transcript_from_events(self.events, self.vocab)
        self.close()
        return events, transcript

    def close(self) -> None:
        if not self.closed:
            self.enc_table.free_all()
            self.dec_table.free_all()
            self.closed = True
            self.engine._forget(self.id)

    def stats(self) -> dict:
        return {
            "id": self.id,
            "tau_frames": self.tau.tau_frames,
            "left_pad_frames": self.left_pad_frames,
            "frames_processed": self.frames_processed,
            "tokens_emitted": self.tokens_emitted,
            "blocks": len(self.enc_table.block_ids) + len(self.dec_table.block_ids),
        }


class Engine:
    """Shared weights + shared KV pool serving any number of sessions."""

    def __init__(
        self,
        model: StreamingModel,
        num_blocks: int = 512,
        block_size_tokens: int = 16,
        poison_freed: bool = True,
    ):
        self.model = model
        self.model.eval()
        enc, dec, p = model.cfg.encoder, model.cfg.decoder, model.cfg.pooling
        kinds = {
            "encoder": KindSpec(enc.n_layers, enc.n_heads, enc.head_dim, p),
            "decoder": KindSpec(dec.n_layers, dec.n_kv_heads, dec.head_dim, 1),
        }
        self.pool = PagedKvPool(num_blocks, block_size_tokens, kinds, poison_freed)
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create_session(self, tau: DelaySpec, left_pad_frames: int = 0) -> Session:
        sid = uuid.uuid4().hex[:12]
        session = Session(self, sid, tau, left_pad_frames)
        with self._lock:
            self.sessions[sid] = session
        return session

    def _forget(self, sid: str) -> None:
        with self._lock:
            self.sessions.pop(sid, None)

    def stats(self) -> dict:
        with self._lock:
            active = len(self.sessions)
        return {
            "active_sessions": active,
            "pool": {"num_blocks": self.pool.num_blocks, "free_blocks": self.pool.free_blocks},
            "preset": self.model.cfg.preset,
        }


@torch.no_grad()
def offline_events(
    model: StreamingModel,
    samples,
    tau: DelaySpec,
    left_pad_frames: int = 0,
    flush_frames: int | None = None,
) -> tuple[list[TokenEvent], str]:
    """Single-shot batch reference pass: encode_batch over the padded stream,
    then a stepwise greedy decode.  Matches Session output bitwise."""
    vocab = model.vocab
    if flush_frames is None:
        flush_frames = tau.tau_frames + DEFAULT_FLUSH_EXTRA_FRAMES
    arr = np.asarray(samples)
    if arr.dtype == np.int16:
        arr = arr.astype(np.float32) / 32768.0
    arr = arr.astype(np.float32).reshape(-1)
    n_audio = arr.size // SAMPLES_PER_FRAME
    total_frames = left_pad_frames + n_audio + flush_frames
    stream = np.zeros(total_frames * SAMPLES_PER_FRAME, dtype=np.float32)
    start = left_pad_frames * SAMPLES_PER_FRAME
    stream[start : start + n_audio * SAMPLES_PER_FRAME] = arr[: n_audio * SAMPLES_PER_FRAME]
    mel = log_mel(stream)
    enc = encode_batch(model.encoder, mel)
    dec_state = DecoderState(model.decoder, tau)
    last = vocab.pad_id
    events: list[TokenEvent] = []
    for f in range(total_frames):
        audio_emb = adapt(model.adapter, enc[4 * f : 4 * f + 4])
        fused = stepwise_input(model.decoder, dec_state, audio_emb, last, vocab)
        logits = decode_position(model.decoder, dec_state, fused)
        if f < left_pad_frames:
            last = vocab.pad_id
            continue
        last = greedy_pick(logits)
        events.append(event_for(vocab, f - left_pad_frames, last))
    return events, transcript_from_events(events, vocab)


def chunk_schedule(n_samples: int, rng: np.random.Generator, max_chunk: int = 4000) -> list[int]:
    """Random chunk sizes summing to n_samples; used by equivalence tests."""
    sizes = []
    left = n_samples
    while left > 0:
        c = int(rng.integers(1, min(max_chunk, left) + 1))
        sizes.append(c)
        left -= c
    return sizes
