"""Desk-scale natively streaming speech-to-text.

Causal encoder -> temporal adapter -> delay-conditioned decoder emitting one
token per 80 ms frame, with paged KV serving, resumable sessions, a realtime
WebSocket gateway, and a training pipeline on a synthetic tone-word corpus.
"""

from .config import DelaySpec, ModelConfig, paper_config, tiny_config
from .model import StreamingModel, build_model, load_checkpoint, save_checkpoint
from .session import Engine, Session, offline_events
from .vocab import Vocab, build_toy_vocab

__version__ = "0.1.0"

__all__ = [
    "DelaySpec",
    "ModelConfig",
    "StreamingModel",
    "Engine",
    "Session",
    "Vocab",
    "build_model",
    "build_toy_vocab",
    "load_checkpoint",
    "save_checkpoint",
    "offline_events",
    "paper_config",
    "tiny_config",
    "__version__",
]
