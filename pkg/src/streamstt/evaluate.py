"""Evaluation sweeps over (delay, left-padding) grids."""

from __future__ import annotations

from .config import DelaySpec
from .corpus import SynthSample
from .metrics import EvalReport
from .model import StreamingModel
from .session import offline_events


def eval_sweep(
    model: StreamingModel,
    samples: list[SynthSample],
    taus_ms: list[int],
    pads: list[int],
) -> EvalReport:
    """WER/CER grid over delays and paddings on a labeled corpus split.

    Uses the offline reference pass, which is bitwise identical to running a
    streaming session over the same audio.
    """
    report = EvalReport()
    for tau_ms in taus_ms:
        tau = DelaySpec.from_ms(tau_ms)
        for pad in pads:
            cell = report.cell(tau_ms, pad)
            for sample in samples:
                _, hyp = offline_events(model, sample.samples, tau, left_pad_frames=pad)
                cell.add(sample.text, hyp)
    return report
