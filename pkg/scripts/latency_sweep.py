#!/usr/bin/env python3
"""WER grid over (delay, left-padding) for a trained checkpoint.

Usage: python scripts/latency_sweep.py <checkpoint-dir> [n_utterances]
"""

import sys

from streamstt.cli import main

if __name__ == "__main__":
    if len(sys.argv) < 2:
        print(__doc__)
        sys.exit(2)
    n = sys.argv[2] if len(sys.argv) > 2 else "100"
    sys.exit(
        main(
            [
                "eval",
                "--checkpoint", sys.argv[1],
                "--taus", "240,480,960,2400",
                "--pads", "0,16,32",
                "--utterances", n,
                "--out", "eval_report.jsonl",
            ]
        )
    )
