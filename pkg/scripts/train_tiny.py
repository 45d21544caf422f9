#!/usr/bin/env python3
"""Train the tiny preset on the synthetic corpus and report held-out WER.

Equivalent to `streamstt train` with the defaults used by the acceptance
suite; edit the flags below for quick experiments.
"""

import sys

from streamstt.cli import main

if __name__ == "__main__":
    sys.exit(
        main(
            [
                "train",
                "--out", sys.argv[1] if len(sys.argv) > 1 else "runs/tiny",
                "--steps", "3500",
                "--corpus-size", "2200",
                "--seed", "0",
            ]
        )
    )
