#!/usr/bin/env python3
"""Minimal realtime client: stream a WAV file to a running gateway in 80 ms
commits and print token deltas as they arrive.

Usage: python scripts/ws_client_demo.py <file.wav> [ws://127.0.0.1:8000/v1/realtime]
"""

import base64
import json
import sys

import numpy as np
from websockets.sync.client import connect

from streamstt.wav import read_wav


def main() -> int:
    if len(sys.argv) < 2:
        print(__doc__)
        return 2
    url = sys.argv[2] if len(sys.argv) > 2 else "ws://127.0.0.1:8000/v1/realtime"
    samples = read_wav(sys.argv[1])
    ints = np.clip(samples * 32768.0, -32768, 32767).astype("<i2")
    with connect(url) as ws:
        ws.send(json.dumps({"type": "session.create", "delay_ms": 480, "left_pad_frames": 16}))
        print(ws.recv())
        for off in range(0, len(ints), 1280):
            ws.send(
                json.dumps(
                    {
                        "type": "audio.append",
                        "audio": base64.b64encode(ints[off : off + 1280].tobytes()).decode(),
                    }
                )
            )
            ws.send(json.dumps({"type": "audio.commit"}))
            if off + 1280 <= len(ints):
                msg = json.loads(ws.recv())
                if msg.get("text"):
                    print(f"{msg['frame_index'] * 80:>7} ms  {msg['text']}")
        ws.send(json.dumps({"type": "session.finish"}))
        while True:
            msg = json.loads(ws.recv())
            if msg["type"] == "transcript.final":
                print("final:", msg["text"])
                return 0
            if msg.get("text"):
                print(f"{msg['frame_index'] * 80:>7} ms  {msg['text']}")


if __name__ == "__main__":
    sys.exit(main())
