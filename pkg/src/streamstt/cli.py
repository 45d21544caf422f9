"""Command-line entry points: train, transcribe, serve, eval, targets.

Exit codes: 0 success, 2 usage error (argparse), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import MS_PER_FRAME, DelaySpec, PRESETS
from .corpus import split_corpus, synth_corpus
from .evaluate import eval_sweep
from .metrics import wer
from .model import build_model, load_checkpoint
from .session import Engine
from .targets import TimedWord, build_targets
from .train import TrainConfig, train
from .vocab import build_toy_vocab
from .wav import read_wav


def _cmd_train(args: argparse.Namespace) -> int:
    model = build_model(
        preset=args.preset,
        conditioning=args.conditioning,
        n_words=args.vocab_words,
        seed=args.seed,
    )
    corpus = synth_corpus(model.vocab, args.corpus_size, seed=args.corpus_seed)
    train_set, heldout = split_corpus(corpus)
    cfg = TrainConfig(
        total_steps=args.steps,
        batch_size=args.batch_size,
        zloss_coeff=args.zloss_coeff,
        grouping=not args.no_grouping,
        seed=args.seed,
        use_producer=not args.no_producer,
    )
    every = max(1, args.steps // 50)

    def hook(rec: dict) -> None:
        if rec["step"] % every == 0 or rec["step"] == args.steps - 1:
            print(
                f"step {rec['step']:>6} phase {rec['phase']} ce {rec['ce']:.4f} "
                f"zloss {rec['zloss']:.4f} |logZ| {rec['logZ_abs_mean']:.3f}",
                flush=True,
            )

    train(model, train_set, cfg, out_dir=args.out, log_hook=hook)
    report = eval_sweep(model, heldout[: args.eval_utterances], [480], [0])
    cell = report.cells[0]
    print(f"held-out WER @480ms: {100 * cell.corpus_wer:.2f}% over {cell.n_utterances} utterances")
    print(f"checkpoint: {Path(args.out) / 'checkpoint'}")
    return 0


def _cmd_transcribe(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    samples = read_wav(args.wav)
    engine = Engine(model, num_blocks=args.pool_blocks)
    session = engine.create_session(DelaySpec.from_ms(args.delay_ms), args.left_pad_frames)
    events = session.append_audio(samples)
    flush_events, transcript = session.finish()
    events = events + flush_events
    if args.json:
        for ev in events:
            print(json.dumps(ev.__dict__))
        print(json.dumps({"transcript": transcript}))
    else:
        for ev in events:
            if ev.text or ev.kind == "word_boundary":
                print(f"{ev.frame_index * MS_PER_FRAME:>7} ms  {ev.kind:<13} {ev.text}")
        print(transcript)
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    from .gateway import GatewayConfig, serve

    serve(
        GatewayConfig(
            checkpoint=args.checkpoint,
            host=args.host,
            port=args.port,
            max_sessions=args.max_sessions,
            pool_blocks=args.pool_blocks,
            auth_env=args.auth_env,
        )
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    corpus = synth_corpus(model.vocab, args.corpus_size, seed=args.corpus_seed)
    _, heldout = split_corpus(corpus)
    taus = [int(t) for t in args.taus.split(",")]
    pads = [int(p) for p in args.pads.split(",")]
    report = eval_sweep(model, heldout[: args.utterances], taus, pads)
    if args.out:
        Path(args.out).write_text(report.to_jsonl() + "\n")
    print(report.render_table())
    return 0


def _parse_timed_words(spec: str) -> list[TimedWord]:
    words = []
    for part in spec.split(","):
        text, _, end = part.partition(":")
        words.append(TimedWord(text.strip(), int(end)))
    return words


def _cmd_targets(args: argparse.Namespace) -> int:
    vocab = build_toy_vocab(args.vocab_words)
    words = _parse_timed_words(args.words)
    tau = DelaySpec.from_ms(args.tau_ms)
    n_frames = args.n_frames
    if n_frames is None:
        total = len(words) * 4 + tau.tau_frames + (words[-1].end_ms if words else 0) // MS_PER_FRAME
        n_frames = total + 2
    stream = build_targets(words, tau, n_frames, vocab, grouping=not args.no_grouping)
    print(stream.serialize())
    if args.readable:
        names = {vocab.pad_id: "[P]", vocab.word_boundary_id: "[W]"}
        print(" ".join(names.get(t, vocab.subword_text(t)) for t in stream.tokens))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamstt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the tiny preset on the synthetic corpus")
    p.add_argument("--out", required=True, help="output directory (metrics + checkpoint)")
    p.add_argument("--preset", default="tiny", choices=sorted(PRESETS))
    p.add_argument("--conditioning", default="ada_rmsnorm")
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--corpus-size", type=int, default=2200)
    p.add_argument("--corpus-seed", type=int, default=12345)
    p.add_argument("--vocab-words", type=int, default=32)
    p.add_argument("--zloss-coeff", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-utterances", type=int, default=100)
    p.add_argument("--no-grouping", action="store_true")
    p.add_argument("--no-producer", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("transcribe", help="transcribe a 16 kHz mono PCM16 WAV file")
    p.add_argument("wav")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--delay-ms", type=int, default=480)
    p.add_argument("--left-pad-frames", type=int, default=0)
    p.add_argument("--pool-blocks", type=int, default=512)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_transcribe)

    p = sub.add_parser("serve", help="run the websocket realtime gateway")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--max-sessions", type=int, default=8)
    p.add_argument("--pool-blocks", type=int, default=512)
    p.add_argument("--auth-env", default="STREAMSTT_AUTH_TOKEN")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("eval", help="WER sweep over delays and paddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--taus", default="240,480,960,2400", help="delay grid in ms")
    p.add_argument("--pads", default="0,16,32", help="left padding grid in frames")
    p.add_argument("--corpus-size", type=int, default=2200)
    p.add_argument("--corpus-seed", type=int, default=12345)
    p.add_argument("--utterances", type=int, default=100)
    p.add_argument("--out", help="write the JSONL report here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("targets", help="print the target token stream for a labeled utterance")
    p.add_argument("--words", required=True, help='e.g. "ba:300,daga:900" (word:end_ms)')
    p.add_argument("--tau-ms", type=int, default=480)
    p.add_argument("--n-frames", type=int, default=None)
    p.add_argument("--vocab-words", type=int, default=32)
    p.add_argument("--no-grouping", action="store_true")
    p.add_argument("--readable", action="store_true")
    p.set_defaults(func=_cmd_targets)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # runtime failure contract
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
