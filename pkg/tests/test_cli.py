import json

import numpy as np
import pytest

from streamstt.cli import main
from streamstt.corpus import synth_corpus
from streamstt.model import build_model, save_checkpoint
from streamstt.vocab import build_toy_vocab
from streamstt.wav import read_wav, write_wav


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "model"
    save_checkpoint(path, build_model("tiny", seed=17))
    return str(path)


@pytest.fixture(scope="module")
def wav_file(tmp_path_factory):
    vocab = build_toy_vocab(32)
    sample = synth_corpus(vocab, 1, seed=3)[0]
    path = tmp_path_factory.mktemp("wav") / "utt.wav"
    write_wav(path, sample.samples)
    return str(path)


class TestWavIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        x = (rng.standard_normal(4000) * 0.2).astype(np.float32)
        write_wav(tmp_path / "x.wav", x)
        y = read_wav(tmp_path / "x.wav")
        assert y.shape == x.shape
        assert np.abs(x - y).max() < 1e-3  # 16-bit quantization

    def test_rejects_wrong_rate(self, tmp_path):
        import wave

        with wave.open(str(tmp_path / "bad.wav"), "wb") as f:
            f.setnchannels(1)
            f.setsampwidth(2)
            f.setframerate(8000)
            f.writeframes(b"\x00\x00" * 100)
        with pytest.raises(ValueError):
            read_wav(tmp_path / "bad.wav")


class TestTargetsCommand:
    def test_prints_token_ids(self, capsys):
        code = main(["targets", "--words", "ba:200", "--tau-ms", "80", "--n-frames", "6"])
        assert code == 0
        line = capsys.readouterr().out.strip().splitlines()[0]
        ids = [int(t) for t in line.split()]
        assert len(ids) == 6

    def test_readable_output(self, capsys):
        main(["targets", "--words", "ba:200,da:200", "--tau-ms", "80", "--n-frames", "7", "--readable"])
        out = capsys.readouterr().out
        assert "[W]" in out and "[P]" in out and "ba" in out

    def test_usage_error_exit_code_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["targets"])  # missing --words
        assert exc.value.code == 2


class TestTranscribeCommand:
    def test_deterministic_across_runs(self, checkpoint, wav_file, capsys):
        args = ["transcribe", wav_file, "--checkpoint", checkpoint, "--delay-ms", "240", "--json"]
        assert main(args) == 0
        out1 = capsys.readouterr().out
        assert main(args) == 0
        out2 = capsys.readouterr().out
        assert out1 == out2
        records = [json.loads(l) for l in out1.strip().splitlines()]
        assert "transcript" in records[-1]
        frame_indices = [r["frame_index"] for r in records[:-1]]
        assert frame_indices == sorted(frame_indices)

    def test_bad_file_exit_code_3(self, checkpoint, capsys):
        assert main(["transcribe", "/nonexistent.wav", "--checkpoint", checkpoint]) == 3

    def test_bad_delay_exit_code_3(self, checkpoint, wav_file):
        assert main(["transcribe", wav_file, "--checkpoint", checkpoint, "--delay-ms", "100"]) == 3


class TestEvalCommand:
    def test_grid_report(self, checkpoint, tmp_path, capsys):
        out = tmp_path / "report.jsonl"
        code = main(
            [
                "eval",
                "--checkpoint", checkpoint,
                "--taus", "240,480",
                "--pads", "0,16",
                "--corpus-size", "12",
                "--utterances", "2",
                "--out", str(out),
            ]
        )
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 4  # 2 taus x 2 pads
        table = capsys.readouterr().out
        assert "240 ms" in table and "480 ms" in table


class TestTrainCommand:
    def test_short_run_writes_checkpoint(self, tmp_path, capsys):
        code = main(
            [
                "train",
                "--out", str(tmp_path),
                "--steps", "2",
                "--corpus-size", "8",
                "--vocab-words", "8",
                "--eval-utterances", "1",
                "--no-producer",
            ]
        )
        assert code == 0
        assert (tmp_path / "checkpoint" / "weights.bin").exists()
        assert (tmp_path / "metrics.jsonl").exists()
        assert "held-out WER" in capsys.readouterr().out
