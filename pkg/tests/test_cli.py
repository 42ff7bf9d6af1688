import subprocess
import sys
from pathlib import Path

import pytest
from click.testing import CliRunner

from fleetchat.cli import main
from fleetchat.config import data_path
from fleetchat.intents import IntentModel

FIXTURES = Path(__file__).parent / "fixtures"


def run_cli(args, **kwargs):
    return CliRunner().invoke(main, args, **kwargs)


class TestRepl:
    def test_golden_transcript(self):
        """Scripted stdin replays to byte-identical output."""
        script = (FIXTURES / "repl_script.txt").read_bytes()
        golden = (FIXTURES / "repl_golden.txt").read_bytes()
        proc = subprocess.run(
            [sys.executable, "-m", "fleetchat.cli", "repl"],
            input=script,
            capture_output=True,
            timeout=120,
        )
        assert proc.returncode == 0
        assert proc.stdout == golden

    def test_immediate_eof_exits_cleanly(self):
        proc = subprocess.run(
            [sys.executable, "-m", "fleetchat.cli", "repl"],
            input=b"",
            capture_output=True,
            timeout=120,
        )
        assert proc.returncode == 0

    def test_bad_corpus_path_fails_at_startup(self, tmp_path):
        result = run_cli(["repl", "--corpus", str(tmp_path / "missing.tsv")])
        assert result.exit_code != 0


class TestTrainEval:
    def test_train_writes_model(self, tmp_path):
        out = tmp_path / "model.json"
        result = run_cli(
            ["train", "--corpus", str(data_path("corpus.tsv")), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        model = IntentModel.load(out)
        assert model.classify("search for a process").chosen.value == "search_process"

    def test_eval_passes_gate(self):
        result = run_cli(
            [
                "eval",
                "--corpus",
                str(data_path("corpus.tsv")),
                "--min-accuracy",
                "0.9",
            ]
        )
        assert result.exit_code == 0, result.output
        assert "macro accuracy" in result.output
        assert "confusion matrix" in result.output

    def test_eval_fails_below_gate(self):
        result = run_cli(
            [
                "eval",
                "--corpus",
                str(data_path("corpus.tsv")),
                "--min-accuracy",
                "1.01",
            ]
        )
        assert result.exit_code != 0
        assert "below gate" in result.output

    def test_malformed_corpus_names_line(self, tmp_path):
        bad = tmp_path / "bad.tsv"
        lines = ["search_file\tfind {FILE_NAME}"] * 16 + ["oops no tab"]
        bad.write_text("\n".join(lines) + "\n")
        result = run_cli(["eval", "--corpus", str(bad)])
        assert result.exit_code != 0
        assert "line 17" in result.output

    def test_unknown_flag_rejected(self):
        result = run_cli(["eval", "--nonsense", "x"])
        assert result.exit_code != 0


class TestGenFleet:
    def test_same_seed_identical_files(self, tmp_path):
        for name in ("a", "b"):
            result = run_cli(
                [
                    "gen-fleet",
                    "--seed",
                    "42",
                    "--fleet-dir",
                    str(tmp_path / name),
                    "--endpoints",
                    "4",
                    "--records",
                    "50",
                ]
            )
            assert result.exit_code == 0, result.output
        a_files = sorted(p.name for p in (tmp_path / "a").iterdir())
        b_files = sorted(p.name for p in (tmp_path / "b").iterdir())
        assert a_files == b_files
        for name in a_files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_generated_fleet_loads_in_repl(self, tmp_path):
        fleet_dir = tmp_path / "fleet"
        result = run_cli(
            ["gen-fleet", "--fleet-dir", str(fleet_dir), "--endpoints", "3", "--records", "30"]
        )
        assert result.exit_code == 0
        proc = subprocess.run(
            [sys.executable, "-m", "fleetchat.cli", "repl", "--fleet-dir", str(fleet_dir)],
            input=b"run a persistence hunt\n",
            capture_output=True,
            timeout=120,
        )
        assert proc.returncode == 0
        assert b"3 endpoints loaded" in proc.stdout
        assert b"dispatch_ack" in proc.stdout
