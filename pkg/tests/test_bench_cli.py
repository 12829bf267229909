"""Latency harness contracts, the comparison table, and the CLI surface."""

import csv
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from frnet.autodiff import Tensor
from frnet.bench import BenchReport, bench_inference, report_tables
from frnet.blocks import Module, param_count
from frnet.cli import cli
from frnet.data import load_samples
from frnet.errors import ConfigError, ContractError
from frnet.models import ModelConfig, build_model

TINY = ["--channels", "4", "--blocks", "2"]


def _tiny_model(arch="frnet_base"):
    return build_model(ModelConfig(arch=arch, channels=4, num_blocks=2), seed=0)


def _report(**overrides):
    fields = dict(
        arch="frnet",
        input_shape=(1, 1, 64, 64),
        warmup_runs=3,
        timed_runs=10,
        mean_ms=1.5,
        std_ms=0.1,
        p50_ms=1.4,
        p95_ms=1.9,
        thread_mode="single",
    )
    fields.update(overrides)
    return BenchReport(**fields)


class TestBenchReport:
    def test_valid_report_passes(self):
        report = _report()
        assert report.p50_ms <= report.p95_ms

    def test_too_few_runs_rejected(self):
        with pytest.raises(ContractError):
            _report(timed_runs=9)

    def test_too_little_warmup_rejected(self):
        with pytest.raises(ContractError):
            _report(warmup_runs=2)

    def test_percentile_order_enforced(self):
        with pytest.raises(ContractError):
            _report(p50_ms=2.0, p95_ms=1.0)

    def test_nonpositive_times_rejected(self):
        with pytest.raises(ContractError):
            _report(mean_ms=0.0)
        with pytest.raises(ContractError):
            _report(std_ms=-0.1)

    def test_bad_thread_mode_rejected(self):
        with pytest.raises(ConfigError):
            _report(thread_mode="gpu")

    def test_line_format(self):
        line = _report().as_line()
        assert "arch=frnet" in line and "size=64x64" in line
        assert "mean_ms=1.500" in line and "threads=single" in line


class TestBenchInference:
    def test_report_statistics(self):
        report = bench_inference(_tiny_model(), (1, 1, 24, 24), warmup=3, runs=10)
        assert report.timed_runs == 10 and report.warmup_runs == 3
        assert report.arch == "frnet_base"
        assert report.input_shape == (1, 1, 24, 24)
        assert 0.0 < report.p50_ms <= report.p95_ms
        assert report.thread_mode == "single"

    def test_precondition_validation(self):
        model = _tiny_model()
        with pytest.raises(ConfigError):
            bench_inference(model, (1, 1, 24, 24), warmup=2, runs=10)
        with pytest.raises(ConfigError):
            bench_inference(model, (1, 1, 24, 24), warmup=3, runs=9)
        with pytest.raises(ConfigError):
            bench_inference(model, (24, 24), warmup=3, runs=10)
        with pytest.raises(ConfigError):
            bench_inference(model, (1, 1, 24, 24), thread_mode="both")

    def test_indivisible_size_is_config_error(self):
        model = build_model(
            ModelConfig(arch="unet_baseline", unet_base_channels=4, unet_depth=2), seed=0
        )
        with pytest.raises(ConfigError):
            bench_inference(model, (1, 1, 17, 23), warmup=3, runs=10)

    def test_construction_cost_excluded(self):
        class SlowBuilt(Module):
            def __init__(self):
                super().__init__()
                time.sleep(0.3)

            def forward(self, x):
                return x * 1.0

        report = bench_inference(SlowBuilt(), (1, 1, 16, 16), warmup=3, runs=10)
        assert report.mean_ms < 100.0

    def test_model_restored_to_train_mode(self):
        model = _tiny_model()
        model.train()
        bench_inference(model, (1, 1, 16, 16), warmup=3, runs=10)
        assert model.training
        model.eval()
        bench_inference(model, (1, 1, 16, 16), warmup=3, runs=10)
        assert not model.training


class TestReportTables:
    def _write(self, directory, name, **record):
        with open(directory / name, "w", encoding="utf-8") as fh:
            json.dump(record, fh)

    def test_multi_seed_formatting(self, tmp_path):
        for seed, dice, acc in ((0, 0.92, 0.97), (1, 0.94, 0.99)):
            self._write(
                tmp_path, f"frnet_seed{seed}.json",
                arch="frnet", seed=seed, val_dice=dice, val_acc=acc, params=121377,
            )
        table = report_tables(tmp_path, archs=("frnet",))
        row = table.splitlines()[2]
        assert "| frnet |" in row
        assert "93.00±1.00" in row  # mean/std over the two seeds, in percent
        assert "98.00±1.00" in row
        assert "121,377" in row

    def test_single_seed_omits_std(self, tmp_path):
        self._write(
            tmp_path, "frnet_base_seed0.json",
            arch="frnet_base", seed=0, val_dice=0.9155, val_acc=0.981, params=112161,
        )
        table = report_tables(tmp_path, archs=("frnet_base",))
        row = table.splitlines()[2]
        assert "91.55" in row and "±" not in row
        assert "98.10" in row

    def test_missing_arch_row_is_dashed(self, tmp_path):
        self._write(tmp_path, "a.json", arch="frnet", seed=0, val_dice=0.9, val_acc=0.9)
        table = report_tables(tmp_path, archs=("frnet", "unet_baseline"))
        rows = table.splitlines()
        assert rows[3] == "| unet_baseline | — | — | — | — |"
        # dice present but params/time absent in the frnet row
        assert rows[2].count("—") == 2

    def test_bench_only_rows_show_time(self, tmp_path):
        self._write(
            tmp_path, "bench_frnet.json",
            arch="frnet", params=121377, mean_ms=123.456,
        )
        row = report_tables(tmp_path, archs=("frnet",)).splitlines()[2]
        assert "123.5ms" in row and "121,377" in row

    def test_param_cell_matches_params_command(self, tmp_path, capsys):
        assert cli(["params", "--arch", "frnet_base"] + TINY) == 0
        printed = int(capsys.readouterr().out.strip())
        self._write(
            tmp_path, "s.json", arch="frnet_base", seed=0, params=printed,
        )
        row = report_tables(tmp_path, archs=("frnet_base",)).splitlines()[2]
        assert f"{printed:,}" in row


class TestCliExitCodes:
    def test_success_is_zero(self, capsys):
        assert cli(["params", "--arch", "frnet_base"] + TINY) == 0
        assert capsys.readouterr().out.strip().isdigit()

    def test_usage_errors_are_two(self, capsys):
        assert cli(["frobnicate"]) == 2
        assert cli(["params", "--no-such-flag"]) == 2
        assert cli(["bench", "--size", "64"]) == 2  # malformed HxW
        assert cli([]) == 2

    def test_runtime_errors_are_one_with_prefix(self, capsys):
        assert cli(["bench", "--runs", "5"] + TINY) == 1
        assert capsys.readouterr().err.startswith("error:")
        assert cli(["train"] + TINY) == 1  # neither --data nor --synthetic
        assert capsys.readouterr().err.startswith("error:")
        assert cli(["eval", "--synthetic"]) == 1  # no --ckpt
        assert capsys.readouterr().err.startswith("error:")
        assert cli(["eval", "--ckpt", "/nonexistent.bin", "--synthetic"]) == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_binary_entrypoint_exit_codes(self):
        # Exit-code discipline holds when invoking the installed binary too.
        result = subprocess.run(
            ["frnet", "params", "--arch", "frnet_base", "--channels", "4", "--blocks", "2"],
            capture_output=True, text=True,
        )
        assert result.returncode == 0 and result.stdout.strip().isdigit()
        result = subprocess.run(["frnet", "nope"], capture_output=True, text=True)
        assert result.returncode == 2
        result = subprocess.run(
            ["frnet", "bench", "--runs", "3", "--channels", "4", "--blocks", "2"],
            capture_output=True, text=True,
        )
        assert result.returncode == 1 and result.stderr.startswith("error:")


class TestCliParams:
    def test_matches_param_count_for_every_arch(self, capsys):
        for arch in ("frnet_base", "frnet", "unet_baseline"):
            assert cli(["params", "--arch", arch]) == 0
            printed = int(capsys.readouterr().out.strip())
            model = build_model(ModelConfig(arch=arch), seed=0)
            assert printed == param_count(model)


class TestCliTrainEval:
    def _train_args(self, out, epochs=2, extra=()):
        return [
            "train", "--synthetic", "--arch", "frnet_base", *TINY,
            "--count", "4", "--size", "24x24", "--epochs", str(epochs),
            "--lr", "0.003", "--out", str(out), *extra,
        ]

    def test_history_row_per_epoch(self, tmp_path, capsys):
        assert cli(self._train_args(tmp_path / "runs", epochs=5)) == 0
        run_dir = tmp_path / "runs" / "frnet_base_seed0"
        with open(run_dir / "history.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "train_loss", "val_dice", "val_acc", "wall_time_s"]
        assert len(rows) == 6  # header + 5 epochs
        assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4", "5"]
        assert (run_dir / "checkpoint.bin").exists()
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["arch"] == "frnet_base" and summary["epochs"] == 5

    def test_rerun_is_deterministic_up_to_wall_time(self, tmp_path, capsys):
        assert cli(self._train_args(tmp_path / "a", extra=["--seed", "7"])) == 0
        assert cli(self._train_args(tmp_path / "b", extra=["--seed", "7"])) == 0

        def stable_rows(root):
            with open(root / "frnet_base_seed7" / "history.csv", newline="") as fh:
                return [row[:4] for row in csv.reader(fh)]

        assert stable_rows(tmp_path / "a") == stable_rows(tmp_path / "b")

    def test_multi_seed_runs(self, tmp_path, capsys):
        assert cli(self._train_args(tmp_path / "runs", extra=["--seeds", "2"])) == 0
        assert (tmp_path / "runs" / "frnet_base_seed0" / "summary.json").exists()
        assert (tmp_path / "runs" / "frnet_base_seed1" / "summary.json").exists()
        out = capsys.readouterr().out
        assert "seed 0:" in out and "seed 1:" in out

    def test_eval_reports_checkpoint_quality(self, tmp_path, capsys):
        assert cli(self._train_args(tmp_path / "runs")) == 0
        summary = json.loads(
            (tmp_path / "runs" / "frnet_base_seed0" / "summary.json").read_text()
        )
        capsys.readouterr()
        code = cli([
            "eval", "--ckpt", str(tmp_path / "runs" / "frnet_base_seed0" / "checkpoint.bin"),
            "--synthetic", "--count", "4", "--size", "24x24",
        ])
        assert code == 0
        line = capsys.readouterr().out.strip()
        assert line.startswith("dice=")
        dice = float(line.split()[0].split("=")[1])
        assert dice == pytest.approx(summary["val_dice"], abs=1e-4)


class TestCliConfigFile:
    def test_config_supplies_defaults_and_cli_overrides(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# tiny run\nsynthetic=true\narch=frnet_base\nchannels=4\nblocks=2\n"
            "count=4\nsize=24x24\nepochs=3\nlr=0.003\nout=" + str(tmp_path / "c1") + "\n",
            encoding="utf-8",
        )
        assert cli(["train", "--config", str(cfg)]) == 0
        with open(tmp_path / "c1" / "frnet_base_seed0" / "history.csv", newline="") as fh:
            assert len(list(csv.reader(fh))) == 4  # header + 3 epochs from config

        assert cli(["train", "--config", str(cfg), "--epochs", "2",
                    "--out", str(tmp_path / "c2")]) == 0
        with open(tmp_path / "c2" / "frnet_base_seed0" / "history.csv", newline="") as fh:
            assert len(list(csv.reader(fh))) == 3  # CLI --epochs 2 wins

    def test_unknown_config_key_fails(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("synthetic=true\nwidgets=9\n", encoding="utf-8")
        assert cli(["train", "--config", str(cfg)]) == 1
        assert "widgets" in capsys.readouterr().err

    def test_malformed_config_line_fails(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("epochs 3\n", encoding="utf-8")
        assert cli(["train", "--config", str(cfg)]) == 1
        assert capsys.readouterr().err.startswith("error:")


class TestCliSynth:
    def test_writes_loadable_pairs(self, tmp_path, capsys):
        out = tmp_path / "ds"
        assert cli(["synth", "--out", str(out), "--count", "3", "--seed", "5",
                    "--size", "24x32"]) == 0
        samples = load_samples(out)
        assert [s.id for s in samples] == ["synth-5", "synth-6", "synth-7"]
        for s in samples:
            assert s.image.shape == (1, 24, 32)
            assert np.isin(s.mask, (0, 1)).all() and s.mask.sum() > 0

    def test_output_bytes_deterministic(self, tmp_path, capsys):
        for name in ("a", "b"):
            assert cli(["synth", "--out", str(tmp_path / name), "--count", "1",
                        "--seed", "3", "--size", "24x24"]) == 0
        a = (tmp_path / "a" / "images" / "synth-3.png").read_bytes()
        b = (tmp_path / "b" / "images" / "synth-3.png").read_bytes()
        assert a == b


class TestCliBench:
    def test_bench_line_and_sanity_ratio(self, capsys):
        args = ["bench", "--arch", "frnet_base", *TINY, "--size", "24x24",
                "--runs", "10", "--warmup", "3"]
        assert cli(args) == 0
        first = capsys.readouterr().out.strip()
        assert cli(args) == 0
        second = capsys.readouterr().out.strip()

        def mean_of(line):
            return float(dict(kv.split("=") for kv in line.split())["mean_ms"])

        m1, m2 = mean_of(first), mean_of(second)
        assert "p50_ms=" in first and "threads=single" in first
        assert max(m1, m2) / min(m1, m2) < 3.0
