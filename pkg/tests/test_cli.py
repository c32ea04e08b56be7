"""Command-line entry point: outputs and exit codes."""

from pathlib import Path

import polars as pl
import pytest

from src.main import EXIT_CONFIG, build_parser, main


def _small_config(tmp_path: Path, extra: str = "") -> Path:
    path = tmp_path / "bench.yaml"
    text = "name: cli\nT: 10\nn_max: 8\nsamples: 6\nreference_samples: 20\n" + extra
    path.write_text(text, encoding="utf-8")
    return path


def test_edit_writes_trajectory(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code = main(
        ["edit", "--config", str(_small_config(tmp_path)), "--x-src=-3,1", "--out", str(tmp_path)]
    )
    assert code == 0
    assert "anchorflow" in capsys.readouterr().out
    trajectory = pl.read_csv(tmp_path / "trajectory.csv")
    assert trajectory["step_idx"].to_list() == list(range(8, 0, -1))
    assert {"x_0", "x_1", "update_0", "direction_1"} <= set(trajectory.columns)


def test_sample_writes_csv(tmp_path: Path) -> None:
    config = str(_small_config(tmp_path))
    out = str(tmp_path)
    code = main(["sample", "--config", config, "-n", "25", "--which", "tar", "--out", out])
    assert code == 0
    samples = pl.read_csv(tmp_path / "samples_tar.csv")
    assert samples.shape == (25, 2)
    assert samples["x_0"].mean() > 0.0


def test_bench_and_runs(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    runs = tmp_path / "runs"
    assert main(["bench", "--config", str(_small_config(tmp_path)), "--out", str(runs)]) == 0
    run_dirs = list(runs.iterdir())
    assert len(run_dirs) == 1
    assert (run_dirs[0] / "results.csv").exists()

    assert main(["plot", str(run_dirs[0]), "--out", str(tmp_path / "replot")]) == 0
    assert len(list((tmp_path / "replot").glob("*.svg"))) == 4

    capsys.readouterr()
    assert main(["runs", "--out", str(runs)]) == 0
    assert "cli" in capsys.readouterr().out


def test_config_error_exit_code(tmp_path: Path) -> None:
    assert main(["bench", "--config", str(_small_config(tmp_path, "n_min: 9\n"))]) == EXIT_CONFIG
    assert main(["bench", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_missing_checkpoint_is_config_error(tmp_path: Path) -> None:
    config = _small_config(tmp_path, f"field: {tmp_path / 'missing.ckpt'}\n")
    assert main(["edit", "--config", str(config), "--x-src=0,0"]) == EXIT_CONFIG


def test_train_then_edit_with_checkpoint(tmp_path: Path) -> None:
    ckpt = tmp_path / "field.ckpt"
    config = _small_config(tmp_path)
    args = ["train", "--config", str(config), "--steps", "3", "--batch-size", "16"]
    assert main([*args, "--hidden-width", "8", "--out", str(ckpt)]) == 0
    assert ckpt.exists()
    learned = _small_config(tmp_path, f"field: {ckpt}\n")
    assert main(["edit", "--config", str(learned), "--x-src=-3,1"]) == 0


def test_degenerate_covariance_is_config_error(tmp_path: Path) -> None:
    text = (
        "source.weights: [1.0]\nsource.mean.0: [0.0, 0.0]\nsource.cov.0: 0.0\n"
        "target.weights: [1.0]\ntarget.mean.0: [1.0, 0.0]\n"
    )
    config = _small_config(tmp_path, text)
    assert main(["edit", "--config", str(config), "--method", "direct"]) == EXIT_CONFIG


def test_seed_must_fit_u64() -> None:
    with pytest.raises(SystemExit):
        build_parser().parse_args(["bench", "--seed", str(2**64)])
