"""Tests for the experiment-runner CLI: config handling, grid execution,
output files, and the summarize table."""

import csv

import numpy as np
import pytest

from helpers import write_idx_images, write_idx_labels
from maer.cli import (
    ExperimentGrid,
    _build_parser,
    _grid_from_args,
    _int_list,
    _parse_config_file,
    main,
    run_grid,
    summarize,
)
from maer.validation import ConfigurationError


def tiny_grid(out, **kw):
    base = dict(
        dataset="synthetic", tasks=2, train_per_task=24, test_per_task=12,
        methods=["er_reservoir"], mem_sizes=[8], seeds=[0], epochs=1,
        lr=0.05, batch_size=8, out=str(out),
    )
    base.update(kw)
    return ExperimentGrid(**base)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def strip_wall_time(rows):
    return [row[:-1] for row in rows]


def make_mnist_dir(tmp_path, n_train=24, n_test=12, side=6, seed=0):
    rng = np.random.default_rng(seed)
    d = tmp_path / "mnist"
    d.mkdir()
    write_idx_images(d / "train-images-idx3-ubyte", rng.integers(0, 256, (n_train, side, side)))
    write_idx_labels(d / "train-labels-idx1-ubyte", rng.integers(0, 10, n_train))
    write_idx_images(d / "t10k-images-idx3-ubyte", rng.integers(0, 256, (n_test, side, side)))
    write_idx_labels(d / "t10k-labels-idx1-ubyte", rng.integers(0, 10, n_test))
    return d


# ---------------------------------------------------------------------------
# Config file parsing


def test_parse_config_handles_comments_and_dashes(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# experiment setup\n"
        "dataset = synthetic\n"
        "\n"
        "mem-size = 50,100  # two buffer sizes\n"
        "lr=0.02\n"
    )
    values = _parse_config_file(cfg)
    assert values == {"dataset": "synthetic", "mem_size": "50,100", "lr": "0.02"}


def test_parse_config_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("momentum = 0.9\n")
    with pytest.raises(ConfigurationError, match="unknown key 'momentum'"):
        _parse_config_file(cfg)


def test_parse_config_rejects_bad_line(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("just some words\n")
    with pytest.raises(ConfigurationError, match="key = value"):
        _parse_config_file(cfg)


def test_parse_config_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="config file"):
        _parse_config_file(tmp_path / "nope.cfg")


def test_flags_override_config_values(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("dataset = synthetic\nepochs = 7\nseeds = 3,4\n")
    args = _build_parser().parse_args(
        ["run", "--config", str(cfg), "--epochs", "2", "--out", str(tmp_path / "r")]
    )
    grid = _grid_from_args(args)
    assert grid.dataset == "synthetic"  # from config
    assert grid.epochs == 2  # flag wins
    assert grid.seeds == [3, 4]  # from config


def test_int_list_rejects_garbage():
    with pytest.raises(ConfigurationError, match="seeds"):
        _int_list("1,two,3", "seeds")


# ---------------------------------------------------------------------------
# Grid validation


def test_grid_rejects_unknown_dataset(tmp_path):
    with pytest.raises(ConfigurationError, match="valid datasets"):
        tiny_grid(tmp_path, dataset="cifar10")


def test_grid_rejects_unknown_method(tmp_path):
    with pytest.raises(ConfigurationError, match="valid methods"):
        tiny_grid(tmp_path, methods=["maer", "agem"])


def test_grid_rejects_empty_axes_and_single_task(tmp_path):
    with pytest.raises(ConfigurationError, match="seeds"):
        tiny_grid(tmp_path, seeds=[])
    with pytest.raises(ConfigurationError, match="methods"):
        tiny_grid(tmp_path, methods=[])
    with pytest.raises(ConfigurationError, match="tasks"):
        tiny_grid(tmp_path, tasks=1)


def test_grid_validates_every_cell_before_running(tmp_path):
    # mem_size 0 is invalid for the replay method, so no files may appear.
    grid = tiny_grid(tmp_path / "r", mem_sizes=[0])
    with pytest.raises(ConfigurationError, match="mem_size"):
        run_grid(grid, verbose=False)
    assert not (tmp_path / "r").exists()


# ---------------------------------------------------------------------------
# run_grid outputs


def test_run_grid_writes_expected_files(tmp_path):
    out = tmp_path / "r"
    grid = tiny_grid(out, methods=["er_reservoir", "finetune"], mem_sizes=[4, 8], seeds=[0, 1])
    run_grid(grid, verbose=False)

    rows = read_csv(out / "results.csv")
    assert rows[0] == [
        "method", "mem_size", "seed", "acc", "bwt", "gem_bwt",
        "acc_task_0", "acc_task_1", "wall_time_s",
    ]
    assert len(rows) == 1 + 2 * 2 * 2
    assert {r[0] for r in rows[1:]} == {"er_reservoir", "finetune"}

    agg = read_csv(out / "aggregate.csv")
    assert agg[0][:5] == ["method", "mem_size", "n_seeds", "acc_mean", "acc_std"]
    assert len(agg) == 1 + 2 * 2
    assert all(r[2] == "2" for r in agg[1:])

    assert (out / "config.echo").is_file()
    for method in ("er_reservoir", "finetune"):
        for mem in (4, 8):
            for seed in (0, 1):
                assert (out / f"matrix_{method}_m{mem}_s{seed}.csv").is_file()


def test_run_grid_matrix_dump_shape(tmp_path):
    out = tmp_path / "r"
    run_grid(tiny_grid(out, methods=["joint"], mem_sizes=[1]), verbose=False)
    rows = read_csv(out / "matrix_joint_m1_s0.csv")
    assert rows[0] == ["after_task", "task_0", "task_1"]
    assert rows[1][0] == "0" and rows[2][0] == "1"
    assert rows[1][1] == "nan"  # joint fills only the last row
    assert float(rows[2][1]) >= 0.0


def test_run_grid_joint_reports_nan_bwt(tmp_path):
    out = tmp_path / "r"
    run_grid(tiny_grid(out, methods=["joint"], mem_sizes=[1]), verbose=False)
    rows = read_csv(out / "results.csv")
    header, row = rows[0], rows[1]
    assert row[header.index("bwt")] == "nan"
    assert row[header.index("gem_bwt")] == "nan"
    assert float(row[header.index("acc")]) >= 0.0


def test_run_grid_rerun_is_bit_identical(tmp_path):
    out = tmp_path / "r"
    grid_kw = dict(methods=["maer"], mem_sizes=[6], seeds=[0, 1], epochs=2)
    run_grid(tiny_grid(out, **grid_kw), verbose=False)
    first = {
        "results": strip_wall_time(read_csv(out / "results.csv")),
        "aggregate": (out / "aggregate.csv").read_bytes(),
        "config": (out / "config.echo").read_bytes(),
        "matrices": {
            p.name: p.read_bytes() for p in out.glob("matrix_*.csv")
        },
    }
    run_grid(tiny_grid(out, **grid_kw), verbose=False)
    assert strip_wall_time(read_csv(out / "results.csv")) == first["results"]
    assert (out / "aggregate.csv").read_bytes() == first["aggregate"]
    assert (out / "config.echo").read_bytes() == first["config"]
    for name, blob in first["matrices"].items():
        assert (out / name).read_bytes() == blob


def test_run_grid_aggregate_matches_recomputation(tmp_path):
    out = tmp_path / "r"
    run_grid(tiny_grid(out, seeds=[0, 1, 2], epochs=2), verbose=False)
    results = read_csv(out / "results.csv")
    header = results[0]
    accs = [float(r[header.index("acc")]) for r in results[1:]]
    agg = read_csv(out / "aggregate.csv")
    assert agg[1][2] == "3"
    assert float(agg[1][3]) == pytest.approx(np.mean(accs), abs=1e-5)
    assert float(agg[1][4]) == pytest.approx(np.std(accs, ddof=1), abs=1e-5)


def test_run_grid_single_seed_reports_zero_std(tmp_path):
    out = tmp_path / "r"
    run_grid(tiny_grid(out, seeds=[4]), verbose=False)
    agg = read_csv(out / "aggregate.csv")
    assert agg[1][2] == "1"
    assert float(agg[1][4]) == 0.0


def test_config_echo_round_trips_to_same_grid(tmp_path):
    out = tmp_path / "r"
    grid = tiny_grid(out, methods=["maer", "finetune"], mem_sizes=[4, 8], seeds=[0, 2])
    run_grid(grid, verbose=False)
    args = _build_parser().parse_args(["run", "--config", str(out / "config.echo")])
    assert _grid_from_args(args) == grid


# ---------------------------------------------------------------------------
# summarize


def write_results(tmp_path, rows):
    out = tmp_path / "r"
    out.mkdir(exist_ok=True)
    header = ["method", "mem_size", "seed", "acc", "bwt", "gem_bwt", "wall_time_s"]
    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return out


def test_summarize_single_cell(tmp_path):
    out = write_results(tmp_path, [
        ["maer", 10, 0, 0.5, 0, 0, 1.0],
        ["maer", 10, 1, 0.7, 0, 0, 1.0],
    ])
    text = summarize(out)
    assert text == (
        "method  mem=10\n"
        "------  ---------------\n"
        "maer    60.00 ± 14.14 *\n"
    )


def test_summarize_marks_best_per_column(tmp_path):
    out = write_results(tmp_path, [
        ["maer", 10, 0, 0.8, 0, 0, 1.0],
        ["er_ring", 10, 0, 0.6, 0, 0, 1.0],
        ["maer", 50, 0, 0.7, 0, 0, 1.0],
        ["er_ring", 50, 0, 0.9, 0, 0, 1.0],
    ])
    lines = summarize(out).splitlines()
    assert lines[0].split() == ["method", "mem=10", "mem=50"]
    er_row = next(l for l in lines if l.startswith("er_ring"))
    maer_row = next(l for l in lines if l.startswith("maer"))
    assert "60.00 ± 0.00" in er_row and "90.00 ± 0.00 *" in er_row
    assert "80.00 ± 0.00 *" in maer_row and "70.00 ± 0.00" in maer_row
    # Rows are sorted by method name.
    assert lines.index(er_row) < lines.index(maer_row)


def test_summarize_missing_cell_shows_dash(tmp_path):
    out = write_results(tmp_path, [
        ["maer", 10, 0, 0.8, 0, 0, 1.0],
        ["er_ring", 50, 0, 0.6, 0, 0, 1.0],
    ])
    lines = summarize(out).splitlines()
    er_row = next(l for l in lines if l.startswith("er_ring"))
    assert er_row.split()[1] == "-"


def test_summarize_errors_without_results(tmp_path):
    with pytest.raises(ConfigurationError, match="no results"):
        summarize(tmp_path)
    out = write_results(tmp_path, [])
    with pytest.raises(ConfigurationError, match="no results"):
        summarize(out)


# ---------------------------------------------------------------------------
# MNIST wiring


def test_missing_mnist_fails_before_any_training(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    grid = tiny_grid(tmp_path / "r", dataset="pmnist", mnist_dir=str(empty))
    with pytest.raises(FileNotFoundError, match="train-images-idx3-ubyte"):
        run_grid(grid, verbose=False)
    assert not (tmp_path / "r").exists()


def test_pmnist_end_to_end_on_fixture_files(tmp_path, capsys):
    mnist = make_mnist_dir(tmp_path)
    out = tmp_path / "r"
    code = main([
        "run", "--dataset", "pmnist", "--mnist-dir", str(mnist),
        "--tasks", "2", "--train-per-task", "16", "--test-per-task", "8",
        "--method", "finetune,er_reservoir", "--mem-size", "4",
        "--seeds", "0", "--epochs", "1", "--out", str(out), "--quiet",
    ])
    assert code == 0
    assert "results written to" in capsys.readouterr().out
    rows = read_csv(out / "results.csv")
    assert len(rows) == 1 + 2


def test_split_mnist_respects_task_budgets(tmp_path):
    # 60 images, labels 0..9 guaranteed present; 2 tasks of 5 classes each.
    rng = np.random.default_rng(1)
    d = tmp_path / "mnist"
    d.mkdir()
    labels = np.concatenate([np.arange(10), rng.integers(0, 10, 50)])
    write_idx_images(d / "train-images-idx3-ubyte", rng.integers(0, 256, (60, 4, 4)))
    write_idx_labels(d / "train-labels-idx1-ubyte", labels)
    write_idx_images(d / "t10k-images-idx3-ubyte", rng.integers(0, 256, (60, 4, 4)))
    write_idx_labels(d / "t10k-labels-idx1-ubyte", labels)
    out = tmp_path / "r"
    grid = tiny_grid(
        out, dataset="split-mnist", mnist_dir=str(d),
        tasks=2, train_per_task=10, test_per_task=5,
    )
    run_grid(grid, verbose=False)
    assert (out / "results.csv").is_file()


def test_main_reports_errors_with_exit_code_two(tmp_path, capsys):
    code = main([
        "run", "--dataset", "pmnist", "--mnist-dir", str(tmp_path / "missing"),
        "--out", str(tmp_path / "r"),
    ])
    assert code == 2
    assert capsys.readouterr().err.startswith("error:")

    code = main(["summarize", str(tmp_path / "nowhere")])
    assert code == 2
    assert "no results" in capsys.readouterr().err


def test_main_summarize_prints_table(tmp_path, capsys):
    out = write_results(tmp_path, [["maer", 10, 0, 0.5, 0, 0, 1.0]])
    assert main(["summarize", str(out)]) == 0
    text = capsys.readouterr().out
    assert "mem=10" in text
    assert "50.00" in text
