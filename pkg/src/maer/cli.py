"""Experiment runner CLI.

Executes (method x buffer-size x seed) grids on a chosen task stream and
writes CSV result tables, plus a ``summarize`` subcommand that renders the
aggregate table. Every run is reproducible from the echoed config + seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import (
    TaskStream,
    load_mnist_idx,
    permuted_stream,
    rotated_stream,
    split_stream,
    synthetic_gaussian_stream,
)
from .harness import (
    METHODS,
    MethodConfig,
    acc_metric,
    bwt_metric,
    gem_bwt_metric,
    run_continual,
)
from .validation import ConfigurationError

__all__ = ["ExperimentGrid", "run_grid", "summarize", "main"]

DATASETS = ("pmnist", "rmnist", "split-mnist", "synthetic")

_MNIST_FILES = (
    ("train_images", "train-images-idx3-ubyte"),
    ("train_labels", "train-labels-idx1-ubyte"),
    ("test_images", "t10k-images-idx3-ubyte"),
    ("test_labels", "t10k-labels-idx1-ubyte"),
)

# Defaults for the synthetic stream; chosen so any tasks <= 16 fits.
_SYNTHETIC_DIM = 32
_SYNTHETIC_CLASSES_PER_TASK = 2


@dataclass
class ExperimentGrid:
    """One experiment grid: dataset settings plus the method/buffer/seed axes."""

    dataset: str = "pmnist"
    mnist_dir: str | None = None
    tasks: int = 5
    train_per_task: int = 2000
    test_per_task: int = 1000
    methods: list[str] = field(default_factory=lambda: ["maer"])
    mem_sizes: list[int] = field(default_factory=lambda: [100])
    seeds: list[int] = field(default_factory=lambda: [0])
    epochs: int = 10
    lr: float = 0.01
    batch_size: int = 16
    mes_mode: str = "exact"
    out: str = "results"

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigurationError(
                f"unknown dataset {self.dataset!r}; valid datasets: {', '.join(DATASETS)}"
            )
        if not self.methods:
            raise ConfigurationError("methods list is empty")
        if not self.seeds:
            raise ConfigurationError("seeds list is empty")
        if not self.mem_sizes:
            raise ConfigurationError("mem_sizes list is empty")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigurationError(
                    f"unknown method {m!r}; valid methods: {', '.join(METHODS)}"
                )
        if self.tasks < 2:
            raise ConfigurationError(f"tasks must be >= 2, got {self.tasks}")

    def config_for(self, method: str, mem_size: int, seed: int) -> MethodConfig:
        return MethodConfig(
            method=method,
            mem_size=mem_size,
            epochs=self.epochs,
            lr=self.lr,
            batch_size=self.batch_size,
            seed=seed,
            mes_mode=self.mes_mode,
        )


def _resolve_mnist_dir(grid: ExperimentGrid) -> Path:
    if grid.mnist_dir is not None:
        return Path(grid.mnist_dir)
    env = os.environ.get("MNIST_DIR")
    if env:
        return Path(env)
    return Path("data/mnist")


def _find_mnist_files(directory: Path) -> dict[str, Path]:
    """Locate the four IDX files, accepting gzipped variants."""
    found: dict[str, Path] = {}
    missing: list[str] = []
    for key, stem in _MNIST_FILES:
        for candidate in (directory / stem, directory / (stem + ".gz")):
            if candidate.is_file():
                found[key] = candidate
                break
        else:
            missing.append(stem)
    if missing:
        raise FileNotFoundError(
            f"missing MNIST files under {directory}: {', '.join(missing)} "
            "(plain or .gz); point --mnist-dir or MNIST_DIR at a directory "
            "containing them"
        )
    return found


def _load_mnist(directory: Path):
    files = _find_mnist_files(directory)
    train = load_mnist_idx(files["train_images"], files["train_labels"])
    test = load_mnist_idx(files["test_images"], files["test_labels"])
    return train, test


def _subset_stream_tasks(stream: TaskStream, grid: ExperimentGrid, seed: int) -> TaskStream:
    """Per-task subsampling for streams built from full bases (split)."""
    rng = np.random.default_rng(seed)
    for task in stream.tasks:
        for attr, n in (("train", grid.train_per_task), ("test", grid.test_per_task)):
            ds = getattr(task, attr)
            if n < len(ds):
                idx = rng.permutation(len(ds))[:n]
                setattr(task, attr, ds.subset(np.sort(idx)))
    return stream


class _StreamFactory:
    """Builds the task stream for each seed, loading MNIST at most once."""

    def __init__(self, grid: ExperimentGrid):
        self.grid = grid
        self._mnist = None
        self._cache: dict[int, TaskStream] = {}
        if grid.dataset != "synthetic":
            # Startup check: fail on missing files before any training runs.
            self._mnist = _load_mnist(_resolve_mnist_dir(grid))

    def stream_for(self, seed: int) -> TaskStream:
        if seed in self._cache:
            return self._cache[seed]
        g = self.grid
        if g.dataset == "synthetic":
            stream = synthetic_gaussian_stream(
                _SYNTHETIC_DIM,
                _SYNTHETIC_CLASSES_PER_TASK,
                g.tasks,
                g.train_per_task,
                seed=seed,
                test_per_task=g.test_per_task,
            )
        elif g.dataset == "pmnist":
            train, test = self._mnist
            stream = permuted_stream(
                train, test, g.tasks, g.train_per_task, g.test_per_task, seed=seed
            )
        elif g.dataset == "rmnist":
            train, test = self._mnist
            stream = rotated_stream(
                train, test, g.tasks, g.train_per_task, g.test_per_task, seed=seed
            )
        else:  # split-mnist
            train, test = self._mnist
            stream = _subset_stream_tasks(
                split_stream(train, test, g.tasks), self.grid, seed
            )
        self._cache[seed] = stream
        return stream


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _dump_matrix(path: Path, a: np.ndarray) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["after_task"] + [f"task_{j}" for j in range(a.shape[1])])
    for i in range(a.shape[0]):
        writer.writerow([i] + [_fmt(v) for v in a[i]])
    _write_atomic(path, buf.getvalue())


def _echo_config(grid: ExperimentGrid) -> str:
    lines = [
        f"dataset = {grid.dataset}",
        f"mnist_dir = {grid.mnist_dir if grid.mnist_dir is not None else ''}",
        f"tasks = {grid.tasks}",
        f"train_per_task = {grid.train_per_task}",
        f"test_per_task = {grid.test_per_task}",
        f"method = {','.join(grid.methods)}",
        f"mem_size = {','.join(str(k) for k in grid.mem_sizes)}",
        f"seeds = {','.join(str(s) for s in grid.seeds)}",
        f"epochs = {grid.epochs}",
        f"lr = {_fmt(grid.lr)}",
        f"batch_size = {grid.batch_size}",
        f"mes_mode = {grid.mes_mode}",
        f"out = {grid.out}",
    ]
    return "\n".join(lines) + "\n"


def run_grid(grid: ExperimentGrid, verbose: bool = True) -> Path:
    """Run every (method, mem_size, seed) cell and write the result files.

    Produces ``results.csv`` (one row per cell; wall time is the last column
    so deterministic comparisons can strip it), ``aggregate.csv`` (mean and
    sample std over seeds), ``config.echo``, and one accuracy-matrix dump per
    cell. Returns the output directory.
    """
    # All startup validation happens before any training: the grid fields
    # were checked on construction, per-cell configs are checked here, and
    # the stream factory probes dataset files in its constructor.
    for method in grid.methods:
        for mem in grid.mem_sizes:
            for seed in grid.seeds:
                grid.config_for(method, mem, seed)
    factory = _StreamFactory(grid)

    out = Path(grid.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_atomic(out / "config.echo", _echo_config(grid))

    task_cols = [f"acc_task_{j}" for j in range(grid.tasks)]
    rows = []
    for method in grid.methods:
        for mem in grid.mem_sizes:
            for seed in grid.seeds:
                cfg = grid.config_for(method, mem, seed)
                stream = factory.stream_for(seed)
                start = time.perf_counter()
                result = run_continual(stream, cfg)
                wall = time.perf_counter() - start

                acc = acc_metric(result.matrix)
                if method == "joint":
                    bwt = gem = float("nan")
                else:
                    bwt = bwt_metric(result.matrix)
                    gem = gem_bwt_metric(result.matrix)
                final_row = result.matrix.a[-1]

                run_id = f"{method}_m{mem}_s{seed}"
                _dump_matrix(out / f"matrix_{run_id}.csv", result.matrix.a)
                rows.append(
                    [method, mem, seed, acc, bwt, gem, *final_row, wall]
                )
                if verbose:
                    print(
                        f"{run_id}: acc={acc:.4f} bwt={bwt:.4f} "
                        f"gem_bwt={gem:.4f} ({wall:.1f}s)"
                    )

    header = ["method", "mem_size", "seed", "acc", "bwt", "gem_bwt", *task_cols,
              "wall_time_s"]
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow(row[:3] + [_fmt(v) for v in row[3:]])
    _write_atomic(out / "results.csv", buf.getvalue())

    _write_atomic(out / "aggregate.csv", _aggregate_csv(grid, rows))
    return out


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return mean, std


def _aggregate_csv(grid: ExperimentGrid, rows: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["method", "mem_size", "n_seeds", "acc_mean", "acc_std",
         "bwt_mean", "bwt_std", "gem_bwt_mean", "gem_bwt_std"]
    )
    for method in grid.methods:
        for mem in grid.mem_sizes:
            cell = [r for r in rows if r[0] == method and r[1] == mem]
            stats = []
            for col in (3, 4, 5):
                stats.extend(_mean_std([r[col] for r in cell]))
            writer.writerow([method, mem, len(cell)] + [_fmt(v) for v in stats])
    return buf.getvalue()


def summarize(results_dir) -> str:
    """Render the methods x buffer-sizes table of "mean +/- std" ACC.

    The best mean in each buffer-size column is marked with ``*``. Returns
    the table as a string (the CLI prints it).
    """
    results = Path(results_dir) / "results.csv"
    if not results.is_file():
        raise ConfigurationError(f"no results in {results_dir}")
    with open(results, newline="") as fh:
        reader = csv.DictReader(fh)
        data = list(reader)
    if not data:
        raise ConfigurationError(f"no results in {results_dir}")

    cells: dict[tuple[str, int], list[float]] = {}
    for row in data:
        key = (row["method"], int(row["mem_size"]))
        cells.setdefault(key, []).append(float(row["acc"]))

    methods = sorted({m for m, _ in cells})
    mems = sorted({k for _, k in cells})

    text: dict[tuple[str, int], str] = {}
    best: dict[int, str] = {}
    for mem in mems:
        col_means = {}
        for method in methods:
            values = cells.get((method, mem))
            if values is None:
                continue
            mean, std = _mean_std(values)
            col_means[method] = mean
            text[(method, mem)] = f"{100 * mean:.2f} ± {100 * std:.2f}"
        best[mem] = max(col_means, key=col_means.get)

    for mem in mems:
        key = (best[mem], mem)
        text[key] = text[key] + " *"

    headers = ["method"] + [f"mem={k}" for k in mems]
    table = [headers]
    for method in methods:
        table.append([method] + [text.get((method, k), "-") for k in mems])
    widths = [max(len(r[c]) for r in table) for c in range(len(headers))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _parse_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment; blank lines skipped."""
    valid = {
        "dataset", "mnist_dir", "tasks", "train_per_task", "test_per_task",
        "method", "mem_size", "seeds", "epochs", "lr", "batch_size",
        "mes_mode", "out",
    }
    values: dict[str, str] = {}
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(
                f"{path}:{lineno}: expected 'key = value', got {raw!r}"
            )
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in valid:
            raise ConfigurationError(
                f"{path}:{lineno}: unknown key {key!r}; valid keys: "
                f"{', '.join(sorted(valid))}"
            )
        values[key] = value.strip()
    return values


def _int_list(text: str, name: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ConfigurationError(f"{name} must be comma-separated integers, got {text!r}")


def _grid_from_args(args: argparse.Namespace) -> ExperimentGrid:
    settings: dict[str, str] = {}
    if args.config is not None:
        settings.update(_parse_config_file(args.config))
    # Command-line flags win over config-file values.
    for key in ("dataset", "mnist_dir", "tasks", "train_per_task",
                "test_per_task", "method", "mem_size", "seeds", "epochs",
                "lr", "batch_size", "mes_mode", "out"):
        flag = getattr(args, key)
        if flag is not None:
            settings[key] = str(flag)

    def take(key, default, convert=str):
        if key in settings:
            try:
                return convert(settings[key])
            except ValueError:
                raise ConfigurationError(
                    f"bad value for {key}: {settings[key]!r}"
                )
        return default

    return ExperimentGrid(
        dataset=take("dataset", "pmnist"),
        mnist_dir=settings.get("mnist_dir") or None,
        tasks=take("tasks", 5, int),
        train_per_task=take("train_per_task", 2000, int),
        test_per_task=take("test_per_task", 1000, int),
        methods=[m.strip() for m in settings.get("method", "maer").split(",") if m.strip()],
        mem_sizes=_int_list(settings.get("mem_size", "100"), "mem_size"),
        seeds=_int_list(settings.get("seeds", "0"), "seeds"),
        epochs=take("epochs", 10, int),
        lr=take("lr", 0.01, float),
        batch_size=take("batch_size", 16, int),
        mes_mode=take("mes_mode", "exact"),
        out=take("out", "results"),
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maer",
        description="Continual-learning benchmark runner (manifold expansion replay)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a method x mem-size x seed grid")
    run.add_argument("--dataset", choices=DATASETS, default=None)
    run.add_argument("--mnist-dir", dest="mnist_dir", default=None)
    run.add_argument("--tasks", type=int, default=None)
    run.add_argument("--train-per-task", dest="train_per_task", type=int, default=None)
    run.add_argument("--test-per-task", dest="test_per_task", type=int, default=None)
    run.add_argument("--method", default=None,
                     help="comma-separated list, e.g. maer,er_reservoir")
    run.add_argument("--mem-size", dest="mem_size", default=None,
                     help="comma-separated buffer sizes")
    run.add_argument("--seeds", default=None, help="comma-separated seeds")
    run.add_argument("--epochs", type=int, default=None)
    run.add_argument("--lr", type=float, default=None)
    run.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    run.add_argument("--mes-mode", dest="mes_mode", choices=("exact", "fast"),
                     default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--config", default=None, help="flat key=value config file")
    run.add_argument("--quiet", action="store_true")

    summ = sub.add_parser("summarize", help="print the aggregate table")
    summ.add_argument("results_dir", nargs="?", default="results")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            grid = _grid_from_args(args)
            out = run_grid(grid, verbose=not args.quiet)
            print(f"results written to {out}")
        else:
            sys.stdout.write(summarize(args.results_dir))
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
