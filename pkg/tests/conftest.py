import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import pytest

from sideslip import cli


@dataclass
class PipelineRun:
    root: Path
    data: Path
    model: Path
    report: Path
    seconds: dict = field(default_factory=dict)

    @property
    def total_seconds(self) -> float:
        return sum(self.seconds.values())

    def whole_mae(self) -> dict:
        return read_mae_table(self.report / "mae_whole.csv")

    def regime_mae(self, regime: str) -> dict:
        return read_mae_table(self.report / f"mae_{regime}.csv")


def read_mae_table(path: Path) -> dict:
    lines = Path(path).read_text().splitlines()[1:]
    return {line.split(",")[0]: float(line.split(",")[1]) for line in lines}


def run_cli(*argv) -> None:
    code = cli.main([str(a) for a in argv])
    assert code == 0, f"sideslip {' '.join(map(str, argv))} exited with {code}"


def run_pipeline(root: Path, seed: int = 0, sim_args=(), train_args=(), data: Path | None = None) -> PipelineRun:
    """simulate -> train -> eval through the command-line entry point."""
    root.mkdir(parents=True, exist_ok=True)
    run = PipelineRun(root, data or root / "data", root / "model.json", root / "report")
    if data is None:
        t0 = time.perf_counter()
        run_cli("simulate", "--out", run.data, "--seed", seed, *sim_args)
        run.seconds["simulate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    run_cli("train", "--data", run.data, "--out", run.model, "--seed", seed, *train_args)
    run.seconds["train"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    run_cli("eval", "--model", run.model, "--data", run.data, "--report", run.report, "--seed", seed)
    run.seconds["eval"] = time.perf_counter() - t0
    return run


@pytest.fixture(scope="session")
def benchmark_run(tmp_path_factory) -> PipelineRun:
    """The default benchmark (seed 0) run end to end once per session."""
    return run_pipeline(tmp_path_factory.mktemp("benchmark"))


@pytest.fixture(scope="session")
def ablation_run(tmp_path_factory, benchmark_run) -> PipelineRun:
    """Same data and seed, kinematic side-slip appended to the network input instead."""
    return run_pipeline(tmp_path_factory.mktemp("ablation"), data=benchmark_run.data,
                        train_args=("--concat-point", "stage1_input"))


@pytest.fixture(scope="session")
def small_run(tmp_path_factory) -> PipelineRun:
    """A few short trajectories with both regimes, for fast end-to-end checks."""
    return run_pipeline(tmp_path_factory.mktemp("small"), seed=5,
                        sim_args=("--count", 15, "--duration", 8), train_args=("--epochs", 3))


def manifest(data_dir: Path) -> dict:
    return json.loads((Path(data_dir) / "manifest.json").read_text())
