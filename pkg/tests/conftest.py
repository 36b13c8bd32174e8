import json
import os
import shutil
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from iciclegcn.data import SyntheticSpec, generate_dataset, write_dataset

# criterion number -> (passed, detail); filled in by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}

TOY_INI = """\
[data]
path = {data}

[output]
dir = {out}

[run]
seed = 42

[contrastive]
epochs = 30
lr = 0.0001

[graph]
k_a = 1
k_b = 10

[mgcn]
sigma = 0.4
gamma = 0.2
n_it = 200
"""


@dataclass
class ToyRun:
    out: Path
    config: Path
    data: Path
    seconds: float
    returncode: int
    stderr: str

    def records(self, phase: int) -> list[dict]:
        lines = (self.out / "train_log.jsonl").read_text().splitlines()
        return [r for r in map(json.loads, lines) if r["phase"] == phase]

    def metrics(self) -> dict[str, float]:
        header, row = (self.out / "metrics.csv").read_text().splitlines()
        return dict(zip(header.split(","), map(float, row.split(","))))


def icicle_command() -> list[str]:
    exe = shutil.which("icicle")
    return [exe] if exe else [sys.executable, "-m", "iciclegcn.cli"]


def invoke_run(config: Path) -> tuple[float, subprocess.CompletedProcess]:
    env = {**os.environ, "OMP_NUM_THREADS": "1", "OPENBLAS_NUM_THREADS": "1", "MKL_NUM_THREADS": "1"}
    start = time.perf_counter()
    proc = subprocess.run([*icicle_command(), "run", "--config", str(config)], capture_output=True, text=True, env=env)
    return time.perf_counter() - start, proc


@pytest.fixture(scope="session")
def toy_workspace(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("toy")
    write_dataset(generate_dataset(SyntheticSpec(num_clusters=3, images_per_cluster=100, image_size=16, noise_sigma=0.05, seed=42)), root / "toy.icg")
    return root


def make_toy_run(root: Path, name: str) -> ToyRun:
    config = root / f"{name}.ini"
    config.write_text(TOY_INI.format(data=root / "toy.icg", out=root / name))
    seconds, proc = invoke_run(config)
    return ToyRun(root / name, config, root / "toy.icg", seconds, proc.returncode, proc.stderr)


@pytest.fixture(scope="session")
def toy_run(toy_workspace) -> ToyRun:
    """One full ``icicle run`` on the seeded 3-cluster toy dataset with default hyper-parameters."""
    return make_toy_run(toy_workspace, "run1")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
