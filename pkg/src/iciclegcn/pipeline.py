"""End-to-end driver: contrastive pretraining, graph construction, trident refinement, evaluation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import read_checkpoint, write_checkpoint
from .config import Config, RunConfig
from .contrastive import Phase1Model, extract_features, train_phase1
from .data import ImageDataset, read_dataset, read_header
from .errors import ConfigError, DimensionError, IcicleError
from .graph import build_knn_graph, normalize_adjacency
from .layers import named
from .metrics import confusion_csv, confusion_matrix, evaluate
from .mgcn import TridentModel, kmeans_init_centers, predict, train_phase2
from .tensor import Tensor

logger = logging.getLogger(__name__)

FEATURES_KEY = "features.Zb"


class StageError(IcicleError):
    """Wraps a failure with the name of the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"stage {stage!r} failed: {cause}")


class JsonlLog:
    def __init__(self):
        self.records: list[dict] = []

    def __call__(self, record: dict) -> None:
        self.records.append(record)

    def dumps(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records)


def resolve_k(config: Config, dataset: ImageDataset) -> int:
    if config.num_clusters and config.num_clusters != dataset.num_clusters:
        logger.info("config K=%d overrides dataset K=%d", config.num_clusters, dataset.num_clusters)
    return config.num_clusters or dataset.num_clusters


# stages -----------------------------------------------------------------------------


def run_phase1(dataset: ImageDataset, config: Config, log=None) -> tuple[Phase1Model, np.ndarray]:
    k = resolve_k(config, dataset)
    model = Phase1Model(config, image_size=dataset.images.shape[-1], num_clusters=k)
    train_phase1(model, dataset, config, log=log)
    return model, extract_features(model.backbone, dataset.images)


def phase1_checkpoint(model: Phase1Model, features: np.ndarray) -> dict[str, np.ndarray]:
    return {**model.state(), FEATURES_KEY: features}


def load_phase1(path, config: Config, dataset: ImageDataset) -> tuple[Phase1Model, np.ndarray]:
    state = read_checkpoint(path)
    model = Phase1Model(config, image_size=dataset.images.shape[-1], num_clusters=resolve_k(config, dataset))
    model.load_state(state)
    features = state.get(FEATURES_KEY)
    if features is None or len(features) != len(dataset):
        features = extract_features(model.backbone, dataset.images)
    return model, features


def build_graphs(features: np.ndarray, config: Config):
    adj_a = normalize_adjacency(build_knn_graph(features, config.k_a, config.t_heat))
    adj_b = None
    if config.streams == "two":
        adj_b = normalize_adjacency(build_knn_graph(features, config.k_b, config.t_heat))
    return adj_a, adj_b


def run_phase2(phase1: Phase1Model, features: np.ndarray, config: Config, log=None):
    """Build graphs, seed centers by k-means on the bottleneck, train, and label every sample."""
    adj_a, adj_b = build_graphs(features, config)
    k = phase1.autoencoder.widths[-1]
    bottleneck = phase1.autoencoder.encode(Tensor(features))[-1].data
    centers = kmeans_init_centers(bottleneck, k, seed=config.seed)
    model = TridentModel(phase1.autoencoder, adj_a, adj_b, centers, config)
    reports = train_phase2(model, features, log=log)
    return model, reports, predict(model, features)


def trident_state(model: TridentModel) -> dict[str, np.ndarray]:
    return {name: p.data for name, p in named(model.parameters()).items()}


# full run -----------------------------------------------------------------------------


@dataclass
class RunResult:
    metrics: dict[str, float]
    labels: np.ndarray
    confusion: np.ndarray
    log: JsonlLog = field(repr=False)
    phase2_reports: list = field(default_factory=list, repr=False)


def metrics_csv(metrics: dict[str, float]) -> str:
    return "acc,nmi,ari\n" + ",".join(repr(float(metrics[k])) for k in ("acc", "nmi", "ari")) + "\n"


def _stage(name: str, fn):
    try:
        return fn()
    except IcicleError as exc:
        raise StageError(name, exc) from exc


def check_inputs(run: RunConfig) -> tuple[int, ...]:
    run.validate_paths()
    try:
        with open(run.data_path, "rb") as fh:
            head = fh.read(24)
    except OSError as exc:
        raise ConfigError(f"cannot open data file {run.data_path}: {exc}") from exc
    return read_header(head)


def execute(dataset: ImageDataset, config: Config, out_dir: Path | None = None) -> RunResult:
    """Run the whole pipeline in memory; write artifacts when ``out_dir`` is given."""
    log = JsonlLog()
    with threadpool_limits(limits=1):
        phase1, features = _stage("phase1", lambda: run_phase1(dataset, config, log))
        if out_dir is not None:
            write_checkpoint(phase1_checkpoint(phase1, features), out_dir / "phase1.ckpt")
        trident, reports, labels = _stage("phase2", lambda: run_phase2(phase1, features, config, log))
    k = resolve_k(config, dataset)
    metrics = evaluate(dataset.labels, labels)
    counts = confusion_matrix(dataset.labels, labels, num_true=dataset.num_clusters, num_pred=k)
    result = RunResult(metrics=metrics, labels=labels, confusion=counts, log=log, phase2_reports=reports)
    if out_dir is not None:
        write_checkpoint(trident_state(trident), out_dir / "phase2.ckpt")
        (out_dir / "labels.txt").write_text("".join(f"{int(v)}\n" for v in labels))
        (out_dir / "metrics.csv").write_text(metrics_csv(metrics))
        (out_dir / "confusion.csv").write_text(confusion_csv(counts))
        (out_dir / "train_log.jsonl").write_text(log.dumps())
    return result


def run_pipeline(run: RunConfig, dry_run: bool = False) -> RunResult | None:
    header = _stage("validate", lambda: check_inputs(run))
    if dry_run:
        logger.info("dry run: config valid, data header %s", header)
        return None
    dataset = _stage("load", lambda: read_dataset(run.data_path))
    k = resolve_k(run.config, dataset)
    if k > len(dataset):
        raise StageError("validate", DimensionError(f"K={k} exceeds N={len(dataset)}"))
    run.output_dir.mkdir(parents=True, exist_ok=True)
    return execute(dataset, run.config, run.output_dir)
