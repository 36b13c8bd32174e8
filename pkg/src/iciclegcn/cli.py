"""``icicle`` command-line entry point.

Exit codes: 0 success, 2 config error, 3 data-format error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import read_checkpoint, write_checkpoint
from .config import Config, load_config
from .data import SyntheticSpec, generate_dataset, read_dataset, write_dataset
from .errors import ConfigError, FormatError, IcicleError
from .graph import build_knn_graph, write_edge_list
from .metrics import evaluate
from .pipeline import (
    FEATURES_KEY,
    JsonlLog,
    load_phase1,
    metrics_csv,
    phase1_checkpoint,
    run_phase1,
    run_phase2,
    run_pipeline,
    trident_state,
)

logger = logging.getLogger("icicle")


def _config(path: str | None) -> Config:
    return load_config(path).config if path else Config()


def _read_labels(path: str) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        return np.array([int(tok) for tok in text.split()], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"{path}: labels must be integers, one per line") from exc


def cmd_data_gen(args) -> None:
    spec = SyntheticSpec(
        num_clusters=args.k,
        images_per_cluster=args.per_cluster,
        image_size=args.size,
        noise_sigma=args.sigma,
        seed=args.seed,
    )
    write_dataset(generate_dataset(spec), args.out)


def cmd_train_phase1(args) -> None:
    config = _config(args.config)
    dataset = read_dataset(args.data)
    log = JsonlLog()
    with threadpool_limits(limits=1):
        model, features = run_phase1(dataset, config, log)
    write_checkpoint(phase1_checkpoint(model, features), args.out)
    if args.log:
        Path(args.log).write_text(log.dumps())


def cmd_graph(args) -> None:
    state = read_checkpoint(args.features)
    if FEATURES_KEY not in state:
        raise FormatError(f"{args.features} has no {FEATURES_KEY!r} entry")
    graph = build_knn_graph(state[FEATURES_KEY], args.k, args.t_heat)
    write_edge_list(graph, args.out)


def cmd_train_phase2(args) -> None:
    config = _config(args.config)
    dataset = read_dataset(args.data)
    log = JsonlLog()
    with threadpool_limits(limits=1):
        phase1, features = load_phase1(args.ckpt, config, dataset)
        model, _, labels = run_phase2(phase1, features, config, log)
    write_checkpoint(trident_state(model), args.out)
    Path(args.labels_out).write_text("".join(f"{int(v)}\n" for v in labels))
    if args.log:
        Path(args.log).write_text(log.dumps())


def cmd_eval(args) -> None:
    truth, pred = _read_labels(args.truth), _read_labels(args.pred)
    report = metrics_csv(evaluate(truth, pred))
    if args.out:
        Path(args.out).write_text(report)
    sys.stdout.write(report)


def cmd_run(args) -> None:
    result = run_pipeline(load_config(args.config), dry_run=args.dry_run)
    if result is not None:
        sys.stdout.write(metrics_csv(result.metrics))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icicle", description="Contrastive + multi-scale GCN image clustering.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    data = sub.add_parser("data", help="dataset utilities")
    data_sub = data.add_subparsers(dest="data_command", required=True)
    gen = data_sub.add_parser("gen", help="write a synthetic colour/texture dataset")
    gen.add_argument("--k", type=int, default=3)
    gen.add_argument("--per-cluster", type=int, default=100)
    gen.add_argument("--size", type=int, default=16)
    gen.add_argument("--sigma", type=float, default=0.05)
    gen.add_argument("--seed", type=int, default=42)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_data_gen)

    p1 = sub.add_parser("train-phase1", help="contrastive pretraining")
    p1.add_argument("--data", required=True)
    p1.add_argument("--config")
    p1.add_argument("--out", required=True)
    p1.add_argument("--log", help="optional JSON-lines training log")
    p1.set_defaults(func=cmd_train_phase1)

    g = sub.add_parser("graph", help="dump a k-NN graph over checkpointed features")
    g.add_argument("--features", required=True, help="phase-1 checkpoint")
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--t-heat", type=float, default=1.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_graph)

    p2 = sub.add_parser("train-phase2", help="trident self-training")
    p2.add_argument("--data", required=True)
    p2.add_argument("--ckpt", required=True)
    p2.add_argument("--config")
    p2.add_argument("--out", required=True)
    p2.add_argument("--labels-out", required=True)
    p2.add_argument("--log")
    p2.set_defaults(func=cmd_train_phase2)

    ev = sub.add_parser("eval", help="ACC/NMI/ARI of two label files")
    ev.add_argument("--truth", required=True)
    ev.add_argument("--pred", required=True)
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_eval)

    run = sub.add_parser("run", help="full pipeline from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--dry-run", action="store_true")
    run.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except IcicleError as exc:
        print(f"icicle: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"icicle: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
