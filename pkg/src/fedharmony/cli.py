"""Command-line entry points.

Subcommands:
  generate          build a synthetic federated dataset directory
  train             run one federated experiment on a dataset
  verify-theorems   randomized checks of the exact optimization claims
  ablate            four runs (base / +align / +align+quality / full) sharing a seed
  dump-correlation  export ground-truth and per-client label correlations

Exit codes: 0 ok, 2 invalid config or arguments, 3 training divergence,
4 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .corrstats import CorrelationMatrix
from .datagen import generate as generate_dataset
from .datagen import label_correlation, load_dataset, save_dataset
from .errors import ConfigError, DivergenceError, FedHarmonyError, StepSizeError
from .federation import run_federation
from .fileio import atomic_write_text, save_model
from .verify import run_verification

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_VERIFY = 4


def _metrics_csv(records) -> str:
    lines = ["round,mAP,O_mAP,CP,CR,CF1,OP,OR,OF1"]
    for rec in records:
        if rec.metrics is None:
            continue
        lines.append(f"{rec.round}," + rec.metrics.to_csv_row())
    return "\n".join(lines) + "\n"


def _write_train_outputs(out_dir: Path, records, final_model) -> None:
    atomic_write_text(out_dir / "rounds.jsonl",
                      "\n".join(json.dumps(r.payload(), sort_keys=True) for r in records) + "\n")
    atomic_write_text(
        out_dir / "timings.jsonl",
        "\n".join(
            json.dumps({"round": r.round, **{k: round(v, 6) for k, v in r.timings.items()}})
            for r in records
        )
        + "\n",
    )
    atomic_write_text(out_dir / "metrics.csv", _metrics_csv(records))
    save_model(final_model.model.weights, final_model.model.bias, out_dir / "model.bin")


def _matrix_writer(out_dir: Path):
    def sink(t, client_matrices, consensus_matrices):
        round_dir = out_dir / "correlations" / f"round_{t:04d}"
        round_dir.mkdir(parents=True, exist_ok=True)
        for cid, mat in sorted(client_matrices.items()):
            _write_matrix_csv(round_dir / f"client_{cid:03d}.csv", mat)
        for cid, mat in sorted(consensus_matrices.items()):
            _write_matrix_csv(round_dir / f"consensus_{cid:03d}.csv", mat)

    return sink


def _write_matrix_csv(path: Path, matrix: CorrelationMatrix) -> None:
    rows = "\n".join(",".join(f"{v:.17g}" for v in row) for row in matrix.values)
    atomic_write_text(path, rows + "\n")


def cmd_generate(cfg: ExperimentConfig, out: Path) -> int:
    dataset = generate_dataset(cfg.data)
    manifest = save_dataset(dataset, out)
    print(manifest)
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, dataset_path: Path, out: Path) -> int:
    dataset = load_dataset(dataset_path)
    out.mkdir(parents=True, exist_ok=True)
    try:
        records, final_model = run_federation(
            cfg.federation, dataset, matrix_sink=_matrix_writer(out)
        )
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    _write_train_outputs(out, records, final_model)
    print(out / "metrics.csv")
    return EXIT_OK


def cmd_verify_theorems(cfg: ExperimentConfig, out: Path | None, inject_bad_stepsize: bool) -> int:
    if inject_bad_stepsize:
        from .alignment import gd_run, max_stable_stepsize, uniform_mask
        from .clustering import LabelPartition

        part = LabelPartition(((0, 1), (2, 3)), 4)
        mask = uniform_mask(part, 1.0, 0.2)
        bad_eta = 2.0 * max_stable_stepsize(mask)
        try:
            gd_run("full", np.zeros((4, 4)), np.eye(4), mask, bad_eta, 1)
        except StepSizeError as exc:
            print(f"stepsize precondition surfaced as expected: {exc}")
            return EXIT_VERIFY
        print("error: invalid stepsize was not rejected", file=sys.stderr)
        return EXIT_VERIFY

    report = run_verification(cfg.verify, cfg.seed)
    text = json.dumps(report, indent=2, sort_keys=True)
    if out is not None:
        atomic_write_text(out, text + "\n")
    ratio = report["timing"]["ratio"]
    print(f"instances:                {report['instances']}")
    print(f"max contraction residual: {report['max_contraction_violation']:.3e} "
          f"(tolerance {report['contraction_tolerance']:.0e})")
    print(f"max decomposition gap:    {report['max_theorem2_residual']:.3e} "
          f"(tolerance {report['theorem2_tolerance']:.0e})")
    print(f"rate ordering failures:   {len(report['rate_ordering_failures'])}")
    print(f"block/full step time:     {ratio:.3f}x "
          f"({report['timing']['block_seconds'] * 1e3:.2f} ms vs "
          f"{report['timing']['full_seconds'] * 1e3:.2f} ms)")
    if report["full_display_bound_violations"]:
        print(
            f"note: quoted full-objective factor exceeded on "
            f"{report['full_display_bound_violations']} instance(s); see report note"
        )
    if not report["passed"]:
        print(f"verification FAILED (seed {cfg.seed})", file=sys.stderr)
        return EXIT_VERIFY
    print("verification passed")
    return EXIT_OK


_ABLATION_STEPS = (
    ("base", dict(use_alignment=False, use_caa=False, use_blocks=False)),
    ("+A", dict(use_alignment=True, use_caa=False, use_blocks=False)),
    ("+A+B", dict(use_alignment=True, use_caa=True, use_blocks=False)),
    ("+A+B+C", dict(use_alignment=True, use_caa=True, use_blocks=True)),
)


def cmd_ablate(cfg: ExperimentConfig, dataset_path: Path, out: Path) -> int:
    dataset = load_dataset(dataset_path)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["config,mAP,O_mAP,CP,CR,CF1,OP,OR,OF1"]
    for name, flags in _ABLATION_STEPS:
        run_cfg = dataclasses.replace(cfg.federation, **flags)
        try:
            records, _ = run_federation(run_cfg, dataset)
        except DivergenceError as exc:
            print(f"error in configuration {name}: {exc}", file=sys.stderr)
            return EXIT_DIVERGENCE
        final = records[-1].metrics
        rows.append(f"{name}," + final.to_csv_row())
    atomic_write_text(out / "ablation.csv", "\n".join(rows) + "\n")
    print(out / "ablation.csv")
    return EXIT_OK


def cmd_dump_correlation(dataset_path: Path, out: Path) -> int:
    dataset = load_dataset(dataset_path)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix_csv(out / "ground_truth_r.csv", dataset.ground_truth_r)
    for client in dataset.clients:
        _write_matrix_csv(
            out / f"client_{client.client_id:03d}_label_r.csv",
            label_correlation(client.labels),
        )
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedharmony")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, need_config=True):
        if need_config:
            p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for client training")

    p = sub.add_parser("generate", help="write a synthetic dataset directory")
    add_common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="run one federated experiment")
    add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify-theorems", help="randomized optimization checks")
    add_common(p)
    p.add_argument("--out", default=None, help="where to write the JSON report")
    p.add_argument("--inject-bad-stepsize", action="store_true",
                   help="demonstrate the stepsize precondition check and exit")

    p = sub.add_parser("ablate", help="base/+A/+A+B/+A+B+C runs sharing one seed")
    add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("dump-correlation", help="export correlation matrices of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "dump-correlation":
            return cmd_dump_correlation(Path(args.dataset), Path(args.out))
        cfg = load_config(args.config, seed_override=args.seed, threads=args.threads)
        if args.command == "generate":
            return cmd_generate(cfg, Path(args.out))
        if args.command == "train":
            return cmd_train(cfg, Path(args.dataset), Path(args.out))
        if args.command == "verify-theorems":
            out = Path(args.out) if args.out else None
            return cmd_verify_theorems(cfg, out, args.inject_bad_stepsize)
        if args.command == "ablate":
            return cmd_ablate(cfg, Path(args.dataset), Path(args.out))
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FedHarmonyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
