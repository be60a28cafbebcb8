"""Command-line entry point: batch experiment runs and post-hoc analysis.

Subcommands:
    run              train one method on a stream and persist all artifacts
    compare          aggregate FAA/FF/ECE across finished run directories
    analyze          run a probe (flatness, fisher, offline, transfer,
                     bias, prealloc) against a finished run
    generate-stream  write a synthetic labeled-vector dataset file

The output root is ``--out``, else ``$XDER_OUT``, else ``./runs``.
Exit codes: 0 success, 2 config error, 3 missing artifact, 4 runtime
failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import analysis, artifacts, metrics
from .artifacts import ConfigError, MissingArtifactError
from .buffer import RehearsalBuffer
from .network import MLP
from .streams import generate_blob_stream, save_dataset
from .training import ContinualClassifier


def _out_root(arg: str | None) -> Path:
    if arg:
        return Path(arg)
    env = os.environ.get("XDER_OUT")
    return Path(env) if env else Path("runs")


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    for key in sorted({**artifacts.STREAM_KEYS, **artifacts.ESTIMATOR_KEYS}):
        parser.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", default=None)


def _collect_overrides(args: argparse.Namespace) -> dict:
    return {
        name[4:]: value
        for name, value in vars(args).items()
        if name.startswith("cfg_") and value is not None
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xder", description="class-incremental continual learning runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train one configuration and save artifacts")
    p_run.add_argument("--config", default=None, help="flat key = value config file")
    p_run.add_argument("--out", default=None, help="output root (default $XDER_OUT or ./runs)")
    p_run.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    _add_override_flags(p_run)

    p_cmp = sub.add_parser("compare", help="tabulate metrics across runs")
    p_cmp.add_argument("run_dirs", nargs="+", help="completed run directories")
    p_cmp.add_argument("--out", default=None, help="write the CSV here instead of stdout")

    p_an = sub.add_parser("analyze", help="probe a completed run")
    p_an.add_argument(
        "probe",
        choices=["flatness", "fisher", "offline", "transfer", "bias", "prealloc"],
    )
    p_an.add_argument("run_dir", help="completed run directory")
    p_an.add_argument("--alphas", default="0,0.05,0.1,0.2,0.4")
    p_an.add_argument("--samples", type=int, default=10)
    p_an.add_argument("--split", default="train", choices=["train", "test"])
    p_an.add_argument("--mode", default="both", choices=["labels", "logits", "both"])
    p_an.add_argument("--retrain-epochs", type=int, default=20)
    p_an.add_argument("--source-task", type=int, default=None)
    p_an.add_argument("--shots", default="1,2,5,10")
    p_an.add_argument("--heads", default=None, help="comma list of pre-allocated head counts")

    p_gen = sub.add_parser("generate-stream", help="write a synthetic dataset file")
    p_gen.add_argument("--tasks", type=int, default=5)
    p_gen.add_argument("--classes-per-task", type=int, default=10)
    p_gen.add_argument("--n-per-class", type=int, default=50)
    p_gen.add_argument("--dim", type=int, default=8)
    p_gen.add_argument("--separation", type=float, default=6.0)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True, help="dataset file to write")
    return parser


# -- run -----------------------------------------------------------------------


def _cmd_run(args: argparse.Namespace) -> int:
    values = parse_overlaid_config(args)
    config = artifacts.coerce_config(values)
    run_id = artifacts.run_id_for(config)
    run_dir = _out_root(args.out) / f"{config['method']}-seed{config['seed']}-{run_id}"
    if run_dir.exists() and not args.force:
        raise ConfigError(f"run directory {run_dir} exists; pass --force to overwrite")
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "checkpoints").mkdir(exist_ok=True)

    stream = artifacts.build_stream(config)
    manifest = artifacts.new_manifest(run_id, config, stream)
    artifacts.save_manifest(run_dir, manifest)

    clf = ContinualClassifier(**artifacts.estimator_params(config)).fit(stream)

    artifacts.write_matrix_csv(run_dir / "matrix.csv", clf.accuracy_matrix_)
    artifacts.write_jsonl(run_dir / "losses.jsonl", clf.loss_trace_)
    checkpoint_paths = []
    for i, (sizes, theta) in enumerate(clf.task_checkpoints_):
        path = run_dir / "checkpoints" / f"task_{i:03d}.ckpt"
        MLP.from_flat(sizes, theta).save(path)
        checkpoint_paths.append(str(path.relative_to(run_dir)))
    if clf.buffer_ is not None:
        clf.buffer_.save(run_dir / "buffer.bin")

    records = _final_metrics(clf, stream, run_id)
    artifacts.write_jsonl(run_dir / "metrics.jsonl", records)

    manifest["status"] = "complete"
    manifest["finished_at"] = datetime.now(timezone.utc).isoformat()
    manifest["artifacts"] = {
        "matrix": "matrix.csv",
        "losses": "losses.jsonl",
        "metrics": "metrics.jsonl",
        "buffer": "buffer.bin" if clf.buffer_ is not None else None,
        "checkpoints": checkpoint_paths,
    }
    artifacts.save_manifest(run_dir, manifest)
    print(run_dir)
    return 0


def parse_overlaid_config(args: argparse.Namespace) -> dict:
    values = parse_config_path(args.config) if args.config else {}
    values.update(_collect_overrides(args))
    return values


def parse_config_path(path) -> dict:
    return artifacts.parse_config_file(path)


def _final_metrics(clf: ContinualClassifier, stream, run_id: str) -> list[dict]:
    records = [
        {"run_id": run_id, "metric": "faa", "value": metrics.faa(clf.accuracy_matrix_), "scope": "final"}
    ]
    if stream.num_tasks >= 2 and clf.method != "jt":
        records.append(
            {"run_id": run_id, "metric": "ff", "value": metrics.ff(clf.accuracy_matrix_), "scope": "final"}
        )
    test_x, test_y = stream.all_test()
    conf, correct = metrics.confidence_and_correct(clf.predict_logits(test_x), test_y)
    records.append(
        {"run_id": run_id, "metric": "ece", "value": metrics.ece(conf, correct), "scope": "final"}
    )
    return records


# -- compare --------------------------------------------------------------------


def _cmd_compare(args: argparse.Namespace) -> int:
    by_method: dict[str, dict[str, list[float]]] = {}
    for run_dir in args.run_dirs:
        manifest = artifacts.load_manifest(run_dir)
        artifacts.require_complete(manifest, run_dir)
        method = manifest["config"]["method"]
        rows = artifacts.read_jsonl(Path(run_dir) / "metrics.jsonl")
        slot = by_method.setdefault(method, {"faa": [], "ff": [], "ece": []})
        for row in rows:
            if row["metric"] in slot:
                slot[row["metric"]].append(row["value"])
    lines = ["method,seed_count,faa_mean,faa_std,ff_mean,ff_std,ece_mean,ece_std"]
    for method in sorted(by_method):
        slot = by_method[method]
        cells = [method, str(len(slot["faa"]))]
        for metric in ("faa", "ff", "ece"):
            values = slot[metric]
            if values:
                cells.append(repr(float(np.mean(values))))
                cells.append(repr(float(np.std(values))))
            else:
                cells.extend(["", ""])
        lines.append(",".join(cells))
    table = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    else:
        sys.stdout.write(table)
    return 0


# -- analyze ---------------------------------------------------------------------


def _load_run(run_dir):
    manifest = artifacts.load_manifest(run_dir)
    artifacts.require_complete(manifest, run_dir)
    config = artifacts.coerce_config(
        {k: v for k, v in manifest["config"].items()}
    )
    stream = artifacts.build_stream(config)
    return manifest, config, stream


def _load_checkpoint(run_dir, manifest, index: int) -> MLP:
    paths = manifest["artifacts"].get("checkpoints") or []
    if not paths:
        raise MissingArtifactError(f"run {run_dir} has no checkpoints")
    if index < 0:
        index += len(paths)
    if not 0 <= index < len(paths):
        raise MissingArtifactError(
            f"run {run_dir} has {len(paths)} checkpoints; index {index} unavailable"
        )
    return MLP.load(Path(run_dir) / paths[index])


def _load_buffer(run_dir, manifest) -> RehearsalBuffer:
    name = manifest["artifacts"].get("buffer")
    if not name or not (Path(run_dir) / name).exists():
        raise MissingArtifactError(f"run {run_dir} has no saved buffer")
    return RehearsalBuffer.load(Path(run_dir) / name)


def _cmd_analyze(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    manifest, config, stream = _load_run(run_dir)
    run_id = manifest["run_id"]
    records: list[dict] = []

    if args.probe == "flatness":
        model = _load_checkpoint(run_dir, manifest, -1)
        alphas = [float(v) for v in args.alphas.split(",")]
        report = analysis.flatness_report(
            model, stream, alphas, args.samples, config["seed"], args.split
        )
        lines = ["alpha,mean_loss"] + [
            f"{a},{v!r}" for a, v in zip(report.alphas, report.mean_losses)
        ]
        (run_dir / "flatness.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        records = [
            {"run_id": run_id, "metric": "noisy_loss", "value": v, "scope": f"alpha={a}"}
            for a, v in zip(report.alphas, report.mean_losses)
        ]
        artifacts.write_jsonl(run_dir / "flatness.jsonl", records)
        print(run_dir / "flatness.csv")

    elif args.probe == "fisher":
        model = _load_checkpoint(run_dir, manifest, -1)
        value = analysis.fisher_trace(model, stream, args.split)
        records = [{"run_id": run_id, "metric": "fisher_trace", "value": value, "scope": args.split}]
        artifacts.write_jsonl(run_dir / "fisher.jsonl", records)
        print(run_dir / "fisher.jsonl")

    elif args.probe == "offline":
        buffer = _load_buffer(run_dir, manifest)
        value = analysis.offline_buffer_retrain(
            buffer,
            stream,
            mode=args.mode,
            epochs=args.retrain_epochs,
            seed=config["seed"],
            hidden_sizes=config["hidden_sizes"],
        )
        records = [
            {"run_id": run_id, "metric": "offline_accuracy", "value": value, "scope": args.mode}
        ]
        artifacts.write_jsonl(run_dir / f"offline_{args.mode}.jsonl", records)
        print(run_dir / f"offline_{args.mode}.jsonl")

    elif args.probe == "transfer":
        source = args.source_task
        if source is None:
            source = stream.num_tasks - 2
        model = _load_checkpoint(run_dir, manifest, source)
        shots = [int(v) for v in args.shots.split(",")]
        lines = ["source,target,shots,accuracy"]
        for target in range(source + 1, stream.num_tasks):
            curve = analysis.transfer_curve(model, stream, source, target, shots, config["seed"])
            for k, acc in zip(curve.shots, curve.accuracies):
                lines.append(f"{source},{target},{k},{acc!r}")
        auc = analysis.transfer_auc(model, stream, source, shots, config["seed"])
        (run_dir / f"transfer_{source}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        records = [
            {"run_id": run_id, "metric": "transfer_auc", "value": auc, "scope": f"source={source}"}
        ]
        artifacts.write_jsonl(run_dir / f"transfer_{source}.jsonl", records)
        print(run_dir / f"transfer_{source}.csv")

    elif args.probe == "bias":
        model = _load_checkpoint(run_dir, manifest, -1)
        buffer = _load_buffer(run_dir, manifest)
        y_per = stream.classes_per_task
        final = stream.num_tasks - 1
        test_x, test_y = stream.all_test()
        pred = np.argmax(model.logits(test_x), axis=1)
        hist = metrics.error_head_histogram(test_y, pred, final, y_per)
        lines = ["head,error_fraction"] + [f"{h},{v!r}" for h, v in enumerate(hist)]
        (run_dir / "error_heads.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        profile = metrics.avg_logit_profile(buffer.stored_logits, buffer.stored_labels)
        lines = ["logit,mean_value"] + [f"{i},{v!r}" for i, v in enumerate(profile)]
        (run_dir / "buffer_logit_profile.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        future_mean = metrics.stored_future_logit_mean(buffer, y_per)
        records = [
            {"run_id": run_id, "metric": "buffer_future_logit_mean", "value": future_mean, "scope": "buffer"}
        ]
        artifacts.write_jsonl(run_dir / "bias.jsonl", records)
        print(run_dir / "error_heads.csv")

    elif args.probe == "prealloc":
        if not args.heads:
            raise ConfigError("prealloc probe needs --heads, e.g. --heads 0,2,4")
        heads = [int(v) for v in args.heads.split(",")]
        params = artifacts.estimator_params(config)
        results = analysis.preallocation_sweep(stream, heads, params)
        lines = ["preallocated_heads,faa"] + [f"{k},{v!r}" for k, v in sorted(results.items())]
        (run_dir / "prealloc.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(run_dir / "prealloc.csv")

    return 0


# -- generate-stream ---------------------------------------------------------------


def _cmd_generate(args: argparse.Namespace) -> int:
    stream = generate_blob_stream(
        args.tasks,
        args.classes_per_task,
        args.n_per_class,
        args.dim,
        args.separation,
        args.seed,
    )
    xs, ys = [], []
    for task in stream.tasks:
        xs.extend([task.train_x, task.test_x])
        ys.extend([task.train_y, task.test_y])
    save_dataset(args.out, np.concatenate(xs), np.concatenate(ys))
    print(args.out)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "generate-stream":
            return _cmd_generate(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
