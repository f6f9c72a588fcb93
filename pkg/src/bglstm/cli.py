"""Command-line entry point.

Subcommands: gen-data, flow, train, eval, ablate, generalize, bench.
Flags mirror the run-configuration keys; a JSON config file may supply any
of them, with explicit flags taking precedence. The only environment
variable honoured is BGLSTM_OUTPUT_ROOT, the base for relative output paths.

Exit codes: 0 success, 1 usage, 2 I/O failure, 3 degenerate training data,
4 evaluation/model mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from . import cells, experiments
from .data import AnomalySpec, SceneConfig
from .errors import (
    BglstmError,
    ConfigError,
    DegenerateDataError,
    InvalidInputError,
    ModelFormatError,
    ShapeError,
)
from .model_io import adam_from_arrays, adam_to_arrays, load_model, save_model
from .network import Autoencoder, AutoencoderConfig, build_autoencoder
from .optim import init_adam
from .pipeline import (
    FlowParams,
    compute_flows,
    evaluate_sequences,
    load_split_vectors,
    training_cuboids,
    write_scene_dataset,
)
from .training import train_model

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DEGENERATE = 3
EXIT_EVAL = 4

VARIANTS = {
    "standard": cells.standard,
    "no_input_gate": cells.no_input_gate,
    "bi_gated": cells.bi_gated,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def resolve_out(path) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    return Path(os.environ.get("BGLSTM_OUTPUT_ROOT", ".")) / p


def _parse_stride_set(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).split(","))


def make_variant(name: str, ungated_candidate: bool = False):
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    if name == "bi_gated":
        return cells.bi_gated(ungated_candidate=ungated_candidate)
    if ungated_candidate:
        raise ConfigError("--ungated-candidate only applies to the bi_gated variant")
    return VARIANTS[name]()


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    out = resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.scene_config:
        payload = json.loads(Path(args.scene_config).read_text())
        payload.setdefault("seed", args.seed)
        payload["anomaly"] = AnomalySpec(**payload["anomaly"])
        configs = [SceneConfig(**payload)]
    else:
        configs = list(experiments.benchmark_scene_configs(base_seed=args.seed).values())
    for cfg in configs:
        scene_dir = write_scene_dataset(cfg, out)
        print(f"wrote {cfg.scene_id} -> {scene_dir}")
    return EXIT_OK


def cmd_flow(args) -> int:
    params = FlowParams(levels=args.levels, window_sigma=args.window_sigma,
                        iterations=args.iterations)
    for kind in args.kind.split(","):
        compute_flows(args.dataset, kind.strip(), params)
        print(f"computed {kind} flow for {args.dataset}")
    return EXIT_OK


@dataclass
class _TrainSetup:
    model: Autoencoder
    adam_state: object
    start_epoch: int


def _training_setup(args, frame_dim: int, variant) -> _TrainSetup:
    if args.resume:
        snap = load_model(args.resume)
        model = Autoencoder.from_snapshot(snap)
        if snap.optimizer is None:
            raise InvalidInputError(f"{args.resume} has no optimizer state; cannot resume")
        state = adam_from_arrays(*snap.optimizer)
        return _TrainSetup(model, state, int(snap.metadata.get("epoch", -1)) + 1)
    config = AutoencoderConfig(
        frame_dim=frame_dim, seq_len=args.seq_len, variant=variant, seed=args.seed
    )
    model = build_autoencoder(config)
    return _TrainSetup(model, init_adam(model.params(), lr=args.lr), 0)


def _append_log(path: Path, record) -> None:
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(["epoch", "train_loss", "val_loss", "wall_seconds",
                             "val_auc", "val_eer"])
        writer.writerow([
            record.epoch, f"{record.train_loss:.10g}", f"{record.val_loss:.10g}",
            f"{record.wall_seconds:.4f}",
            "" if record.val_auc is None else f"{record.val_auc:.6f}",
            "" if record.val_eer is None else f"{record.val_eer:.6f}",
        ])


def cmd_train(args) -> int:
    variant = make_variant(args.variant, args.ungated_candidate)
    scene_dir = Path(args.dataset)
    hw = _scene_frame_hw(scene_dir)
    strides = _parse_stride_set(args.stride_set)
    train, val = training_cuboids(scene_dir, args.input_kind, args.seq_len, strides, hw)
    test_vecs, test_labels = load_split_vectors(scene_dir, "test", args.input_kind, hw)

    run_name = args.run_name or (
        f"train-{args.variant}-{args.input_kind}-seed{args.seed}-{int(time.time())}"
    )
    run_dir = resolve_out(args.out) / run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    log_path = run_dir / "log.csv"

    setup = _training_setup(args, train.shape[-1], variant)
    loss_history = []

    def eval_fn(m):
        r = evaluate_sequences(m, test_vecs, test_labels, args.batch_size)
        return r.auc, r.eer

    def epoch_callback(model, record, state):
        loss_history.append(record.train_loss)
        _append_log(log_path, record)
        snap = model.to_snapshot(
            metadata={
                "epoch": record.epoch,
                "seed": args.seed,
                "variant": variant.tag,
                "input_kind": args.input_kind,
                "scene": scene_dir.name,
                "loss_history": loss_history.copy(),
            },
            optimizer=adam_to_arrays(state),
        )
        save_model(snap, run_dir / f"model-epoch{record.epoch:04d}.bglm")

    result = train_model(
        setup.model, train, val,
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        shuffle_seed=args.seed, eval_fn=eval_fn, epoch_callback=epoch_callback,
        adam_state=setup.adam_state, start_epoch=setup.start_epoch,
    )
    best = result.restore_best()
    best_snap = best.to_snapshot(
        metadata={
            "epoch": result.best_epoch,
            "seed": args.seed,
            "variant": variant.tag,
            "input_kind": args.input_kind,
            "scene": scene_dir.name,
            "loss_history": loss_history,
            "best": True,
        }
    )
    save_model(best_snap, run_dir / "model-best.bglm")
    last = result.history[-1]
    print(f"run {run_name}: best epoch {result.best_epoch} "
          f"val_auc={max(h.val_auc for h in result.history):.4f} "
          f"final train_loss={last.train_loss:.6f}")
    print(f"artifacts in {run_dir}")
    return EXIT_OK


def _scene_frame_hw(scene_dir: Path) -> tuple:
    from .flow import read_pgm
    from .pipeline import load_manifest

    manifest = load_manifest(scene_dir, "train")
    frame = read_pgm(Path(scene_dir) / "train" / manifest.frame_files[0])
    return frame.shape


def cmd_eval(args) -> int:
    snap = load_model(args.model)
    model = Autoencoder.from_snapshot(snap)
    scene_dir = Path(args.dataset)
    hw = _scene_frame_hw(scene_dir)
    per_seq, labels = load_split_vectors(scene_dir, "test", args.input_kind, hw)
    result = evaluate_sequences(model, per_seq, labels, args.batch_size,
                                range_denominator=args.range_denominator)

    out_dir = resolve_out(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["auc", "eer", "test_fps"])
        writer.writerow([f"{result.auc:.6f}", f"{result.eer:.6f}", f"{result.fps:.2f}"])
    with open(out_dir / "roc.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "fpr", "tpr"])
        for thr, f, t in result.curve.points():
            writer.writerow([f"{thr:.10g}", f"{f:.6f}", f"{t:.6f}"])
    for vi, video in enumerate(result.videos):
        with open(out_dir / f"regularity-video{vi:03d}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame_index", "rec_err", "reg_score", "label"])
            for i, (e, s, lab) in enumerate(zip(video.rec_err, video.reg_score, video.labels)):
                writer.writerow([i, f"{e:.6f}", f"{s:.6f}", int(lab)])
    print(f"AUC={result.auc:.4f} EER={result.eer:.4f} fps={result.fps:.1f}")
    print(f"reports in {out_dir}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    seeds = tuple(int(s) for s in str(args.seeds).split(","))
    kinds = ("dense", "sparse") if args.suite == "input" else ("dense",)
    scenes = experiments.prepare_benchmark(resolve_out(args.bench_root), kinds=kinds)
    out_dir = resolve_out(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_csv = out_dir / f"ablation-{args.suite}.csv"
    records, _ = experiments.run_ablation(
        args.suite, scenes, seeds=seeds, epochs=args.epochs, out_csv=out_csv
    )
    medians = experiments.median_auc_by_method(records)
    for method, med in sorted(medians.items()):
        print(f"{method}: median AUC {med:.4f}")
    print(f"report: {out_csv}")
    return EXIT_OK


def cmd_generalize(args) -> int:
    snap = load_model(args.model)
    model = Autoencoder.from_snapshot(snap)
    scene_dir = Path(args.dataset)
    hw = _scene_frame_hw(scene_dir)
    result = experiments.run_generalization(model, scene_dir, args.input_kind, hw)
    out_dir = resolve_out(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "generalization.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["train_scene", "eval_scene", "auc", "eer"])
        writer.writerow([snap.metadata.get("scene", "?"), scene_dir.name,
                         f"{result.auc:.6f}", f"{result.eer:.6f}"])
    print(f"foreign-scene AUC={result.auc:.4f} EER={result.eer:.4f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    scenes = experiments.prepare_benchmark(resolve_out(args.bench_root), kinds=["dense"])
    scene_id = args.scene
    if scene_id not in scenes:
        raise InvalidInputError(f"unknown benchmark scene {scene_id!r}")
    out_dir = resolve_out(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_csv = out_dir / "efficiency.csv"
    records = experiments.efficiency_bench(
        scenes[scene_id], scene_id, runs=args.runs, epochs=args.epochs, out_csv=out_csv
    )
    for rec in records:
        print(f"{rec.method} run: {rec.train_seconds_per_epoch:.3f}s/epoch "
              f"{rec.test_fps:.1f} fps")
    print(f"report: {out_csv}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _add_common(p, *, training: bool):
    p.add_argument("--config", help="JSON file supplying any of these options")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs", help="output directory (relative paths "
                   "resolve under BGLSTM_OUTPUT_ROOT)")
    if training:
        p.add_argument("--variant", default="bi_gated", choices=sorted(VARIANTS))
        p.add_argument("--ungated-candidate", action="store_true",
                       help="bi-gated cell update drops the input gate factor")
        p.add_argument("--input-kind", default="dense", choices=("raw", "dense", "sparse"))
        p.add_argument("--epochs", type=int, default=60)
        p.add_argument("--batch-size", type=int, default=8)
        p.add_argument("--lr", type=float, default=1e-5)
        p.add_argument("--seq-len", type=int, default=4)
        p.add_argument("--stride-set", default="1")


def build_parser() -> _Parser:
    parser = _Parser(prog="bglstm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic scene datasets")
    _add_common(p, training=False)
    p.add_argument("--scene-config", help="JSON SceneConfig; default: benchmark scenes")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("flow", help="compute optical flow for a scene dataset")
    _add_common(p, training=False)
    p.add_argument("--dataset", required=True, help="scene directory from gen-data")
    p.add_argument("--kind", default="dense", help="dense, sparse, or comma list")
    p.add_argument("--levels", type=int, default=1)
    p.add_argument("--window-sigma", type=float, default=1.5)
    p.add_argument("--iterations", type=int, default=5)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("train", help="train an autoencoder on one scene")
    _add_common(p, training=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--run-name", help="run directory name (default: derived + timestamp)")
    p.add_argument("--resume", help="model file to continue from (with optimizer state)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model file on a scene's test split")
    _add_common(p, training=False)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--input-kind", default="dense", choices=("raw", "dense", "sparse"))
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--range-denominator", action="store_true",
                   help="regularity score divides by max-min instead of max")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation suite on the benchmark scenes")
    _add_common(p, training=False)
    p.add_argument("--suite", required=True, choices=("input", "component"))
    p.add_argument("--bench-root", default="benchmark")
    p.add_argument("--seeds", default="100,101,102")
    p.add_argument("--epochs", type=int, default=experiments.ABLATION_EPOCHS)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("generalize", help="evaluate a trained model on a foreign scene")
    _add_common(p, training=False)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True, help="foreign scene directory")
    p.add_argument("--input-kind", default="dense", choices=("raw", "dense", "sparse"))
    p.set_defaults(func=cmd_generalize)

    p = sub.add_parser("bench", help="per-variant efficiency comparison")
    _add_common(p, training=False)
    p.add_argument("--bench-root", default="benchmark")
    p.add_argument("--scene", default="sceneA")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--epochs", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    return parser


def _apply_config_file(parser, argv):
    """Let a JSON config supply defaults; explicit flags still win."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return
    payload = {
        k.replace("-", "_"): v
        for k, v in json.loads(Path(known.config).read_text()).items()
    }
    sub_action = next(
        a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
    )
    for sp in sub_action.choices.values():
        sp.set_defaults(**payload)
        for action in sp._actions:
            if action.dest in payload:
                action.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    try:
        return args.func(args)
    except (ModelFormatError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EVAL
    except DegenerateDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (OSError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, BglstmError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
