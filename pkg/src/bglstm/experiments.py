"""Experiment harnesses: the two-scene synthetic benchmark, input- and
component-ablation suites, cross-scene generalization and efficiency runs.

The benchmark pairs one scene whose anomaly is a speed outlier with one whose
anomaly is a direction outlier, so appearance-based and motion-based inputs
are stressed differently. Ablation tables follow the report schema
(method, scene, seed, AUC, EER, train_seconds_per_epoch, test_fps) with a
median row per (method, scene) group.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cells
from .cells import CellVariant
from .data import AnomalySpec, SceneConfig
from .errors import ShapeError
from .network import AutoencoderConfig, build_autoencoder
from .pipeline import (
    EvalResult,
    compute_flows,
    evaluate_sequences,
    load_split_vectors,
    training_cuboids,
    write_scene_dataset,
)
from .training import train_model

VARIANT_LABELS = {
    "standard": "standard-lstm",
    "no_input_gate": "lstm-no-input-gate",
    "bi_gated": "bi-gated-lstm",
}

REPORT_FIELDS = ("method", "scene", "seed", "auc", "eer",
                 "train_seconds_per_epoch", "test_fps")


def benchmark_scene_configs(height: int = 32, width: int = 32, base_seed: int = 11) -> dict:
    """The two desk-scale scenes used by every experiment suite."""
    scene_a = SceneConfig(
        scene_id="sceneA",
        height=height,
        width=width,
        n_train_sequences=2,
        n_test_sequences=2,
        frames_per_sequence=96,
        object_count=3,
        size_range=(2.0, 3.0),
        speed_range=(0.8, 1.5),
        directions=("east",),
        anomaly=AnomalySpec("fast-object", 36, 26),
        seed=base_seed,
    )
    scene_b = SceneConfig(
        scene_id="sceneB",
        height=height,
        width=width,
        n_train_sequences=2,
        n_test_sequences=2,
        frames_per_sequence=96,
        object_count=3,
        size_range=(2.0, 3.0),
        speed_range=(0.8, 1.5),
        directions=("north",),
        anomaly=AnomalySpec("wrong-direction", 36, 26),
        seed=base_seed + 1,
    )
    return {"sceneA": scene_a, "sceneB": scene_b}


# benchmark learning rate: the CLI's 1e-5 default suits long full-size runs;
# within this epoch budget it barely moves the weights
BENCHMARK_LR = 1e-3
BENCHMARK_EPOCHS = 30
ABLATION_EPOCHS = 12


@dataclass
class SceneData:
    """In-memory view of one scene for repeated training runs."""

    scene_dir: Path
    frame_hw: tuple
    train_cuboids: dict = field(default_factory=dict)  # kind -> (train, val)
    test_vectors: dict = field(default_factory=dict)   # kind -> (per_seq, labels)

    def ensure_kind(self, kind: str, seq_len: int, strides=(1,)):
        if kind not in self.train_cuboids:
            self.train_cuboids[kind] = training_cuboids(
                self.scene_dir, kind, seq_len, strides, self.frame_hw
            )
            self.test_vectors[kind] = load_split_vectors(
                self.scene_dir, "test", kind, self.frame_hw
            )


def prepare_benchmark(root, kinds=("dense",), configs: dict | None = None,
                      flow_params=None) -> dict:
    """Generate scene datasets and flow data; returns scene_id -> SceneData."""
    configs = configs or benchmark_scene_configs()
    scenes = {}
    for scene_id, cfg in configs.items():
        scene_dir = write_scene_dataset(cfg, root)
        for kind in kinds:
            if kind in ("dense", "sparse"):
                compute_flows(scene_dir, kind, flow_params)
        scenes[scene_id] = SceneData(scene_dir, (cfg.height, cfg.width))
    return scenes


@dataclass
class RunRecord:
    method: str
    scene: str
    seed: int
    auc: float
    eer: float
    train_seconds_per_epoch: float
    test_fps: float

    def as_row(self) -> dict:
        return {
            "method": self.method,
            "scene": self.scene,
            "seed": self.seed,
            "auc": f"{self.auc:.6f}",
            "eer": f"{self.eer:.6f}",
            "train_seconds_per_epoch": f"{self.train_seconds_per_epoch:.4f}",
            "test_fps": f"{self.test_fps:.2f}",
        }


def train_and_score(
    scene: SceneData,
    scene_id: str,
    kind: str,
    variant: CellVariant,
    seed: int,
    epochs: int,
    lr: float = BENCHMARK_LR,
    seq_len: int = 4,
    batch_size: int = 8,
    method: str | None = None,
):
    """One benchmark training run; returns (RunRecord, best-epoch model)."""
    scene.ensure_kind(kind, seq_len)
    train, val = scene.train_cuboids[kind]
    test_vecs, test_labels = scene.test_vectors[kind]
    frame_dim = train.shape[-1]
    model = build_autoencoder(
        AutoencoderConfig(frame_dim=frame_dim, seq_len=seq_len, variant=variant, seed=seed)
    )

    def eval_fn(m):
        r = evaluate_sequences(m, test_vecs, test_labels, batch_size)
        return r.auc, r.eer

    result = train_model(
        model, train, val,
        epochs=epochs, batch_size=batch_size, lr=lr,
        shuffle_seed=seed, eval_fn=eval_fn,
    )
    best = result.restore_best()
    final = evaluate_sequences(best, test_vecs, test_labels, batch_size)
    sec_per_epoch = float(np.median([h.wall_seconds for h in result.history]))
    record = RunRecord(
        method=method or VARIANT_LABELS[variant.tag],
        scene=scene_id,
        seed=seed,
        auc=final.auc,
        eer=final.eer,
        train_seconds_per_epoch=sec_per_epoch,
        test_fps=final.fps,
    )
    return record, best


def _median_rows(records: list) -> list:
    rows = []
    groups = sorted({(r.method, r.scene) for r in records})
    for method, scene in groups:
        sub = [r for r in records if r.method == method and r.scene == scene]
        rows.append(RunRecord(
            method=method,
            scene=scene,
            seed=-1,
            auc=float(np.median([r.auc for r in sub])),
            eer=float(np.median([r.eer for r in sub])),
            train_seconds_per_epoch=float(np.median([r.train_seconds_per_epoch for r in sub])),
            test_fps=float(np.median([r.test_fps for r in sub])),
        ))
    return rows


def write_report_csv(path, records: list, include_medians: bool = True) -> None:
    rows = [r.as_row() for r in records]
    if include_medians:
        for r in _median_rows(records):
            row = r.as_row()
            row["seed"] = "median"
            rows.append(row)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def run_ablation(
    suite: str,
    scenes: dict,
    seeds=(100, 101, 102),
    epochs: int = ABLATION_EPOCHS,
    lr: float = BENCHMARK_LR,
    out_csv=None,
    keep_models: bool = False,
):
    """Input-based or component-based ablation over the benchmark scenes.

    input suite: bi-gated cell trained on raw frames vs dense-flow frames
    (vs sparse when present on disk). component suite: the three cell
    variants trained on dense flow. Returns (records, models).
    """
    if suite == "input":
        combos = [("raw", cells.bi_gated(), "bi-gated-lstm(raw)"),
                  ("sparse", cells.bi_gated(), "bi-gated-lstm(sparse)"),
                  ("dense", cells.bi_gated(), "bi-gated-lstm(dense)")]
    elif suite == "component":
        combos = [("dense", cells.standard(), None),
                  ("dense", cells.no_input_gate(), None),
                  ("dense", cells.bi_gated(), None)]
    else:
        raise ValueError(f"unknown ablation suite {suite!r}")

    records = []
    models = {}
    for scene_id, scene in sorted(scenes.items()):
        for kind, variant, method in combos:
            for seed in seeds:
                rec, model = train_and_score(
                    scene, scene_id, kind, variant, seed, epochs, lr, method=method
                )
                records.append(rec)
                if keep_models:
                    models[(scene_id, rec.method, seed)] = model
    if out_csv is not None:
        write_report_csv(out_csv, records)
    return records, models


def median_auc_by_method(records: list) -> dict:
    """method -> median over seeds of the scene-averaged AUC."""
    seeds = sorted({r.seed for r in records})
    methods = sorted({r.method for r in records})
    out = {}
    for method in methods:
        per_seed = []
        for seed in seeds:
            vals = [r.auc for r in records if r.method == method and r.seed == seed]
            if vals:
                per_seed.append(float(np.mean(vals)))
        out[method] = float(np.median(per_seed))
    return out


def run_generalization(model, foreign_scene_dir, kind: str, frame_hw: tuple,
                       batch_size: int = 8) -> EvalResult:
    """Evaluate a frozen model on another scene's test split (no retraining).

    The foreign scene supplies its own preprocessing constants and per-video
    regularity normalization; AUC/EER come from the pooled frame errors, the
    same path as same-scene evaluation.
    """
    per_seq, labels = load_split_vectors(foreign_scene_dir, "test", kind, frame_hw)
    if per_seq[0].shape[1] != model.config.frame_dim:
        raise ShapeError(
            f"foreign scene frame_dim {per_seq[0].shape[1]} does not match "
            f"model {model.config.frame_dim}"
        )
    return evaluate_sequences(model, per_seq, labels, batch_size)


def cross_scene_matrix(models: dict, scenes: dict, kind: str, out_csv=None) -> list:
    """Evaluate every trained model on every scene; rows of the full matrix."""
    rows = []
    for train_scene, model in sorted(models.items()):
        for eval_scene, scene in sorted(scenes.items()):
            res = run_generalization(model, scene.scene_dir, kind, scene.frame_hw)
            rows.append({
                "train_scene": train_scene,
                "eval_scene": eval_scene,
                "auc": f"{res.auc:.6f}",
                "eer": f"{res.eer:.6f}",
            })
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=("train_scene", "eval_scene", "auc", "eer")
            )
            writer.writeheader()
            writer.writerows(rows)
    return rows


def efficiency_bench(scene: SceneData, scene_id: str, kind: str = "dense",
                     runs: int = 3, epochs: int = 1, seq_len: int = 4,
                     lr: float = BENCHMARK_LR, out_csv=None) -> list:
    """Per-variant training time and inference fps on one identical workload."""
    records = []
    for variant in (cells.standard(), cells.no_input_gate(), cells.bi_gated()):
        for run in range(runs):
            rec, _ = train_and_score(
                scene, scene_id, kind, variant, seed=500 + run, epochs=epochs, lr=lr
            )
            records.append(rec)
    if out_csv is not None:
        write_report_csv(out_csv, records)
    return records
