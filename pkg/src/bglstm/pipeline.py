"""Dataset pipeline glue: scene datasets on disk, flow precomputation,
cuboid preparation and scene-level model evaluation.

Disk layout for one scene:

    <root>/<scene_id>/train/manifest.json, labels.csv, seq000/frame0000.pgm ...
    <root>/<scene_id>/test/manifest.json,  labels.csv, seq000/frame0000.pgm ...

Flow preprocessing adds, per split, flow files (.flo), rendered flow frames
(.pgm) and per-kind normalization constants. Constants (render scale,
standardization mean/std) always come from the train split so evaluation
never sees test statistics.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    DatasetManifest,
    SceneConfig,
    aggregate_frame_scores,
    build_cuboids,
    build_cuboids_strides,
    normalization_constants,
    preprocess_sequence,
    split_train_val,
    stack_cuboids,
    synth_generate,
    write_labels_csv,
)
from .errors import ConfigError, InvalidInputError, ShapeError
from .flow import (
    farneback_dense,
    flow_magnitude,
    flow_to_frame,
    lucas_kanade,
    read_pgm,
    render_sparse_flow,
    select_features,
    write_flo,
    write_pgm,
)
from .metrics import (
    auc,
    eer,
    reconstruction_errors,
    regularity_score,
    roc_points,
)
from .network import Autoencoder, model_forward

INPUT_KINDS = ("raw", "dense", "sparse")


# ---------------------------------------------------------------------------
# dataset generation

def write_scene_dataset(cfg: SceneConfig, root) -> Path:
    """Generate a scene and write both splits; returns the scene directory."""
    scene_dir = Path(root) / cfg.scene_id
    train_seqs, test_seqs = synth_generate(cfg)
    for split, seqs in (("train", train_seqs), ("test", test_seqs)):
        split_dir = scene_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        frame_files, labels, seq_index = [], [], []
        for si, seq in enumerate(seqs):
            seq_dir = split_dir / f"seq{si:03d}"
            seq_dir.mkdir(exist_ok=True)
            for fi, frame in enumerate(seq.frames):
                rel = f"seq{si:03d}/frame{fi:04d}.pgm"
                write_pgm(split_dir / rel, frame)
                frame_files.append(rel)
                labels.append(int(seq.labels[fi]))
                seq_index.append(si)
        manifest = DatasetManifest(
            scene_id=cfg.scene_id,
            split=split,
            frame_files=frame_files,
            labels=labels,
            sequence_index=seq_index,
            created_with_seed=cfg.seed,
        )
        if split == "train":
            frames = np.stack([read_pgm(split_dir / f) for f in frame_files])
            manifest.mean, manifest.std = normalization_constants(frames)
        manifest.save(split_dir / "manifest.json")
        write_labels_csv(split_dir / "labels.csv", labels)
    return scene_dir


def load_manifest(scene_dir, split: str) -> DatasetManifest:
    path = Path(scene_dir) / split / "manifest.json"
    if not path.exists():
        raise InvalidInputError(f"missing manifest {path}")
    return DatasetManifest.load(path)


def _load_frames(split_dir: Path, files) -> np.ndarray:
    return np.stack([read_pgm(split_dir / f) for f in files])


# ---------------------------------------------------------------------------
# flow preprocessing

@dataclass
class FlowParams:
    levels: int = 1
    window_sigma: float = 1.5
    iterations: int = 5
    lk_window: int = 9
    lk_max_points: int = 40


def _sequence_flows(frames: np.ndarray, kind: str, params: FlowParams):
    """Flow fields between consecutive frames of one sequence."""
    flows = []
    for a, b in zip(frames[:-1], frames[1:]):
        if kind == "dense":
            flows.append(farneback_dense(a, b, params.levels, params.window_sigma,
                                         params.iterations))
        else:
            pts = select_features(a, params.lk_max_points,
                                  min_distance=max(3, params.lk_window // 2),
                                  window=5)
            r = params.lk_window // 2
            h, w = a.shape
            pts = [(x, y) for x, y in pts
                   if r <= x <= w - 1 - r and r <= y <= h - 1 - r]
            flows.append(lucas_kanade(a, b, pts, params.lk_window) if pts else None)
    return flows


def _sparse_max_mag(sparse_flows) -> float:
    mags = [
        float(np.hypot(sf.flow[sf.tracked, 0], sf.flow[sf.tracked, 1]).max())
        for sf in sparse_flows
        if sf is not None and sf.tracked.any()
    ]
    return max(mags) if mags else 0.0


def compute_flows(scene_dir, kind: str, params: FlowParams | None = None) -> None:
    """Compute flow for both splits of a scene and render training frames.

    The render scale (max magnitude) is fixed on the train split and reused
    for the test split so magnitudes stay comparable; the first rendered
    frame of each sequence is duplicated so every video keeps its frame count.
    """
    if kind not in ("dense", "sparse"):
        raise ConfigError(f"flow kind must be dense or sparse, got {kind!r}")
    params = params or FlowParams()
    scene_dir = Path(scene_dir)

    per_split_flows = {}
    for split in ("train", "test"):
        manifest = load_manifest(scene_dir, split)
        split_dir = scene_dir / split
        seq_flows = []
        for start, stop in manifest.sequence_slices():
            frames = _load_frames(split_dir, manifest.frame_files[start:stop])
            seq_flows.append(_sequence_flows(frames, kind, params))
        per_split_flows[split] = seq_flows

    # shared render normalization from the train split only
    if kind == "dense":
        mags = [flow_magnitude(fl).max() for seq in per_split_flows["train"] for fl in seq]
        max_mag = float(max(mags)) if mags else 0.0
    else:
        max_mag = max(
            (_sparse_max_mag(seq) for seq in per_split_flows["train"]), default=0.0
        )
    if max_mag <= 0.0:
        max_mag = 1.0  # static training scene; render everything dark

    for split in ("train", "test"):
        manifest = load_manifest(scene_dir, split)
        split_dir = scene_dir / split
        flow_dir = split_dir / f"flow-{kind}"
        flow_dir.mkdir(exist_ok=True)
        flow_files, rendered_files = [], []
        slices = manifest.sequence_slices()
        for si, ((start, stop), flows) in enumerate(zip(slices, per_split_flows[split])):
            shape = read_pgm(split_dir / manifest.frame_files[start]).shape
            rendered = []
            for fi, fl in enumerate(flows):
                if kind == "dense":
                    rel_flo = f"flow-{kind}/seq{si:03d}_pair{fi:04d}.flo"
                    write_flo(split_dir / rel_flo, fl)
                    flow_files.append(rel_flo)
                    rendered.append(flow_to_frame(fl, max_mag))
                else:
                    dense_equiv = np.zeros(shape + (2,))
                    if fl is not None:
                        rendered.append(render_sparse_flow(fl, shape, max_mag))
                        for (x, y), (u, v), ok in zip(fl.points, fl.flow, fl.tracked):
                            if ok:
                                dense_equiv[int(round(y)), int(round(x))] = (u, v)
                    else:
                        rendered.append(np.zeros(shape))
                    rel_flo = f"flow-{kind}/seq{si:03d}_pair{fi:04d}.flo"
                    write_flo(split_dir / rel_flo, dense_equiv)
                    flow_files.append(rel_flo)
            rendered.insert(0, rendered[0].copy())  # keep frame count parity
            for fi, frame in enumerate(rendered):
                rel = f"flow-{kind}/seq{si:03d}_frame{fi:04d}.pgm"
                write_pgm(split_dir / rel, frame)
                rendered_files.append(rel)
        entry = {
            "flow_files": flow_files,
            "rendered_files": rendered_files,
            "render_max_mag": max_mag,
        }
        if split == "train":
            frames = _load_frames(split_dir, rendered_files)
            mean, std = normalization_constants(frames)
            entry["mean"] = mean
            entry["std"] = std
        manifest.flows[kind] = entry
        manifest.flow_files = [
            f for k in sorted(manifest.flows) for f in manifest.flows[k]["flow_files"]
        ]
        manifest.save(split_dir / "manifest.json")


# ---------------------------------------------------------------------------
# cuboid preparation

def input_constants(scene_dir, kind: str):
    """Standardization constants for an input kind, always from train."""
    train_manifest = load_manifest(scene_dir, "train")
    if kind == "raw":
        if train_manifest.mean is None:
            raise InvalidInputError("train manifest has no raw normalization constants")
        return train_manifest.mean, train_manifest.std
    if kind not in train_manifest.flows:
        raise InvalidInputError(
            f"no {kind} flow data for scene; run the flow step first"
        )
    entry = train_manifest.flows[kind]
    return entry["mean"], entry["std"]


def split_frame_files(manifest: DatasetManifest, kind: str):
    """Per-sequence frame file lists for the chosen input kind."""
    if kind == "raw":
        files = manifest.frame_files
    else:
        if kind not in manifest.flows:
            raise InvalidInputError(f"manifest has no {kind} flow entries")
        files = manifest.flows[kind]["rendered_files"]
    slices = manifest.sequence_slices()
    return [files[start:stop] for start, stop in slices]


def load_split_vectors(scene_dir, split: str, kind: str, target_hw: tuple):
    """Per-sequence standardized frame matrices plus per-sequence labels."""
    if kind not in INPUT_KINDS:
        raise ConfigError(f"input kind must be one of {INPUT_KINDS}")
    mean, std = input_constants(scene_dir, kind)
    manifest = load_manifest(scene_dir, split)
    split_dir = Path(scene_dir) / split
    per_seq_vectors = []
    per_seq_labels = []
    for files, (start, stop) in zip(split_frame_files(manifest, kind),
                                    manifest.sequence_slices()):
        frames = _load_frames(split_dir, files)
        per_seq_vectors.append(preprocess_sequence(frames, mean, std, target_hw))
        per_seq_labels.append(np.asarray(manifest.labels[start:stop]))
    return per_seq_vectors, per_seq_labels


def training_cuboids(scene_dir, kind: str, seq_len: int, strides, target_hw: tuple):
    """Stacked (N, T, frame_dim) train cuboids split 85/15 train/val."""
    per_seq, _ = load_split_vectors(scene_dir, "train", kind, target_hw)
    cuboids = []
    for vectors in per_seq:
        cuboids.extend(build_cuboids_strides(vectors, seq_len, strides))
    train, val = split_train_val(cuboids)
    return stack_cuboids(train), stack_cuboids(val)


# ---------------------------------------------------------------------------
# scene evaluation

@dataclass
class VideoScores:
    rec_err: np.ndarray
    reg_score: np.ndarray
    labels: np.ndarray


@dataclass
class EvalResult:
    auc: float
    eer: float
    fps: float
    curve: object
    videos: list = field(default_factory=list)

    @property
    def pooled_scores(self) -> np.ndarray:
        return np.concatenate([v.rec_err for v in self.videos])

    @property
    def pooled_labels(self) -> np.ndarray:
        return np.concatenate([v.labels for v in self.videos])


def _batched_forward(model: Autoencoder, cuboids: np.ndarray, batch_size: int) -> np.ndarray:
    outs = [
        model_forward(model, cuboids[i : i + batch_size], train=False)
        for i in range(0, len(cuboids), batch_size)
    ]
    return np.concatenate(outs, axis=0)


def evaluate_sequences(
    model: Autoencoder,
    per_seq_vectors: list,
    per_seq_labels: list,
    batch_size: int = 8,
    range_denominator: bool = False,
) -> EvalResult:
    """Frame-level anomaly evaluation over one split's sequences.

    Reconstruction errors are computed per cuboid frame, averaged onto source
    frames, pooled across videos for the ROC (higher error = anomalous), and
    normalized per video into regularity scores for export.
    """
    seq_len = model.config.seq_len
    videos = []
    frames_scored = 0
    t0 = time.perf_counter()
    for vectors, labels in zip(per_seq_vectors, per_seq_labels):
        if vectors.shape[1] != model.config.frame_dim:
            raise ShapeError(
                f"scene frame_dim {vectors.shape[1]} does not match model "
                f"{model.config.frame_dim}"
            )
        cuboids = build_cuboids(vectors, seq_len, 1)
        stacked = stack_cuboids(cuboids)
        recon = _batched_forward(model, stacked, batch_size)
        per_step = reconstruction_errors(stacked, recon)
        rec = aggregate_frame_scores(cuboids, per_step, len(vectors))
        videos.append(VideoScores(rec, regularity_score(rec, range_denominator), labels))
        frames_scored += len(vectors)
    wall = time.perf_counter() - t0

    scores = np.concatenate([v.rec_err for v in videos])
    labels = np.concatenate([v.labels for v in videos])
    curve = roc_points(scores, labels)
    return EvalResult(
        auc=auc(curve),
        eer=eer(curve),
        fps=frames_scored / wall if wall > 0 else float("inf"),
        curve=curve,
        videos=videos,
    )


def evaluate_scene(model: Autoencoder, scene_dir, kind: str, target_hw: tuple,
                   batch_size: int = 8, range_denominator: bool = False) -> EvalResult:
    per_seq, labels = load_split_vectors(scene_dir, "test", kind, target_hw)
    return evaluate_sequences(model, per_seq, labels, batch_size, range_denominator)
