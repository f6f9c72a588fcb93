"""Synthetic scene generation, frame preprocessing and cuboid construction.

A scene is a family of sequences showing soft-edged objects drifting along
fixed lanes at gentle speeds. Train sequences contain only this normal
motion; each test sequence embeds one anomalous object (too fast, against
the lane direction, or an unfamiliar shape) over a labelled frame window.
Everything is deterministic in the scene seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateDataError, InvalidInputError, ShapeError
from .flow import bilinear_sample
from .numerics import Rng

ANOMALY_KINDS = ("fast-object", "wrong-direction", "new-object-shape")
DIRECTIONS = {
    "east": (1.0, 0.0),
    "west": (-1.0, 0.0),
    "south": (0.0, 1.0),
    "north": (0.0, -1.0),
}
_OPPOSITE = {"east": "west", "west": "east", "north": "south", "south": "north"}


@dataclass(frozen=True)
class AnomalySpec:
    kind: str
    onset: int
    duration: int
    speed_factor: float = 3.0

    def __post_init__(self):
        if self.kind not in ANOMALY_KINDS:
            raise ConfigError(f"unknown anomaly kind {self.kind!r}")
        if self.onset < 0 or self.duration < 1:
            raise ConfigError("anomaly onset must be >= 0 and duration >= 1")


@dataclass(frozen=True)
class SceneConfig:
    scene_id: str
    height: int = 32
    width: int = 32
    n_train_sequences: int = 2
    n_test_sequences: int = 2
    frames_per_sequence: int = 100
    object_count: int = 3
    size_range: tuple = (2.0, 3.0)
    speed_range: tuple = (0.8, 1.5)
    directions: tuple = ("east",)
    anomaly: AnomalySpec = field(default_factory=lambda: AnomalySpec("fast-object", 40, 25))
    seed: int = 0

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ConfigError("scene frames must be at least 8x8")
        if self.frames_per_sequence < 2:
            raise ConfigError("sequences need at least 2 frames")
        if min(self.n_train_sequences, self.n_test_sequences, self.object_count) < 1:
            raise ConfigError("sequence and object counts must be >= 1")
        if self.anomaly.onset + self.anomaly.duration > self.frames_per_sequence:
            raise ConfigError("anomaly window exceeds the sequence length")
        bad = [d for d in self.directions if d not in DIRECTIONS]
        if bad or not self.directions:
            raise ConfigError(f"bad direction set {self.directions}")
        if not (0 < self.speed_range[0] <= self.speed_range[1]):
            raise ConfigError("speed_range must be positive and ordered")


@dataclass
class FrameSequence:
    frames: np.ndarray   # (N, H, W) in [0, 1]
    labels: np.ndarray   # (N,) int, 1 on anomalous frames
    scene_id: str
    sequence_id: str

    def __post_init__(self):
        if len(self.labels) != len(self.frames):
            raise ConfigError("labels must align with frames")


@dataclass
class Cuboid:
    """T stacked frame vectors plus the source indices they came from."""

    data: np.ndarray          # (T, frame_dim)
    frame_indices: tuple
    stride: int


@dataclass
class _MovingObject:
    x0: float
    y0: float
    vx: float
    vy: float
    half: float
    shape: str  # "disc" | "square"

    def render(self, canvas: np.ndarray, t: int) -> None:
        h, w = canvas.shape
        x = (self.x0 + self.vx * t) % w
        y = (self.y0 + self.vy * t) % h
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        # wrapped distances so objects glide smoothly across the frame edge
        dx = np.abs(xx - x)
        dx = np.minimum(dx, w - dx)
        dy = np.abs(yy - y)
        dy = np.minimum(dy, h - dy)
        if self.shape == "disc":
            val = np.clip(self.half + 0.5 - np.hypot(dx, dy), 0.0, 1.0)
        else:
            val = np.clip(self.half + 0.5 - np.maximum(dx, dy), 0.0, 1.0)
        np.maximum(canvas, val, out=canvas)


def _normal_objects(cfg: SceneConfig, rng: Rng) -> list:
    objs = []
    lanes_axis = "y" if DIRECTIONS[cfg.directions[0]][0] != 0 else "x"
    extent = cfg.height if lanes_axis == "y" else cfg.width
    for i in range(cfg.object_count):
        direction = cfg.directions[int(rng.integers(len(cfg.directions)))]
        ux, uy = DIRECTIONS[direction]
        speed = rng.uniform(None, cfg.speed_range[0], cfg.speed_range[1])
        half = rng.uniform(None, cfg.size_range[0], cfg.size_range[1])
        lane = (i + 1) * extent / (cfg.object_count + 1) + rng.uniform(None, -1.0, 1.0)
        phase_extent = cfg.width if ux != 0 else cfg.height
        phase = rng.uniform(None, 0.0, phase_extent)
        if ux != 0:
            x0, y0 = phase, lane
        else:
            x0, y0 = lane, phase
        objs.append(_MovingObject(x0, y0, ux * speed, uy * speed, half, "disc"))
    return objs


def _anomalous_object(cfg: SceneConfig, rng: Rng) -> _MovingObject:
    spec = cfg.anomaly
    direction = cfg.directions[0]
    speed = 0.5 * (cfg.speed_range[0] + cfg.speed_range[1])
    half = 0.5 * (cfg.size_range[0] + cfg.size_range[1])
    shape = "disc"
    if spec.kind == "fast-object":
        speed = spec.speed_factor * cfg.speed_range[1]
    elif spec.kind == "wrong-direction":
        direction = _OPPOSITE[direction]
    else:  # new-object-shape
        half = 2.2 * cfg.size_range[1]
        shape = "square"
    ux, uy = DIRECTIONS[direction]
    lane_extent = cfg.height if ux != 0 else cfg.width
    lane = lane_extent / 2.0 + rng.uniform(None, -2.0, 2.0)
    phase_extent = cfg.width if ux != 0 else cfg.height
    phase = rng.uniform(None, 0.0, phase_extent)
    if ux != 0:
        x0, y0 = phase, lane
    else:
        x0, y0 = lane, phase
    return _MovingObject(x0, y0, ux * speed, uy * speed, half, shape)


def _render_sequence(cfg: SceneConfig, rng: Rng, seq_id: str, with_anomaly: bool) -> FrameSequence:
    objs = _normal_objects(cfg, rng)
    labels = np.zeros(cfg.frames_per_sequence, dtype=np.int64)
    anom = None
    if with_anomaly:
        anom = _anomalous_object(cfg, rng)
        lo = cfg.anomaly.onset
        hi = lo + cfg.anomaly.duration
        labels[lo:hi] = 1
    frames = np.zeros((cfg.frames_per_sequence, cfg.height, cfg.width))
    for t in range(cfg.frames_per_sequence):
        for obj in objs:
            obj.render(frames[t], t)
        if anom is not None and labels[t]:
            anom.render(frames[t], t - cfg.anomaly.onset)
    return FrameSequence(frames, labels, cfg.scene_id, seq_id)


def synth_generate(cfg: SceneConfig):
    """Generate (train_sequences, test_sequences) deterministically from cfg.seed."""
    base = Rng(cfg.seed)
    train = [
        _render_sequence(cfg, base.child(0, i), f"train{i:03d}", with_anomaly=False)
        for i in range(cfg.n_train_sequences)
    ]
    test = [
        _render_sequence(cfg, base.child(1, i), f"test{i:03d}", with_anomaly=True)
        for i in range(cfg.n_test_sequences)
    ]
    return train, test


# ---------------------------------------------------------------------------
# preprocessing

def resize_bilinear(frame: np.ndarray, target_hw: tuple) -> np.ndarray:
    """Corner-aligned bilinear resize of a 2-D frame."""
    frame = np.asarray(frame, dtype=np.float64)
    th, tw = target_hw
    h, w = frame.shape
    if (h, w) == (th, tw):
        return frame.copy()
    ys = np.linspace(0.0, h - 1.0, th) if th > 1 else np.array([0.5 * (h - 1)])
    xs = np.linspace(0.0, w - 1.0, tw) if tw > 1 else np.array([0.5 * (w - 1)])
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(frame, gy, gx)


def normalization_constants(frames: np.ndarray):
    """Scalar (mean, std) over a stack of [0,1] frames; std guarded."""
    arr = np.asarray(frames, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std())
    if std < 1e-8:
        raise DegenerateDataError("frame stack has (near-)zero variance")
    return mean, std


def preprocess_frame(raw: np.ndarray, mean: float, std: float, target_hw: tuple) -> np.ndarray:
    """Resize, rescale 8-bit data to [0,1], standardize and flatten one frame."""
    arr = np.asarray(raw)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D frame, got {arr.shape}")
    if min(target_hw) < 8:
        raise InvalidInputError("target size must be at least 8x8")
    if std < 1e-8:
        raise DegenerateDataError("std below 1e-8; refusing to standardize")
    out = (resize_bilinear(arr, target_hw) - mean) / std
    return out.reshape(-1)


def preprocess_sequence(frames: np.ndarray, mean: float, std: float, target_hw: tuple) -> np.ndarray:
    """preprocess_frame over a (N, H, W) stack; returns (N, frame_dim)."""
    return np.stack([preprocess_frame(f, mean, std, target_hw) for f in frames])


# ---------------------------------------------------------------------------
# cuboids

def build_cuboids(frames: np.ndarray, seq_len: int, stride: int = 1) -> list:
    """Sliding-window cuboids: starts s while s + (T-1)*stride < len(frames)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeError(f"expected (n_frames, frame_dim), got {frames.shape}")
    if seq_len < 1 or stride < 1:
        raise InvalidInputError("seq_len and stride must be >= 1")
    span = (seq_len - 1) * stride
    if len(frames) < span + 1:
        raise InvalidInputError(
            f"{len(frames)} frames cannot fit a window of span {span + 1}"
        )
    out = []
    for s in range(len(frames) - span):
        idx = tuple(range(s, s + span + 1, stride))
        out.append(Cuboid(frames[list(idx)], idx, stride))
    return out


def build_cuboids_strides(frames: np.ndarray, seq_len: int, strides) -> list:
    """Concatenated cuboids for each stride in the configured stride set."""
    out = []
    for stride in strides:
        out.extend(build_cuboids(frames, seq_len, stride))
    return out


def stack_cuboids(cuboids: list) -> np.ndarray:
    return np.stack([c.data for c in cuboids])


def split_train_val(cuboids: list, val_fraction: float = 0.15):
    """Deterministic prefix/suffix split; both parts nonempty."""
    if len(cuboids) < 2:
        raise InvalidInputError("need at least 2 cuboids to split train/val")
    n_val = min(len(cuboids) - 1, max(1, round(val_fraction * len(cuboids))))
    return cuboids[: len(cuboids) - n_val], cuboids[len(cuboids) - n_val :]


def aggregate_frame_scores(cuboids: list, per_step_scores: np.ndarray, n_frames: int) -> np.ndarray:
    """Per-frame score as the mean over all (cuboid, step) pairs touching it."""
    per_step_scores = np.asarray(per_step_scores, dtype=np.float64)
    if per_step_scores.shape[0] != len(cuboids):
        raise ShapeError("one score row per cuboid required")
    total = np.zeros(n_frames)
    count = np.zeros(n_frames)
    for cub, row in zip(cuboids, per_step_scores):
        for j, frame_idx in enumerate(cub.frame_indices):
            total[frame_idx] += row[j]
            count[frame_idx] += 1
    if np.any(count == 0):
        raise InvalidInputError("some frames are not covered by any cuboid")
    return total / count


# ---------------------------------------------------------------------------
# on-disk datasets

@dataclass
class DatasetManifest:
    """Index of one split of one scene as written to disk.

    ``frame_files`` are manifest-relative paths, one per frame, flat across
    sequences in order; ``sequence_index[i]`` says which sequence frame i
    belongs to. Normalization constants are computed on the train split only.
    ``flows`` maps input kind ("dense"/"sparse") to flow/render file lists
    plus the shared render scale and standardization constants.
    """

    scene_id: str
    split: str
    frame_files: list
    labels: list
    sequence_index: list
    created_with_seed: int
    mean: float | None = None
    std: float | None = None
    flow_files: list = field(default_factory=list)  # flat union across kinds
    flows: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.labels) != len(self.frame_files):
            raise ConfigError("labels and frame_files must align")
        if self.split == "train" and any(self.labels):
            raise ConfigError("train split must not contain anomaly labels")

    def sequence_slices(self) -> list:
        """Contiguous (start, stop) ranges of frames per sequence."""
        idx = np.asarray(self.sequence_index)
        out = []
        for s in sorted(set(self.sequence_index)):
            where = np.nonzero(idx == s)[0]
            out.append((int(where[0]), int(where[-1]) + 1))
        return out

    def save(self, path) -> None:
        payload = {
            "scene_id": self.scene_id,
            "split": self.split,
            "frame_files": self.frame_files,
            "labels": [int(x) for x in self.labels],
            "sequence_index": [int(x) for x in self.sequence_index],
            "created_with_seed": self.created_with_seed,
            "mean": self.mean,
            "std": self.std,
            "flow_files": self.flow_files,
            "flows": self.flows,
        }
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        payload = json.loads(Path(path).read_text())
        return cls(**payload)


def write_labels_csv(path, labels) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "label"])
        for i, lab in enumerate(labels):
            writer.writerow([i, int(lab)])
