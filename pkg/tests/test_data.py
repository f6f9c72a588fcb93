import numpy as np
import pytest

from bglstm.data import (
    AnomalySpec,
    DatasetManifest,
    SceneConfig,
    aggregate_frame_scores,
    build_cuboids,
    build_cuboids_strides,
    normalization_constants,
    preprocess_frame,
    resize_bilinear,
    split_train_val,
    synth_generate,
)
from bglstm.errors import ConfigError, DegenerateDataError, InvalidInputError


def small_scene(**overrides):
    base = dict(
        scene_id="s0",
        frames_per_sequence=60,
        n_train_sequences=1,
        n_test_sequences=1,
        anomaly=AnomalySpec("fast-object", 20, 15),
        seed=5,
    )
    base.update(overrides)
    return SceneConfig(**base)


class TestSynthGenerate:
    def test_deterministic(self):
        cfg = small_scene()
        a_train, a_test = synth_generate(cfg)
        b_train, b_test = synth_generate(cfg)
        assert np.array_equal(a_train[0].frames, b_train[0].frames)
        assert np.array_equal(a_test[0].frames, b_test[0].frames)
        assert np.array_equal(a_test[0].labels, b_test[0].labels)

    def test_seed_changes_output(self):
        a, _ = synth_generate(small_scene(seed=1))
        b, _ = synth_generate(small_scene(seed=2))
        assert not np.array_equal(a[0].frames, b[0].frames)

    def test_label_window_exact(self):
        cfg = small_scene(anomaly=AnomalySpec("wrong-direction", 20, 15))
        _, test = synth_generate(cfg)
        labels = test[0].labels
        assert labels.sum() == 15
        assert np.array_equal(np.nonzero(labels)[0], np.arange(20, 35))

    def test_train_labels_all_zero(self):
        train, _ = synth_generate(small_scene())
        assert not train[0].labels.any()

    def test_frames_in_unit_range(self):
        train, test = synth_generate(small_scene())
        for seq in train + test:
            assert seq.frames.min() >= 0.0 and seq.frames.max() <= 1.0

    def test_fast_object_raises_interframe_difference(self):
        cfg = small_scene(anomaly=AnomalySpec("fast-object", 20, 15))
        _, test = synth_generate(cfg)
        seq = test[0]
        diffs = np.abs(np.diff(seq.frames, axis=0)).mean(axis=(1, 2))
        lab = seq.labels[1:]
        assert diffs[lab == 1].mean() > diffs[lab == 0].mean()

    def test_anomaly_window_must_fit(self):
        with pytest.raises(ConfigError):
            small_scene(anomaly=AnomalySpec("fast-object", 55, 15))

    def test_single_frame_sequences_rejected(self):
        with pytest.raises(ConfigError):
            small_scene(frames_per_sequence=1,
                        anomaly=AnomalySpec("fast-object", 0, 1))

    def test_unknown_anomaly_kind(self):
        with pytest.raises(ConfigError):
            AnomalySpec("teleporting-object", 0, 5)


class TestPreprocess:
    def test_centering_identity(self):
        raw = np.full((16, 16), 128, dtype=np.uint8)
        mean = 128 / 255.0
        out = preprocess_frame(raw, mean, 0.25, (16, 16))
        assert np.allclose(out, 0.0, atol=1e-12)
        assert out.shape == (256,)

    def test_constant_resize_stays_constant(self):
        out = resize_bilinear(np.full((10, 14), 0.6), (23, 9))
        assert np.allclose(out, 0.6, atol=1e-12)

    def test_checkerboard_corners_preserved(self):
        board = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = resize_bilinear(board, (4, 4))
        assert out[0, 0] == 0.0 and out[3, 3] == 0.0
        assert out[0, 3] == 1.0 and out[3, 0] == 1.0
        # hand bilinear at (0, 1): source x = 1/3
        assert out[0, 1] == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_degenerate_std_rejected(self):
        with pytest.raises(DegenerateDataError):
            preprocess_frame(np.zeros((8, 8)), 0.0, 1e-12, (8, 8))

    def test_normalization_constants_sensitive_to_extra_data(self):
        train, test = synth_generate(small_scene())
        m1, s1 = normalization_constants(train[0].frames)
        leak = np.concatenate([train[0].frames, test[0].frames])
        m2, s2 = normalization_constants(leak)
        assert (m1, s1) != (m2, s2)


class TestCuboids:
    def test_count_stride_one(self):
        frames = np.arange(40.0).reshape(10, 4)
        cubs = build_cuboids(frames, 4, 1)
        assert len(cubs) == 7
        assert cubs[0].frame_indices == (0, 1, 2, 3)
        assert cubs[-1].frame_indices == (6, 7, 8, 9)

    def test_count_stride_two(self):
        frames = np.zeros((10, 4))
        cubs = build_cuboids(frames, 4, 2)
        assert len(cubs) == 4
        assert cubs[-1].frame_indices == (3, 5, 7, 9)

    def test_seq_len_one(self):
        frames = np.zeros((6, 2))
        assert len(build_cuboids(frames, 1, 1)) == 6

    def test_too_few_frames(self):
        with pytest.raises(InvalidInputError):
            build_cuboids(np.zeros((3, 2)), 4, 1)

    def test_stride_set_concatenation(self):
        frames = np.zeros((10, 2))
        cubs = build_cuboids_strides(frames, 4, (1, 2))
        assert len(cubs) == 11

    def test_split_fractions(self):
        cubs = build_cuboids(np.zeros((103, 2)), 4, 1)  # 100 cuboids
        train, val = split_train_val(cubs)
        assert len(train) == 85 and len(val) == 15
        assert train[-1].frame_indices[0] < val[0].frame_indices[0]

    def test_split_both_nonempty(self):
        cubs = build_cuboids(np.zeros((5, 2)), 4, 1)  # 2 cuboids
        train, val = split_train_val(cubs)
        assert len(train) == 1 and len(val) == 1

    def test_aggregate_frame_scores(self):
        frames = np.zeros((6, 2))
        cubs = build_cuboids(frames, 3, 1)  # starts 0..3
        scores = np.array([
            [1.0, 1.0, 1.0],
            [2.0, 2.0, 2.0],
            [3.0, 3.0, 3.0],
            [4.0, 4.0, 4.0],
        ])
        per_frame = aggregate_frame_scores(cubs, scores, 6)
        # frame 2 belongs to cuboids 0, 1, 2
        assert per_frame[0] == 1.0
        assert per_frame[2] == pytest.approx(2.0)
        assert per_frame[5] == 4.0

    def test_aggregate_requires_full_coverage(self):
        cubs = build_cuboids(np.zeros((6, 2)), 3, 1)
        with pytest.raises(InvalidInputError):
            aggregate_frame_scores(cubs, np.ones((4, 3)), 8)


class TestManifest:
    def test_roundtrip(self, tmp_path):
        man = DatasetManifest(
            scene_id="sc",
            split="test",
            frame_files=["a.pgm", "b.pgm"],
            labels=[0, 1],
            sequence_index=[0, 0],
            created_with_seed=9,
            mean=0.1,
            std=0.2,
            flows={"dense": {"flow_files": ["f.flo"], "rendered_files": ["r.pgm"]}},
        )
        path = tmp_path / "manifest.json"
        man.save(path)
        back = DatasetManifest.load(path)
        assert back == man

    def test_train_split_rejects_labels(self):
        with pytest.raises(ConfigError):
            DatasetManifest("sc", "train", ["a.pgm"], [1], [0], 0)

    def test_sequence_slices(self):
        man = DatasetManifest(
            "sc", "test", [f"{i}.pgm" for i in range(5)],
            [0] * 5, [0, 0, 1, 1, 1], 0,
        )
        assert man.sequence_slices() == [(0, 2), (2, 5)]
