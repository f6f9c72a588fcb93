import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from bglstm.errors import InvalidInputError, ShapeError
from bglstm.flow import (
    SparseFlow,
    as_gray_frame,
    bilinear_sample,
    farneback_dense,
    flow_to_frame,
    lucas_kanade,
    poly_expansion,
    read_flo,
    read_pgm,
    render_sparse_flow,
    select_features,
    write_flo,
    write_pgm,
)
from bglstm.numerics import Rng


def textured_frame(size=64, seed=7):
    """Smooth deterministic texture with enough structure at every scale."""
    noise = Rng(seed).uniform((size, size))
    smooth = gaussian_filter(noise, 2.0, mode="wrap")
    yy, xx = np.mgrid[0:size, 0:size] / size
    waves = 0.3 * np.sin(2 * np.pi * (3 * xx + 1.5 * yy)) + 0.25 * np.cos(
        2 * np.pi * (2.2 * yy - 1.3 * xx)
    )
    f = smooth * 2.0 + waves
    return (f - f.min()) / (f.max() - f.min())


class TestPolyExpansion:
    def test_constant_frame(self):
        pc = poly_expansion(np.full((32, 32), 0.37), 1.5)
        inner = np.s_[8:-8, 8:-8]
        assert np.abs(pc.A[inner]).max() < 1e-6
        assert np.abs(pc.b[inner]).max() < 1e-6
        assert np.abs(pc.c[inner] - 0.37).max() < 1e-6

    def test_pure_quadratic_recovered(self):
        yy, xx = np.mgrid[0:41, 0:41].astype(float)
        frame = 0.0005 * (xx - 20) ** 2
        pc = poly_expansion(frame, 1.5)
        A = pc.A[20, 20]
        assert A[0, 0] == pytest.approx(0.0005, rel=0.05)
        assert abs(A[0, 1]) < 1e-12 and abs(A[1, 1]) < 1e-10
        assert np.abs(pc.b[20, 20]).max() < 1e-10

    def test_linear_ramp_matches_dense_ls_oracle(self):
        yy, xx = np.mgrid[0:41, 0:41].astype(float)
        frame = 0.01 * xx
        sigma = 1.5
        pc = poly_expansion(frame, sigma)
        assert pc.b[20, 20] == pytest.approx([0.01, 0.0], abs=1e-10)
        assert np.abs(pc.A[20, 20]).max() < 1e-10

        # dense weighted least squares at one pixel, built from scratch
        radius = max(2, int(round(3 * sigma)))
        offs = np.arange(-radius, radius + 1)
        oy, ox = np.meshgrid(offs, offs, indexing="ij")
        wts = np.exp(-(offs**2) / (2 * sigma**2))
        wts = wts / wts.sum()
        w2d = (wts[:, None] * wts[None, :]).reshape(-1)
        basis = np.stack(
            [
                np.ones(ox.size),
                ox.reshape(-1),
                oy.reshape(-1),
                ox.reshape(-1) ** 2,
                oy.reshape(-1) ** 2,
                (ox * oy).reshape(-1),
            ],
            axis=1,
        )
        vals = frame[20 + oy, 20 + ox].reshape(-1)
        sw = np.sqrt(w2d)
        coef, *_ = np.linalg.lstsq(basis * sw[:, None], vals * sw, rcond=None)
        assert pc.c[20, 20] == pytest.approx(coef[0], abs=1e-9)
        assert pc.b[20, 20] == pytest.approx(coef[1:3], abs=1e-9)
        assert pc.A[20, 20, 0, 0] == pytest.approx(coef[3], abs=1e-9)
        assert pc.A[20, 20, 1, 1] == pytest.approx(coef[4], abs=1e-9)
        assert pc.A[20, 20, 0, 1] == pytest.approx(coef[5] / 2, abs=1e-9)

    def test_symmetry_invariant(self):
        pc = poly_expansion(textured_frame(32), 1.5)
        assert np.abs(pc.A[..., 0, 1] - pc.A[..., 1, 0]).max() < 1e-9

    def test_too_small_frame_rejected(self):
        with pytest.raises(InvalidInputError):
            poly_expansion(np.zeros((5, 5)), 1.5)


class TestFarnebackDense:
    def test_zero_motion(self):
        f = textured_frame()
        fl = farneback_dense(f, f)
        assert np.abs(fl[..., 0]).mean() < 0.05
        assert np.abs(fl[..., 1]).mean() < 0.05

    @pytest.mark.parametrize("shift", [(2, 0), (0, -1), (3, 0), (-2, 1), (0, 3), (2, 2)])
    def test_integer_shift_recovery(self, shift):
        dx, dy = shift
        f = textured_frame()
        nxt = np.roll(f, (dy, dx), axis=(0, 1))
        fl = farneback_dense(f, nxt, levels=1, window_sigma=1.5, iterations=5)
        inner = fl[8:-8, 8:-8]
        assert abs(np.median(inner[..., 0]) - dx) < 0.5
        assert abs(np.median(inner[..., 1]) - dy) < 0.5

    def test_subpixel_shift(self):
        f = textured_frame()
        yy, xx = np.mgrid[0:64, 0:64].astype(float)
        nxt = bilinear_sample(f, yy - 0.5, xx - 1.5)
        fl = farneback_dense(f, nxt)
        inner = fl[8:-8, 8:-8]
        assert abs(np.median(inner[..., 0]) - 1.5) < 0.2
        assert abs(np.median(inner[..., 1]) - 0.5) < 0.2

    def test_coarse_to_fine_levels(self):
        f = textured_frame()
        nxt = np.roll(f, (0, 3), axis=(0, 1))
        fl = farneback_dense(f, nxt, levels=2, window_sigma=1.5, iterations=5)
        inner = fl[8:-8, 8:-8]
        assert abs(np.median(inner[..., 0]) - 3) < 0.5

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            farneback_dense(np.zeros((16, 16)), np.zeros((16, 17)))


class TestLucasKanade:
    def test_zero_motion(self):
        f = textured_frame()
        sf = lucas_kanade(f, f, [(20, 20), (40, 33)], window=15)
        assert sf.tracked.all()
        assert np.abs(sf.flow).max() < 1e-6

    @pytest.mark.parametrize("shift", [(1, 1), (2, 0), (-3, 2), (0, 3)])
    def test_shift_recovery_at_corners(self, shift):
        dx, dy = shift
        f = textured_frame()
        nxt = np.roll(f, (dy, dx), axis=(0, 1))
        pts = [(x, y) for x, y in select_features(f, 20, min_distance=6)
               if 12 <= x <= 51 and 12 <= y <= 51]
        assert len(pts) >= 5
        sf = lucas_kanade(f, nxt, pts, window=15)
        good = sf.flow[sf.tracked]
        assert sf.tracked.sum() >= 4
        errs = np.abs(good - np.array([dx, dy]))
        assert errs.max() < 0.25

    def test_uniform_region_untrackable(self):
        f = np.full((40, 40), 0.5)
        f[30:34, 30:34] = 1.0  # some structure elsewhere
        sf = lucas_kanade(f, f, [(12, 12)], window=9)
        assert not sf.tracked[0]
        assert np.array_equal(sf.flow[0], [0.0, 0.0])

    def test_out_of_bounds_point_rejected(self):
        f = textured_frame(32)
        with pytest.raises(InvalidInputError):
            lucas_kanade(f, f, [(2, 2)], window=15)

    def test_even_window_rejected(self):
        f = textured_frame(32)
        with pytest.raises(InvalidInputError):
            lucas_kanade(f, f, [(16, 16)], window=8)


class TestSelectFeatures:
    def test_uniform_frame_empty(self):
        assert select_features(np.full((32, 32), 0.4), 10) == []

    def test_bright_square_corners(self):
        f = np.zeros((40, 40))
        f[18:27, 14:23] = 1.0
        pts = select_features(f, 8, min_distance=4)
        assert len(pts) >= 4
        corners = np.array([(14, 18), (22, 18), (14, 26), (22, 26)], dtype=float)
        for cx, cy in corners:
            d = np.hypot(np.array([p[0] for p in pts]) - cx,
                         np.array([p[1] for p in pts]) - cy)
            assert d.min() <= 3.0

    def test_cardinality_bound(self):
        pts = select_features(textured_frame(48), 5)
        assert len(pts) <= 5

    def test_min_distance_respected(self):
        pts = select_features(textured_frame(48), 30, min_distance=7)
        arr = np.array(pts, dtype=float)
        for i in range(len(arr)):
            for j in range(i + 1, len(arr)):
                assert np.hypot(*(arr[i] - arr[j])) >= 7


class TestFlowToFrame:
    def test_zero_flow_uniform(self):
        out = flow_to_frame(np.zeros((8, 8, 2)))
        assert np.all(out == out[0, 0])

    def test_output_range(self):
        fl = Rng(5).uniform((16, 16, 2), -4, 4)
        out = flow_to_frame(fl)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_rotation_preserves_magnitude_channel(self):
        fl = Rng(6).uniform((8, 8, 2), -2, 2)
        ang = 1.1
        rot = np.empty_like(fl)
        rot[..., 0] = np.cos(ang) * fl[..., 0] - np.sin(ang) * fl[..., 1]
        rot[..., 1] = np.sin(ang) * fl[..., 0] + np.cos(ang) * fl[..., 1]
        m1 = np.hypot(fl[..., 0], fl[..., 1])
        m2 = np.hypot(rot[..., 0], rot[..., 1])
        assert np.allclose(m1, m2, atol=1e-12)

    def test_monotone_in_magnitude_under_shared_normalization(self):
        slow = np.zeros((6, 6, 2))
        slow[..., 0] = 1.0
        fast = np.zeros((6, 6, 2))
        fast[..., 0] = 3.0
        a = flow_to_frame(slow, max_mag=3.0)
        b = flow_to_frame(fast, max_mag=3.0)
        assert np.all(b >= a)

    def test_rejects_bad_shape(self):
        with pytest.raises(ShapeError):
            flow_to_frame(np.zeros((4, 4, 3)))

    def test_render_sparse_spots(self):
        sf = SparseFlow(
            points=np.array([[5.0, 7.0], [12.0, 3.0]]),
            flow=np.array([[1.0, 0.0], [0.0, 2.0]]),
            tracked=np.array([True, False]),
        )
        out = render_sparse_flow(sf, (16, 16), max_mag=2.0)
        assert out[7, 5] > 0.0
        assert out[3, 12] == 0.0
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestFileFormats:
    def test_flo_roundtrip(self, tmp_path):
        fl = Rng(9).uniform((12, 10, 2), -5, 5).astype("<f4").astype(np.float64)
        path = tmp_path / "a.flo"
        write_flo(path, fl)
        back = read_flo(path)
        assert back.shape == (12, 10, 2)
        assert np.array_equal(back, fl)

    def test_flo_magic(self, tmp_path):
        path = tmp_path / "a.flo"
        write_flo(path, np.zeros((4, 4, 2)))
        with open(path, "r+b") as fh:
            fh.write(b"XXXX")
        with pytest.raises(InvalidInputError):
            read_flo(path)

    def test_pgm_roundtrip(self, tmp_path):
        frame = np.rint(Rng(4).uniform((9, 13)) * 255) / 255.0
        path = tmp_path / "f.pgm"
        write_pgm(path, frame)
        back = read_pgm(path)
        assert np.array_equal(back, frame)

    def test_pgm_rejects_wrong_format(self, tmp_path):
        path = tmp_path / "f.pgm"
        path.write_bytes(b"P2\n2 2\n255\n0 0 0 0")
        with pytest.raises(InvalidInputError):
            read_pgm(path)

    def test_gray_frame_validation(self):
        with pytest.raises(InvalidInputError):
            as_gray_frame(np.full((4, 4), 1.5))
        with pytest.raises(ShapeError):
            as_gray_frame(np.zeros(4))
