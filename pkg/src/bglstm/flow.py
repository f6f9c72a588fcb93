"""Optical-flow preprocessing: local quadratic expansion, dense flow from
polynomial displacement, sparse Lucas-Kanade tracking, corner selection and
flow-to-frame rendering.

Frames are (H, W) float64 arrays with values in [0, 1]; flow fields are
(H, W, 2) arrays holding per-pixel (u, v) displacement in pixels, u along x
(columns), v along y (rows), mapping the earlier frame onto the later one.
Borders use replicate padding everywhere; estimates inside the outer window
band are the ones quality guarantees apply to.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import InvalidInputError, ShapeError

# structure-tensor min eigenvalue (per window pixel) below which a point is
# untrackable on [0,1]-scaled intensities
UNTRACKABLE_EIGENVALUE = 1e-4


def as_gray_frame(frame) -> np.ndarray:
    """Validate a (H, W) frame of finite values in [0, 1]."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D frame, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("frame contains non-finite values")
    if arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9:
        raise InvalidInputError("frame values must lie in [0, 1]")
    return np.clip(arr, 0.0, 1.0)


@dataclass
class PolyCoeffs:
    """Per-pixel quadratic fit value ~ offset^T A offset + b . offset + c."""

    A: np.ndarray  # (H, W, 2, 2), symmetric
    b: np.ndarray  # (H, W, 2), (b_x, b_y)
    c: np.ndarray  # (H, W)


@dataclass
class SparseFlow:
    """Displacements at tracked feature points; untracked entries keep flow 0."""

    points: np.ndarray   # (N, 2) as (x, y)
    flow: np.ndarray     # (N, 2) as (u, v)
    tracked: np.ndarray  # (N,) bool


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(2, int(round(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    return g / g.sum()


def _smooth(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = correlate1d(img, kernel, axis=0, mode="nearest")
    return correlate1d(out, kernel, axis=1, mode="nearest")


def poly_expansion(frame: np.ndarray, window_sigma: float = 1.5) -> PolyCoeffs:
    """Per-pixel quadratic fit by Gaussian-weighted least squares.

    Moments of the signal against the basis (1, x, y, x^2, y^2, xy) are
    separable correlations; the normal-equation matrix is position
    independent, so one 6x6 inverse serves every pixel.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or min(frame.shape) < 7:
        raise InvalidInputError(f"poly_expansion needs a frame of at least 7x7, got {frame.shape}")
    if window_sigma <= 0:
        raise InvalidInputError("window_sigma must be positive")

    g = _gaussian_kernel(window_sigma)
    radius = (len(g) - 1) // 2
    offs = np.arange(-radius, radius + 1, dtype=np.float64)
    xg = offs * g
    xxg = offs**2 * g

    def corr(img, ky, kx):
        out = correlate1d(img, ky, axis=0, mode="nearest")
        return correlate1d(out, kx, axis=1, mode="nearest")

    m = np.stack(
        [
            corr(frame, g, g),      # sum w f
            corr(frame, g, xg),     # sum w x f
            corr(frame, xg, g),     # sum w y f
            corr(frame, g, xxg),    # sum w x^2 f
            corr(frame, xxg, g),    # sum w y^2 f
            corr(frame, xg, xg),    # sum w x y f
        ]
    )

    s2 = float(np.sum(offs**2 * g))
    s4 = float(np.sum(offs**4 * g))
    G = np.array(
        [
            [1.0, 0.0, 0.0, s2, s2, 0.0],
            [0.0, s2, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, s2, 0.0, 0.0, 0.0],
            [s2, 0.0, 0.0, s4, s2 * s2, 0.0],
            [s2, 0.0, 0.0, s2 * s2, s4, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, s2 * s2],
        ]
    )
    coef = np.einsum("kj,jhw->khw", np.linalg.inv(G), m)

    h, w_ = frame.shape
    A = np.empty((h, w_, 2, 2))
    A[..., 0, 0] = coef[3]
    A[..., 1, 1] = coef[4]
    A[..., 0, 1] = A[..., 1, 0] = 0.5 * coef[5]
    b = np.stack([coef[1], coef[2]], axis=-1)
    return PolyCoeffs(A, b, coef[0])


def _solve_2x2(P00, P01, P11, h0, h1):
    det = P00 * P11 - P01 * P01
    safe = np.abs(det) > 1e-12
    inv_det = np.where(safe, 1.0 / np.where(safe, det, 1.0), 0.0)
    u = (P11 * h0 - P01 * h1) * inv_det
    v = (P00 * h1 - P01 * h0) * inv_det
    return u, v


def _downsample(frame: np.ndarray) -> np.ndarray:
    h, w = frame.shape
    return frame[: h - h % 2, : w - w % 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _dense_single_scale(prev, nxt, window_sigma, iterations, init_flow):
    p1 = poly_expansion(prev, window_sigma)
    p2 = poly_expansion(nxt, window_sigma)
    h, w = prev.shape
    yy, xx = np.mgrid[0:h, 0:w]
    agg = _gaussian_kernel(2.0 * window_sigma)
    flow = init_flow.copy()

    for _ in range(max(1, iterations)):
        sx = np.clip(np.rint(xx + flow[..., 0]), 0, w - 1).astype(np.int64)
        sy = np.clip(np.rint(yy + flow[..., 1]), 0, h - 1).astype(np.int64)
        d0 = np.stack([sx - xx, sy - yy], axis=-1).astype(np.float64)

        A = 0.5 * (p1.A + p2.A[sy, sx])
        # translated quadratic: 2 A d = -(b2 - b1); fold the sampling offset back in
        db = -0.5 * (p2.b[sy, sx] - p1.b) + np.einsum("hwij,hwj->hwi", A, d0)

        P00 = A[..., 0, 0] ** 2 + A[..., 0, 1] ** 2
        P01 = A[..., 0, 1] * (A[..., 0, 0] + A[..., 1, 1])
        P11 = A[..., 0, 1] ** 2 + A[..., 1, 1] ** 2
        h0 = A[..., 0, 0] * db[..., 0] + A[..., 0, 1] * db[..., 1]
        h1 = A[..., 0, 1] * db[..., 0] + A[..., 1, 1] * db[..., 1]

        u, v = _solve_2x2(
            _smooth(P00, agg), _smooth(P01, agg), _smooth(P11, agg),
            _smooth(h0, agg), _smooth(h1, agg),
        )
        flow = np.stack([u, v], axis=-1)
    return flow


def farneback_dense(
    prev: np.ndarray,
    nxt: np.ndarray,
    levels: int = 1,
    window_sigma: float = 1.5,
    iterations: int = 5,
) -> np.ndarray:
    """Dense (H, W, 2) flow from the displacement between local quadratics,
    refined over smoothing iterations and optional coarse-to-fine levels.
    """
    prev = np.asarray(prev, dtype=np.float64)
    nxt = np.asarray(nxt, dtype=np.float64)
    if prev.shape != nxt.shape:
        raise ShapeError(f"frame shapes differ: {prev.shape} vs {nxt.shape}")

    pyramid = [(prev, nxt)]
    for _ in range(levels - 1):
        p, n = pyramid[-1]
        if min(p.shape) < 14:
            break
        pyramid.append((_downsample(p), _downsample(n)))

    flow = np.zeros(pyramid[-1][0].shape + (2,))
    for li in range(len(pyramid) - 1, -1, -1):
        p, n = pyramid[li]
        if flow.shape[:2] != p.shape:
            flow = 2.0 * flow.repeat(2, axis=0).repeat(2, axis=1)
            flow = flow[: p.shape[0], : p.shape[1]]
            if flow.shape[0] < p.shape[0] or flow.shape[1] < p.shape[1]:
                pad_h = p.shape[0] - flow.shape[0]
                pad_w = p.shape[1] - flow.shape[1]
                flow = np.pad(flow, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
        flow = _dense_single_scale(p, n, window_sigma, iterations, flow)
    return flow


def bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample img at real-valued (ys, xs) with clamping at the borders."""
    h, w = img.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _spatial_gradients(frame: np.ndarray):
    gy, gx = np.gradient(frame)
    return gx, gy


def lucas_kanade(
    prev: np.ndarray,
    nxt: np.ndarray,
    points,
    window: int = 15,
    max_iterations: int = 10,
) -> SparseFlow:
    """Iterative windowed least-squares tracking at the given (x, y) points.

    Points whose structure tensor is near singular (aperture problem) are
    flagged untracked and keep zero flow.
    """
    prev = np.asarray(prev, dtype=np.float64)
    nxt = np.asarray(nxt, dtype=np.float64)
    if prev.shape != nxt.shape:
        raise ShapeError(f"frame shapes differ: {prev.shape} vs {nxt.shape}")
    if window < 3 or window % 2 == 0:
        raise InvalidInputError("window must be an odd integer >= 3")

    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ShapeError("points must be (N, 2) as (x, y)")
    h, w = prev.shape
    r = window // 2
    if np.any(pts[:, 0] < r) or np.any(pts[:, 0] > w - 1 - r) or np.any(
        pts[:, 1] < r
    ) or np.any(pts[:, 1] > h - 1 - r):
        raise InvalidInputError(f"points must be interior to the frame by {r} pixels")

    gx, gy = _spatial_gradients(prev)
    offs = np.arange(-r, r + 1, dtype=np.float64)
    oy, ox = np.meshgrid(offs, offs, indexing="ij")

    flow = np.zeros_like(pts)
    tracked = np.zeros(len(pts), dtype=bool)
    npix = window * window

    for k, (px, py) in enumerate(pts):
        wy = py + oy
        wx = px + ox
        ix = bilinear_sample(gx, wy, wx)
        iy = bilinear_sample(gy, wy, wx)
        g00 = np.sum(ix * ix)
        g01 = np.sum(ix * iy)
        g11 = np.sum(iy * iy)
        tr = g00 + g11
        disc = np.sqrt(max((g00 - g11) ** 2 + 4 * g01 * g01, 0.0))
        min_eig = 0.5 * (tr - disc) / npix
        if min_eig < UNTRACKABLE_EIGENVALUE:
            continue
        tracked[k] = True
        patch_prev = bilinear_sample(prev, wy, wx)
        det = g00 * g11 - g01 * g01
        d = np.zeros(2)
        for _ in range(max_iterations):
            resid = bilinear_sample(nxt, wy + d[1], wx + d[0]) - patch_prev
            b0 = -np.sum(ix * resid)
            b1 = -np.sum(iy * resid)
            du = (g11 * b0 - g01 * b1) / det
            dv = (g00 * b1 - g01 * b0) / det
            d += (du, dv)
            if du * du + dv * dv < 1e-8:
                break
        flow[k] = d
    return SparseFlow(pts, flow, tracked)


def select_features(frame: np.ndarray, max_points: int, min_distance: int = 5,
                    window: int = 5) -> list:
    """Corner points by minimum-eigenvalue score with non-max suppression.

    Returns at most max_points (x, y) tuples, strongest first; uniform
    frames yield an empty list.
    """
    if max_points < 1:
        raise InvalidInputError("max_points must be >= 1")
    frame = np.asarray(frame, dtype=np.float64)
    gx, gy = _spatial_gradients(frame)
    box = np.ones(window) / window
    g00 = _smooth(gx * gx, box)
    g01 = _smooth(gx * gy, box)
    g11 = _smooth(gy * gy, box)
    tr = g00 + g11
    disc = np.sqrt(np.maximum((g00 - g11) ** 2 + 4 * g01 * g01, 0.0))
    score = 0.5 * (tr - disc)

    h, w = frame.shape
    margin = max(window // 2, 1)
    mask = np.zeros_like(score, dtype=bool)
    mask[margin : h - margin, margin : w - margin] = True
    score = np.where(mask, score, 0.0)

    ys, xs = np.nonzero(score > UNTRACKABLE_EIGENVALUE)
    if len(ys) == 0:
        return []
    order = np.argsort(score[ys, xs])[::-1]
    chosen = []
    for idx in order:
        x, y = int(xs[idx]), int(ys[idx])
        if all((x - cx) ** 2 + (y - cy) ** 2 >= min_distance**2 for cx, cy in chosen):
            chosen.append((x, y))
            if len(chosen) == max_points:
                break
    return chosen


def _hsv_to_rgb(hue: np.ndarray, sat: np.ndarray, val: np.ndarray):
    hp = (hue % 1.0) * 6.0
    c = val * sat
    x = c * (1.0 - np.abs(hp % 2.0 - 1.0))
    m = val - c
    sector = np.floor(hp).astype(np.int64) % 6
    r = np.choose(sector, [c, x, np.zeros_like(c), np.zeros_like(c), x, c])
    g = np.choose(sector, [x, c, c, x, np.zeros_like(c), np.zeros_like(c)])
    b = np.choose(sector, [np.zeros_like(c), np.zeros_like(c), x, c, c, x])
    return r + m, g + m, b + m


def flow_magnitude(flow: np.ndarray) -> np.ndarray:
    return np.hypot(flow[..., 0], flow[..., 1])


def flow_to_frame(flow: np.ndarray, max_mag: float | None = None) -> np.ndarray:
    """Render a flow field as a grayscale frame in [0, 1].

    Direction maps to hue and normalized magnitude to value; the HSV color is
    collapsed to luminance so the result is a single channel. Pass a shared
    max_mag to render several fields on a common scale.
    """
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise ShapeError(f"flow must be (H, W, 2), got {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise InvalidInputError("flow contains non-finite values")
    mag = flow_magnitude(flow)
    scale = float(max_mag) if max_mag is not None else float(mag.max())
    if scale <= 0.0:
        return np.zeros(flow.shape[:2])
    val = np.clip(mag / scale, 0.0, 1.0)
    hue = (np.arctan2(flow[..., 1], flow[..., 0]) / (2.0 * np.pi)) % 1.0
    r, g, b = _hsv_to_rgb(hue, np.ones_like(val), val)
    return np.clip(0.299 * r + 0.587 * g + 0.114 * b, 0.0, 1.0)


def render_sparse_flow(sparse: SparseFlow, shape: tuple, max_mag: float | None = None,
                       spot_radius: int = 1) -> np.ndarray:
    """Splat tracked-point flow colors onto a dark frame of the given shape."""
    h, w = shape
    out = np.zeros((h, w))
    pts = sparse.points[sparse.tracked]
    fl = sparse.flow[sparse.tracked]
    if len(pts) == 0:
        return out
    mags = np.hypot(fl[:, 0], fl[:, 1])
    scale = float(max_mag) if max_mag is not None else float(mags.max())
    if scale <= 0.0:
        return out
    val = np.clip(mags / scale, 0.0, 1.0)
    hue = (np.arctan2(fl[:, 1], fl[:, 0]) / (2.0 * np.pi)) % 1.0
    r, g, b = _hsv_to_rgb(hue, np.ones_like(val), val)
    lum = np.clip(0.299 * r + 0.587 * g + 0.114 * b, 0.0, 1.0)
    for (x, y), v in zip(pts, lum):
        xi, yi = int(round(x)), int(round(y))
        y0, y1 = max(0, yi - spot_radius), min(h, yi + spot_radius + 1)
        x0, x1 = max(0, xi - spot_radius), min(w, xi + spot_radius + 1)
        out[y0:y1, x0:x1] = np.maximum(out[y0:y1, x0:x1], v)
    return out


# ---------------------------------------------------------------------------
# file formats: FLO1 flow files and binary PGM frames

FLO_MAGIC = b"FLO1"


def write_flo(path, flow: np.ndarray) -> None:
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise ShapeError(f"flow must be (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLO_MAGIC)
        fh.write(struct.pack("<II", w, h))
        fh.write(flow.astype("<f4").tobytes())


def read_flo(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FLO_MAGIC:
            raise InvalidInputError(f"not a flow file: bad magic {magic!r}")
        w, h = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(w * h * 2 * 4), dtype="<f4")
    if data.size != w * h * 2:
        raise InvalidInputError("flow file truncated")
    return data.reshape(h, w, 2).astype(np.float64)


def write_pgm(path, frame: np.ndarray) -> None:
    frame = as_gray_frame(frame)
    h, w = frame.shape
    data = np.rint(frame * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P5"):
        raise InvalidInputError("not a binary PGM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise InvalidInputError(f"unsupported PGM maxval {maxval}")
    data = np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise InvalidInputError("PGM file truncated")
    return data.reshape(h, w).astype(np.float64) / 255.0
