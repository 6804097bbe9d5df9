"""Raster planes, sample geometry, informative masking and frame differencing.

Everything here is a pure function of its inputs; planes are immutable
after construction and safe to share between workers.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass(frozen=True, eq=False)
class GrayPlane:
    """Single-channel raster with 8-bit levels, row-major."""

    levels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.levels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("plane must be a non-empty 2-D raster")
        if arr.dtype != np.uint8:
            if arr.min() < 0 or arr.max() > 255:
                raise ValueError("levels must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "levels", arr)

    @property
    def width(self) -> int:
        return self.levels.shape[1]

    @property
    def height(self) -> int:
        return self.levels.shape[0]


@dataclass(frozen=True, eq=False)
class FactorizedPlane:
    """Raster quantized to levels 0..g_count-1. Produced by factorize_plane."""

    levels: np.ndarray
    g_count: int

    def __post_init__(self):
        arr = np.asarray(self.levels)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("plane must be a non-empty 2-D raster")
        if not 2 <= self.g_count <= 256:
            raise ValueError("g_count must be in [2, 256]")
        if arr.max(initial=0) >= self.g_count:
            raise ValueError("levels must be < g_count")
        arr = np.ascontiguousarray(arr.astype(np.uint8))
        arr.setflags(write=False)
        object.__setattr__(self, "levels", arr)

    @property
    def width(self) -> int:
        return self.levels.shape[1]

    @property
    def height(self) -> int:
        return self.levels.shape[0]


@dataclass(frozen=True)
class GridSpec:
    """Constant horizontal/vertical step between candidate sample centers."""

    step: int = 16

    def __post_init__(self):
        if self.step < 1:
            raise ValueError("grid step must be >= 1")


@dataclass(frozen=True)
class SampleGeometry:
    """Circular sample: center, radius R and ring width w (w divides R)."""

    center: tuple[int, int]
    radius: int
    ring_width: int

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.ring_width < 1:
            raise ValueError("ring width must be >= 1")
        if self.radius % self.ring_width != 0:
            raise ValueError("ring width must divide the radius exactly")

    @property
    def ring_count(self) -> int:
        return self.radius // self.ring_width


@dataclass(frozen=True, eq=False)
class InformativeMask:
    """Per-grid-point informative flags, aligned to the grid that produced it."""

    flags: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.flags, dtype=bool))
        arr.setflags(write=False)
        object.__setattr__(self, "flags", arr)

    def __len__(self) -> int:
        return len(self.flags)


def split_channels(image: np.ndarray) -> tuple[GrayPlane, GrayPlane, GrayPlane]:
    """Split an H x W x 3 8-bit image into R, G, B planes."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("expected an H x W x 3 image")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("zero-sized image")
    return tuple(GrayPlane(arr[:, :, c]) for c in range(3))


def factorize_plane(plane: GrayPlane, g_count: int) -> FactorizedPlane:
    """Quantize 0-255 levels into g_count buckets: level -> floor(level*G/256)."""
    if not 2 <= g_count <= 256:
        raise ValueError("g_count must be in [2, 256]")
    lev = (plane.levels.astype(np.uint16) * g_count) >> 8
    return FactorizedPlane(lev.astype(np.uint8), g_count)


def make_grid(width: int, height: int, grid: GridSpec, radius: int) -> list[tuple[int, int]]:
    """Grid points (row-major) whose full sample disc fits inside the image.

    Coordinates run over {R, R+step, ...} up to width-1-R / height-1-R.
    """
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be >= 1")
    xs = range(radius, width - radius, grid.step)
    ys = range(radius, height - radius, grid.step)
    return [(x, y) for y in ys for x in xs]


def disc_pixels(center: tuple[int, int], radius: int) -> np.ndarray:
    """Integer (x, y) coordinates within Euclidean distance <= radius of center.

    Returned as an (n, 2) array in row-major (y, then x) order.
    """
    if radius < 0:
        return np.empty((0, 2), dtype=np.int64)
    cx, cy = center
    r = int(radius)
    span = np.arange(-r, r + 1, dtype=np.int64)
    u, v = np.meshgrid(span, span)  # u: x offsets, v: y offsets
    keep = (u * u + v * v) <= r * r
    return np.stack([u[keep] + cx, v[keep] + cy], axis=1)


def _window_sums(values: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel sum over the centered window (clipped at borders) and pixel count.

    Integer summed-area tables keep the arithmetic exact, which makes the
    Niblack comparison invariant under adding a constant to every pixel.
    """
    h, w = values.shape
    half = window // 2
    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(values, axis=0, dtype=np.int64), axis=1, out=integral[1:, 1:])
    y0 = np.clip(np.arange(h) - half, 0, None)
    y1 = np.clip(np.arange(h) + half + 1, None, h)
    x0 = np.clip(np.arange(w) - half, 0, None)
    x1 = np.clip(np.arange(w) + half + 1, None, w)
    sums = (integral[np.ix_(y1, x1)] - integral[np.ix_(y0, x1)]
            - integral[np.ix_(y1, x0)] + integral[np.ix_(y0, x0)])
    counts = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    return sums, counts


def niblack_binarize(plane: GrayPlane, window: int = 15, k: float = -0.2) -> np.ndarray:
    """Boolean map of pixels above the local Niblack threshold mean + k*stddev."""
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    lev = plane.levels.astype(np.int64)
    s1, cnt = _window_sums(lev, window)
    s2, _ = _window_sums(lev * lev, window)
    # pixel > mean + k*stddev  <=>  pixel*cnt - s1 > k*sqrt(s2*cnt - s1^2)
    diff = lev * cnt - s1
    var_scaled = s2 * cnt - s1 * s1
    return diff > k * np.sqrt(var_scaled.astype(np.float64))


def _binary_edges(binary: np.ndarray) -> np.ndarray:
    """Pixels whose value differs from any 4-neighbor inside the image."""
    edges = np.zeros_like(binary, dtype=bool)
    ne = binary[:-1, :] != binary[1:, :]
    edges[:-1, :] |= ne
    edges[1:, :] |= ne
    ne = binary[:, :-1] != binary[:, 1:]
    edges[:, :-1] |= ne
    edges[:, 1:] |= ne
    return edges


def niblack_informative_mask(
    plane: GrayPlane,
    points: list[tuple[int, int]],
    radius: int,
    window: int = 15,
    k: float = -0.2,
    edge_fraction_min: float = 0.02,
) -> InformativeMask:
    """Flag grid points whose sample disc carries enough binarization edges.

    A point is informative iff the fraction of edge pixels (4-neighbor
    transitions of the Niblack binarization) inside its disc reaches
    edge_fraction_min.
    """
    edges = _binary_edges(niblack_binarize(plane, window, k))
    flags = np.zeros(len(points), dtype=bool)
    if len(points) == 0:
        return InformativeMask(flags)
    disc = disc_pixels((0, 0), radius)
    area = len(disc)
    for idx, (x, y) in enumerate(points):
        px = disc[:, 0] + x
        py = disc[:, 1] + y
        count = int(edges[py, px].sum())
        flags[idx] = count >= edge_fraction_min * area
    return InformativeMask(flags)


def frame_change_mask(
    frame: GrayPlane,
    reference: GrayPlane,
    block: int = 16,
    ncc_min: float = 0.9,
    mad_min: float = 10.0,
) -> np.ndarray:
    """Per-block changed flags for an aligned static camera.

    A block is changed when its normalized cross-correlation with the
    reference drops below ncc_min; blocks where either side has zero
    variance fall back to a mean-absolute-difference test.
    """
    if frame.levels.shape != reference.levels.shape:
        raise ValueError("frame and reference must have identical dimensions")
    if block < 1:
        raise ValueError("block size must be >= 1")
    h, w = frame.levels.shape
    rows = (h + block - 1) // block
    cols = (w + block - 1) // block
    changed = np.zeros((rows, cols), dtype=bool)
    f = frame.levels.astype(np.float64)
    g = reference.levels.astype(np.float64)
    for by in range(rows):
        for bx in range(cols):
            sl = np.s_[by * block:(by + 1) * block, bx * block:(bx + 1) * block]
            a = f[sl]
            b = g[sl]
            da = a - a.mean()
            db = b - b.mean()
            va = float((da * da).sum())
            vb = float((db * db).sum())
            if va > 0.0 and vb > 0.0:
                ncc = float((da * db).sum()) / math.sqrt(va * vb)
                changed[by, bx] = ncc < ncc_min
            else:
                changed[by, bx] = float(np.abs(a - b).mean()) > mad_min
    return changed


# ---------------------------------------------------------------------------
# File formats: PNG / binary PGM / binary PPM input, raw plane dumps.

def load_image(path: str | Path) -> np.ndarray:
    """Decode PNG/PGM/PPM into an H x W x 3 uint8 array (gray replicated)."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"unreadable image {path}: {exc}") from exc
    if arr.size == 0:
        raise ValueError(f"zero-sized image {path}")
    return arr


def save_png(image: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG")


def png_bytes(image: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def write_plane_raw(plane: GrayPlane, path: str | Path) -> None:
    """Dump a plane as little-endian u32 width, u32 height, then row-major bytes."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", plane.width, plane.height))
        fh.write(plane.levels.tobytes())


def read_plane_raw(path: str | Path) -> GrayPlane:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError("truncated raw plane header")
        width, height = struct.unpack("<II", header)
        data = fh.read(width * height)
    if len(data) != width * height:
        raise ValueError("truncated raw plane payload")
    levels = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
    return GrayPlane(levels.copy())
