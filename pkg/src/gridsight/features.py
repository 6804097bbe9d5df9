"""Texture and spectral features of circular samples.

Three co-occurrence matrix kinds over a sample disc:

* GLCM — neighboring factorized-level pairs at fixed pixel offsets.
* OGCM — binned absolute gradients in orthogonal direction pairs.
* GLRCM — per-ring factorized-level histograms over concentric rings,
  which makes the descriptor insensitive to modest rescaling.

Plus 2D FFT band powers, per-line Haar detail powers, parametric vector
assembly across channels/radii, and a relevance/redundancy feature filter.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .imagery import (
    FactorizedPlane,
    GrayPlane,
    SampleGeometry,
    disc_pixels,
    factorize_plane,
)

SQRT2 = math.sqrt(2.0)

# direction -> (offset used for the forward neighbor, bin scale divisor)
_DIRECTIONS = {
    "SN": ((0, 1), 1.0),
    "EW": ((1, 0), 1.0),
    "NW": ((-1, -1), SQRT2),
    "NE": ((1, -1), SQRT2),
}
OGCM_PAIRS_DEFAULT = (("SN", "EW"), ("NW", "NE"))
GLCM_OFFSETS_DEFAULT = ((1, 0), (0, 1), (1, 1), (1, -1))

RECIPE_VERSION = 1


@dataclass(frozen=True, eq=False)
class CoocMatrix:
    """Counted 2-D histogram. counts is integer, non-negative, sums to total."""

    kind: str
    counts: np.ndarray
    total: int

    def __post_init__(self):
        if self.kind not in ("GLCM", "OGCM", "GLRCM"):
            raise ValueError(f"unknown matrix kind {self.kind!r}")
        arr = np.ascontiguousarray(np.asarray(self.counts, dtype=np.int64))
        if arr.ndim != 2:
            raise ValueError("counts must be 2-D")
        if (arr < 0).any():
            raise ValueError("counts must be non-negative")
        if int(arr.sum()) != self.total:
            raise ValueError("total must equal the sum of cells")
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)

    @property
    def rows(self) -> int:
        return self.counts.shape[0]

    @property
    def cols(self) -> int:
        return self.counts.shape[1]

    def normalized(self) -> np.ndarray:
        if self.total == 0:
            raise ValueError("matrix has zero total")
        return self.counts.astype(np.float64) / float(self.total)


def _occupancy(pixels: np.ndarray):
    """Boolean occupancy grid over the pixel set's bounding box.

    Returns (grid, x0, y0) so that grid[y - y0, x - x0] tells membership.
    """
    xs = pixels[:, 0]
    ys = pixels[:, 1]
    x0 = int(xs.min())
    y0 = int(ys.min())
    grid = np.zeros((int(ys.max()) - y0 + 1, int(xs.max()) - x0 + 1), dtype=bool)
    grid[ys - y0, xs - x0] = True
    return grid, x0, y0


def _members(pixels, occ, x0, y0, dx, dy):
    """Mask over pixels: True where (x+dx, y+dy) also belongs to the set."""
    px = pixels[:, 0] + dx - x0
    py = pixels[:, 1] + dy - y0
    ok = (px >= 0) & (py >= 0) & (px < occ.shape[1]) & (py < occ.shape[0])
    out = np.zeros(len(pixels), dtype=bool)
    out[ok] = occ[py[ok], px[ok]]
    return out


def build_glcm(plane: FactorizedPlane, pixels: np.ndarray, offsets,
               symmetric: bool = True) -> CoocMatrix:
    """Co-occurrence counts of factorized-level pairs at the given offsets.

    Only pairs whose both endpoints belong to `pixels` contribute; symmetric
    mode additionally counts every pair in the transposed cell.
    """
    pixels = np.asarray(pixels, dtype=np.int64)
    if pixels.size == 0:
        raise ValueError("empty pixel set")
    offsets = list(offsets)
    if not offsets:
        raise ValueError("at least one offset required")
    g = plane.g_count
    occ, x0, y0 = _occupancy(pixels)
    lev = plane.levels
    counts = np.zeros(g * g, dtype=np.int64)
    src = lev[pixels[:, 1], pixels[:, 0]].astype(np.int64)
    for dx, dy in offsets:
        keep = _members(pixels, occ, x0, y0, dx, dy)
        if not keep.any():
            continue
        a = src[keep]
        b = lev[pixels[keep, 1] + dy, pixels[keep, 0] + dx].astype(np.int64)
        counts += np.bincount(a * g + b, minlength=g * g)
        if symmetric:
            counts += np.bincount(b * g + a, minlength=g * g)
    counts = counts.reshape(g, g)
    return CoocMatrix("GLCM", counts, int(counts.sum()))


def gradient_bin(g: np.ndarray, bins: int) -> np.ndarray:
    """Bin an absolute gradient magnitude: min(bins-1, floor(|g|*bins/256))."""
    idx = np.floor(np.abs(g) * bins / 256.0).astype(np.int64)
    return np.minimum(idx, bins - 1)


def build_ogcm(plane: GrayPlane, pixels: np.ndarray, pairs=OGCM_PAIRS_DEFAULT,
               bins: int = 16) -> CoocMatrix:
    """Orthogonal-gradient co-occurrence counts over the disc interior.

    For every interior pixel and every direction pair (d1, d2), the signed
    differences across the two opposing neighbors are taken, diagonal ones
    scaled down by sqrt(2), and cell (bin(|g1|), bin(|g2|)) is incremented.
    Interior means every neighbor required by the enabled pairs is in-set.
    """
    pixels = np.asarray(pixels, dtype=np.int64)
    if pixels.size == 0:
        raise ValueError("empty pixel set")
    pairs = [tuple(p) for p in pairs]
    if not pairs:
        raise ValueError("at least one direction pair required")
    for pair in pairs:
        if len(pair) != 2 or any(d not in _DIRECTIONS for d in pair):
            raise ValueError(f"unknown direction pair {pair!r}")
    occ, x0, y0 = _occupancy(pixels)
    interior = np.ones(len(pixels), dtype=bool)
    for pair in pairs:
        for d in pair:
            (dx, dy), _ = _DIRECTIONS[d]
            interior &= _members(pixels, occ, x0, y0, dx, dy)
            interior &= _members(pixels, occ, x0, y0, -dx, -dy)
    if not interior.any():
        raise ValueError("no interior pixels: disc too small for gradients")
    pts = pixels[interior]
    lev = plane.levels.astype(np.int64)

    def grad(direction):
        (dx, dy), scale = _DIRECTIONS[direction]
        fwd = lev[pts[:, 1] + dy, pts[:, 0] + dx]
        back = lev[pts[:, 1] - dy, pts[:, 0] - dx]
        return (fwd - back) / scale

    counts = np.zeros(bins * bins, dtype=np.int64)
    for d1, d2 in pairs:
        b1 = gradient_bin(grad(d1), bins)
        b2 = gradient_bin(grad(d2), bins)
        counts += np.bincount(b1 * bins + b2, minlength=bins * bins)
    counts = counts.reshape(bins, bins)
    return CoocMatrix("OGCM", counts, int(counts.sum()))


def build_glrcm(plane: FactorizedPlane, geometry: SampleGeometry) -> CoocMatrix:
    """Per-ring level histograms: cell (n, g) counts ring-n pixels of level g.

    Ring n (1-based) holds pixels with (n-1)*w < d <= n*w; the center pixel
    belongs to ring 1. Comparisons use squared distances, so assignment is
    exact integer arithmetic.
    """
    r = geometry.radius
    w = geometry.ring_width
    n_rings = geometry.ring_count
    cx, cy = geometry.center
    if not (cx - r >= 0 and cy - r >= 0
            and cx + r < plane.width and cy + r < plane.height):
        raise ValueError("sample disc crosses the image border")
    pix = disc_pixels(geometry.center, r)
    d2 = (pix[:, 0] - cx) ** 2 + (pix[:, 1] - cy) ** 2
    boundaries = np.array([(k * w) ** 2 for k in range(1, n_rings + 1)],
                          dtype=np.int64)
    ring = np.searchsorted(boundaries, d2, side="left")
    lev = plane.levels[pix[:, 1], pix[:, 0]].astype(np.int64)
    g = plane.g_count
    counts = np.bincount(ring * g + lev, minlength=n_rings * g)
    counts = counts.reshape(n_rings, g)
    return CoocMatrix("GLRCM", counts, int(counts.sum()))


def ring_areas(geometry: SampleGeometry) -> np.ndarray:
    """Pixel count of each concentric ring (row sums of any GLRCM there)."""
    pix = disc_pixels((0, 0), geometry.radius)
    d2 = pix[:, 0] ** 2 + pix[:, 1] ** 2
    w = geometry.ring_width
    boundaries = np.array([(k * w) ** 2 for k in range(1, geometry.ring_count + 1)],
                          dtype=np.int64)
    ring = np.searchsorted(boundaries, d2, side="left")
    return np.bincount(ring, minlength=geometry.ring_count)


def haralick_stats(matrix: CoocMatrix) -> tuple[float, float, float, float]:
    """(contrast, homogeneity, entropy, uniformity) of the normalized matrix."""
    p = matrix.normalized()
    i = np.arange(p.shape[0], dtype=np.float64)[:, None]
    j = np.arange(p.shape[1], dtype=np.float64)[None, :]
    diff = i - j
    contrast = float((diff * diff * p).sum())
    homogeneity = float((p / (1.0 + np.abs(diff))).sum())
    nz = p[p > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    uniformity = float((p * p).sum())
    return contrast, homogeneity, entropy, uniformity


# ----------------------------------------------------------------- spectra

def fft_power_bands(plane: GrayPlane, center: tuple[int, int], patch_side: int,
                    bands) -> np.ndarray:
    """Power of the mean-removed unitary 2D DFT in radial frequency bands.

    Band (lo, hi) collects squared magnitudes of coefficients with radial
    frequency lo <= r < hi, always excluding DC.
    """
    side = int(patch_side)
    if side < 2 or side & (side - 1):
        raise ValueError("patch side must be a power of two >= 2")
    cx, cy = center
    half = side // 2
    x0, y0 = cx - half, cy - half
    if x0 < 0 or y0 < 0 or x0 + side > plane.width or y0 + side > plane.height:
        raise ValueError("FFT patch crosses the image border")
    patch = plane.levels[y0:y0 + side, x0:x0 + side].astype(np.float64)
    patch -= patch.mean()
    spec = np.fft.fft2(patch, norm="ortho")
    power = np.abs(spec) ** 2
    freq = np.fft.fftfreq(side) * side
    r = np.hypot(freq[:, None], freq[None, :])
    out = np.empty(len(list(bands)), dtype=np.float64)
    for k, (lo, hi) in enumerate(bands):
        mask = (r >= lo) & (r < hi) & (r > 0)
        out[k] = float(power[mask].sum())
    return out


def inscribed_patch_side(radius: int) -> int:
    """Largest power-of-two side of a square inscribed in a radius-R disc."""
    limit = int(radius * SQRT2)
    side = 1
    while side * 2 <= limit:
        side *= 2
    return max(side, 2)


def haar_detail_powers(signal: np.ndarray, levels: int) -> np.ndarray:
    """Sum of squared orthonormal Haar detail coefficients per level.

    Level 0 of the output is the finest scale. Signal length must be a
    power of two with at least 2**levels entries.
    """
    s = np.asarray(signal, dtype=np.float64)
    n = len(s)
    if n & (n - 1) or n < 2 ** levels:
        raise ValueError("signal length must be a power of two >= 2**levels")
    out = np.empty(levels, dtype=np.float64)
    for j in range(levels):
        a = s[0::2]
        b = s[1::2]
        d = (a - b) / SQRT2
        s = (a + b) / SQRT2
        out[j] = float((d * d).sum())
    return out


def line_spectrum(plane: GrayPlane, center: tuple[int, int], radius: int,
                  line_count: int = 4, levels: int = 4) -> np.ndarray:
    """Haar detail powers along diameters of the sample disc.

    line_count diameters at angles k*180/L degrees are sampled pixel-wise,
    edge-padded up to the next power of two, and transformed; the result
    concatenates `levels` detail powers per line (length L*J always).
    """
    if line_count < 1 or levels < 1:
        raise ValueError("line_count and levels must be >= 1")
    length = 2 * radius + 1
    padded = 1
    while padded < length:
        padded *= 2
    if 2 ** levels > padded:
        raise ValueError("radius too small for requested wavelet levels")
    cx, cy = center
    if not (cx - radius >= 0 and cy - radius >= 0
            and cx + radius < plane.width and cy + radius < plane.height):
        raise ValueError("sample disc crosses the image border")
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    out = np.empty(line_count * levels, dtype=np.float64)
    for k in range(line_count):
        theta = math.pi * k / line_count
        xs = np.rint(cx + t * math.cos(theta)).astype(np.int64)
        ys = np.rint(cy + t * math.sin(theta)).astype(np.int64)
        line = plane.levels[ys, xs].astype(np.float64)
        if padded > length:
            line = np.concatenate([line, np.full(padded - length, line[-1])])
        out[k * levels:(k + 1) * levels] = haar_detail_powers(line, levels)
    return out


# ------------------------------------------------------------------ recipe

@dataclass
class FeatureRecipe:
    """Parametric feature synthesis: what gets computed, at which scales.

    Matrix families contribute their normalized cells (use_raw_matrix)
    and/or four summary statistics (use_haralick). GLRCM can optionally
    normalize per ring instead of by the full total.
    """

    g_count: int = 16
    radii: list = field(default_factory=lambda: [32])
    ring_width: int = 8
    glcm_offsets: list = field(default_factory=lambda: [list(o) for o in GLCM_OFFSETS_DEFAULT])
    glcm_symmetric: bool = True
    ogcm_pairs: list = field(default_factory=lambda: [list(p) for p in OGCM_PAIRS_DEFAULT])
    ogcm_bins: int = 16
    use_glrcm: bool = True
    glrcm_per_ring: bool = False
    use_raw_matrix: bool = True
    use_haralick: bool = True
    fft_bands: list = field(default_factory=lambda: [[0.0, 2.0], [2.0, 4.0], [4.0, 8.0]])
    line_count: int = 4
    wavelet_levels: int = 4
    selection_keep_max: int = 64
    selection_redundancy_max: float = 0.95

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 2 <= self.g_count <= 256:
            raise ValueError("g_count must be in [2, 256]")
        if not self.radii:
            raise ValueError("at least one radius required")
        for r in self.radii:
            if r < 1:
                raise ValueError("radii must be >= 1")
            if r % self.ring_width != 0:
                raise ValueError(f"radius {r} not divisible by ring width {self.ring_width}")
        if self.ogcm_bins < 2:
            raise ValueError("ogcm_bins must be >= 2")
        if self.vector_length() == 0:
            raise ValueError("recipe enables no feature family")

    # frozen family order within one (channel, radius) block
    def family_lengths(self) -> list:
        n_rings = {r: r // self.ring_width for r in self.radii}
        fams = []
        if self.glcm_offsets:
            if self.use_raw_matrix:
                fams.append(("glcm_raw", self.g_count * self.g_count))
            if self.use_haralick:
                fams.append(("glcm_haralick", 4))
        if self.ogcm_pairs:
            if self.use_raw_matrix:
                fams.append(("ogcm_raw", self.ogcm_bins * self.ogcm_bins))
            if self.use_haralick:
                fams.append(("ogcm_haralick", 4))
        if self.use_glrcm:
            if self.use_raw_matrix:
                fams.append(("glrcm_raw", ("per_radius", "rings_x_g")))
            if self.use_haralick:
                fams.append(("glrcm_haralick", 4))
        if self.fft_bands:
            fams.append(("fft", len(self.fft_bands)))
        if self.line_count > 0 and self.wavelet_levels > 0:
            fams.append(("lines", self.line_count * self.wavelet_levels))
        # resolve per-radius lengths
        resolved = {}
        for r in self.radii:
            row = []
            for name, ln in fams:
                if ln == ("per_radius", "rings_x_g"):
                    row.append((name, n_rings[r] * self.g_count))
                else:
                    row.append((name, ln))
            resolved[r] = row
        return resolved

    def vector_length(self) -> int:
        per_radius = self.family_lengths()
        one_channel = sum(ln for r in self.radii for _, ln in per_radius[r])
        return 3 * one_channel

    def max_radius(self) -> int:
        return max(self.radii)

    def to_dict(self) -> dict:
        doc = {"version": RECIPE_VERSION}
        doc.update(asdict(self))
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureRecipe":
        doc = dict(doc)
        version = doc.pop("version", None)
        if version != RECIPE_VERSION:
            raise ValueError(f"unsupported recipe version {version!r}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "FeatureRecipe":
        return cls.from_dict(json.loads(text))


class FeatureExtractor:
    """Precomputes per-image state so many samples share the factorization."""

    def __init__(self, channels, recipe: FeatureRecipe):
        if len(channels) != 3:
            raise ValueError("expected three channel planes")
        self.recipe = recipe
        self.channels = tuple(channels)
        self.width = channels[0].width
        self.height = channels[0].height
        for ch in channels:
            if ch.width != self.width or ch.height != self.height:
                raise ValueError("channel dimensions differ")
        self.factorized = tuple(factorize_plane(ch, recipe.g_count) for ch in channels)
        self._disc = {r: disc_pixels((0, 0), r) for r in recipe.radii}

    def extract(self, center: tuple[int, int]) -> np.ndarray:
        cx, cy = center
        rec = self.recipe
        rmax = rec.max_radius()
        if not (cx - rmax >= 0 and cy - rmax >= 0
                and cx + rmax < self.width and cy + rmax < self.height):
            raise ValueError(f"sample disc at ({cx}, {cy}) crosses the image border")
        parts = []
        for ch, fch in zip(self.channels, self.factorized):
            for r in rec.radii:
                disc = self._disc[r] + np.array([cx, cy], dtype=np.int64)
                if rec.glcm_offsets:
                    m = build_glcm(fch, disc, [tuple(o) for o in rec.glcm_offsets],
                                   rec.glcm_symmetric)
                    if rec.use_raw_matrix:
                        parts.append(m.normalized().ravel())
                    if rec.use_haralick:
                        parts.append(np.array(haralick_stats(m)))
                if rec.ogcm_pairs:
                    m = build_ogcm(ch, disc, [tuple(p) for p in rec.ogcm_pairs],
                                   rec.ogcm_bins)
                    if rec.use_raw_matrix:
                        parts.append(m.normalized().ravel())
                    if rec.use_haralick:
                        parts.append(np.array(haralick_stats(m)))
                if rec.use_glrcm:
                    geo = SampleGeometry(center=(cx, cy), radius=r,
                                         ring_width=rec.ring_width)
                    m = build_glrcm(fch, geo)
                    if rec.use_raw_matrix:
                        if rec.glrcm_per_ring:
                            areas = ring_areas(geo).astype(np.float64)
                            parts.append((m.counts / areas[:, None]).ravel())
                        else:
                            parts.append(m.normalized().ravel())
                    if rec.use_haralick:
                        parts.append(np.array(haralick_stats(m)))
                if rec.fft_bands:
                    side = inscribed_patch_side(r)
                    parts.append(fft_power_bands(ch, (cx, cy), side, rec.fft_bands))
                if rec.line_count > 0 and rec.wavelet_levels > 0:
                    parts.append(line_spectrum(ch, (cx, cy), r,
                                               rec.line_count, rec.wavelet_levels))
        vec = np.concatenate(parts)
        if not np.isfinite(vec).all():
            raise ValueError("non-finite feature value produced")
        return vec


def assemble_feature_vector(channels, center, recipe: FeatureRecipe) -> np.ndarray:
    """One-shot vector assembly; see FeatureExtractor for batched use."""
    return FeatureExtractor(channels, recipe).extract(center)


# --------------------------------------------------------------- selection

@dataclass(frozen=True)
class FeatureSelection:
    """Kept vector positions (strictly increasing) plus per-feature scores."""

    kept_indices: tuple
    scores: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.kept_indices)
        if not idx:
            raise ValueError("selection kept no features")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("kept_indices must be strictly increasing")
        object.__setattr__(self, "kept_indices", idx)
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))

    def apply(self, vectors: np.ndarray) -> np.ndarray:
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.ndim == 1:
            return arr[list(self.kept_indices)]
        return arr[:, list(self.kept_indices)]

    def to_dict(self) -> dict:
        return {"kept_indices": list(self.kept_indices),
                "scores": list(self.scores)}

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureSelection":
        return cls(tuple(doc["kept_indices"]), tuple(doc["scores"]))


def _safe_corr(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    va = float((da * da).sum())
    vb = float((db * db).sum())
    if va <= 0.0 or vb <= 0.0:
        return 0.0
    return float((da * db).sum()) / math.sqrt(va * vb)


def select_features(vectors: np.ndarray, tags, keep_max: int = 64,
                    redundancy_max: float = 0.95) -> FeatureSelection:
    """Relevance/redundancy filter.

    Relevance of a feature is its best absolute one-vs-rest correlation with
    any class indicator; features are kept greedily in relevance order,
    skipping any whose absolute correlation with an already-kept feature
    exceeds redundancy_max. Zero-relevance (e.g. constant) features are
    never kept.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("vectors must be a samples x features matrix")
    tags = list(tags)
    if len(tags) != x.shape[0]:
        raise ValueError("one tag per sample required")
    classes = sorted(set(tags))
    if len(classes) < 2:
        raise ValueError("at least two classes required")
    for c in classes:
        if tags.count(c) < 2:
            raise ValueError(f"class {c!r} has fewer than 2 samples")
    if keep_max < 1:
        raise ValueError("keep_max must be >= 1")
    n_feat = x.shape[1]
    indicators = [np.array([1.0 if t == c else 0.0 for t in tags]) for c in classes]
    scores = np.zeros(n_feat)
    for j in range(n_feat):
        col = x[:, j]
        scores[j] = max(abs(_safe_corr(col, ind)) for ind in indicators)
    order = sorted(range(n_feat), key=lambda j: (-scores[j], j))
    kept = []
    for j in order:
        if scores[j] <= 0.0:
            break
        if len(kept) >= keep_max:
            break
        if all(abs(_safe_corr(x[:, j], x[:, k])) <= redundancy_max for k in kept):
            kept.append(j)
    if not kept:
        raise ValueError("degenerate input: no informative features")
    kept.sort()
    return FeatureSelection(tuple(kept), tuple(scores))
