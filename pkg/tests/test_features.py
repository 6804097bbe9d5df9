import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsight.features import (
    CoocMatrix,
    FeatureRecipe,
    FeatureSelection,
    FeatureExtractor,
    assemble_feature_vector,
    build_glcm,
    build_glrcm,
    build_ogcm,
    fft_power_bands,
    haar_detail_powers,
    haralick_stats,
    inscribed_patch_side,
    line_spectrum,
    ring_areas,
    select_features,
)
from gridsight.imagery import (
    FactorizedPlane,
    GrayPlane,
    SampleGeometry,
    disc_pixels,
)


def naive_glcm(levels, g_count, pixels, offsets, symmetric):
    """Straightforward double-loop pair enumerator used as an oracle."""
    member = {tuple(p) for p in pixels}
    counts = np.zeros((g_count, g_count), dtype=np.int64)
    for x, y in pixels:
        for dx, dy in offsets:
            if (x + dx, y + dy) in member:
                a = levels[y, x]
                b = levels[y + dy, x + dx]
                counts[a, b] += 1
                if symmetric:
                    counts[b, a] += 1
    return counts


def all_pixels(w, h):
    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


# ------------------------------------------------------------- CoocMatrix

def test_cooc_matrix_total_must_match():
    with pytest.raises(ValueError):
        CoocMatrix("GLCM", np.ones((2, 2), dtype=np.int64), total=5)


def test_cooc_matrix_rejects_negative():
    with pytest.raises(ValueError):
        CoocMatrix("GLCM", np.array([[-1, 1], [0, 0]]), total=0)


def test_cooc_matrix_rejects_unknown_kind():
    with pytest.raises(ValueError):
        CoocMatrix("XYZ", np.zeros((2, 2), dtype=np.int64), total=0)


# ------------------------------------------------------------------- GLCM

def test_glcm_constant_disc_single_cell():
    plane = FactorizedPlane(np.full((21, 21), 5, dtype=np.uint8), g_count=8)
    disc = disc_pixels((10, 10), 6)
    m = build_glcm(plane, disc, [(1, 0)], symmetric=False)
    assert m.counts[5, 5] == m.total > 0
    assert m.counts.sum() == m.total


PATCH_3X3 = np.array([[0, 0, 1], [0, 1, 1], [1, 1, 1]], dtype=np.uint8)


def test_glcm_worked_patch_asymmetric():
    plane = FactorizedPlane(PATCH_3X3, g_count=2)
    m = build_glcm(plane, all_pixels(3, 3), [(1, 0)], symmetric=False)
    assert m.total == 6
    assert m.counts[0, 0] == 1
    assert m.counts[0, 1] == 2
    assert m.counts[1, 0] == 0
    assert m.counts[1, 1] == 3


def test_glcm_worked_patch_symmetric():
    plane = FactorizedPlane(PATCH_3X3, g_count=2)
    m = build_glcm(plane, all_pixels(3, 3), [(1, 0)], symmetric=True)
    assert m.total == 12
    assert m.counts[0, 1] == 2
    assert m.counts[1, 0] == 2
    assert np.array_equal(m.counts, m.counts.T)


def test_glcm_empty_pixel_set_rejected():
    plane = FactorizedPlane(PATCH_3X3, g_count=2)
    with pytest.raises(ValueError):
        build_glcm(plane, np.empty((0, 2), dtype=np.int64), [(1, 0)])


def test_glcm_partners_restricted_to_set():
    # membership matters: a lone pair of horizontally adjacent pixels
    plane = FactorizedPlane(np.array([[0, 1, 0]], dtype=np.uint8), g_count=2)
    pix = np.array([[0, 0], [1, 0]])
    m = build_glcm(plane, pix, [(1, 0)], symmetric=False)
    assert m.total == 1
    assert m.counts[0, 1] == 1


@pytest.mark.parametrize("symmetric", [False, True])
def test_glcm_matches_naive_oracle(symmetric):
    rng = np.random.default_rng(42)
    offsets = [(1, 0), (0, 1), (1, 1), (1, -1), (2, 0), (0, 2), (-1, 0), (2, 1)]
    for _ in range(40):
        g = int(rng.integers(2, 5))
        lev = rng.integers(0, g, size=(9, 9)).astype(np.uint8)
        plane = FactorizedPlane(lev, g_count=g)
        # random pixel subset plus the full patch
        n = int(rng.integers(5, 82))
        idx = rng.choice(81, size=n, replace=False)
        subset = all_pixels(9, 9)[idx]
        for pixels in (all_pixels(9, 9), subset):
            fast = build_glcm(plane, pixels, offsets, symmetric)
            slow = naive_glcm(lev, g, pixels, offsets, symmetric)
            assert np.array_equal(fast.counts, slow)


def test_glcm_symmetric_equals_own_transpose():
    rng = np.random.default_rng(3)
    lev = rng.integers(0, 8, size=(15, 15)).astype(np.uint8)
    plane = FactorizedPlane(lev, g_count=8)
    disc = disc_pixels((7, 7), 6)
    m = build_glcm(plane, disc, [(1, 0), (0, 1), (1, 1)], symmetric=True)
    assert np.array_equal(m.counts, m.counts.T)


# ------------------------------------------------------------------- OGCM

def test_ogcm_constant_disc_all_mass_at_origin():
    plane = GrayPlane(np.full((31, 31), 99, dtype=np.uint8))
    disc = disc_pixels((15, 15), 9)
    m = build_ogcm(plane, disc, pairs=[("SN", "EW")], bins=16)
    assert m.counts[0, 0] == m.total > 0


def test_ogcm_total_is_interior_times_pairs():
    rng = np.random.default_rng(5)
    plane = GrayPlane(rng.integers(0, 256, size=(41, 41)).astype(np.uint8))
    disc = disc_pixels((20, 20), 10)
    single = build_ogcm(plane, disc, pairs=[("SN", "EW")], bins=8)
    both = build_ogcm(plane, disc, pairs=[("SN", "EW"), ("NW", "NE")], bins=8)
    # with both pairs the interior shrinks to pixels with all 8 neighbors in-disc
    member = {tuple(p) for p in disc}
    interior8 = sum(
        1 for (x, y) in disc
        if all((x + dx, y + dy) in member
               for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0))
    )
    interior4 = sum(
        1 for (x, y) in disc
        if all(p in member for p in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)))
    )
    assert single.total == interior4
    assert both.total == 2 * interior8


def test_ogcm_vertical_step_edge_row_zero():
    lev = np.zeros((25, 25), dtype=np.uint8)
    lev[:, 12:] = 255
    plane = GrayPlane(lev)
    disc = disc_pixels((12, 12), 8)
    m = build_ogcm(plane, disc, pairs=[("SN", "EW")], bins=16)
    assert m.counts[1:, :].sum() == 0  # SN gradient is zero everywhere
    assert m.counts[0, 15] > 0  # full-range EW jump lands in the top bin
    assert m.counts[0, 0] > 0  # flat regions away from the edge


def test_ogcm_empty_interior_rejected():
    plane = GrayPlane(np.zeros((9, 9), dtype=np.uint8))
    disc = disc_pixels((4, 4), 1)  # plus-shape: no pixel has all 8 neighbors
    with pytest.raises(ValueError):
        build_ogcm(plane, disc, pairs=[("SN", "EW"), ("NW", "NE")])


def test_ogcm_unknown_pair_rejected():
    plane = GrayPlane(np.zeros((9, 9), dtype=np.uint8))
    with pytest.raises(ValueError):
        build_ogcm(plane, disc_pixels((4, 4), 3), pairs=[("UP", "DOWN")])


# ------------------------------------------------------------------ GLRCM

def test_glrcm_constant_plane_ring_counts():
    plane = FactorizedPlane(np.full((9, 9), 3, dtype=np.uint8), g_count=8)
    geo = SampleGeometry(center=(4, 4), radius=2, ring_width=1)
    m = build_glrcm(plane, geo)
    assert m.kind == "GLRCM"
    assert m.rows == 2 and m.cols == 8
    assert m.counts[0, 3] == 5
    assert m.counts[1, 3] == 8
    assert m.total == 13
    assert m.counts.sum() == m.counts[:, 3].sum()


def test_glrcm_rotation_invariance():
    rng = np.random.default_rng(17)
    r = 6
    side = 2 * r + 1
    base = rng.integers(0, 16, size=(side, side)).astype(np.uint8)
    geo = SampleGeometry(center=(r, r), radius=r, ring_width=2)
    m0 = build_glrcm(FactorizedPlane(base, 16), geo)
    for k in (1, 2, 3):
        mrot = build_glrcm(FactorizedPlane(np.rot90(base, k).copy(), 16), geo)
        assert np.array_equal(m0.counts, mrot.counts)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_glrcm_row_sums_equal_ring_areas(width, n_rings, seed):
    rng = np.random.default_rng(seed)
    radius = width * n_rings
    side = 2 * radius + 1
    lev = rng.integers(0, 4, size=(side, side)).astype(np.uint8)
    geo = SampleGeometry(center=(radius, radius), radius=radius, ring_width=width)
    m = build_glrcm(FactorizedPlane(lev, 4), geo)
    assert np.array_equal(m.counts.sum(axis=1), ring_areas(geo))
    assert m.total == len(disc_pixels((0, 0), radius))


def test_glrcm_center_pixel_in_first_ring():
    lev = np.zeros((9, 9), dtype=np.uint8)
    lev[4, 4] = 3
    m = build_glrcm(FactorizedPlane(lev, 4), SampleGeometry((4, 4), 4, 2))
    assert m.counts[0, 3] == 1
    assert m.counts[1:, 3].sum() == 0


def test_glrcm_border_crossing_rejected():
    plane = FactorizedPlane(np.zeros((9, 9), dtype=np.uint8), g_count=4)
    with pytest.raises(ValueError):
        build_glrcm(plane, SampleGeometry(center=(1, 4), radius=2, ring_width=1))


# --------------------------------------------------------------- Haralick

def test_haralick_point_mass():
    counts = np.zeros((4, 4), dtype=np.int64)
    counts[2, 2] = 9
    c, h, e, u = haralick_stats(CoocMatrix("GLCM", counts, 9))
    assert c == 0.0
    assert h == 1.0
    assert e == 0.0
    assert u == 1.0


def test_haralick_two_equal_cells():
    counts = np.zeros((4, 4), dtype=np.int64)
    counts[0, 0] = 5
    counts[3, 3] = 5
    c, h, e, u = haralick_stats(CoocMatrix("GLCM", counts, 10))
    assert c == 0.0 and h == 1.0  # both cells on the diagonal
    assert math.isclose(e, math.log(2))
    assert math.isclose(u, 0.5)


def test_haralick_off_diagonal_contrast():
    counts = np.zeros((4, 4), dtype=np.int64)
    counts[0, 3] = 1
    c, h, _, _ = haralick_stats(CoocMatrix("GLCM", counts, 1))
    assert c == 9.0
    assert math.isclose(h, 0.25)


def test_haralick_zero_total_rejected():
    m = CoocMatrix("GLCM", np.zeros((3, 3), dtype=np.int64), 0)
    with pytest.raises(ValueError):
        haralick_stats(m)


# -------------------------------------------------------------------- FFT

def test_fft_constant_patch_no_power():
    plane = GrayPlane(np.full((64, 64), 120, dtype=np.uint8))
    bands = [(0.0, 4.0), (4.0, 16.0)]
    out = fft_power_bands(plane, (32, 32), 16, bands)
    assert np.allclose(out, 0.0)


def test_fft_cosine_lands_in_its_band():
    side = 32
    xs = np.arange(64)
    row = 128 + 100 * np.cos(2 * np.pi * 5 * xs / side)
    img = np.tile(np.round(row), (64, 1)).astype(np.uint8)
    plane = GrayPlane(img)
    bands = [(0.0, 3.0), (3.0, 8.0), (8.0, 16.0)]
    out = fft_power_bands(plane, (32, 32), side, bands)
    assert out[1] > 0.99 * out.sum()


def test_fft_parseval():
    rng = np.random.default_rng(23)
    img = rng.integers(0, 256, size=(40, 40)).astype(np.uint8)
    plane = GrayPlane(img)
    side = 16
    out = fft_power_bands(plane, (20, 20), side, [(0.0, float(side))])
    patch = img[12:28, 12:28].astype(np.float64)
    assert math.isclose(out[0], ((patch - patch.mean()) ** 2).sum(), rel_tol=1e-9)


def test_fft_border_and_side_validation():
    plane = GrayPlane(np.zeros((32, 32), dtype=np.uint8))
    with pytest.raises(ValueError):
        fft_power_bands(plane, (4, 16), 16, [(0, 8)])
    with pytest.raises(ValueError):
        fft_power_bands(plane, (16, 16), 12, [(0, 8)])


def test_inscribed_patch_side():
    assert inscribed_patch_side(12) == 16
    assert inscribed_patch_side(32) == 32
    assert inscribed_patch_side(16) == 16
    assert inscribed_patch_side(11) == 8
    assert inscribed_patch_side(1) == 2


# ----------------------------------------------------------- line spectrum

def test_haar_detail_constant_signal():
    assert np.allclose(haar_detail_powers(np.full(16, 7.0), 4), 0.0)


def test_haar_energy_split():
    # one level on [a, b]: detail power = (a-b)^2 / 2
    out = haar_detail_powers(np.array([3.0, 1.0]), 1)
    assert math.isclose(out[0], 2.0)


def test_haar_rejects_bad_length():
    with pytest.raises(ValueError):
        haar_detail_powers(np.zeros(10), 2)
    with pytest.raises(ValueError):
        haar_detail_powers(np.zeros(4), 3)


def test_line_spectrum_constant_disc():
    plane = GrayPlane(np.full((41, 41), 50, dtype=np.uint8))
    out = line_spectrum(plane, (20, 20), 16, line_count=4, levels=4)
    assert out.shape == (16,)
    assert np.allclose(out, 0.0)


def test_line_spectrum_alternating_finest_level():
    lev = np.zeros((41, 41), dtype=np.uint8)
    lev[:, 1::2] = 255
    plane = GrayPlane(lev)
    out = line_spectrum(plane, (20, 20), 16, line_count=4, levels=4)
    horiz = out[:4]  # line 0 runs along +x
    assert horiz[0] > 0.9 * horiz.sum()


def test_line_spectrum_shape_and_errors():
    plane = GrayPlane(np.zeros((41, 41), dtype=np.uint8))
    assert line_spectrum(plane, (20, 20), 8, 6, 3).shape == (18,)
    with pytest.raises(ValueError):
        line_spectrum(plane, (20, 20), 3, 4, 4)  # 2R+1=7 pads to 8 < 2^4
    with pytest.raises(ValueError):
        line_spectrum(plane, (2, 20), 8, 4, 3)  # disc out of bounds


# ------------------------------------------------------------------ recipe

def test_recipe_roundtrip_json():
    rec = FeatureRecipe(g_count=8, radii=[8, 16], ring_width=4,
                        fft_bands=[[0, 2], [2, 4]])
    back = FeatureRecipe.from_json(rec.to_json())
    assert back == rec
    assert back.to_json() == rec.to_json()


def test_recipe_version_check():
    doc = FeatureRecipe().to_dict()
    doc["version"] = 99
    with pytest.raises(ValueError):
        FeatureRecipe.from_dict(doc)


def test_recipe_radius_ring_width_validation():
    with pytest.raises(ValueError):
        FeatureRecipe(radii=[10], ring_width=4)


def test_recipe_must_enable_a_family():
    with pytest.raises(ValueError):
        FeatureRecipe(glcm_offsets=[], ogcm_pairs=[], use_glrcm=False,
                      fft_bands=[], line_count=0)


def test_recipe_vector_length_formula():
    rec = FeatureRecipe(g_count=4, radii=[8], ring_width=2,
                        glcm_offsets=[[1, 0]], glcm_symmetric=True,
                        ogcm_pairs=[["SN", "EW"]], ogcm_bins=4,
                        use_glrcm=True, use_raw_matrix=True, use_haralick=True,
                        fft_bands=[[0, 2]], line_count=2, wavelet_levels=3)
    # per channel: glcm 16+4, ogcm 16+4, glrcm 4*4+4, fft 1, lines 6
    assert rec.vector_length() == 3 * (20 + 20 + 20 + 1 + 6)


# ---------------------------------------------------------------- assembly

def _rgb_noise(seed, side=64):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(side, side, 3)).astype(np.uint8)


def test_assemble_glrcm_only_length():
    rec = FeatureRecipe(g_count=4, radii=[8], ring_width=2,
                        glcm_offsets=[], ogcm_pairs=[],
                        use_glrcm=True, use_haralick=False,
                        fft_bands=[], line_count=0)
    img = _rgb_noise(1)
    from gridsight.imagery import split_channels
    vec = assemble_feature_vector(split_channels(img), (32, 32), rec)
    assert len(vec) == 3 * 4 * 4  # 3 channels x N=4 rings x G=4
    assert len(vec) == rec.vector_length()


def test_assemble_channel_blocks():
    rec = FeatureRecipe(g_count=4, radii=[8], ring_width=2,
                        glcm_offsets=[], ogcm_pairs=[],
                        use_glrcm=True, use_haralick=False,
                        fft_bands=[], line_count=0)
    from gridsight.imagery import split_channels, factorize_plane
    img = _rgb_noise(2)
    channels = split_channels(img)
    vec = assemble_feature_vector(channels, (32, 32), rec)
    geo = SampleGeometry((32, 32), 8, 2)
    first = build_glrcm(factorize_plane(channels[0], 4), geo)
    assert np.allclose(vec[:16], first.normalized().ravel())


def test_assemble_radius_blocks_ordered():
    rec2 = FeatureRecipe(g_count=4, radii=[4, 8], ring_width=2,
                         glcm_offsets=[], ogcm_pairs=[],
                         use_glrcm=True, use_haralick=False,
                         fft_bands=[], line_count=0)
    rec_small = FeatureRecipe(g_count=4, radii=[4], ring_width=2,
                              glcm_offsets=[], ogcm_pairs=[],
                              use_glrcm=True, use_haralick=False,
                              fft_bands=[], line_count=0)
    from gridsight.imagery import split_channels
    channels = split_channels(_rgb_noise(3))
    both = assemble_feature_vector(channels, (32, 32), rec2)
    small = assemble_feature_vector(channels, (32, 32), rec_small)
    # channel 0 block of `both` starts with the radius-4 family block
    assert np.allclose(both[:8], small[:8])


def test_assemble_length_independent_of_content():
    rec = FeatureRecipe(g_count=8, radii=[16], ring_width=4)
    from gridsight.imagery import split_channels
    a = assemble_feature_vector(split_channels(_rgb_noise(4)), (32, 32), rec)
    b = assemble_feature_vector(split_channels(_rgb_noise(5)), (30, 28), rec)
    assert len(a) == len(b) == rec.vector_length()
    assert np.isfinite(a).all() and np.isfinite(b).all()


def test_assemble_out_of_bounds_rejected():
    rec = FeatureRecipe(g_count=8, radii=[16], ring_width=4)
    from gridsight.imagery import split_channels
    channels = split_channels(_rgb_noise(6))
    with pytest.raises(ValueError):
        assemble_feature_vector(channels, (10, 32), rec)


def test_extractor_matches_one_shot():
    rec = FeatureRecipe(g_count=8, radii=[8], ring_width=4,
                        fft_bands=[[0, 4]], line_count=2, wavelet_levels=2)
    from gridsight.imagery import split_channels
    channels = split_channels(_rgb_noise(7))
    ex = FeatureExtractor(channels, rec)
    for center in [(20, 20), (40, 31)]:
        assert np.array_equal(ex.extract(center),
                              assemble_feature_vector(channels, center, rec))


# --------------------------------------------------------------- selection

def test_selection_indicator_feature_ranked_first():
    rng = np.random.default_rng(9)
    tags = ["a"] * 10 + ["b"] * 10
    x = rng.normal(size=(20, 5))
    x[:, 3] = [1.0 if t == "a" else 0.0 for t in tags]
    sel = select_features(x, tags, keep_max=3)
    assert 3 in sel.kept_indices
    assert sel.scores[3] == max(sel.scores)
    assert math.isclose(sel.scores[3], 1.0)


def test_selection_constant_feature_never_kept():
    rng = np.random.default_rng(10)
    tags = ["a"] * 8 + ["b"] * 8
    x = rng.normal(size=(16, 4))
    x[:, 2] = 7.0
    sel = select_features(x, tags, keep_max=4)
    assert 2 not in sel.kept_indices
    assert sel.scores[2] == 0.0


def test_selection_duplicate_feature_kept_once():
    rng = np.random.default_rng(11)
    tags = ["a"] * 12 + ["b"] * 12
    sig = np.array([3.0 if t == "a" else -3.0 for t in tags])
    noise = rng.normal(scale=0.1, size=24)
    x = np.stack([sig + noise, sig + noise, rng.normal(size=24)], axis=1)
    sel = select_features(x, tags, keep_max=3, redundancy_max=0.95)
    assert (0 in sel.kept_indices) != (1 in sel.kept_indices)


def test_selection_requires_two_classes():
    x = np.random.default_rng(0).normal(size=(6, 3))
    with pytest.raises(ValueError):
        select_features(x, ["a"] * 6)


def test_selection_keep_max_respected():
    rng = np.random.default_rng(12)
    tags = ["a"] * 20 + ["b"] * 20
    x = rng.normal(size=(40, 30))
    x += np.array([[1.0 if t == "a" else 0.0 for t in tags]]).T
    sel = select_features(x, tags, keep_max=5, redundancy_max=1.0)
    assert len(sel.kept_indices) == 5
    assert list(sel.kept_indices) == sorted(sel.kept_indices)


def test_selection_all_constant_rejected():
    x = np.ones((8, 3))
    with pytest.raises(ValueError):
        select_features(x, ["a"] * 4 + ["b"] * 4)


def test_selection_roundtrip_and_apply():
    sel = FeatureSelection((1, 4, 6), (0.1, 0.9, 0.2, 0.0, 0.8, 0.3, 0.7))
    back = FeatureSelection.from_dict(sel.to_dict())
    assert back.kept_indices == sel.kept_indices
    vec = np.arange(7.0)
    assert np.array_equal(sel.apply(vec), [1.0, 4.0, 6.0])
    mat = np.arange(14.0).reshape(2, 7)
    assert sel.apply(mat).shape == (2, 3)


def test_selection_rejects_disorder():
    with pytest.raises(ValueError):
        FeatureSelection((4, 1), (0.0,) * 5)
    with pytest.raises(ValueError):
        FeatureSelection((), ())
