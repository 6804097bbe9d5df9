"""End-to-end quality gates for the whole package.

Each test checks one headline property at its stated tolerance and prints a
single labeled verdict line (visible even without -s). Protocols are fully
seeded, so reruns reproduce the same numbers.
"""
import time

import numpy as np
import pytest

import synthdata
from test_features import all_pixels, naive_glcm

from gridsight.classifier import (
    SampleEntry,
    Scaler,
    SearchSpace,
    TrainingSet,
    extract_training_vectors,
    grid_search,
    random_search,
    train_pipeline,
    train_svm,
)
from gridsight.features import (
    GLCM_OFFSETS_DEFAULT,
    FeatureExtractor,
    FeatureRecipe,
    SampleGeometry,
    build_glcm,
    build_glrcm,
    build_ogcm,
    ring_areas,
    select_features,
)
from gridsight.imagery import (
    FactorizedPlane,
    GrayPlane,
    GridSpec,
    InformativeMask,
    disc_pixels,
    factorize_plane,
    frame_change_mask,
    make_grid,
    split_channels,
)
from gridsight.mapping import AlertRule, GridMap, MapEntry, evaluate_rule, filter_points, map_image

EIGHT_OFFSETS = ((1, 0), (0, 1), (1, 1), (1, -1),
                 (-1, 0), (0, -1), (-1, -1), (-1, 1))


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return emit


# --------------------------------------------------------------- fixtures

@pytest.fixture(scope="module")
def parity_setup():
    """Three noisy textures, ~600 samples, standardized + selected features,
    plus one timed 400-trial grid search shared by two criteria."""
    rng = np.random.default_rng(0)
    side, radius, per_class, noise = 160, 8, 200, 45
    textures = {
        "stripes": synthdata.stripe_texture(rng, side, period=4, noise=noise),
        "checker": synthdata.checker_texture(rng, side, cell=4, noise=noise),
        "blobs": synthdata.blob_texture(rng, side, density=0.4, radius=3,
                                        noise=noise),
    }
    images = {n: synthdata.to_rgb(t) for n, t in textures.items()}
    margin = radius + 1
    samples = []
    for name in textures:
        for c in synthdata.random_centers(rng, (margin, side - margin),
                                          (margin, side - margin), per_class):
            samples.append(SampleEntry(name, c, name))
    tset = TrainingSet(classes=sorted(textures), samples=samples)
    recipe = FeatureRecipe(g_count=8, radii=[radius], ring_width=2,
                           ogcm_bins=8, fft_bands=[[0.0, 2.0], [2.0, 4.0]],
                           line_count=2, wavelet_levels=2,
                           selection_keep_max=32)
    t0 = time.perf_counter()
    raw = extract_training_vectors(tset, recipe, images)
    tags = [s.tag for s in tset.samples]
    std = Scaler.fit(raw).transform(raw)
    selection = select_features(std, tags, keep_max=32, redundancy_max=0.95)
    reduced = selection.apply(std)
    prep_time = time.perf_counter() - t0

    t0 = time.perf_counter()
    grid = grid_search(reduced, tags, SearchSpace(), folds=3, seed=0)
    grid_time = time.perf_counter() - t0
    return {"reduced": reduced, "tags": tags,
            "kept": len(selection.kept_indices), "prep_time": prep_time,
            "grid": grid, "grid_time": grid_time}


def _two_texture_image(seed, half=144, side=96):
    """Stripes on the left half, blob texture on the right half."""
    rng = np.random.default_rng(seed)
    s = max(half, side)
    left = synthdata.stripe_texture(rng, s, period=4)[:side, :half]
    right = synthdata.blob_texture(rng, s, density=0.4, radius=3)[:side, :half]
    return synthdata.to_rgb(np.concatenate([left, right], axis=1))


DUO_RADIUS = 8
DUO_RECIPE = dict(g_count=8, radii=[DUO_RADIUS], ring_width=2,
                  glcm_offsets=[], ogcm_bins=8, fft_bands=[],
                  line_count=0, wavelet_levels=0, selection_keep_max=32)


@pytest.fixture(scope="module")
def duo_pipeline():
    """Ring+gradient pipeline trained on one two-texture image."""
    train_img = _two_texture_image(0)
    rng = np.random.default_rng(1)
    samples = []
    for x, y in synthdata.random_centers(rng, (9, 135), (9, 87), 30):
        samples.append(SampleEntry("train", (x, y), "left"))
    for x, y in synthdata.random_centers(rng, (153, 279), (9, 87), 30):
        samples.append(SampleEntry("train", (x, y), "right"))
    tset = TrainingSet(classes=["left", "right"], samples=samples)
    bundle, report = train_pipeline(tset, FeatureRecipe(**DUO_RECIPE),
                                    {"train": train_img}, search="random",
                                    budget=12, folds=5, seed=0)
    return bundle, report


# -------------------------------------------------------------- criteria

def test_search_parity(parity_setup, verdict):
    """Random search (budget 30) matches the 400-trial grid within 0.02."""
    d = parity_setup
    grid_best = d["grid"].best.cv_accuracy
    t0 = time.perf_counter()
    gaps = []
    for seed in range(5):
        rnd = random_search(d["reduced"], d["tags"], SearchSpace(),
                            budget=30, seed=seed, folds=3)
        gaps.append(grid_best - rnd.best.cv_accuracy)
    total = d["prep_time"] + d["grid_time"] + time.perf_counter() - t0
    worst = max(gaps)
    ok = worst <= 0.02 and d["kept"] >= 24 and total < 600.0
    verdict("search-parity", ok,
            f"grid best {grid_best:.4f}, worst seed gap {worst:+.4f} "
            f"(tol 0.02, 5 seeds), {d['kept']} selected features, "
            f"{total:.0f}s total (cap 600s)")


def test_search_speedup(parity_setup, verdict):
    """Budget-20 random search runs >= 10x faster than the 400-trial grid."""
    d = parity_setup
    t0 = time.perf_counter()
    rnd = random_search(d["reduced"], d["tags"], SearchSpace(),
                        budget=20, seed=0, folds=3)
    rnd_time = time.perf_counter() - t0
    ratio = d["grid_time"] / rnd_time
    ok = (rnd_time <= d["grid_time"] / 10.0
          and len(d["grid"].trials) == 400 and len(rnd.trials) <= 20)
    verdict("search-speedup", ok,
            f"grid {len(d['grid'].trials)} trials {d['grid_time']:.1f}s vs "
            f"random {len(rnd.trials)} trials {rnd_time:.2f}s -> {ratio:.1f}x "
            f"(need >= 10x)")


def test_end_to_end_accuracy(duo_pipeline, verdict):
    """Full pipeline labels >= 95% of a held-out two-texture image; CV >= 0.97."""
    bundle, report = duo_pipeline
    held = _two_texture_image(99)
    gmap = map_image(held, bundle, GridSpec(step=8), image_id="held")
    mid = held.shape[1] // 2
    correct = sum(1 for e in gmap.entries
                  if e.tag == ("left" if e.x < mid else "right"))
    accuracy = correct / len(gmap.entries)
    cv = report.best.cv_accuracy
    ok = accuracy >= 0.95 and cv >= 0.97
    verdict("end-to-end-accuracy", ok,
            f"held-out grid accuracy {correct}/{len(gmap.entries)} = "
            f"{accuracy:.4f} (need 0.95), training CV {cv:.4f} (need 0.97)")


def _robustness_accuracy(seed, matrix_kind):
    """Train on blob densities at scale 1.0, test at 0.5x and 2x rescale."""
    radius = 24
    common = dict(g_count=4, radii=[radius], ring_width=4, ogcm_pairs=[],
                  fft_bands=[], line_count=0, wavelet_levels=0,
                  selection_keep_max=32)
    if matrix_kind == "glrcm":
        recipe = FeatureRecipe(glcm_offsets=[], use_glrcm=True, **common)
    else:
        recipe = FeatureRecipe(use_glrcm=False, **common)
    rng = np.random.default_rng(seed)
    side = 256
    images = {
        "dense": synthdata.to_rgb(synthdata.blob_texture(
            rng, side, density=0.55, radius=6, noise=6)),
        "sparse": synthdata.to_rgb(synthdata.blob_texture(
            rng, side, density=0.15, radius=6, noise=6)),
    }
    samples = []
    for name in images:
        for c in synthdata.random_centers(rng, (26, side - 26),
                                          (26, side - 26), 50):
            samples.append(SampleEntry(name, c, name))
    tset = TrainingSet(classes=sorted(images), samples=samples)
    raw = extract_training_vectors(tset, recipe, images)
    tags = [s.tag for s in tset.samples]
    scaler = Scaler.fit(raw)
    std = scaler.transform(raw)
    selection = select_features(std, tags, keep_max=32, redundancy_max=0.95)
    reduced = selection.apply(std)
    report = random_search(reduced, tags, SearchSpace(), budget=8,
                           seed=seed, folds=3)
    model = train_svm(reduced, tags, report.best.c, report.best.gamma,
                      classes=tset.classes)
    total = correct = 0
    for factor in (0.5, 2.0):
        lo = int(np.ceil((radius + 1) / factor))
        hi = int((side * factor - radius - 2) / factor)
        for name, img in images.items():
            scaled = synthdata.rescale(img, factor)
            extractor = FeatureExtractor(split_channels(scaled), recipe)
            for bx, by in synthdata.random_centers(rng, (lo, hi),
                                                   (lo, hi), 40):
                center = (int(round(bx * factor)), int(round(by * factor)))
                row = scaler.transform(extractor.extract(center)[None, :])
                total += 1
                correct += model.predict_batch(selection.apply(row))[0] == name
    return correct / total


def test_resolution_robustness(verdict):
    """Ring histograms beat plain co-occurrence on rescaled test images."""
    margins = []
    for seed in range(5):
        ring = _robustness_accuracy(seed, "glrcm")
        cooc = _robustness_accuracy(seed, "glcm")
        margins.append((ring, cooc))
    ok = all(r > g for r, g in margins)
    detail = ", ".join(f"s{i}: {r:.3f}>{g:.3f}" for i, (r, g)
                       in enumerate(margins))
    verdict("resolution-robustness", ok,
            f"per-seed test accuracy ring-vs-cooc (strict, 0.5x+2x): {detail}")


def test_linear_complexity(verdict):
    """Matrix build time grows at most linearly with disc pixel count."""
    rng = np.random.default_rng(0)
    plane = GrayPlane(rng.integers(0, 256, size=(160, 160), dtype=np.uint8))
    fact = factorize_plane(plane, 16)

    def median_build_time(radius, runs=25, reps=4):
        pix = disc_pixels((80, 80), radius)
        times = []
        for _ in range(runs):
            t0 = time.perf_counter()
            for _ in range(reps):
                build_glcm(fact, pix, GLCM_OFFSETS_DEFAULT, symmetric=True)
                build_ogcm(plane, pix, bins=16)
            times.append((time.perf_counter() - t0) / reps)
        return float(np.median(times))

    base = median_build_time(16)
    quad = median_build_time(32)
    pixel_ratio = len(disc_pixels((0, 0), 32)) / len(disc_pixels((0, 0), 16))
    ratio = quad / base
    ok = ratio <= 5.0
    verdict("linear-complexity", ok,
            f"{pixel_ratio:.2f}x pixels -> {ratio:.2f}x time "
            f"(median of 25 runs, cap 5.0x)")


def test_oracle_equivalence(verdict):
    """Vectorized matrix builders agree bit-exactly with naive enumeration."""
    rng = np.random.default_rng(42)
    glcm_fail = 0
    for _ in range(200):
        g = int(rng.integers(2, 9))
        levels = rng.integers(0, g, size=(9, 9)).astype(np.uint8)
        fact = FactorizedPlane(levels, g)
        pixels = all_pixels(9, 9)
        for symmetric in (False, True):
            got = build_glcm(fact, pixels, EIGHT_OFFSETS, symmetric=symmetric)
            want = naive_glcm(levels, g, pixels, EIGHT_OFFSETS, symmetric)
            if not np.array_equal(got.counts, want):
                glcm_fail += 1

    ring_fail = 0
    for _ in range(50):
        w = int(rng.integers(1, 5))
        n = int(rng.integers(2, 7))
        radius = w * n
        side = 2 * radius + 1
        fact = factorize_plane(
            GrayPlane(rng.integers(0, 256, size=(side, side), dtype=np.uint8)), 8)
        geometry = SampleGeometry((radius, radius), radius, w)
        rows = build_glrcm(fact, geometry).counts.sum(axis=1)
        # independent ring areas: ring(d) = 1 for the center, else ceil(d/w)
        pix = disc_pixels((0, 0), radius)
        d = np.sqrt(pix[:, 0] ** 2 + pix[:, 1] ** 2)
        ring = np.maximum(np.ceil(d / w), 1.0).astype(np.int64) - 1
        brute = np.bincount(ring, minlength=n)
        if not (np.array_equal(rows, brute)
                and np.array_equal(rows, ring_areas(geometry))):
            ring_fail += 1

    ok = glcm_fail == 0 and ring_fail == 0
    verdict("oracle-equivalence", ok,
            f"pair-count mismatches {glcm_fail}/400 (200 patches x 2 modes), "
            f"ring-sum mismatches {ring_fail}/50 geometries")


def test_limiter_semantics(verdict):
    """Filtering is inclusive at the threshold and monotone in the limiter."""
    rng = np.random.default_rng(3)
    classes = ("a", "b", "c", "d")
    entries = []
    for i in range(300):
        v = rng.random(4) + 1e-9
        p = tuple(v / v.sum())
        tag = classes[int(np.argmax(p))]
        entries.append(MapEntry(i % 20, i // 20, True, tag, p))
    # winning probability exactly at the boundary
    entries.append(MapEntry(90, 90, True, "a", (0.3, 0.25, 0.25, 0.2)))
    gmap = GridMap("synthetic", 1, 1, classes, tuple(entries))

    boundary_in = (90, 90) in filter_points(gmap, "a", 0.3)
    exact = True
    for tag in classes:
        idx = classes.index(tag)
        want = [(e.x, e.y) for e in gmap.entries
                if e.tag == tag and e.probs[idx] >= 0.3]
        exact &= filter_points(gmap, tag, 0.3) == want
    monotone = True
    for _ in range(40):
        lo, hi = sorted(rng.random(2))
        for tag in classes:
            monotone &= set(filter_points(gmap, tag, hi)) <= \
                set(filter_points(gmap, tag, lo))
    ok = boundary_in and exact and monotone
    verdict("limiter-semantics", ok,
            f"boundary 0.3 included: {boundary_in}, exact filter at 0.3: "
            f"{exact}, monotone over 40 random limiter pairs: {monotone}")


def test_alert_scenario(duo_pipeline, verdict):
    """Presence fires first at frame 7; absence covers frames 0-6; only
    changed blocks are ever classified."""
    bundle, _ = duo_pipeline
    rng = np.random.default_rng(7)
    background = synthdata.to_rgb(synthdata.blob_texture(rng, 96, density=0.4,
                                                         radius=3))
    patch = synthdata.to_rgb(
        synthdata.stripe_texture(rng, 96, period=4)[16:80, 16:80])
    frames = []
    for i in range(20):
        f = background.copy()
        if i >= 7:
            f[16:80, 16:80] = patch
        frames.append(f)

    def to_gray(arr):
        return GrayPlane((arr.astype(np.uint16).sum(axis=2) // 3)
                         .astype(np.uint8))

    block = 16
    reference = to_gray(frames[0])
    grid = GridSpec(step=8)
    maps = []
    gating_ok = True
    for f in frames:
        gray = to_gray(f)
        changed = frame_change_mask(gray, reference, block=block)
        points = make_grid(gray.width, gray.height, grid, DUO_RADIUS)
        flags = np.array([changed[y // block, x // block] for x, y in points],
                         dtype=bool)
        gmap = map_image(f, bundle, grid, mask=InformativeMask(flags))
        for e in gmap.entries:
            gating_ok &= e.informative == bool(changed[e.y // block,
                                                       e.x // block])
        maps.append(gmap)

    presence = evaluate_rule(maps, AlertRule(
        id="p", kind="presence", class_tag="left", limiter=0.5))
    absence = evaluate_rule(maps, AlertRule(
        id="a", kind="absence", class_tag="left", limiter=0.5))
    p_frames = [e.frame for e in presence]
    a_frames = [e.frame for e in absence]
    quiet = all(len(filter_points(m, "left", 0.5)) == 0 for m in maps[:7])
    ok = (p_frames == list(range(7, 20)) and a_frames == list(range(7))
          and gating_ok and quiet)
    verdict("alert-scenario", ok,
            f"presence frames {p_frames[:1]}..{p_frames[-1:]} "
            f"(first must be 7), absence frames {a_frames}, "
            f"mask gating consistent: {gating_ok}")


def test_determinism(verdict):
    """Same seeds -> byte-identical bundles and grid maps, equal report
    digests (wall-clock fields excluded by design)."""
    def one_run():
        train_img = _two_texture_image(5)
        rng = np.random.default_rng(6)
        samples = []
        for x, y in synthdata.random_centers(rng, (9, 135), (9, 87), 12):
            samples.append(SampleEntry("t", (x, y), "left"))
        for x, y in synthdata.random_centers(rng, (153, 279), (9, 87), 12):
            samples.append(SampleEntry("t", (x, y), "right"))
        tset = TrainingSet(classes=["left", "right"], samples=samples)
        bundle, report = train_pipeline(tset, FeatureRecipe(**DUO_RECIPE),
                                        {"t": train_img}, search="random",
                                        budget=5, folds=3, seed=11)
        gmap = map_image(_two_texture_image(77), bundle, GridSpec(step=16),
                         image_id="held")
        return bundle.to_json(), gmap.to_jsonl(), report

    bundle_a, map_a, report_a = one_run()
    bundle_b, map_b, report_b = one_run()
    same_bundle = bundle_a == bundle_b
    same_map = map_a == map_b
    same_report = (report_a.determinism_digest()
                   == report_b.determinism_digest())
    same_trials = [(t.index, t.c, t.gamma, t.cv_accuracy)
                   for t in report_a.trials] == \
                  [(t.index, t.c, t.gamma, t.cv_accuracy)
                   for t in report_b.trials]
    ok = same_bundle and same_map and same_report and same_trials
    verdict("determinism", ok,
            f"bundle bytes equal: {same_bundle}, grid-map bytes equal: "
            f"{same_map}, report digests equal: {same_report} "
            f"(timing fields excluded), trial-by-trial equal: {same_trials}")
