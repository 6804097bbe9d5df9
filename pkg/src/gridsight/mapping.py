"""Image mapping: classify every grid point, filter, count, alert.

A GridMap holds one record per grid point. Non-informative points carry no
class at all and count as "class absent" for every rule. Rules are
declarative (presence / absence / count / cluster_shift) and are evaluated
over a frame sequence with a consecutive-frame persistence window.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import ModelBundle
from .features import FeatureExtractor
from .imagery import GridSpec, InformativeMask, load_image, make_grid, split_channels

# class index -> mark color; the first class is drawn with white points
PALETTE = (
    (255, 255, 255),
    (255, 80, 80),
    (80, 255, 80),
    (90, 130, 255),
    (255, 255, 0),
    (255, 0, 255),
    (0, 255, 255),
    (255, 160, 0),
)


@dataclass(frozen=True)
class MapEntry:
    x: int
    y: int
    informative: bool
    tag: str | None
    probs: tuple | None

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "informative": self.informative,
            "class": self.tag,
            "p": None if self.probs is None else list(self.probs),
        }


@dataclass(frozen=True)
class GridMap:
    """Classification of every grid point of one image."""

    image_id: str
    step: int
    radius: int
    classes: tuple
    entries: tuple

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(e.to_dict(), sort_keys=True)
                         for e in self.entries) + "\n"

    @classmethod
    def from_jsonl(cls, text: str, classes, image_id: str = "",
                   step: int = 0, radius: int = 0) -> "GridMap":
        entries = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            probs = doc.get("p")
            entries.append(MapEntry(
                x=int(doc["x"]), y=int(doc["y"]),
                informative=bool(doc["informative"]),
                tag=doc.get("class"),
                probs=None if probs is None else tuple(probs),
            ))
        return cls(image_id, step, radius, tuple(classes), tuple(entries))


def map_image(image, bundle: ModelBundle, grid: GridSpec,
              mask: InformativeMask | None = None,
              image_id: str = "") -> GridMap:
    """Classify every (informative) grid point of an image with a bundle."""
    if isinstance(image, (str, Path)):
        arr = load_image(image)
    else:
        arr = np.asarray(image)
    channels = split_channels(arr)
    radius = bundle.recipe.max_radius()
    points = make_grid(channels[0].width, channels[0].height, grid, radius)
    if mask is not None and len(mask) != len(points):
        raise ValueError("mask does not match the grid point set")
    flags = mask.flags if mask is not None else np.ones(len(points), dtype=bool)

    entries = [None] * len(points)
    live = [i for i in range(len(points)) if flags[i]]
    if live:
        extractor = FeatureExtractor(channels, bundle.recipe)
        raw = np.vstack([extractor.extract(points[i]) for i in live])
        probs = bundle.svm.predict_proba_batch(bundle.transform(raw))
        for row, i in enumerate(live):
            p = probs[row]
            tag = bundle.classes[int(np.argmax(p))]
            entries[i] = MapEntry(points[i][0], points[i][1], True, tag,
                                  tuple(float(v) for v in p))
    for i in range(len(points)):
        if entries[i] is None:
            entries[i] = MapEntry(points[i][0], points[i][1], False, None, None)
    return GridMap(image_id, grid.step, radius, tuple(bundle.classes),
                   tuple(entries))


def _in_region(x, y, region) -> bool:
    if region is None:
        return True
    x0, y0, x1, y1 = region
    return x0 <= x <= x1 and y0 <= y <= y1


def filter_points(gmap: GridMap, tag: str, limiter: float):
    """Points whose winning class is `tag` with probability >= limiter."""
    if tag not in gmap.classes:
        raise ValueError(f"unknown class tag {tag!r}")
    if not 0.0 <= limiter <= 1.0:
        raise ValueError("limiter must lie in [0, 1]")
    idx = gmap.classes.index(tag)
    out = []
    for e in gmap.entries:
        if not e.informative or e.tag != tag:
            continue
        if e.probs[idx] >= limiter:
            out.append((e.x, e.y))
    return out


def count_class_points(gmap: GridMap, tag: str, limiter: float,
                       region=None) -> int:
    pts = filter_points(gmap, tag, limiter)
    return sum(1 for (x, y) in pts if _in_region(x, y, region))


def cluster_points(points, k: int, seed: int = 0):
    """Seeded farthest-point k-means; centers returned in ascending x order."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (n, 2)")
    n = len(pts)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError("k exceeds the point count")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    d2 = ((pts - pts[chosen[0]]) ** 2).sum(axis=1)
    d2[chosen[0]] = -1.0
    while len(chosen) < k:
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        nd = ((pts - pts[nxt]) ** 2).sum(axis=1)
        d2 = np.minimum(d2, nd)
        d2[nxt] = -1.0
    centers = pts[chosen].copy()
    assign = None
    for _ in range(100):
        dist = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(dist, axis=1)  # ties go to the lower index
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = pts[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    order = np.lexsort((centers[:, 1], centers[:, 0]))
    centers = centers[order]
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    return centers, remap[assign]


@dataclass(frozen=True)
class TrackPoint:
    frame: int
    center: tuple | None


def interpolate_missing(track):
    """Fill track gaps linearly; hold the nearest value at open ends."""
    track = list(track)
    if not track:
        raise ValueError("empty track")
    frames = [t.frame for t in track]
    if any(b <= a for a, b in zip(frames, frames[1:])):
        raise ValueError("frame indices must be strictly increasing")
    present = [(t.frame, t.center) for t in track if t.center is not None]
    if not present:
        raise ValueError("all track points are missing")
    pf = np.array([f for f, _ in present], dtype=np.float64)
    px = np.array([c[0] for _, c in present], dtype=np.float64)
    py = np.array([c[1] for _, c in present], dtype=np.float64)
    out = []
    for t in track:
        if t.center is not None:
            out.append(t)
        else:
            x = float(np.interp(t.frame, pf, px))
            y = float(np.interp(t.frame, pf, py))
            out.append(TrackPoint(t.frame, (x, y)))
    return out


# -------------------------------------------------------------------- rules

RULE_KINDS = ("presence", "absence", "count", "cluster_shift")


@dataclass(frozen=True)
class AlertRule:
    id: str
    kind: str
    class_tag: str
    limiter: float = 0.3
    min_count: int = 1
    region: tuple | None = None
    persistence: int = 1

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if not 0.0 <= self.limiter <= 1.0:
            raise ValueError("limiter must lie in [0, 1]")
        if self.min_count < 1:
            raise ValueError("min_count must be >= 1")
        if self.persistence < 1:
            raise ValueError("persistence must be >= 1")
        if self.region is not None:
            object.__setattr__(self, "region", tuple(self.region))

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "class": self.class_tag,
                "limiter": self.limiter, "min_count": self.min_count,
                "region": None if self.region is None else list(self.region),
                "persistence": self.persistence}

    @classmethod
    def from_dict(cls, doc: dict) -> "AlertRule":
        return cls(id=doc["id"], kind=doc["kind"], class_tag=doc["class"],
                   limiter=doc.get("limiter", 0.3),
                   min_count=doc.get("min_count", 1),
                   region=doc.get("region"),
                   persistence=doc.get("persistence", 1))


def load_rules(path) -> list:
    docs = json.loads(Path(path).read_text())
    if not isinstance(docs, list):
        raise ValueError("rules file must hold a JSON array")
    return [AlertRule.from_dict(d) for d in docs]


@dataclass(frozen=True)
class AlertEvent:
    rule_id: str
    frame: int
    value: object
    message: str

    def to_dict(self) -> dict:
        return {"rule": self.rule_id, "frame": self.frame,
                "value": self.value, "message": self.message}


def evaluate_rule(maps, rule: AlertRule):
    """Run one rule over a map sequence; at most one event per frame."""
    maps = list(maps)
    if not maps:
        return []
    if rule.class_tag not in maps[0].classes:
        raise ValueError(f"unknown class {rule.class_tag!r} in rule {rule.id}")
    counts = [count_class_points(m, rule.class_tag, rule.limiter, rule.region)
              for m in maps]
    events = []
    if rule.kind in ("presence", "absence"):
        if rule.kind == "presence":
            ok = [c >= rule.min_count for c in counts]
            verb = "present"
        else:
            ok = [c < rule.min_count for c in counts]
            verb = "absent"
        m = rule.persistence
        for t in range(len(maps)):
            if t >= m - 1 and all(ok[t - m + 1:t + 1]):
                events.append(AlertEvent(
                    rule.id, t, counts[t],
                    f"'{rule.class_tag}' {verb} for {m} consecutive frame(s) "
                    f"(count {counts[t]})"))
    elif rule.kind == "count":
        for t, c in enumerate(counts):
            events.append(AlertEvent(rule.id, t, c,
                                     f"'{rule.class_tag}' count {c}"))
    else:  # cluster_shift
        need = max(2, rule.min_count)
        centers_per_frame = []
        for m, c in zip(maps, counts):
            pts = [p for p in filter_points(m, rule.class_tag, rule.limiter)
                   if _in_region(p[0], p[1], rule.region)]
            if len(pts) >= need:
                centers, _ = cluster_points(pts, 2, seed=0)
            else:
                centers = None
            centers_per_frame.append(centers)
        for t in range(1, len(maps)):
            a, b = centers_per_frame[t - 1], centers_per_frame[t]
            if a is None or b is None:
                continue
            shift = (b - a).mean(axis=0)
            events.append(AlertEvent(
                rule.id, t, [float(shift[0]), float(shift[1])],
                f"'{rule.class_tag}' cluster centers shifted by "
                f"({shift[0]:+.1f}, {shift[1]:+.1f})"))
    return events


def evaluate_rules(maps, rules):
    out = []
    for rule in rules:
        out.extend(evaluate_rule(maps, rule))
    out.sort(key=lambda e: (e.frame, e.rule_id))
    return out


# ------------------------------------------------------------------ overlay

def render_overlay(image, gmap: GridMap, limiter: float,
                   class_filter=None, colors=None) -> np.ndarray:
    """Copy of the image with a 3x3 mark per filtered point, color per class."""
    if isinstance(image, (str, Path)):
        arr = load_image(image).copy()
    else:
        arr = np.asarray(image).copy()
    names = list(class_filter) if class_filter else list(gmap.classes)
    for name in names:
        if name not in gmap.classes:
            raise ValueError(f"unknown class tag {name!r}")
        idx = gmap.classes.index(name)
        if colors and name in colors:
            color = tuple(colors[name])
        else:
            color = PALETTE[idx % len(PALETTE)]
        for x, y in filter_points(gmap, name, limiter):
            y0, y1 = max(y - 1, 0), min(y + 2, arr.shape[0])
            x0, x1 = max(x - 1, 0), min(x + 2, arr.shape[1])
            arr[y0:y1, x0:x1] = color
    return arr
