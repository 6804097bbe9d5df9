"""Project files and curation operations.

A project lives in one JSON document (canonical key order, every default
written out, so saves are diffable and load(save(p)) is byte-stable) plus a
sibling ``<name>.search.jsonl`` holding the last hyperparameter-search log.
Images stay on disk and are referenced by id -> path; samples are circular
regions tagged with a class name. Editing the training set after a model has
been trained flips a stale flag that only a successful retrain clears.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .classifier import (
    ModelBundle,
    SampleEntry,
    SearchReport,
    SearchSpace,
    TrainingSet,
    train_pipeline,
)
from .features import FeatureRecipe
from .imagery import load_image

PROJECT_VERSION = 1


@dataclass(frozen=True)
class SampleRecord:
    """One tagged circular sample; `ordinal` preserves creation order."""

    id: str
    image_id: str
    x: int
    y: int
    tag: str
    ordinal: int

    def to_dict(self) -> dict:
        return {"id": self.id, "image": self.image_id, "x": self.x,
                "y": self.y, "class": self.tag, "ordinal": self.ordinal}

    @classmethod
    def from_dict(cls, doc: dict) -> "SampleRecord":
        return cls(doc["id"], doc["image"], int(doc["x"]), int(doc["y"]),
                   doc["class"], int(doc["ordinal"]))


def report_path_for(project_path) -> Path:
    """Sibling search-log path for a project file."""
    p = Path(project_path)
    return p.with_name(p.stem + ".search.jsonl")


class Project:
    """Mutable aggregate behind both the CLI and the HTTP API."""

    def __init__(self, name: str, classes, recipe: FeatureRecipe | None = None,
                 images=None, samples=None, bundle: ModelBundle | None = None,
                 report: SearchReport | None = None, stale: bool = False,
                 next_sample_id: int = 1):
        classes = tuple(classes)
        if len(classes) < 2:
            raise ValueError("a project needs at least two classes")
        if len(set(classes)) != len(classes):
            raise ValueError("duplicate class names")
        if any(not isinstance(c, str) or not c for c in classes):
            raise ValueError("class names must be non-empty strings")
        self.name = str(name)
        self.classes = classes
        self.recipe = recipe if recipe is not None else FeatureRecipe()
        self.recipe.validate()
        self.images = dict(images or {})
        self.samples = list(samples or [])
        self.bundle = bundle
        self.report = report
        self.stale = bool(stale)
        self.next_sample_id = int(next_sample_id)
        self._shapes = {}  # image id -> (height, width), lazy

    # ------------------------------------------------------------- images

    def register_image(self, path, image_id: str | None = None) -> str:
        path = str(path)
        if image_id is None:
            image_id = Path(path).stem
        if not image_id:
            raise ValueError("empty image id")
        known = self.images.get(image_id)
        if known is not None:
            if known == path:
                return image_id
            raise ValueError(
                f"image id {image_id!r} already registered to {known}")
        if not Path(path).is_file():
            raise ValueError(f"no such image file: {path}")
        self.images[image_id] = path
        return image_id

    def image_shape(self, image_id: str) -> tuple:
        if image_id not in self.images:
            raise ValueError(f"unknown image id {image_id!r}")
        if image_id not in self._shapes:
            arr = load_image(self.images[image_id])
            self._shapes[image_id] = (arr.shape[0], arr.shape[1])
        return self._shapes[image_id]

    # ------------------------------------------------------------ samples

    def _mark_stale(self):
        if self.bundle is not None:
            self.stale = True

    def add_sample(self, image_id: str, x: int, y: int, tag: str) -> SampleRecord:
        if tag not in self.classes:
            raise ValueError(f"unknown class tag {tag!r}")
        x, y = int(x), int(y)
        height, width = self.image_shape(image_id)
        r = self.recipe.max_radius()
        if not (r <= x <= width - 1 - r and r <= y <= height - 1 - r):
            raise ValueError(
                f"sample disc of radius {r} at ({x}, {y}) leaves the "
                f"{width}x{height} image")
        for s in self.samples:
            if (s.image_id, s.x, s.y, s.tag) == (image_id, x, y, tag):
                raise ValueError("identical sample already present")
        record = SampleRecord(f"s{self.next_sample_id:04d}", image_id, x, y,
                              tag, self.next_sample_id)
        self.next_sample_id += 1
        self.samples.append(record)
        self._mark_stale()
        return record

    def _find(self, sample_id: str) -> int:
        for i, s in enumerate(self.samples):
            if s.id == sample_id:
                return i
        raise ValueError(f"unknown sample id {sample_id!r}")

    def retag_sample(self, sample_id: str, tag: str) -> SampleRecord:
        if tag not in self.classes:
            raise ValueError(f"unknown class tag {tag!r}")
        i = self._find(sample_id)
        old = self.samples[i]
        if old.tag == tag:
            return old  # no-op; does not touch the stale flag
        new = SampleRecord(old.id, old.image_id, old.x, old.y, tag, old.ordinal)
        self.samples[i] = new
        self._mark_stale()
        return new

    def remove_sample(self, sample_id: str) -> None:
        del self.samples[self._find(sample_id)]
        self._mark_stale()

    # ----------------------------------------------------------- training

    def training_set(self) -> TrainingSet:
        return TrainingSet(
            classes=list(self.classes),
            samples=[SampleEntry(s.image_id, (s.x, s.y), s.tag)
                     for s in self.samples])

    def train(self, search: str = "random", budget: int = 20, seed: int = 0,
              folds: int = 5, space: SearchSpace = SearchSpace(),
              target_accuracy: float | None = None, stop_poll=None,
              on_trial=None, report_stream=None):
        """Run the full pipeline and keep the result on the project.

        Trial lines go to `report_stream` (and `on_trial`) as each trial
        finishes, so a caller can tail the search live; the streamed lines
        plus the final summary line are exactly SearchReport.to_jsonl().
        """
        tset = self.training_set()
        tset.validate_for_training()  # fail before any feature extraction

        def tee(trial):
            if report_stream is not None:
                report_stream.write(
                    json.dumps(trial.to_dict(), sort_keys=True) + "\n")
                report_stream.flush()
            if on_trial is not None:
                on_trial(trial)

        bundle, report = train_pipeline(
            tset, self.recipe, self.images, search=search, space=space,
            budget=budget, folds=folds, seed=seed,
            target_accuracy=target_accuracy, stop_poll=stop_poll,
            on_trial=tee)
        self.bundle = bundle
        self.report = report
        self.stale = False
        return bundle, report

    # -------------------------------------------------------- persistence

    def to_dict(self) -> dict:
        return {
            "version": PROJECT_VERSION,
            "name": self.name,
            "classes": list(self.classes),
            "recipe": self.recipe.to_dict(),
            "images": dict(self.images),
            "samples": [s.to_dict() for s in self.samples],
            "next_sample_id": self.next_sample_id,
            "stale": self.stale,
            "bundle": None if self.bundle is None else self.bundle.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Project":
        if doc.get("version") != PROJECT_VERSION:
            raise ValueError(
                f"unsupported project version {doc.get('version')!r}")
        bundle = doc.get("bundle")
        return cls(
            name=doc["name"],
            classes=doc["classes"],
            recipe=FeatureRecipe.from_dict(doc["recipe"]),
            images=doc["images"],
            samples=[SampleRecord.from_dict(d) for d in doc["samples"]],
            bundle=None if bundle is None else ModelBundle.from_dict(bundle),
            stale=doc["stale"],
            next_sample_id=doc["next_sample_id"],
        )

    def save(self, path) -> None:
        path = Path(path)
        text = json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"
        path.write_text(text)
        if self.report is not None:
            report_path_for(path).write_text(self.report.to_jsonl())

    @classmethod
    def load(cls, path) -> "Project":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ValueError(f"no project file at {path}") from None
        project = cls.from_dict(doc)
        log = report_path_for(path)
        if log.is_file():
            text = log.read_text()
            if text.strip():
                project.report = SearchReport.from_jsonl(text)
        return project


def init_project(name: str, classes,
                 recipe: FeatureRecipe | None = None) -> Project:
    """Fresh project with declared classes and an empty training set."""
    return Project(name=name, classes=classes, recipe=recipe)
