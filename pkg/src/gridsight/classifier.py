"""Kernel-SVM training, cross-validated hyperparameter search, model bundles.

The search comes in two flavors: the exhaustive log2 grid (the baseline,
grid_steps per axis) and the randomized log-uniform draw that typically
needs an order of magnitude fewer trials for the same accuracy. Both stream
trial records and serialize to JSON lines so a UI can tail the log live.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import smo
from .features import FeatureExtractor, FeatureRecipe, FeatureSelection, select_features
from .imagery import load_image, split_channels

BUNDLE_VERSION = 1


def _as_float_matrix(vectors) -> np.ndarray:
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("vectors must be a samples x features matrix")
    if not np.isfinite(x).all():
        raise ValueError("non-finite vector entries")
    return x


@dataclass(frozen=True)
class PairModel:
    """Binary decision function for one class pair (positive = first class)."""

    pos: int
    neg: int
    sv: np.ndarray          # support vectors
    coef: np.ndarray        # alpha_i * y_i per support vector
    bias: float
    platt_a: float
    platt_b: float

    def decision(self, x: np.ndarray, gamma: float) -> np.ndarray:
        k = smo.rbf_kernel(np.atleast_2d(x), self.sv, gamma)
        return k @ self.coef + self.bias


@dataclass(frozen=True)
class SvmModel:
    """One-vs-one RBF SVM with per-pair sigmoid calibration."""

    classes: tuple
    c: float
    gamma: float
    pairs: tuple

    def __post_init__(self):
        if self.c <= 0 or self.gamma <= 0:
            raise ValueError("C and gamma must be positive")
        expected = len(self.classes) * (len(self.classes) - 1) // 2
        if len(self.pairs) != expected:
            raise ValueError("wrong number of pairwise decision functions")

    @property
    def n_features(self) -> int:
        return self.pairs[0].sv.shape[1]

    def predict_proba_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise ValueError(
                f"expected {self.n_features} features, got {x.shape[1]}")
        k = len(self.classes)
        n = x.shape[0]
        r = np.full((n, k, k), 0.5)
        for pm in self.pairs:
            f = pm.decision(x, self.gamma)
            p_pos = smo.platt_probability(f, pm.platt_a, pm.platt_b)
            r[:, pm.pos, pm.neg] = p_pos
            r[:, pm.neg, pm.pos] = 1.0 - p_pos
        out = np.empty((n, k))
        for row in range(n):
            out[row] = smo.couple_pairwise(r[row])
        return out

    def predict_batch(self, x: np.ndarray) -> list:
        probs = self.predict_proba_batch(x)
        return [self.classes[int(np.argmax(p))] for p in probs]

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "c": self.c,
            "gamma": self.gamma,
            "pairs": [
                {
                    "pos": pm.pos,
                    "neg": pm.neg,
                    "sv": pm.sv.tolist(),
                    "coef": pm.coef.tolist(),
                    "bias": pm.bias,
                    "platt_a": pm.platt_a,
                    "platt_b": pm.platt_b,
                }
                for pm in self.pairs
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SvmModel":
        pairs = tuple(
            PairModel(
                pos=p["pos"], neg=p["neg"],
                sv=np.asarray(p["sv"], dtype=np.float64),
                coef=np.asarray(p["coef"], dtype=np.float64),
                bias=float(p["bias"]),
                platt_a=float(p["platt_a"]), platt_b=float(p["platt_b"]),
            )
            for p in doc["pairs"]
        )
        return cls(tuple(doc["classes"]), float(doc["c"]), float(doc["gamma"]),
                   pairs)


def train_svm(vectors, tags, c: float, gamma: float,
              classes=None, tol: float = smo.DEFAULT_TOL,
              max_iter: int = smo.DEFAULT_MAX_ITER) -> SvmModel:
    """Train a one-vs-one soft-margin RBF SVM with probability calibration."""
    x = _as_float_matrix(vectors)
    tags = list(tags)
    if len(tags) != x.shape[0]:
        raise ValueError("one tag per sample required")
    if c <= 0 or gamma <= 0:
        raise ValueError("C and gamma must be positive")
    if classes is None:
        classes = sorted(set(tags))
    else:
        classes = list(classes)
        unknown = set(tags) - set(classes)
        if unknown:
            raise ValueError(f"tags outside the class list: {sorted(unknown)}")
    if len(classes) < 2:
        raise ValueError("at least two classes required")

    by_class = {cname: np.array([i for i, t in enumerate(tags) if t == cname])
                for cname in classes}
    pairs = []
    for a in range(len(classes)):
        for b in range(a + 1, len(classes)):
            idx = np.concatenate([by_class[classes[a]], by_class[classes[b]]])
            sub_x = x[idx]
            y = np.where(np.asarray([tags[i] for i in idx]) == classes[a],
                         1.0, -1.0)
            kmat = smo.rbf_kernel(sub_x, gamma=gamma)
            alpha, bias, _ = smo.smo_solve(kmat, y, float(c), tol, max_iter)
            decision = kmat @ (alpha * y) + bias
            a_cal, b_cal = smo.fit_platt(decision, y > 0)
            keep = alpha > 1e-12
            if not keep.any():
                # degenerate flat solution: keep one vector so the pair
                # still evaluates (decision is then the bias alone)
                keep[0] = True
            pairs.append(PairModel(
                pos=a, neg=b,
                sv=np.ascontiguousarray(sub_x[keep]),
                coef=np.ascontiguousarray((alpha * y)[keep]),
                bias=float(bias),
                platt_a=float(a_cal), platt_b=float(b_cal),
            ))
    return SvmModel(tuple(classes), float(c), float(gamma), tuple(pairs))


def predict_proba(model, vector):
    """(winning tag, probability per class) for a single feature vector.

    Accepts an SvmModel or a ModelBundle (raw, pre-recipe vector in the
    latter case is not allowed here; bundles transform full vectors).
    """
    if isinstance(model, ModelBundle):
        return model.predict_proba(vector)
    probs = model.predict_proba_batch(np.atleast_2d(vector))[0]
    tag = model.classes[int(np.argmax(probs))]
    return tag, probs


# ----------------------------------------------------------- cross-validation

def stratified_fold_assignment(tags, folds: int, seed: int) -> np.ndarray:
    """Per-sample fold index, class-stratified, balanced by a running offset."""
    tags = list(tags)
    n = len(tags)
    if not 2 <= folds <= n:
        raise ValueError("folds out of range")
    rng = np.random.default_rng(seed)
    assign = np.empty(n, dtype=np.int64)
    offset = 0
    for cname in sorted(set(tags)):
        idx = np.array([i for i, t in enumerate(tags) if t == cname])
        rng.shuffle(idx)
        for k, i in enumerate(idx):
            assign[i] = (offset + k) % folds
        offset += len(idx)
    return assign


def cross_validate(vectors, tags, folds: int = 5, c: float = 1.0,
                   gamma: float = 1.0, seed: int = 0,
                   tol: float = smo.DEFAULT_TOL,
                   max_iter: int = smo.DEFAULT_MAX_ITER) -> float:
    """Mean held-out accuracy of seeded stratified k-fold CV."""
    x = _as_float_matrix(vectors)
    tags = list(tags)
    assign = stratified_fold_assignment(tags, folds, seed)
    accs = []
    for f in range(folds):
        test = assign == f
        train = ~test
        if not test.any():
            continue
        model = train_svm(x[train], [t for t, m in zip(tags, train) if m],
                          c, gamma, tol=tol, max_iter=max_iter)
        predicted = model.predict_batch(x[test])
        actual = [t for t, m in zip(tags, test) if m]
        accs.append(sum(p == a for p, a in zip(predicted, actual)) / len(actual))
    return float(np.mean(accs))


# ------------------------------------------------------------------- search

@dataclass(frozen=True)
class SearchSpace:
    """log2 ranges for C and gamma plus the baseline grid resolution."""

    c_log2_low: float = -5.0
    c_log2_high: float = 15.0
    gamma_log2_low: float = -15.0
    gamma_log2_high: float = 3.0
    grid_steps: int = 20

    def __post_init__(self):
        if self.c_log2_low >= self.c_log2_high:
            raise ValueError("C range lower bound must be below upper bound")
        if self.gamma_log2_low >= self.gamma_log2_high:
            raise ValueError("gamma range lower bound must be below upper bound")
        if self.grid_steps < 2:
            raise ValueError("grid_steps must be >= 2")

    def to_dict(self) -> dict:
        return {
            "c_log2_low": self.c_log2_low, "c_log2_high": self.c_log2_high,
            "gamma_log2_low": self.gamma_log2_low,
            "gamma_log2_high": self.gamma_log2_high,
            "grid_steps": self.grid_steps,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SearchSpace":
        return cls(**doc)


@dataclass(frozen=True)
class Trial:
    index: int
    c: float
    gamma: float
    cv_accuracy: float
    wall_time: float

    def to_dict(self) -> dict:
        return {"index": self.index, "c": self.c, "gamma": self.gamma,
                "cv_accuracy": self.cv_accuracy, "wall_time": self.wall_time}


@dataclass(frozen=True)
class SearchReport:
    """Trial-by-trial record of one hyperparameter search."""

    trials: tuple
    stop_reason: str
    total_time: float

    def __post_init__(self):
        if not self.trials:
            raise ValueError("a report needs at least one trial")
        if self.stop_reason not in ("budget", "target_reached", "caller_stop"):
            raise ValueError(f"unknown stop reason {self.stop_reason!r}")

    @property
    def best_index(self) -> int:
        accs = [t.cv_accuracy for t in self.trials]
        return int(np.argmax(accs))  # earliest max wins

    @property
    def best(self) -> Trial:
        return self.trials[self.best_index]

    def to_jsonl(self) -> str:
        lines = [json.dumps(t.to_dict(), sort_keys=True) for t in self.trials]
        lines.append(json.dumps({
            "summary": True,
            "best_index": self.best_index,
            "best_accuracy": self.best.cv_accuracy,
            "stop_reason": self.stop_reason,
            "total_time": self.total_time,
            "trial_count": len(self.trials),
        }, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "SearchReport":
        trials = []
        stop_reason = "budget"
        total_time = 0.0
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if doc.get("summary"):
                stop_reason = doc["stop_reason"]
                total_time = doc["total_time"]
            else:
                trials.append(Trial(doc["index"], doc["c"], doc["gamma"],
                                    doc["cv_accuracy"], doc["wall_time"]))
        return cls(tuple(trials), stop_reason, total_time)

    def determinism_digest(self) -> str:
        """Digest of everything except wall-clock times.

        Timing can never repeat bit-exactly across runs, so the
        reproducibility surface is the full report minus time fields.
        """
        doc = {
            "trials": [{"index": t.index, "c": t.c, "gamma": t.gamma,
                        "cv_accuracy": t.cv_accuracy} for t in self.trials],
            "stop_reason": self.stop_reason,
            "best_index": self.best_index,
        }
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def grid_search(vectors, tags, space: SearchSpace = SearchSpace(),
                folds: int = 5, seed: int = 0, on_trial=None,
                stop_poll=None, **cv_kw) -> SearchReport:
    """Exhaustive search over the evenly spaced log2 grid (the baseline).

    Runs grid_steps^2 trials in row-major (C-major) order; ties on accuracy
    resolve to the smallest C, then the smallest gamma, which is exactly the
    earliest trial in this ordering.
    """
    x = _as_float_matrix(vectors)
    c_values = np.exp2(np.linspace(space.c_log2_low, space.c_log2_high,
                                   space.grid_steps))
    g_values = np.exp2(np.linspace(space.gamma_log2_low, space.gamma_log2_high,
                                   space.grid_steps))
    started = time.perf_counter()
    trials = []
    stop_reason = "budget"
    for c in c_values:
        for g in g_values:
            t0 = time.perf_counter()
            acc = cross_validate(x, tags, folds, float(c), float(g), seed, **cv_kw)
            trial = Trial(len(trials), float(c), float(g), acc,
                          time.perf_counter() - t0)
            trials.append(trial)
            if on_trial is not None:
                on_trial(trial)
            if stop_poll is not None and stop_poll():
                stop_reason = "caller_stop"
                break
        if stop_reason == "caller_stop":
            break
    return SearchReport(tuple(trials), stop_reason,
                        time.perf_counter() - started)


def random_search(vectors, tags, space: SearchSpace = SearchSpace(),
                  budget: int = 20, seed: int = 0,
                  target_accuracy: float | None = None, stop_poll=None,
                  folds: int = 5, on_trial=None, **cv_kw) -> SearchReport:
    """Randomized log-uniform (C, gamma) search with early stopping.

    The whole parameter sequence is drawn up-front from the seed, so the
    trial list is reproducible no matter when the caller stops it.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    x = _as_float_matrix(vectors)
    rng = np.random.default_rng(seed)
    c_log2 = rng.uniform(space.c_log2_low, space.c_log2_high, size=budget)
    g_log2 = rng.uniform(space.gamma_log2_low, space.gamma_log2_high, size=budget)
    params = [(float(np.exp2(cl)), float(np.exp2(gl)))
              for cl, gl in zip(c_log2, g_log2)]
    started = time.perf_counter()
    trials = []
    stop_reason = "budget"
    for c, g in params:
        t0 = time.perf_counter()
        acc = cross_validate(x, tags, folds, c, g, seed, **cv_kw)
        trial = Trial(len(trials), c, g, acc, time.perf_counter() - t0)
        trials.append(trial)
        if on_trial is not None:
            on_trial(trial)
        if target_accuracy is not None and acc >= target_accuracy:
            stop_reason = "target_reached"
            break
        if stop_poll is not None and stop_poll():
            stop_reason = "caller_stop"
            break
    return SearchReport(tuple(trials), stop_reason,
                        time.perf_counter() - started)


# ------------------------------------------------------------ training set

@dataclass(frozen=True)
class SampleEntry:
    image_id: str
    center: tuple
    tag: str


@dataclass
class TrainingSet:
    """Ordered classes plus tagged sample positions on registered images."""

    classes: list
    samples: list = field(default_factory=list)
    vectors: np.ndarray | None = None

    def validate_for_training(self):
        if len(self.classes) < 2:
            raise ValueError("at least two classes required")
        for s in self.samples:
            if s.tag not in self.classes:
                raise ValueError(f"sample tag {s.tag!r} not in class list")
        counts = {c: 0 for c in self.classes}
        for s in self.samples:
            counts[s.tag] += 1
        thin = [c for c, n in counts.items() if n < 2]
        if thin:
            raise ValueError(f"classes with fewer than 2 samples: {thin}")


@dataclass(frozen=True)
class Scaler:
    """Per-feature standardization; zero-spread features pass through."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Scaler":
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std == 0.0, 1.0, std)
        return cls(mean, std)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Scaler":
        return cls(np.asarray(doc["mean"], dtype=np.float64),
                   np.asarray(doc["std"], dtype=np.float64))


@dataclass(frozen=True)
class ModelBundle:
    """Everything needed to reproduce training-time vectors at mapping time."""

    recipe: FeatureRecipe
    selection: FeatureSelection
    scaler: Scaler
    svm: SvmModel
    version: int = BUNDLE_VERSION

    def __post_init__(self):
        full = self.recipe.vector_length()
        if len(self.scaler.mean) != full or len(self.scaler.std) != full:
            raise ValueError("scaler length does not match the recipe layout")
        if max(self.selection.kept_indices) >= full:
            raise ValueError("selection indices exceed the recipe layout")
        if self.svm.n_features != len(self.selection.kept_indices):
            raise ValueError("SVM input dimension != selected feature count")

    @property
    def classes(self) -> tuple:
        return self.svm.classes

    def transform(self, raw_vectors: np.ndarray) -> np.ndarray:
        return self.selection.apply(self.scaler.transform(raw_vectors))

    def predict_proba(self, raw_vector: np.ndarray):
        probs = self.svm.predict_proba_batch(
            np.atleast_2d(self.transform(raw_vector)))[0]
        tag = self.svm.classes[int(np.argmax(probs))]
        return tag, probs

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "recipe": self.recipe.to_dict(),
            "selection": self.selection.to_dict(),
            "scaler": self.scaler.to_dict(),
            "svm": self.svm.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelBundle":
        if doc.get("version") != BUNDLE_VERSION:
            raise ValueError(f"unsupported bundle version {doc.get('version')!r}")
        return cls(
            recipe=FeatureRecipe.from_dict(doc["recipe"]),
            selection=FeatureSelection.from_dict(doc["selection"]),
            scaler=Scaler.from_dict(doc["scaler"]),
            svm=SvmModel.from_dict(doc["svm"]),
            version=doc["version"],
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelBundle":
        return cls.from_dict(json.loads(text))


def extract_training_vectors(training_set: TrainingSet, recipe: FeatureRecipe,
                             images: dict) -> np.ndarray:
    """Raw (pre-scaling) vectors for every sample, extractors cached per image."""
    extractors = {}
    rows = []
    for s in training_set.samples:
        if s.image_id not in extractors:
            source = images[s.image_id]
            arr = load_image(source) if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__") else source
            extractors[s.image_id] = FeatureExtractor(split_channels(arr), recipe)
        rows.append(extractors[s.image_id].extract(tuple(s.center)))
    return np.vstack(rows)


def train_pipeline(training_set: TrainingSet, recipe: FeatureRecipe,
                   images: dict, search: str = "random",
                   space: SearchSpace = SearchSpace(), budget: int = 20,
                   folds: int = 5, seed: int = 0,
                   target_accuracy: float | None = None, stop_poll=None,
                   on_trial=None) -> tuple:
    """Extract -> standardize -> select -> search (C, gamma) -> final train."""
    training_set.validate_for_training()
    if training_set.vectors is not None:
        raw = _as_float_matrix(training_set.vectors)
    else:
        raw = extract_training_vectors(training_set, recipe, images)
    tags = [s.tag for s in training_set.samples]
    scaler = Scaler.fit(raw)
    standardized = scaler.transform(raw)
    selection = select_features(standardized, tags,
                                keep_max=recipe.selection_keep_max,
                                redundancy_max=recipe.selection_redundancy_max)
    reduced = selection.apply(standardized)
    if search == "grid":
        report = grid_search(reduced, tags, space, folds, seed,
                             on_trial=on_trial, stop_poll=stop_poll)
    elif search == "random":
        report = random_search(reduced, tags, space, budget, seed,
                               target_accuracy=target_accuracy,
                               stop_poll=stop_poll, folds=folds,
                               on_trial=on_trial)
    else:
        raise ValueError(f"unknown search kind {search!r}")
    best = report.best
    svm_model = train_svm(reduced, tags, best.c, best.gamma,
                          classes=training_set.classes)
    bundle = ModelBundle(recipe=recipe, selection=selection, scaler=scaler,
                         svm=svm_model)
    return bundle, report
