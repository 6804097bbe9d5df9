"""HTTP API for the curation UI.

All project mutations funnel through a single lock and persist the project
file before the response returns. Training runs as at most one background
thread; it works on a snapshot of the training set taken at job start,
appends one JSON line per finished trial for live polling, and honors a stop
request between trials. If samples were edited while the job ran, the new
model is already stale when it lands.
"""
from __future__ import annotations

import json
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import Response

from .classifier import train_pipeline
from .imagery import GridSpec, load_image, png_bytes
from .mapping import map_image
from .workbench import Project


class TrainJob:
    def __init__(self, params: dict, edits_at_start: int):
        self.params = params
        self.edits_at_start = edits_at_start
        self.state = "running"  # running | done | error
        self.trial_lines: list = []
        self.stop_requested = False
        self.error = None
        self.thread: threading.Thread | None = None


class Workbench:
    """Server-side state: the live project, its lock, and the training job."""

    def __init__(self, project_path):
        self.path = Path(project_path)
        self.project = Project.load(self.path)
        self.lock = threading.Lock()
        self.edits = 0
        self.job: TrainJob | None = None
        self._map_cache: dict = {}

    # ----------------------------------------------------------- training

    def start_training(self, search: str, budget: int, seed: int,
                       folds: int) -> TrainJob:
        with self.lock:
            if self.job is not None and self.job.state == "running":
                raise HTTPException(409, "a training job is already running")
            tset = self.project.training_set()
            try:
                tset.validate_for_training()
            except ValueError as exc:
                raise HTTPException(400, str(exc)) from None
            images = dict(self.project.images)
            recipe = self.project.recipe
            job = TrainJob({"search": search, "budget": budget, "seed": seed,
                            "folds": folds}, self.edits)
            self.job = job

        def run():
            try:
                bundle, report = train_pipeline(
                    tset, recipe, images, search=search, budget=budget,
                    seed=seed, folds=folds,
                    on_trial=lambda t: job.trial_lines.append(
                        json.dumps(t.to_dict(), sort_keys=True)),
                    stop_poll=lambda: job.stop_requested)
            except Exception as exc:  # surfaced via /api/train/status
                job.error = str(exc)
                job.state = "error"
                return
            with self.lock:
                self.project.bundle = bundle
                self.project.report = report
                self.project.stale = self.edits != job.edits_at_start
                self._map_cache.clear()
                self.project.save(self.path)
            job.state = "done"

        job.thread = threading.Thread(target=run, daemon=True)
        job.thread.start()
        return job

    # ------------------------------------------------------------ mapping

    def grid_map(self, image_id: str, step: int):
        with self.lock:
            bundle = self.project.bundle
            if bundle is None:
                raise HTTPException(400, "no trained model; train first")
            if image_id not in self.project.images:
                raise HTTPException(404, f"unknown image id {image_id!r}")
            path = self.project.images[image_id]
            cached = self._map_cache.get((image_id, step))
            if cached is not None and cached[0] is bundle:
                return cached[1]
        gmap = map_image(path, bundle, GridSpec(step=step), image_id=image_id)
        with self.lock:
            if self.project.bundle is bundle:
                self._map_cache[(image_id, step)] = (bundle, gmap)
        return gmap

    def mutate(self, op):
        """Run one project mutation under the writer lock and persist it."""
        with self.lock:
            try:
                result = op(self.project)
            except ValueError as exc:
                raise HTTPException(400, str(exc)) from None
            self.edits += 1
            self.project.save(self.path)
            return result


def create_app(project_path) -> FastAPI:
    wb = Workbench(project_path)
    app = FastAPI(title="gridsight workbench")
    app.state.workbench = wb

    @app.get("/api/project")
    def get_project():
        with wb.lock:
            p = wb.project
            job = wb.job
            return {
                "name": p.name,
                "classes": list(p.classes),
                "radius": p.recipe.max_radius(),
                "images": dict(p.images),
                "samples": [s.to_dict() for s in p.samples],
                "sample_count": len(p.samples),
                "model": {
                    "present": p.bundle is not None,
                    "stale": p.stale,
                    "classes": list(p.bundle.classes) if p.bundle else [],
                },
                "training": {"state": job.state if job else "idle"},
            }

    @app.get("/api/images/{image_id}")
    def get_image(image_id: str):
        with wb.lock:
            path = wb.project.images.get(image_id)
        if path is None:
            raise HTTPException(404, f"unknown image id {image_id!r}")
        return Response(content=png_bytes(load_image(path)),
                        media_type="image/png")

    @app.post("/api/samples")
    def post_sample(payload: dict):
        record = _add_sample(payload)
        return record.to_dict()

    @app.post("/api/corrections")
    def post_correction(payload: dict):
        # a correction is a fresh sample at the misclassified point
        record = _add_sample(payload)
        return record.to_dict()

    def _add_sample(payload: dict):
        for key in ("image", "x", "y", "class"):
            if key not in payload:
                raise HTTPException(400, f"missing field {key!r}")
        return wb.mutate(lambda p: p.add_sample(
            payload["image"], payload["x"], payload["y"], payload["class"]))

    @app.delete("/api/samples/{sample_id}")
    def delete_sample(sample_id: str):
        with wb.lock:
            known = any(s.id == sample_id for s in wb.project.samples)
        if not known:
            raise HTTPException(404, f"unknown sample id {sample_id!r}")
        wb.mutate(lambda p: p.remove_sample(sample_id))
        return {"removed": sample_id}

    @app.patch("/api/samples/{sample_id}")
    def patch_sample(sample_id: str, payload: dict):
        if "class" not in payload:
            raise HTTPException(400, "missing field 'class'")
        tag = payload["class"]
        with wb.lock:
            current = next((s for s in wb.project.samples
                            if s.id == sample_id), None)
        if current is None:
            raise HTTPException(404, f"unknown sample id {sample_id!r}")
        if current.tag == tag:
            return current.to_dict()  # no-op: not an edit, never flags stale
        record = wb.mutate(lambda p: p.retag_sample(sample_id, tag))
        return record.to_dict()

    @app.post("/api/train")
    def post_train(payload: dict | None = None):
        payload = payload or {}
        job = wb.start_training(
            search=payload.get("search", "random"),
            budget=int(payload.get("budget", 20)),
            seed=int(payload.get("seed", 0)),
            folds=int(payload.get("folds", 5)))
        return {"started": True, **job.params}

    @app.get("/api/train/status")
    def train_status():
        job = wb.job
        if job is None:
            return {"state": "idle", "trials": [], "trial_count": 0,
                    "error": None, "stop_requested": False, "best": None}
        trials = list(job.trial_lines)
        best = None
        if job.state == "done":
            with wb.lock:
                report = wb.project.report
            if report is not None:
                best = {"c": report.best.c, "gamma": report.best.gamma,
                        "cv_accuracy": report.best.cv_accuracy,
                        "stop_reason": report.stop_reason}
        return {"state": job.state, "trials": trials,
                "trial_count": len(trials), "error": job.error,
                "stop_requested": job.stop_requested, "best": best}

    @app.post("/api/train/stop")
    def train_stop():
        job = wb.job
        if job is None or job.state != "running":
            raise HTTPException(409, "no training job is running")
        job.stop_requested = True
        return {"stopping": True}

    @app.get("/api/map")
    def get_map(image: str, limiter: float = 0.0, step: int = 8):
        if not 0.0 <= limiter <= 1.0:
            raise HTTPException(400, "limiter must lie in [0, 1]")
        gmap = wb.grid_map(image, step)
        records = [e.to_dict() for e in gmap.entries
                   if e.informative and max(e.probs) >= limiter]
        return {"image": gmap.image_id, "step": gmap.step,
                "radius": gmap.radius, "classes": list(gmap.classes),
                "grid_points": len(gmap.entries), "records": records}

    return app
