"""Command-line front end: project curation, training, mapping, watching.

Every command operates on the project file given by --project (default
./project.json). Operational failures print a diagnostic to stderr and exit
nonzero; argparse handles usage errors itself.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .classifier import SearchSpace
from .features import FeatureRecipe
from .imagery import (
    GrayPlane,
    GridSpec,
    InformativeMask,
    frame_change_mask,
    load_image,
    make_grid,
    save_png,
)
from .mapping import evaluate_rules, load_rules, map_image, render_overlay
from .workbench import Project, init_project, report_path_for

FRAME_SUFFIXES = (".png", ".pgm", ".ppm", ".jpg", ".jpeg", ".bmp")


def _split_classes(text: str) -> list:
    return [c.strip() for c in text.split(",") if c.strip()]


def _to_gray(arr: np.ndarray) -> GrayPlane:
    return GrayPlane((arr.astype(np.uint16).sum(axis=2) // 3).astype(np.uint8))


def _resolve_image(project: Project, token: str):
    """Accept either a registered image id or a bare file path."""
    if token in project.images:
        return token, project.images[token]
    if Path(token).is_file():
        return Path(token).stem, token
    raise ValueError(f"{token!r} is neither a registered image id nor a file")


# ---------------------------------------------------------------- commands

def cmd_init(args) -> int:
    path = Path(args.project)
    if path.exists():
        raise ValueError(f"refusing to overwrite existing project {path}")
    recipe = None
    if args.recipe:
        recipe = FeatureRecipe.from_json(Path(args.recipe).read_text())
    name = args.name or path.stem
    project = init_project(name, _split_classes(args.classes), recipe)
    project.save(path)
    print(f"initialized project {path} with classes "
          f"{', '.join(project.classes)}")
    return 0


def cmd_image_add(args) -> int:
    project = Project.load(args.project)
    image_id = project.register_image(args.path, image_id=args.id)
    project.save(args.project)
    print(image_id)
    return 0


def cmd_sample_add(args) -> int:
    project = Project.load(args.project)
    image_id, path = _resolve_image(project, args.image)
    project.register_image(path, image_id=image_id)
    record = project.add_sample(image_id, args.x, args.y, args.tag)
    project.save(args.project)
    print(record.id)
    return 0


def cmd_sample_retag(args) -> int:
    project = Project.load(args.project)
    record = project.retag_sample(args.id, args.tag)
    project.save(args.project)
    print(f"{record.id} -> {record.tag}")
    return 0


def cmd_sample_remove(args) -> int:
    project = Project.load(args.project)
    project.remove_sample(args.id)
    project.save(args.project)
    print(f"removed {args.id}")
    return 0


def cmd_train(args) -> int:
    project = Project.load(args.project)
    project.training_set().validate_for_training()  # keep old log on bad sets
    log_path = report_path_for(args.project)
    with open(log_path, "w") as stream:
        _, report = project.train(
            search=args.search, budget=args.budget, seed=args.seed,
            folds=args.folds, target_accuracy=args.target,
            space=SearchSpace(),
            on_trial=lambda t: print(json.dumps(t.to_dict(), sort_keys=True),
                                     flush=True),
            report_stream=stream)
    project.save(args.project)  # rewrites the log with its summary line
    best = report.best
    print(f"best: C=2^{np.log2(best.c):.2f} gamma=2^{np.log2(best.gamma):.2f} "
          f"cv_accuracy={best.cv_accuracy:.4f} "
          f"({len(report.trials)} trials, {report.stop_reason})")
    return 0


def cmd_map(args) -> int:
    project = Project.load(args.project)
    if project.bundle is None:
        raise ValueError("project has no trained model; run 'train' first")
    image_id, path = _resolve_image(project, args.image)
    gmap = map_image(path, project.bundle, GridSpec(step=args.step),
                     image_id=image_id)
    class_filter = _split_classes(args.classes) if args.classes else None
    if args.report:
        Path(args.report).write_text(gmap.to_jsonl())
    if args.overlay:
        overlay = render_overlay(load_image(path), gmap, args.limiter,
                                 class_filter=class_filter)
        save_png(overlay, args.overlay)
    shown = class_filter or list(gmap.classes)
    counts = {tag: sum(1 for e in gmap.entries
                       if e.informative and e.tag == tag
                       and e.probs[gmap.classes.index(tag)] >= args.limiter)
              for tag in shown}
    print(f"{image_id}: {len(gmap.entries)} grid points, "
          + ", ".join(f"{t}={n}" for t, n in counts.items())
          + f" at limiter {args.limiter}")
    return 0


def cmd_watch(args) -> int:
    project = Project.load(args.project)
    if project.bundle is None:
        raise ValueError("project has no trained model; run 'train' first")
    frames = sorted(p for p in Path(args.frames).iterdir()
                    if p.suffix.lower() in FRAME_SUFFIXES)
    if not frames:
        raise ValueError(f"no frames found under {args.frames}")
    rules = load_rules(args.rules)

    reference = _to_gray(load_image(frames[0]))
    radius = project.bundle.recipe.max_radius()
    grid = GridSpec(step=args.step)
    maps = []
    for frame_path in frames:
        arr = load_image(frame_path)
        gray = _to_gray(arr)
        changed = frame_change_mask(gray, reference, block=args.block)
        points = make_grid(gray.width, gray.height, grid, radius)
        flags = np.array([changed[y // args.block, x // args.block]
                          for x, y in points], dtype=bool)
        maps.append(map_image(arr, project.bundle, grid,
                              mask=InformativeMask(flags),
                              image_id=frame_path.stem))
    for event in evaluate_rules(maps, rules):
        print(json.dumps(event.to_dict(), sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    app = create_app(args.project)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridsight",
        description="Trainable texture classification on image grids.")
    parser.add_argument("--project", default="project.json",
                        help="project file (default: %(default)s)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create an empty project")
    p.add_argument("--classes", required=True,
                   help="comma-separated class names (>= 2)")
    p.add_argument("--recipe", help="feature recipe JSON file")
    p.add_argument("--name", help="project name (default: file stem)")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("image", help="image registry")
    img_sub = p.add_subparsers(dest="subcommand", required=True)
    q = img_sub.add_parser("add", help="register an image file")
    q.add_argument("path")
    q.add_argument("--id", help="registry id (default: file stem)")
    q.set_defaults(func=cmd_image_add)

    p = sub.add_parser("sample", help="training-sample curation")
    smp_sub = p.add_subparsers(dest="subcommand", required=True)
    q = smp_sub.add_parser("add", help="tag a circular sample")
    q.add_argument("image", help="registered image id or image path")
    q.add_argument("x", type=int)
    q.add_argument("y", type=int)
    q.add_argument("tag", metavar="class")
    q.set_defaults(func=cmd_sample_add)
    q = smp_sub.add_parser("retag", help="change a sample's class")
    q.add_argument("id")
    q.add_argument("tag", metavar="class")
    q.set_defaults(func=cmd_sample_retag)
    q = smp_sub.add_parser("remove", help="delete a sample")
    q.add_argument("id")
    q.set_defaults(func=cmd_sample_remove)

    p = sub.add_parser("train", help="search hyperparameters and fit a model")
    p.add_argument("--search", choices=("random", "grid"), default="random")
    p.add_argument("--budget", type=int, default=20,
                   help="trial budget for random search")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--target", type=float, default=None,
                   help="stop early at this cross-validation accuracy")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("map", help="classify every grid point of an image")
    p.add_argument("image", help="registered image id or image path")
    p.add_argument("--limiter", type=float, default=0.3,
                   help="minimum winning probability (default: %(default)s)")
    p.add_argument("--classes", help="comma-separated classes to mark")
    p.add_argument("--overlay", help="write marked PNG here")
    p.add_argument("--report", help="write grid records (JSON lines) here")
    p.add_argument("--step", type=int, default=8, help="grid step in pixels")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("watch", help="evaluate alert rules over a frame folder")
    p.add_argument("frames", help="directory of same-sized frames")
    p.add_argument("--rules", required=True, help="JSON array of alert rules")
    p.add_argument("--step", type=int, default=8)
    p.add_argument("--block", type=int, default=16,
                   help="frame-differencing block size")
    p.set_defaults(func=cmd_watch)

    p = sub.add_parser("serve", help="run the workbench HTTP API")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
