"""Command-line entry point: ``tripletdet {synth,decode,eval,ablate,bench}``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 internal
invariant violation. Every command that writes an output directory also
writes ``run_config.json`` describing exactly how it was produced.
"""

from __future__ import annotations

import argparse
import dataclasses
import statistics
import sys
from pathlib import Path

from . import __version__, _backend
from .decode import DecodeConfig
from .errors import ConfigError, ContractError, GridFormatError, SpecError, TripletDetError
from .io import dumps_detections, load_detections, load_ground_truth, read_json, save_ground_truth, write_json
from .metrics import evaluate
from .pipeline import MODES, decode_many, default_suppression, filter_is_subset, flatten, timed_decode
from .records import LevelSpec
from .scene import MANIFEST, load_scene, save_scene
from .suppress import Method, SuppressConfig
from .synth import SceneSpec, generate_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3
RUN_CONFIG = "run_config.json"


class InvariantViolation(TripletDetError):
    """A determinism or bookkeeping guarantee failed at run time."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "value") and not isinstance(obj, (int, float)):
        return obj.value
    return obj


def run_config(args, **extra) -> dict:
    # the output location is where the config lives, so it is not recorded
    params = {k: v for k, v in vars(args).items() if k not in ("func", "output")}
    cfg = {"command": args.command, "params": _jsonable(params), "version": __version__}
    cfg.update({k: _jsonable(v) for k, v in extra.items()})
    return cfg


# -- config plumbing -------------------------------------------------------


def _add_decode_flags(p):
    p.add_argument("--mode", choices=MODES, default="sr")
    p.add_argument("--no-center-filter", action="store_true", help="skip center-keypoint confirmation")
    p.add_argument("--single-center", action="store_true",
                   help="multi resolution: accept a pair when either center lands in its central region")
    p.add_argument("--no-refine", action="store_true", help="multi resolution: skip heatmap snapping")
    p.add_argument("--k", type=int, default=70, help="peaks kept per heatmap")
    p.add_argument("--embed-threshold", type=float, default=0.5)
    p.add_argument("--n-small", type=int, default=3)
    p.add_argument("--n-large", type=int, default=5)
    p.add_argument("--scale-split", type=float, default=150.0)
    p.add_argument("--nms", choices=[m.value for m in Method], default=None,
                   help="suppression method (default: soft-gaussian for sr, hard for mr)")
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--iou-threshold", type=float, default=None)
    p.add_argument("--top-n", type=int, default=100)
    p.add_argument("--flip", action="store_true", help="merge detections from the mirrored scene")
    p.add_argument("--threads", type=int, default=1)


def decode_config(args, center_filter=None) -> DecodeConfig:
    return DecodeConfig(
        k_peaks=args.k,
        k_per_level=args.k,
        embed_threshold=args.embed_threshold,
        n_small=args.n_small,
        n_large=args.n_large,
        scale_split=args.scale_split,
        center_filter=(not args.no_center_filter) if center_filter is None else center_filter,
        require_both_centers=not args.single_center,
        refine=not args.no_refine,
    )


def suppress_config(args) -> SuppressConfig:
    base = default_suppression(args.mode)
    return SuppressConfig(
        method=args.nms or base.method,
        sigma=args.sigma,
        iou_threshold=base.iou_threshold if args.iou_threshold is None else args.iou_threshold,
        top_n=args.top_n,
    )


def load_scenes(path, load_grids: bool = True):
    """A single scene directory or an output root holding ``scenes/<id>/``."""
    root = Path(path)
    if (root / MANIFEST).is_file():
        return [load_scene(root, load_grids)]
    sub = root / "scenes"
    if not sub.is_dir():
        raise GridFormatError(f"{root}: neither a scene directory nor a root with scenes/")
    dirs = sorted(d for d in sub.iterdir() if (d / MANIFEST).is_file())
    if not dirs:
        raise GridFormatError(f"{sub}: no scenes found")
    return sorted((load_scene(d, load_grids) for d in dirs), key=lambda s: s.image_id)


def _gts(scenes):
    return {s.image_id: list(s.ground_truth) for s in scenes}


def _out_dir(path) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


# -- commands --------------------------------------------------------------


def cmd_synth(args) -> int:
    overrides = read_json(args.spec) if args.spec else {}
    fields = {f.name for f in dataclasses.fields(SceneSpec)}
    unknown = set(overrides) - fields
    if unknown:
        raise SpecError(f"unknown scene spec fields {sorted(unknown)}")
    if "levels" in overrides:
        overrides["levels"] = tuple(LevelSpec(lv["level_id"], int(lv["stride"])) for lv in overrides["levels"])
    for key in ("box_count", "size_range", "aspect_range", "keypoint_score_range", "noise_score_range",
                "noise_size_range"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    spec = SceneSpec(**overrides)
    flags = {}
    if args.seed is not None:
        flags["seed"] = args.seed
    if args.noise_corners is not None:
        flags["noise_pairs"] = args.noise_corners
    if args.max_boxes is not None:
        flags["box_count"] = (min(spec.box_count[0], args.max_boxes), args.max_boxes)
    if args.classes is not None:
        flags["num_classes"] = args.classes
    if args.aspect_min is not None or args.aspect_max is not None:
        lo = spec.aspect_range[0] if args.aspect_min is None else args.aspect_min
        hi = spec.aspect_range[1] if args.aspect_max is None else args.aspect_max
        flags["aspect_range"] = (lo, max(lo, hi))
    if args.score_min is not None:
        flags["keypoint_score_range"] = (args.score_min, 1.0)
    spec = dataclasses.replace(spec, **flags).validate()

    scenes = generate_dataset(spec, args.scenes)
    out = _out_dir(args.output)
    for s in scenes:
        save_scene(s, out / "scenes" / f"{s.image_id:05d}")
    save_ground_truth([(s.image_id, s.width, s.height) for s in scenes], _gts(scenes), out / "gt.json")
    write_json(out / RUN_CONFIG, run_config(args, scene_spec=spec))
    noise = sum(len(s.noise) for s in scenes)
    print(f"wrote {len(scenes)} scenes ({sum(len(s.ground_truth) for s in scenes)} objects, "
          f"{noise} noise pairs) to {out}")
    return EXIT_OK


def cmd_decode(args) -> int:
    scenes = load_scenes(args.scenes)
    cfg, scfg = decode_config(args), suppress_config(args)
    results = decode_many(scenes, args.mode, cfg, scfg, flip=args.flip, threads=args.threads)
    out = _out_dir(args.output)
    (out / "detections.json").write_text(dumps_detections(flatten(results)))
    write_json(out / RUN_CONFIG, run_config(args, decode=cfg, suppress=scfg))
    print(f"{len(flatten(results))} detections from {len(scenes)} scenes -> {out / 'detections.json'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    dets = load_detections(args.detections)
    _, gts = load_ground_truth(args.gt)
    report = evaluate(dets, gts)
    print(report.table())
    if args.output:
        out = _out_dir(args.output)
        (out / "report.json").write_text(report.to_json() + "\n")
        write_json(out / RUN_CONFIG, run_config(args))
    return EXIT_OK


def cmd_ablate(args) -> int:
    scenes = load_scenes(args.scenes)
    gts = _gts(scenes)
    scfg = suppress_config(args)
    runs = {}
    for name, flag in (("filtered", True), ("unfiltered", False)):
        cfg = decode_config(args, center_filter=flag)
        results = decode_many(scenes, args.mode, cfg, scfg, threads=args.threads)
        runs[name] = (cfg, results, evaluate(flatten(results), gts, geometry=False))
    subset = all(filter_is_subset(s, args.mode, decode_config(args)) for s in scenes)
    f, u = runs["filtered"][2], runs["unfiltered"][2]
    keys = ("AP", "AP50", "AF", "AF5", "AF25", "AF50")
    print(f"{'':>8}  {'filtered':>9}  {'unfiltered':>10}  {'delta':>7}")
    for k in keys:
        fv, uv = getattr(f, k), getattr(u, k)
        delta = None if fv is None or uv is None else fv - uv
        print(f"{k:>8}  {_pct(fv):>9}  {_pct(uv):>10}  {_pct(delta):>7}")
    print(f"detections: {f.num_detections} filtered vs {u.num_detections} unfiltered; "
          f"decoded candidates of filtered run are a subset: {subset}")
    report = {
        "filtered": {"report": f.to_dict(), "run_config": run_config(args, decode=runs["filtered"][0], suppress=scfg)},
        "unfiltered": {"report": u.to_dict(),
                       "run_config": run_config(args, decode=runs["unfiltered"][0], suppress=scfg)},
        "delta": {k: None if getattr(f, k) is None or getattr(u, k) is None else getattr(f, k) - getattr(u, k)
                  for k in keys},
        "subset": subset,
    }
    if args.output:
        out = _out_dir(args.output)
        write_json(out / "ablation.json", report)
        write_json(out / RUN_CONFIG, run_config(args))
    if not subset:
        raise InvariantViolation("filtered detections are not a subset of unfiltered detections")
    return EXIT_OK


def _pct(v):
    return "-" if v is None else f"{100.0 * v:.1f}"


def cmd_bench(args) -> int:
    scenes = load_scenes(args.scenes)
    cfg, scfg = decode_config(args), suppress_config(args)
    backend = args.backend or _backend.active_backend()
    with _backend.use_backend(backend):
        # warm-up, then a single-threaded pass whose stage times are exact
        ref, ref_wall, stages = timed_decode(scenes, args.mode, cfg, scfg, 1)
        ref, ref_wall, stages = timed_decode(scenes, args.mode, cfg, scfg, 1)
        ref_json = dumps_detections(flatten(ref))
        samples = []
        for _ in range(args.repeat):
            res, wall, _ = timed_decode(scenes, args.mode, cfg, scfg, args.threads)
            if dumps_detections(flatten(res)) != ref_json:
                raise InvariantViolation(f"output with {args.threads} threads differs from single-threaded output")
            samples.append(wall)
    if sum(stages.values()) > ref_wall:
        raise InvariantViolation("per-stage times exceed total wall time")
    median = statistics.median(samples)
    report = {
        "backend": backend,
        "images": len(scenes),
        "threads": args.threads,
        "samples_s": samples,
        "median_s": median,
        "images_per_s": len(scenes) / median if median > 0 else None,
        "single_thread_s": ref_wall,
        "stages_s": dict(sorted(stages.items())),
        "identical_across_threads": True,
    }
    print(f"backend {backend}, {len(scenes)} images, {args.threads} thread(s)")
    print("samples: " + ", ".join(f"{s * 1e3:.1f} ms" for s in samples) + f"  median {median * 1e3:.1f} ms")
    if report["images_per_s"]:
        print(f"throughput: {report['images_per_s']:.1f} images/s")
    print(f"single-thread breakdown ({ref_wall * 1e3:.1f} ms total):")
    for k, v in report["stages_s"].items():
        print(f"  {k:>8}  {v * 1e3:8.2f} ms")
    if args.output:
        out = _out_dir(args.output)
        (out / "detections.json").write_text(ref_json)
        write_json(out / "bench.json", report)
        write_json(out / RUN_CONFIG, run_config(args, decode=cfg, suppress=scfg))
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tripletdet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate oracle scenes")
    s.add_argument("--scenes", type=int, default=200)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--spec", help="JSON file with scene spec overrides")
    s.add_argument("--noise-corners", type=int, default=None, help="spurious corner pairs per scene")
    s.add_argument("--aspect-min", type=float, default=None)
    s.add_argument("--aspect-max", type=float, default=None)
    s.add_argument("--max-boxes", type=int, default=None)
    s.add_argument("--classes", type=int, default=None)
    s.add_argument("--score-min", type=float, default=None, help="lower bound of object keypoint scores")
    s.set_defaults(func=cmd_synth)

    d = sub.add_parser("decode", help="decode scenes into detections")
    d.add_argument("scenes")
    d.add_argument("-o", "--output", required=True)
    _add_decode_flags(d)
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("eval", help="score detections against ground truth")
    e.add_argument("detections")
    e.add_argument("gt")
    e.add_argument("-o", "--output")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="compare decoding with and without the center filter")
    a.add_argument("scenes")
    a.add_argument("-o", "--output")
    _add_decode_flags(a)
    a.set_defaults(func=cmd_ablate)

    b = sub.add_parser("bench", help="time decoding and check thread-count determinism")
    b.add_argument("scenes")
    b.add_argument("-o", "--output")
    b.add_argument("--repeat", type=int, default=3)
    b.add_argument("--backend", choices=sorted(_backend.BACKENDS), default=None)
    _add_decode_flags(b)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "threads", 1) < 1 or getattr(args, "repeat", 1) < 1 or getattr(args, "scenes", 1) == 0:
            raise ConfigError("--threads, --repeat and --scenes must be >= 1")
        return args.func(args)
    except InvariantViolation as exc:
        print(f"tripletdet: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ContractError, ConfigError, SpecError) as exc:
        print(f"tripletdet: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (GridFormatError, OSError) as exc:
        print(f"tripletdet: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
