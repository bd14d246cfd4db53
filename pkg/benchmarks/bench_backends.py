#!/usr/bin/env python3
"""Compare the compiled kernels with the numpy fallback.

Times the individual kernels on random and rendered inputs and full single-/multi-
resolution decoding on a synthetic corpus, and checks that both backends
return identical results for every case.

    python benchmarks/bench_backends.py
    python benchmarks/bench_backends.py --scenes 100 --repeat 7 --json bench.json
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time

import numpy as np

from tripletdet import _backend
from tripletdet.io import dumps_detections
from tripletdet.pipeline import decode_many, flatten
from tripletdet.synth import SceneSpec, generate_dataset


def _timeit(fn, repeat):
    fn()  # warm-up
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def _fingerprint(value):
    if isinstance(value, tuple):
        return tuple(_fingerprint(v) for v in value)
    if isinstance(value, np.ndarray):
        return (value.dtype.str, value.shape, value.tobytes())
    return value


def kernel_cases(rng, scenes):
    heat = rng.uniform(0, 1, (80, 128, 128)).astype(np.float32)
    # rendered heatmaps: mostly zero with a few gaussian bumps
    rendered = np.ascontiguousarray(
        np.concatenate([s.grids[k].array for s in scenes[:10] for k in ("tl_heat", "br_heat", "ct_heat")]))
    plane = np.ascontiguousarray(heat[0])

    n = 400
    cls = rng.integers(0, 3, n).astype(np.int64)
    xy = rng.uniform(0, 500, (4, n))
    emb = rng.uniform(0, 2, (2, n))

    m = 300
    x1, y1 = rng.uniform(0, 400, (2, m))
    x2, y2 = x1 + rng.uniform(4, 120, m), y1 + rng.uniform(4, 120, m)
    scores = np.sort(rng.uniform(size=m))[::-1].copy()

    return {
        "scan_max 128x128 x4": lambda k: tuple(k.scan_max(plane, d) for d in range(4)),
        "peak_mask dense 80x128x128": lambda k: k.peak_mask(heat, 3, 0.0),
        f"peak_mask rendered {rendered.shape[0]}x128x128": lambda k: k.peak_mask(rendered, 3, 0.0),
        "pair_corners 400x400": lambda k: k.pair_corners(cls, xy[0], xy[1], emb[0], cls, xy[2], xy[3], emb[1],
                                                         0.5, True),
        "best_center 300x400": lambda k: k.best_center(x1, y1, x2, y2, cls[:m], cls, xy[0], xy[1], emb[0],
                                                       3, 5, 150.0),
        "soft_nms 300": lambda k: k.soft_nms(x1, y1, x2, y2, scores, 0, 0.5, 0.3, 0.001),
        "nms 300": lambda k: k.nms(x1, y1, x2, y2, 0.6),
    }


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="write results here")
    args = p.parse_args(argv)

    names = sorted(_backend.BACKENDS)
    if "compiled" not in names:
        print("compiled backend not built; only the numpy fallback is available", file=sys.stderr)

    scenes = generate_dataset(SceneSpec(seed=args.seed, noise_pairs=3, keypoint_score_range=(0.5, 1.0)),
                              args.scenes)
    rows = []
    for case, fn in kernel_cases(np.random.default_rng(args.seed), scenes).items():
        times, prints = {}, {}
        for name in names:
            k = _backend.BACKENDS[name]
            times[name] = _timeit(lambda: fn(k), args.repeat)
            prints[name] = _fingerprint(fn(k))
        rows.append((case, times, len(set(prints.values())) == 1))

    for mode in ("sr", "mr"):
        times, prints = {}, {}
        for name in names:
            with _backend.use_backend(name):
                times[name] = _timeit(lambda: decode_many(scenes, mode), args.repeat)
                prints[name] = dumps_detections(flatten(decode_many(scenes, mode)))
        rows.append((f"decode {mode} x{len(scenes)}", times, len(set(prints.values())) == 1))

    width = max(len(r[0]) for r in rows)
    print(f"{'case':<{width}}  " + "  ".join(f"{n:>10}" for n in names) + "  speedup  identical")
    for case, times, same in rows:
        cols = "  ".join(f"{times[n] * 1e3:8.2f}ms" for n in names)
        speedup = times["python"] / times["compiled"] if "compiled" in times and times["compiled"] > 0 else None
        print(f"{case:<{width}}  {cols}  {'-' if speedup is None else f'{speedup:6.1f}x':>7}  {same}")

    if args.json:
        with open(args.json, "w") as fh:
            json.dump([{"case": c, "median_s": t, "identical": s} for c, t, s in rows], fh, indent=2)
    return 0 if all(s for _, _, s in rows) else 3


if __name__ == "__main__":
    sys.exit(main())
