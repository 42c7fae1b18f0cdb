"""``gmmscape`` command line.

Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 numerical failure.
Option values resolve as command-line flag, then the ``--config`` JSON file,
then the built-in default.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bench, rng, scenes, sogmm
from .inference import color_conditional, joint_dist_sample
from .ingest import (CameraIntrinsics, decimate, image_pair_to_cloud, read_depth,
                     read_intensity, read_ply_xyz, write_ply)
from .kernels import NotPositiveDefiniteError, SingularFactorError, set_num_threads
from .model import (GmmFormatError, InvalidModelError, RigidTransform, load_gmm,
                    memory_footprint, save_gmm, transform_model)
from .occupancy import GridParams, OccupancyGrid3D
from .posegraph import DisconnectedGraphError, load_graph, pose_graph_optimize, save_graph
from .registration import VARIANTS

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "bandwidth": 0.015,
    "decimate": 1,
    "depth_scale": None,
    "seed": None,
    "threads": None,
    "format": "binary",
    "max_range": 5.0,
    "variant": "hybrid",
    "fixed_node": 0,
    "num_pts": 20000,
    "resolution": 0.02,
    "padding": 0.1,
    "bandwidth_count": 10,
    "bandwidth_min": 0.0135,
    "bandwidth_max": 0.0300,
    "factors": [2, 3, 4],
    "repetitions": 10,
}


class UsageError(Exception):
    pass


class Settings:
    """Flag > config file > default lookup."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self._args = args
        self._config = config

    def __getattr__(self, name):
        v = getattr(self._args, name, None)
        if v is not None:
            return v
        if name in self._config:
            return self._config[name]
        return DEFAULTS.get(name)


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _seed(s: Settings) -> int:
    if s.seed is not None:
        return int(s.seed)
    seed = rng.entropy_seed()
    print(f"seed: {seed}")
    return seed


def _intrinsics(s: Settings, shape) -> CameraIntrinsics:
    h, w = shape
    if s.intrinsics is not None:
        with open(s.intrinsics) as fh:
            d = json.load(fh)
        k = CameraIntrinsics(**d)
    else:
        # standard 525 px pinhole at 640x480, rescaled to the image width
        base = scenes.DEFAULT_INTRINSICS
        f = w / base.width
        k = CameraIntrinsics(base.fx * f, base.fy * f, (w - 1) / 2, (h - 1) / 2, w, h,
                             base.depth_scale)
    if s.depth_scale is not None:
        k = CameraIntrinsics(k.fx, k.fy, k.cx, k.cy, k.width, k.height, float(s.depth_scale))
    if (k.height, k.width) != tuple(shape):
        raise UsageError(f"intrinsics are for {k.width}x{k.height}, image is {w}x{h}")
    return k


def _cloud_from_args(s: Settings):
    depth = read_depth(s.depth)
    inten, bits = read_intensity(s.intensity)
    k = _intrinsics(s, depth.shape)
    f = int(s.decimate)
    if f < 1:
        raise UsageError("--decimate must be >= 1")
    if f > 1:
        depth, inten, k = decimate(depth, f), decimate(inten, f), k.decimated(f)
    return image_pair_to_cloud(depth, inten, k, intensity_bits=bits)


def _positive(name, v):
    if v is None or not float(v) > 0:
        raise UsageError(f"{name} must be positive")
    return float(v)


def cmd_fit(s: Settings) -> int:
    bw = _positive("--bandwidth", s.bandwidth)
    cloud = _cloud_from_args(s)
    seed = _seed(s)
    t0 = time.perf_counter()
    res = sogmm.fit(cloud, bw, sogmm.EmParams(seed=seed))
    dt = time.perf_counter() - t0
    save_gmm(res.model, s.out_model, format=s.format)
    print(f"M: {res.model.n_components}")
    print(f"fit_seconds: {dt:.3f}")
    print(f"memory_bytes: {memory_footprint(res.model)}")
    return EXIT_OK


def cmd_sample(s: Settings) -> int:
    if s.n < 1:
        raise UsageError("n must be >= 1")
    model = load_gmm(s.model)
    x = joint_dist_sample(model, s.n, _seed(s), clip_intensity=True)
    write_ply(s.out_ply, x[:, :3], x[:, 3], binary=s.format != "ascii")
    return EXIT_OK


def cmd_infer(s: Settings) -> int:
    model = load_gmm(s.model)
    locs = read_ply_xyz(s.locs_ply)
    res = color_conditional(model, locs)
    write_ply(s.out_ply, locs, res.expected_intensity)
    return EXIT_OK


def _read_matrix(path) -> RigidTransform:
    T = np.loadtxt(path, dtype=np.float64)
    if T.shape != (4, 4):
        raise UsageError(f"{path}: expected a 4x4 matrix")
    return RigidTransform.from_matrix(T, orthonormalize=True)


def cmd_register(s: Settings) -> int:
    if s.variant not in VARIANTS:
        raise UsageError(f"unknown variant {s.variant!r}; choose from {sorted(VARIANTS)}")
    src, tgt = load_gmm(s.source), load_gmm(s.target)
    Tinit = _read_matrix(s.init) if s.init else RigidTransform.identity()
    res = VARIANTS[s.variant](Tinit, src, tgt)
    np.savetxt(s.out, res.transform.matrix(), fmt="%.17g")
    print(f"cost: {res.final_cost:.12g}")
    print(f"iterations: {res.iterations}")
    print(f"converged: {res.converged}")
    return EXIT_OK


def cmd_posegraph(s: Settings) -> int:
    graph = load_graph(s.graph)
    res = pose_graph_optimize(graph, int(s.fixed_node))
    save_graph(res.graph, s.out)
    print(f"cost: {res.final_cost:.12g}")
    print(f"iterations: {res.iterations}")
    print(f"converged: {res.converged}")
    return EXIT_OK


def _load_poses(path, models_dir: Path) -> list[tuple[Path, RigidTransform]]:
    """JSON list of ``{"model", "quaternion", "translation"}``; the model name
    is resolved inside ``models_dir``."""
    with open(path) as fh:
        entries = json.load(fh)
    if isinstance(entries, dict):
        entries = entries.get("poses", [])
    out = []
    for e in entries:
        out.append((models_dir / e["model"],
                    RigidTransform.from_quaternion(e["quaternion"], e["translation"])))
    if not out:
        raise UsageError(f"{path}: no poses")
    return out


def _auto_grid(models, poses, resolution: float, padding: float) -> GridParams:
    pts = [m.means[:, :3] for m in models] + [np.array([T.translation]) for T in poses]
    pts = np.vstack(pts)
    lo = pts.min(axis=0) - padding
    hi = pts.max(axis=0) + padding
    dims = np.maximum(np.ceil((hi - lo) / resolution).astype(int), 1)
    return GridParams(resolution, tuple(lo), tuple(int(d) for d in dims))


def cmd_occupancy(s: Settings) -> int:
    max_range = _positive("--max-range", s.max_range)
    models_dir = Path(s.models_dir)
    entries = _load_poses(s.poses, models_dir)
    models, poses = [], []
    for path, pose in entries:
        models.append(transform_model(load_gmm(path), pose))
        poses.append(pose)
    if s.grid is not None:
        with open(s.grid) as fh:
            params = GridParams.from_dict(json.load(fh))
    elif "grid" in s._config:
        params = GridParams.from_dict(s._config["grid"])
    else:
        params = _auto_grid(models, poses, _positive("--resolution", s.resolution),
                            float(s.padding))
    grid = OccupancyGrid3D(params)
    seed = _seed(s)
    for k, (model, pose) in enumerate(zip(models, poses)):
        grid.insert_resampled_model(model, pose, int(s.num_pts), max_range, seed + k)
    grid.export_occupied_ply(s.out_ply)
    if s.grid_out:
        grid.save(s.grid_out)
    print(f"occupied: {int(grid.occupied_mask().sum())}")
    print(f"free: {int(grid.free_mask().sum())}")
    print(f"unknown: {int(grid.unknown_mask().sum())}")
    return EXIT_OK


def cmd_bench(s: Settings) -> int:
    cfg = bench.BenchConfig(int(s.bandwidth_count), float(s.bandwidth_min),
                            float(s.bandwidth_max), tuple(s.factors), int(s.repetitions),
                            s.out_csv, int(s.seed) if s.seed is not None else 0)
    if s.depth is None:
        depth, inten, k = scenes.synthetic_frame()
    else:
        depth = read_depth(s.depth)
        inten, _ = read_intensity(s.intensity)
        k = _intrinsics(s, depth.shape)

    def progress(row):
        print(f"{row.image_size} bw={row.bandwidth:.5f} mean={row.mean_seconds:.3f}s "
              f"std={row.std_seconds:.3f}s M={row.M}", flush=True)

    rows = bench.run_bench(depth, inten, k, cfg, progress)
    bench.write_csv(rows, cfg.out_csv)
    bad = bench.monotonicity_violations(rows)
    if bad:
        for bw, a, b in bad:
            print(f"monotonicity: bw={bw:.5f} factor {b} slower than factor {a}")
    else:
        print("monotonicity: time non-increasing with decimation at every bandwidth")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults")
    common.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    common.add_argument("--seed", type=int, help="random seed (printed when omitted)")
    common.add_argument("-v", "--verbose", action="store_true")

    frame = argparse.ArgumentParser(add_help=False)
    frame.add_argument("--decimate", type=int)
    frame.add_argument("--depth-scale", type=float)
    frame.add_argument("--intrinsics", help="JSON with fx, fy, cx, cy, width, height")

    p = argparse.ArgumentParser(prog="gmmscape", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("fit", parents=[common, frame], help="fit a model to a depth/intensity pair")
    q.add_argument("depth")
    q.add_argument("intensity")
    q.add_argument("out_model")
    q.add_argument("--bandwidth", type=float)
    q.add_argument("--format", choices=["binary", "json"])
    q.set_defaults(func=cmd_fit)

    q = sub.add_parser("sample", parents=[common], help="draw points from a model into a PLY")
    q.add_argument("model")
    q.add_argument("n", type=int)
    q.add_argument("out_ply")
    q.add_argument("--format", choices=["binary", "ascii"])
    q.set_defaults(func=cmd_sample)

    q = sub.add_parser("infer", parents=[common], help="expected intensity at PLY locations")
    q.add_argument("model")
    q.add_argument("locs_ply")
    q.add_argument("out_ply")
    q.set_defaults(func=cmd_infer)

    q = sub.add_parser("register", parents=[common], help="align a source model to a target")
    q.add_argument("source")
    q.add_argument("target")
    q.add_argument("out", help="output 4x4 transform (text)")
    q.add_argument("--variant")
    q.add_argument("--init", help="initial 4x4 transform (text); identity when omitted")
    q.set_defaults(func=cmd_register)

    q = sub.add_parser("posegraph", parents=[common], help="optimize a pose graph JSON file")
    q.add_argument("graph")
    q.add_argument("out")
    q.add_argument("--fixed-node", type=int)
    q.set_defaults(func=cmd_posegraph)

    q = sub.add_parser("occupancy", parents=[common], help="build an occupancy grid from models")
    q.add_argument("models_dir")
    q.add_argument("poses", help="JSON list of {model, quaternion, translation}")
    q.add_argument("out_ply")
    q.add_argument("--grid", help="GridParams JSON; bounds are derived when omitted")
    q.add_argument("--grid-out", help="also write the full grid dump here")
    q.add_argument("--max-range", type=float)
    q.add_argument("--num-pts", type=int)
    q.add_argument("--resolution", type=float)
    q.add_argument("--padding", type=float)
    q.set_defaults(func=cmd_occupancy)

    q = sub.add_parser("bench", parents=[common], help="timing sweep to CSV")
    q.add_argument("--depth", help="depth image (synthetic frame when omitted)")
    q.add_argument("--intensity")
    q.add_argument("--intrinsics")
    q.add_argument("--depth-scale", type=float)
    q.add_argument("--out-csv", default="bench.csv")
    q.add_argument("--bandwidth-count", type=int)
    q.add_argument("--bandwidth-min", type=float)
    q.add_argument("--bandwidth-max", type=float)
    q.add_argument("--factors", type=int, nargs="+")
    q.add_argument("--repetitions", type=int)
    q.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        s = Settings(args, _load_config(args.config))
        if s.threads is not None:
            if int(s.threads) < 1:
                raise UsageError("--threads must be >= 1")
            os.environ["GMMSCAPE_THREADS"] = str(int(s.threads))
            set_num_threads(int(s.threads))
        if args.command == "bench" and (s.depth is None) != (s.intensity is None):
            raise UsageError("--depth and --intensity go together")
        return args.func(s)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NotPositiveDefiniteError, SingularFactorError, InvalidModelError,
            FloatingPointError, np.linalg.LinAlgError, DisconnectedGraphError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, GmmFormatError, json.JSONDecodeError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
