"""Fit the synthetic frame, seen from a few sensor poses, and build an occupancy grid.

Writes the occupied voxel centers to a PLY and prints the cell counts.

    python scripts/occupancy_demo.py --out occupied.ply
"""

import argparse

import numpy as np

from gmmscape import scenes, sogmm
from gmmscape.ingest import decimate, image_pair_to_cloud
from gmmscape.lie import so3_exp
from gmmscape.model import RigidTransform, transform_model
from gmmscape.occupancy import GridParams, OccupancyGrid3D


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="occupied.ply")
    ap.add_argument("--bandwidth", type=float, default=0.02)
    ap.add_argument("--decimate", type=int, default=4)
    ap.add_argument("--resolution", type=float, default=0.05)
    ap.add_argument("--num-pts", type=int, default=20000)
    ap.add_argument("--views", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    depth, inten, k = scenes.synthetic_frame()
    f = args.decimate
    cloud = image_pair_to_cloud(decimate(depth, f), decimate(inten, f), k.decimated(f))
    model = sogmm.fit(cloud, args.bandwidth, sogmm.EmParams(seed=args.seed)).model
    print(f"model: {model.n_components} components")

    # the same frame seen from poses swung about the vertical axis
    poses = [RigidTransform(so3_exp([0.0, 0.15 * v, 0.0]), np.array([0.1 * v, 0.0, 0.0]))
             for v in range(args.views)]
    world = [transform_model(model, T) for T in poses]
    pts = np.vstack([m.means[:, :3] for m in world] + [T.translation[None] for T in poses])
    lo, hi = pts.min(0) - 0.2, pts.max(0) + 0.2
    dims = tuple(int(d) for d in np.ceil((hi - lo) / args.resolution))
    grid = OccupancyGrid3D(GridParams(args.resolution, tuple(lo), dims))
    for v, (m, T) in enumerate(zip(world, poses)):
        grid.insert_resampled_model(m, T, args.num_pts, 6.0, args.seed + v)
    grid.export_occupied_ply(args.out)
    print(f"grid {dims}: occupied {grid.occupied_mask().sum()}, free {grid.free_mask().sum()}, "
          f"unknown {grid.unknown_mask().sum()}")


if __name__ == "__main__":
    main()
