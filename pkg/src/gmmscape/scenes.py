"""Synthetic data used by the tests, the benchmark and the demo scripts."""

from __future__ import annotations

import numpy as np

from .ingest import CameraIntrinsics

BLOB_CENTERS = np.array([[0.1] * 4, [0.5] * 4, [0.9] * 4])


def three_blobs(n_per_blob: int = 1000, sigma: float = 0.01, seed: int = 0) -> np.ndarray:
    r = np.random.default_rng(seed)
    return np.vstack([c + sigma * r.standard_normal((n_per_blob, 4)) for c in BLOB_CENTERS])


def planes_and_cylinder(n: int = 20000, noise: float = 0.003, seed: int = 0) -> np.ndarray:
    """Floor and wall meeting at a right angle plus a vertical cylinder.

    About 2 m across. Intensity varies smoothly per surface.
    """
    r = np.random.default_rng(seed)
    n_floor, n_wall = int(0.4 * n), int(0.3 * n)
    n_cyl = n - n_floor - n_wall
    floor = np.column_stack([r.uniform(-1, 1, n_floor), r.uniform(-1, 1, n_floor),
                             np.zeros(n_floor)])
    wall = np.column_stack([np.full(n_wall, -1.0), r.uniform(-1, 1, n_wall),
                            r.uniform(0, 1.2, n_wall)])
    th = r.uniform(0, 2 * np.pi, n_cyl)
    cyl = np.column_stack([0.35 + 0.2 * np.cos(th), 0.25 + 0.2 * np.sin(th),
                           r.uniform(0, 1.0, n_cyl)])
    xyz = np.vstack([floor, wall, cyl]) + noise * r.standard_normal((n, 3))
    inten = np.concatenate([
        0.3 + 0.1 * np.sin(3 * floor[:, 0]),
        0.6 + 0.1 * np.cos(2 * wall[:, 2]),
        0.85 + 0.05 * np.sin(th),
    ])
    return np.column_stack([xyz, np.clip(inten, 0, 1)])


def scene_scale(xyz: np.ndarray) -> float:
    """Largest bounding-box extent."""
    return float(np.ptp(xyz[:, :3], axis=0).max())


DEFAULT_INTRINSICS = CameraIntrinsics(fx=525.0, fy=525.0, cx=319.5, cy=239.5,
                                      width=640, height=480, depth_scale=1000.0)


def synthetic_frame(width: int = 640, height: int = 480, seed: int = 0
                    ) -> tuple[np.ndarray, np.ndarray, CameraIntrinsics]:
    """Depth (uint16 mm) and 8-bit intensity images of a few objects in front of
    a far wall; the wall carries no depth (beyond sensor range) so the scene is
    a handful of compact surfaces.
    """
    k = DEFAULT_INTRINSICS
    if (width, height) != (k.width, k.height):
        s = width / k.width
        k = CameraIntrinsics(k.fx * s, k.fy * s, (width - 1) / 2, (height - 1) / 2,
                             width, height, k.depth_scale)
    r = np.random.default_rng(seed)
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    dx, dy = (u - k.cx) / k.fx, (v - k.cy) / k.fy
    depth = np.full((height, width), np.inf)
    inten = np.zeros((height, width))
    # spheres: center, radius, base intensity
    spheres = [((-0.45, -0.2, 2.2), 0.25, 0.8), ((0.4, 0.1, 2.6), 0.3, 0.35),
               ((0.0, 0.35, 1.8), 0.15, 0.6)]
    n2 = dx**2 + dy**2 + 1.0
    for (cx, cy, cz), rad, base in spheres:
        b = dx * cx + dy * cy + cz
        c = cx * cx + cy * cy + cz * cz - rad * rad
        disc = b * b - n2 * c
        hit = disc > 0
        z = np.where(hit, (b - np.sqrt(np.where(hit, disc, 0))) / n2, np.inf)
        closer = z < depth
        depth = np.where(closer, z, depth)
        shade = base + 0.15 * (dy * 0.5 + 0.5) * np.cos(4 * dx)
        inten = np.where(closer, shade, inten)
    # a tabletop slab below the spheres
    table = (dy > 0.18) & (dy < 0.32) & (np.abs(dx) < 0.35)
    z_tab = 0.55 / np.where(table, dy, 1.0)
    closer = table & (z_tab < depth)
    depth = np.where(closer, z_tab, depth)
    inten = np.where(closer, 0.2 + 0.05 * np.sin(20 * dx), inten)
    valid = np.isfinite(depth)
    depth_mm = np.where(valid, np.round(depth * k.depth_scale), 0).astype(np.uint16)
    inten = np.clip(inten, 0, 1)
    inten8 = np.where(valid, np.round(inten * 255), 0).astype(np.uint8)
    return depth_mm, inten8, k
