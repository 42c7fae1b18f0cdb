"""Dense 3D log-odds occupancy grid with exact ray traversal."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields

import numpy as np
from numba import njit

from .inference import joint_dist_sample
from .ingest import write_ply
from .model import Gmm4, RigidTransform

GRID_MAGIC = b"OGRID3D1"
END_EPS = 1e-9  # end-voxel nudge along the ray, in voxel units


@dataclass(frozen=True)
class GridParams:
    resolution: float
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dims: tuple[int, int, int] = (100, 100, 100)
    log_odds_hit: float = 0.85
    log_odds_miss: float = -0.4
    log_odds_min: float = -3.5
    log_odds_max: float = 3.5
    occupied_threshold: float = 0.5
    free_threshold: float = -0.3

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError("dims must be three positive integers")
        if not self.free_threshold < self.occupied_threshold:
            raise ValueError("free_threshold must be below occupied_threshold")
        if not self.log_odds_min <= self.log_odds_max:
            raise ValueError("log_odds_min must not exceed log_odds_max")

    @classmethod
    def from_dict(cls, d: dict) -> "GridParams":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown grid parameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@njit(cache=True)
def _walk(cells, p0, p1, t_stop, hit, lo_hit, lo_miss, lo_min, lo_max):
    """Amanatides-Woo traversal of the open segment ``p0 + t (p1 - p0)``,
    ``0 < t < t_stop``, in voxel coordinates. Voxels other than the end voxel
    get ``lo_miss``; with ``hit`` the end voxel gets ``lo_hit``. Returns the
    number of voxels updated.
    """
    nx, ny, nz = cells.shape
    dims = (nx, ny, nz)
    d = p1 - p0
    length = np.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
    if length == 0.0:
        return 0
    idx = np.empty(3, np.int64)
    step = np.empty(3, np.int64)
    t_max = np.empty(3)
    t_delta = np.empty(3)
    end = np.empty(3, np.int64)
    for k in range(3):
        c = np.floor(p0[k])
        idx[k] = np.int64(c)
        if d[k] > 0:
            step[k] = 1
            t_max[k] = (c + 1.0 - p0[k]) / d[k]
            t_delta[k] = 1.0 / d[k]
        elif d[k] < 0:
            step[k] = -1
            if p0[k] == c:  # on a face, moving down: the open segment starts below it
                idx[k] -= 1
                c -= 1.0
            t_max[k] = (c - p0[k]) / d[k]
            t_delta[k] = -1.0 / d[k]
        else:
            step[k] = 0
            t_max[k] = np.inf
            t_delta[k] = np.inf
        end[k] = np.int64(np.floor(p1[k] + END_EPS * d[k] / length))
    n = 0
    while True:
        inside = (0 <= idx[0] < nx) and (0 <= idx[1] < ny) and (0 <= idx[2] < nz)
        if not inside:
            break
        is_end = hit and idx[0] == end[0] and idx[1] == end[1] and idx[2] == end[2]
        if not is_end:
            v = cells[idx[0], idx[1], idx[2]]
            if np.isnan(v):
                v = 0.0
            cells[idx[0], idx[1], idx[2]] = min(max(v + lo_miss, lo_min), lo_max)
            n += 1
        t_next = min(t_max[0], t_max[1], t_max[2])
        if t_next >= t_stop:
            break
        # axes crossed at the same parameter step together, so a ray through
        # an edge or corner does not touch the voxels that only share it
        for k in range(3):
            if t_max[k] == t_next:
                idx[k] += step[k]
                t_max[k] += t_delta[k]
    if hit and 0 <= end[0] < dims[0] and 0 <= end[1] < dims[1] and 0 <= end[2] < dims[2]:
        v = cells[end[0], end[1], end[2]]
        if np.isnan(v):
            v = 0.0
        cells[end[0], end[1], end[2]] = min(max(v + lo_hit, lo_min), lo_max)
        n += 1
    return n


@njit(cache=True)
def _insert_rays(cells, p0, ends, max_range_vox, lo_hit, lo_miss, lo_min, lo_max):
    total = 0
    for r in range(ends.shape[0]):
        p1 = ends[r]
        dx = p1[0] - p0[0]
        dy = p1[1] - p0[1]
        dz = p1[2] - p0[2]
        length = np.sqrt(dx * dx + dy * dy + dz * dz)
        if length == 0.0:
            continue
        if length <= max_range_vox:
            total += _walk(cells, p0, p1, 1.0, True, lo_hit, lo_miss, lo_min, lo_max)
        else:
            total += _walk(cells, p0, p1, max_range_vox / length, False,
                           lo_hit, lo_miss, lo_min, lo_max)
    return total


@dataclass(eq=False)
class OccupancyGrid3D:
    params: GridParams
    cells: np.ndarray = field(default=None, repr=False)  # NaN = never touched

    def __post_init__(self):
        if self.cells is None:
            self.cells = np.full(self.params.dims, np.nan)
        elif self.cells.shape != self.params.dims:
            raise ValueError("cell array does not match grid dims")

    # coordinates
    def to_voxel(self, xyz) -> np.ndarray:
        p = self.params
        return (np.asarray(xyz, dtype=np.float64) - np.asarray(p.origin)) / p.resolution

    def voxel_centers(self, idx: np.ndarray) -> np.ndarray:
        p = self.params
        return np.asarray(p.origin) + (np.asarray(idx, dtype=np.float64) + 0.5) * p.resolution

    def contains(self, xyz) -> bool:
        v = self.to_voxel(xyz)
        return bool(((v >= 0) & (v < np.asarray(self.params.dims))).all())

    def _check_origin(self, origin):
        if not self.contains(origin):
            raise ValueError(f"ray origin {tuple(np.round(origin, 6))} is outside the grid")

    # updates
    def add_ray(self, origin, end, trimmed_max_range: float) -> int:
        """Trace one ray; returns the number of voxel updates (0 for a zero-length ray)."""
        if not trimmed_max_range > 0:
            raise ValueError("trimmed_max_range must be positive")
        origin = np.asarray(origin, dtype=np.float64)
        self._check_origin(origin)
        p = self.params
        return int(_insert_rays(self.cells, self.to_voxel(origin), self.to_voxel(end)[None, :],
                                trimmed_max_range / p.resolution, p.log_odds_hit,
                                p.log_odds_miss, p.log_odds_min, p.log_odds_max))

    def add_rays(self, origin, ends: np.ndarray, trimmed_max_range: float) -> int:
        """Same as calling ``add_ray`` for each row of ``ends`` in order."""
        if not trimmed_max_range > 0:
            raise ValueError("trimmed_max_range must be positive")
        origin = np.asarray(origin, dtype=np.float64)
        self._check_origin(origin)
        p = self.params
        ends = np.ascontiguousarray(self.to_voxel(np.asarray(ends).reshape(-1, 3)))
        return int(_insert_rays(self.cells, self.to_voxel(origin), ends,
                                trimmed_max_range / p.resolution, p.log_odds_hit,
                                p.log_odds_miss, p.log_odds_min, p.log_odds_max))

    def insert_resampled_model(self, model: Gmm4, sensor_pose: RigidTransform, num_pts: int,
                               trimmed_max_range: float, seed: int) -> int:
        """Sample ``num_pts`` points from ``model`` (world frame) and cast a ray to each
        from the sensor position."""
        pts = joint_dist_sample(model, num_pts, seed)[:, :3]
        return self.add_rays(sensor_pose.translation, pts, trimmed_max_range)

    # queries
    def _index_list(self, mask) -> np.ndarray:
        return np.argwhere(mask)

    def occupied_mask(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return self.cells > self.params.occupied_threshold

    def free_mask(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return self.cells < self.params.free_threshold

    def unknown_mask(self) -> np.ndarray:
        return ~(self.occupied_mask() | self.free_mask())

    def query_occupied(self) -> np.ndarray:
        return self.voxel_centers(np.argwhere(self.occupied_mask()))

    def query_free(self) -> np.ndarray:
        return self.voxel_centers(np.argwhere(self.free_mask()))

    def query_unknown(self) -> np.ndarray:
        return self.voxel_centers(np.argwhere(self.unknown_mask()))

    # files
    def export_occupied_ply(self, path, binary: bool = True) -> None:
        write_ply(path, self.query_occupied(), binary=binary)

    def save(self, path) -> None:
        """Binary dump: header then float32 cells in C order, NaN for unknown."""
        p = self.params
        with open(path, "wb") as fh:
            fh.write(GRID_MAGIC)
            fh.write(struct.pack("<d3d3I6d", p.resolution, *p.origin, *p.dims,
                                 p.log_odds_hit, p.log_odds_miss, p.log_odds_min,
                                 p.log_odds_max, p.occupied_threshold, p.free_threshold))
            fh.write(self.cells.astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "OccupancyGrid3D":
        raw = open(path, "rb").read()
        if raw[:8] != GRID_MAGIC:
            raise ValueError(f"{path}: not an occupancy grid file")
        hdr = struct.Struct("<d3d3I6d")
        vals = hdr.unpack_from(raw, 8)
        params = GridParams(vals[0], tuple(vals[1:4]), tuple(vals[4:7]), *vals[7:])
        n = int(np.prod(params.dims))
        cells = np.frombuffer(raw, dtype="<f4", count=n, offset=8 + hdr.size)
        return cls(params, cells.astype(np.float64).reshape(params.dims))
