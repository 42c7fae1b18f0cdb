"""Depth + intensity frames to 4D point clouds, and PLY I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .model import PointCloud4D, RigidTransform


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 1000.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0 or self.depth_scale <= 0:
            raise ValueError("focal lengths and depth_scale must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point outside the image")

    def decimated(self, factor: int) -> "CameraIntrinsics":
        """Intrinsics matching ``decimate(image, factor)``."""
        return CameraIntrinsics(self.fx / factor, self.fy / factor,
                                self.cx / factor, self.cy / factor,
                                self.width // factor, self.height // factor,
                                self.depth_scale)


def _normalize_intensity(img: np.ndarray, bits: int | None = None) -> np.ndarray:
    if bits is None:
        bits = 8 if img.dtype == np.uint8 else 16
    return img.astype(np.float64) / float(2**bits - 1)


def image_pair_to_cloud(depth: np.ndarray, intensity: np.ndarray,
                        intrinsics: CameraIntrinsics,
                        intensity_bits: int | None = None) -> PointCloud4D:
    """Back-project every pixel with nonzero depth; row-major output order."""
    depth = np.asarray(depth)
    intensity = np.asarray(intensity)
    if depth.shape != intensity.shape:
        raise ValueError(f"depth {depth.shape} and intensity {intensity.shape} differ")
    if (depth < 0).any():
        raise ValueError("negative depth values")
    v, u = np.nonzero(depth > 0)
    if v.size == 0:
        raise ValueError("depth image has no valid pixels")
    k = intrinsics
    z = depth[v, u].astype(np.float64) / k.depth_scale
    x = (u - k.cx) * z / k.fx
    y = (v - k.cy) * z / k.fy
    i = _normalize_intensity(intensity, intensity_bits)[v, u]
    return PointCloud4D(np.column_stack([x, y, z, i]))


def project(xyz: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection to pixel coordinates ``(u, v)``."""
    k = intrinsics
    xyz = np.asarray(xyz, dtype=np.float64)
    return np.column_stack([k.fx * xyz[:, 0] / xyz[:, 2] + k.cx,
                            k.fy * xyz[:, 1] / xyz[:, 2] + k.cy])


def decimate(image: np.ndarray, factor: int) -> np.ndarray:
    """Strided subsampling: output ``(v, u)`` is input ``(v*f, u*f)``."""
    image = np.asarray(image)
    if factor < 1:
        raise ValueError("decimation factor must be >= 1")
    h, w = image.shape[:2]
    if factor > h or factor > w:
        raise ValueError(f"factor {factor} exceeds image size {w}x{h}")
    return image[: (h // factor) * factor: factor, : (w // factor) * factor: factor].copy()


def transform_cloud(cloud: PointCloud4D, pose: RigidTransform) -> PointCloud4D:
    pts = cloud.points.copy()
    pts[:, :3] = pose.apply(pts[:, :3])
    return PointCloud4D(pts)


# -- image files --------------------------------------------------------------

def read_depth(path) -> np.ndarray:
    img = Image.open(path)
    a = np.array(img)
    if a.ndim != 2:
        raise ValueError(f"{path}: depth image must be single channel")
    return a.astype(np.uint16 if a.max(initial=0) < 65536 else np.uint32)


def read_intensity(path) -> tuple[np.ndarray, int]:
    """Return pixel values and their bit depth (8 or 16).

    Color images are reduced to ITU-R 601 luma.
    """
    img = Image.open(path)
    if img.mode in ("RGB", "RGBA", "P", "LA", "CMYK"):
        img = img.convert("L")
    a = np.array(img)
    bits = 8 if a.dtype == np.uint8 else 16
    return a, bits


def write_image(path, a: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(a)).save(path)


def load_frame(depth_path, intensity_path, intrinsics: CameraIntrinsics,
               factor: int = 1) -> PointCloud4D:
    depth = read_depth(depth_path)
    inten, bits = read_intensity(intensity_path)
    k = intrinsics
    if factor > 1:
        depth, inten, k = decimate(depth, factor), decimate(inten, factor), k.decimated(factor)
    return image_pair_to_cloud(depth, inten, k, intensity_bits=bits)


# -- PLY ----------------------------------------------------------------------

_PLY_TYPES = {"float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
              "uchar": "u1", "uint8": "u1", "int": "i4", "int32": "i4",
              "uint": "u4", "uint32": "u4", "short": "i2", "ushort": "u2"}


def write_ply(path, xyz: np.ndarray, intensity: np.ndarray | None = None,
              binary: bool = True) -> None:
    """Vertex-only PLY with float properties ``x y z [intensity]``."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    cols = [xyz] if intensity is None else [xyz, np.asarray(intensity, dtype=np.float64)[:, None]]
    data = np.hstack(cols).astype("<f4")
    names = ["x", "y", "z"] + ([] if intensity is None else ["intensity"])
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {len(data)}"]
    header += [f"property float {n}" for n in names]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(data.tobytes())
        else:
            for row in data:
                fh.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))


def read_ply(path) -> dict[str, np.ndarray]:
    """Vertex properties of an ASCII or binary little-endian PLY, by name."""
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    body_start = raw.index(b"\n", end) + 1
    fmt, count, props, in_vertex = None, 0, [], False
    for line in raw[:end].decode("ascii").splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise ValueError(f"{path}: list properties on vertices unsupported")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt == "ascii":
        rows = raw[body_start:].decode("ascii").split("\n")[:count]
        table = np.array([[float(v) for v in r.split()] for r in rows]).reshape(count, len(props))
        return {name: table[:, j] for j, (name, _) in enumerate(props)}
    if fmt != "binary_little_endian":
        raise ValueError(f"{path}: unsupported PLY format {fmt}")
    dt = np.dtype([(n, "<" + t) for n, t in props])
    arr = np.frombuffer(raw, dtype=dt, count=count, offset=body_start)
    return {n: arr[n].astype(np.float64) for n, _ in props}


def read_ply_cloud(path) -> PointCloud4D:
    p = read_ply(path)
    return PointCloud4D(np.column_stack([p["x"], p["y"], p["z"], p["intensity"]]))


def read_ply_xyz(path) -> np.ndarray:
    p = read_ply(path)
    return np.column_stack([p["x"], p["y"], p["z"]])
