import numpy as np
import pytest
from hypothesis import given, strategies as st

from gmmscape.ingest import (CameraIntrinsics, decimate, image_pair_to_cloud, load_frame,
                             project, read_intensity, read_ply, read_ply_cloud, transform_cloud,
                             write_image, write_ply)
from gmmscape.model import PointCloud4D, RigidTransform, compose

K = CameraIntrinsics(fx=500.0, fy=480.0, cx=1.5, cy=1.5, width=4, height=4, depth_scale=1000.0)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(ValueError):
        CameraIntrinsics(1.0, 1.0, 4.0, 1.0, 4, 4)


def test_principal_and_unit_offset_rays():
    k = CameraIntrinsics(fx=2.0, fy=2.0, cx=1.0, cy=1.0, width=4, height=4)
    depth = np.zeros((4, 4), np.uint16)
    inten = np.zeros((4, 4), np.uint8)
    depth[1, 1] = 1000
    depth[1, 3] = 1000
    inten[1, 1] = 255
    pts = image_pair_to_cloud(depth, inten, k).points
    assert pts.tolist() == [[0.0, 0.0, 1.0, 1.0], [1.0, 0.0, 1.0, 0.0]]


def test_ramp_oracle():
    depth = np.full((4, 4), 1000, np.uint16)
    inten = (np.arange(16) * 17).reshape(4, 4).astype(np.uint8)
    pts = image_pair_to_cloud(depth, inten, K).points
    assert pts.shape == (16, 4)
    v, u = np.divmod(np.arange(16), 4)
    assert np.allclose(pts[:, 0], (u - K.cx) / K.fx)
    assert np.allclose(pts[:, 1], (v - K.cy) / K.fy)
    assert np.allclose(pts[:, 3], inten.ravel() / 255)


def test_sixteen_bit_intensity():
    depth = np.full((4, 4), 1000, np.uint16)
    inten = np.full((4, 4), 65535, np.uint16)
    assert np.all(image_pair_to_cloud(depth, inten, K).points[:, 3] == 1.0)


def test_ingest_errors():
    with pytest.raises(ValueError):
        image_pair_to_cloud(np.ones((4, 4), np.uint16), np.ones((3, 4), np.uint8), K)
    with pytest.raises(ValueError):
        image_pair_to_cloud(np.zeros((4, 4), np.uint16), np.ones((4, 4), np.uint8), K)


def test_backproject_project_roundtrip():
    r = np.random.default_rng(0)
    k = CameraIntrinsics(525, 525, 319.5, 239.5, 640, 480)
    depth = r.integers(0, 5000, (480, 640)).astype(np.uint16)
    inten = r.integers(0, 256, (480, 640)).astype(np.uint8)
    pts = image_pair_to_cloud(depth, inten, k).points
    v, u = np.nonzero(depth)
    uv = project(pts[:, :3], k)
    assert np.abs(uv[:, 0] - u).max() < 1e-9
    assert np.abs(uv[:, 1] - v).max() < 1e-9


def test_decimate_examples():
    img = np.arange(640 * 480).reshape(480, 640)
    assert decimate(img, 2).shape == (240, 320)
    assert decimate(img, 4).shape == (120, 160)
    assert np.array_equal(decimate(img, 1), img)
    assert decimate(img, 3)[5, 7] == img[15, 21]
    with pytest.raises(ValueError):
        decimate(img, 0)
    with pytest.raises(ValueError):
        decimate(np.zeros((3, 10)), 4)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(8, 40), st.integers(8, 40))
def test_decimate_composes(a, b, h, w):
    img = np.arange(h * w).reshape(h, w)
    if a * b > min(h, w):
        return
    assert np.array_equal(decimate(img, a * b), decimate(decimate(img, a), b))


def test_decimated_intrinsics_match_image():
    k = CameraIntrinsics(525, 525, 319.5, 239.5, 640, 480)
    k2 = k.decimated(2)
    assert (k2.width, k2.height) == (320, 240)
    # pixel (u, v) of the decimated image is pixel (2u, 2v) of the full image
    depth = np.zeros((480, 640), np.uint16)
    depth[100, 300] = 1500
    inten = np.zeros((480, 640), np.uint8)
    full = image_pair_to_cloud(depth, inten, k).points
    small = image_pair_to_cloud(decimate(depth, 2), decimate(inten, 2), k2).points
    assert np.allclose(full[:, :3], small[:, :3], atol=1e-2)


def _cloud(r, n=40):
    return PointCloud4D(np.column_stack([r.standard_normal((n, 3)), r.uniform(0, 1, n)]))


def test_transform_cloud_examples():
    r = np.random.default_rng(1)
    c = _cloud(r)
    assert np.array_equal(transform_cloud(c, RigidTransform.identity()).points, c.points)
    moved = transform_cloud(c, RigidTransform(np.eye(3), np.array([1.0, 0, 0]))).points
    assert np.allclose(moved[:, 0], c.points[:, 0] + 1)
    assert np.array_equal(moved[:, 1:], c.points[:, 1:])
    T1, T2 = RigidTransform.exp(r.standard_normal(6)), RigidTransform.exp(r.standard_normal(6))
    once = transform_cloud(c, compose(T2, T1)).points
    twice = transform_cloud(transform_cloud(c, T1), T2).points
    assert np.allclose(once, twice, atol=1e-12)


@given(st.integers(0, 10**6))
def test_transform_cloud_preserves_distances(seed):
    r = np.random.default_rng(seed)
    c = _cloud(r, 10)
    T = RigidTransform.exp(3 * r.standard_normal(6))
    a = c.points[:, :3]
    b = transform_cloud(c, T).points[:, :3]
    da = np.linalg.norm(a[:, None] - a[None], axis=-1)
    db = np.linalg.norm(b[:, None] - b[None], axis=-1)
    assert np.abs(da - db).max() < 1e-9


@pytest.mark.parametrize("binary", [True, False])
def test_ply_roundtrip(tmp_path, binary):
    r = np.random.default_rng(2)
    xyz = r.standard_normal((25, 3)).astype(np.float32).astype(np.float64)
    i = r.uniform(0, 1, 25).astype(np.float32).astype(np.float64)
    write_ply(tmp_path / "c.ply", xyz, i, binary=binary)
    back = read_ply_cloud(tmp_path / "c.ply").points
    assert np.array_equal(back[:, :3], xyz)
    assert np.array_equal(back[:, 3], i)
    write_ply(tmp_path / "x.ply", xyz)
    assert set(read_ply(tmp_path / "x.ply")) == {"x", "y", "z"}


def test_image_files_and_luma(tmp_path):
    depth = np.full((4, 4), 1200, np.uint16)
    rgb = np.zeros((4, 4, 3), np.uint8)
    rgb[..., 0] = 255
    write_image(tmp_path / "d.png", depth)
    write_image(tmp_path / "c.png", rgb)
    gray, bits = read_intensity(tmp_path / "c.png")
    assert bits == 8
    assert gray[0, 0] == 76  # 0.299 * 255
    cloud = load_frame(tmp_path / "d.png", tmp_path / "c.png", K)
    assert np.allclose(cloud.points[:, 2], 1.2)
    assert np.allclose(cloud.points[:, 3], 76 / 255)
