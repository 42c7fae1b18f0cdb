"""Timing sweep of the full fit over bandwidths and decimation factors."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from . import sogmm
from .ingest import CameraIntrinsics, decimate, image_pair_to_cloud

CSV_COLUMNS = ("image_size", "bandwidth", "mean_seconds", "std_seconds", "M")


@dataclass(frozen=True)
class BenchConfig:
    bandwidth_count: int = 10
    bandwidth_min: float = 0.0135
    bandwidth_max: float = 0.0300
    factors: tuple[int, ...] = (2, 3, 4)
    repetitions: int = 10
    out_csv: str = "bench.csv"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(int(f) for f in self.factors))
        if self.bandwidth_count < 1:
            raise ValueError("bandwidth_count must be at least 1")
        if not self.bandwidth_min < self.bandwidth_max and self.bandwidth_count > 1:
            raise ValueError("bandwidth_min must be below bandwidth_max")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if not self.factors or min(self.factors) < 1:
            raise ValueError("decimation factors must be positive")

    def bandwidths(self) -> np.ndarray:
        if self.bandwidth_count == 1:
            return np.array([self.bandwidth_min])
        return np.linspace(self.bandwidth_min, self.bandwidth_max, self.bandwidth_count)


@dataclass(frozen=True)
class BenchRow:
    image_size: str
    bandwidth: float
    mean_seconds: float
    std_seconds: float
    M: int
    factor: int

    def csv_values(self) -> list:
        return [self.image_size, f"{self.bandwidth:.6g}", f"{self.mean_seconds:.6f}",
                f"{self.std_seconds:.6f}", self.M]


def time_fit(cloud, bandwidth: float, repetitions: int, seed: int) -> tuple[float, float, int]:
    """Mean and population standard deviation of wall-clock fit time."""
    times, M = [], 0
    for _ in range(repetitions):
        t0 = time.perf_counter()
        res = sogmm.fit(cloud, bandwidth, sogmm.EmParams(seed=seed))
        times.append(time.perf_counter() - t0)
        M = res.model.n_components
    return float(np.mean(times)), float(np.std(times, ddof=0)), M


def run_bench(depth: np.ndarray, intensity: np.ndarray, intrinsics: CameraIntrinsics,
              config: BenchConfig, progress=None) -> list[BenchRow]:
    rows = []
    for f in config.factors:
        d, i = decimate(depth, f), decimate(intensity, f)
        k = intrinsics.decimated(f)
        cloud = image_pair_to_cloud(d, i, k)
        size = f"{d.shape[1]}x{d.shape[0]}"
        for bw in config.bandwidths():
            mean, std, M = time_fit(cloud, float(bw), config.repetitions, config.seed)
            row = BenchRow(size, float(bw), mean, std, M, f)
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows


def write_csv(rows: list[BenchRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.csv_values())


def monotonicity_violations(rows: list[BenchRow]) -> list[tuple[float, int, int]]:
    """``(bandwidth, factor_a, factor_b)`` wherever a larger decimation factor
    ``b > a`` took longer on average than ``a`` at the same bandwidth."""
    out = []
    by_bw: dict[float, list[BenchRow]] = {}
    for r in rows:
        by_bw.setdefault(r.bandwidth, []).append(r)
    for bw, group in by_bw.items():
        group = sorted(group, key=lambda r: r.factor)
        for a, b in zip(group[:-1], group[1:]):
            if b.mean_seconds > a.mean_seconds:
                out.append((bw, a.factor, b.factor))
    return out
