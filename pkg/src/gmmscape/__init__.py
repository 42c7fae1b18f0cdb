"""4D (x, y, z, intensity) Gaussian mixture mapping: fitting, sampling,
conditional intensity, registration, pose graphs and occupancy grids."""

from .inference import color_conditional, joint_dist_sample
from .model import Gmm4, PointCloud4D, RigidTransform, load_gmm, memory_footprint, save_gmm
from .occupancy import GridParams, OccupancyGrid3D
from .posegraph import Edge, PoseGraph, pose_graph_optimize
from .registration import (anisotropic_registration, isoplanar_hybrid_registration,
                           isoplanar_registration, l2_cost)
from .sogmm import SOGMM, EmParams, GbmsParams, fit, fit_k

__all__ = [
    "Gmm4", "PointCloud4D", "RigidTransform", "load_gmm", "save_gmm", "memory_footprint",
    "SOGMM", "EmParams", "GbmsParams", "fit", "fit_k",
    "joint_dist_sample", "color_conditional",
    "l2_cost", "anisotropic_registration", "isoplanar_registration",
    "isoplanar_hybrid_registration",
    "Edge", "PoseGraph", "pose_graph_optimize",
    "GridParams", "OccupancyGrid3D",
]
