"""Pose-graph optimization over absolute SE(3) node poses.

Edge residual: ``r_ij = log(T_ij^-1 T_i^-1 T_j)`` (six-vector, rotation
first), weighted by the edge information matrix. Nodes are updated by left
perturbations ``T_k <- exp(xi_k) T_k``; the gauge is fixed by holding one
node constant. Edge Jacobians use the adjoint of ``T_j^-1`` together with a
first-order inverse right Jacobian of the residual; steps are only accepted
when the exact cost decreases, so the approximation affects speed alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .lie import hat
from .model import RigidTransform


class DisconnectedGraphError(ValueError):
    pass


@dataclass(frozen=True)
class Edge:
    i: int
    j: int
    relative: RigidTransform
    information: np.ndarray = field(default_factory=lambda: np.eye(6))

    def __post_init__(self):
        info = np.asarray(self.information, dtype=np.float64)
        if info.shape != (6, 6):
            raise ValueError("edge information must be 6x6")
        if not np.allclose(info, info.T, atol=1e-12):
            raise ValueError("edge information must be symmetric")
        if np.linalg.eigvalsh(info).min() < -1e-12 * max(1.0, np.abs(info).max()):
            raise ValueError("edge information must be positive semidefinite")
        object.__setattr__(self, "information", info)


@dataclass(frozen=True)
class PoseGraph:
    nodes: tuple[RigidTransform, ...]
    edges: tuple[Edge, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        n = len(self.nodes)
        for e in self.edges:
            if not (0 <= e.i < n and 0 <= e.j < n):
                raise ValueError(f"edge ({e.i}, {e.j}) references a missing node")

    def is_connected(self) -> bool:
        n = len(self.nodes)
        if n <= 1:
            return True
        rows = [e.i for e in self.edges]
        cols = [e.j for e in self.edges]
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        count, _ = connected_components(adj, directed=False)
        return count == 1


@dataclass(frozen=True)
class PoseGraphResult:
    graph: PoseGraph
    final_cost: float
    iterations: int
    converged: bool


def edge_residual(Ti: RigidTransform, Tj: RigidTransform, Tij: RigidTransform) -> np.ndarray:
    return (Tij.inverse() @ Ti.inverse() @ Tj).log()


def graph_cost(graph: PoseGraph) -> float:
    total = []
    for e in graph.edges:
        r = edge_residual(graph.nodes[e.i], graph.nodes[e.j], e.relative)
        total.append(float(r @ e.information @ r))
    return math.fsum(total)


def _perturbed(xi, T: RigidTransform) -> RigidTransform:
    return RigidTransform.exp(xi) @ T


def adjoint(T: RigidTransform) -> np.ndarray:
    """6x6 adjoint for tangent order ``(omega, v)``."""
    R = T.rotation
    A = np.zeros((6, 6))
    A[:3, :3] = R
    A[3:, 3:] = R
    A[3:, :3] = hat(T.translation) @ R
    return A


def _edge_jacobian(Ti, Tj, r) -> np.ndarray:
    """Jacobian of the residual w.r.t. ``(xi_i, xi_j)``; ``r`` is the residual."""
    ad = np.zeros((6, 6))
    ad[:3, :3] = hat(r[:3])
    ad[3:, 3:] = hat(r[:3])
    ad[3:, :3] = hat(r[3:])
    Jj = (np.eye(6) + 0.5 * ad) @ adjoint(Tj.inverse())
    return np.hstack([-Jj, Jj])


def _edge_jacobian_numeric(Ti, Tj, Tij, h=1e-6) -> np.ndarray:
    J = np.empty((6, 12))
    for k in range(12):
        xi = np.zeros(6)
        xi[k % 6] = h
        if k < 6:
            rp = edge_residual(_perturbed(xi, Ti), Tj, Tij)
            rm = edge_residual(_perturbed(-xi, Ti), Tj, Tij)
        else:
            rp = edge_residual(Ti, _perturbed(xi, Tj), Tij)
            rm = edge_residual(Ti, _perturbed(-xi, Tj), Tij)
        J[:, k] = (rp - rm) / (2 * h)
    return J


def pose_graph_optimize(graph: PoseGraph, fixed_node: int = 0, max_iters: int = 100,
                        tol: float = 1e-12) -> PoseGraphResult:
    """Levenberg-Marquardt on the stacked edge residuals.

    Only cost-decreasing steps are accepted, so the cost never increases.
    """
    n = len(graph.nodes)
    if not 0 <= fixed_node < n:
        raise ValueError(f"fixed_node {fixed_node} out of range")
    if not graph.is_connected():
        raise DisconnectedGraphError("pose graph is not connected")
    free = [k for k in range(n) if k != fixed_node]
    col = {k: 6 * c for c, k in enumerate(free)}
    nodes = list(graph.nodes)
    cost = graph_cost(graph)
    lam = 1e-4
    converged = cost <= tol
    iters = 0
    while not converged and iters < max_iters:
        H = np.zeros((6 * len(free), 6 * len(free)))
        g = np.zeros(6 * len(free))
        for e in graph.edges:
            r = edge_residual(nodes[e.i], nodes[e.j], e.relative)
            J = _edge_jacobian(nodes[e.i], nodes[e.j], r)
            blocks = [(e.i, J[:, :6]), (e.j, J[:, 6:])]
            for a, Ja in blocks:
                if a == fixed_node:
                    continue
                g[col[a]:col[a] + 6] += Ja.T @ e.information @ r
                for b, Jb in blocks:
                    if b == fixed_node:
                        continue
                    H[col[a]:col[a] + 6, col[b]:col[b] + 6] += Ja.T @ e.information @ Jb
        if np.linalg.norm(g) <= tol:
            converged = True
            break
        diag = np.diag(H).copy()
        diag[diag <= 0] = 1.0
        accepted = False
        while lam < 1e10:
            try:
                step = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = list(nodes)
            for k in free:
                trial[k] = _perturbed(step[col[k]:col[k] + 6], nodes[k])
            new_cost = graph_cost(PoseGraph(trial, graph.edges))
            if new_cost < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no decrease possible at machine precision: a minimum
            converged = True
            break
        iters += 1
        rel = (cost - new_cost) / max(cost, 1e-300)
        nodes, cost = trial, new_cost
        lam = max(lam / 10.0, 1e-12)
        if cost <= tol or rel < 1e-12 or np.linalg.norm(step) < 1e-12:
            converged = True
    return PoseGraphResult(PoseGraph(nodes, graph.edges), cost, iters, converged)


# JSON I/O

def _pose_to_json(T: RigidTransform) -> dict:
    return {"quaternion": T.quaternion().tolist(), "translation": T.translation.tolist()}


def _pose_from_json(d: dict) -> RigidTransform:
    return RigidTransform.from_quaternion(d["quaternion"], d["translation"])


def graph_to_json(graph: PoseGraph) -> dict:
    return {
        "nodes": [_pose_to_json(T) for T in graph.nodes],
        "edges": [{"i": e.i, "j": e.j, "relative": _pose_to_json(e.relative),
                   "information": e.information.tolist()} for e in graph.edges],
    }


def graph_from_json(d: dict) -> PoseGraph:
    nodes = [_pose_from_json(n) for n in d["nodes"]]
    edges = [Edge(int(e["i"]), int(e["j"]), _pose_from_json(e["relative"]),
                  np.asarray(e.get("information", np.eye(6)), dtype=np.float64))
             for e in d["edges"]]
    return PoseGraph(nodes, edges)


def save_graph(graph: PoseGraph, path) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_json(graph), fh, indent=1)


def load_graph(path) -> PoseGraph:
    with open(path) as fh:
        return graph_from_json(json.load(fh))
