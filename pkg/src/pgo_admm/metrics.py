"""Estimate quality: relative error, NRMSE and per-edge losses.

Pose graphs are only determined up to a global rigid motion, so estimates
are first mapped into the truth frame by anchoring vertex 0.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import quat
from .graph_io import PoseGraph, PoseSet


@dataclass
class EvalReport:
    rel_err: float
    nrmse: float
    loss_theta: Optional[float] = None
    loss_q: Optional[float] = None
    loss_t: Optional[float] = None

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def gauge_align(est: PoseSet, truth: PoseSet) -> PoseSet:
    """Rigidly move ``est`` so its vertex 0 coincides with truth vertex 0.

    Quaternion signs are then flipped per vertex to match the truth.
    """
    if len(est) != len(truth):
        raise ValueError(f"estimate has {len(est)} poses, truth has {len(truth)}")
    if len(est) == 0:
        return est.copy()
    qg = quat.mul(truth.q[0], quat.conj(est.q[0]))
    q = quat.mul(qg, est.q)
    t = quat.rotate(qg, est.t - est.t[0]) + truth.t[0]
    flip = np.sum(q * truth.q, axis=1) < 0
    q[flip] *= -1.0
    return PoseSet(q, t)


def _error_sum(est: PoseSet, truth: PoseSet) -> float:
    if len(est) != len(truth):
        raise ValueError(f"estimate has {len(est)} poses, truth has {len(truth)}")
    return float(np.linalg.norm(est.q - truth.q) + np.linalg.norm(est.t - truth.t))


def rel_err(est: PoseSet, truth: PoseSet) -> float:
    """``(|q - q0| + |t - t0|) / (|q0| + |t0|)`` on aligned inputs."""
    den = np.linalg.norm(truth.q) + np.linalg.norm(truth.t)
    if den == 0:
        raise ValueError("truth has zero norm")
    return _error_sum(est, truth) / den


def nrmse(est: PoseSet, truth: PoseSet) -> float:
    """Error sum over ``(max(t0) - min(t0)) sqrt(n)``, range over all coordinates."""
    span = float(truth.t.max() - truth.t.min()) if len(truth) else 0.0
    if span == 0:
        raise ValueError("truth translations have zero range")
    return _error_sum(est, truth) / (span * np.sqrt(len(truth)))


def edge_errors(est: PoseSet, graph: PoseGraph) -> tuple[np.ndarray, np.ndarray]:
    """Per-edge rotation error (degrees) and translation residual vectors."""
    src, dst = graph.src, graph.dst
    rel = quat.mul(quat.conj(est.q[src]), est.q[dst])
    theta = np.degrees(quat.dist_angle(rel, graph.q))
    dt = quat.rotate(quat.conj(est.q[src]), est.t[dst] - est.t[src]) - graph.t
    return theta, dt


def edge_losses(est: PoseSet, graph: PoseGraph) -> tuple[float, float, float]:
    """``(sum theta^2, sum (theta/2)^2, sum |dt|^2)`` with theta in degrees."""
    if len(est) != graph.n:
        raise ValueError("estimate size does not match the graph")
    theta, dt = edge_errors(est, graph)
    return float(np.sum(theta**2)), float(np.sum((theta / 2) ** 2)), float(np.sum(dt**2))


def evaluate(est: PoseSet, truth: PoseSet, graph: Optional[PoseGraph] = None, align: bool = True) -> EvalReport:
    aligned = gauge_align(est, truth) if align else est
    report = EvalReport(rel_err(aligned, truth), nrmse(aligned, truth))
    if graph is not None:
        report.loss_theta, report.loss_q, report.loss_t = edge_losses(est, graph)
    return report
