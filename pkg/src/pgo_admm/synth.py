"""Synthetic pose graphs: a circular ring and a cube lattice walk.

Relative measurements follow ``t_ij = R_i^T (t_j - t_i) + eps_t`` with
Gaussian ``eps_t`` and ``q_ij = q_i^* q_j q_eps`` with ``q_eps`` drawn from a
von Mises-Fisher distribution on S^3 centred at the identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from . import quat
from .graph_io import PoseGraph, PoseSet

KAPPA_MODES = ("matched", "literal")


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement noise.

    ``kappa_mode="matched"`` uses ``kappa = 2 / sigma_r**2`` so the tangent
    components of the rotation noise have standard deviation
    ``sigma_r / sqrt(2)``; ``"literal"`` uses ``kappa = sigma_r**2 / 2``.
    """

    sigma_t: float = 0.01
    sigma_r: float = 0.01
    kappa_mode: str = "matched"
    seed: int = 0
    enabled: bool = True

    def __post_init__(self):
        if self.sigma_t < 0:
            raise ValueError("sigma_t must be >= 0")
        if self.sigma_r <= 0:
            raise ValueError("sigma_r must be > 0")
        if self.kappa_mode not in KAPPA_MODES:
            raise ValueError(f"kappa_mode must be one of {KAPPA_MODES}")

    @property
    def kappa(self) -> float:
        if self.kappa_mode == "matched":
            return 2.0 / self.sigma_r**2
        return 0.5 * self.sigma_r**2


@dataclass(frozen=True)
class CubeSpec:
    n_hat: int = 3
    p_cube: float = 0.3

    def __post_init__(self):
        if self.n_hat < 2:
            raise ValueError("n_hat must be >= 2")
        if not 0.0 <= self.p_cube <= 1.0:
            raise ValueError("p_cube must lie in [0, 1]")

    @property
    def expected_edges(self) -> float:
        k = self.n_hat
        return 2 * (2 * k**3 - 3 * k**2 + 1) * self.p_cube + k**3 - 1


def vmf_mean_resultant(kappa: float, dim: int = 4) -> float:
    """``E[mu^T x]`` for vMF on S^{dim-1}: ``I_{d/2}(kappa) / I_{d/2-1}(kappa)``."""
    if kappa == 0:
        return 0.0
    return float(special.ive(dim / 2, kappa) / special.ive(dim / 2 - 1, kappa))


def _sample_vmf_cos(kappa, size, rng, dim):
    # Wood (1994) rejection sampler for w = mu^T x
    if kappa == 0:
        return 1.0 - 2.0 * rng.beta((dim - 1) / 2, (dim - 1) / 2, size=size)
    d1 = dim - 1
    b = d1 / (2.0 * kappa + np.sqrt(4.0 * kappa**2 + d1**2))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + d1 * np.log(1.0 - x0**2)
    out = np.empty(size)
    filled = 0
    while filled < size:
        k = size - filled
        z = rng.beta(d1 / 2, d1 / 2, size=k)
        u = rng.uniform(size=k)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        ok = kappa * w + d1 * np.log1p(-x0 * w) - c >= np.log(u)
        acc = w[ok]
        out[filled : filled + len(acc)] = acc
        filled += len(acc)
    return out


def sample_vmf(mu, kappa: float, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Draw from vMF(mu, kappa) on the unit sphere of ``len(mu)`` dimensions.

    Returns shape ``(len(mu),)`` when ``size`` is None, else ``(size, len(mu))``.
    """
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    mu = quat.as_unit(mu) if len(mu) == 4 else np.asarray(mu, float) / np.linalg.norm(mu)
    dim = len(mu)
    k = 1 if size is None else size
    w = _sample_vmf_cos(kappa, k, rng, dim)
    v = rng.standard_normal((k, dim))
    v -= (v @ mu)[:, None] * mu
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    x = w[:, None] * mu + np.sqrt(np.clip(1.0 - w**2, 0.0, None))[:, None] * v
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x[0] if size is None else x


def sample_vmf_s3(mu, kappa: float, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """vMF sample on S^3 (unit quaternions)."""
    if len(mu) != 4:
        raise ValueError("mu must be a quaternion")
    return sample_vmf(mu, kappa, rng, size)


def measure(truth: PoseSet, src, dst, noise: NoiseSpec, rng: np.random.Generator) -> PoseGraph:
    """Noisy relative measurements of ``truth`` along edges ``src -> dst``."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    m = len(src)
    qi, qj = truth.q[src], truth.q[dst]
    t_rel = quat.rotate(quat.conj(qi), truth.t[dst] - truth.t[src])
    q_rel = quat.mul(quat.conj(qi), qj)
    if noise.enabled and m:
        t_rel = t_rel + noise.sigma_t * rng.standard_normal((m, 3))
        q_eps = sample_vmf_s3(quat.IDENTITY, noise.kappa, rng, size=m)
        q_rel = quat.mul(q_rel, q_eps)
    return PoseGraph(len(truth), src, dst, quat.as_unit(q_rel) if m else q_rel, t_rel)


def ring_truth(n: int, radius: float = 2.0) -> PoseSet:
    """Poses on a circle in the z=0 plane starting at the origin, heading tangent."""
    phi = 2.0 * np.pi * np.arange(n) / n
    t = np.stack([radius * np.sin(phi), radius * (1.0 - np.cos(phi)), np.zeros(n)], axis=1)
    q = quat.from_axis_angle(np.tile([0.0, 0.0, 1.0], (n, 1)), phi)
    return PoseSet(q, t)


def gen_ring(n: int, noise: NoiseSpec) -> tuple[PoseSet, PoseGraph]:
    """Single loop of ``n`` odometric edges ``(i, i+1 mod n)`` on a radius-2 circle."""
    if n < 3:
        raise ValueError("a ring needs at least 3 vertices")
    truth = ring_truth(n)
    src = np.arange(n)
    dst = (src + 1) % n
    rng = np.random.default_rng(noise.seed)
    return truth, measure(truth, src, dst, noise, rng)


def _snake_order(k: int) -> list:
    seq = []
    for z in range(k):
        ys = range(k) if z % 2 == 0 else range(k - 1, -1, -1)
        for y in ys:
            xs = range(k) if (len(seq) // k) % 2 == 0 else range(k - 1, -1, -1)
            seq.extend((x, y, z) for x in xs)
    return seq


def _heading(d) -> np.ndarray:
    ex = np.array([1.0, 0.0, 0.0])
    d = d / np.linalg.norm(d)
    c = float(ex @ d)
    if c < -1.0 + 1e-12:
        return quat.from_axis_angle([0.0, 0.0, 1.0], np.pi)
    axis = np.cross(ex, d)
    if np.linalg.norm(axis) < 1e-12:
        return quat.IDENTITY.copy()
    return quat.from_axis_angle(axis, np.arccos(np.clip(c, -1.0, 1.0)))


def cube_truth(n_hat: int, side: float = 2.0):
    """Lattice poses along a boustrophedon walk; also returns lattice coordinates."""
    seq = _snake_order(n_hat)
    lattice = np.array(seq, dtype=np.int64)
    t = lattice * (side / (n_hat - 1))
    n = len(seq)
    q = np.empty((n, 4))
    for i in range(n):
        d = t[i + 1] - t[i] if i + 1 < n else t[i] - t[i - 1]
        q[i] = _heading(d)
    return PoseSet(q, t), lattice


def gen_cube(spec: CubeSpec, noise: NoiseSpec) -> tuple[PoseSet, PoseGraph]:
    """``n_hat**3`` lattice vertices spanning a 2x2x2 volume.

    Edges are the odometric walk plus loop closures: every lattice-adjacent
    pair not joined by the walk gets two independent directed trials, each
    kept with probability ``p_cube``.
    """
    truth, lattice = cube_truth(spec.n_hat)
    n = len(truth)
    index = {tuple(c): i for i, c in enumerate(lattice.tolist())}
    src = list(range(n - 1))
    dst = list(range(1, n))
    candidates = []
    for a, c in enumerate(lattice.tolist()):
        for axis in range(3):
            nb = list(c)
            nb[axis] += 1
            b = index.get(tuple(nb))
            if b is not None and abs(a - b) != 1:
                lo, hi = min(a, b), max(a, b)
                candidates.append((lo, hi))
    candidates.sort()
    rng = np.random.default_rng(noise.seed)
    keep = rng.uniform(size=(len(candidates), 2)) < spec.p_cube
    for (lo, hi), (fwd, bwd) in zip(candidates, keep):
        if fwd:
            src.append(lo)
            dst.append(hi)
        if bwd:
            src.append(hi)
            dst.append(lo)
    return truth, measure(truth, src, dst, noise, rng)


def dead_reckoning(graph: PoseGraph) -> PoseSet:
    """Compose measurements along a breadth-first spanning tree from vertex 0.

    Gives the kind of initial guess stored in g2o datasets.  Vertices not
    reachable from 0 keep the identity pose.
    """
    n = graph.n
    q = np.tile(quat.IDENTITY, (n, 1))
    t = np.zeros((n, 3))
    seen = np.zeros(n, dtype=bool)
    if n == 0:
        return PoseSet(q, t)
    seen[0] = True
    frontier = [0]
    while frontier:
        nxt = []
        for v in frontier:
            for k in graph.out_edges[v].tolist():
                w = int(graph.dst[k])
                if not seen[w]:
                    q[w] = quat.mul(q[v], graph.q[k])
                    t[w] = t[v] + quat.rotate(q[v], graph.t[k])
                    seen[w] = True
                    nxt.append(w)
            for k in graph.in_edges[v].tolist():
                w = int(graph.src[k])
                if not seen[w]:
                    q[w] = quat.mul(q[v], quat.conj(graph.q[k]))
                    t[w] = t[v] - quat.rotate(q[w], graph.t[k])
                    seen[w] = True
                    nxt.append(w)
        frontier = nxt
    return PoseSet(q, t)
