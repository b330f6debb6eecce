"""Parallelizable Riemannian ADMM for the split pose-graph model.

The model duplicates every rotation into a unit quaternion ``p_i`` and an
unconstrained 4-vector ``q_i``, and every translation into ``t_i`` and
``s_i``::

    f = sum_e | t~_j - s~_i - q_i t~_ij p_i^* |^2_{S1}
    g = sum_e | p_j^* q_i q_ij - 1 |^2_{S2}
    s.t. p_i = q_i, t_i = s_i, |p_i| = 1

With the other blocks frozen each block separates over vertices, so every
update is an independent 4x4 (or 3x3) solve per vertex.  Edge terms are
accumulated in global edge order and the per-vertex solves write disjoint
slots, so the result does not depend on the thread count.
"""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import factorized

from . import quat
from .graph_io import PoseGraph, PoseSet
from .sphereqp import NumericalFailure, SphereQP, is_scalar_matrix, solve_eig

ONE = quat.ONE
_EYE4 = np.eye(4)
_EYE3 = np.eye(3)


@dataclass(frozen=True)
class SolverConfig:
    """Penalties, proximal weights, weights and stopping rule.

    ``beta1``/``beta2`` left as None are filled in by :func:`resolve_beta`.
    ``sigma1``/``sigma2`` default to ``diag(c, I3)`` and ``I4``.  With
    ``info_weights`` the per-edge information matrices scale ``sigma1`` by
    the mean of their translational diagonal and ``sigma2`` by the mean of
    their rotational diagonal.
    """

    beta1: Optional[float] = None
    beta2: Optional[float] = None
    tau: float = 1.4
    h1: float = 1.0
    h2: float = 1e-3
    h3: float = 1e-3
    h4: float = 1e-3
    sigma1: Optional[np.ndarray] = None
    sigma2: Optional[np.ndarray] = None
    c: float = 1.0
    tol: float = 1e-4
    max_iter: int = 300
    threads: int = 1
    seed: int = 0
    info_weights: bool = False

    def __post_init__(self):
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 < self.tau < 2.0:
            raise ValueError("tau must lie in (0, 2)")
        for name in ("h1", "h2", "h3", "h4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.c > 0:
            raise ValueError("c must be > 0")
        if self.tol <= 0 or self.max_iter < 1 or self.threads < 1:
            raise ValueError("tol > 0, max_iter >= 1 and threads >= 1 are required")
        s1 = np.diag([self.c, 1.0, 1.0, 1.0]) if self.sigma1 is None else np.asarray(self.sigma1, float)
        s2 = _EYE4.copy() if self.sigma2 is None else np.asarray(self.sigma2, float)
        for name, S in (("sigma1", s1), ("sigma2", s2)):
            if S.shape != (4, 4) or not np.allclose(S, S.T, atol=1e-12):
                raise ValueError(f"{name} must be a symmetric 4x4 matrix")
            if np.linalg.eigvalsh(S)[0] < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        object.__setattr__(self, "sigma1", s1)
        object.__setattr__(self, "sigma2", s2)

    def replace(self, **kw) -> "SolverConfig":
        return dataclasses.replace(self, **kw)

    @property
    def scalar_sigma(self) -> bool:
        return is_scalar_matrix(self.sigma1) and is_scalar_matrix(self.sigma2)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sigma1"] = np.asarray(self.sigma1).tolist()
        d["sigma2"] = np.asarray(self.sigma2).tolist()
        return d


@dataclass
class SolverState:
    """Iterate blocks plus the previous iterate (``prev``) for diagnostics."""

    p: np.ndarray
    q: np.ndarray
    t: np.ndarray
    s: np.ndarray
    lam: np.ndarray
    z: np.ndarray
    k: int = 0
    prev: Optional["SolverState"] = field(default=None, repr=False)

    @classmethod
    def from_poses(cls, poses: PoseSet) -> "SolverState":
        n = len(poses)
        return cls(
            poses.q.copy(), poses.q.copy(), poses.t.copy(), poses.t.copy(),
            np.zeros((n, 4)), np.zeros((n, 3)),
        )

    def snapshot(self) -> "SolverState":
        return SolverState(
            self.p.copy(), self.q.copy(), self.t.copy(), self.s.copy(),
            self.lam.copy(), self.z.copy(), self.k,
        )

    def poses(self) -> PoseSet:
        return PoseSet(self.p, self.t)


class IterRecord(NamedTuple):
    k: int
    e: float
    psi: float
    viol_pq: float
    viol_ts: float
    dlambda: float
    dz: float
    ms: float


TRACE_HEADER = "k,e,psi,viol_pq,viol_ts,dlambda,dz,ms"


@dataclass
class IterTrace:
    records: list = field(default_factory=list)

    def append(self, rec: IterRecord) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i) -> IterRecord:
        return self.records[i]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, timing: bool = True) -> str:
        rows = [TRACE_HEADER]
        for r in self.records:
            ms = r.ms if timing else 0.0
            vals = [repr(float(v)) for v in (r.e, r.psi, r.viol_pq, r.viol_ts, r.dlambda, r.dz, ms)]
            rows.append(",".join([str(r.k)] + vals))
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class LipschitzEstimates:
    L_f: float
    L_g: float
    L_g2: float
    beta_prime: float
    beta_double_prime: float
    alpha1: float
    alpha2: float
    alpha3: float

    @property
    def beta_lower(self) -> float:
        return max(self.beta_prime, self.beta_double_prime)


# ---------------------------------------------------------------------------
# edge-level helpers


@dataclass(frozen=True)
class _Weights:
    S1: np.ndarray  # (m, 4, 4)
    S2: np.ndarray  # (m, 4, 4)


def edge_weights(graph: PoseGraph, cfg: SolverConfig) -> _Weights:
    m = graph.m
    w1 = np.ones(m)
    w2 = np.ones(m)
    if cfg.info_weights and graph.info is not None:
        diag = np.diagonal(graph.info, axis1=1, axis2=2)
        w1 = diag[:, :3].mean(axis=1)
        w2 = diag[:, 3:].mean(axis=1)
    return _Weights(w1[:, None, None] * cfg.sigma1, w2[:, None, None] * cfg.sigma2)


def _tilde(graph: PoseGraph) -> np.ndarray:
    return quat.pure(graph.t)


def edge_residuals(p, q, t, s, graph: PoseGraph):
    """Per-edge residuals ``r`` (m, 4) of f and ``u`` (m, 4) of g."""
    src, dst = graph.src, graph.dst
    r = quat.pure(t[dst] - s[src]) - quat.mul(quat.mul(q[src], _tilde(graph)), quat.conj(p[src]))
    u = quat.mul(quat.mul(quat.conj(p[dst]), q[src]), graph.q) - ONE
    return r, u


def objective_fg(p, q, t, s, graph: PoseGraph, weights: _Weights) -> tuple[float, float]:
    r, u = edge_residuals(p, q, t, s, graph)
    f = float(np.einsum("ei,eij,ej->", r, weights.S1, r))
    g = float(np.einsum("ei,eij,ej->", u, weights.S2, u))
    return f, g


def augmented_lagrangian(state: SolverState, graph: PoseGraph, cfg: SolverConfig, weights=None) -> float:
    """``f + g - <lam, p-q> + b1/2|p-q|^2 - <z, t-s> + b2/2|t-s|^2``."""
    weights = weights or edge_weights(graph, cfg)
    f, g = objective_fg(state.p, state.q, state.t, state.s, graph, weights)
    dpq = state.p - state.q
    dts = state.t - state.s
    return (
        f + g
        - float(np.sum(state.lam * dpq)) + 0.5 * cfg.beta1 * float(np.sum(dpq**2))
        - float(np.sum(state.z * dts)) + 0.5 * cfg.beta2 * float(np.sum(dts**2))
    )


def pose_objective(poses: PoseSet, graph: PoseGraph, cfg: Optional[SolverConfig] = None) -> float:
    """Unsplit objective at ``p = q``, ``t = s``."""
    cfg = cfg or SolverConfig()
    f, g = objective_fg(poses.q, poses.q, poses.t, poses.t, graph, edge_weights(graph, cfg))
    return f + g


def _accumulate(n: int, index: np.ndarray, values: np.ndarray, base: np.ndarray) -> np.ndarray:
    # np.add.at applies updates in index order, so sums are reproducible
    out = np.broadcast_to(base, (n,) + values.shape[1:]).copy()
    np.add.at(out, index, values)
    return out


def _chunks(n: int, threads: int):
    k = max(1, min(threads, n))
    bounds = np.linspace(0, n, k + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _parallel(n: int, threads: int, work: Callable[[int, int], None]) -> None:
    chunks = _chunks(n, threads)
    if len(chunks) <= 1:
        for lo, hi in chunks:
            work(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=len(chunks)) as ex:
        for fut in [ex.submit(work, lo, hi) for lo, hi in chunks]:
            fut.result()


def _batched_solve(A: np.ndarray, b: np.ndarray, threads: int) -> np.ndarray:
    out = np.empty_like(b)

    def work(lo, hi):
        out[lo:hi] = np.linalg.solve(A[lo:hi], b[lo:hi, :, None])[..., 0]

    _parallel(len(b), threads, work)
    return out


# ---------------------------------------------------------------------------
# coefficient assembly


def assemble_p(state: SolverState, graph: PoseGraph, cfg: SolverConfig, weights=None):
    """``(A1, b1)`` of shape (n,4,4), (n,4): ``p_i = argmin p^T A p / 2 + b^T p``."""
    weights = weights or edge_weights(graph, cfg)
    src, dst = graph.src, graph.dst
    G1 = quat.m_matrix(state.q[src]) @ quat.m_matrix(_tilde(graph)) @ quat.D
    d = quat.pure(state.t[dst] - state.s[src])
    G1tS = np.swapaxes(G1, 1, 2) @ weights.S1
    # g term seen from the head vertex: p_i^* (q_l q_li) = W(q_li) W(q_l) D p_i
    G2 = quat.w_matrix(graph.q) @ quat.w_matrix(state.q[src]) @ quat.D
    G2tS = np.swapaxes(G2, 1, 2) @ weights.S2
    A = _accumulate(graph.n, src, 2.0 * G1tS @ G1, (cfg.beta1 + cfg.h1) * _EYE4)
    np.add.at(A, dst, 2.0 * G2tS @ G2)
    b = _accumulate(graph.n, src, -2.0 * np.einsum("eij,ej->ei", G1tS, d), np.zeros(4))
    np.add.at(b, dst, -2.0 * G2tS[..., 0])
    b -= cfg.beta1 * state.q + state.lam + cfg.h1 * state.p
    return A, b


def assemble_q(state: SolverState, graph: PoseGraph, cfg: SolverConfig, weights=None):
    """``(A2, b2)`` with ``q_i = A2^{-1} b2``; uses the already updated ``p``."""
    weights = weights or edge_weights(graph, cfg)
    src, dst = graph.src, graph.dst
    G3 = np.swapaxes(quat.w_matrix(state.p[src]), 1, 2) @ quat.w_matrix(_tilde(graph))
    G4 = quat.w_matrix(graph.q) @ np.swapaxes(quat.m_matrix(state.p[dst]), 1, 2)
    d = quat.pure(state.t[dst] - state.s[src])
    G3tS = np.swapaxes(G3, 1, 2) @ weights.S1
    G4tS = np.swapaxes(G4, 1, 2) @ weights.S2
    A = _accumulate(graph.n, src, 2.0 * (G3tS @ G3 + G4tS @ G4), (cfg.beta1 + cfg.h2) * _EYE4)
    rhs = 2.0 * (np.einsum("eij,ej->ei", G3tS, d) + G4tS[..., 0])
    b = _accumulate(graph.n, src, rhs, np.zeros(4))
    # state.q is still q^k here, the proximal centre
    b += cfg.beta1 * state.p - state.lam + cfg.h2 * state.q
    return A, b


def _edge_c(state: SolverState, graph: PoseGraph):
    # c~_e = q_i t~_ij p_i^* for e = (i, j), with the freshly updated p, q
    src = graph.src
    c = quat.mul(quat.mul(state.q[src], _tilde(graph)), quat.conj(state.p[src]))
    return c[:, 1:], -c[:, 0]


def assemble_t(state: SolverState, graph: PoseGraph, cfg: SolverConfig, weights=None):
    """``(A3, b3)`` over in-edges ``(l, i)``; ``t_i = A3^{-1} b3``."""
    weights = weights or edge_weights(graph, cfg)
    src, dst = graph.src, graph.dst
    Sh = weights.S1[:, 1:, 1:]
    s21 = weights.S1[:, 1:, 0]
    c, r0 = _edge_c(state, graph)
    A = _accumulate(graph.n, dst, 2.0 * Sh, (cfg.beta2 + cfg.h3) * _EYE3)
    rhs = 2.0 * (np.einsum("eij,ej->ei", Sh, state.s[src] + c) - s21 * r0[:, None])
    b = _accumulate(graph.n, dst, rhs, np.zeros(3))
    b += cfg.beta2 * state.s + state.z + cfg.h3 * state.t
    return A, b


def assemble_s(state: SolverState, graph: PoseGraph, cfg: SolverConfig, weights=None):
    """``(A4, b4)`` over out-edges ``(i, j)``; uses the updated ``t``."""
    weights = weights or edge_weights(graph, cfg)
    src, dst = graph.src, graph.dst
    Sh = weights.S1[:, 1:, 1:]
    s21 = weights.S1[:, 1:, 0]
    c, r0 = _edge_c(state, graph)
    A = _accumulate(graph.n, src, 2.0 * Sh, (cfg.beta2 + cfg.h4) * _EYE3)
    rhs = 2.0 * (np.einsum("eij,ej->ei", Sh, state.t[dst] - c) + s21 * r0[:, None])
    b = _accumulate(graph.n, src, rhs, np.zeros(3))
    b += cfg.beta2 * state.t - state.z + cfg.h4 * state.s
    return A, b


# ---------------------------------------------------------------------------
# block updates


def update_p(state: SolverState, graph: PoseGraph, cfg: SolverConfig, weights=None) -> np.ndarray:
    """New unit quaternions ``p`` (n, 4)."""
    A, b = assemble_p(state, graph, cfg, weights)
    scalar = cfg.scalar_sigma
    out = np.empty_like(b)

    def work(lo, hi):
        for i in range(lo, hi):
            nb = np.linalg.norm(b[i])
            if scalar and nb > 0.0:
                out[i] = -b[i] / nb
                continue
            try:
                out[i] = solve_eig(SphereQP(0.5 * (A[i] + A[i].T), b[i])).x
            except NumericalFailure as exc:
                exc.vertex = i
                raise

    if scalar:
        # vectorized fast path; degenerate vertices fall back to the loop
        nb = np.linalg.norm(b, axis=1)
        good = nb > 0.0
        out[good] = -b[good] / nb[good, None]
        bad = np.flatnonzero(~good)
        for i in bad:
            work(int(i), int(i) + 1)
        return out
    _parallel(graph.n, cfg.threads, work)
    return out


def update_q(state, graph, cfg, weights=None) -> np.ndarray:
    A, b = assemble_q(state, graph, cfg, weights)
    return _batched_solve(A, b, cfg.threads)


def update_t(state, graph, cfg, weights=None) -> np.ndarray:
    A, b = assemble_t(state, graph, cfg, weights)
    return _batched_solve(A, b, cfg.threads)


def update_s(state, graph, cfg, weights=None) -> np.ndarray:
    A, b = assemble_s(state, graph, cfg, weights)
    return _batched_solve(A, b, cfg.threads)


def update_duals(state: SolverState, cfg: SolverConfig) -> tuple[np.ndarray, np.ndarray]:
    lam = state.lam - cfg.tau * cfg.beta1 * (state.p - state.q)
    z = state.z - cfg.tau * cfg.beta2 * (state.t - state.s)
    return lam, z


def sweep(state: SolverState, graph: PoseGraph, cfg: SolverConfig, weights=None) -> SolverState:
    """One full iteration p -> q -> t -> s -> duals; returns the new state."""
    weights = weights or edge_weights(graph, cfg)
    base = state.snapshot()
    cur = state.snapshot()
    # each block is assembled while it still holds x^k, its proximal centre
    cur.p = update_p(cur, graph, cfg, weights)
    cur.q = update_q(cur, graph, cfg, weights)
    cur.t = update_t(cur, graph, cfg, weights)
    cur.s = update_s(cur, graph, cfg, weights)
    cur.lam, cur.z = update_duals(cur, cfg)
    cur.k = state.k + 1
    cur.prev = base
    return cur


# ---------------------------------------------------------------------------
# diagnostics


def residual(state: SolverState, cfg: SolverConfig) -> float:
    """``|dlam|^2/b1 + |dz|^2/b2 + b1 |dq|^2 + b2 |dt|^2`` against ``state.prev``."""
    prev = state.prev
    if prev is None:
        return 0.0
    return float(
        np.sum((state.lam - prev.lam) ** 2) / cfg.beta1
        + np.sum((state.z - prev.z) ** 2) / cfg.beta2
        + cfg.beta1 * np.sum((state.q - prev.q) ** 2)
        + cfg.beta2 * np.sum((state.t - prev.t) ** 2)
    )


def alphas(tau: float) -> tuple[float, float, float]:
    """``(alpha1, alpha2, alpha3)`` of the dual-step bound; alpha3 = 1 + alpha1."""
    d = 1.0 - abs(1.0 - tau)
    a1 = abs(1.0 - tau) / d
    a2 = tau / d**2
    return a1, a2, 1.0 + a1


def psi_weights(est: LipschitzEstimates, cfg: SolverConfig) -> tuple[float, float, float, float]:
    """Scalar ``M_1..M_4`` of the Lyapunov function (H_i = h_i I)."""
    a2 = est.alpha2
    Lf2, Lg2 = est.L_f**2, est.L_g**2
    b1, b2 = cfg.beta1, cfg.beta2
    m1 = 0.5 * cfg.h1 - a2 / b1 * (7 * Lf2 + 4 * Lg2)
    m2 = cfg.h2 - a2 / b1 * (7 * Lf2 + 4 * Lg2 + 4 * cfg.h2**2)
    m3 = cfg.h3 - 3 * a2 / b2 * Lf2
    m4 = cfg.h4 - a2 / b2 * (3 * Lf2 + 3 * cfg.h4**2)
    return m1, m2, m3, m4


def lyapunov_psi(
    state: SolverState, graph: PoseGraph, cfg: SolverConfig, est: LipschitzEstimates, weights=None
) -> float:
    """``L_beta + alpha1/(tau beta) |dlam|^2 + sum_i |dx_i|^2_{M_i}``."""
    L = augmented_lagrangian(state, graph, cfg, weights)
    prev = state.prev
    if prev is None:
        return L
    m = psi_weights(est, cfg)
    dual = (
        est.alpha1 / (cfg.tau * cfg.beta1) * np.sum((state.lam - prev.lam) ** 2)
        + est.alpha1 / (cfg.tau * cfg.beta2) * np.sum((state.z - prev.z) ** 2)
    )
    primal = sum(
        mi * np.sum((x - xp) ** 2)
        for mi, x, xp in zip(m, (state.p, state.q, state.t, state.s), (prev.p, prev.q, prev.t, prev.s))
    )
    return float(L + dual + primal)


def estimate_lipschitz(
    graph: PoseGraph,
    cfg: SolverConfig,
    q_bound: float = 1.0,
    resid_bound: float = 0.0,
) -> LipschitzEstimates:
    """Block-row-sum bounds on the Hessians of f and g, then beta' and beta''.

    The Hessian of f is bounded block by block (each vertex block p_i, q_i,
    t_i, s_i is one block row) and the spectral norm by the largest sum of
    block norms in a row.  ``q_bound`` bounds ``|q_i|`` and ``resid_bound``
    bounds the per-edge residual ``|r_e|``; ``|p_i| = 1`` throughout.
    """
    n = graph.n
    w = edge_weights(graph, cfg)
    sig1 = np.linalg.norm(w.S1, 2, axis=(1, 2)) if graph.m else np.zeros(0)
    sig1h = np.linalg.norm(w.S1[:, 1:, 1:], 2, axis=(1, 2)) if graph.m else np.zeros(0)
    kap = np.linalg.norm(w.S2, 2, axis=(1, 2)) if graph.m else np.zeros(0)
    a = np.linalg.norm(graph.t, axis=1)
    qb = q_bound
    src, dst = graph.src, graph.dst

    pp = 2 * sig1 * qb**2 * a**2
    qq = 2 * sig1 * a**2
    tt = 2 * sig1h
    pq = 2 * sig1 * qb * a**2 + 2 * sig1 * resid_bound * a
    pt = 2 * sig1 * qb * a
    qt = 2 * sig1 * a
    rows = np.zeros((4, n))  # p, q, t, s block rows
    np.add.at(rows[0], src, pp + pq + 2 * pt)
    np.add.at(rows[1], src, qq + pq + 2 * qt)
    np.add.at(rows[2], dst, tt + pt + qt + tt)
    np.add.at(rows[3], src, tt + pt + qt + tt)
    L_f = float(rows.max()) if n and graph.m else 0.0

    rho_g = 1.0 + qb
    g_rows = np.zeros((2, n))
    gpq = 2 * kap * qb + 2 * kap * rho_g
    np.add.at(g_rows[0], dst, 2 * kap * qb**2 + gpq)
    np.add.at(g_rows[1], src, 2 * kap + gpq)
    L_g = float(g_rows.max()) if n and graph.m else 0.0
    out_deg = np.zeros(n)
    np.add.at(out_deg, src, 2 * kap)
    L_g2 = float(out_deg.max()) if n and graph.m else 0.0

    a1, a2, a3 = alphas(cfg.tau)
    k1, k2, k3, k4 = cfg.h1, cfg.h2, cfg.h3, cfg.h4
    Lf2, Lg2 = L_f**2, L_g**2

    def ratio(num, den):
        if num == 0:
            return 0.0
        return np.inf if den == 0 else num / den

    beta_p = max(
        2 * (L_f + L_g2),
        ratio(2 * a2 * (7 * Lf2 + 4 * Lg2), k1),
        ratio(a2 * (7 * Lf2 + 4 * Lg2), k2) + ratio((4 * a2 + 2) * k2**2, k2),
        ratio((3 * a2 + 2) * Lf2, k3),
        ratio((3 * a2 + 2) * Lf2, k4) + ratio((3 * a2 + 1) * k4**2, k4),
    )
    beta_pp = max(
        ratio(2 * a2 * (7 * Lf2 + 4 * Lg2), k1),
        ratio(a2 * (7 * Lf2 + 4 * Lg2 + 8 * k2**2), k2),
        ratio(7 * a2 * Lf2, k3),
        ratio(a2 * (7 * Lf2 + 6 * k4**2), k4),
    )
    return LipschitzEstimates(L_f, L_g, L_g2, float(beta_p), float(beta_pp), a1, a2, a3)


def resolve_beta(graph: PoseGraph, cfg: SolverConfig, est: Optional[LipschitzEstimates] = None) -> SolverConfig:
    """Fill unset penalties with ``max(1, 1.05 max(beta', beta''))``."""
    if cfg.beta1 is not None and cfg.beta2 is not None:
        return cfg
    est = est or estimate_lipschitz(graph, cfg)
    beta = max(1.0, 1.05 * est.beta_lower)
    if not np.isfinite(beta):
        raise ValueError("automatic beta is unbounded; set h1..h4 > 0 or pass beta explicitly")
    return cfg.replace(
        beta1=cfg.beta1 if cfg.beta1 is not None else beta,
        beta2=cfg.beta2 if cfg.beta2 is not None else beta,
    )


# ---------------------------------------------------------------------------
# chordal initialization


def _project_so3(M: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    det = np.sign(np.linalg.det(U @ Vt))
    U[:, :, 2] *= det[:, None]
    return U @ Vt


def align_signs(q: np.ndarray, graph: PoseGraph) -> np.ndarray:
    """Flip quaternion signs so ``q_i q_ij`` agrees with ``q_j`` along a BFS tree.

    The rotation residual is not invariant under ``q -> -q``, so a pose set
    with per-vertex arbitrary signs pays about 4 per mismatched edge.  The
    root of every component keeps its sign.
    """
    q = np.array(q, dtype=float)
    seen = np.zeros(graph.n, dtype=bool)
    for root in range(graph.n):
        if seen[root]:
            continue
        seen[root] = True
        frontier = [root]
        while frontier:
            nxt = []
            for v in frontier:
                for k in graph.out_edges[v].tolist():
                    w = int(graph.dst[k])
                    if not seen[w]:
                        if quat.mul(q[v], graph.q[k]) @ q[w] < 0:
                            q[w] = -q[w]
                        seen[w] = True
                        nxt.append(w)
                for k in graph.in_edges[v].tolist():
                    w = int(graph.src[k])
                    if not seen[w]:
                        if quat.mul(q[w], graph.q[k]) @ q[v] < 0:
                            q[w] = -q[w]
                        seen[w] = True
                        nxt.append(w)
            frontier = nxt
    return q


def chordal_init(graph: PoseGraph) -> PoseSet:
    """Relaxed rotation least squares, SO(3) projection, then translations.

    Vertex 0 is anchored at the identity rotation and the origin.
    """
    graph.validate()
    n, m = graph.n, graph.m
    if n == 1:
        return PoseSet(ONE[None], np.zeros((1, 3)))
    src, dst = graph.src, graph.dst
    Rm = quat.to_rotmat(graph.q)

    # Each row x of R satisfies x_j = R_ij^T x_i, so the three rows share
    # one sparse system; x_i occupies columns 3i..3i+2.
    e = np.arange(m)[:, None, None]
    a = np.arange(3)[None, :, None]
    b = np.arange(3)[None, None, :]
    zero = np.zeros((1, 3, 3), dtype=np.int64)
    I = np.concatenate([(3 * e + a)[..., 0].ravel(), (3 * e + a + 0 * b).ravel()])
    J = np.concatenate([(3 * dst[:, None] + a[..., 0]).ravel(), (3 * src[:, None, None] + b + zero).ravel()])
    V = np.concatenate([np.ones(3 * m), -np.swapaxes(Rm, 1, 2).ravel()])
    A = sparse.csr_matrix((V, (I, J)), shape=(3 * m, 3 * n))
    A_free, A_fix = A[:, 3:], A[:, :3]
    rhs = -(A_fix @ _EYE3)  # row r of R_0 = I is e_r
    solve_rot = factorized((A_free.T @ A_free).tocsc())
    X = np.column_stack([solve_rot(A_free.T @ rhs[:, r]) for r in range(3)])
    R = np.empty((n, 3, 3))
    R[0] = _EYE3
    # X[3(i-1)+b, r] is entry (r, b) of R_i
    R[1:] = np.swapaxes(X.reshape(n - 1, 3, 3), 1, 2)
    R[1:] = _project_so3(R[1:])
    q = align_signs(quat.from_rotmat(R), graph)

    # t_j - t_i = R_i t_ij with t_0 = 0
    inc = sparse.csr_matrix(
        (np.concatenate([np.ones(m), -np.ones(m)]), (np.tile(np.arange(m), 2), np.concatenate([dst, src]))),
        shape=(m, n),
    )
    B = inc[:, 1:]
    d = np.einsum("eij,ej->ei", R[src], graph.t)
    solve_t = factorized((B.T @ B).tocsc())
    t = np.zeros((n, 3))
    t[1:] = np.column_stack([solve_t(B.T @ d[:, c]) for c in range(3)])
    return PoseSet(q, t)


# ---------------------------------------------------------------------------
# driver


@dataclass
class SolveResult:
    poses: PoseSet
    trace: IterTrace
    status: str  # "converged" or "max-iter"
    state: SolverState
    config: SolverConfig
    estimates: LipschitzEstimates

    @property
    def iterations(self) -> int:
        return len(self.trace)


def _init_resid_bound(poses: PoseSet, graph: PoseGraph) -> float:
    if graph.m == 0:
        return 0.0
    r, _ = edge_residuals(poses.q, poses.q, poses.t, poses.t, graph)
    return float(2.0 * np.max(np.linalg.norm(r, axis=1)))


def solve(
    graph: PoseGraph,
    cfg: Optional[SolverConfig] = None,
    init: Optional[PoseSet] = None,
    callback: Optional[Callable[[SolverState, IterRecord], None]] = None,
) -> SolveResult:
    """Run the iteration from ``init`` (chordal when omitted).

    Returns the estimate ``(p, t)``, the per-iteration trace and the status.
    """
    cfg = cfg or SolverConfig()
    if init is None:
        init = chordal_init(graph)
    if len(init) != graph.n:
        raise ValueError("initial poses do not match the graph size")
    init = PoseSet(align_signs(init.q, graph), init.t)
    est = estimate_lipschitz(graph, cfg, resid_bound=_init_resid_bound(init, graph))
    cfg = resolve_beta(graph, cfg, est)
    weights = edge_weights(graph, cfg)
    state = SolverState.from_poses(init)
    trace = IterTrace()
    status = "max-iter"
    for _ in range(cfg.max_iter):
        t0 = time.perf_counter()
        state = sweep(state, graph, cfg, weights)
        ms = 1e3 * (time.perf_counter() - t0)
        prev = state.prev
        rec = IterRecord(
            state.k,
            residual(state, cfg),
            lyapunov_psi(state, graph, cfg, est, weights),
            float(np.max(np.linalg.norm(state.p - state.q, axis=1))) if graph.n else 0.0,
            float(np.max(np.linalg.norm(state.t - state.s, axis=1))) if graph.n else 0.0,
            float(np.linalg.norm(state.lam - prev.lam)),
            float(np.linalg.norm(state.z - prev.z)),
            ms,
        )
        trace.append(rec)
        if callback is not None:
            callback(state, rec)
        if rec.e < cfg.tol:
            status = "converged"
            break
    return SolveResult(state.poses(), trace, status, state, cfg, est)
