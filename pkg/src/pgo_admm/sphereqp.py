"""Global minimization of ``b^T x + x^T A x / 2`` on the unit sphere of R^4.

The multiplier is read off the spectrum of the 8x8 matrix
``Q = [[A, -b b^T], [-I, A]]``: the optimal ``lambda`` is minus its leftmost
real eigenvalue.  That estimate is then polished against the symmetric
eigendecomposition of ``A`` so the returned point satisfies

    |x| = 1,   (A + lambda I) x = -b,   A + lambda I >= 0

to near machine precision, including the hard case where ``b`` has no
component along the bottom eigenspace of ``A``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

SCALAR_TOL = 1e-12
SYM_TOL = 1e-12


class NumericalFailure(RuntimeError):
    """The eigenvalue route produced no usable multiplier.

    ``spectrum`` holds the eigenvalues of ``Q``; ``vertex`` is filled in by
    the solver when the failure happens inside a per-vertex update.
    """

    def __init__(self, msg: str, spectrum=None, vertex: Optional[int] = None):
        super().__init__(msg)
        self.spectrum = spectrum
        self.vertex = vertex


@dataclass
class SphereQP:
    A: np.ndarray
    b: np.ndarray
    delta: float = 1.0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float).reshape(4, 4)
        self.b = np.asarray(self.b, dtype=float).reshape(4)
        if np.max(np.abs(self.A - self.A.T)) > SYM_TOL * max(1.0, np.max(np.abs(self.A))):
            raise ValueError("A must be symmetric")
        if self.delta != 1.0:
            raise ValueError("only the unit sphere is supported")

    def objective(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.b + 0.5 * np.einsum("...i,ij,...j->...", x, self.A, x)

    def companion(self) -> np.ndarray:
        """The 8x8 matrix ``[[A, -b b^T], [-I, A]]``."""
        top = np.hstack([self.A, -np.outer(self.b, self.b)])
        bottom = np.hstack([-np.eye(4), self.A])
        return np.vstack([top, bottom])


@dataclass
class SphereQPSolution:
    x: np.ndarray
    lam: float
    objective: float
    path: str  # "scalar", "eigen" or "hard-case"

    def kkt_residuals(self, prob: SphereQP) -> tuple[float, float, float]:
        """``(|(A+lam I)x + b|, min eig(A+lam I), |x| - 1)``."""
        K = prob.A + self.lam * np.eye(4)
        return (
            float(np.linalg.norm(K @ self.x + prob.b)),
            float(np.linalg.eigvalsh(K)[0]),
            float(np.linalg.norm(self.x) - 1.0),
        )


def is_scalar_matrix(A, tol: float = SCALAR_TOL) -> bool:
    A = np.asarray(A, dtype=float)
    scale = max(1.0, abs(A[0, 0]))
    return bool(np.max(np.abs(A - A[0, 0] * np.eye(len(A)))) <= tol * scale)


def _sign_fix(x, tol=1e-12) -> bool:
    """True when the first significant component of ``x`` is positive."""
    idx = np.flatnonzero(np.abs(x) > tol)
    return bool(idx.size == 0 or x[idx[0]] > 0)


def solve_scalar(b, alpha: float = 1.0) -> SphereQPSolution:
    """Closed form for ``A = alpha I``: ``x = -b/|b|``, ``lambda = |b| - alpha``."""
    b = np.asarray(b, dtype=float).reshape(4)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return solve_eig(SphereQP(alpha * np.eye(4), b))
    x = -b / nb
    return SphereQPSolution(x, float(nb - alpha), float(-nb + 0.5 * alpha), "scalar")


def rightmost_multiplier(prob: SphereQP) -> tuple[float, np.ndarray]:
    """``lambda*`` from the spectrum of ``Q`` and the spectrum itself."""
    Q = prob.companion()
    ev = np.linalg.eigvals(Q)
    tol = 1e-8 * (1.0 + np.linalg.norm(Q, 2))
    real = ev[np.abs(ev.imag) <= tol]
    if real.size == 0:
        raise NumericalFailure("companion matrix has no real eigenvalue", spectrum=ev)
    # leftmost real part of Q, ties broken toward the smallest imaginary part
    order = np.lexsort((np.abs(real.imag), real.real))
    return float(-real[order[0]].real), ev


def solve_eig(prob: SphereQP) -> SphereQPSolution:
    """Global minimizer via the companion-matrix eigenvalue, with KKT polish."""
    lam_q, spectrum = rightmost_multiplier(prob)
    a, V = np.linalg.eigh(prob.A)
    beta = V.T @ prob.b
    a_min = a[0]
    scale = max(1.0, np.max(np.abs(a)), np.linalg.norm(prob.b))
    bottom = a - a_min <= 1e-12 * scale
    rest = ~bottom

    def x_of(lam):
        return -beta / (a + lam)

    # hard case: b (almost) orthogonal to the bottom eigenspace and the
    # particular solution at lambda = -a_min already fits inside the sphere
    if np.linalg.norm(beta[bottom]) <= 1e-10 * scale:
        xp = np.zeros(4)
        xp[rest] = -beta[rest] / (a[rest] - a_min)
        nxp = np.linalg.norm(xp)
        if nxp <= 1.0:
            lam = -a_min
            alpha = np.sqrt(max(0.0, 1.0 - nxp**2))
            v = np.zeros(4)
            v[np.flatnonzero(bottom)[0]] = 1.0
            x = V @ (xp + alpha * v)
            if not _sign_fix(x):
                x = V @ (xp - alpha * v)
            x /= np.linalg.norm(x)
            return SphereQPSolution(x, float(lam), float(prob.objective(x)), "hard-case")

    # easy case: secular equation 1/|x(lam)| = 1 on (-a_min, -a_min + |b|]
    lo = -a_min
    hi = -a_min + np.linalg.norm(prob.b)

    def secular(lam):
        if lam <= lo:
            return -1.0
        return 1.0 / np.linalg.norm(x_of(lam)) - 1.0

    if lo < lam_q < hi and abs(secular(lam_q)) <= 4 * np.finfo(float).eps:
        lam = lam_q
    elif secular(hi) <= 0.0:
        lam = hi
    else:
        lam = brentq(secular, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    if not np.isfinite(lam):
        raise NumericalFailure("multiplier is not finite", spectrum=spectrum)
    y = x_of(lam)
    x = V @ (y / np.linalg.norm(y))
    return SphereQPSolution(x, float(lam), float(prob.objective(x)), "eigen")


def solve(prob: SphereQP) -> SphereQPSolution:
    """Scalar fast path when ``A`` is a multiple of the identity, else ``solve_eig``."""
    if is_scalar_matrix(prob.A) and np.linalg.norm(prob.b) > 0.0:
        return solve_scalar(prob.b, prob.A[0, 0])
    return solve_eig(prob)


def brute_oracle(
    prob: SphereQP,
    samples: int = 200_000,
    steps: int = 50,
    seed: int = 0,
    batch: int = 16_384,
) -> float:
    """Best objective over random sphere points refined by projected gradient.

    Samples come from one seeded stream, so a larger ``samples`` only adds
    candidates and the result never increases.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    eta = 1.0 / (np.linalg.norm(prob.A, 2) + np.linalg.norm(prob.b) + 1e-12)
    # one step is x <- normalize((I - eta A) x - eta b); columns are points
    M = np.eye(4) - eta * prob.A
    shift = (eta * prob.b)[:, None]
    best = np.inf
    done = 0
    while done < samples:
        k = min(batch, samples - done)
        x = rng.standard_normal((k, 4)).T.copy()
        x /= np.sqrt(np.einsum("ij,ij->j", x, x))
        buf = np.empty_like(x)
        nrm = np.empty(k)
        for _ in range(steps):
            np.matmul(M, x, out=buf)
            buf -= shift
            np.einsum("ij,ij->j", buf, buf, out=nrm)
            np.sqrt(nrm, out=nrm)
            np.divide(buf, nrm, out=x)
        best = min(best, float(np.min(prob.objective(x.T))))
        done += k
    return best
