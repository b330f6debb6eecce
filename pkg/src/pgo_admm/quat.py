"""Quaternion algebra on ``[w, x, y, z]`` arrays.

Every function accepts a single quaternion of shape ``(4,)`` or a stack of
shape ``(..., 4)`` and broadcasts over the leading axes.  Vectors are plain
``(..., 3)`` arrays.
"""

from __future__ import annotations

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
ONE = IDENTITY
D = np.diag([1.0, -1.0, -1.0, -1.0])


def as_unit(q, tol: float = 1e-9) -> np.ndarray:
    """Return ``q`` scaled to unit norm.

    Raises:
        ValueError: if any quaternion has (near) zero norm or non-finite entries.
    """
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("quaternion has non-finite entries")
    nrm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(nrm <= tol):
        raise ValueError("cannot normalize a zero quaternion")
    return q / nrm


def pure(v) -> np.ndarray:
    """Embed a 3-vector as the pure quaternion ``[0, v]``."""
    v = np.asarray(v, dtype=float)
    return np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)


def mul(a, b) -> np.ndarray:
    """Hamilton product ``a ⊗ b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a0, av = a[..., :1], a[..., 1:]
    b0, bv = b[..., :1], b[..., 1:]
    w = a0 * b0 - np.sum(av * bv, axis=-1, keepdims=True)
    v = a0 * bv + b0 * av + np.cross(av, bv)
    return np.concatenate([w, v], axis=-1)


def conj(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a * np.array([1.0, -1.0, -1.0, -1.0])


def m_matrix(a) -> np.ndarray:
    """Left-multiplication matrix: ``mul(a, b) == m_matrix(a) @ b``."""
    a = np.asarray(a, dtype=float)
    a0, a1, a2, a3 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    rows = [
        [a0, -a1, -a2, -a3],
        [a1, a0, -a3, a2],
        [a2, a3, a0, -a1],
        [a3, -a2, a1, a0],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def w_matrix(a) -> np.ndarray:
    """Right-multiplication matrix: ``mul(b, a) == w_matrix(a) @ b``."""
    a = np.asarray(a, dtype=float)
    a0, a1, a2, a3 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    rows = [
        [a0, -a1, -a2, -a3],
        [a1, a0, a3, -a2],
        [a2, -a3, a0, a1],
        [a3, a2, -a1, a0],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def rotate(q, v) -> np.ndarray:
    """Rotate ``v`` by unit quaternion ``q`` (imaginary part of ``q [0,v] q*``)."""
    return mul(mul(q, pure(v)), conj(q))[..., 1:]


def to_rotmat(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def from_rotmat(R) -> np.ndarray:
    """Unit quaternion (with ``w >= 0``) of a rotation matrix.

    Uses the largest-diagonal branch for numerical stability.
    """
    R = np.asarray(R, dtype=float)
    flat = R.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for k, m in enumerate(flat):
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        cand = np.array([tr, m[0, 0], m[1, 1], m[2, 2]])
        i = int(np.argmax(cand))
        if i == 0:
            s = 2.0 * np.sqrt(max(1.0 + tr, 0.0))
            q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif i == 1:
            s = 2.0 * np.sqrt(max(1.0 + m[0, 0] - m[1, 1] - m[2, 2], 0.0))
            q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif i == 2:
            s = 2.0 * np.sqrt(max(1.0 + m[1, 1] - m[0, 0] - m[2, 2], 0.0))
            q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(max(1.0 + m[2, 2] - m[0, 0] - m[1, 1], 0.0))
            q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        q = np.asarray(q)
        q /= np.linalg.norm(q)
        out[k] = q if q[0] >= 0 else -q
    return out.reshape(R.shape[:-2] + (4,))


def from_axis_angle(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def dist_angle(q1, q2) -> np.ndarray:
    """Geodesic angle (radians, in ``[0, pi]``) between the rotations."""
    q1 = np.asarray(q1, float)
    q2 = np.asarray(q2, float)
    s = np.where(np.sum(q1 * q2, axis=-1) < 0, -1.0, 1.0)[..., None]
    # atan2 form keeps full precision near 0, where arccos(tr) does not
    return 4.0 * np.arctan2(
        np.linalg.norm(q1 - s * q2, axis=-1), np.linalg.norm(q1 + s * q2, axis=-1)
    )


def dist_chordal(q1, q2) -> np.ndarray:
    """Frobenius distance between rotation matrices, ``2*sqrt(2)*sin(theta/2)``."""
    return 2.0 * np.sqrt(2.0) * np.sin(0.5 * dist_angle(q1, q2))


def dist_quat(q1, q2) -> np.ndarray:
    """Sign-invariant quaternion distance ``min(|q1-q2|, |q1+q2|) = 2 sin(theta/4)``."""
    q1 = np.asarray(q1, float)
    q2 = np.asarray(q2, float)
    return np.minimum(np.linalg.norm(q1 - q2, axis=-1), np.linalg.norm(q1 + q2, axis=-1))


def tangent_project(x, v) -> np.ndarray:
    """Project ``v`` onto the tangent space of the unit sphere at ``x``."""
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    return v - np.sum(x * v, axis=-1, keepdims=True) * x
