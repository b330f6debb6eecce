"""Pose-graph data model and g2o (``VERTEX_SE3:QUAT`` / ``EDGE_SE3:QUAT``) I/O."""

from __future__ import annotations

import io
import os
import warnings
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, TextIO

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import quat

VERTEX_TAG = "VERTEX_SE3:QUAT"
EDGE_TAG = "EDGE_SE3:QUAT"
NORM_WARN_TOL = 1e-3

_TRIU = np.triu_indices(6)


class G2oFormatError(ValueError):
    """Malformed g2o content; ``lineno`` is 1-based."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class Edge(NamedTuple):
    i: int
    j: int
    q: np.ndarray
    t: np.ndarray
    info: Optional[np.ndarray] = None


@dataclass
class PoseSet:
    """``n`` poses: unit quaternions ``q`` (n, 4) and translations ``t`` (n, 3)."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.q = quat.as_unit(np.asarray(self.q, dtype=float).reshape(-1, 4))
        self.t = np.asarray(self.t, dtype=float).reshape(-1, 3)
        if len(self.q) != len(self.t):
            raise ValueError(f"{len(self.q)} rotations but {len(self.t)} translations")

    def __len__(self) -> int:
        return len(self.q)

    def copy(self) -> "PoseSet":
        return PoseSet(self.q.copy(), self.t.copy())


@dataclass
class PoseGraph:
    """Directed pose graph with edges stored column-wise.

    Edge ``k`` is the measurement ``(q[k], t[k])`` of vertex ``dst[k]`` seen
    from vertex ``src[k]``.  ``ids`` keeps the original vertex ids so files
    can be written back unchanged.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    q: np.ndarray
    t: np.ndarray
    info: Optional[np.ndarray] = None
    ids: Optional[np.ndarray] = None
    out_edges: list = field(init=False, repr=False)
    in_edges: list = field(init=False, repr=False)

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        self.dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        m = len(self.src)
        self.q = np.asarray(self.q, dtype=float).reshape(m, 4)
        self.t = np.asarray(self.t, dtype=float).reshape(m, 3)
        if len(self.dst) != m:
            raise ValueError("src/dst length mismatch")
        if m and (self.src.min() < 0 or self.dst.min() < 0 or max(self.src.max(), self.dst.max()) >= self.n):
            raise ValueError("edge endpoint out of range")
        if np.any(self.src == self.dst):
            raise ValueError("self-loop edges are not allowed")
        self.q = quat.as_unit(self.q) if m else self.q
        if self.info is not None:
            self.info = np.asarray(self.info, dtype=float).reshape(m, 6, 6)
        if self.ids is None:
            self.ids = np.arange(self.n, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.out_edges, self.in_edges = partition_edges(self)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Edge], ids=None) -> "PoseGraph":
        edges = list(edges)
        if not edges:
            return cls(n, [], [], np.zeros((0, 4)), np.zeros((0, 3)), ids=ids)
        info = None
        if all(e.info is not None for e in edges):
            info = np.stack([e.info for e in edges])
        return cls(
            n,
            [e.i for e in edges],
            [e.j for e in edges],
            np.stack([e.q for e in edges]),
            np.stack([e.t for e in edges]),
            info=info,
            ids=ids,
        )

    @property
    def m(self) -> int:
        return len(self.src)

    def edge(self, k: int) -> Edge:
        info = None if self.info is None else self.info[k]
        return Edge(int(self.src[k]), int(self.dst[k]), self.q[k], self.t[k], info)

    def edges(self):
        return [self.edge(k) for k in range(self.m)]

    def n_components(self) -> int:
        if self.n == 0:
            return 0
        adj = coo_matrix((np.ones(self.m), (self.src, self.dst)), shape=(self.n, self.n))
        return connected_components(adj, directed=True, connection="weak")[0]

    def is_connected(self) -> bool:
        return self.n_components() == 1

    def validate(self) -> None:
        """Raise ``ValueError`` unless the undirected graph is connected."""
        c = self.n_components()
        if c != 1:
            raise ValueError(f"pose graph is not connected ({c} components)")


def partition_edges(graph: PoseGraph):
    """Split edge indices by vertex: ``out[i]`` leave ``i``, ``inn[i]`` enter ``i``."""
    out = [[] for _ in range(graph.n)]
    inn = [[] for _ in range(graph.n)]
    for k, (i, j) in enumerate(zip(graph.src.tolist(), graph.dst.tolist())):
        out[i].append(k)
        inn[j].append(k)
    as_arr = lambda lists: [np.asarray(x, dtype=np.int64) for x in lists]  # noqa: E731
    return as_arr(out), as_arr(inn)


def _xyzw_to_wxyz(v):
    return np.array([v[3], v[0], v[1], v[2]])


def _parse_floats(tokens, lineno, what):
    try:
        return np.array([float(x) for x in tokens])
    except ValueError:
        raise G2oFormatError(lineno, f"non-numeric {what}") from None


def _checked_unit(qv, lineno):
    nrm = np.linalg.norm(qv)
    if not np.isfinite(nrm) or nrm == 0.0:
        raise G2oFormatError(lineno, "zero or non-finite quaternion")
    if abs(nrm - 1.0) > NORM_WARN_TOL:
        warnings.warn(f"line {lineno}: quaternion norm {nrm:.6g} renormalized", stacklevel=3)
    return qv / nrm


def parse_g2o(stream) -> tuple[PoseGraph, Optional[PoseSet]]:
    """Read a 3D pose graph.

    ``stream`` may be a path, an open text file, or a string of file content
    (anything containing a newline is treated as content).

    Returns:
        The graph, plus the vertex poses if the file declares any vertices.

    Raises:
        G2oFormatError: on malformed records or duplicate vertex ids.
    """
    if isinstance(stream, os.PathLike) or (
        isinstance(stream, str) and stream.strip() and "\n" not in stream
        and not stream.lstrip().startswith(("VERTEX", "EDGE", "#"))
    ):
        with open(stream) as fh:
            return parse_g2o(fh)
    if isinstance(stream, str):
        stream = io.StringIO(stream)

    vertices = {}
    raw_edges = []
    for lineno, line in enumerate(stream, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        tag = tok[0]
        if tag == VERTEX_TAG:
            if len(tok) != 9:
                raise G2oFormatError(lineno, f"{VERTEX_TAG} needs 8 fields, got {len(tok) - 1}")
            try:
                vid = int(tok[1])
            except ValueError:
                raise G2oFormatError(lineno, "vertex id is not an integer") from None
            if vid in vertices:
                raise G2oFormatError(lineno, f"duplicate vertex id {vid}")
            vals = _parse_floats(tok[2:], lineno, "vertex pose")
            vertices[vid] = (_checked_unit(_xyzw_to_wxyz(vals[3:7]), lineno), vals[:3])
        elif tag == EDGE_TAG:
            if len(tok) not in (10, 31):
                raise G2oFormatError(lineno, f"{EDGE_TAG} needs 9 or 30 fields, got {len(tok) - 1}")
            try:
                a, b = int(tok[1]), int(tok[2])
            except ValueError:
                raise G2oFormatError(lineno, "edge endpoint is not an integer") from None
            if a == b:
                raise G2oFormatError(lineno, "self-loop edge")
            vals = _parse_floats(tok[3:], lineno, "edge measurement")
            info = None
            if len(vals) == 28:
                info = np.zeros((6, 6))
                info[_TRIU] = vals[7:]
                info = info + np.triu(info, 1).T
            raw_edges.append((lineno, a, b, _checked_unit(_xyzw_to_wxyz(vals[3:7]), lineno), vals[:3], info))
        # other record types (FIX, 2D records, landmarks) are not part of this model

    if vertices:
        ids = sorted(vertices)
        for lineno, a, b, *_ in raw_edges:
            for v in (a, b):
                if v not in vertices:
                    raise G2oFormatError(lineno, f"edge references undeclared vertex {v}")
    else:
        ids = sorted({v for _, a, b, *_ in raw_edges for v in (a, b)})
    index = {v: k for k, v in enumerate(ids)}

    edges = [Edge(index[a], index[b], q, t, info) for _, a, b, q, t, info in raw_edges]
    graph = PoseGraph.from_edges(len(ids), edges, ids=np.array(ids, dtype=np.int64))
    poses = None
    if vertices:
        poses = PoseSet(np.stack([vertices[v][0] for v in ids]), np.stack([vertices[v][1] for v in ids]))
    return graph, poses


def _fmt(values) -> str:
    return " ".join(format(float(x), ".17g") for x in values)


def write_g2o(graph: PoseGraph, poses: PoseSet, stream: Optional[TextIO] = None) -> str:
    """Emit vertex lines then edge lines; returns the text (also written to ``stream``)."""
    if poses is not None and len(poses) != graph.n:
        raise ValueError(f"graph has {graph.n} vertices but {len(poses)} poses were given")
    lines = []
    if poses is not None:
        for vid, q, t in zip(graph.ids.tolist(), poses.q, poses.t):
            lines.append(f"{VERTEX_TAG} {vid} {_fmt(t)} {_fmt([q[1], q[2], q[3], q[0]])}")
    for k in range(graph.m):
        q, t = graph.q[k], graph.t[k]
        info = np.eye(6) if graph.info is None else graph.info[k]
        lines.append(
            f"{EDGE_TAG} {graph.ids[graph.src[k]]} {graph.ids[graph.dst[k]]} "
            f"{_fmt(t)} {_fmt([q[1], q[2], q[3], q[0]])} {_fmt(info[_TRIU])}"
        )
    text = "\n".join(lines) + ("\n" if lines else "")
    if stream is not None:
        stream.write(text)
    return text


def write_poses(poses: PoseSet, ids=None, stream: Optional[TextIO] = None) -> str:
    """Vertex-only g2o text for a pose set."""
    n = len(poses)
    g = PoseGraph(n, [], [], np.zeros((0, 4)), np.zeros((0, 3)), ids=ids)
    return write_g2o(g, poses, stream)
