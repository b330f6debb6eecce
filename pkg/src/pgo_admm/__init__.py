"""Pose graph optimization by a parallelizable Riemannian ADMM."""

from .graph_io import Edge, G2oFormatError, PoseGraph, PoseSet, parse_g2o, write_g2o
from .metrics import EvalReport, evaluate
from .solver import SolveResult, SolverConfig, chordal_init, solve
from .sphereqp import NumericalFailure, SphereQP, SphereQPSolution, solve_eig, solve_scalar
from .synth import CubeSpec, NoiseSpec, gen_cube, gen_ring

__version__ = "0.1.0"

__all__ = [
    "CubeSpec",
    "Edge",
    "EvalReport",
    "G2oFormatError",
    "NoiseSpec",
    "NumericalFailure",
    "PoseGraph",
    "PoseSet",
    "SolveResult",
    "SolverConfig",
    "SphereQP",
    "SphereQPSolution",
    "chordal_init",
    "evaluate",
    "gen_cube",
    "gen_ring",
    "parse_g2o",
    "solve",
    "solve_eig",
    "solve_scalar",
    "write_g2o",
]
