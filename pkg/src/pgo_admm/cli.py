"""``pgo-admm`` command line: gen, solve, eval, bench and replay.

Exit codes: 0 converged (or success), 2 usage error, 3 iteration limit
reached, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, metrics, solver, synth
from .graph_io import G2oFormatError, PoseGraph, PoseSet, parse_g2o, write_g2o, write_poses
from .sphereqp import NumericalFailure

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MAX_ITER = 3
EXIT_NUMERICAL = 4


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _beta(text: str):
    if text == "auto":
        return None
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("beta must be > 0 or 'auto'")
    return v


def _default_threads() -> int:
    env = os.environ.get("PGO_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _add_noise_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sigma-r", type=float, default=0.01)
    p.add_argument("--sigma-t", type=float, default=0.01)
    p.add_argument("--kappa-mode", choices=synth.KAPPA_MODES, default="matched")
    p.add_argument("--noiseless", action="store_true", help="exact measurements")
    p.add_argument("--seed", type=int, default=0)


def _add_solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beta", type=_beta, default=None, help="penalty for both blocks, or 'auto'")
    p.add_argument("--beta1", type=_beta, default=None)
    p.add_argument("--beta2", type=_beta, default=None)
    p.add_argument("--tau", type=float, default=1.4)
    p.add_argument("--h1", type=float, default=1.0)
    p.add_argument("--h", type=float, default=1e-3, help="proximal weight of the q, t and s blocks")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=_positive_int, default=300)
    p.add_argument("--threads", type=_positive_int, default=None)
    p.add_argument("--info-weights", action="store_true", help="scale weights by g2o information")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pgo-admm", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gsub = gen.add_subparsers(dest="kind", required=True)
    ring = gsub.add_parser("ring")
    ring.add_argument("--n", type=int, default=100)
    _add_noise_args(ring)
    ring.add_argument("--out", required=True, help="output prefix")
    cube = gsub.add_parser("cube")
    cube.add_argument("--nhat", type=int, default=3)
    cube.add_argument("--p", type=float, default=0.3)
    _add_noise_args(cube)
    cube.add_argument("--out", required=True, help="output prefix")

    sv = sub.add_parser("solve", help="run the solver on a g2o file")
    sv.add_argument("--in", dest="input", required=True)
    sv.add_argument("--init", default="chordal", help="'chordal', 'file' (vertices of --in) or a g2o path")
    _add_solver_args(sv)
    sv.add_argument("--seed", type=int, default=0)
    sv.add_argument("--out", help="estimate g2o")
    sv.add_argument("--trace", help="per-iteration CSV")
    sv.add_argument("--manifest", help="run manifest JSON")
    sv.add_argument("--no-timing", action="store_true", help="write 0 in the ms column")

    ev = sub.add_parser("eval", help="compare an estimate with ground truth")
    ev.add_argument("--est", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--graph")
    ev.add_argument("--out")

    bn = sub.add_parser("bench", help="timing and accuracy sweep on synthetic data")
    bn.add_argument("--suite", choices=("ring", "cube"), required=True)
    bn.add_argument("--sizes", type=int, nargs="+", required=True, help="n for ring, n_hat for cube")
    bn.add_argument("--repeats", type=_positive_int, default=1)
    bn.add_argument("--p", type=float, default=0.3)
    _add_noise_args(bn)
    _add_solver_args(bn)
    bn.add_argument("--out", help="CSV path (stdout when omitted)")

    rp = sub.add_parser("replay", help="re-run a solve from its manifest")
    rp.add_argument("--manifest", required=True)
    rp.add_argument("--out-dir", required=True)
    return ap


# ---------------------------------------------------------------------------


def _noise(args) -> synth.NoiseSpec:
    try:
        return synth.NoiseSpec(args.sigma_t, args.sigma_r, args.kappa_mode, args.seed, not args.noiseless)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config(args, threads: Optional[int] = None) -> solver.SolverConfig:
    b1 = args.beta1 if args.beta1 is not None else args.beta
    b2 = args.beta2 if args.beta2 is not None else args.beta
    try:
        return solver.SolverConfig(
            beta1=b1, beta2=b2, tau=args.tau, h1=args.h1, h2=args.h, h3=args.h, h4=args.h,
            c=args.c, tol=args.tol, max_iter=args.max_iter,
            threads=threads or args.threads or _default_threads(),
            seed=getattr(args, "seed", 0), info_weights=args.info_weights,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _read(path: str):
    try:
        return parse_g2o(Path(path))
    except (OSError, G2oFormatError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_gen(args) -> int:
    noise = _noise(args)
    try:
        if args.kind == "ring":
            truth, graph = synth.gen_ring(args.n, noise)
            spec = {"kind": "ring", "n": args.n}
        else:
            truth, graph = synth.gen_cube(synth.CubeSpec(args.nhat, args.p), noise)
            spec = {"kind": "cube", "n_hat": args.nhat, "p_cube": args.p}
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.g2o").write_text(write_g2o(graph, synth.dead_reckoning(graph)))
    Path(f"{prefix}.truth.g2o").write_text(write_poses(truth))
    spec.update(sigma_t=noise.sigma_t, sigma_r=noise.sigma_r, kappa_mode=noise.kappa_mode,
                seed=noise.seed, noiseless=not noise.enabled, n_vertices=graph.n, n_edges=graph.m)
    print(json.dumps(spec))
    return EXIT_OK


def _sha256(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _init_poses(spec: str, graph: PoseGraph, file_poses: Optional[PoseSet]) -> Optional[PoseSet]:
    if spec == "chordal":
        return None
    if spec == "file":
        if file_poses is None:
            raise UsageError("--init file needs vertex records in the input")
        return file_poses
    _, poses = _read(spec)
    if poses is None or len(poses) != graph.n:
        raise UsageError(f"{spec}: initial poses do not match the graph")
    return poses


def run_solve(
    input_path: str,
    cfg: solver.SolverConfig,
    init: str = "chordal",
    out: Optional[str] = None,
    trace: Optional[str] = None,
    manifest: Optional[str] = None,
    timing: bool = True,
) -> int:
    graph, file_poses = _read(input_path)
    try:
        graph.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    init_poses = _init_poses(init, graph, file_poses)
    t0 = time.perf_counter()
    try:
        result = solver.solve(graph, cfg, init_poses)
    except NumericalFailure as exc:
        print(f"numerical failure at vertex {exc.vertex}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    wall = time.perf_counter() - t0
    if out:
        Path(out).write_text(write_g2o(graph, result.poses))
    if trace:
        Path(trace).write_text(result.trace.to_csv(timing=timing))
    last = result.trace[-1]
    if manifest:
        est = result.estimates
        doc = {
            "version": __version__,
            "command": "solve",
            "input": str(input_path),
            "input_sha256": _sha256(input_path),
            "init": init,
            "config": result.config.as_dict(),
            "beta_auto": cfg.beta1 is None or cfg.beta2 is None,
            "estimates": {
                "L_f": est.L_f, "L_g": est.L_g, "L_g2": est.L_g2,
                "beta_prime": est.beta_prime, "beta_double_prime": est.beta_double_prime,
                "alpha1": est.alpha1, "alpha2": est.alpha2,
            },
            "outputs": {"estimate": out, "trace": trace, "timing": timing},
            "status": result.status,
            "iterations": result.iterations,
            "final_e": last.e,
            "wall_s": wall,
        }
        Path(manifest).write_text(json.dumps(doc, indent=2) + "\n")
    print(f"{result.status} after {result.iterations} iterations, e={last.e:.3e}, beta1={result.config.beta1:.6g}",
          file=sys.stderr)
    return EXIT_OK if result.status == "converged" else EXIT_MAX_ITER


def cmd_solve(args) -> int:
    cfg = _config(args)
    return run_solve(args.input, cfg, args.init, args.out, args.trace, args.manifest, not args.no_timing)


def cmd_eval(args) -> int:
    _, est = _read(args.est)
    _, truth = _read(args.truth)
    if est is None or truth is None:
        raise UsageError("estimate and truth files need vertex records")
    if len(est) != len(truth):
        raise UsageError(f"estimate has {len(est)} poses, truth has {len(truth)}")
    graph = None
    if args.graph:
        graph, _ = _read(args.graph)
        if graph.n != len(est):
            raise UsageError("graph size does not match the estimate")
    try:
        report = metrics.evaluate(est, truth, graph)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = json.dumps(report.as_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


BENCH_HEADER = "suite,size,repeat,seed,n,m,iters,status,time_ms,ms_per_iter,rel_err,nrmse"


def cmd_bench(args) -> int:
    cfg = _config(args)
    rows = [BENCH_HEADER]
    per_size = {}
    for size in args.sizes:
        for rep in range(args.repeats):
            seed = args.seed + rep
            noise = synth.NoiseSpec(args.sigma_t, args.sigma_r, args.kappa_mode, seed, not args.noiseless)
            try:
                if args.suite == "ring":
                    truth, graph = synth.gen_ring(size, noise)
                else:
                    truth, graph = synth.gen_cube(synth.CubeSpec(size, args.p), noise)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            init = solver.chordal_init(graph)
            t0 = time.perf_counter()
            try:
                res = solver.solve(graph, cfg, init)
            except NumericalFailure as exc:
                print(f"numerical failure at vertex {exc.vertex}: {exc}", file=sys.stderr)
                return EXIT_NUMERICAL
            ms = 1e3 * (time.perf_counter() - t0)
            rep_ = metrics.evaluate(res.poses, truth)
            per_iter = float(np.sum(res.trace.column("ms")) / max(1, res.iterations))
            per_size.setdefault(size, []).append((ms, per_iter, rep_.rel_err, rep_.nrmse, graph.n, graph.m, res.iterations))
            rows.append(
                f"{args.suite},{size},{rep},{seed},{graph.n},{graph.m},{res.iterations},{res.status},"
                f"{ms:.3f},{per_iter:.4f},{rep_.rel_err:.6g},{rep_.nrmse:.6g}"
            )
    for size, vals in per_size.items():
        med = np.median(np.array(vals), axis=0)
        rows.append(
            f"{args.suite},{size},median,,{int(med[4])},{med[5]:.1f},{med[6]:.1f},,"
            f"{med[0]:.3f},{med[1]:.4f},{med[2]:.6g},{med[3]:.6g}"
        )
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        doc = json.loads(Path(args.manifest).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"{args.manifest}: {exc}") from None
    if doc.get("command") != "solve":
        raise UsageError("manifest does not describe a solve run")
    if _sha256(doc["input"]) != doc["input_sha256"]:
        raise UsageError("input file changed since the manifest was written")
    c = dict(doc["config"])
    c["sigma1"] = np.array(c["sigma1"])
    c["sigma2"] = np.array(c["sigma2"])
    if doc.get("beta_auto"):
        c["beta1"] = c["beta2"] = None
    cfg = solver.SolverConfig(**c)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outs = doc.get("outputs", {})
    est = str(out_dir / "estimate.g2o") if outs.get("estimate") else None
    trace = str(out_dir / "trace.csv") if outs.get("trace") else None
    return run_solve(doc["input"], cfg, doc["init"], est, trace, str(out_dir / "manifest.json"),
                     outs.get("timing", True))


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "eval": cmd_eval, "bench": cmd_bench, "replay": cmd_replay}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.cmd](args)
    except UsageError as exc:
        print(f"pgo-admm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
