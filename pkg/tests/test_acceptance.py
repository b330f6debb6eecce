"""The ten acceptance criteria at their pinned tolerances.

Each test prints one ``criterion N PASS|FAIL`` line; the lines are repeated
in the pytest terminal summary.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES, random_unit
from oracles import block_gradients, random_graph, random_psd, random_state

from pgo_admm import cli, metrics, quat, solver, synth
from pgo_admm.graph_io import parse_g2o
from pgo_admm.sphereqp import SphereQP, brute_oracle, solve_eig

pytestmark = pytest.mark.acceptance


@contextmanager
def criterion(num, title):
    notes = []
    t0 = time.perf_counter()
    ok = False
    try:
        yield notes
        ok = True
    finally:
        dt = time.perf_counter() - t0
        line = f"criterion {num} {'PASS' if ok else 'FAIL'} {title} ({dt:.1f} s)"
        if notes:
            line += ": " + "; ".join(notes)
        print(line)
        ACCEPTANCE_LINES.append(line)


def test_c1_quaternion_suite():
    with criterion(1, "quaternion algebra") as notes:
        t0 = time.perf_counter()
        rng = np.random.default_rng(1)
        a, b, c = random_unit(rng, 1000), rng.standard_normal((1000, 4)), rng.standard_normal((1000, 4))
        v = rng.standard_normal((1000, 3))
        M, W = quat.m_matrix(a), quat.w_matrix(b)
        errs = {
            "conj": np.max(np.abs(quat.m_matrix(quat.conj(b)) - np.swapaxes(quat.m_matrix(b), 1, 2))),
            "MW": np.max(np.abs(quat.mul(a, b) - np.einsum("nij,nj->ni", M, b)))
            + np.max(np.abs(quat.mul(a, b) - np.einsum("nij,nj->ni", W, a))),
            "orth": np.max(np.abs(np.swapaxes(quat.m_matrix(c), 1, 2) @ quat.m_matrix(c)
                                  - np.sum(c * c, 1)[:, None, None] * np.eye(4))) / np.max(np.sum(c * c, 1)),
            "compose": np.max(np.abs(quat.rotate(quat.mul(a, a[::-1]), v) - quat.rotate(a, quat.rotate(a[::-1], v)))),
            "norm": np.max(np.abs(np.linalg.norm(quat.rotate(a, v), axis=1) - np.linalg.norm(v, axis=1))),
        }
        th = quat.dist_angle(a, a[::-1])
        errs["dist"] = np.max(np.abs(quat.dist_chordal(a, a[::-1]) - 2 * np.sqrt(2) * np.sin(th / 2)))
        dt = time.perf_counter() - t0
        notes.append(f"max err {max(errs.values()):.1e}, {dt * 1e3:.0f} ms")
        assert errs["conj"] == 0 and errs["MW"] <= 1e-13 and errs["orth"] <= 1e-13
        assert errs["compose"] <= 1e-11 and errs["norm"] <= 1e-12 and errs["dist"] <= 1e-12
        assert dt < 1.0


def test_c2_sphere_qp_oracle():
    with criterion(2, "sphere-QP oracle equivalence") as notes:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2)
        probs = []
        for _ in range(100):
            B = rng.standard_normal((4, 4))
            probs.append(SphereQP(3 * (B + B.T) / 2, 3 * rng.standard_normal(4)))
        for _ in range(10):
            V, _ = np.linalg.qr(rng.standard_normal((4, 4)))
            a = np.sort(rng.uniform(-3, 3, 4))
            a[1:] += 0.5
            beta = np.r_[0.0, rng.uniform(-1, 1, 3)]
            beta[1:] *= rng.uniform(0.1, 0.9) / np.linalg.norm(beta[1:] / (a[1:] - a[0]))
            probs.append(SphereQP(V @ np.diag(a) @ V.T, V @ beta))
        gaps, kkt, hard = [], [], 0
        for prob in probs:
            sol = solve_eig(prob)
            hard += sol.path == "hard-case"
            gaps.append(sol.objective - brute_oracle(prob, samples=200_000, steps=50))
            stat, mineig, norm = sol.kkt_residuals(prob)
            kkt.append((stat, -mineig, abs(norm)))
        kkt = np.max(np.array(kkt), axis=0)
        dt = time.perf_counter() - t0
        notes.append(f"max gap {max(gaps):.1e}, kkt {kkt.max():.1e}, hard cases {hard}")
        assert max(gaps) <= 1e-6 and kkt[0] <= 1e-8 and kkt[1] <= 1e-8 and kkt[2] <= 1e-10
        assert hard >= 10 and dt < 30


def test_c3_subproblem_exactness():
    with criterion(3, "subproblem exactness") as notes:
        rng = np.random.default_rng(3)
        worst = {}
        for trial in range(6):
            n = int(rng.integers(2, 11))
            g = random_graph(rng, n, int(rng.integers(0, 2 * n)))
            kw = {} if trial % 2 == 0 else dict(sigma1=random_psd(rng), sigma2=random_psd(rng))
            cfg = solver.SolverConfig(beta1=2.0, beta2=3.0, h1=0.5, h2=0.2, h3=0.3, h4=0.1, **kw)
            for k, v in block_gradients(random_state(rng, n), g, cfg).items():
                worst[k] = max(worst.get(k, 0.0), v)
        notes.append(", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
        assert max(worst.values()) <= 1e-6


def test_c4_noiseless_recovery():
    with criterion(4, "noiseless recovery") as notes:
        clean = synth.NoiseSpec(enabled=False)
        for name, (truth, g) in [("ring", synth.gen_ring(20, clean)), ("cube", synth.gen_cube(synth.CubeSpec(3, 0.3), clean))]:
            res = solver.solve(g, solver.SolverConfig(), solver.chordal_init(g))
            err = metrics.evaluate(res.poses, truth).rel_err
            notes.append(f"{name} k={res.iterations} e={res.trace[-1].e:.1e} rel_err={err:.1e}")
            assert res.status == "converged" and res.trace[-1].e < 1e-4 and res.iterations <= 20 and err <= 1e-3


# (sigma_r, sigma_t) -> (Rel.Err, NRMSE) printed for the ring experiment
REFERENCE_RING = {(0.01, 0.01): (0.0689, 0.0343), (0.03, 0.05): (0.3085, 0.1536), (0.05, 0.1): (0.4724, 0.2352)}


def test_c5_ring_table():
    with criterion(5, "ring accuracy table") as notes:
        t0 = time.perf_counter()
        ok = True
        for (sr, st), (want_rel, want_nrmse) in REFERENCE_RING.items():
            rel, nr = [], []
            for seed in range(5):
                truth, g = synth.gen_ring(100, synth.NoiseSpec(sigma_t=st, sigma_r=sr, seed=seed))
                res = solver.solve(g, solver.SolverConfig())
                rep = metrics.evaluate(res.poses, truth)
                rel.append(rep.rel_err)
                nr.append(rep.nrmse)
            good = abs(np.mean(rel) - want_rel) <= 0.3 * want_rel and abs(np.mean(nr) - want_nrmse) <= 0.3 * want_nrmse
            ok &= good
            notes.append(f"{sr}/{st}: rel_err {np.mean(rel):.4f} vs {want_rel}, nrmse {np.mean(nr):.4f} vs {want_nrmse}"
                         f" {'ok' if good else 'out'}")
        dt = time.perf_counter() - t0
        assert ok and dt < 60


def suite():
    out = []
    for seed in range(2):
        for sr, st in REFERENCE_RING:
            out.append((f"ring{seed}-{sr}", synth.gen_ring(100, synth.NoiseSpec(st, sr, seed=seed))[1]))
        for k in (3, 4, 5):
            out.append((f"cube{k}-{seed}", synth.gen_cube(synth.CubeSpec(k, 0.3), synth.NoiseSpec(0.05, 0.03, seed=seed))[1]))
    return out


def test_c6_lyapunov_descent():
    with criterion(6, "Lyapunov descent") as notes:
        rise, dx, dlam = 0.0, 0.0, 0.0
        long_rise = 0.0
        for _, g in suite():
            cfg = solver.SolverConfig()
            res = solver.solve(g, cfg)
            assert res.config.beta1 == pytest.approx(max(1.0, 1.05 * res.estimates.beta_lower))
            psi = res.trace.column("psi")
            rise = max(rise, float(np.max(np.diff(psi), initial=-np.inf)))
            st = res.state
            dx = max(dx, max(float(np.linalg.norm(getattr(st, b) - getattr(st.prev, b))) for b in "pqts"))
            dlam = max(dlam, res.trace[-1].dlambda, res.trace[-1].dz)
            # a longer run with the same beta exercises the descent over many steps
            longer = solver.solve(g, cfg.replace(tol=1e-12, max_iter=40))
            long_rise = max(long_rise, float(np.max(np.diff(longer.trace.column("psi")))))
        notes.append(f"max psi rise {max(rise, long_rise):.1e}, final |dx| {dx:.1e}, final |dlambda| {dlam:.1e}"
                     f" (limit {10 * 1e-4:.0e})")
        assert max(rise, long_rise) <= 1e-8
        assert dx <= 10 * 1e-4 and dlam <= 10 * 1e-4


def test_c7_tau_range():
    with criterion(7, "tau robustness") as notes:
        _, g = synth.gen_ring(100, synth.NoiseSpec(sigma_t=0.05, sigma_r=0.03, seed=0))
        codes = {}
        for tau in (0.5, 1.0, 1.4, 1.9):
            res = solver.solve(g, solver.SolverConfig(tau=tau))
            codes[tau] = (0 if res.status == "converged" else 3, res.iterations)
        notes.append(", ".join(f"tau {t}: exit {c} in {k}" for t, (c, k) in codes.items()))
        assert all(c == 0 for c, _ in codes.values())


def test_c8_scalability():
    with criterion(8, "per-iteration scaling") as notes:
        ns, times = [], []
        for k in range(3, 9):
            per = []
            for seed in range(3):
                _, g = synth.gen_cube(synth.CubeSpec(k, 0.3), synth.NoiseSpec(seed=seed))
                res = solver.solve(g, solver.SolverConfig(tol=1e-300, max_iter=10))
                per.extend(res.trace.column("ms"))
            ns.append(k**3)
            times.append(float(np.median(per)))
        slope = np.polyfit(np.log(ns), np.log(times), 1)[0]
        notes.append(f"slope {slope:.3f}, ms/iter " + " ".join(f"{t:.2f}" for t in times))
        assert slope <= 1.15


def test_c9_determinism(tmp_path):
    with criterion(9, "thread determinism") as notes:
        prefix = tmp_path / "cube"
        cli.main(["gen", "cube", "--nhat", "5", "--p", "0.3", "--sigma-r", "0.03", "--sigma-t", "0.05", "--seed", "9",
                  "--out", str(prefix)])
        outputs = {}
        for c in ("1", "2"):
            for threads in (1, 4, 8):
                d = tmp_path / f"c{c}t{threads}"
                d.mkdir()
                cli.main(["solve", "--in", f"{prefix}.g2o", "--beta", "5", "--c", c, "--max-iter", "40",
                          "--threads", str(threads), "--seed", "0", "--out", str(d / "e.g2o"),
                          "--trace", str(d / "t.csv"), "--no-timing"])
                outputs[(c, threads)] = ((d / "e.g2o").read_bytes(), (d / "t.csv").read_bytes())
        same = all(outputs[(c, t)] == outputs[(c, 1)] for c in ("1", "2") for t in (4, 8))
        notes.append("g2o and csv byte-identical for 1/4/8 threads" if same else "outputs differ")
        assert same


def test_c10_benchmark_ingestion(sphere_path, tmp_path):
    with criterion(10, "benchmark ingestion") as notes:
        g, _ = parse_g2o(sphere_path)
        est = tmp_path / "est.g2o"
        code = cli.main(["solve", "--in", str(sphere_path), "--beta", "10", "--out", str(est)])
        init = solver.chordal_init(g)
        _, final = parse_g2o(est)
        before = metrics.edge_losses(init, g)
        after = metrics.edge_losses(final, g)
        ratios = [b / a for b, a in zip(before, after)]
        notes.append(f"n={g.n} m={g.m} exit {code}; chordal->solved loss ratios theta {ratios[0]:.2f},"
                     f" q {ratios[1]:.2f}, t {ratios[2]:.2f}")
        assert code == 0
        assert all(r >= 2.0 for r in ratios)
