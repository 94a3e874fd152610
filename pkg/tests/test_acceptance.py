"""Acceptance criteria 1 to 12, one test each.

Every test prints a single ``criterion N: PASS|FAIL ...`` line, which is also
collected into the terminal summary.  Tolerances are the stated ones; a
criterion that does not hold for this model fails here rather than being
relaxed.
"""

import math

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from ncelandscape.cli import main
from ncelandscape.cli.config import OUTPUT_ENV, parse_config
from ncelandscape.cli.experiment import run_experiment
from ncelandscape.expfam import GaussianMean1D
from ncelandscape.landscape import (
    annulus_probe,
    bhattacharyya,
    newton_stall,
    ngd_budget_run,
    pair_checks,
)
from ncelandscape.numerics import sym_eigen
from ncelandscape.objective import Objective, Quadrature, batch_evaluation

SQRT_2PI = math.sqrt(2 * math.pi)


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


@pytest.fixture(scope="module")
def pairs():
    return {c.claim.split("[")[0]: c for c in pair_checks(20, seed=0)}


def test_criterion_01_initial_loss():
    errs = {R: abs(Objective.gaussian_1d(R).population_loss(Objective.gaussian_1d(R).tau_q) - math.log(2))
            for R in (2, 4, 8, 16)}
    worst = max(errs.values())
    assert record(1, worst <= 1e-9, f"max |L(tau_q) - log 2| = {worst:.3g} (tol 1e-9)")


def test_criterion_02_optimal_loss_window():
    cs = {}
    for R in (4, 6, 8):
        o = Objective.gaussian_1d(R)
        cs[R] = o.population_loss(o.tau_star) * math.exp(R * R / 8)
    ok = all(0.5 <= c <= 2 for c in cs.values())
    detail = ", ".join(f"R={R}: c={c:.4f}" for R, c in cs.items())
    assert record(2, ok, f"L(tau*) exp(R^2/8) in [0.5, 2]; {detail}")


def test_criterion_03_flat_optimum():
    parts, ok = [], True
    for R in (4, 6, 8):
        o = Objective.gaussian_1d(R)
        eig = sym_eigen(o.population_hessian(o.tau_star))
        bc = math.exp(-R * R / 8)
        ub, lb = R / SQRT_2PI * bc, bc / (4 * R * SQRT_2PI)
        ok &= eig.max <= ub and eig.min >= lb
        parts.append(f"R={R}: smax {eig.max:.3g}<={ub:.3g} {'ok' if eig.max <= ub else 'no'}, "
                     f"smin {eig.min:.3g}>={lb:.3g} {'ok' if eig.min >= lb else 'no'}")
    assert record(3, ok, "; ".join(parts))


def test_criterion_04_curvature_at_noise():
    parts, ok = [], True
    for R in (4, 8, 16):
        o = Objective.gaussian_1d(R)
        smax = sym_eigen(o.population_hessian(o.tau_q)).max
        ref = (R * R + 2) / 8
        good = smax >= R * R / 8 and ref / 2 <= smax <= 2 * ref
        ok &= good
        parts.append(f"R={R}: smax {smax:.6g} (R^2/8 {R * R / 8:g}, (R^2+2)/8 {ref:g}, R^2/2 {R * R / 2:g})")
    assert record(4, ok, "; ".join(parts))


def test_criterion_05_annulus_flatness():
    parts, ok = [], True
    for R in (8, 12):
        o = Objective.gaussian_1d(R)
        worst = max(p.projected_gradient for p in annulus_probe(o, 50, seed=0))
        env = math.exp(-0.6 * R * R / 8)
        ok &= worst <= env
        parts.append(f"R={R}: max projected gradient {worst:.3g} <= {env:.3g}")
    assert record(5, ok, "; ".join(parts))


@pytest.fixture(scope="module")
def r16_table():
    return run_experiment(parse_config("gauss1d_r16"))


def _final_min(table, loss, algo):
    runs = sorted({r.run for r in table.select(loss, algo)})
    return float(np.mean([table.select(loss, algo, k)[-1].min_dist for k in runs]))


def test_criterion_06_gd_stall_vs_ngd(r16_table):
    R = 16
    gd_rows = r16_table.select("nce", "gd")
    gd_floor = min(r.min_dist for r in gd_rows)
    gd = _final_min(r16_table, "nce", "gd")
    nce_ngd = _final_min(r16_table, "nce", "ngd")
    ence_ngd = _final_min(r16_table, "ence", "ngd")
    stall = gd_floor >= 0.1 * R
    ok = stall and nce_ngd < 0.1 * gd and ence_ngd < 0.1 * gd
    assert record(6, ok, f"NCE+GD min distance floor {gd_floor:.4g} (>= {0.1 * R:g}: {stall}); final NCE+GD {gd:.4g}, "
                         f"NCE+NGD {nce_ngd:.4g}, eNCE+NGD {ence_ngd:.4g} (need < {0.1 * gd:.4g})")


def test_ence_reaches_thresholds_no_later_than_nce(r16_table):
    def first_hit(loss, level):
        runs = sorted({r.run for r in r16_table.select(loss, "ngd")})
        series = np.mean([[r.min_dist for r in r16_table.select(loss, "ngd", k)] for k in runs], axis=0)
        hit = np.nonzero(series <= level)[0]
        return int(hit[0]) if len(hit) else math.inf

    hits = {level: (first_hit("ence", level), first_hit("nce", level)) for level in (10, 1)}
    print("eNCE vs NCE first step at threshold:", hits)
    assert all(e <= n for e, n in hits.values()), hits


def test_criterion_07_newton_stall():
    eta, trace = newton_stall(16.0, steps=100)
    R = 16.0
    d = trace.dists
    inside = (d >= 0.1 * R) & (d <= 0.2 * R)
    decrease = d[:-1] - d[1:]
    mask = inside[:-1]
    worst = float(decrease[mask].max()) if mask.any() else math.nan
    ok = len(trace) == 101 and inside.all() and worst < 1e-6
    assert record(7, ok, f"eta {eta:.3g}, {inside.sum()}/{len(d)} iterates in the annulus, "
                         f"max per-step decrease {worst:.3g} (< 1e-6)")


def test_criterion_08_ence_condition_number(pairs):
    c = pairs["ence_kappa_pairs"]
    assert record(8, c.verdict == "PASS", f"20 pairs, worst kappa* {c.measured:.6g} vs lambda ratio {c.bound:.6g}")


def test_criterion_09_ence_optimum_is_bc():
    fam = GaussianMean1D()
    gaps, quad = [], []
    for R in (1, 2, 4):
        o = Objective.gaussian_1d(R, "ence", backend=Quadrature(rel_tol=1e-13))
        bc = bhattacharyya(fam, o.tau_star.theta, o.tau_q.theta)
        gaps.append(abs(o.population_loss(o.tau_star) - bc))
        quad.append(abs(bc - bhattacharyya(fam, o.tau_star.theta, o.tau_q.theta, method="quadrature")))
    ok = max(gaps) <= 1e-8 and max(quad) <= 1e-8
    assert record(9, ok, f"max |L_exp(tau*) - BC| {max(gaps):.3g}, closed vs quadrature BC {max(quad):.3g} (tol 1e-8)")


def test_criterion_10_ngd_budget():
    parts, ok = [], True
    for R in (2, 4):
        for delta in (0.1, 0.05):
            res = ngd_budget_run(R, delta)
            hit = res.first_hit if res.first_hit is not None else math.inf
            good = hit <= res.budget_ence and hit <= res.budget_ngd
            ok &= good
            parts.append(f"R={R} delta={delta}: hit {hit} <= {res.budget_ence:.3g} and {res.budget_ngd:.3g}")
    assert record(10, ok, "; ".join(parts))


def test_criterion_11_bc_bounds(pairs):
    bc, kap = pairs["bc_lower_bound"], pairs["nce_kappa_bc"]
    ok = bc.verdict == "PASS" and kap.verdict == "PASS"
    assert record(11, ok, f"min BC {bc.measured:.4g} >= 0.5 ({bc.verdict}); worst kappa* {kap.measured:.4g} "
                          f"<= {kap.bound:.4g} ({kap.verdict})")


# criterion 12: property suites

def _random_taus(o, n, seed, spread=2.0):
    rng = np.random.default_rng(seed)
    star, q = o.tau_star.vector, o.tau_q.vector
    t = rng.uniform(0, 1, n)[:, None]
    return q + t * (star - q) + rng.uniform(-spread, spread, (n, 2))


def _property_results():
    results = {}
    fine = Quadrature(rel_tol=1e-13)
    worst_eig, worst_g, worst_h, worst_cvx, worst_z = math.inf, 0.0, 0.0, -math.inf, 0.0
    for kind in ("nce", "ence"):
        o = Objective.gaussian_1d(4, kind, backend=fine)
        for tau in _random_taus(o, 50, seed=1):
            ev = o.evaluate(tau, order=2)
            worst_eig = min(worst_eig, sym_eigen(ev.hessian).min)
        for tau in _random_taus(o, 10, seed=2):
            ev = o.evaluate(tau, order=2)
            h = 1e-4
            g_fd = np.array([(o.population_loss(tau + h * e) - o.population_loss(tau - h * e)) / (2 * h)
                             for e in np.eye(2)])
            worst_g = max(worst_g, np.linalg.norm(g_fd - ev.gradient) / np.linalg.norm(ev.gradient))
            h_fd = np.column_stack([(o.population_gradient(tau + h * e) - o.population_gradient(tau - h * e)) / (2 * h)
                                    for e in np.eye(2)])
            worst_h = max(worst_h, np.linalg.norm(h_fd - ev.hessian) / np.linalg.norm(ev.hessian))
        a, b = _random_taus(o, 50, seed=3), _random_taus(o, 50, seed=4)
        for x, y in zip(a, b):
            f = [o.population_loss(x + t * (y - x)) for t in (0.0, 0.25, 0.5, 0.75, 1.0)]
            # second differences along the segment are non-negative for a convex function
            for k in range(1, 4):
                worst_cvx = max(worst_cvx, (2 * f[k] - f[k - 1] - f[k + 1]) / max(abs(f[k]), 1e-300) - 1e-9)
        o2 = Objective.gaussian_1d(2, kind)
        batch = o2.sample_batch(20_000, seed=5)
        for tau in _random_taus(o2, 10, seed=6, spread=0.5):
            ev = batch_evaluation(kind, o2.family, o2.tau_q, tau, batch, order=1, with_se=True)
            pop = o2.evaluate(tau, order=1)
            worst_z = max(worst_z, abs(ev.loss - pop.loss) / ev.loss_se,
                          *(np.abs(ev.gradient - pop.gradient) / ev.gradient_se))
    results["psd"] = (worst_eig >= -1e-10, f"min Hessian eigenvalue {worst_eig:.3g}")
    results["grad_fd"] = (worst_g <= 1e-5, f"gradient fd rel {worst_g:.2g}")
    results["hess_fd"] = (worst_h <= 1e-4, f"Hessian fd rel {worst_h:.2g}")
    results["convex"] = (worst_cvx <= 0, "convex on 50 segments" if worst_cvx <= 0 else f"non-convex {worst_cvx:.3g}")
    results["empirical"] = (worst_z <= 4, f"max empirical-population gap {worst_z:.2f} se")
    return results


def _cli_reruns_identical(tmp_path, monkeypatch):
    cfg = tmp_path / "small.ini"
    cfg.write_text("[family]\nkind = gaussian_mean_1d\ntheta_star = 4\n[objective]\nlosses = nce, ence\n"
                   "backend = montecarlo\nbatch_size = 64\n[optimizer]\nalgorithms = gd, ngd\nsteps = 10\n"
                   "eta.ngd = 0.5\n[run]\nruns = 2\nannulus_points = 5\n[output]\nprefix = rerun\n")
    same = True
    for cmd in ("run", "verify", "landscape"):
        outs = []
        for k in range(2):
            d = tmp_path / f"{cmd}{k}"
            monkeypatch.setenv(OUTPUT_ENV, str(d))
            status = main([cmd, "-q", str(cfg)])
            outs.append((status, {p.name: p.read_bytes() for p in sorted(d.iterdir())}))
        same &= outs[0] == outs[1] and bool(outs[0][1])
    return same


def test_criterion_12_property_suites(tmp_path, monkeypatch, capsys):
    results = _property_results()
    results["cli"] = (_cli_reruns_identical(tmp_path, monkeypatch), "byte-identical CLI reruns")
    capsys.readouterr()
    ok = all(v[0] for v in results.values())
    assert record(12, ok, "; ".join(d for _, d in results.values()))

