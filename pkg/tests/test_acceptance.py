"""Desk-scale quantitative acceptance checks.

Every test prints one ``PASS`` or ``FAIL`` line naming its criterion, then
asserts. Run with ``pytest tests/test_acceptance.py -v`` to see the lines
next to the test names.
"""

import json
import math

import numpy as np
import pytest

from cmllab.cli import main
from cmllab.curvelab import (DiagonalHit, Grown, Polyline, growth_exponent, growth_step,
                             iterate_curve, random_segment, regular_point_ratio)
from cmllab.lemmacalc import (admissible_segment_length, derive_iteration_constants,
                              expansion_bounds, survivor_audit)
from cmllab.maps import CouplingSpec, LatticeSystem, StandardTent, step_batch, two_node_tent
from cmllab.orbit import (OrbitConfig, dist_syn, dist_syn_quadratic, initial_state, run_ensemble,
                          same_cell_expansion_floor, transverse_factor)
from cmllab.polytope import center_point_audit
from cmllab.sweeps import IntermittencyScore, SweepSpec, SyncWithin, bifurcation_scan


def report(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number:>2} ({title}): {detail}")


def test_01_bifurcation_localization(capsys):
    spec = SweepSpec.from_grid(0.20, 0.30, 0.01, seeds_per_c=64,
                               predicate=SyncWithin(tol=1e-9, horizon=1_000_000, sustain=1000))
    res = bifurcation_scan(two_node_tent(0.25), spec, refine_iterations=6)
    fractions = {round(r.c, 2): r.sync_fraction for r in res.rows}
    ok = res.c_star is not None and 0.24 <= res.c_star <= 0.26
    report(capsys, 1, "bifurcation localization", ok,
           f"c* = {res.c_star:.6f}, bracket {res.c_star_interval}, sync fractions {fractions}")
    assert ok


def test_02_intermittency(capsys):
    spec = SweepSpec([0.1], seeds_per_c=100,
                     predicate=IntermittencyScore(eps=1e-6, gamma=1e-3, min_below=1e-4,
                                                  max_above=2.0 ** -20, min_alternations=1),
                     orbit=OrbitConfig(n_steps=10_000_000, burn_in=1000))
    res = bifurcation_scan(two_node_tent(0.1), spec)
    n_ok = sum(r.holds for r in res.runs)
    alts = [r.alternations for r in res.runs]
    ok = n_ok >= 99
    report(capsys, 2, "intermittency", ok,
           f"{n_ok}/100 seeds qualify; alternations min {min(alts)}, median {int(np.median(alts))}; "
           f"min dist max {max(r.min_dist for r in res.runs):.3g}")
    assert ok


def test_03_synchronization(capsys):
    s = two_node_tent(0.3)
    # strict "dist < 1e-9": the largest double below 1e-9 as the (<=) tolerance
    cfg = OrbitConfig(n_steps=100_000, sync_tol=np.nextafter(1e-9, 0.0), sync_sustain=1)
    stats = run_ensemble(s, cfg, list(range(100)))
    good = [st for st in stats if st.sync_time is not None and st.max_dist_after_sync <= 1e-8]
    ok = len(good) >= 99
    times = [st.sync_time for st in stats if st.sync_time is not None]
    report(capsys, 3, "synchronization regime", ok,
           f"{len(good)}/100 seeds synchronize and stay below 1e-8; "
           f"sync time max {max(times) if times else None}")
    assert ok


def test_04_transverse_law(capsys):
    rng = np.random.default_rng(4)
    worst = {}
    for c in (0.0, 0.05, 0.1, 0.25):
        # both coordinates on the left branch or both on the right
        side = rng.integers(0, 2, (1_000_000, 1))
        X = 0.5 * side + 0.5 * rng.random((1_000_000, 2))
        X = X[(X[:, 0] != X[:, 1]) & np.all(X != 0.5, axis=1)]
        ratio = transverse_factor(two_node_tent(c), X)
        worst[c] = float(np.max(np.abs(ratio / (2 * (1 - 2 * c)) - 1)))
    ok = all(v < 1e-12 for v in worst.values())
    report(capsys, 4, "exact transverse law", ok,
           "max relative deviation " + ", ".join(f"c={c}: {v:.2e}" for c, v in worst.items()))
    assert ok


def test_05_component_budget(capsys):
    rng = np.random.default_rng(5)
    counts = []
    for _ in range(1000):
        c = 0.05 * rng.random()
        seg = random_segment(rng, 2.0 ** -16 * rng.random() + 1e-12)
        counts.append(iterate_curve(two_node_tent(c), seg, 6).count(6))
    bad = sum(n > 4 for n in counts)
    ok = bad == 0
    report(capsys, 5, "component budget", ok,
           f"{bad}/1000 roots exceed 4 components at depth 6; histogram "
           f"{ {int(k): int(v) for k, v in zip(*np.unique(counts, return_counts=True))} }")
    assert ok


def test_06_growth_dichotomy(capsys):
    rng = np.random.default_rng(6)
    outcomes = {"DiagonalHit": 0, "Grown": 0, "Fail": 0}
    short = 0
    worst = math.inf
    for _ in range(1000):
        c = 0.05 * rng.random()
        s = two_node_tent(c)
        e = growth_exponent(2 * (1 - 2 * c))
        length = 2.0 ** -16 * (1 + rng.random())
        out = growth_step(s, random_segment(rng, length, single_cell=True))
        outcomes[out.kind] += 1
        if isinstance(out, Grown):
            worst = min(worst, out.factor - (1 + e))
            if out.factor < 1 + e - 1e-6:
                short += 1
    ok = outcomes["Fail"] == 0 and short == 0
    report(capsys, 6, "growth dichotomy", ok,
           f"outcomes {outcomes}; Grown short of 1+e-1e-6: {short}; smallest margin {worst:.4f}")
    assert ok


def test_07_iteration_lemma(capsys):
    k0 = derive_iteration_constants(expansion_bounds(two_node_tent(0.0), "curve"), 4, 6, 2.0 ** -16, 2.0)
    exact = k0.d == 1 / 3 and k0.mu_upper == 3.0
    # mu near 1 keeps the admissible lengths 2^-(mu^(N+1)) .. 2^-(mu^N) representable
    mu, N = 1.2, 19
    rng = np.random.default_rng(7)
    fails, margins = 0, []
    for _ in range(100):
        c = 0.05 * rng.random()
        s = two_node_tent(c)
        consts = derive_iteration_constants(expansion_bounds(s, "curve"), 4, 6, 2.0 ** -16, mu)
        seg = random_segment(rng, admissible_segment_length(rng, mu, N))
        audit = survivor_audit(s, seg, N, consts, slack=1e-3)
        fails += not audit.ok
        margins.append(audit.measured - audit.bound)
    ok = exact and fails == 0
    report(capsys, 7, "iteration lemma audit", ok,
           f"c=0: d = {k0.d!r}, mu_upper = {k0.mu_upper!r}; survivor audits failing {fails}/100, "
           f"smallest margin {min(margins):.4f}")
    assert ok


def test_08_center_point(capsys):
    a2 = center_point_audit(two_node_tent(0.05), 10_000, seed=8, eps=0.1)
    s3 = LatticeSystem(StandardTent(), CouplingSpec.all_to_all(3), 0.05)
    a3 = center_point_audit(s3, 1000, seed=9, eps=0.1)
    ok = (not a2.counterexamples and not a3.counterexamples
          and a2.eps_failures == 0 and a3.eps_failures == 0)
    report(capsys, 8, "center-point lemma", ok,
           f"m=2: {a2.all_hit} all-cells images, {len(a2.counterexamples)} counterexamples, "
           f"{a2.eps_failures}/{len(a2.eps_checks)} eps failures; "
           f"m=3: {a3.all_hit} all-cells images, {len(a3.counterexamples)} counterexamples, "
           f"{a3.eps_failures}/{len(a3.eps_checks)} eps failures")
    assert ok


def test_09_distance_machinery(capsys):
    rng = np.random.default_rng(9)
    dev = {}
    for m in (2, 3, 5, 8):
        X = rng.random((1_000_000, m))
        dev[m] = float(np.max(np.abs(dist_syn(X) - dist_syn_quadratic(X))))
    worst_ratio = {}
    for name, coup, c in (("two-node c=0.1", CouplingSpec.two_node(), 0.1),
                          ("all-to-all m=3 c=0.05", CouplingSpec.all_to_all(3), 0.05)):
        s = LatticeSystem(StandardTent(), coup, c)
        m = coup.m
        # points of the two cells that meet the diagonal: all coordinates on one side
        J = rng.integers(0, 2, (1_000_000, 1))
        X = 0.5 * J + 0.5 * rng.random((1_000_000, m))
        d0 = dist_syn(X)
        keep = d0 > 0
        r = dist_syn(step_batch(s, X[keep])) ** 2 / d0[keep] ** 2
        worst_ratio[name] = float(np.min(r) / same_cell_expansion_floor(coup, c))
    ok = all(v < 1e-12 for v in dev.values()) and all(v >= 1 - 1e-12 for v in worst_ratio.values())
    report(capsys, 9, "distance machinery", ok,
           "pairwise vs quadratic " + ", ".join(f"m={m}: {v:.1e}" for m, v in dev.items())
           + "; min factor / floor " + ", ".join(f"{k}: {v:.4f}" for k, v in worst_ratio.items()))
    assert ok


def test_10_regular_points(capsys):
    rng = np.random.default_rng(10)
    s = two_node_tent(0.05)
    fails, min_bound, min_margin = 0, 1.0, math.inf
    for _ in range(100):
        d = 2.0 ** -(12 + 4 * rng.random())
        length = 2.0 ** -8 * (1 + rng.random())
        L = length / math.sqrt(2)
        off = d * math.sqrt(2)
        while True:
            J = rng.integers(0, 2)
            lo = 0.5 * J
            x1 = lo + (0.5 - L - off) * rng.random()
            a = np.array([x1, x1 + off]) if rng.random() < 0.5 else np.array([x1 + off, x1])
            b = a + L
            if np.all(a >= lo) and np.all(b <= lo + 0.5):
                break
        res = regular_point_ratio(s, Polyline([a, b]))
        fails += not (res.ok and res.bound > 0.5)
        min_bound = min(min_bound, res.bound)
        min_margin = min(min_margin, res.measured - res.bound)
    ok = fails == 0
    report(capsys, 10, "regular-point bound", ok,
           f"{fails}/100 segments fail; smallest bound {min_bound:.4f}, "
           f"smallest measured - bound {min_margin:.4f} (slack {3 / math.sqrt(1e5):.4f})")
    assert ok


def test_11_manifest_replay(tmp_path, capsys):
    runs = {
        "simulate": ["simulate", "--c", "0.12", "--steps", "2e5", "--trace-stride", "1000", "--seeds", "3"],
        "scan": ["scan", "--c-lo", "0.24", "--c-hi", "0.26", "--c-step", "0.01", "--seeds-per-c", "8",
                 "--horizon", "5e4", "--plot"],
        "curve": ["curve", "--demo", "components", "--depth", "8", "--c", "0.05"],
        "polytope": ["polytope", "--audit", "50", "--m", "3", "--coupling", "all-to-all"],
        "lemma": ["lemma", "--c", "0.02"],
    }
    results = {}
    for name, args in runs.items():
        out = tmp_path / name
        assert main(args + ["--seed", "11", "--out-dir", str(out), "--format", "json"]) == 0
        code = main(["replay", str(out / "manifest.json"), "--out-dir", str(tmp_path / f"{name}-replay")])
        n_files = len(json.loads((out / "manifest.json").read_text())["outputs"])
        results[name] = (code, n_files)
    ok = all(code == 0 for code, _ in results.values())
    report(capsys, 11, "determinism", ok,
           ", ".join(f"{k}: {'identical' if v[0] == 0 else 'MISMATCH'} ({v[1]} files)"
                     for k, v in results.items()))
    assert ok
