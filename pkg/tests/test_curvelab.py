import math

import numpy as np
import pytest

from cmllab.curvelab import (DiagonalHit, Grown, Polyline, diagonal_pullback, flatness_audit,
                             good_subtree_counts, growth_exponent, growth_step, iterate_curve,
                             map_curve, pullback_scan, random_segment, range_of_angles,
                             regular_point_ratio, split_at_folds)
from cmllab.errors import CellMismatchError, ComponentExplosion, PreconditionError
from cmllab.maps import CouplingSpec, LatticeSystem, PerturbedTent, two_node_tent


def _cells_by_sampling(a, b, n=200_001):
    """Ordered list of distinct open-cell labels met along the segment a->b."""
    t = np.linspace(0, 1, n)
    P = np.asarray(a) + t[:, None] * (np.asarray(b) - np.asarray(a))
    P = P[np.all(P != 0.5, axis=1)]
    lab = [tuple(x) for x in (P > 0.5).astype(int)]
    out = [lab[0]]
    for x in lab[1:]:
        if x != out[-1]:
            out.append(x)
    return out


def test_polyline_invariants():
    with pytest.raises(PreconditionError):
        Polyline([[0.1, 0.1]])
    with pytest.raises(PreconditionError):
        Polyline([[0.1, 0.1], [0.1, 0.1]])
    with pytest.raises(PreconditionError):
        Polyline([[0.1, 0.1], [0.4, 0.4], [0.1, 0.4], [0.4, 0.1]])
    assert Polyline([[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]]).slope_class == 1
    assert Polyline([[0.1, 0.3], [0.2, 0.2]]).slope_class == -1
    assert Polyline([[0.1, 0.3], [0.2, 0.25]]).slope_class is None


def test_split_single_cell():
    pieces = split_at_folds(Polyline.segment([0.2, 0.3], [0.4, 0.5]))
    assert len(pieces) == 1 and pieces[0][1] == (0, 0)


def test_split_symmetric_crossing():
    pieces = split_at_folds(Polyline.segment([0.4, 0.4], [0.6, 0.6]))
    assert [J for _, J in pieces] == [(0, 0), (1, 1)]
    assert np.allclose(pieces[0][0].vertices[-1], [0.5, 0.5])
    assert np.array_equal(pieces[0][0].vertices[-1], pieces[1][0].vertices[0])


def test_split_two_crossings_matches_sampling():
    a, b = [0.45, 0.40], [0.55, 0.60]
    pieces = split_at_folds(Polyline.segment(a, b))
    # x1 = 1/2 and x2 = 1/2 are both crossed at t = 1/2, so the segment
    # passes through the centre and meets just two open cells
    assert [J for _, J in pieces] == _cells_by_sampling(a, b)
    a, b = [0.45, 0.40], [0.60, 0.60]
    pieces = split_at_folds(Polyline.segment(a, b))
    assert len(pieces) == 3
    assert [J for _, J in pieces] == _cells_by_sampling(a, b)


def test_split_lengths_sum():
    rng = np.random.default_rng(2)
    for _ in range(200):
        V = np.cumsum(rng.normal(0, 0.05, (12, 2)), axis=0) + 0.5
        V = np.clip(V, 0, 1)
        try:
            curve = Polyline(V)
        except PreconditionError:
            continue
        total = sum(p.length for p, _ in split_at_folds(curve))
        assert total == pytest.approx(curve.length, rel=1e-12)


def test_map_curve_uncoupled_doubling():
    s = two_node_tent(0.0)
    img = map_curve(s, Polyline.segment([0.1, 0.2], [0.2, 0.3]), (0, 0))
    assert img.slope_class == 1
    assert img.length == pytest.approx(2 * math.sqrt(2) * 0.1, rel=1e-12)


def test_map_curve_opposite_branches():
    s = two_node_tent(0.1)
    piece = Polyline.segment([0.1, 0.6], [0.2, 0.7])
    img = map_curve(s, piece, (0, 1))
    assert img.slope_class == -1
    assert img.length / piece.length == pytest.approx(1.6, rel=1e-12)


def test_map_curve_cell_mismatch():
    with pytest.raises(CellMismatchError):
        map_curve(two_node_tent(0.1), Polyline.segment([0.1, 0.1], [0.2, 0.2]), (1, 0))


def test_map_curve_perturbed_flatness():
    f = PerturbedTent(0.05, [-2e-5, 1e-5])
    s = LatticeSystem(f, CouplingSpec.two_node(), 0.05)
    piece = Polyline.segment([0.1, 0.12], [0.1 + 1e-3, 0.12 + 1e-3])
    img = map_curve(s, piece, (0, 0), h=1e-5)
    a = np.linalg.norm(s.matrix, 2) * f.sup_d2
    # oracle: tangents sampled directly from the smooth image curve
    t = np.linspace(0, 1, 2001)
    X = piece.vertices[0] + t[:, None] * (piece.vertices[1] - piece.vertices[0])
    from cmllab.maps import step_batch

    Y = step_batch(s, X)
    U = np.diff(Y, axis=0)
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    sampled = np.max(np.linalg.norm(U - U[0], axis=1))
    assert range_of_angles(img) <= a * piece.length * (1 + 1e-6)
    assert sampled <= a * piece.length * (1 + 1e-6)


def test_iterate_diagonal_root_stays_on_diagonal():
    s = two_node_tent(0.1)
    forest = iterate_curve(s, Polyline.segment([0.1, 0.1], [0.3, 0.3]), 8)
    for level in forest.levels:
        for comp in level:
            V = comp.curve.vertices
            assert np.all(V[:, 0] == V[:, 1])


def test_iterate_c0_doubling():
    rng = np.random.default_rng(4)
    s = two_node_tent(0.0)
    for _ in range(20):
        root = random_segment(rng, 2.0 ** -12)
        forest = iterate_curve(s, root, 8)
        for k in range(9):
            assert forest.total_length(k) == pytest.approx(2 ** k * root.length, rel=1e-9)
        assert all(forest.within_bounds)


def test_forest_partitions_root():
    rng = np.random.default_rng(5)
    s = two_node_tent(0.05)
    root = random_segment(rng, 0.2)
    forest = iterate_curve(s, root, 5)
    for k in range(6):
        iv = sorted(c.interval for c in forest.components(k))
        assert iv[0][0] == pytest.approx(0.0, abs=1e-12)
        assert iv[-1][1] == pytest.approx(1.0, abs=1e-12)
        for (a0, a1), (b0, b1) in zip(iv, iv[1:]):
            assert b0 == pytest.approx(a1, abs=1e-12)
        for comp in forest.components(k):
            V = comp.curve.vertices
            J = np.array(comp.cell)
            assert np.all(np.where(J == 1, V >= 0.5, V <= 0.5))


def test_component_budget_small_sample():
    rng = np.random.default_rng(6)
    s = two_node_tent(0.05)
    for _ in range(50):
        root = random_segment(rng, 2.0 ** -17)
        assert iterate_curve(s, root, 6).count(6) <= 4


def test_component_explosion_carries_forest():
    s = two_node_tent(0.0)
    root = Polyline.segment([0.05, 0.2], [0.95, 0.2])
    with pytest.raises(ComponentExplosion) as exc:
        iterate_curve(s, root, 10, cap=8)
    assert exc.value.forest is not None
    assert exc.value.forest.depth >= 1


def test_forest_export():
    s = two_node_tent(0.1)
    forest = iterate_curve(s, Polyline.segment([0.3, 0.3], [0.7, 0.7]), 2)
    rows = forest.to_rows()
    assert {"depth", "id", "parent", "cell", "length", "r_a"} <= set(rows[0])
    assert len(rows) == sum(forest.count(k) for k in range(3))
    d = forest.to_dict()
    assert len(d["stats"]) == 3
    assert sum(len(n["children"]) for n in d["components"]) == forest.count(1)


def test_range_of_angles_examples():
    assert range_of_angles(Polyline.segment([0.1, 0.1], [0.4, 0.3])) == 0.0
    assert range_of_angles(Polyline([[0.1, 0.1], [0.2, 0.1], [0.2, 0.2]])) == pytest.approx(math.sqrt(2))
    th = math.pi / 3
    V = [[0.1, 0.1], [0.2, 0.1], [0.2 + 0.1 * math.cos(th), 0.1 + 0.1 * math.sin(th)]]
    assert range_of_angles(Polyline(V)) == pytest.approx(1.0, abs=1e-12)


def test_range_of_angles_large_curve_matches_pairwise():
    rng = np.random.default_rng(7)
    th = np.cumsum(rng.normal(0, 0.01, 1500))
    V = 0.3 + np.cumsum(np.stack([np.cos(th), np.sin(th)], 1) * 2e-4, axis=0)
    curve = Polyline(V, check=False)
    U = curve.tangents
    brute = max(np.max(np.linalg.norm(U - u, axis=1)) for u in U)
    assert range_of_angles(curve) == pytest.approx(brute, abs=1e-9)


def test_growth_exponent():
    assert growth_exponent(2.0) == pytest.approx(1 / 3)
    assert growth_exponent(1.8) == pytest.approx(1.8 ** 2 / 2.8 - 1)


def test_growth_step_uncoupled():
    s = two_node_tent(0.0)
    seg = Polyline.segment([0.1, 0.2], [0.1 + 2.0 ** -15, 0.2 + 2.0 ** -15])
    out = growth_step(s, seg)
    assert isinstance(out, Grown)
    assert out.factor == pytest.approx(2.0, rel=1e-9)
    assert out.factor >= 4 / 3


def test_growth_step_diagonal_hit():
    s = two_node_tent(0.05)
    d = 2.0 ** -15
    seg = Polyline.segment([0.3 - d, 0.3 + d], [0.3 + d, 0.3 - d])
    out = growth_step(s, seg)
    assert isinstance(out, DiagonalHit) and out.depth == 0


def test_growth_step_preconditions():
    s = two_node_tent(0.05)
    with pytest.raises(PreconditionError):
        growth_step(s, Polyline.segment([0.1, 0.1], [0.1 + 2.0 ** -20, 0.1 + 2.0 ** -20]))
    with pytest.raises(PreconditionError):
        growth_step(s, Polyline.segment([0.45, 0.1], [0.55, 0.2]))
    with pytest.raises(PreconditionError):
        growth_step(s, Polyline.segment([0.1, 0.1], [0.1 + 1e-4, 0.1 + 2e-4]))


def test_growth_step_random_no_fail():
    rng = np.random.default_rng(8)
    s = two_node_tent(0.05)
    for _ in range(100):
        seg = random_segment(rng, 2.0 ** -16 * (1 + rng.random()), single_cell=True)
        out = growth_step(s, seg)
        assert isinstance(out, (DiagonalHit, Grown))


def test_pullback_root_in_strip():
    s = two_node_tent(0.1)
    root = Polyline.segment([0.2, 0.2 + 1e-4], [0.3, 0.3 + 1e-4])
    hits = diagonal_pullback(iterate_curve(s, root, 3), 1e-3)
    assert len(hits) == 1
    (a, b), k = hits[0]
    assert (a, b, k) == (0.0, 1.0, 0)


def test_pullback_antidiagonal_through_centre():
    eps = 0.1
    s = two_node_tent(0.1)
    root = Polyline.segment([0.1, 0.9], [0.9, 0.1])
    hits = diagonal_pullback(iterate_curve(s, root, 0), eps)
    # the strip |x1 - x2| <= eps sqrt(2) cuts a piece of length 2 eps from the
    # root of length 0.8 sqrt(2)
    (a, b), k = hits[0]
    assert k == 0
    assert (b - a) * root.length == pytest.approx(2 * eps, rel=1e-12)


def test_pullback_hits_disjoint_and_scan_agrees():
    rng = np.random.default_rng(9)
    s = two_node_tent(0.1)
    root = random_segment(rng, 0.05)
    forest = iterate_curve(s, root, 8)
    hits = diagonal_pullback(forest, 1e-2)
    iv = sorted(h[0] for h in hits)
    for (a0, a1), (b0, b1) in zip(iv, iv[1:]):
        assert b0 >= a1 - 1e-15
    scan = pullback_scan(s, root, 8, 1e-2)
    per = np.zeros(9)
    for (a, b), k in hits:
        per[k] += b - a
    assert np.allclose(scan.per_depth, per, atol=1e-12)
    assert np.all(np.diff(scan.cumulative_fraction) >= 0)


def test_pullback_against_point_sampling():
    rng = np.random.default_rng(10)
    s = two_node_tent(0.1)
    root = random_segment(rng, 0.1)
    eps, depth = 1e-2, 6
    scan = pullback_scan(s, root, depth, eps)
    from cmllab.maps import step_batch
    from cmllab.orbit import dist_syn

    t = (np.arange(200_000) + 0.5) / 200_000
    X = root.linear(t)
    hit = np.zeros(t.size, dtype=bool)
    for k in range(depth + 1):
        hit |= dist_syn(X) <= eps
        X = step_batch(s, X)
    assert scan.cumulative_fraction[-1] == pytest.approx(hit.mean(), abs=1e-3)


def test_regular_point_zero_iterations():
    s = two_node_tent(0.05)
    g0 = 2.0 ** -12
    off = g0 * math.sqrt(2)
    seg = Polyline.segment([0.1, 0.1 + off], [0.1 + 2.0 ** -7, 0.1 + off + 2.0 ** -7])
    res = regular_point_ratio(s, seg, M=10_000)
    assert res.n == 0
    assert res.measured == 1.0
    assert res.bound >= 1 - 2 * 0.9 * g0 / 2.0 ** -8


def test_regular_point_bound_above_half():
    s = two_node_tent(0.05)
    off = 2.0 ** -14 * math.sqrt(2)
    seg = Polyline.segment([0.05, 0.05 + off], [0.05 + 2.0 ** -7, 0.05 + off + 2.0 ** -7])
    res = regular_point_ratio(s, seg)
    assert res.bound > 0.5
    assert res.ok


def test_regular_points_expand_exactly():
    s = two_node_tent(0.05)
    off = 2.0 ** -14 * math.sqrt(2)
    seg = Polyline.segment([0.05, 0.05 + off], [0.05 + 2.0 ** -7, 0.05 + off + 2.0 ** -7])
    res, X, mask = regular_point_ratio(s, seg, M=2000, return_mask=True)
    from cmllab.curvelab import step_batch
    from cmllab.orbit import dist_syn

    Y = X[mask]
    d = dist_syn(Y)
    for _ in range(res.n):
        Y = step_batch(s, Y)
        d2 = dist_syn(Y)
        assert np.allclose(d2 / d, 1.8, rtol=1e-6)
        d = d2


def test_regular_point_preconditions():
    s = two_node_tent(0.05)
    with pytest.raises(PreconditionError):
        regular_point_ratio(s, Polyline.segment([0.1, 0.2], [0.2, 0.1]))
    with pytest.raises(PreconditionError):
        regular_point_ratio(two_node_tent(0.3), Polyline.segment([0.1, 0.11], [0.2, 0.21]))
    with pytest.raises(PreconditionError):
        regular_point_ratio(s, Polyline.segment([0.1, 0.1], [0.2, 0.2]))


def test_slope_class_closure():
    rng = np.random.default_rng(11)
    s = two_node_tent(0.08)
    for _ in range(500):
        seg = random_segment(rng, 1e-3, single_cell=True)
        J = tuple(int(v >= 0.5) for v in seg.vertices[0])
        img = map_curve(s, seg, J)
        flip = J[0] != J[1]
        assert img.slope_class == (-seg.slope_class if flip else seg.slope_class)


def test_goodness_and_flatness_audits():
    rng = np.random.default_rng(12)
    s = two_node_tent(0.05)
    for _ in range(20):
        forest = iterate_curve(s, random_segment(rng, 2.0 ** -17), 8)
        assert all(n <= 4 for n in good_subtree_counts(forest))
    f = PerturbedTent(0.05, [-2e-5, 1e-5])
    sp = LatticeSystem(f, CouplingSpec.two_node(), 0.05)
    forest = iterate_curve(sp, random_segment(rng, 1e-3), 4, h=1e-5)
    rep = flatness_audit(sp, forest)
    assert rep.steps > 0
    assert rep.a_hat <= rep.a_theory * (1 + 1e-6)
