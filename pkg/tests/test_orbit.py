import math

import numpy as np
import pytest

from cmllab.errors import ConfigError, PreconditionError
from cmllab.maps import CouplingSpec, GeneralTent, LatticeSystem, PerturbedTent, StandardTent, two_node_tent
from cmllab.orbit import (OrbitConfig, detect_transitions, dist_syn, dist_syn_quadratic, initial_state,
                          run_ensemble, run_orbit, same_cell_expansion_floor, sync_time,
                          transverse_factor, transverse_factor_check, trapping_check)


def test_dist_syn_examples():
    assert dist_syn([0.3, 0.7]) == pytest.approx(0.4 / math.sqrt(2), abs=1e-15)
    assert dist_syn([0.4, 0.4, 0.4]) == 0.0
    assert dist_syn([0.0, 0.0, 1.0]) == pytest.approx(math.sqrt(4 / 6), abs=1e-15)


def test_dist_syn_matches_projection():
    # oracle: distance to the closest point t*e of the diagonal
    rng = np.random.default_rng(0)
    X = rng.random((500, 5))
    proj = X.mean(axis=1, keepdims=True)
    oracle = np.linalg.norm(X - proj, axis=1)
    assert np.allclose(dist_syn(X), oracle, atol=1e-13)
    assert np.allclose(dist_syn_quadratic(X), oracle, atol=1e-13)


def test_config_validation():
    with pytest.raises(ConfigError):
        OrbitConfig(n_steps=10, burn_in=10)
    with pytest.raises(ConfigError):
        OrbitConfig(eps=1e-2, gamma=1e-3)
    with pytest.raises(ConfigError):
        OrbitConfig(n_steps=0)


def test_sync_regime_run():
    s = two_node_tent(0.3)
    st = run_orbit(s, initial_state(2, 3), OrbitConfig(n_steps=100_000, seed=3))
    assert st.sync_time is not None
    assert st.max_dist_after_sync < 1e-9


def test_diagonal_start():
    s = two_node_tent(0.1)
    st = run_orbit(s, [0.3, 0.3], OrbitConfig(n_steps=1000))
    assert st.max_dist_after_burn_in == 0.0
    assert st.disorder_entries == 0
    assert st.sync_time == 0


def test_stats_invariants():
    s = two_node_tent(0.1)
    st = run_orbit(s, initial_state(2, 11), OrbitConfig(n_steps=200_000, eps=1e-6, gamma=1e-3, seed=11))
    assert st.alternations <= st.order_entries + st.disorder_entries
    assert 0.0 <= st.occupation_fraction_order <= 1.0


def test_determinism():
    s = two_node_tent(0.12)
    cfg = OrbitConfig(n_steps=50_000, trace_stride=100, seed=9)
    a = run_orbit(s, initial_state(2, 9), cfg)
    b = run_orbit(s, initial_state(2, 9), cfg)
    assert a == b
    assert np.array_equal(a.trace, b.trace)


def test_trace_rows():
    s = two_node_tent(0.1)
    st = run_orbit(s, initial_state(2, 1), OrbitConfig(n_steps=1000, trace_stride=10))
    assert st.trace.shape == (101, 4)
    assert np.allclose(st.trace[:, 3], dist_syn(st.trace[:, 1:3]))


def test_stop_on_sync():
    s = two_node_tent(0.3)
    cfg = OrbitConfig(n_steps=100_000, sync_sustain=100, stop_on_sync=True)
    st = run_orbit(s, initial_state(2, 1), cfg)
    assert st.sustained_sync_time is not None
    assert st.steps_run == st.sustained_sync_time + 99


def test_detect_transitions_examples():
    ev = detect_transitions(np.array([0.5, 1e-7, 0.5]), 1e-6, 1e-2)
    assert [e.label for e in ev] == ["ORDER", "DISORDER"]
    ev = detect_transitions(np.geomspace(1.0, 1e-12, 200), 1e-6, 1e-2)
    assert len(ev) == 1 and ev[0].label == "ORDER"
    with pytest.raises(ConfigError):
        detect_transitions([0.1], 1e-2, 1e-3)


def test_detector_recount_on_trace():
    s = two_node_tent(0.1)
    cfg = OrbitConfig(n_steps=2_000_000, eps=1e-6, gamma=1e-3, trace_stride=1, seed=4)
    st = run_orbit(s, initial_state(2, 4), cfg)
    ev = detect_transitions(st.trace, 1e-6, 1e-3)
    assert len(ev) == st.alternations


def test_transverse_examples():
    assert transverse_factor_check(two_node_tent(0.1), [0.2, 0.3]).observed == pytest.approx(1.6, rel=1e-12)
    assert transverse_factor_check(two_node_tent(0.0), [0.6, 0.8]).observed == pytest.approx(2.0, rel=1e-12)
    assert transverse_factor_check(two_node_tent(0.25), [0.1, 0.2]).observed == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(PreconditionError):
        transverse_factor_check(two_node_tent(0.1), [0.4, 0.6])
    with pytest.raises(PreconditionError):
        transverse_factor_check(two_node_tent(0.1), [0.4, 0.4])


def test_transverse_perturbed_window():
    f = PerturbedTent(0.05, [-2e-5, 1e-5])
    s = LatticeSystem(f, CouplingSpec.two_node(), 0.1)
    chk = transverse_factor_check(s, [0.2, 0.3])
    assert chk.ok


def test_transverse_same_branch_tiny_difference():
    s = two_node_tent(0.1)
    x = np.array([[0.3, 0.3 + 2.0 ** -40]])
    assert abs(transverse_factor(s, x)[0] / 1.6 - 1) < 1e-12


def test_sync_time():
    s = two_node_tent(0.3)
    assert sync_time(s, [0.2, 0.2], 1e-9, 10) == 0
    hits = sum(sync_time(s, initial_state(2, k), 1e-9, 100_000, seed=k) is not None for k in range(20))
    assert hits >= 19
    s2 = two_node_tent(0.05)
    none = sum(sync_time(s2, initial_state(2, k), 1e-9, 100_000, seed=k) is None for k in range(20))
    assert none >= 19


def test_trapping_peak_half_tent():
    s = LatticeSystem(GeneralTent(0.1, 0.0, alpha_bound=0.2), CouplingSpec.two_node(), 0.001)
    rep = trapping_check(s, [0.9, 0.95], 10_000)
    assert rep.trapped and rep.entry_step <= 2
    assert rep.invariant
    rng = np.random.default_rng(3)
    assert all(trapping_check(s, rng.random(2), 10_000).trapped for _ in range(200))


def test_trapping_already_inside():
    s = LatticeSystem(GeneralTent(0.1, 0.0, alpha_bound=0.2), CouplingSpec.two_node(), 0.001)
    rep = trapping_check(s, [0.4, 0.45], 1000)
    assert rep.entry_step == 0


def test_trapping_declared_f0_not_invariant():
    s = LatticeSystem(PerturbedTent(0.1), CouplingSpec.two_node(), 0.001)
    rep = trapping_check(s, [0.9, 0.95], 1000)
    assert rep.tau1 == pytest.approx(0.05)
    assert not rep.invariant


def test_trapping_precondition():
    with pytest.raises(PreconditionError):
        trapping_check(two_node_tent(0.1), [0.2, 0.3], 10)


def test_ensemble_order_independent_of_threads():
    s = two_node_tent(0.1)
    cfg = OrbitConfig(n_steps=20_000)
    seeds = [5, 1, 9, 2]
    a = run_ensemble(s, cfg, seeds, threads=1)
    b = run_ensemble(s, cfg, seeds, threads=3)
    assert [x.seed for x in a] == seeds
    assert a == b


def test_no_shadow_is_literal_iteration():
    from cmllab.maps import step

    s = two_node_tent(0.2)
    x = initial_state(2, 2)
    st = run_orbit(s, x, OrbitConfig(n_steps=100, shadow=False))
    y = x.copy()
    for _ in range(100):
        y = step(s, y)
    assert st.final_state == y.tolist()


def test_same_cell_floor_multi_node():
    rng = np.random.default_rng(8)
    coup = CouplingSpec.all_to_all(3)
    c = 0.05
    s = LatticeSystem(StandardTent(), coup, c)
    floor = same_cell_expansion_floor(coup, c)
    from cmllab.maps import step_batch

    # the two cells on the diagonal: all coordinates left, or all right
    J = rng.integers(0, 2, (20_000, 1))
    X = 0.5 * J + 0.5 * rng.random((20_000, 3))
    Y = step_batch(s, X)
    assert np.all(dist_syn(Y) ** 2 >= floor * dist_syn(X) ** 2 * (1 - 1e-12))
