from __future__ import annotations

import numpy as np
import pytest

from opq import blindproto, dqc1, qmat, verifyproto
from opq.verifyproto import (
    FrameMismatchError,
    Honest,
    LabPauli,
    OutcomeFlip,
    RandomUnitary,
    analytic_bound,
    analytic_trap_pass_prob,
)

SPEC = (2, 3)
M, N = 6, 2


def _angles(spec=SPEC, seed=0):
    g, _ = dqc1.brickwork(spec)
    rng = np.random.default_rng(seed)
    return {v: int(rng.integers(1, 8)) for v in g.non_outputs}


def _config_with_trap(predicate, spec=SPEC, s=3, rule="vertex"):
    """First seeded configuration having a trap round whose trap satisfies ``predicate``."""
    for seed in range(500):
        config = verifyproto.setup_rounds(spec, s, seed=seed, rule=rule)
        for rc in config.rounds:
            if not rc.computational and predicate(rc.trap):
                return config, rc
    raise AssertionError("no matching configuration")


# -- round setup ----------------------------------------------------------------------


def test_single_round_has_no_traps():
    config = verifyproto.setup_rounds(SPEC, 1, seed=0)
    assert config.t_g == 1 and config.round(1).computational
    for seed in range(5):
        res = verifyproto.run_verification(verifyproto.setup_rounds(SPEC, 1, seed=seed), _angles(), seed=seed)
        assert res.acc == 1 and res.traps == ()


def test_computational_round_layout():
    config = verifyproto.setup_rounds((2, 5), 3, seed=4)
    rc = config.round(config.t_g)
    assert rc.dummies == frozenset()
    layout = verifyproto.round_layout(config, config.t_g)
    assert layout.kind[(1, 1)] == "plus" and layout.kind[(2, 1)] == "mixed"


def test_dummy_rows_under_the_row_rule():
    config = verifyproto.setup_rounds((2, 5), 3, seed=1, rule="row")
    for rc in config.rounds:
        if not rc.computational:
            assert len(rc.dummies) == 9
            assert rc.trap not in rc.dummies


def test_dummy_rows_under_the_vertex_rule():
    g, _ = dqc1.brickwork((2, 5))
    for trap in g.vertices:
        d = verifyproto.dummy_set(g, trap)
        vertical = any(u[1] == trap[1] for u in g.neighbours(trap))
        assert len(d) == (9 if vertical else 4)
        assert trap not in d
    with pytest.raises(ValueError):
        verifyproto.dummy_set(g, (1, 1), rule="nearest")


def test_trap_is_isolated_by_dummies():
    g, _ = dqc1.brickwork((3, 9))
    for trap in g.vertices:
        d = verifyproto.dummy_set(g, trap)
        assert g.neighbours(trap) <= d


def test_setup_is_seeded_and_t_g_uniform():
    a = verifyproto.setup_rounds(SPEC, 4, seed=3)
    assert a == verifyproto.setup_rounds(SPEC, 4, seed=3)
    counts = np.bincount([verifyproto.setup_rounds(SPEC, 4, seed=k).t_g for k in range(4000)], minlength=5)[1:]
    chi2 = float(np.sum((counts - 1000) ** 2) / 1000)
    assert chi2 < 16.27  # 3 dof, p = 0.001
    with pytest.raises(ValueError):
        verifyproto.setup_rounds(SPEC, 0, seed=0)


def test_trap_round_secrets_cover_the_graph():
    config = verifyproto.setup_rounds((2, 5), 5, seed=2)
    g, _ = dqc1.brickwork((2, 5))
    for rc in config.rounds:
        assert set(rc.theta) | set(rc.dummies) == set(g.vertices)
        assert set(rc.dummy_bits) == set(rc.dummies)
        assert all(0 <= d <= 7 for d in rc.dummy_delta.values())


# -- single qubits --------------------------------------------------------------------


def test_dummy_with_bit_one_is_basis_one():
    for seed in range(50):
        config = verifyproto.setup_rounds(SPEC, 2, seed=seed)
        rc = next(r for r in config.rounds if not r.computational)
        ones = [u for u in rc.dummies if rc.dummy_bits[u] == 1]
        if ones:
            q = verifyproto.prepare_round_qubit(config, rc.index, ones[0])
            assert np.allclose(q.matrix, [[0, 0], [0, 1]])
            return
    raise AssertionError("no dummy with bit one")


def test_trap_with_zero_dummies_is_plain_plus():
    for seed in range(200):
        config = verifyproto.setup_rounds(SPEC, 2, seed=seed)
        rc = next(r for r in config.rounds if not r.computational)
        g, _ = dqc1.brickwork(SPEC)
        if all(rc.dummy_bits[u] == 0 for u in g.neighbours(rc.trap)):
            q = verifyproto.prepare_round_qubit(config, rc.index, rc.trap)
            assert q.allclose(qmat.plus_state(rc.trap, rc.theta[rc.trap]))
            return
    raise AssertionError("no draw with all-zero neighbouring dummies")


def test_pre_rotation_cancels_dummy_kickback():
    g, _ = dqc1.brickwork(SPEC)
    for seed in range(300):
        config = verifyproto.setup_rounds(SPEC, 2, seed=seed)
        rc = next(r for r in config.rounds if not r.computational)
        ones = [u for u in g.neighbours(rc.trap) if rc.dummy_bits[u] == 1]
        if len(ones) != 1:
            continue
        q = verifyproto.prepare_round_qubit(config, rc.index, rc.trap)
        assert q.allclose(qmat.plus_state(rc.trap, rc.theta[rc.trap] + 4))
        joint = qmat.tensor(q, verifyproto.prepare_round_qubit(config, rc.index, ones[0]))
        for u in g.neighbours(rc.trap):
            if u == ones[0]:
                joint = qmat.apply_gate(joint, qmat.CZ, (rc.trap, u))
        assert joint.reduced((rc.trap,)).allclose(qmat.plus_state(rc.trap, rc.theta[rc.trap]))
        return
    raise AssertionError("no draw with exactly one dummy neighbour set to one")


def test_non_trap_inputs_are_mixed_in_trap_rounds():
    config, rc = _config_with_trap(lambda t: t[1] > 1)
    layout = verifyproto.round_layout(config, rc.index)
    g, _ = dqc1.brickwork(SPEC)
    for v in g.inputs:
        if v not in rc.dummies:
            assert layout.kind[v] == "mixed"


# -- one run --------------------------------------------------------------------------


@pytest.mark.parametrize("spec,s", [((2, 3), 4), ((1, 5), 3), ((2, 5), 2), ((3, 3), 3)])
def test_honest_runs_accept_with_correct_output(spec, s):
    for seed in range(10):
        config = verifyproto.setup_rounds(spec, s, seed=seed)
        res = verifyproto.run_verification(config, _angles(spec, seed), seed=seed)
        assert res.acc == 1
        assert res.p_perp <= qmat.ATOL


def test_density_backend_agrees_with_vector_backend():
    config = verifyproto.setup_rounds(SPEC, 3, seed=6)
    adv = OutcomeFlip(frozenset({(None, (1, 2))}))
    a = verifyproto.run_verification(config, _angles(), adv, seed=1)
    b = verifyproto.run_verification(config, _angles(), adv, seed=1, backend="density")
    assert a.acc == b.acc and [t.passed for t in a.traps] == [t.passed for t in b.traps]
    assert abs(a.p_perp - b.p_perp) <= qmat.ATOL


def test_flip_on_measured_trap_always_fails():
    config, rc = _config_with_trap(lambda t: t[1] < SPEC[1])
    adv = OutcomeFlip(frozenset({(rc.index, rc.trap)}))
    for seed in range(20):
        res = verifyproto.run_verification(config, _angles(), adv, seed=seed)
        rec = next(t for t in res.traps if t.round == rc.index)
        assert rec.measured_by == "server" and not rec.passed
        assert res.acc == 0


def test_output_z_on_output_trap_is_always_caught():
    config, rc = _config_with_trap(lambda t: t[1] == SPEC[1])
    adv = LabPauli({(rc.index, rc.trap): "Z"})
    for seed in range(20):
        res = verifyproto.run_verification(config, _angles(), adv, seed=seed)
        rec = next(t for t in res.traps if t.round == rc.index)
        assert rec.measured_by == "client" and not rec.passed


def test_output_x_on_output_trap_passes_half_the_time():
    target = (1, SPEC[1])
    adv = LabPauli({(None, target): "X"})
    passes = total = 0
    for seed in range(3000):
        config = verifyproto.setup_rounds(SPEC, 2, seed=seed)
        rc = next(r for r in config.rounds if not r.computational)
        if rc.trap != target:
            continue
        res = verifyproto.run_verification(config, _angles(), adv, seed=seed)
        passes += res.traps[0].passed
        total += 1
    assert total > 200
    assert abs(passes / total - 0.5) <= 3 * np.sqrt(0.25 / total)


def test_purity_audit_in_every_round():
    config = verifyproto.setup_rounds((2, 5), 4, seed=3)
    res = verifyproto.run_verification(config, _angles((2, 5)), seed=3, audit_purity=True)
    assert res.max_purity_excess <= 2 + qmat.ATOL


def test_server_holding_qubits_is_rejected():
    class Hoarder:
        def server(self, seed=None):
            class _S(blindproto.Server):
                def final_layer(self, tags):
                    self.before_final(tags)
                    return tuple(tags)

            return _S()

    config = verifyproto.setup_rounds(SPEC, 2, seed=0)
    with pytest.raises(blindproto.ProtocolError):
        verifyproto.run_verification(config, _angles(), Hoarder(), seed=0)


def test_random_unitary_validation_and_run():
    with pytest.raises(ValueError):
        RandomUnitary(0, 1.5)
    config = verifyproto.setup_rounds(SPEC, 3, seed=0)
    res = verifyproto.run_verification(config, _angles(), RandomUnitary(4, 0.3), seed=0)
    assert 0 <= res.p_perp <= 1


# -- Monte Carlo ----------------------------------------------------------------------


def test_honest_estimate_is_zero():
    rep = verifyproto.estimate_p_incorrect(_angles(), SPEC, 4, Honest(), trials=50, seed=1)
    assert rep.acc_rate == 1.0
    assert rep.p_incorrect <= qmat.ATOL
    assert rep.analytic_bound == 0.0
    assert rep.epsilon_bound == 1.0


def test_report_json_keys():
    rep = verifyproto.estimate_p_incorrect(_angles(), SPEC, 2, Honest(), trials=5, seed=1)
    assert list(rep.to_json()) == [
        "m",
        "n",
        "s",
        "trials",
        "acc_rate",
        "p_incorrect",
        "ci95",
        "epsilon_bound",
        "analytic_bound",
        "seed",
    ]
    lo, hi = rep.ci95
    assert lo <= rep.p_incorrect <= hi


def test_estimate_is_reproducible_and_independent_of_jobs():
    adv = OutcomeFlip(frozenset({(None, (1, 2))}))
    a = verifyproto.estimate_p_incorrect(_angles(), SPEC, 3, adv, trials=60, seed=9)
    b = verifyproto.estimate_p_incorrect(_angles(), SPEC, 3, adv, trials=60, seed=9, jobs=2)
    assert a == b


def test_flip_estimate_respects_bounds():
    adv = OutcomeFlip(frozenset({(None, (1, 2))}))
    rep = verifyproto.estimate_p_incorrect(_angles(), SPEC, 4, adv, trials=600, seed=3)
    assert rep.p_incorrect - 3 * rep.stderr <= rep.epsilon_bound
    assert rep.p_incorrect - 3 * rep.stderr <= rep.analytic_bound
    ok, tot = rep.trap_pass["at_attack"]
    assert ok == 0 and tot > 0
    ok, tot = rep.trap_pass["elsewhere"]
    assert ok == tot


def test_trial_count_validated():
    with pytest.raises(ValueError):
        verifyproto.estimate_p_incorrect(_angles(), SPEC, 2, Honest(), trials=0)


def test_wilson_interval_known_values():
    lo, hi = verifyproto.wilson_interval(0.5, 100)
    assert abs(lo - 0.4038) < 1e-4 and abs(hi - 0.5962) < 1e-4
    lo, hi = verifyproto.wilson_interval(0.0, 50)
    assert lo == 0.0 and 0 < hi < 0.08


def test_trial_seeds_are_distinct():
    seeds = verifyproto.trial_seeds(7, 1000)
    assert len(set(seeds)) == 1000
    assert seeds == verifyproto.trial_seeds(7, 1000)


# -- analytic calculators -------------------------------------------------------------


def test_identity_attack_passes():
    assert analytic_trap_pass_prob({}, M, N) == 1


def test_measured_x_costs_one_position():
    assert analytic_trap_pass_prob({1: "X"}, M, N) == pytest.approx((M - 1) / M)


def test_measured_z_is_invisible():
    assert analytic_trap_pass_prob({1: "Z"}, M, N) == 1


def test_output_paulis():
    assert analytic_trap_pass_prob({5: "X"}, M, N) == pytest.approx((2 * M - 1) / (2 * M))
    assert analytic_trap_pass_prob({5: "Y"}, M, N) == pytest.approx((2 * M - 1) / (2 * M))
    assert analytic_trap_pass_prob({5: "Z"}, M, N) == pytest.approx((M - 1) / M)


def test_frame_sets_partition():
    fs = verifyproto.frame_sets({1: "X", 5: "Y", 6: "Z", 2: "I"}, M, N)
    assert sum(len(fs[k]) for k in "ABCD") == M
    assert fs["BO"] == set() and fs["CO"] == {5} and fs["DO"] == {6}
    with pytest.raises(ValueError):
        verifyproto.frame_sets({7: "X"}, M, N)


def test_single_round_attack_bound():
    assert analytic_bound([{1: "X"}, {}, {}, {}], 4, M, N) == pytest.approx(0.25)


def test_every_round_flip_bound_s2():
    assert analytic_bound([{1: "X"}, {1: "X"}], 2, M, N) == pytest.approx(5 / 6)


def test_bound_below_epsilon_and_monotone():
    prev = 1.0
    for s in (2, 4, 8, 16, 32):
        b = analytic_bound([{3: "X"}] * s, s, M, N)
        assert b < 2 * M / s
        assert b <= prev
        prev = b


def test_positions_are_column_major():
    assert verifyproto.position((1, 1), 2) == 1
    assert verifyproto.position((2, 1), 2) == 2
    assert verifyproto.position((1, 3), 2) == 5


def test_frame_strategy_translation():
    flips = verifyproto.frame_strategy(OutcomeFlip(frozenset({(None, (1, 2))})), SPEC, 3)
    assert flips == [{3: "X"}] * 3
    lab = verifyproto.frame_strategy(LabPauli({(2, (2, 3)): "Z"}), SPEC, 3)
    assert lab == [{}, {6: "Z"}, {}]


def test_frame_mismatch_errors():
    with pytest.raises(FrameMismatchError):
        verifyproto.frame_strategy(LabPauli({(None, (1, 2)): "X"}), SPEC, 2)
    with pytest.raises(FrameMismatchError):
        verifyproto.frame_strategy(RandomUnitary(0, 0.1), SPEC, 2)
    with pytest.raises(FrameMismatchError):
        verifyproto.frame_strategy(OutcomeFlip(frozenset({(None, (1, 3))})), SPEC, 2)
    assert issubclass(FrameMismatchError, ValueError)
