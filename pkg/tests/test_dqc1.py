from __future__ import annotations

import numpy as np
import pytest

from oracles import random_flowed_graphs

from opq import dqc1, mbqc, qmat
from opq.dqc1 import BrickworkSpec, CircuitFitError
from opq.mbqc import Entangle, Flow, Measure, OpenGraph, Prepare


def _choi_distance(graph, flow, angles, target):
    u = mbqc.reference_unitary(graph, flow, angles)
    got = mbqc.unitary_choi(u, graph.inputs, graph.outputs)
    want = mbqc.unitary_choi(target, graph.inputs, graph.outputs)
    return qmat.trace_distance(got, want)


# -- rewriting ------------------------------------------------------------------------


def test_line_dependency_sets():
    sx, sz = dqc1.dependency_sets(mbqc.line_graph(3), mbqc.successor_flow(3))
    assert sx[2] == {1} and sx[3] == {2}
    assert sz[3] == {1}
    assert sz[1] == set() and sz[2] == set()


@pytest.mark.parametrize("spec", [(1, 5), (2, 5), (3, 9)])
def test_brickwork_x_dependencies_follow_rows(spec):
    g, flow = dqc1.brickwork(spec)
    sx, _ = dqc1.dependency_sets(g, flow)
    for i, j in g.vertices:
        assert sx[(i, j)] == ({(i, j - 1)} if j > 1 else set())


def test_rewrite_step_shape_on_line():
    p = dqc1.rewrite_with_flow(mbqc.line_graph(3), mbqc.successor_flow(3), {1: 5, 2: 6})
    assert p.commands[:3] == (Prepare(2), Entangle(1, 2), Measure(1, 5, frozenset(), frozenset()))
    assert p.commands[3:6] == (Prepare(3), Entangle(2, 3), Measure(2, 6, frozenset({1}), frozenset()))
    assert mbqc.check_runnable(p) == []


def test_no_measurements_only_entangles():
    g = OpenGraph([1, 2], [(1, 2)], [1, 2], [1, 2])
    p = dqc1.rewrite_with_flow(g, Flow({}, {1: 0, 2: 0}), {})
    assert p.commands == (Entangle(1, 2),)


def test_rewrite_rejects_bad_flow_and_missing_angles():
    with pytest.raises(mbqc.FlowError):
        dqc1.rewrite_with_flow(mbqc.line_graph(3), Flow({1: 3, 2: 3}, {1: 1, 2: 2, 3: 3}), {1: 0, 2: 0})
    with pytest.raises(ValueError):
        dqc1.rewrite_with_flow(mbqc.line_graph(3), mbqc.successor_flow(3), {1: 0})


def test_each_edge_entangled_once():
    g, flow = dqc1.brickwork((3, 9))
    p = dqc1.rewrite_with_flow(g, flow, {v: 0 for v in g.non_outputs})
    pairs = [frozenset((c.a, c.b)) for c in p.commands if isinstance(c, Entangle)]
    assert len(pairs) == len(set(pairs)) == len(g.edges)


@pytest.mark.parametrize("spec", [(1, 3), (2, 3), (2, 5), (3, 5)])
def test_rewrite_is_runnable_and_deterministic(spec):
    g, flow = dqc1.brickwork(spec)
    rng = np.random.default_rng(sum(spec))
    angles = {v: int(rng.integers(8)) for v in g.non_outputs}
    p = dqc1.rewrite_with_flow(g, flow, angles)
    assert mbqc.check_runnable(p) == []
    assert mbqc.check_strong_determinism(p) is None


# -- brickwork ------------------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ValueError):
        BrickworkSpec(0, 3)
    with pytest.raises(ValueError):
        BrickworkSpec(2, 1)
    assert BrickworkSpec(2, 5).size == 10


@pytest.mark.parametrize("d", [2, 3, 9])
def test_width_one_is_a_line(d):
    g, _ = dqc1.brickwork((1, d))
    assert len(g.edges) == d - 1
    assert g.inputs == ((1, 1),) and g.outputs == ((1, d),)


def test_vertical_edge_columns():
    for (a, b) in dqc1.vertical_edges(4, 20):
        (i, j), (i2, j2) = a, b
        assert j == j2 and i2 == i + 1
        assert j % 8 in ((3, 5) if i % 2 == 1 else (7, 1))
    assert dqc1.vertical_edges(2, 5) == [((1, 3), (2, 3)), ((1, 5), (2, 5))]


@pytest.mark.parametrize("w", [1, 2, 4])
@pytest.mark.parametrize("d", [3, 5, 9])
def test_brickwork_flow_is_valid(w, d):
    g, flow = dqc1.brickwork((w, d))
    assert mbqc.check_flow(g, flow) == []
    assert all(flow.f[(i, j)] == (i, j + 1) for (i, j) in g.non_outputs)


def test_brickwork_accepts_spec_or_tuple():
    assert dqc1.brickwork(BrickworkSpec(2, 3)) == dqc1.brickwork((2, 3))


# -- purity audit ---------------------------------------------------------------------


def _brick25(angles_seed=0):
    g, flow = dqc1.brickwork((2, 5))
    rng = np.random.default_rng(angles_seed)
    return g, flow, {v: int(rng.integers(8)) for v in g.non_outputs}


def test_interleaved_pattern_passes_audit():
    g, flow, angles = _brick25()
    trail = dqc1.audit_purity(dqc1.rewrite_with_flow(g, flow, angles), dqc1.dqc1_input(g.inputs))
    assert trail.passed
    assert abs(trail.input_purity - 1) <= qmat.ATOL
    assert trail.max_excess <= 2


def test_upfront_pattern_fails_audit():
    g, flow, angles = _brick25()
    trail = dqc1.audit_purity(dqc1.upfront_pattern(g, flow, angles), dqc1.dqc1_input(g.inputs))
    assert not trail.passed
    assert trail.max_excess >= 3


def test_upfront_pattern_computes_the_same_channel():
    g, flow, angles = _brick25(3)
    want = mbqc.unitary_choi(mbqc.reference_unitary(g, flow, angles), g.inputs, g.outputs)
    assert qmat.trace_distance(mbqc.pattern_choi(dqc1.upfront_pattern(g, flow, angles)), want) <= qmat.ATOL


def test_entangle_only_pattern_has_no_excess():
    g = OpenGraph([1, 2, 3], [(1, 2), (2, 3)], [1, 2, 3], [1, 2, 3])
    p = mbqc.Pattern(g, (Entangle(1, 2), Entangle(2, 3)))
    trail = dqc1.audit_purity(p, qmat.maximally_mixed([1, 2, 3]))
    assert trail.passed and abs(trail.max_excess) <= qmat.ATOL


def test_purity_returns_to_input_value_after_each_step():
    g, flow, angles = _brick25(1)
    p = dqc1.rewrite_with_flow(g, flow, angles)
    trail = dqc1.audit_purity(p, dqc1.dqc1_input(g.inputs))
    measure_idx = {k for k, c in enumerate(p.commands) if isinstance(c, Measure)}
    at_steps = [s for s in trail.steps if s.command_index in measure_idx]
    assert at_steps
    for s in at_steps:
        assert abs(s.purity - trail.input_purity) <= qmat.ATOL


@pytest.mark.parametrize("case", range(10))
def test_intra_step_excess_bounded_on_random_graphs(case):
    g, flow = random_flowed_graphs(10, seed=99, max_n=8)[case]
    rng = np.random.default_rng(case)
    angles = {v: int(rng.integers(8)) for v in g.non_outputs}
    trail = dqc1.audit_purity(dqc1.rewrite_with_flow(g, flow, angles), dqc1.dqc1_input(g.inputs))
    assert trail.max_excess <= 2 + qmat.ATOL


def test_audit_csv_header_and_rows():
    g, flow = dqc1.brickwork((1, 3))
    trail = dqc1.audit_purity(dqc1.rewrite_with_flow(g, flow, {(1, 1): 0, (1, 2): 0}), qmat.plus_state((1, 1)))
    lines = trail.to_csv().splitlines()
    assert lines[0] == "command_index,branch_id,purity_bits,excess_bits"
    assert len(lines) == len(trail.steps) + 1


# -- bricks ---------------------------------------------------------------------------


def test_lone_tables_implement_their_gates():
    for name, gate in dqc1.SINGLE_GATES.items():
        assert qmat.equal_up_to_phase(dqc1.lone_unitary(dqc1.lone_table(name)), gate)


@pytest.mark.parametrize(
    "key,target",
    [
        (("I",), np.eye(4)),
        (("H", "top"), np.kron(qmat.H, qmat.I2)),
        (("H", "bottom"), np.kron(qmat.I2, qmat.H)),
        (("T", "top"), np.kron(dqc1.T_GATE, qmat.I2)),
        (("T", "bottom"), np.kron(qmat.I2, dqc1.T_GATE)),
        (("CNOT", "down"), qmat.CNOT),
        (("CNOT", "up"), np.kron(qmat.H, qmat.H) @ qmat.CNOT @ np.kron(qmat.H, qmat.H)),
    ],
)
def test_brick_tables_against_graph_oracle(key, target):
    top, bottom = dqc1.brick_table(key)
    assert qmat.equal_up_to_phase(dqc1.brick_unitary(top, bottom), target)
    # independent route: the same angles placed in a real brickwork graph
    g, flow = dqc1.brickwork((2, 5))
    angles = {(1, j + 1): top[j] for j in range(4)} | {(2, j + 1): bottom[j] for j in range(4)}
    assert _choi_distance(g, flow, angles, target) <= qmat.ATOL


def test_frozen_brick_angles():
    assert dqc1.brick_table(("I",)) == ((0, 0, 0, 0), (0, 0, 0, 0))
    assert dqc1.brick_table(("H", "top")) == ((2, 2, 2, 0), (0, 0, 0, 0))
    assert dqc1.brick_table(("T", "top")) == ((7, 0, 0, 0), (0, 0, 0, 0))
    assert dqc1.brick_table(("CNOT", "down")) == ((6, 0, 0, 0), (0, 6, 0, 2))
    assert dqc1.brick_table(("CNOT", "up")) == ((0, 6, 0, 2), (6, 0, 0, 0))


def test_brick_unitary_agrees_with_graph_for_random_angles():
    g, flow = dqc1.brickwork((2, 5))
    rng = np.random.default_rng(5)
    for _ in range(10):
        top, bottom = tuple(rng.integers(8, size=4)), tuple(rng.integers(8, size=4))
        angles = {(1, j + 1): int(top[j]) for j in range(4)} | {(2, j + 1): int(bottom[j]) for j in range(4)}
        u = mbqc.reference_unitary(g, flow, angles)
        assert qmat.equal_up_to_phase(u, dqc1.brick_unitary(top, bottom))


def test_empty_circuit_gives_zero_angles():
    angles = dqc1.gates_to_brick_angles([], (2, 5))
    assert set(angles.values()) == {0}
    g, flow = dqc1.brickwork((2, 5))
    assert qmat.equal_up_to_phase(mbqc.reference_unitary(g, flow, angles), np.eye(4))


@pytest.mark.parametrize(
    "spec,gates",
    [
        ((2, 5), [("H", 1)]),
        ((2, 5), [("H", 2)]),
        ((2, 5), [("CNOT", 1, 2)]),
        ((2, 5), [("CNOT", 2, 1)]),
        ((2, 9), [("CNOT", 1, 2), ("H", 1)]),
        ((2, 9), [("T", 1), ("H", 2)]),
        ((2, 9), [("CNOT", 2, 1), ("T", 1), ("H", 2)]),
        ((3, 5), [("CNOT", 1, 2), ("H", 3)]),
        ((3, 5), [("T", 2), ("T", 3)]),
    ],
)
def test_circuits_compile_to_their_unitary(spec, gates):
    angles = dqc1.gates_to_brick_angles(gates, spec)
    g, flow = dqc1.brickwork(spec)
    target = dqc1.circuit_unitary(gates, spec[0])
    assert _choi_distance(g, flow, angles, target) <= qmat.ATOL


def test_circuit_fit_errors():
    with pytest.raises(CircuitFitError):
        dqc1.gates_to_brick_angles([("H", 1)], (2, 4))
    with pytest.raises(CircuitFitError):
        dqc1.gates_to_brick_angles([("CNOT", 1, 3)], (3, 9))
    with pytest.raises(CircuitFitError):
        dqc1.gates_to_brick_angles([("H", 1), ("H", 1)], (2, 5))
    with pytest.raises(CircuitFitError):  # the second layer of two wires has no brick
        dqc1.gates_to_brick_angles([("H", 1), ("CNOT", 1, 2)], (2, 9))
    with pytest.raises(CircuitFitError):
        dqc1.gates_to_brick_angles([("H", 4)], (2, 5))
    with pytest.raises(ValueError):
        dqc1.gates_to_brick_angles([("S", 1)], (2, 5))


def test_layer_slots_alternate():
    assert dqc1.layer_slots(4, 0) == [(1, 2), (3, 4)]
    assert dqc1.layer_slots(4, 1) == [(1,), (2, 3), (4,)]
    assert dqc1.brick_layers(BrickworkSpec(2, 9)) == 2
