"""Build a brickwork graph, find its flow, rewrite it as a pattern and check
that running the pattern implements the same unitary as the circuit it was
compiled from."""

from __future__ import annotations

from opq import dqc1, mbqc, qmat


def main() -> None:
    spec = (2, 5)
    graph, flow = dqc1.brickwork(spec)
    print(f"brickwork{spec}: {len(graph.vertices)} vertices, {len(graph.edges)} edges")
    print("flow violations:", mbqc.check_flow(graph, flow) or "none")

    gates = [("CNOT", 1, 2)]
    angles = dqc1.gates_to_brick_angles(gates, spec)
    pattern = dqc1.rewrite_with_flow(graph, flow, angles)
    print(f"pattern has {len(pattern.commands)} commands")

    want = dqc1.circuit_unitary(gates, spec[0])
    got = mbqc.reference_unitary(graph, flow, angles)
    print("brick angles reproduce CNOT up to phase:", qmat.equal_up_to_phase(got, want))

    choi = mbqc.pattern_choi(pattern)
    target = mbqc.unitary_choi(got, graph.inputs, graph.outputs)
    print(f"pattern channel vs unitary, trace distance {qmat.trace_distance(choi, target):.1e}")

    # every branch lands on the same output when dependencies are kept
    print("strongly deterministic:", mbqc.check_strong_determinism(pattern) is None)
    stripped = dqc1.rewrite_with_flow(graph, flow, angles, with_dependencies=False)
    witness = mbqc.check_strong_determinism(stripped)
    print("without corrections, two branches differ by", round(witness.distance, 3))


if __name__ == "__main__":
    main()
