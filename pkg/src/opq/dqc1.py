"""One-pure-qubit discipline for flowed patterns.

The rewriting here interleaves preparation with measurement so that each
auxiliary qubit is created only one step before it is needed; the purity
audit measures how far any pattern strays above its input purity.  Brickwork
graphs and the gate-to-brick angle tables live here too.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from opq import mbqc, qmat
from opq.mbqc import (
    CorrectX,
    CorrectZ,
    Entangle,
    Flow,
    FlowError,
    Measure,
    OpenGraph,
    Pattern,
    Prepare,
)

DEFAULT_C = 2


# -- rewriting -----------------------------------------------------------------


def measurement_order(graph: OpenGraph, flow: Flow) -> list:
    """O^c sorted by level, ties broken by vertex order."""
    pos = {v: i for i, v in enumerate(graph.vertices)}
    return sorted(graph.non_outputs, key=lambda v: (flow.level[v], pos[v]))


def dependency_sets(graph: OpenGraph, flow: Flow) -> tuple[dict, dict]:
    """X and Z dependency sets for every vertex.

    ``sx[i] = {f^-1(i)}`` for non-inputs; ``sz[i]`` collects ``f^-1(k)`` for
    every non-input neighbour ``k`` of ``i`` with ``f^-1(k) != i``.
    """
    inv = flow.inverse()
    inputs = set(graph.inputs)
    sx, sz = {}, {}
    for i in graph.vertices:
        sx[i] = frozenset({inv[i]}) if i not in inputs else frozenset()
        sz[i] = frozenset(inv[k] for k in graph.neighbours(i) if k not in inputs and inv[k] != i)
    return sx, sz


def rewrite_with_flow(graph: OpenGraph, flow: Flow, angles: Mapping, with_dependencies: bool = True) -> Pattern:
    """Interleaved pattern: per measured vertex, prepare f(i), entangle, measure.

    Each edge is entangled at the step of whichever endpoint is measured
    first.  Edges joining two outputs are entangled after the last
    measurement, just before the output corrections.

    ``with_dependencies=False`` empties every dependency set; it exists to
    show that determinism then breaks.
    """
    bad = mbqc.check_flow(graph, flow)
    if bad:
        raise FlowError(f"invalid flow: {bad[0].rule} at {bad[0].where!r}: {bad[0].message}")
    if set(flow.f.values()) != set(graph.non_inputs):
        raise FlowError("rewriting needs |I| = |O| or a surjective flow")
    missing = [v for v in graph.non_outputs if v not in angles]
    if missing:
        raise ValueError(f"no angle for vertex {missing[0]!r}")
    sx, sz = dependency_sets(graph, flow)
    if not with_dependencies:
        sx = {v: frozenset() for v in sx}
        sz = {v: frozenset() for v in sz}
    pos = {v: i for i, v in enumerate(graph.vertices)}
    done: set = set()
    commands: list = []
    for i in measurement_order(graph, flow):
        commands.append(Prepare(flow.f[i]))
        for k in sorted(graph.neighbours(i), key=pos.__getitem__):
            if k not in done:
                commands.append(Entangle(i, k))
        commands.append(Measure(i, angles[i], sx[i], sz[i]))
        done.add(i)
    for a, b in graph.sorted_edges():
        if a not in done and b not in done:
            commands.append(Entangle(a, b))
    for o in graph.outputs:
        if sx[o]:
            commands.append(CorrectX(o, sx[o]))
        if sz[o]:
            commands.append(CorrectZ(o, sz[o]))
    kept = {v: angles[v] for v in graph.non_outputs}
    return Pattern(graph, tuple(commands), kept, flow)


def upfront_pattern(graph: OpenGraph, flow: Flow, angles: Mapping) -> Pattern:
    """Same computation with every auxiliary prepared and entangled first."""
    sx, sz = dependency_sets(graph, flow)
    commands: list = [Prepare(v) for v in graph.non_inputs]
    commands += [Entangle(a, b) for a, b in graph.sorted_edges()]
    commands += [Measure(i, angles[i], sx[i], sz[i]) for i in measurement_order(graph, flow)]
    for o in graph.outputs:
        if sx[o]:
            commands.append(CorrectX(o, sx[o]))
        if sz[o]:
            commands.append(CorrectZ(o, sz[o]))
    return Pattern(graph, tuple(commands), {v: angles[v] for v in graph.non_outputs}, flow)


# -- brickwork -------------------------------------------------------------------


@dataclass(frozen=True)
class BrickworkSpec:
    width: int
    depth: int

    def __post_init__(self):
        if self.width < 1 or self.depth < 2:
            raise ValueError(f"brickwork needs width >= 1 and depth >= 2, got {self.width}x{self.depth}")

    @property
    def size(self) -> int:
        return self.width * self.depth


def vertical_edges(w: int, d: int) -> list[tuple]:
    """Brick rungs: odd rows at columns 3, 5 (mod 8), even rows at 7, 9 (mod 8)."""
    out = []
    for i in range(1, w):
        start = 3 if i % 2 == 1 else 7
        for j in range(start, d + 1, 8):
            for jj in (j, j + 2):
                if jj <= d:
                    out.append(((i, jj), (i + 1, jj)))
    return out


def brickwork(spec: BrickworkSpec | tuple) -> tuple[OpenGraph, Flow]:
    """Brickwork open graph with vertices (row, column) and the row-successor flow.

    Inputs are column 1, outputs column ``depth``; the level of a vertex is
    its column.  Results are cached; treat them as read-only.
    """
    if not isinstance(spec, BrickworkSpec):
        spec = BrickworkSpec(*spec)
    return _brickwork(spec)


@lru_cache(maxsize=128)
def _brickwork(spec: BrickworkSpec) -> tuple[OpenGraph, Flow]:
    w, d = spec.width, spec.depth
    vs = [(i, j) for j in range(1, d + 1) for i in range(1, w + 1)]
    edges = [((i, j), (i, j + 1)) for i in range(1, w + 1) for j in range(1, d)]
    edges += vertical_edges(w, d)
    g = OpenGraph(vs, edges, [(i, 1) for i in range(1, w + 1)], [(i, d) for i in range(1, w + 1)])
    flow = Flow({(i, j): (i, j + 1) for (i, j) in vs if j < d}, {v: v[1] for v in vs})
    return g, flow


def dqc1_input(inputs: Sequence) -> qmat.DensityState:
    """|+><+| on the first input, maximally mixed on the rest."""
    state = qmat.plus_state(inputs[0])
    if len(inputs) > 1:
        state = qmat.tensor(state, qmat.maximally_mixed(inputs[1:]))
    return state


# -- purity audit ----------------------------------------------------------------


@dataclass(frozen=True)
class PurityStep:
    command_index: int
    branch_id: str
    purity: float
    excess: float


@dataclass(frozen=True)
class PurityAuditTrail:
    steps: tuple
    input_purity: float
    max_excess: float
    c: float
    passed: bool

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["command_index", "branch_id", "purity_bits", "excess_bits"])
        for s in self.steps:
            writer.writerow([s.command_index, s.branch_id, f"{s.purity:.12f}", f"{s.excess:.12f}"])
        return buf.getvalue()


def audit_purity(pattern: Pattern, input_state: qmat.DensityState, c: float = DEFAULT_C) -> PurityAuditTrail:
    """Purity after every command on every branch.

    Passes iff every recorded purity stays strictly below
    ``purity(input) + c``.
    """
    p_in = qmat.purity_parameter(input_state)
    steps: list[PurityStep] = []

    def observe(idx, outcomes, state):
        p = qmat.purity_parameter(state)
        bid = "".join(str(b) for b in outcomes.values())
        steps.append(PurityStep(idx, bid, p, p - p_in))

    mbqc.execute_pattern(pattern, input_state, observer=observe)
    max_excess = max((s.excess for s in steps), default=0.0)
    passed = all(s.purity < p_in + c for s in steps)
    return PurityAuditTrail(tuple(steps), p_in, max_excess, c, passed)


# -- gates to bricks -------------------------------------------------------------

# Eight angles per brick, listed (top row columns 1..4, bottom row columns 1..4)
# relative to the brick's first measured column.  Lone wires use four angles.
# Each table entry was found by search_brick_angles and is re-verified against
# the reference unitary in the tests.


def j_gate(a) -> np.ndarray:
    """Single-qubit map implemented by measuring one wire vertex at angle a."""
    return qmat.H @ qmat.phase(-a)


def brick_unitary(top: Sequence, bottom: Sequence) -> np.ndarray:
    """Two-wire unitary of one brick (top wire most significant)."""

    def wire(angles):
        u = np.eye(2, dtype=complex)
        for a in angles:
            u = j_gate(a) @ u
        return u

    first = qmat.CZ @ np.kron(wire(top[:2]), wire(bottom[:2]))
    return qmat.CZ @ np.kron(wire(top[2:]), wire(bottom[2:])) @ first


def lone_unitary(angles: Sequence) -> np.ndarray:
    u = np.eye(2, dtype=complex)
    for a in angles:
        u = j_gate(a) @ u
    return u


def _phase_key(u: np.ndarray, digits: int = 6) -> tuple:
    flat = u.reshape(-1)
    k = int(np.argmax(np.abs(flat) > 1e-6))
    v = flat * (abs(flat[k]) / flat[k])
    v = np.round(v, digits) + 0.0  # folds -0.0 into 0.0
    return tuple(np.round(v.real, digits)) + tuple(np.round(v.imag, digits))


def search_lone_angles(target: np.ndarray) -> tuple | None:
    """First angle quadruple (lexicographic) whose wire unitary equals target up to phase."""
    for angles in np.ndindex(8, 8, 8, 8):
        if qmat.equal_up_to_phase(lone_unitary(angles), target):
            return tuple(int(a) for a in angles)
    return None


def search_brick_angles(target: np.ndarray) -> tuple | None:
    """Meet-in-the-middle search over the 8^8 discrete brick assignments.

    Splits the brick as ``CZ (A2 ⊗ B2) · CZ (A1 ⊗ B1)`` and matches
    ``CZ (A1 ⊗ B1)`` against ``(CZ (A2 ⊗ B2))^† target`` modulo global phase.
    Returns ``(top, bottom)`` angle quadruples or None.
    """
    pairs = [(a, b) for a in range(8) for b in range(8)]
    halves = {p: lone_unitary(p) for p in pairs}
    first: dict = {}
    for pa in pairs:
        for pb in pairs:
            u = qmat.CZ @ qmat.kron(halves[pa], halves[pb])
            first.setdefault(_phase_key(u), (pa, pb))
    for qa in pairs:
        for qb in pairs:
            v = qmat.CZ @ qmat.kron(halves[qa], halves[qb])
            hit = first.get(_phase_key(v.conj().T @ target))
            if hit is None:
                continue
            top = hit[0] + qa
            bottom = hit[1] + qb
            if qmat.equal_up_to_phase(brick_unitary(top, bottom), target):
                return top, bottom
    return None


T_GATE = qmat.phase(1)
SINGLE_GATES = {"H": qmat.H, "T": T_GATE, "I": qmat.I2}
CNOT_DOWN = qmat.CNOT  # control on the top wire
CNOT_UP = np.kron(qmat.H, qmat.H) @ qmat.CNOT @ np.kron(qmat.H, qmat.H)  # control on the bottom wire


@lru_cache(maxsize=None)
def lone_table(name: str) -> tuple:
    found = search_lone_angles(SINGLE_GATES[name])
    if found is None:  # pragma: no cover - every table gate is reachable
        raise ValueError(f"no lone-wire angles for {name}")
    return found


@lru_cache(maxsize=None)
def brick_table(key: tuple) -> tuple:
    """Angles for a brick holding one gate.

    ``key`` is ``("I",)``, ``(gate, "top")``, ``(gate, "bottom")``,
    ``("CNOT", "down")`` or ``("CNOT", "up")``.
    """
    if key == ("I",):
        target = np.eye(4, dtype=complex)
    elif key[0] == "CNOT":
        target = CNOT_DOWN if key[1] == "down" else CNOT_UP
    else:
        g = SINGLE_GATES[key[0]]
        target = np.kron(g, qmat.I2) if key[1] == "top" else np.kron(qmat.I2, g)
    found = search_brick_angles(target)
    if found is None:
        raise ValueError(f"no brick angles for {key!r}")
    return found


class CircuitFitError(ValueError):
    """A circuit needs more brick layers or different wire pairings than available."""


def brick_layers(spec: BrickworkSpec) -> int:
    if (spec.depth - 1) % 4:
        raise CircuitFitError(f"depth {spec.depth} is not 1 + 4k; bricks do not tile it")
    return (spec.depth - 1) // 4


def layer_slots(width: int, layer: int) -> list[tuple]:
    """Wire groups of one layer: bricks as (top, top+1), lone wires as (row,)."""
    first = 1 if layer % 2 == 0 else 2
    slots, i = [], 1
    if first == 2:
        slots.append((1,))
        i = 2
    while i <= width:
        if i + 1 <= width:
            slots.append((i, i + 1))
            i += 2
        else:
            slots.append((i,))
            i += 1
    return slots


def _parse_gate(gate) -> tuple[str, tuple]:
    name = str(gate[0]).upper()
    wires = tuple(int(q) for q in gate[1:])
    if name in ("CNOT", "CX"):
        if len(wires) != 2 or abs(wires[0] - wires[1]) != 1:
            raise CircuitFitError(f"CNOT must act on neighbouring wires, got {wires}")
        return "CNOT", wires
    if name in ("H", "T") and len(wires) == 1:
        return name, wires
    raise ValueError(f"unsupported gate {gate!r}; use H, T or CNOT")


def gates_to_brick_angles(gates: Sequence, spec: BrickworkSpec | tuple) -> dict:
    """Angle assignment for a brickwork graph implementing a gate sequence.

    Parameters
    ----------
    gates : sequence of tuples
        ``("H", wire)``, ``("T", wire)`` or ``("CNOT", control, target)`` with
        1-based wires; CNOT wires must be adjacent.
    spec : BrickworkSpec
        Depth must be ``1 + 4k``.

    Returns
    -------
    dict mapping every non-output vertex ``(row, column)`` to an angle in
    eighths.  Gates are packed greedily, each into the earliest layer whose
    slot covering its wires is still free.
    """
    if not isinstance(spec, BrickworkSpec):
        spec = BrickworkSpec(*spec)
    w = spec.width
    n_layers = brick_layers(spec)
    frontier = {q: 0 for q in range(1, w + 1)}
    placed: dict = {}
    for gate in gates:
        name, wires = _parse_gate(gate)
        if any(q < 1 or q > w for q in wires):
            raise CircuitFitError(f"gate {gate!r} uses a wire outside 1..{w}")
        layer = max(frontier[q] for q in wires)
        while True:
            if layer >= n_layers:
                raise CircuitFitError(f"circuit needs more than {n_layers} brick layers")
            slot = next(s for s in layer_slots(w, layer) if wires[0] in s)
            fits = set(wires) <= set(slot) and all(frontier[q] <= layer for q in slot)
            if fits:
                break
            layer += 1
        placed[(layer, slot)] = (name, wires)
        for q in slot:
            frontier[q] = layer + 1
    angles: dict = {}
    for layer in range(n_layers):
        col0 = 4 * layer + 1
        for slot in layer_slots(w, layer):
            name, wires = placed.get((layer, slot), ("I", ()))
            if len(slot) == 1:
                quad = lone_table(name if name != "I" else "I")
                for k in range(4):
                    angles[(slot[0], col0 + k)] = quad[k]
                continue
            if name == "I":
                key = ("I",)
            elif name == "CNOT":
                key = ("CNOT", "down" if wires[0] == slot[0] else "up")
            else:
                key = (name, "top" if wires[0] == slot[0] else "bottom")
            top, bottom = brick_table(key)
            for k in range(4):
                angles[(slot[0], col0 + k)] = top[k]
                angles[(slot[1], col0 + k)] = bottom[k]
    return angles


def circuit_unitary(gates: Sequence, width: int) -> np.ndarray:
    """Plain matrix product of a gate list (wire 1 most significant)."""
    u = np.eye(1 << width, dtype=complex)
    for gate in gates:
        name, wires = _parse_gate(gate)
        if name == "CNOT":
            c, t = wires
            top = min(c, t)
            g = CNOT_DOWN if c == top else CNOT_UP
            full = np.kron(np.kron(np.eye(1 << (top - 1)), g), np.eye(1 << (width - top - 1)))
        else:
            q = wires[0]
            full = np.kron(np.kron(np.eye(1 << (q - 1)), SINGLE_GATES[name]), np.eye(1 << (width - q)))
        u = full @ u
    return u
