"""Measurement patterns over open graphs.

A pattern is an ordered list of commands (prepare, entangle, adaptive
measure, Pauli correction) over an open graph ``(G, I, O)``.  This module
holds the static checks (runnability, flow), an exhaustive flow finder for
small graphs, the branch-enumerating executor and the reference unitary that
a flowed pattern is supposed to implement.

Measurement outcome 0 always corresponds to the projection onto
``|+_angle>``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from opq import qmat
from opq.qmat import DensityState

Vertex = Hashable

MAX_BRANCHES = 2**20
FLOW_SEARCH_LIMIT = 12
UNITARY_SIZE_LIMIT = 20


class PatternError(ValueError):
    """A pattern cannot be executed as requested."""


class FlowError(ValueError):
    """A flow does not satisfy the preconditions of an operation."""


@dataclass(frozen=True)
class OpenGraph:
    """Undirected graph with ordered input and output vertex lists."""

    vertices: tuple
    edges: frozenset
    inputs: tuple
    outputs: tuple

    def __init__(self, vertices: Iterable, edges: Iterable, inputs: Iterable = (), outputs: Iterable = ()):
        vertices = tuple(vertices)
        if len(set(vertices)) != len(vertices):
            raise ValueError("duplicate vertex")
        vset = set(vertices)
        es = set()
        for a, b in edges:
            if a == b:
                raise ValueError(f"self-loop at {a!r}")
            if a not in vset or b not in vset:
                raise ValueError(f"edge ({a!r}, {b!r}) references an unknown vertex")
            es.add(frozenset((a, b)))
        inputs, outputs = tuple(inputs), tuple(outputs)
        for name, group in (("input", inputs), ("output", outputs)):
            if not set(group) <= vset:
                raise ValueError(f"{name} vertex not in graph")
            if len(set(group)) != len(group):
                raise ValueError(f"duplicate {name} vertex")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "edges", frozenset(es))
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        adj = {v: set() for v in vertices}
        for e in es:
            a, b = tuple(e)
            adj[a].add(b)
            adj[b].add(a)
        object.__setattr__(self, "_adj", {v: frozenset(n) for v, n in adj.items()})

    def neighbours(self, v: Vertex) -> frozenset:
        return self._adj[v]

    def adjacent(self, a: Vertex, b: Vertex) -> bool:
        return b in self._adj[a]

    @property
    def non_outputs(self) -> tuple:
        """O^c in vertex order."""
        out = set(self.outputs)
        return tuple(v for v in self.vertices if v not in out)

    @property
    def non_inputs(self) -> tuple:
        """I^c in vertex order."""
        inp = set(self.inputs)
        return tuple(v for v in self.vertices if v not in inp)

    def sorted_edges(self) -> list[tuple]:
        """Edges as pairs ordered by vertex position, sorted."""
        pos = {v: i for i, v in enumerate(self.vertices)}
        pairs = [tuple(sorted(e, key=pos.__getitem__)) for e in self.edges]
        return sorted(pairs, key=lambda p: (pos[p[0]], pos[p[1]]))


@dataclass(frozen=True)
class Flow:
    """Flow map on O^c plus a level function encoding the partial order.

    ``x`` strictly precedes ``y`` iff ``level[x] < level[y]``.
    """

    f: Mapping
    level: Mapping

    def precedes(self, x: Vertex, y: Vertex) -> bool:
        return self.level[x] < self.level[y]

    def inverse(self) -> dict:
        return {y: x for x, y in self.f.items()}


@dataclass(frozen=True)
class Violation:
    """A failed static check: rule id, where it failed and a short message."""

    rule: str
    where: object
    message: str = ""


# -- commands -----------------------------------------------------------------


@dataclass(frozen=True)
class Prepare:
    """N_v: add qubit ``node`` as |+_angle>, a basis state, or maximally mixed."""

    node: Vertex
    kind: str = "plus"
    angle: float = 0
    bit: int = 0

    def state(self) -> DensityState:
        if self.kind == "plus":
            return qmat.plus_state(self.node, self.angle)
        if self.kind == "basis":
            return qmat.basis_state(self.node, self.bit)
        if self.kind == "mixed":
            return qmat.maximally_mixed((self.node,))
        raise ValueError(f"unknown preparation kind {self.kind!r}")


@dataclass(frozen=True)
class Entangle:
    a: Vertex
    b: Vertex


@dataclass(frozen=True)
class Measure:
    """Adaptive XY measurement at (-1)^{s_x} angle + s_z pi."""

    node: Vertex
    angle: float
    sx: frozenset = field(default_factory=frozenset)
    sz: frozenset = field(default_factory=frozenset)


@dataclass(frozen=True)
class CorrectX:
    node: Vertex
    deps: frozenset = field(default_factory=frozenset)


@dataclass(frozen=True)
class CorrectZ:
    node: Vertex
    deps: frozenset = field(default_factory=frozenset)


Command = Prepare | Entangle | Measure | CorrectX | CorrectZ


def acted_on(cmd) -> tuple:
    if isinstance(cmd, Entangle):
        return (cmd.a, cmd.b)
    return (cmd.node,)


def dependencies(cmd) -> frozenset:
    if isinstance(cmd, Measure):
        return cmd.sx | cmd.sz
    if isinstance(cmd, (CorrectX, CorrectZ)):
        return cmd.deps
    return frozenset()


@dataclass(frozen=True)
class Pattern:
    graph: OpenGraph
    commands: tuple
    angles: Mapping = field(default_factory=dict)
    flow: Flow | None = None

    def measurements(self) -> list[Measure]:
        return [c for c in self.commands if isinstance(c, Measure)]

    def measure_command(self, v: Vertex) -> Measure:
        for c in self.commands:
            if isinstance(c, Measure) and c.node == v:
                return c
        raise KeyError(v)


@dataclass(frozen=True)
class BranchRecord:
    outcomes: Mapping
    probability: float
    state: DensityState

    @property
    def branch_id(self) -> str:
        return "".join(str(b) for b in self.outcomes.values())


@dataclass(frozen=True)
class Counterexample:
    first: BranchRecord
    second: BranchRecord
    distance: float


# -- static checks -----------------------------------------------------------


def check_runnable(pattern: Pattern) -> list[Violation]:
    """Runnability of the literal command order; empty list means runnable.

    R0: a dependency refers to an unmeasured qubit.  R1: a non-preparation
    command touches a measured or not-yet-prepared qubit.  R2: a qubit is
    measured iff it is not an output and prepared iff it is not an input.
    """
    g = pattern.graph
    inputs, outputs = set(g.inputs), set(g.outputs)
    vset = set(g.vertices)
    live = set(inputs)
    measured: set = set()
    prepared: set = set()
    out: list[Violation] = []
    for idx, cmd in enumerate(pattern.commands):
        missing = [d for d in dependencies(cmd) if d not in measured]
        if missing:
            out.append(Violation("R0", idx, f"depends on unmeasured {missing[0]!r}"))
        if isinstance(cmd, Prepare):
            v = cmd.node
            if v not in vset:
                out.append(Violation("R1", idx, f"prepares unknown qubit {v!r}"))
            elif v in inputs or v in prepared:
                out.append(Violation("R2", idx, f"prepares input or already prepared qubit {v!r}"))
            prepared.add(v)
            live.add(v)
            continue
        for v in acted_on(cmd):
            if v not in live:
                state = "measured" if v in measured else "not prepared"
                out.append(Violation("R1", idx, f"acts on {state} qubit {v!r}"))
        if isinstance(cmd, Measure):
            v = cmd.node
            if v in outputs:
                out.append(Violation("R2", idx, f"measures output {v!r}"))
            if v in measured:
                out.append(Violation("R2", idx, f"measures {v!r} twice"))
            measured.add(v)
            live.discard(v)
    end = len(pattern.commands)
    for v in g.non_outputs:
        if v not in measured:
            out.append(Violation("R2", end, f"non-output {v!r} never measured"))
    for v in g.non_inputs:
        if v not in prepared:
            out.append(Violation("R2", end, f"non-input {v!r} never prepared"))
    return out


def check_flow(graph: OpenGraph, flow: Flow) -> list[Violation]:
    """Flow conditions for every x in O^c; empty list means the flow is valid.

    F0: x ~ f(x).  F1: x precedes f(x).  F2: x precedes every other neighbour
    of f(x).  Shape problems (f not total on O^c, image outside I^c, missing
    levels) are reported under rule ``"shape"``; a non-injective f is also
    reported under ``"injective"``.
    """
    out: list[Violation] = []
    inputs = set(graph.inputs)
    missing = [v for v in graph.vertices if v not in flow.level]
    if missing:
        out.append(Violation("shape", missing[0], "level undefined"))
        return out
    for x in graph.non_outputs:
        if x not in flow.f:
            out.append(Violation("shape", x, "f undefined on non-output"))
    for x, y in flow.f.items():
        if y not in graph.neighbours(x) and y not in graph.vertices:
            out.append(Violation("shape", x, f"f({x!r}) = {y!r} not a vertex"))
        if y in inputs:
            out.append(Violation("shape", x, f"f({x!r}) = {y!r} is an input"))
    if out:
        return out
    seen: dict = {}
    for x in graph.non_outputs:
        y = flow.f[x]
        if y in seen:
            out.append(Violation("injective", (seen[y], x), f"both map to {y!r}"))
        seen[y] = x
        if not graph.adjacent(x, y):
            out.append(Violation("F0", x, f"{x!r} not adjacent to f(x) = {y!r}"))
        if not flow.precedes(x, y):
            out.append(Violation("F1", x, f"{x!r} does not precede f(x) = {y!r}"))
        for z in graph.neighbours(y):
            if z != x and not flow.precedes(x, z):
                out.append(Violation("F2", (x, z), f"{x!r} does not precede {z!r} ~ f(x)"))
    return out


def _levels_from_constraints(vertices: Sequence, before: dict) -> dict | None:
    """Longest-path layering of a precedence relation, or None if cyclic."""
    indeg = {v: 0 for v in vertices}
    for x, succ in before.items():
        for y in succ:
            indeg[y] += 1
    level = {v: 0 for v in vertices}
    ready = [v for v in vertices if indeg[v] == 0]
    done = 0
    while ready:
        x = ready.pop()
        done += 1
        for y in before.get(x, ()):
            level[y] = max(level[y], level[x] + 1)
            indeg[y] -= 1
            if indeg[y] == 0:
                ready.append(y)
    return level if done == len(vertices) else None


def _flow_constraints(graph: OpenGraph, f: Mapping) -> dict:
    before: dict = {}
    for x, y in f.items():
        succ = before.setdefault(x, set())
        succ.add(y)
        succ.update(z for z in graph.neighbours(y) if z != x)
    return before


def levels_for(graph: OpenGraph, f: Mapping) -> dict | None:
    """Smallest level function making ``f`` a flow, or None if F1/F2 force a cycle."""
    return _levels_from_constraints(graph.vertices, _flow_constraints(graph, f))


def find_flow(graph: OpenGraph, limit: int = FLOW_SEARCH_LIMIT) -> Flow | None:
    """Exhaustive flow search for small graphs.

    Backtracks over injective maps f with x ~ f(x) and f(x) in I^c, and for
    each complete map derives the precedence constraints of F1/F2; a flow
    exists for that map iff the constraints are acyclic.
    """
    if len(graph.vertices) > limit:
        raise ValueError(f"graph has {len(graph.vertices)} vertices, search limit is {limit}")
    inputs = set(graph.inputs)
    xs = list(graph.non_outputs)
    cands = {x: [y for y in graph.vertices if y in graph.neighbours(x) and y not in inputs] for x in xs}
    xs.sort(key=lambda x: len(cands[x]))
    if any(not cands[x] for x in xs):
        return None

    used: set = set()
    f: dict = {}

    def search(i: int) -> Flow | None:
        if i == len(xs):
            level = _levels_from_constraints(graph.vertices, _flow_constraints(graph, f))
            if level is None:
                return None
            ordered = {x: f[x] for x in graph.non_outputs}
            return Flow(ordered, level)
        x = xs[i]
        for y in cands[x]:
            if y in used:
                continue
            f[x] = y
            used.add(y)
            found = search(i + 1)
            if found is not None:
                return found
            used.discard(y)
            del f[x]
        return None

    return search(0)


# -- execution ----------------------------------------------------------------


def effective_angle(cmd: Measure, outcomes: Mapping):
    """(-1)^{sum over s_x} angle + (sum over s_z) pi, in eighths."""
    sx = sum(outcomes[v] for v in cmd.sx) & 1
    sz = sum(outcomes[v] for v in cmd.sz) & 1
    a = -cmd.angle if sx else cmd.angle
    return qmat.normalize_angle(a + 4 * sz)


def _apply(state: DensityState, cmd, outcomes: Mapping) -> DensityState:
    if isinstance(cmd, Prepare):
        return qmat.tensor(state, cmd.state())
    if isinstance(cmd, Entangle):
        return qmat.apply_gate(state, qmat.CZ, (cmd.a, cmd.b), check=False)
    if isinstance(cmd, CorrectX):
        if sum(outcomes[v] for v in cmd.deps) & 1:
            return qmat.apply_gate(state, qmat.X, (cmd.node,), check=False)
        return state
    if isinstance(cmd, CorrectZ):
        if sum(outcomes[v] for v in cmd.deps) & 1:
            return qmat.apply_gate(state, qmat.Z, (cmd.node,), check=False)
        return state
    raise TypeError(f"not a unitary or preparation command: {cmd!r}")


Observer = Callable[[int, object, Mapping, DensityState], None]


def execute_pattern(
    pattern: Pattern,
    input_state: DensityState,
    mode: str = "enumerate",
    seed=None,
    observer: Observer | None = None,
    max_branches: int = MAX_BRANCHES,
):
    """Run a pattern on ``input_state``.

    Parameters
    ----------
    pattern : Pattern
        Must be runnable.
    input_state : DensityState
        Must carry every input vertex.  Extra tags that are not vertices of the
        graph (e.g. reference halves of entangled pairs) are carried along
        untouched.
    mode : {"enumerate", "sample"}
        ``"enumerate"`` returns every possible branch; ``"sample"`` draws
        outcomes with ``numpy.random.default_rng(seed)`` and returns one
        branch.
    observer : callable, optional
        Called as ``observer(command_index, outcomes, state)`` after every
        command on every branch.

    Returns
    -------
    list of BranchRecord, or a single BranchRecord in sample mode.  Final
    states list the outputs in graph order followed by the extra tags.
    """
    violations = check_runnable(pattern)
    if violations:
        v = violations[0]
        raise PatternError(f"pattern not runnable: {v.rule} at command {v.where}: {v.message}")
    g = pattern.graph
    vset = set(g.vertices)
    carried = [t for t in input_state.tags if t in vset]
    if set(carried) != set(g.inputs):
        raise PatternError(f"input tags {tuple(carried)!r} do not match pattern inputs {g.inputs!r}")
    extra = tuple(t for t in input_state.tags if t not in vset)
    final_order = tuple(g.outputs) + extra
    n_meas = len(pattern.measurements())
    if mode == "enumerate" and 2**n_meas > max_branches:
        raise PatternError(f"{2**n_meas} branches exceed the enumeration cap {max_branches}")
    if mode not in ("enumerate", "sample"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed) if mode == "sample" else None
    commands = pattern.commands
    records: list[BranchRecord] = []
    stack = [(0, input_state, {}, 1.0)]
    while stack:
        idx, state, outcomes, prob = stack.pop()
        while idx < len(commands):
            cmd = commands[idx]
            if isinstance(cmd, Measure):
                branches = [b for b in qmat.measure_xy(state, cmd.node, effective_angle(cmd, outcomes)) if b.possible]
                if rng is not None:
                    p = np.array([b.probability for b in branches])
                    pick = branches[rng.choice(len(branches), p=p / p.sum())]
                    branches = [pick]
                for b in reversed(branches[1:]):
                    o = dict(outcomes)
                    o[cmd.node] = b.outcome
                    if observer is not None:
                        observer(idx, o, b.state)
                    stack.append((idx + 1, b.state, o, prob * b.probability))
                b = branches[0]
                outcomes = dict(outcomes)
                outcomes[cmd.node] = b.outcome
                state, prob = b.state, prob * b.probability
            else:
                state = _apply(state, cmd, outcomes)
            if observer is not None:
                observer(idx, outcomes, state)
            idx += 1
        records.append(BranchRecord(outcomes, prob, state.reorder(final_order)))
    if rng is not None:
        return records[0]
    return records


def averaged_output(records: Sequence[BranchRecord]) -> DensityState:
    """Probability-weighted mixture of branch outputs (the induced channel's output)."""
    tags = records[0].state.tags
    m = sum(r.probability * r.state.reorder(tags).matrix for r in records)
    return DensityState(tags, m)


# -- reference unitary and channel comparison ------------------------------------


def reference_unitary(
    graph: OpenGraph, flow: Flow, angles: Mapping, limit: int = UNITARY_SIZE_LIMIT
) -> np.ndarray:
    """2^{|O^c|/2} (prod_{i in O^c} <+_{a_i}|_i) E_G N_{I^c}, built literally.

    Rows are indexed by the outputs (first output most significant), columns by
    the inputs.  Raises ``FlowError`` if the flow is invalid and ``ValueError``
    if the result is not an isometry.
    """
    bad = check_flow(graph, flow)
    if bad:
        raise FlowError(f"invalid flow: {bad[0].rule} at {bad[0].where!r}")
    vs = list(graph.vertices)
    nv = len(vs)
    if nv > limit:
        raise ValueError(f"graph has {nv} vertices, limit is {limit}")
    pos = {v: i for i, v in enumerate(vs)}
    n_in = len(graph.inputs)
    din = 1 << n_in
    # N_{I^c}: inputs carry an identity "column" index, everything else |+>
    ident = np.eye(din, dtype=complex).reshape((2,) * n_in + (din,))
    aux = graph.non_inputs
    plus = np.ones((2,) * len(aux), dtype=complex) / np.sqrt(2) ** len(aux)
    psi = np.multiply.outer(ident, plus)  # axes: inputs..., column, aux...
    src = [pos[v] for v in graph.inputs] + [nv] + [pos[v] for v in aux]
    psi = np.moveaxis(psi, list(range(nv + 1)), src)
    # E_G: a sign (-1)^{x_a x_b} per edge
    cz = np.array([[1, 1], [1, -1]], dtype=complex)
    for a, b in graph.sorted_edges():
        shape = [1] * (nv + 1)
        shape[pos[a]] = 2
        shape[pos[b]] = 2
        psi = psi * cz.reshape(shape)
    # <+_{a_i}| on each non-output, highest axis first so positions stay valid
    for v in sorted(graph.non_outputs, key=pos.__getitem__, reverse=True):
        bra = qmat.plus_vector(angles[v]).conj()
        psi = np.tensordot(psi, bra, axes=([pos[v]], [0]))
    remaining = [v for v in vs if v not in set(graph.non_outputs)]
    order = [remaining.index(v) for v in graph.outputs]
    psi = psi.transpose(order + [len(remaining)])
    u = psi.reshape(1 << len(graph.outputs), din) * 2 ** (len(graph.non_outputs) / 2)
    if not np.allclose(u.conj().T @ u, np.eye(din), atol=qmat.ATOL, rtol=0):
        raise ValueError("reference map is not an isometry; check flow and angles")
    return u


def reference_tag(v: Vertex):
    return ("ref", v)


def choi_input(inputs: Sequence[Vertex]) -> DensityState:
    """Each input maximally entangled with a reference qubit ``("ref", v)``."""
    return qmat.bell_pairs([(v, reference_tag(v)) for v in inputs])


def unitary_choi(u: np.ndarray, inputs: Sequence[Vertex], outputs: Sequence[Vertex]) -> DensityState:
    """(U ⊗ I)|Phi><Phi|(U ⊗ I)^† over outputs followed by reference tags."""
    din = 1 << len(inputs)
    phi = np.eye(din, dtype=complex).reshape(-1) / np.sqrt(din)
    vec = np.kron(u, np.eye(din)) @ phi
    return qmat.pure(tuple(outputs) + tuple(reference_tag(v) for v in inputs), vec)


def pattern_choi(pattern: Pattern) -> DensityState:
    """Choi state of the channel a pattern induces (all branches averaged)."""
    records = execute_pattern(pattern, choi_input(pattern.graph.inputs))
    return averaged_output(records)


def check_strong_determinism(pattern: Pattern, atol: float = qmat.ATOL) -> Counterexample | None:
    """None if every branch ends in the same state on a Choi input, else a witness pair."""
    if not pattern.measurements():
        return None
    records = execute_pattern(pattern, choi_input(pattern.graph.inputs))
    first = records[0]
    for rec in records[1:]:
        d = qmat.trace_distance(first.state, rec.state)
        if d > atol:
            return Counterexample(first, rec, d)
    return None


def line_graph(n: int) -> OpenGraph:
    """Path 1 - 2 - ... - n with I = {1}, O = {n}."""
    vs = tuple(range(1, n + 1))
    return OpenGraph(vs, zip(vs, vs[1:]), (1,), (n,))


def successor_flow(n: int) -> Flow:
    return Flow({i: i + 1 for i in range(1, n)}, {i: i for i in range(1, n + 1)})


def all_open_graphs(n: int) -> Iterable[OpenGraph]:
    """Every labelled graph on vertices 0..n-1 with every choice of I and O."""
    vs = tuple(range(n))
    pairs = list(itertools.combinations(vs, 2))
    subsets = [tuple(v for v in vs if mask >> v & 1) for mask in range(1 << n)]
    for emask in range(1 << len(pairs)):
        edges = [p for k, p in enumerate(pairs) if emask >> k & 1]
        for i in subsets:
            for o in subsets:
                yield OpenGraph(vs, edges, i, o)
