"""Blind delegation of a brickwork computation.

A session is driven by the interleaved (one-pure-qubit) command order: the
client hands over one rotated qubit per step, the server entangles and
measures at the angle the client sends, and the client un-masks the reported
bit.  The same session engine runs the trap rounds of the verification
protocol, so the server side is an overridable class with one hook per step.

Mixed inputs are simulated as halves of maximally entangled pairs whose other
halves (``("ref", v)`` tags) stay in the harness.  The server never acts on
them; they only make the overall channel checkable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from opq import dqc1, mbqc, qmat
from opq.dqc1 import BrickworkSpec
from opq.mbqc import CorrectX, CorrectZ, Entangle, Measure, OpenGraph, Pattern, Prepare
from opq.qmat import DensityState

ANGLES = tuple(range(8))
AUDIT_TERM_LIMIT = 1 << 16
AUDIT_DIM_LIMIT = 1 << 12


class ProtocolError(ValueError):
    """The server broke the message protocol; carries the step index."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


def compute_delta(a, sx: int, sz: int, theta: int, r: int) -> int:
    """Masked measurement angle ((-1)^sx a + 4 sz + theta + 4 r) mod 8."""
    a_prime = -a if sx & 1 else a
    return qmat.normalize_angle(a_prime + 4 * (sz & 1) + theta + 4 * (r & 1))


# -- messages ----------------------------------------------------------------------


@dataclass(frozen=True)
class QubitTransfer:
    tag: object
    state: DensityState | None = None


@dataclass(frozen=True)
class AngleMsg:
    tag: object
    delta: int


@dataclass(frozen=True)
class OutcomeMsg:
    tag: object
    b: int


@dataclass(frozen=True)
class FinalLayer:
    tags: tuple


Message = QubitTransfer | AngleMsg | OutcomeMsg | FinalLayer


def message_to_json(msg) -> dict:
    if isinstance(msg, QubitTransfer):
        return {"type": "qubit", "tag": _tag_json(msg.tag)}
    if isinstance(msg, AngleMsg):
        return {"type": "angle", "tag": _tag_json(msg.tag), "delta": msg.delta}
    if isinstance(msg, OutcomeMsg):
        return {"type": "outcome", "tag": _tag_json(msg.tag), "b": msg.b}
    return {"type": "final", "tags": [_tag_json(t) for t in msg.tags]}


def _tag_json(tag):
    return list(tag) if isinstance(tag, tuple) else tag


# -- the shared quantum lab -------------------------------------------------------


@dataclass(frozen=True)
class QubitSpec:
    """Single-qubit preparation: rotated |+>, basis bit, or maximally mixed.

    ``angle`` of a mixed qubit only matters when it is purified: the harness
    then rotates the server's half of the pair, which is invisible to the
    server but keeps the reference comparison exact.
    """

    kind: str
    angle: int = 0
    bit: int = 0


class Lab:
    """Joint density matrix of everything quantum in one session.

    Holds the server's qubits plus harness reference qubits.  Sampling uses the
    lab's own generator so that adversaries cannot reach the randomness.
    With ``purify`` set, mixed qubits are added as halves of maximally
    entangled pairs with a reference ``("ref", tag)``.
    """

    def __init__(self, rng: np.random.Generator, state: DensityState | None = None, purify: bool = False):
        self.state = state if state is not None else qmat.empty_state()
        self.rng = rng
        self.purify = purify

    def add(self, tag, spec: QubitSpec) -> None:
        if spec.kind == "mixed" and self.purify:
            pair = qmat.bell_pairs([(tag, mbqc.reference_tag(tag))])
            pair = qmat.apply_gate(pair, qmat.phase(spec.angle), (tag,), check=False)
            self.state = qmat.tensor(self.state, pair)
        else:
            self.state = qmat.tensor(self.state, _single_state(tag, spec))

    def apply(self, gate: np.ndarray, tags: Sequence) -> None:
        self.state = qmat.apply_gate(self.state, gate, tags, check=False)

    def measure(self, tag, delta) -> int:
        """Sample an XY measurement; the measured qubit is traced out."""
        branches = qmat.measure_xy(self.state, tag, delta)
        pick = 0 if self.rng.random() < branches[0].probability else 1
        if not branches[pick].possible:
            pick = 1 - pick
        self.state = branches[pick].state
        return pick

    def reduced(self, tags: Sequence) -> DensityState:
        return self.state.reduced(tags)

    def density(self, order: Sequence | None = None) -> DensityState:
        return self.state if order is None else self.state.reorder(order)

    @property
    def tags(self) -> tuple:
        return self.state.tags


def _single_state(tag, spec: QubitSpec) -> DensityState:
    if spec.kind == "plus":
        return qmat.plus_state(tag, spec.angle)
    if spec.kind == "basis":
        return qmat.basis_state(tag, spec.bit)
    if spec.kind == "mixed":
        return qmat.maximally_mixed((tag,))
    raise ValueError(f"unknown preparation kind {spec.kind!r}")


class PureLab:
    """State-vector twin of :class:`Lab` for runs whose every input is purified.

    Mixed qubits always enter as halves of maximally entangled pairs, so the
    joint state stays pure and sampling a measurement only needs the
    amplitudes.  Exact, just cheaper per step.  The vector is kept flat with
    the first tag most significant.
    """

    _SQ2 = 1 / np.sqrt(2)

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._tags: list = []
        self.vec = np.ones(1, dtype=complex)

    @property
    def tags(self) -> tuple:
        return tuple(self._tags)

    def _split(self, tag) -> tuple[int, np.ndarray]:
        p = self._tags.index(tag)
        return p, self.vec.reshape(1 << p, 2, -1)

    def add(self, tag, spec: QubitSpec) -> None:
        if spec.kind == "plus":
            amps, tags = qmat.plus_vector(spec.angle), [tag]
        elif spec.kind == "basis":
            amps, tags = np.eye(2, dtype=complex)[spec.bit], [tag]
        elif spec.kind == "mixed":
            amps = np.array([1, 0, 0, np.exp(1j * qmat.to_radians(spec.angle))], dtype=complex) * self._SQ2
            tags = [tag, mbqc.reference_tag(tag)]
        else:
            raise ValueError(f"unknown preparation kind {spec.kind!r}")
        self.vec = qmat.kron(self.vec, amps)
        self._tags.extend(tags)

    def apply(self, gate: np.ndarray, tags: Sequence) -> None:
        if len(tags) == 1:
            _, v = self._split(tags[0])
            self.vec = np.matmul(gate, v).reshape(-1)
            return
        pos = [self._tags.index(t) for t in tags]
        t = self.vec.reshape((2,) * len(self._tags))
        if len(pos) == 2 and gate is qmat.CZ:
            idx = [slice(None)] * t.ndim
            idx[pos[0]] = idx[pos[1]] = 1
            t = t.copy()
            t[tuple(idx)] *= -1
        else:
            k = len(pos)
            g = np.asarray(gate, dtype=complex).reshape((2,) * (2 * k))
            t = np.moveaxis(np.tensordot(g, t, axes=(list(range(k, 2 * k)), pos)), list(range(k)), pos)
        self.vec = t.reshape(-1)

    def measure(self, tag, delta) -> int:
        p, v = self._split(tag)
        a0 = v[:, 0, :]
        a1 = v[:, 1, :] * np.exp(-1j * qmat.to_radians(delta))
        out = (a0 + a1) * self._SQ2
        p0 = float(np.vdot(out, out).real)
        if self.rng.random() < p0 and p0 >= qmat.ZERO_PROB:
            bit, prob = 0, p0
        else:
            bit, out, prob = 1, (a0 - a1) * self._SQ2, 1.0 - p0
        self.vec = out.reshape(-1) / np.sqrt(prob)
        del self._tags[p]
        return bit

    def reduced(self, tags: Sequence) -> DensityState:
        tags = tuple(tags)
        pos = [self._tags.index(t) for t in tags]
        t = np.moveaxis(self.vec.reshape((2,) * len(self._tags)), pos, list(range(len(pos))))
        m = t.reshape(1 << len(pos), -1)
        return DensityState(tags, m @ m.conj().T)

    def density(self, order: Sequence | None = None) -> DensityState:
        return self.reduced(self.tags if order is None else order)


# -- server behaviour ---------------------------------------------------------------


class Server:
    """Honest server.  Subclasses deviate by overriding the hooks.

    Every step calls exactly one public method; ``round_index`` is set by the
    session so strategies can target particular rounds.
    """

    def __init__(self):
        self.lab: Lab | None = None
        self.round_index = 0
        self.held: list = []
        self.observer: Callable[[str, "Server"], None] | None = None

    def begin(self, lab: Lab, round_index: int = 0) -> None:
        self.lab = lab
        self.round_index = round_index
        self.held = []

    def _notify(self, what: str) -> None:
        if self.observer is not None:
            self.observer(what, self)

    def receive(self, tag, spec: QubitSpec | None) -> None:
        """Take a qubit from the client, or (``spec`` None) one already in the lab."""
        if spec is not None:
            self.lab.add(tag, spec)
        self.held.append(tag)
        self._notify("receive")

    def entangle(self, a, b) -> None:
        self.lab.apply(qmat.CZ, (a, b))
        self._notify("entangle")

    def before_measure(self, tag, delta) -> None:
        """Deviation point just before a measurement."""

    def measure(self, tag, delta) -> int:
        self.before_measure(tag, delta)
        b = self.lab.measure(tag, delta)
        self.held.remove(tag)
        self._notify("measure")
        return self.report(tag, b)

    def report(self, tag, b: int) -> int:
        """Bit sent back to the client."""
        return b

    def before_final(self, tags: Sequence) -> None:
        """Deviation point after the last server operation, before hand-back."""

    def final_layer(self, tags: Sequence) -> tuple:
        self.before_final(tags)
        self.held = []
        return tuple(tags)


class FlippingServer(Server):
    """Reports the complement of every measured bit."""

    def report(self, tag, b):
        return 1 - b


# -- one session -------------------------------------------------------------------


@dataclass(frozen=True)
class Layout:
    """What the client (or harness) supplies at each vertex of one round.

    ``kind`` per vertex is ``"plus"`` (|+_theta>, pre-rotated by Z when
    ``zshift`` is 1), ``"basis"`` (dummy bit), ``"mixed"`` (maximally mixed,
    sent by the client), ``"local"`` (maximally mixed input the server
    prepares itself) or ``"given"`` (already in the lab when the session
    starts).
    """

    kind: Mapping
    theta: Mapping
    dummy: Mapping = field(default_factory=dict)
    zshift: Mapping = field(default_factory=dict)

    def qubit(self, v) -> QubitSpec | None:
        kind = self.kind[v]
        if kind == "plus":
            return QubitSpec("plus", qmat.normalize_angle(self.theta[v] + 4 * (self.zshift.get(v, 0) & 1)))
        if kind == "basis":
            return QubitSpec("basis", bit=self.dummy[v])
        if kind in ("mixed", "local"):
            return QubitSpec("mixed", angle=self.theta.get(v, 0))
        if kind == "given":
            return None
        raise ValueError(f"unknown layout kind {kind!r} at {v!r}")


@dataclass
class SessionResult:
    messages: list
    outcomes: dict  # reported bits b
    signals: dict  # client-side s = b xor r
    output_tags: tuple
    lab: Lab
    steps: int


def run_session(
    pattern: Pattern,
    layout: Layout,
    r: Mapping,
    server: Server,
    lab: Lab,
    round_index: int = 0,
    delta_override: Mapping | None = None,
    apply_corrections: bool = True,
) -> SessionResult:
    """Drive one blind round over ``pattern`` (an interleaved rewrite).

    The input column is loaded first (client-sent qubits count as messages,
    server-prepared ones do not).  Returns the transcript pieces; the final
    layer is left in ``lab`` with the client's corrections applied when
    ``apply_corrections`` is set.
    """
    g = pattern.graph
    messages: list = []
    b_rec: dict = {}
    s_rec: dict = {}
    server.begin(lab, round_index)
    for v in g.inputs:
        if layout.kind[v] != "local":
            messages.append(QubitTransfer(v))
        server.receive(v, layout.qubit(v))
    for step, cmd in enumerate(pattern.commands):
        if isinstance(cmd, Prepare):
            messages.append(QubitTransfer(cmd.node))
            server.receive(cmd.node, layout.qubit(cmd.node))
        elif isinstance(cmd, Entangle):
            server.entangle(cmd.a, cmd.b)
        elif isinstance(cmd, Measure):
            v = cmd.node
            if delta_override is not None and v in delta_override:
                delta = delta_override[v]
            else:
                sx = sum(s_rec[u] for u in cmd.sx)
                sz = sum(s_rec[u] for u in cmd.sz)
                delta = compute_delta(cmd.angle, sx, sz, layout.theta[v], r[v])
            messages.append(AngleMsg(v, delta))
            b = server.measure(v, delta)
            if b not in (0, 1):
                raise ProtocolError(step, f"server returned {b!r} for {v!r}, expected a bit")
            messages.append(OutcomeMsg(v, int(b)))
            b_rec[v] = int(b)
            s_rec[v] = int(b) ^ (r[v] & 1)
        elif isinstance(cmd, (CorrectX, CorrectZ)):
            continue
    returned = server.final_layer(g.outputs)
    if tuple(returned) != tuple(g.outputs):
        raise ProtocolError(len(pattern.commands), "final layer does not match the output vertices")
    messages.append(FinalLayer(tuple(g.outputs)))
    if apply_corrections:
        # undo the preparation rotation first: it sits below the Pauli byproducts
        for o in g.outputs:
            if layout.kind[o] == "plus":
                turn = layout.theta[o] + 4 * (layout.zshift.get(o, 0) & 1)
                lab.apply(qmat.phase(-turn), (o,))
        for cmd in pattern.commands:
            if isinstance(cmd, CorrectX) and sum(s_rec[u] for u in cmd.deps) & 1:
                lab.apply(qmat.X, (cmd.node,))
            elif isinstance(cmd, CorrectZ) and sum(s_rec[u] for u in cmd.deps) & 1:
                lab.apply(qmat.Z, (cmd.node,))
    return SessionResult(messages, b_rec, s_rec, tuple(g.outputs), lab, len(pattern.commands))


# -- blind sessions ------------------------------------------------------------------


@dataclass(frozen=True)
class ClientSecrets:
    theta: Mapping
    r: Mapping
    signals: Mapping


@dataclass(frozen=True)
class Transcript:
    messages: tuple
    secrets: ClientSecrets
    outcomes: Mapping
    output: DensityState  # corrected final layer, followed by any reference qubits

    def client_output(self) -> DensityState:
        """The top output qubit, which is what the client keeps."""
        return self.output.reduced((self.output.tags[0],))

    def to_json(self) -> list:
        return [message_to_json(m) for m in self.messages]


def draw_secrets(graph: OpenGraph, rng: np.random.Generator) -> tuple[dict, dict]:
    theta = {v: int(rng.integers(8)) for v in graph.vertices}
    r = {v: int(rng.integers(2)) for v in graph.non_outputs}
    return theta, r


def run_blind(
    angles: Mapping,
    spec: BrickworkSpec | tuple,
    server: Server | None = None,
    seed=None,
    client_input: DensityState | None = None,
    purify: bool = False,
    use_r: bool = True,
) -> Transcript:
    """Run the blind protocol on a brickwork graph.

    Parameters
    ----------
    angles : mapping
        Measurement angle (eighths) per non-output vertex.
    server : Server, optional
        Honest by default.
    client_input : DensityState, optional
        State of the top input qubit, possibly with extra reference tags.
        Defaults to |+>.
    purify : bool
        Realise the mixed inputs as entangled halves (for channel checks).
    use_r : bool
        Draw the outcome masks r; ``False`` forces r = 0.
    """
    graph, flow = dqc1.brickwork(spec)
    pattern = dqc1.rewrite_with_flow(graph, flow, angles)
    rng = np.random.default_rng(seed)
    theta, r = draw_secrets(graph, rng)
    if not use_r:
        r = {v: 0 for v in r}
    server = server or Server()
    kind = {v: "plus" for v in graph.vertices}
    for v in graph.inputs[1:]:
        kind[v] = "local"
    lab = Lab(np.random.default_rng(rng.integers(2**63)), purify=purify)
    top = graph.inputs[0]
    if client_input is not None:
        # the client's own qubit leaves rotated by its secret angle
        kind[top] = "given"
        lab.state = qmat.apply_gate(client_input, qmat.phase(theta[top]), (top,), check=False)
    layout = Layout(kind, theta)
    res = run_session(pattern, layout, r, server, lab)
    extra = tuple(t for t in lab.tags if t not in set(graph.outputs))
    out = lab.density(tuple(graph.outputs) + extra)
    secrets = ClientSecrets(dict(theta), dict(r), dict(res.signals))
    return Transcript(tuple(res.messages), secrets, dict(res.outcomes), out)


def blind_choi(angles: Mapping, spec: BrickworkSpec | tuple, seed=None, server: Server | None = None) -> DensityState:
    """Output+reference state of one run whose whole input is a Choi state.

    The top input is entangled with ``("ref", (1, 1))`` and the mixed inputs
    are purified, so with an honest server the result should equal the
    Choi state of the reference unitary.
    """
    graph, _ = dqc1.brickwork(spec)
    top = graph.inputs[0]
    client_input = qmat.bell_pairs([(top, mbqc.reference_tag(top))])
    t = run_blind(angles, spec, server=server, seed=seed, client_input=client_input, purify=True)
    refs = tuple(mbqc.reference_tag(v) for v in graph.inputs)
    return t.output.reorder(tuple(graph.outputs) + refs)


# -- blindness audit ------------------------------------------------------------------


def _line_dependencies(spec: BrickworkSpec):
    graph, flow = dqc1.brickwork(spec)
    sx, sz = dqc1.dependency_sets(graph, flow)
    return graph, flow, sx, sz


def averaged_view(
    angles: Mapping,
    spec: BrickworkSpec | tuple,
    outcomes: Mapping,
    use_r: bool = True,
) -> np.ndarray:
    """Server's stored view averaged uniformly over the client's secrets.

    The view is every qubit the client sends, in vertex order, followed by
    each angle message as a three-qubit basis state.  Reported bits are fixed
    to ``outcomes`` (the view is conditioned on them).  Only the client-sent
    qubits carry secrets, so the brickwork must have width 1.
    """
    if not isinstance(spec, BrickworkSpec):
        spec = BrickworkSpec(*spec)
    graph, flow, sx, sz = _line_dependencies(spec)
    if spec.width != 1:
        raise ValueError("the exhaustive view audit covers single-row brickwork only")
    sent = list(graph.vertices)
    measured = dqc1.measurement_order(graph, flow)
    n_terms = 8 ** len(sent) * (2 ** len(measured) if use_r else 1)
    dim = 2 ** len(sent) * 8 ** len(measured)
    if n_terms > AUDIT_TERM_LIMIT or dim > AUDIT_DIM_LIMIT:
        raise ValueError(f"audit too large: {n_terms} terms, dimension {dim}")
    plus = {t: qmat.plus_vector(t) for t in ANGLES}
    onehot = np.eye(8, dtype=complex)
    rows = []
    r_space = list(itertools.product((0, 1), repeat=len(measured))) if use_r else [(0,) * len(measured)]
    for thetas in itertools.product(ANGLES, repeat=len(sent)):
        theta = dict(zip(sent, thetas))
        q = plus[thetas[0]]
        for t in thetas[1:]:
            q = np.kron(q, plus[t])
        for rs in r_space:
            r = dict(zip(measured, rs))
            s = {v: outcomes[v] ^ r[v] for v in measured}
            vec = q
            for v in measured:
                delta = compute_delta(
                    angles[v], sum(s[u] for u in sx[v]), sum(s[u] for u in sz[v]), theta[v], r[v]
                )
                vec = np.kron(vec, onehot[delta])
            rows.append(vec)
    v = np.array(rows)
    return (v.T @ v.conj()) / len(rows)


def blindness_audit(
    angles_a: Mapping,
    angles_b: Mapping,
    spec: BrickworkSpec | tuple = (1, 3),
    use_r: bool = True,
) -> float:
    """Largest trace distance between averaged views, over all reported bit strings."""
    if not isinstance(spec, BrickworkSpec):
        spec = BrickworkSpec(*spec)
    graph, flow = dqc1.brickwork(spec)
    measured = dqc1.measurement_order(graph, flow)
    worst = 0.0
    for bits in itertools.product((0, 1), repeat=len(measured)):
        outcomes = dict(zip(measured, bits))
        va = averaged_view(angles_a, spec, outcomes, use_r)
        vb = averaged_view(angles_b, spec, outcomes, use_r)
        worst = max(worst, qmat.trace_distance(va, vb))
    return worst


def angles_from_list(values: Sequence[int], spec: BrickworkSpec | tuple) -> dict:
    """Angle map from a flat list in measurement order (column by column)."""
    graph, flow = dqc1.brickwork(spec)
    order = dqc1.measurement_order(graph, flow)
    if len(values) != len(order):
        raise ValueError(f"expected {len(order)} angles, got {len(values)}")
    out = {}
    for v, a in zip(order, values):
        a = int(a)
        if not 0 <= a <= 7:
            raise ValueError(f"angle {a} out of range 0..7")
        out[v] = a
    return out
