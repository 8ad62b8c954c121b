"""Trap-based verification: s blind rounds, one computational and s-1 traps.

Trap rounds run an all-zero computation on a maximally mixed input with one
isolated trap qubit whose outcome the client can predict.  Dummy qubits in
the computational basis cut the trap out of the graph; their effect on the
remaining neighbours is cancelled by pre-rotating those neighbours.

Alongside the Monte Carlo estimator the module carries closed-form
calculators for Pauli attacks expressed in the rotated frame, where trap
rounds pass with a probability that only depends on how many positions the
attack touches and where.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from opq import blindproto, dqc1, mbqc, qmat
from opq.blindproto import Lab, Layout, PureLab, Server
from opq.dqc1 import BrickworkSpec
from opq.qmat import DensityState


class FrameMismatchError(ValueError):
    """An attack has no fixed Pauli form in the rotated frame."""


# -- configuration ----------------------------------------------------------------------


@dataclass(frozen=True)
class RoundConfig:
    """Secrets for one round.

    ``trap`` is None for the computational round.  ``theta`` covers every
    non-dummy vertex, ``r`` every vertex (output traps use theirs too) and
    ``dummy_delta`` gives the uniformly random angle sent for each measured
    dummy.
    """

    index: int
    trap: tuple | None
    dummies: frozenset
    dummy_bits: Mapping
    theta: Mapping
    r: Mapping
    dummy_delta: Mapping = field(default_factory=dict)

    @property
    def computational(self) -> bool:
        return self.trap is None


@dataclass(frozen=True)
class TrapConfig:
    spec: BrickworkSpec
    s: int
    t_g: int
    rounds: tuple

    def round(self, k: int) -> RoundConfig:
        return self.rounds[k - 1]


def dummy_set(graph: mbqc.OpenGraph, trap: tuple, rule: str = "vertex") -> frozenset:
    """Rows to fill with dummies around a trap.

    ``"vertex"`` adds the trap's row and, if the trap vertex itself has a
    vertical edge, the row at its other end.  ``"row"`` adds every row joined
    to the trap's row by any vertical edge.
    """
    tx = trap[0]
    rows = {tx}
    if rule == "vertex":
        rows |= {u[0] for u in graph.neighbours(trap) if u[1] == trap[1]}
    elif rule == "row":
        for a, b in graph.edges:
            if a[1] == b[1] and tx in (a[0], b[0]):
                rows |= {a[0], b[0]}
    else:
        raise ValueError(f"unknown dummy rule {rule!r}")
    return frozenset(v for v in graph.vertices if v[0] in rows and v != trap)


def setup_rounds(
    spec: BrickworkSpec | tuple, s: int, seed=None, rng: np.random.Generator | None = None, rule: str = "vertex"
) -> TrapConfig:
    """Draw all of the client's randomness for one verification run."""
    if s < 1:
        raise ValueError("need at least one round")
    if not isinstance(spec, BrickworkSpec):
        spec = BrickworkSpec(*spec)
    rng = rng if rng is not None else np.random.default_rng(seed)
    graph, _ = dqc1.brickwork(spec)
    vs = graph.vertices
    t_g = int(rng.integers(1, s + 1))
    n = len(vs)
    rounds = []
    for k in range(1, s + 1):
        if k == t_g:
            trap, dummies = None, frozenset()
        else:
            trap = vs[int(rng.integers(n))]
            dummies = dummy_set(graph, trap, rule)
        # one batch per round: dummy bits, theta, r, dummy deltas
        draws = rng.integers(0, 8, size=4 * n).tolist()
        bits = {v: draws[i] & 1 for i, v in enumerate(vs) if v in dummies}
        theta = {v: draws[n + i] for i, v in enumerate(vs) if v not in dummies}
        r = {v: draws[2 * n + i] & 1 for i, v in enumerate(vs)}
        ddelta = {v: draws[3 * n + i] for i, v in enumerate(vs) if v in dummies and v not in graph.outputs}
        rounds.append(RoundConfig(k, trap, dummies, bits, theta, r, ddelta))
    return TrapConfig(spec, s, t_g, tuple(rounds))


def _zshift(graph: mbqc.OpenGraph, rc: RoundConfig, v) -> int:
    return sum(rc.dummy_bits[u] for u in graph.neighbours(v) if u in rc.dummies) & 1


def round_layout(config: TrapConfig, k: int) -> Layout:
    graph, _ = dqc1.brickwork(config.spec)
    rc = config.round(k)
    inputs = set(graph.inputs)
    kind, zshift = {}, {}
    for v in graph.vertices:
        if v in rc.dummies:
            kind[v] = "basis"
        elif rc.computational:
            kind[v] = "mixed" if v in inputs and v != graph.inputs[0] else "plus"
        elif v in inputs and v != rc.trap:
            kind[v] = "mixed"
        else:
            kind[v] = "plus"
            zshift[v] = _zshift(graph, rc, v)
    return Layout(kind, rc.theta, rc.dummy_bits, zshift)


def prepare_round_qubit(config: TrapConfig, k: int, v) -> DensityState:
    """Single-qubit state the client hands over for vertex ``v`` of round ``k``."""
    return blindproto._single_state(v, round_layout(config, k).qubit(v))


# -- adversaries ------------------------------------------------------------------------


@dataclass(frozen=True)
class Honest:
    def server(self, seed=None) -> Server:
        return Server()


def _targets(table, round_index, tag):
    return (round_index, tag) in table or (None, tag) in table


@dataclass(frozen=True)
class OutcomeFlip:
    """Flip the reported bit at (round, vertex); round None means every round."""

    targets: frozenset

    def server(self, seed=None) -> Server:
        targets = self.targets

        class _Flip(Server):
            def report(self, tag, b):
                return 1 - b if _targets(targets, self.round_index, tag) else b

        return _Flip()


@dataclass(frozen=True)
class LabPauli:
    """Apply a Pauli right before a vertex is measured, or, for outputs, right before hand-back."""

    targets: Mapping  # (round or None, vertex) -> "X" | "Y" | "Z"

    def pauli_at(self, round_index, tag):
        return self.targets.get((round_index, tag), self.targets.get((None, tag)))

    def server(self, seed=None) -> Server:
        strategy = self

        class _Lab(Server):
            def before_measure(self, tag, delta):
                p = strategy.pauli_at(self.round_index, tag)
                if p:
                    self.lab.apply(qmat.PAULIS[p], (tag,))

            def before_final(self, tags):
                for tag in tags:
                    p = strategy.pauli_at(self.round_index, tag)
                    if p:
                        self.lab.apply(qmat.PAULIS[p], (tag,))

        return _Lab()


def small_rotation(rng: np.random.Generator, strength: float) -> np.ndarray:
    """cos t I - i sin t (n . sigma) with t uniform in [0, strength * pi] and n uniform on the sphere."""
    t = rng.uniform(0, strength * np.pi)
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    sigma = n[0] * qmat.X + n[1] * qmat.Y + n[2] * qmat.Z
    return np.cos(t) * qmat.I2 - 1j * np.sin(t) * sigma


@dataclass(frozen=True)
class RandomUnitary:
    """Random single-qubit rotation on every qubit before it is measured or returned."""

    seed: int
    strength: float

    def __post_init__(self):
        if not 0 <= self.strength <= 1:
            raise ValueError("strength must lie in [0, 1]")

    def server(self, seed=None) -> Server:
        rng = np.random.default_rng([self.seed, 0 if seed is None else seed])
        strength = self.strength

        class _Noisy(Server):
            def before_measure(self, tag, delta):
                self.lab.apply(small_rotation(rng, strength), (tag,))

            def before_final(self, tags):
                for tag in tags:
                    self.lab.apply(small_rotation(rng, strength), (tag,))

        return _Noisy()


# -- one verification run ---------------------------------------------------------------


@lru_cache(maxsize=64)
def _round_patterns(spec: BrickworkSpec):
    graph, flow = dqc1.brickwork(spec)
    zeros = {v: 0 for v in graph.non_outputs}
    trap_pattern = dqc1.rewrite_with_flow(graph, flow, zeros, with_dependencies=False)
    return graph, flow, trap_pattern


@lru_cache(maxsize=256)
def _computational(spec: BrickworkSpec, angle_items: tuple):
    graph, flow = dqc1.brickwork(spec)
    angles = dict(angle_items)
    pattern = dqc1.rewrite_with_flow(graph, flow, angles)
    u = mbqc.reference_unitary(graph, flow, angles)
    # ideal output: U on (|+> for the top input, purified halves for the rest)
    ins = graph.inputs
    plus = np.ones(2, dtype=complex) / np.sqrt(2)
    rest = len(ins) - 1
    phi = np.eye(1 << rest, dtype=complex).reshape(-1) / np.sqrt(1 << rest) if rest else np.ones(1, complex)
    vec = np.kron(plus, phi)  # axes: inputs..., refs...
    psi = np.kron(u, np.eye(1 << rest)) @ vec
    return pattern, psi


@dataclass(frozen=True)
class TrapRecord:
    round: int
    trap: tuple
    measured_by: str  # "server" or "client"
    passed: bool


@dataclass(frozen=True)
class RunResult:
    acc: int
    output: DensityState  # final layer then reference qubits
    p_perp: float  # Tr(P_perp rho) of the computational output
    traps: tuple
    max_purity_excess: float | None = None


def _angle_key(angles: Mapping) -> tuple:
    return tuple(sorted(angles.items()))


def run_verification(
    config: TrapConfig,
    angles: Mapping,
    adversary=None,
    seed=None,
    audit_purity: bool = False,
    backend: str = "vector",
) -> RunResult:
    """Run every round of the protocol against one adversary.

    Returns the accept bit, the computational round's final layer with its
    reference qubits, ``Tr(P_perp rho)`` for that state, the per-trap
    outcomes, and (with ``audit_purity``) the largest excess of the server's
    register purity over the purity it held right after its input column.

    Every maximally mixed input is simulated as half of an entangled pair, so
    the default ``"vector"`` backend tracks one state vector per round;
    ``"density"`` runs the same rounds on density matrices.
    """
    adversary = adversary or Honest()
    spec = config.spec
    graph, flow, trap_pattern = _round_patterns(spec)
    comp_pattern, psi = _computational(spec, _angle_key(angles))
    rng = np.random.default_rng(seed)
    server = adversary.server(int(rng.integers(2**62)))
    w = spec.width
    worst = [-np.inf] if audit_purity else None
    output = None
    traps = []
    for rc in config.rounds:
        layout = round_layout(config, rc.index)
        if rc.computational:
            pattern, override = comp_pattern, None
        else:
            pattern, override = trap_pattern, rc.dummy_delta
        lab = PureLab(rng) if backend == "vector" else Lab(rng, purify=True)
        if audit_purity:
            server.observer = _purity_observer(worst, w)
        res = blindproto.run_session(
            pattern, layout, rc.r, server, lab, rc.index, delta_override=override, apply_corrections=rc.computational
        )
        if server.held:
            raise blindproto.ProtocolError(res.steps, "server kept qubits past the end of a round")
        if rc.computational:
            refs = tuple(mbqc.reference_tag(v) for v in graph.inputs[1:])
            output = lab.density(tuple(graph.outputs) + refs)
            continue
        t = rc.trap
        if t in res.outcomes:
            traps.append(TrapRecord(rc.index, t, "server", res.outcomes[t] == rc.r[t]))
        else:
            b = lab.measure(t, qmat.normalize_angle(rc.theta[t] + 4 * rc.r[t]))
            traps.append(TrapRecord(rc.index, t, "client", b == rc.r[t]))
    fidelity = float(np.real(np.vdot(psi, output.matrix @ psi)))
    p_perp = min(1.0, max(0.0, 1.0 - fidelity))
    acc = int(all(t.passed for t in traps))
    excess = float(worst[0]) if audit_purity else None
    return RunResult(acc, output, p_perp, tuple(traps), excess)


def _purity_observer(worst: list, width: int):
    seen = {"n": 0, "base": None}

    def observe(what, server):
        reg = server.lab.reduced(tuple(server.held)) if server.held else None
        p = qmat.purity_parameter(reg) if reg is not None else 0.0
        seen["n"] += 1
        if seen["n"] == width:
            seen["base"] = p
        if seen["base"] is not None:
            worst[0] = max(worst[0], p - seen["base"])

    return observe


# -- Monte Carlo ------------------------------------------------------------------------


@dataclass(frozen=True)
class VerificationReport:
    m: int
    n: int
    s: int
    trials: int
    acc_rate: float
    p_incorrect: float
    stderr: float
    ci95: tuple
    epsilon_bound: float
    analytic_bound: float | None
    seed: object
    trap_pass: Mapping  # label -> (passes, total)
    max_purity_excess: float | None = None

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "s": self.s,
            "trials": self.trials,
            "acc_rate": self.acc_rate,
            "p_incorrect": self.p_incorrect,
            "ci95": list(self.ci95),
            "epsilon_bound": self.epsilon_bound,
            "analytic_bound": self.analytic_bound,
            "seed": self.seed,
        }


def wilson_interval(mean: float, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a mean of [0, 1]-valued trials."""
    z = statistics.NormalDist().inv_cdf(0.5 + confidence / 2)
    denom = 1 + z * z / n
    centre = (mean + z * z / (2 * n)) / denom
    half = z * np.sqrt(mean * (1 - mean) / n + z * z / (4 * n * n)) / denom
    return float(max(0.0, centre - half)), float(min(1.0, centre + half))


def trial_seeds(seed, trials: int) -> list[int]:
    """Independent per-trial seeds derived from a master seed."""
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(trials)]


def _trap_label(rec: TrapRecord, attacked: frozenset) -> tuple[str, ...]:
    labels = ["all"]
    labels.append("at_attack" if rec.trap in attacked else "elsewhere")
    return tuple(labels)


def _trial_chunk(job, seeds):
    angles, spec, s, adversary, audit_purity, rule = job
    attacked = attacked_vertices(adversary)
    scores = np.empty(len(seeds))
    accs = 0
    tally: dict = {}
    worst = -np.inf
    for i, ts in enumerate(seeds):
        rng = np.random.default_rng(ts)
        config = setup_rounds(spec, s, rng=rng, rule=rule)
        res = run_verification(config, angles, adversary, seed=int(rng.integers(2**62)), audit_purity=audit_purity)
        accs += res.acc
        scores[i] = res.acc * res.p_perp
        for rec in res.traps:
            for label in _trap_label(rec, attacked):
                ok, tot = tally.get(label, (0, 0))
                tally[label] = (ok + int(rec.passed), tot + 1)
        if audit_purity:
            worst = max(worst, res.max_purity_excess)
    return scores, accs, tally, worst


def estimate_p_incorrect(
    angles: Mapping,
    spec: BrickworkSpec | tuple,
    s: int,
    adversary=None,
    trials: int = 1000,
    seed=0,
    audit_purity: bool = False,
    rule: str = "vertex",
    jobs: int = 1,
) -> VerificationReport:
    """Monte Carlo estimate of the probability of accepting a wrong output.

    Each trial draws fresh client secrets and runs the protocol; its score is
    ``acc * Tr(P_perp rho)``.  Trap outcomes are tallied as pass rates over
    all trap rounds and, split by whether the trap sat on an attacked vertex,
    under ``"at_attack"`` / ``"elsewhere"``.  ``jobs > 1`` splits the trials
    over worker processes; every trial keeps its own seed, so the report does
    not depend on ``jobs``.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    if not isinstance(spec, BrickworkSpec):
        spec = BrickworkSpec(*spec)
    adversary = adversary or Honest()
    seeds = trial_seeds(seed, trials)
    job = (angles, spec, s, adversary, audit_purity, rule)
    if jobs > 1 and trials > 1:
        from concurrent.futures import ProcessPoolExecutor

        size = -(-trials // jobs)
        chunks = [seeds[k : k + size] for k in range(0, trials, size)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_trial_chunk, [job] * len(chunks), chunks))
    else:
        parts = [_trial_chunk(job, seeds)]
    scores = np.concatenate([p[0] for p in parts])
    accs = sum(p[1] for p in parts)
    tally: dict = {}
    for part in parts:
        for label, (ok, tot) in part[2].items():
            a, b = tally.get(label, (0, 0))
            tally[label] = (a + ok, b + tot)
    worst = max(p[3] for p in parts)
    mean = float(scores.mean())
    stderr = float(scores.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    m, n = spec.size, spec.width
    try:
        bound = analytic_bound(frame_strategy(adversary, spec, s), s, m, n)
    except FrameMismatchError:
        bound = None
    return VerificationReport(
        m=m,
        n=n,
        s=s,
        trials=trials,
        acc_rate=accs / trials,
        p_incorrect=mean,
        stderr=stderr,
        ci95=wilson_interval(mean, trials),
        epsilon_bound=min(1.0, 2 * m / s),
        analytic_bound=bound,
        seed=seed,
        trap_pass=tally,
        max_purity_excess=float(worst) if audit_purity else None,
    )


# -- rotated-frame calculators -------------------------------------------------------------


def position(v: tuple, width: int) -> int:
    """Single index of vertex (row, column): column-major, 1-based."""
    i, j = v
    return (j - 1) * width + i


def attacked_vertices(adversary) -> frozenset:
    if isinstance(adversary, OutcomeFlip):
        return frozenset(v for _, v in adversary.targets)
    if isinstance(adversary, LabPauli):
        return frozenset(v for _, v in adversary.targets)
    return frozenset()


def frame_strategy(adversary, spec: BrickworkSpec | tuple, s: int) -> list[dict]:
    """Per-round frame Paulis (position -> "X"/"Y"/"Z") for an in-frame attack.

    Outcome flips on measured vertices are frame X; lab Paulis on output
    vertices are already in frame.  Anything else raises FrameMismatchError.
    """
    if not isinstance(spec, BrickworkSpec):
        spec = BrickworkSpec(*spec)
    graph, _ = dqc1.brickwork(spec)
    outputs = set(graph.outputs)
    rounds = [dict() for _ in range(s)]

    def put(rnd, v, p):
        ks = range(1, s + 1) if rnd is None else [rnd]
        for k in ks:
            if not 1 <= k <= s:
                raise ValueError(f"round {k} outside 1..{s}")
            rounds[k - 1][position(v, spec.width)] = p

    if isinstance(adversary, Honest):
        return rounds
    if isinstance(adversary, OutcomeFlip):
        for rnd, v in adversary.targets:
            if v in outputs:
                raise FrameMismatchError(f"{v!r} is an output; it reports no bit to flip")
            put(rnd, v, "X")
        return rounds
    if isinstance(adversary, LabPauli):
        for (rnd, v), p in adversary.targets.items():
            if v not in outputs:
                raise FrameMismatchError(f"lab Pauli on measured vertex {v!r} is a frame mixture")
            put(rnd, v, p)
        return rounds
    raise FrameMismatchError(f"{type(adversary).__name__} has no fixed rotated-frame Pauli form")


def frame_sets(attack: Mapping, m: int, n: int) -> dict:
    """Positions split by Pauli, with output-restricted variants (outputs are the last n)."""
    out = set(range(m - n + 1, m + 1))
    sets = {"A": set(range(1, m + 1)) - set(attack), "B": set(), "C": set(), "D": set()}
    for pos, p in attack.items():
        if not 1 <= pos <= m:
            raise ValueError(f"position {pos} outside 1..{m}")
        sets[{"I": "A", "X": "B", "Y": "C", "Z": "D"}[p]].add(pos)
        if p == "I":
            sets["A"].add(pos)
    for key in "ABCD":
        sets[key + "O"] = sets[key] & out
    return sets


def analytic_trap_pass_prob(attack: Mapping, m: int, n: int) -> float:
    """Trap-round pass probability under a frame-Pauli attack.

    (2|A| + |B^O| + |C^O| + 2|D minus D^O|) / (2m): identities always pass,
    X or Y on an output trap pass half the time, Z on a measured trap is
    invisible, everything else is caught.
    """
    fs = frame_sets(attack, m, n)
    num = 2 * len(fs["A"]) + len(fs["BO"]) + len(fs["CO"]) + 2 * len(fs["D"] - fs["DO"])
    return num / (2 * m)


def nontrivial(attack: Mapping, m: int, n: int) -> bool:
    fs = frame_sets(attack, m, n)
    return len(fs["B"]) + len(fs["C"]) + len(fs["DO"]) >= 1


def analytic_bound(strategy: Sequence[Mapping], s: int, m: int, n: int) -> float:
    """(1/s) sum over rounds t_g where the attack matters of prod_{k != t_g} pass(k)."""
    if len(strategy) != s:
        raise ValueError(f"strategy has {len(strategy)} rounds, expected {s}")
    factors = [analytic_trap_pass_prob(a, m, n) for a in strategy]
    total = 0.0
    for tg in range(s):
        if not nontrivial(strategy[tg], m, n):
            continue
        prod = 1.0
        for k in range(s):
            if k != tg:
                prod *= factors[k]
        total += prod
    return total / s
