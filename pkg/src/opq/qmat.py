"""Dense density-matrix primitives over tagged qubit registers.

Qubits are addressed by hashable tags instead of positions.  The first tag of a
register is the most significant bit of the computational-basis index, so
``tensor(a, b)`` is the ordinary Kronecker product ``a ⊗ b``.

Angles in the XY plane are counted in eighths of a turn of pi, i.e. an angle
value ``k`` means ``k * pi / 4`` radians.  Protocol code keeps them as integers
modulo 8; floats are accepted everywhere for oracle tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, NamedTuple, Sequence

import numpy as np

ATOL = 1e-9
ROUNDTRIP_ATOL = 1e-12
ZERO_PROB = 1e-12

Tag = Hashable

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
CZ = np.diag([1, 1, 1, -1]).astype(complex)
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
PAULIS = {"I": I2, "X": X, "Y": Y, "Z": Z}


class TagError(KeyError):
    """A qubit tag is missing from, or duplicated in, a register."""


def normalize_angle(eighths):
    """Reduce an angle to [0, 8); integers stay integers."""
    if isinstance(eighths, (int, np.integer)):
        return int(eighths) % 8
    return float(eighths) % 8.0


def to_radians(eighths) -> float:
    return float(eighths) * np.pi / 4


def phase(eighths) -> np.ndarray:
    """Phase gate diag(1, e^{i angle}); equals R_z(angle) up to global phase."""
    return np.diag([1.0, np.exp(1j * to_radians(eighths))]).astype(complex)


def plus_vector(eighths) -> np.ndarray:
    """Amplitudes of |+_angle> = (|0> + e^{i angle}|1>)/sqrt(2)."""
    return np.array([1.0, np.exp(1j * to_radians(eighths))], dtype=complex) / np.sqrt(2)


@dataclass(frozen=True, eq=False)
class DensityState:
    """Density matrix over an ordered tuple of qubit tags."""

    tags: tuple
    matrix: np.ndarray

    def __post_init__(self):
        tags = tuple(self.tags)
        object.__setattr__(self, "tags", tags)
        if len(set(tags)) != len(tags):
            dup = next(t for t in tags if tags.count(t) > 1)
            raise TagError(f"duplicate qubit tag {dup!r}")
        m = np.asarray(self.matrix, dtype=complex)
        dim = 1 << len(tags)
        if m.shape != (dim, dim):
            raise ValueError(f"matrix shape {m.shape} does not match {len(tags)} qubits")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return len(self.tags)

    def index(self, tag: Tag) -> int:
        try:
            return self.tags.index(tag)
        except ValueError:
            raise TagError(f"unknown qubit tag {tag!r}") from None

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def purity(self) -> float:
        """Tr(rho^2)."""
        return float(np.vdot(self.matrix, self.matrix).real)

    def is_valid(self, atol: float = ATOL) -> bool:
        """Hermitian, unit trace and positive semidefinite within ``atol``."""
        m = self.matrix
        if not np.allclose(m, m.conj().T, atol=atol, rtol=0):
            return False
        if abs(np.trace(m) - 1) > atol:
            return False
        return bool(np.linalg.eigvalsh((m + m.conj().T) / 2).min() >= -atol)

    def reorder(self, tags: Sequence[Tag]) -> DensityState:
        """Same state with qubits listed in ``tags`` order."""
        tags = tuple(tags)
        if tags == self.tags:
            return self
        if len(tags) != self.n or set(tags) != set(self.tags):
            raise TagError(f"{tags!r} is not a permutation of {self.tags!r}")
        perm = [self.index(t) for t in tags]
        n = self.n
        t = self.matrix.reshape((2,) * (2 * n))
        t = t.transpose(perm + [n + p for p in perm])
        return DensityState(tags, t.reshape(1 << n, 1 << n))

    def reduced(self, keep: Sequence[Tag]) -> DensityState:
        """Partial trace onto ``keep`` (in that order)."""
        keep = tuple(keep)
        drop = [t for t in self.tags if t not in keep]
        for t in keep:
            self.index(t)
        if not drop:
            return self.reorder(keep)
        return partial_trace(self, drop).reorder(keep)

    def allclose(self, other: DensityState, atol: float = ATOL) -> bool:
        other = other.reorder(self.tags)
        return bool(np.allclose(self.matrix, other.matrix, atol=atol, rtol=0))


class Branch(NamedTuple):
    """One outcome of a projective measurement.

    ``state`` is ``None`` when the branch is impossible (probability below
    ``ZERO_PROB``); such branches are never renormalized.
    """

    outcome: int
    probability: float
    state: DensityState | None

    @property
    def possible(self) -> bool:
        return self.state is not None


def pure(tags: Sequence[Tag], vector) -> DensityState:
    v = np.asarray(vector, dtype=complex).reshape(-1)
    v = v / np.linalg.norm(v)
    return DensityState(tuple(tags), np.outer(v, v.conj()))


def plus_state(tag: Tag, eighths=0) -> DensityState:
    return pure((tag,), plus_vector(eighths))


def basis_state(tag: Tag, bit: int) -> DensityState:
    m = np.zeros((2, 2), dtype=complex)
    m[bit, bit] = 1
    return DensityState((tag,), m)


def maximally_mixed(tags: Sequence[Tag]) -> DensityState:
    tags = tuple(tags)
    dim = 1 << len(tags)
    return DensityState(tags, np.eye(dim, dtype=complex) / dim)


def bell_pairs(pairs: Sequence[tuple[Tag, Tag]]) -> DensityState:
    """Maximally entangled pairs; tags ordered as all first members then all second members."""
    k = len(pairs)
    dim = 1 << k
    v = np.zeros(dim * dim, dtype=complex)
    for x in range(dim):
        v[x * dim + x] = 1
    tags = tuple(a for a, _ in pairs) + tuple(b for _, b in pairs)
    return pure(tags, v)


def empty_state() -> DensityState:
    return DensityState((), np.ones((1, 1), dtype=complex))


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product of two vectors or two square matrices.

    Same result as ``np.kron`` with far less call overhead on small operands.
    """
    if a.ndim == 1:
        return (a[:, None] * b[None, :]).reshape(-1)
    (p, q), (r, t) = a.shape, b.shape
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(p * r, q * t)


def tensor(a: DensityState, b: DensityState) -> DensityState:
    common = set(a.tags) & set(b.tags)
    if common:
        raise TagError(f"duplicate qubit tag {sorted(map(repr, common))[0]}")
    return DensityState(a.tags + b.tags, kron(a.matrix, b.matrix))


def is_unitary(u: np.ndarray, atol: float = ATOL) -> bool:
    u = np.asarray(u)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and np.allclose(
        u @ u.conj().T, np.eye(u.shape[0]), atol=atol, rtol=0
    )


def _embed_diagonal(diag: np.ndarray, positions: list[int], n: int) -> np.ndarray:
    """Full-register diagonal of a k-qubit diagonal gate acting on ``positions``."""
    k = len(positions)
    d = diag.reshape((2,) * k)
    # broadcast the gate's k axes onto the n-qubit index space
    order = np.argsort(positions)
    d = d.transpose(order).reshape([2 if i in positions else 1 for i in range(n)])
    return np.broadcast_to(d, (2,) * n).reshape(-1)


def apply_gate(state: DensityState, gate, targets: Sequence[Tag], check: bool = True) -> DensityState:
    """Conjugate ``state`` by ``gate`` acting on ``targets`` (first target = most significant)."""
    targets = list(targets)
    if len(set(targets)) != len(targets):
        raise TagError(f"repeated target in {targets!r}")
    g = np.asarray(gate, dtype=complex)
    k = len(targets)
    if g.shape != (1 << k, 1 << k):
        raise ValueError(f"gate shape {g.shape} does not act on {k} qubits")
    if check and not is_unitary(g):
        raise ValueError("gate is not unitary")
    pos = [state.index(t) for t in targets]
    n = state.n
    dim = 1 << n
    if np.count_nonzero(g - np.diag(np.diag(g))) == 0:
        d = _embed_diagonal(np.diag(g), pos, n)
        return DensityState(state.tags, state.matrix * np.outer(d, d.conj()))
    t = state.matrix.reshape((2,) * (2 * n))
    gt = g.reshape((2,) * (2 * k))
    # ket side
    t = np.tensordot(gt, t, axes=(list(range(k, 2 * k)), pos))
    t = np.moveaxis(t, list(range(k)), pos)
    # bra side
    bra = [n + p for p in pos]
    t = np.tensordot(gt.conj(), t, axes=(list(range(k, 2 * k)), bra))
    t = np.moveaxis(t, list(range(k)), bra)
    return DensityState(state.tags, t.reshape(dim, dim))


def partial_trace(state: DensityState, tag) -> DensityState:
    """Trace out one tag, or every tag in a list/tuple/set of tags."""
    drop = [tag] if not isinstance(tag, (list, set, frozenset)) else list(tag)
    pos = sorted(state.index(t) for t in drop)
    n = state.n
    t = state.matrix.reshape((2,) * (2 * n))
    for removed, p in enumerate(pos):
        m = n - removed
        q = p - removed
        t = np.trace(t, axis1=q, axis2=m + q)
    keep = tuple(x for i, x in enumerate(state.tags) if i not in pos)
    dim = 1 << len(keep)
    return DensityState(keep, t.reshape(dim, dim))


def project_out(state: DensityState, tag: Tag, bra: np.ndarray) -> np.ndarray:
    """Unnormalized <bra| rho |bra> on ``tag``; returns the remaining matrix."""
    p = state.index(tag)
    n = state.n
    t = np.moveaxis(state.matrix.reshape((2,) * (2 * n)), (p, n + p), (0, 1))
    t = t.reshape(2, 2, -1)
    out = np.einsum("a,abx,b->x", bra, t, bra.conj())
    dim = 1 << (n - 1)
    # the moved-out axes leave (ket rest..., bra rest...) in order
    return out.reshape(dim, dim)


def measure_xy(state: DensityState, tag: Tag, delta) -> list[Branch]:
    """Measure ``tag`` in the {|+_delta>, |-_delta>} basis and trace it out.

    Outcome 0 corresponds to |+_delta>.  Both branches are returned; their
    probabilities sum to one.
    """
    keep = tuple(t for t in state.tags if t != tag)
    plus = plus_vector(delta)
    minus = plus_vector(delta) * np.array([1, -1])
    branches = []
    for bit, vec in ((0, plus), (1, minus)):
        m = project_out(state, tag, vec.conj())
        prob = float(np.trace(m).real)
        if prob < ZERO_PROB:
            branches.append(Branch(bit, max(prob, 0.0), None))
        else:
            branches.append(Branch(bit, prob, DensityState(keep, m / prob)))
    return branches


def purity_parameter(state: DensityState) -> float:
    """log2 Tr(rho^2) + number of qubits, in bits."""
    return float(np.log2(state.purity()) + state.n)


def trace_distance(a, b) -> float:
    """Half the trace norm of the difference of two density matrices."""
    if isinstance(a, DensityState):
        b = b.reorder(a.tags)
        a, b = a.matrix, b.matrix
    diff = np.asarray(a) - np.asarray(b)
    diff = (diff + diff.conj().T) / 2
    return float(0.5 * np.abs(np.linalg.eigvalsh(diff)).sum())


def random_state(tags: Sequence[Tag], rng: np.random.Generator, rank: int | None = None) -> DensityState:
    """Random density matrix (Ginibre ensemble of the given rank)."""
    tags = tuple(tags)
    dim = 1 << len(tags)
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    m = g @ g.conj().T
    return DensityState(tags, m / np.trace(m))


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a Ginibre matrix."""
    g = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def equal_up_to_phase(u: np.ndarray, v: np.ndarray, atol: float = ATOL) -> bool:
    """True if u = e^{i phi} v for some phase, entrywise within ``atol``."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        return False
    k = np.unravel_index(np.argmax(np.abs(v)), v.shape)
    if abs(v[k]) < atol:
        return bool(np.allclose(u, 0, atol=atol))
    ph = u[k] / v[k]
    if abs(abs(ph) - 1) > 1e-6:
        return False
    return bool(np.allclose(u, ph * v, atol=atol, rtol=0))
