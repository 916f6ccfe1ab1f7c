"""One- and two-qubit Clifford groups, leakage extension and gateset compilation.

Group elements are stored projectively: each unitary is phase-normalised so
its first nonzero entry (row-major) is real and positive, and hashed by its
entries rounded to 1e-8. Multiplying two stored elements therefore returns
the stored representative of the product, up to a global phase.
"""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .hilbert import SpaceLayout, build_layout

log = logging.getLogger(__name__)

_KEY_SCALE = 1e8
_NONZERO = 1e-9

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
S = np.diag([1, 1j]).astype(complex)
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)

PAULIS_1Q = (I2, X, Y, Z)


def rotation(axis: str, angle: float) -> np.ndarray:
    p = {"x": X, "y": Y, "z": Z}[axis.lower()]
    return np.cos(angle / 2) * I2 - 1j * np.sin(angle / 2) * p


def rzz(angle: float) -> np.ndarray:
    return np.diag(np.exp(-1j * angle / 2 * np.array([1, -1, -1, 1]))).astype(complex)


def canonicalize(u: np.ndarray) -> np.ndarray:
    """Remove the global phase of ``u`` (or of each matrix in a batch)."""
    u = np.asarray(u, dtype=complex)
    flat = u.reshape(*u.shape[:-2], -1)
    first = np.argmax(np.abs(flat) > _NONZERO, axis=-1)
    lead = np.take_along_axis(flat, first[..., None], axis=-1)
    phase = lead / np.abs(lead)
    return u * np.conj(phase)[..., None]


def _keys(canon: np.ndarray) -> list[bytes]:
    flat = canon.reshape(-1, canon.shape[-2] * canon.shape[-1])
    ints = np.round(np.concatenate([flat.real, flat.imag], axis=1) * _KEY_SCALE).astype(np.int64)
    return [row.tobytes() for row in ints]


def clifford_key(u: np.ndarray) -> bytes:
    return _keys(canonicalize(u)[None])[0]


@dataclass(frozen=True, eq=False)
class CliffordElement:
    id: int
    u_comp: np.ndarray
    u_full: np.ndarray
    word: tuple | None = None

    @property
    def n_qubits(self) -> int:
        return int(np.log2(self.u_comp.shape[0]))


class CliffordGroup:
    """A finite projective Clifford group with lookup tables.

    Built once and treated as read-only afterwards.
    """

    def __init__(self, n_qubits: int, unitaries: np.ndarray):
        self.n_qubits = n_qubits
        self.layout = build_layout(n_qubits)
        self.u_comp = canonicalize(unitaries)
        self.u_comp.flags.writeable = False
        self._index = {k: i for i, k in enumerate(_keys(self.u_comp))}
        if len(self._index) != len(self.u_comp):
            raise ValueError("duplicate group elements after canonicalisation")
        full = np.zeros((len(self), self.layout.d, self.layout.d), dtype=complex)
        ci, li = self.layout.comp_indices, self.layout.leak_indices
        full[:, ci[:, None], ci[None, :]] = self.u_comp
        full[:, li, li] = 1.0
        full.flags.writeable = False
        self.u_full = full
        self._inverse = None

    def __len__(self) -> int:
        return len(self.u_comp)

    def __getitem__(self, i: int) -> CliffordElement:
        return CliffordElement(int(i), self.u_comp[i], self.u_full[i])

    def elements(self) -> list[CliffordElement]:
        return [self[i] for i in range(len(self))]

    def index_of(self, u: np.ndarray) -> int:
        try:
            return self._index[clifford_key(u)]
        except KeyError:
            raise LookupError("unitary is not an element of this Clifford group") from None

    def indices_of(self, us: np.ndarray) -> np.ndarray:
        return np.array([self._index[k] for k in _keys(canonicalize(us))])

    def contains(self, u: np.ndarray) -> bool:
        return clifford_key(u) in self._index

    @property
    def identity_index(self) -> int:
        return self.index_of(np.eye(2**self.n_qubits))

    @property
    def inverse_table(self) -> np.ndarray:
        if self._inverse is None:
            inv = self.indices_of(np.conj(np.swapaxes(self.u_comp, -1, -2)))
            inv.flags.writeable = False
            self._inverse = inv
        return self._inverse

    def multiply(self, a: int, b: int) -> int:
        """Index of ``a @ b`` (apply ``b`` first)."""
        return self.index_of(self.u_comp[a] @ self.u_comp[b])

    def sample(self, rng: np.random.Generator, size=None):
        return rng.integers(0, len(self), size=size)


def closure(generators, max_size: int = 100_000) -> np.ndarray:
    """Breadth-first closure of a set of unitaries under multiplication."""
    gens = canonicalize(np.asarray(generators, dtype=complex))
    d = gens.shape[-1]
    ident = np.eye(d, dtype=complex)[None]
    seen = {k for k in _keys(ident)}
    found = [ident[0]]
    frontier = ident
    while len(frontier):
        prods = canonicalize(np.einsum("gij,fjk->gfik", gens, frontier).reshape(-1, d, d))
        new = []
        for k, m in zip(_keys(prods), prods):
            if k not in seen:
                seen.add(k)
                new.append(m)
        if len(seen) > max_size:
            raise RuntimeError("closure exceeded max_size; generators do not form a finite group")
        found.extend(new)
        frontier = np.array(new) if new else np.empty((0, d, d), dtype=complex)
    return np.array(found)


@lru_cache(maxsize=None)
def clifford_group(n_qubits: int) -> CliffordGroup:
    if n_qubits == 1:
        gens = [H, S]
    elif n_qubits == 2:
        gens = [np.kron(H, I2), np.kron(I2, H), np.kron(S, I2), np.kron(I2, S), CNOT]
    else:
        raise ValueError("Clifford enumeration is limited to 1 or 2 qubits")
    return CliffordGroup(n_qubits, closure(gens))


def enumerate_1q_cliffords() -> list[CliffordElement]:
    return clifford_group(1).elements()


def enumerate_2q_cliffords() -> list[CliffordElement]:
    return clifford_group(2).elements()


def pauli_matrices(n_qubits: int) -> list[np.ndarray]:
    """Unnormalised Paulis in the order I..., with identity first."""
    out = [np.eye(1, dtype=complex)]
    for _ in range(n_qubits):
        out = [np.kron(a, p) for a in out for p in PAULIS_1Q]
    return out


def is_clifford(u: np.ndarray, atol: float = 1e-10) -> bool:
    """Check that conjugation maps each generator Pauli to +-1 times a Pauli."""
    n = int(np.log2(u.shape[0]))
    paulis = pauli_matrices(n)
    d = u.shape[0]
    for q in range(n):
        for p in (X, Z):
            ops = [I2] * n
            ops[q] = p
            g = ops[0]
            for o in ops[1:]:
                g = np.kron(g, o)
            c = u @ g @ u.conj().T
            if not any(abs(abs(np.trace(c @ pp.conj().T)) / d - 1) < atol for pp in paulis):
                return False
    return True


def pauli_image(u: np.ndarray, pauli: np.ndarray) -> tuple[int, complex]:
    """Index and sign of ``u pauli u^dag`` in the Pauli list of matching size."""
    n = int(np.log2(u.shape[0]))
    c = u @ pauli @ u.conj().T
    for i, p in enumerate(pauli_matrices(n)):
        ov = np.trace(p.conj().T @ c) / u.shape[0]
        if abs(abs(ov) - 1) < 1e-9:
            return i, ov
    raise ValueError("conjugation did not return a Pauli")


def pauli_coset_representatives(group: CliffordGroup) -> np.ndarray:
    """One group index per coset ``{P C : P Pauli}``.

    Two elements share a coset exactly when they act identically on Paulis
    up to sign, so the coset key is the list of Pauli images of the
    single-qubit X and Z generators.
    """
    n = group.n_qubits
    paulis = pauli_matrices(n)
    gens = []
    for q in range(n):
        for p in (X, Z):
            ops = [I2] * n
            ops[q] = p
            g = ops[0]
            for o in ops[1:]:
                g = np.kron(g, o)
            gens.append(g)
    pstack = np.array(paulis)
    reps, seen = [], set()
    d = 2**n
    for i, u in enumerate(group.u_comp):
        key = []
        for g in gens:
            c = u @ g @ u.conj().T
            ov = np.abs(np.einsum("pji,ji->p", pstack.conj(), c)) / d
            key.append(int(np.argmax(ov)))
        key = tuple(key)
        if key not in seen:
            seen.add(key)
            reps.append(i)
    return np.array(reps)


# -- leakage extension -------------------------------------------------------

LEAK_POLICIES = ("identity-on-leak", "gateset-induced")


def extend_to_full_space(
    el: CliffordElement,
    policy: str = "identity-on-leak",
    gateset: "GateSet | None" = None,
) -> CliffordElement:
    """Attach a leakage-block unitary to ``el``.

    ``identity-on-leak`` uses ``u_comp (+) I_L``. ``gateset-induced`` replays
    the compiled word: single-qubit gates act on an unleaked partner of a
    leaked qubit, single-qubit gates on a leaked qubit and every two-qubit
    gate act trivially whenever any qubit is leaked.
    """
    if policy not in LEAK_POLICIES:
        raise ValueError(f"unknown leak policy {policy!r}")
    layout = build_layout(el.n_qubits)
    if policy == "identity-on-leak":
        return CliffordElement(el.id, el.u_comp, layout.embed(el.u_comp), el.word)
    if el.word is None or gateset is None:
        raise ValueError("gateset-induced extension needs a compiled word and its gateset")
    w = gateset.word_unitary(el.word)
    return CliffordElement(el.id, el.u_comp, layout.embed(w, leaked_block(el.word, gateset, layout)), el.word)


def leaked_block(word, gateset: "GateSet", layout: SpaceLayout) -> np.ndarray:
    """Unitary the word induces on the leakage subspace."""
    li = list(layout.leak_indices)
    block = np.eye(layout.d_L, dtype=complex)
    if layout.n_qubits == 1:
        return block
    for leaked in (0, 1):
        partner = 1 - leaked
        v = partner_action(word, gateset, partner)
        states = []
        for b in "01":
            lab = ["l", "l"]
            lab[partner] = b
            states.append(li.index(layout.index_of("".join(lab))))
        block[np.ix_(states, states)] = v
    return block


def partner_action(word, gateset: "GateSet", qubit: int) -> np.ndarray:
    """Product of the word's single-qubit gates acting on ``qubit``."""
    v = I2.copy()
    for label in word:
        g = gateset[label]
        if g.qubits == (qubit,):
            v = g.matrix @ v
    return v


def invert_sequence(seq, group: CliffordGroup | None = None) -> CliffordElement:
    """Group element undoing ``seq`` (applied first to last)."""
    if not seq:
        raise ValueError("cannot invert an empty sequence")
    if group is None:
        group = clifford_group(seq[0].n_qubits)
    prod = np.eye(seq[0].u_comp.shape[0], dtype=complex)
    for el in seq:
        prod = el.u_comp @ prod
    try:
        idx = group.index_of(prod.conj().T)
    except LookupError as exc:
        raise LookupError("sequence product not found in group table") from exc
    return group[idx]


@dataclass(frozen=True, eq=False)
class PermutationGate:
    k: int
    u: np.ndarray


_X_LEAK = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]], dtype=complex)


def permutation_gate(k: int, layout: SpaceLayout) -> PermutationGate:
    """``Q_k`` in ``{I, X}^n`` with X acting trivially on the leak level.

    ``k`` indexes the computational basis in bitstring order (qubit 0 is the
    most significant bit). ``Q_k`` swaps ``|0...0>`` and ``|k>``.
    """
    if not 0 <= k < layout.d_C:
        raise ValueError(f"k={k} out of range for d_C={layout.d_C}")
    bits = format(k, f"0{layout.n_qubits}b")
    u = np.eye(1, dtype=complex)
    for b in bits:
        u = np.kron(u, _X_LEAK if b == "1" else np.eye(3))
    return PermutationGate(k, u)


# -- gatesets ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NativeGate:
    label: str
    qubits: tuple
    matrix: np.ndarray


@dataclass(eq=False)
class GateSet:
    name: str
    gates: list
    _by_label: dict = field(init=False, repr=False)

    def __post_init__(self):
        self._by_label = {}
        for g in self.gates:
            m = np.asarray(g.matrix, dtype=complex)
            if not np.allclose(m.conj().T @ m, np.eye(m.shape[0]), atol=1e-10):
                raise ValueError(f"gate {g.label!r} is not unitary")
            if g.label in self._by_label:
                raise ValueError(f"duplicate gate label {g.label!r}")
            self._by_label[g.label] = g

    def __getitem__(self, label: str) -> NativeGate:
        return self._by_label[label]

    @property
    def generators(self) -> list[tuple[str, np.ndarray]]:
        return [(g.label, self.two_qubit_unitary(g)) for g in self.gates]

    @staticmethod
    def two_qubit_unitary(g: NativeGate) -> np.ndarray:
        if len(g.qubits) == 2:
            if tuple(g.qubits) == (0, 1):
                return g.matrix
            swap = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)
            return swap @ g.matrix @ swap
        return np.kron(g.matrix, I2) if g.qubits == (0,) else np.kron(I2, g.matrix)

    def word_unitary(self, word) -> np.ndarray:
        u = np.eye(4, dtype=complex)
        for label in word:
            u = self.two_qubit_unitary(self[label]) @ u
        return u

    def is_two_qubit(self, label: str) -> bool:
        return len(self[label].qubits) == 2

    @classmethod
    def from_json(cls, source) -> "GateSet":
        """Load ``{name, gates: [{label, qubits, matrix}]}``.

        ``matrix`` is row-major, each entry a ``[re, im]`` pair.
        """
        if isinstance(source, (str, Path)) and Path(source).exists():
            data = json.loads(Path(source).read_text())
        elif isinstance(source, (str, bytes)):
            data = json.loads(source)
        else:
            data = source
        gates = []
        for g in data["gates"]:
            m = np.array([[complex(re, im) for re, im in row] for row in g["matrix"]])
            gates.append(NativeGate(g["label"], tuple(g["qubits"]), m))
        return cls(data["name"], gates)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "gates": [
                {
                    "label": g.label,
                    "qubits": list(g.qubits),
                    "matrix": [[[float(z.real), float(z.imag)] for z in row] for row in g.matrix],
                }
                for g in self.gates
            ],
        }


def _single_qubit_family(specs) -> list[NativeGate]:
    gates = []
    for q in (0, 1):
        for label, m in specs:
            gates.append(NativeGate(f"{label}[{q}]", (q,), m))
    return gates


def trapped_ion_gateset() -> GateSet:
    specs = []
    for axis in "XYZ":
        specs.append((f"R{axis}(pi/2)", rotation(axis, np.pi / 2)))
        specs.append((f"R{axis}(-pi/2)", rotation(axis, -np.pi / 2)))
        specs.append((f"R{axis}(pi)", rotation(axis, np.pi)))
    return GateSet("trapped-ion", [NativeGate("RZZ(pi/2)", (0, 1), rzz(np.pi / 2))] + _single_qubit_family(specs))


def minimal_cnot_gateset() -> GateSet:
    specs = [("RX(pi/2)", rotation("x", np.pi / 2)), ("RY(pi/2)", rotation("y", np.pi / 2))]
    return GateSet("minimal-cnot", [NativeGate("CNOT", (0, 1), CNOT)] + _single_qubit_family(specs))


def standard_chp_gateset() -> GateSet:
    return GateSet("standard-chp", [NativeGate("CNOT", (0, 1), CNOT)] + _single_qubit_family([("H", H), ("P", S)]))


BUILTIN_GATESETS = {
    "trapped-ion": trapped_ion_gateset,
    "minimal-cnot": minimal_cnot_gateset,
    "standard-chp": standard_chp_gateset,
}


def get_gateset(name_or_path) -> GateSet:
    if name_or_path in BUILTIN_GATESETS:
        return BUILTIN_GATESETS[name_or_path]()
    return GateSet.from_json(name_or_path)


# -- compilation -------------------------------------------------------------

MAX_DEPTH = 12


class CompilationTable:
    """Shortest native words for every 2Q Clifford under one gateset.

    Words are ranked by (number of two-qubit gates, total length); ties go
    to the generator listed first, which makes the table deterministic.
    """

    def __init__(self, gateset: GateSet, max_depth: int = MAX_DEPTH):
        self.gateset = gateset
        self.max_depth = max_depth
        group = clifford_group(2)
        labels = [g.label for g in gateset.gates]
        mats = np.array([gateset.two_qubit_unitary(g) for g in gateset.gates])
        cost2 = [1 if len(g.qubits) == 2 else 0 for g in gateset.gates]
        n = len(group)
        best = {}
        pred = {}
        start = group.identity_index
        heap = [(0, 0, 0, start)]
        best[start] = (0, 0)
        # Track true (phase-carrying) products so words compile exactly.
        counter = 1
        done = np.zeros(n, dtype=bool)
        while heap:
            c2, ln, _, node = heapq.heappop(heap)
            if done[node]:
                continue
            done[node] = True
            prods = mats @ group.u_comp[node]
            idxs = group.indices_of(prods)
            for g, nxt in enumerate(idxs):
                cand = (c2 + cost2[g], ln + 1)
                if cand[0] > max_depth or done[nxt]:
                    continue
                if nxt not in best or cand < best[nxt]:
                    best[nxt] = cand
                    pred[nxt] = (node, g)
                    heapq.heappush(heap, (cand[0], cand[1], counter, int(nxt)))
                    counter += 1
        self.reachable = done
        self._pred = pred
        self._labels = labels
        self._start = start

    def word(self, index: int) -> tuple:
        if not self.reachable[index]:
            raise LookupError(f"Clifford {index} unreachable within depth {self.max_depth}")
        out = []
        node = index
        while node != self._start:
            node, g = self._pred[node]
            out.append(self._labels[g])
        return tuple(reversed(out))

    def words(self) -> list[tuple]:
        return [self.word(i) for i in range(len(self.reachable))]


_TABLES: dict = {}


def compilation_table(gs: GateSet, max_depth: int = MAX_DEPTH) -> CompilationTable:
    key = (json.dumps(gs.to_json(), sort_keys=True), max_depth)
    if key not in _TABLES:
        _TABLES[key] = CompilationTable(gs, max_depth)
    return _TABLES[key]


def compile_to_gateset(el: CliffordElement, gs: GateSet, max_depth: int = MAX_DEPTH) -> tuple:
    """Native word whose product equals ``el.u_comp`` up to global phase."""
    group = clifford_group(2)
    return compilation_table(gs, max_depth).word(group.index_of(el.u_comp))


def _optimal_cost(table: CompilationTable) -> np.ndarray:
    gs = table.gateset
    out = np.full((len(table.reachable), 2), -1, dtype=int)
    for i in np.flatnonzero(table.reachable):
        w = table.word(i)
        out[i] = (sum(gs.is_two_qubit(x) for x in w), len(w))
    return out


def leaked_action_histogram(gs: GateSet, leaked_qubit: int, max_depth: int = MAX_DEPTH, method: str = "all-optimal") -> np.ndarray:
    """Distribution of the partner's net 1Q Clifford when ``leaked_qubit`` is leaked.

    Two-qubit gates are dropped (they do nothing while a partner is
    leaked) and the partner's own 1Q gates are multiplied out. With
    ``method="compiled"`` each 2Q Clifford contributes its one compiled
    word. With ``method="all-optimal"`` each Clifford contributes the
    uniform mixture over every word of optimal cost, so the result does not
    depend on how ties between equal-cost words are broken.

    Returns normalised counts over the 24 single-qubit Clifford classes, in
    the order of :func:`clifford_group(1)`. Cliffords the gateset cannot
    reach within ``max_depth`` are left out with a warning.
    """
    if leaked_qubit not in (0, 1):
        raise ValueError("leaked_qubit must be 0 or 1")
    table = compilation_table(gs, max_depth)
    reach = np.flatnonzero(table.reachable)
    if len(reach) < len(table.reachable):
        log.warning("gateset %r reaches %d of %d 2Q Cliffords within depth %d", gs.name, len(reach), len(table.reachable), max_depth)
    g1 = clifford_group(1)
    partner = 1 - leaked_qubit
    if method == "compiled":
        counts = np.zeros(len(g1))
        for i in reach:
            counts[g1.index_of(partner_action(table.word(i), gs, partner))] += 1
        return counts / counts.sum()
    if method != "all-optimal":
        raise ValueError(f"unknown method {method!r}")
    group = clifford_group(2)
    n, m = len(group), len(g1)
    cost = _optimal_cost(table)
    mats = np.array([gs.two_qubit_unitary(g) for g in gs.gates])
    # right action of each native gate on the partner's accumulated class
    perms = []
    for g in gs.gates:
        if tuple(g.qubits) == (partner,):
            b = g1.index_of(g.matrix)
            perms.append(np.array([g1.index_of(g1.u_comp[b] @ g1.u_comp[a]) for a in range(m)]))
        else:
            perms.append(np.arange(m))
    step2 = np.array([1 if len(g.qubits) == 2 else 0 for g in gs.gates])
    dist = np.zeros((n, m))
    dist[group.identity_index, g1.identity_index] = 1.0
    # every native gate adds one to the word length, so walking the nodes in
    # order of optimal cost finishes each node before it is extended
    order = np.lexsort((cost[:, 1], cost[:, 0]))
    for i in order:
        if not dist[i].any():
            continue
        nxt = group.indices_of(mats @ group.u_comp[i])
        for g, j in enumerate(nxt):
            if cost[j, 0] == cost[i, 0] + step2[g] and cost[j, 1] == cost[i, 1] + 1:
                np.add.at(dist[j], perms[g], dist[i])
    dist = dist[reach]
    dist /= dist.sum(axis=1, keepdims=True)
    return dist.mean(axis=0)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
