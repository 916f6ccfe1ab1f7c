"""Operator and superoperator algebra on a computational (+) leakage space.

Every qubit carries three levels: ``0``, ``1`` and a single leak level
``l``. Basis states of an ``n``-qubit register are labelled by strings over
``{0, 1, l}`` and indexed in tensor-product order with ``l`` as level 2, so
for two qubits the order is::

    00 01 0l 10 11 1l l0 l1 ll

Consumers must go through :meth:`SpaceLayout.index_of` rather than rely on
this order.

Superoperators use column-stacking vectorisation, ``vec(A X B) =
(B.T kron A) vec(X)``. Use :func:`vec`, :func:`unvec` and the channel
constructors here instead of doing index arithmetic elsewhere.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

ATOL = 1e-10
CP_ATOL = 1e-9

LEVELS = ("0", "1", "l")


def vec(x: np.ndarray) -> np.ndarray:
    """Column-stack a square matrix (or a batch of them) into vectors."""
    x = np.asarray(x)
    d = x.shape[-1]
    return np.swapaxes(x, -1, -2).reshape(*x.shape[:-2], d * d)


def unvec(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    d = int(round(np.sqrt(v.shape[-1])))
    return np.swapaxes(v.reshape(*v.shape[:-1], d, d), -1, -2)


@dataclass(frozen=True)
class SpaceLayout:
    """Index bookkeeping for ``n_qubits`` qutrits split into C and L."""

    n_qubits: int
    leak_levels: int = 1
    labels: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_qubits not in (1, 2):
            raise ValueError(f"only 1 or 2 qubits are supported, got {self.n_qubits}")
        if self.leak_levels != 1:
            raise ValueError("only one leak level per qubit is implemented")
        labels = tuple("".join(p) for p in itertools.product(LEVELS, repeat=self.n_qubits))
        object.__setattr__(self, "labels", labels)

    @property
    def levels_per_qubit(self) -> int:
        return 2 + self.leak_levels

    @property
    def d(self) -> int:
        return self.levels_per_qubit**self.n_qubits

    @property
    def d_C(self) -> int:
        return 2**self.n_qubits

    @property
    def d_L(self) -> int:
        return self.d - self.d_C

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"{label!r} is not a basis label for {self.n_qubits} qubit(s)") from None

    @property
    def comp_indices(self) -> np.ndarray:
        """Full-space indices of the computational basis, in bitstring order."""
        return _comp_indices(self.n_qubits)

    @property
    def leak_indices(self) -> np.ndarray:
        return _leak_indices(self.n_qubits)

    def comp_labels(self) -> list[str]:
        return [self.labels[i] for i in self.comp_indices]

    def leak_labels(self) -> list[str]:
        return [self.labels[i] for i in self.leak_indices]

    def leak_pattern(self, index: int) -> tuple[int, ...]:
        """Per-qubit 0/1 flags telling which qubits of a basis state are leaked."""
        return tuple(int(c == "l") for c in self.labels[index])

    def embed(self, u_comp: np.ndarray, u_leak: np.ndarray | None = None) -> np.ndarray:
        """Direct sum ``u_comp (+) u_leak`` placed at the layout's indices."""
        out = np.zeros((self.d, self.d), dtype=complex)
        ci, li = self.comp_indices, self.leak_indices
        out[np.ix_(ci, ci)] = u_comp
        out[np.ix_(li, li)] = np.eye(self.d_L) if u_leak is None else u_leak
        return out

    def basis_state(self, label: str) -> "DensityOperator":
        rho = np.zeros((self.d, self.d), dtype=complex)
        i = self.index_of(label)
        rho[i, i] = 1.0
        return DensityOperator(self, rho)


@lru_cache(maxsize=None)
def _comp_indices(n: int) -> np.ndarray:
    idx = [i for i, lab in enumerate(itertools.product(LEVELS, repeat=n)) if "l" not in lab]
    out = np.array(idx)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def _leak_indices(n: int) -> np.ndarray:
    idx = [i for i, lab in enumerate(itertools.product(LEVELS, repeat=n)) if "l" in lab]
    out = np.array(idx)
    out.flags.writeable = False
    return out


def build_layout(n_qubits: int) -> SpaceLayout:
    return SpaceLayout(n_qubits)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DensityOperator:
    layout: SpaceLayout
    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.shape != (self.layout.d, self.layout.d):
            raise ValueError(f"expected a {self.layout.d}x{self.layout.d} matrix, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def is_state(self, atol: float = ATOL) -> bool:
        m = self.matrix
        if not np.allclose(m, m.conj().T, atol=1e-12):
            return False
        if abs(np.trace(m) - 1) > atol:
            return False
        return bool(np.linalg.eigvalsh(m).min() >= -atol)

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.matrix)).copy()


@dataclass(frozen=True, eq=False)
class ObservableOperator:
    layout: SpaceLayout
    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.shape != (self.layout.d, self.layout.d):
            raise ValueError(f"expected a {self.layout.d}x{self.layout.d} matrix, got {m.shape}")
        if not np.allclose(m, m.conj().T, atol=1e-12):
            raise ValueError("observable is not Hermitian")
        object.__setattr__(self, "matrix", m)

    def expectation(self, rho: DensityOperator) -> float:
        return float(np.real(np.trace(self.matrix @ rho.matrix)))

    def is_effect(self, atol: float = ATOL) -> bool:
        w = np.linalg.eigvalsh(self.matrix)
        return bool(w.min() >= -atol and w.max() <= 1 + atol)


@dataclass(frozen=True, eq=False)
class QuantumChannel:
    """A linear map on operators of the full space, stored as a superoperator.

    ``tp_flag`` and ``cp_checked`` are verified at construction, so a
    channel carrying either flag actually satisfies it.
    """

    layout: SpaceLayout
    superoperator: np.ndarray
    tp_flag: bool = False
    cp_checked: bool = False

    def __post_init__(self):
        s = _frozen(self.superoperator)
        d2 = self.layout.d**2
        if s.shape != (d2, d2):
            raise ValueError(f"expected a {d2}x{d2} superoperator, got {s.shape}")
        object.__setattr__(self, "superoperator", s)
        if self.tp_flag and not is_trace_preserving(s):
            raise ValueError("channel flagged trace preserving but adjoint(I) != I")
        if self.cp_checked and choi_min_eigenvalue(s) < -CP_ATOL:
            raise ValueError("channel flagged CP but its Choi matrix has negative eigenvalues")

    @property
    def d(self) -> int:
        return self.layout.d

    def __call__(self, rho):
        if isinstance(rho, DensityOperator):
            if rho.layout != self.layout:
                raise ValueError("layout mismatch")
            return DensityOperator(self.layout, unvec(self.superoperator @ vec(rho.matrix)))
        return unvec(self.superoperator @ vec(np.asarray(rho)))

    def compose(self, other: "QuantumChannel") -> "QuantumChannel":
        """``self after other``."""
        if other.layout != self.layout:
            raise ValueError("layout mismatch")
        return QuantumChannel(
            self.layout,
            self.superoperator @ other.superoperator,
            tp_flag=self.tp_flag and other.tp_flag,
        )

    def adjoint(self, x: np.ndarray) -> np.ndarray:
        return unvec(self.superoperator.conj().T @ vec(x))

    def tensor(self) -> np.ndarray:
        """4-index view ``T[r_out, c_out, r_in, c_in]``."""
        return superop_to_tensor(self.superoperator)

    def choi(self) -> np.ndarray:
        return choi_matrix(self.superoperator)

    def block(self, out: str, inp: str) -> np.ndarray:
        """Superoperator restricted to ``inp`` -> ``out`` operator sectors.

        Sectors are ``"C"`` (span |i><j|, i, j computational) and ``"L"``
        (everything else, including C/L cross-coherences).
        """
        mo, mi = operator_sector_mask(self.layout, out), operator_sector_mask(self.layout, inp)
        return self.superoperator[np.ix_(mo, mi)]


def superop_to_tensor(s: np.ndarray) -> np.ndarray:
    d = int(round(np.sqrt(s.shape[0])))
    return s.reshape(d, d, d, d).transpose(1, 0, 3, 2)


def tensor_to_superop(t: np.ndarray) -> np.ndarray:
    d = t.shape[0]
    return t.transpose(1, 0, 3, 2).reshape(d * d, d * d)


def choi_matrix(s: np.ndarray) -> np.ndarray:
    """``J = sum_ij |i><j| (x) Lambda(|i><j|)``."""
    t = superop_to_tensor(s)
    d = t.shape[0]
    return t.transpose(2, 0, 3, 1).reshape(d * d, d * d)


def choi_min_eigenvalue(s: np.ndarray) -> float:
    j = choi_matrix(s)
    return float(np.linalg.eigvalsh((j + j.conj().T) / 2).min())


def is_trace_preserving(s: np.ndarray, atol: float = ATOL) -> bool:
    d = int(round(np.sqrt(s.shape[0])))
    eye = vec(np.eye(d))
    return bool(np.allclose(s.conj().T @ eye, eye, atol=atol))


def operator_sector_mask(layout: SpaceLayout, sector: str) -> np.ndarray:
    comp = np.zeros(layout.d, dtype=bool)
    comp[layout.comp_indices] = True
    in_c = vec(np.outer(comp, comp)).astype(bool)
    if sector == "C":
        return in_c
    if sector == "L":
        return ~in_c
    raise ValueError(f"unknown sector {sector!r}")


def subspace_projectors(layout: SpaceLayout) -> tuple[ObservableOperator, ObservableOperator]:
    pc = np.zeros((layout.d, layout.d))
    pc[layout.comp_indices, layout.comp_indices] = 1.0
    return ObservableOperator(layout, pc), ObservableOperator(layout, np.eye(layout.d) - pc)


def identity_channel(layout: SpaceLayout) -> QuantumChannel:
    return QuantumChannel(layout, np.eye(layout.d**2), tp_flag=True, cp_checked=True)


def unitary_superop(u: np.ndarray) -> np.ndarray:
    return np.kron(u.conj(), u)


def unitary_to_channel(layout: SpaceLayout, u: np.ndarray) -> QuantumChannel:
    u = np.asarray(u, dtype=complex)
    if u.shape != (layout.d, layout.d):
        raise ValueError(f"expected a {layout.d}x{layout.d} unitary, got {u.shape}")
    if not np.allclose(u.conj().T @ u, np.eye(layout.d), atol=ATOL):
        raise ValueError("matrix is not unitary")
    return QuantumChannel(layout, unitary_superop(u), tp_flag=True, cp_checked=True)


def kraus_to_channel(layout: SpaceLayout, kraus, check: bool = True) -> QuantumChannel:
    s = sum(np.kron(np.conj(k), k) for k in kraus)
    return QuantumChannel(layout, s, tp_flag=check, cp_checked=check)


def apply_channel(ch: QuantumChannel, rho: DensityOperator) -> DensityOperator:
    if ch.layout != rho.layout:
        raise ValueError("channel and state live on different layouts")
    return ch(rho)


def matrix_power_by_squaring(s: np.ndarray, power: int) -> np.ndarray:
    if power < 0:
        raise ValueError("power must be non-negative")
    result = np.eye(s.shape[0], dtype=complex)
    base = np.array(s, dtype=complex)
    while power:
        if power & 1:
            result = base @ result
        power >>= 1
        if power:
            base = base @ base
    return result


def channel_power(ch: QuantumChannel, power: int) -> QuantumChannel:
    return QuantumChannel(ch.layout, matrix_power_by_squaring(ch.superoperator, power), tp_flag=ch.tp_flag)


def project_computational(rho: DensityOperator) -> DensityOperator:
    pc, _ = subspace_projectors(rho.layout)
    return DensityOperator(rho.layout, pc.matrix @ rho.matrix @ pc.matrix)


def tensor_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Superoperator of ``A (x) B`` given the factor superoperators."""
    ta, tb = superop_to_tensor(a), superop_to_tensor(b)
    da, db = ta.shape[0], tb.shape[0]
    t = np.einsum("abcd,efgh->aebfcgdh", ta, tb).reshape(da * db, da * db, da * db, da * db)
    return tensor_to_superop(t)


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a complex Ginibre matrix."""
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))
