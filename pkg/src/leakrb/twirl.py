"""Clifford twirl, depolarizing-parameter extraction and fidelity formulas.

The Clifford group acts on the full space as ``C (+) I_L``. Because the
computational block is only defined up to a global phase, the group that
these elements generate also contains the relative phases ``exp(i k pi/4)``
between the two sectors. Averaging over those phases removes every
coherence between the sectors; without it the average is not a group twirl
and is not idempotent.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .clifford import CliffordGroup, clifford_group, pauli_coset_representatives, pauli_matrices
from .hilbert import QuantumChannel, SpaceLayout, unitary_superop, vec


@dataclass(frozen=True)
class ChannelParameters:
    r: float
    t: float
    d_C: int

    @property
    def lam(self) -> float:
        return self.t - self.r

    @property
    def tau(self) -> float:
        return 1.0 - self.t

    @property
    def F(self) -> float:
        return average_fidelity(self)

    @property
    def f(self) -> float:
        return process_fidelity(self)

    def to_json(self) -> dict:
        return {"r": self.r, "t": self.t, "lambda": self.lam, "tau": self.tau, "d_C": self.d_C}

    @classmethod
    def from_json(cls, data: dict) -> "ChannelParameters":
        return cls(float(data["r"]), float(data["t"]), int(data["d_C"]))


def sector_charge(layout: SpaceLayout) -> np.ndarray:
    """Charge of each vectorised basis operator |i><j| under the sector phase.

    +1 for computational-row/leak-column, -1 for the reverse, 0 otherwise.
    """
    comp = np.zeros(layout.d, dtype=int)
    comp[layout.comp_indices] = 1
    return vec(comp[:, None] - comp[None, :])


def phase_average(s: np.ndarray, layout: SpaceLayout) -> np.ndarray:
    """Average ``s`` over the relative C/L phases generated by the group."""
    q = sector_charge(layout)
    return np.where(q[:, None] == q[None, :], s, 0.0)


@lru_cache(maxsize=None)
def _twirl_tables(n_qubits: int):
    group = clifford_group(n_qubits)
    layout = group.layout
    paulis = [layout.embed(p) for p in pauli_matrices(n_qubits)]
    pauli_sup = np.array([unitary_superop(p) for p in paulis])
    reps = pauli_coset_representatives(group)
    rep_sup = np.array([unitary_superop(group.u_full[i]) for i in reps])
    for a in (pauli_sup, rep_sup):
        a.flags.writeable = False
    return pauli_sup, rep_sup


def _conj_average(s: np.ndarray, sups: np.ndarray, chunk: int = 256) -> np.ndarray:
    """``mean_k  S_k^dag s S_k`` for unitary superoperators ``S_k``."""
    total = np.zeros_like(s, dtype=complex)
    for start in range(0, len(sups), chunk):
        block = sups[start : start + chunk]
        total += np.einsum("kba,bc,kcd->ad", block.conj(), s, block, optimize=True)
    return total / len(sups)


def twirl(ch: QuantumChannel, group: CliffordGroup | list | None = None, method: str = "cosets", check: bool = False) -> QuantumChannel:
    """Exact Clifford twirl ``mean_C C^-1 o ch o C``.

    ``method="cosets"`` averages over Paulis first and then over one
    representative per Pauli coset (720 for two qubits). ``method="direct"``
    sums over every element of ``group`` (a :class:`CliffordGroup` or a list
    of :class:`CliffordElement`), using each element's ``u_full``. Both
    include the relative-phase average. With ``check=True`` the result is
    twirled again and must be unchanged, which detects a non-closed set.
    """
    layout = ch.layout
    s = phase_average(ch.superoperator, layout)
    if method == "cosets":
        if group is not None and not isinstance(group, CliffordGroup):
            raise ValueError("the coset method only works with a full CliffordGroup")
        pauli_sup, rep_sup = _twirl_tables(layout.n_qubits)
        out = _conj_average(_conj_average(s, pauli_sup), rep_sup)
    elif method == "direct":
        if group is None:
            group = clifford_group(layout.n_qubits)
        us = group.u_full if isinstance(group, CliffordGroup) else np.array([el.u_full for el in group])
        sups = np.einsum("kab,kcd->kacbd", us.conj(), us).reshape(len(us), layout.d**2, layout.d**2)
        out = _conj_average(s, sups)
    else:
        raise ValueError(f"unknown twirl method {method!r}")
    result = QuantumChannel(layout, out, tp_flag=ch.tp_flag)
    if check:
        again = twirl(result, group, method=method, check=False)
        if not np.allclose(again.superoperator, out, atol=1e-10):
            raise ValueError("twirl is not idempotent; the element set is not a closed group")
    return result


def normalized_comp_paulis(layout: SpaceLayout) -> np.ndarray:
    """Non-identity computational Paulis / sqrt(d_C), zero on leak support."""
    ps = pauli_matrices(layout.n_qubits)[1:]
    return np.array([layout.embed(p, np.zeros((layout.d_L, layout.d_L))) for p in ps]) / np.sqrt(layout.d_C)


def extract_parameters(ch: QuantumChannel) -> ChannelParameters:
    """``t`` from the computational identity, ``r`` from the Pauli diagonal.

    Works on untwirled channels too, since both quantities are invariant
    under the twirl.
    """
    layout = ch.layout
    dc = layout.d_C
    s = ch.superoperator
    pc = layout.embed(np.eye(dc), np.zeros((layout.d_L, layout.d_L)))
    t = np.vdot(vec(pc), s @ vec(pc / dc)).real
    ps = vec(normalized_comp_paulis(layout))
    r = np.einsum("ka,ab,kb->k", ps.conj(), s, ps).real.mean()
    return ChannelParameters(float(r), float(t), dc)


def average_fidelity(p: ChannelParameters) -> float:
    d = p.d_C
    return (d - 1) / d * p.r + p.t / d


def process_fidelity(p: ChannelParameters) -> float:
    d = p.d_C
    return (d * d - 1) / d**2 * p.r + p.t / d**2


def fidelity_bounds(r: float, d_C: int) -> tuple[float, float, float, float]:
    """Ranges of F and f compatible with ``r`` when ``t`` is unknown."""
    return (
        r,
        1 - (d_C - 1) / d_C * (1 - r),
        r,
        1 - (d_C**2 - 1) / d_C**2 * (1 - r),
    )


def midpoint_infidelity(r: float, d_C: int) -> float:
    """``1 - F`` halfway between the bounds; ``7/8 (1 - r)`` for two qubits."""
    lo, hi, _, _ = fidelity_bounds(r, d_C)
    return 1 - 0.5 * (lo + hi)


def depolarizing_block(r: float, t: float, d_C: int) -> np.ndarray:
    """``r I + (t - r) Tr[.] I / d_C`` on vectorised d_C x d_C operators."""
    v = vec(np.eye(d_C))
    return r * np.eye(d_C * d_C) + (t - r) / d_C * np.outer(v, v)


def closed_form_cc_power(r: float, t: float, ell: int, layout: SpaceLayout | int) -> np.ndarray:
    """Computational block of the twirled channel raised to ``ell``.

    Returned as a ``d_C^2 x d_C^2`` column-stacked superoperator on the
    computational space.
    """
    if ell < 0:
        raise ValueError("ell must be non-negative")
    d_C = layout.d_C if isinstance(layout, SpaceLayout) else int(layout)
    return depolarizing_block(r**ell, t**ell, d_C)


def computational_block(ch: QuantumChannel) -> np.ndarray:
    """The C->C block as a ``d_C^2 x d_C^2`` column-stacked superoperator."""
    return ch.block("C", "C")


def haar_average_fidelity(ch: QuantumChannel, n_states: int = 10_000, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo mean of <psi|ch(psi)|psi> over Haar-random computational states.

    Returns ``(mean, standard error)``.
    """
    layout = ch.layout
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_states, layout.d_C)) + 1j * rng.standard_normal((n_states, layout.d_C))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    psi = np.zeros((n_states, layout.d), dtype=complex)
    psi[:, layout.comp_indices] = z
    rho = np.einsum("ka,kb->kab", psi, psi.conj())
    out = (vec(rho) @ ch.superoperator.T).reshape(n_states, layout.d, layout.d).transpose(0, 2, 1)
    vals = np.einsum("ka,kab,kb->k", psi.conj(), out, psi).real
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_states))

