"""Gate error channels, readout POVMs and the leakage-detection gadget.

The total gate error is built by adding generators about the identity,
``I + (D - I) + (L - I)``, where ``D`` is computational depolarizing noise
and ``L`` the per-qubit leakage process tensored over qubits. Adding the
channels themselves would double the trace.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from .hilbert import (
    CP_ATOL,
    DensityOperator,
    ObservableOperator,
    QuantumChannel,
    SpaceLayout,
    choi_min_eigenvalue,
    tensor_channels,
    vec,
)

TAU_MAX = 0.1
READOUT_KINDS = ("computational-only", "leak-assigned", "leak-resolving")
DISCARD = "discard"


@dataclass(frozen=True, eq=False)
class GadgetModel:
    """Classical model of an ancilla-based leak detector.

    ``extra_channels=None`` means "``n_extra`` copies of the total gate
    error", resolved against a noise model by :func:`gadget_channels`.
    """

    false_negative: float = 0.0
    false_positive: float = 0.0
    extra_channels: tuple | None = None
    n_extra: int = 2

    def __post_init__(self):
        for name in ("false_negative", "false_positive"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.n_extra < 0:
            raise ValueError("n_extra must be non-negative")

    def flip_matrix(self) -> np.ndarray:
        """``M[bit, leaked]`` = P(gadget bit | true leak flag) for one qubit."""
        fn, fp = self.false_negative, self.false_positive
        return np.array([[1 - fp, fn], [fp, 1 - fn]])

    def to_json(self) -> dict:
        if self.extra_channels is not None:
            raise ValueError("explicit extra channels are not JSON-serialisable; use n_extra")
        return {"false_negative": self.false_negative, "false_positive": self.false_positive, "n_extra": self.n_extra}

    @classmethod
    def from_json(cls, data: dict) -> "GadgetModel":
        return cls(float(data.get("false_negative", 0.0)), float(data.get("false_positive", 0.0)), None, int(data.get("n_extra", 2)))


@dataclass(frozen=True)
class NoiseModel:
    """Error magnitudes for simulated RB.

    ``readout_flip=None`` ties the per-qubit readout bit-flip probability to
    ``lambda_s``. ``leak_readout_assignment=None`` means a leaked qubit
    reads as '1'.
    """

    lambda_s: float = 0.0
    tau_s: float = 0.0
    seepage_enabled: bool = True
    readout_flip: float | None = None
    leak_readout_assignment: dict | None = field(default=None, hash=False)
    gadget: GadgetModel | None = field(default=None, hash=False)
    composition_mode: str = "generator-additive"

    def __post_init__(self):
        for name in ("lambda_s", "tau_s"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.readout_flip is not None and not 0.0 <= self.readout_flip <= 1.0:
            raise ValueError("readout_flip must lie in [0, 1]")
        if self.composition_mode != "generator-additive":
            raise ValueError("only generator-additive composition is supported")

    @property
    def flip(self) -> float:
        return self.lambda_s if self.readout_flip is None else self.readout_flip

    def with_gadget(self, gadget: GadgetModel | None = None) -> "NoiseModel":
        return replace(self, gadget=gadget or GadgetModel())

    def to_json(self) -> dict:
        return {
            "lambda_s": self.lambda_s,
            "tau_s": self.tau_s,
            "seepage_enabled": self.seepage_enabled,
            "readout_flip": self.readout_flip,
            "leak_readout_assignment": self.leak_readout_assignment,
            "gadget": None if self.gadget is None else self.gadget.to_json(),
            "composition_mode": self.composition_mode,
        }

    @classmethod
    def from_json(cls, data: dict) -> "NoiseModel":
        g = data.get("gadget")
        return cls(
            lambda_s=float(data.get("lambda_s", 0.0)),
            tau_s=float(data.get("tau_s", 0.0)),
            seepage_enabled=bool(data.get("seepage_enabled", True)),
            readout_flip=data.get("readout_flip"),
            leak_readout_assignment=data.get("leak_readout_assignment"),
            gadget=None if g is None else GadgetModel.from_json(g),
            composition_mode=data.get("composition_mode", "generator-additive"),
        )


# -- leakage -----------------------------------------------------------------


def _lindblad_superop(jumps, d: int) -> np.ndarray:
    """Column-stacked generator of ``sum_k rate_k D[J_k]``."""
    eye = np.eye(d)
    gen = np.zeros((d * d, d * d), dtype=complex)
    for rate, j in jumps:
        jdj = j.conj().T @ j
        gen += rate * (np.kron(j.conj(), j) - 0.5 * np.kron(eye, jdj) - 0.5 * np.kron(jdj.T, eye))
    return gen


def qutrit_leakage_generator(seepage: bool) -> np.ndarray:
    """Per-qubit generator at unit leakage rate.

    Jumps ``|l><0|`` and ``|l><1|`` at rate 1; with seepage, ``|0><l|`` and
    ``|1><l|`` at rate 1/2.
    """
    def ket_bra(a, b):
        m = np.zeros((3, 3))
        m[a, b] = 1.0
        return m

    jumps = [(1.0, ket_bra(2, 0)), (1.0, ket_bra(2, 1))]
    if seepage:
        jumps += [(0.5, ket_bra(0, 2)), (0.5, ket_bra(1, 2))]
    return _lindblad_superop(jumps, 3)


def leakage_rate(tau_s: float, seepage: bool, n_qubits: int) -> float:
    """Per-qubit ``gamma * dt`` giving computational population ``1 - tau_s``.

    Each qubit started in its computational space keeps population
    ``exp(-x)`` without seepage and ``(1 + exp(-2x)) / 2`` with it; the
    register value is that number to the power ``n_qubits``.
    """
    if not 0.0 <= tau_s <= TAU_MAX:
        raise ValueError(f"tau_s must lie in [0, {TAU_MAX}], got {tau_s}")
    keep = (1.0 - tau_s) ** (1.0 / n_qubits)
    if not seepage:
        return float(-np.log(keep))
    return float(-0.5 * np.log(2.0 * keep - 1.0))


def leakage_channel(tau_s: float, seepage: bool, layout: SpaceLayout) -> QuantumChannel:
    """Leakage (and optional seepage) on every qubit, exponentiated exactly."""
    x = leakage_rate(tau_s, seepage, layout.n_qubits)
    single = expm(x * qutrit_leakage_generator(seepage))
    s = single
    for _ in range(layout.n_qubits - 1):
        s = tensor_channels(s, single)
    return QuantumChannel(layout, s, tp_flag=True, cp_checked=True)


# -- depolarizing ------------------------------------------------------------


def depolarizing_superop(lambda_s: float, layout: SpaceLayout) -> np.ndarray:
    """Depolarize the computational block and keep leak populations.

    Every coherence outside the computational block (between sectors or
    between two leak levels) is damped by ``1 - lambda_s``. Leaving those
    coherences untouched makes the map non-CP, and its sum with the leakage
    process non-CP at second order. Neither coherence type reaches a
    diagonal measurement unless seepage brings it back.
    """
    d, dc = layout.d, layout.d_C
    pc = np.zeros((d, d))
    pc[layout.comp_indices, layout.comp_indices] = 1.0
    leak_pop = vec(np.eye(d) - pc).astype(bool)
    keep = np.where(leak_pop, 1.0, 1.0 - lambda_s)
    v = vec(pc)
    return np.diag(keep) + (lambda_s / dc) * np.outer(v, v)


def depolarizing_channel(lambda_s: float, layout: SpaceLayout) -> QuantumChannel:
    if not 0.0 <= lambda_s <= 1.0:
        raise ValueError(f"lambda_s must lie in [0, 1], got {lambda_s}")
    return QuantumChannel(layout, depolarizing_superop(lambda_s, layout), tp_flag=True, cp_checked=True)


# -- total -------------------------------------------------------------------


def total_error_channel(nm: NoiseModel, layout: SpaceLayout) -> QuantumChannel:
    dep = depolarizing_superop(nm.lambda_s, layout)
    leak = leakage_channel(nm.tau_s, nm.seepage_enabled, layout).superoperator
    s = dep + leak - np.eye(layout.d**2)
    if choi_min_eigenvalue(s) < -CP_ATOL:
        raise ValueError(
            f"generator-additive combination is not CP at lambda_s={nm.lambda_s}, tau_s={nm.tau_s}"
        )
    return QuantumChannel(layout, s, tp_flag=True, cp_checked=True)


# -- readout -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    povm: tuple
    kind: str

    def __post_init__(self):
        if self.kind not in READOUT_KINDS:
            raise ValueError(f"unknown readout kind {self.kind!r}")
        total = sum(p.matrix for _, p in self.povm)
        d = total.shape[0]
        if not np.allclose(total, np.eye(d), atol=1e-10):
            raise ValueError("POVM elements do not sum to the identity")
        for label, p in self.povm:
            if not p.is_effect():
                raise ValueError(f"POVM element {label!r} is not an effect")

    @property
    def labels(self) -> list[str]:
        return [lab for lab, _ in self.povm]

    @property
    def layout(self) -> SpaceLayout:
        return self.povm[0][1].layout

    def element(self, label: str) -> ObservableOperator:
        for lab, p in self.povm:
            if lab == label:
                return p
        raise KeyError(label)

    def diagonal_response(self) -> np.ndarray:
        """``R[o, i] = <i|Pi_o|i>``; raises if any element is off-diagonal."""
        mats = np.array([p.matrix for _, p in self.povm])
        diag = np.einsum("oii->oi", mats)
        off = mats - np.einsum("oi,ij->oij", diag, np.eye(mats.shape[-1]))
        if np.abs(off).max() > 1e-12:
            raise ValueError("POVM is not diagonal in the level basis")
        return diag.real

    def probabilities(self, rho) -> np.ndarray:
        m = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
        return np.array([np.trace(p.matrix @ m).real for _, p in self.povm])


def default_leak_assignment(layout: SpaceLayout) -> dict:
    """Leaked qubits read as '1', unleaked ones keep their bit."""
    return {lab: lab.replace("l", "1") for lab in layout.leak_labels()}


def full_leak_assignment(layout: SpaceLayout, outcome: str | None = None) -> dict:
    """Send every leaked pattern to one outcome (all-zeros by default)."""
    outcome = outcome or "0" * layout.n_qubits
    return {lab: outcome for lab in layout.leak_labels()}


def _confusion(flip: float, n: int) -> np.ndarray:
    """``C[b, b']`` = P(read b | true b') for independent per-qubit flips."""
    one = np.array([[1 - flip, flip], [flip, 1 - flip]])
    c = np.ones((1, 1))
    for _ in range(n):
        c = np.kron(c, one)
    return c


def readout_model(nm: NoiseModel, layout: SpaceLayout, kind: str = "leak-assigned") -> MeasurementModel:
    if kind not in READOUT_KINDS:
        raise ValueError(f"unknown readout kind {kind!r}")
    d = layout.d
    bits = layout.comp_labels()
    raw = {b: np.zeros((d, d)) for b in bits}
    extra = {}
    for b in bits:
        i = layout.index_of(b)
        raw[b][i, i] = 1.0
    if kind == "leak-assigned":
        assign = nm.leak_readout_assignment or default_leak_assignment(layout)
        missing = set(layout.leak_labels()) - set(assign)
        if missing:
            raise ValueError(f"leak readout assignment misses {sorted(missing)}")
        for lab in layout.leak_labels():
            target = assign[lab]
            if target not in raw:
                raise ValueError(f"leak assignment target {target!r} is not a computational outcome")
            i = layout.index_of(lab)
            raw[target][i, i] += 1.0
    elif kind == "computational-only":
        pl = np.zeros((d, d))
        pl[layout.leak_indices, layout.leak_indices] = 1.0
        extra[DISCARD] = pl
    else:
        for lab in layout.leak_labels():
            m = np.zeros((d, d))
            i = layout.index_of(lab)
            m[i, i] = 1.0
            extra[lab] = m
    conf = _confusion(nm.flip, layout.n_qubits)
    povm = []
    for a, b in enumerate(bits):
        m = sum(conf[a, c] * raw[bits[c]] for c in range(len(bits)))
        povm.append((b, ObservableOperator(layout, m)))
    povm += [(lab, ObservableOperator(layout, m)) for lab, m in extra.items()]
    return MeasurementModel(tuple(povm), kind)


# -- gadget ------------------------------------------------------------------


def gadget_channels(g: GadgetModel, nm: NoiseModel, layout: SpaceLayout) -> list[QuantumChannel]:
    if g.extra_channels is not None:
        return list(g.extra_channels)
    return [total_error_channel(nm, layout)] * g.n_extra


def gadget_patterns(n_qubits: int) -> list[str]:
    return ["".join(p) for p in itertools.product("01", repeat=n_qubits)]


def gadget_likelihood(g: GadgetModel, layout: SpaceLayout) -> np.ndarray:
    """``G[pattern, i]`` = P(gadget bits | basis state i)."""
    flip = g.flip_matrix()
    pats = gadget_patterns(layout.n_qubits)
    out = np.ones((len(pats), layout.d))
    for i in range(layout.d):
        leaked = layout.leak_pattern(i)
        for p, pat in enumerate(pats):
            for q, bit in enumerate(pat):
                out[p, i] *= flip[int(bit), leaked[q]]
    return out


def joint_outcome_gadget(rho, mm: MeasurementModel, g: GadgetModel) -> np.ndarray:
    """Exact ``P(outcome, gadget pattern)`` for a diagonal POVM.

    The detector is modelled as non-demolition in the level basis, so both
    records are conditionally independent given the basis state.
    """
    m = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
    pops = np.clip(np.real(np.diag(m)), 0.0, None)
    resp = mm.diagonal_response()
    lik = gadget_likelihood(g, mm.layout)
    return np.einsum("oi,gi,i->og", resp, lik, pops)


def gadget_outcomes(state: DensityOperator, g: GadgetModel, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Sample per-qubit leak bits after the gadget's extra channels.

    Returns an array of shape ``(n_qubits,)`` or ``(size, n_qubits)``.
    """
    layout = state.layout
    rho = state
    for ch in g.extra_channels or ():
        rho = ch(rho)
    pops = np.clip(np.real(np.diag(rho.matrix)), 0.0, None)
    probs = gadget_likelihood(g, layout) @ pops
    probs = probs / probs.sum()
    pats = gadget_patterns(layout.n_qubits)
    draws = rng.choice(len(pats), size=size, p=probs)
    table = np.array([[int(c) for c in p] for p in pats])
    return table[draws]
