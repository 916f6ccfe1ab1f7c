"""Randomized-benchmarking circuit simulation and survival estimators.

Every random Clifford is followed by the same total error channel, and so is
the final inversion gate. For the measurement-averaging protocol the basis
permutation ``Q_k`` is folded into that inversion gate, so it costs no extra
noise. Sequences of one length are propagated together as a batch of
density matrices.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .clifford import (
    CliffordElement,
    CliffordGroup,
    clifford_group,
    compilation_table,
    get_gateset,
    invert_sequence,
    leaked_block,
    permutation_gate,
)
from .hilbert import DensityOperator, QuantumChannel, SpaceLayout, build_layout, matrix_power_by_squaring, unvec, vec
from .noise import (
    GadgetModel,
    MeasurementModel,
    NoiseModel,
    gadget_channels,
    gadget_likelihood,
    gadget_patterns,
    joint_outcome_gadget,
    readout_model,
    total_error_channel,
)
from .twirl import twirl

log = logging.getLogger(__name__)

PROTOCOLS = ("comp-spam", "avg-mb", "lps", "naive")
ESTIMATORS = ("p_comp", "p_avg", "p_IC", "p_retention", "p_post", "p_naive")

DEFAULT_READOUT = {
    "comp-spam": "computational-only",
    "avg-mb": "leak-assigned",
    "lps": "leak-assigned",
    "naive": "leak-assigned",
}
ALLOWED_READOUT = {
    "comp-spam": ("computational-only", "leak-resolving"),
    "avg-mb": ("leak-assigned", "computational-only", "leak-resolving"),
    "lps": ("leak-assigned", "computational-only", "leak-resolving"),
    "naive": ("leak-assigned",),
}
PROTOCOL_ESTIMATORS = {
    "comp-spam": ("p_comp",),
    "avg-mb": ("p_avg", "p_IC"),
    "lps": ("p_retention", "p_post", "p_comp"),
    "naive": ("p_naive",),
}


@dataclass
class RBProtocolConfig:
    protocol: str
    lengths: list
    n_sequences: int = 30
    n_shots: int = 200
    rng_seed: int = 0
    noise: NoiseModel = field(default_factory=NoiseModel)
    readout: str | None = None
    reference: str | None = None
    n_qubits: int = 2
    leak_policy: str = "identity-on-leak"
    gateset: str | None = None
    gadget: bool | None = None

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        self.lengths = [int(x) for x in self.lengths]
        if not self.lengths or min(self.lengths) < 1:
            raise ValueError("lengths must be a nonempty list of integers >= 1")
        if self.n_sequences < 1 or self.n_shots < 1:
            raise ValueError("n_sequences and n_shots must be >= 1")
        if self.readout is None:
            self.readout = DEFAULT_READOUT[self.protocol]
        if self.readout not in ALLOWED_READOUT[self.protocol]:
            raise ValueError(f"protocol {self.protocol!r} cannot use {self.readout!r} readout")
        if self.reference is None:
            self.reference = "0" * self.n_qubits
        if len(self.reference) != self.n_qubits or set(self.reference) - {"0", "1"}:
            raise ValueError(f"reference must be a computational bitstring, got {self.reference!r}")
        if self.gadget is None:
            self.gadget = self.protocol == "lps"
        if self.protocol == "lps" and not self.gadget:
            raise ValueError("the lps protocol needs the leakage gadget")
        if self.leak_policy == "gateset-induced" and self.gateset is None:
            raise ValueError("gateset-induced leak policy needs a gateset")

    @property
    def layout(self) -> SpaceLayout:
        return build_layout(self.n_qubits)

    @property
    def gadget_model(self) -> GadgetModel | None:
        if not self.gadget:
            return None
        return self.noise.gadget or GadgetModel()

    def variants(self) -> list[int]:
        d_C = 2**self.n_qubits
        return list(range(d_C)) if self.protocol == "avg-mb" else [0]

    def accepted(self, k: int) -> str:
        """Ideal outcome of variant ``k`` (``reference xor k``)."""
        ref = int(self.reference, 2)
        return format(ref ^ k, f"0{self.n_qubits}b")

    def to_json(self) -> dict:
        return {
            "protocol": self.protocol,
            "lengths": list(self.lengths),
            "n_sequences": self.n_sequences,
            "n_shots": self.n_shots,
            "rng_seed": self.rng_seed,
            "noise": self.noise.to_json(),
            "readout": self.readout,
            "reference": self.reference,
            "n_qubits": self.n_qubits,
            "leak_policy": self.leak_policy,
            "gateset": self.gateset,
            "gadget": self.gadget,
        }

    @classmethod
    def from_json(cls, data: dict) -> "RBProtocolConfig":
        data = dict(data)
        data["noise"] = NoiseModel.from_json(data.get("noise", {}))
        return cls(**data)


@dataclass
class CircuitRecord:
    length: int
    sequence_id: int
    permutation: int | None
    accepted: str
    counts: dict
    gadget_counts: dict | None = None

    @property
    def shots(self) -> int:
        return int(sum(self.counts.values()))


@dataclass
class RBDataset:
    config: RBProtocolConfig | None
    records: list
    d_C: int = 4
    protocol: str | None = None
    reference: str | None = None

    def __post_init__(self):
        if self.protocol is None and self.config is not None:
            self.protocol = self.config.protocol
        if self.config is not None:
            self.d_C = 2**self.config.n_qubits
            self.reference = self.reference or self.config.reference
        if self.reference is None:
            self.reference = "0" * int(round(np.log2(self.d_C)))

    @property
    def lengths(self) -> list[int]:
        return sorted({r.length for r in self.records})

    def by_length(self) -> dict:
        out: dict = {}
        for r in self.records:
            out.setdefault(r.length, {}).setdefault(r.sequence_id, []).append(r)
        return out


@dataclass
class DecayCurve:
    estimator: str
    lengths: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    d_C: int = 4

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        self.lengths = np.asarray(self.lengths, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not len(self.lengths) == len(self.values) == len(self.stderr):
            raise ValueError("lengths, values and stderr must have equal length")
        if np.any(self.stderr < 0):
            raise ValueError("standard errors must be non-negative")

    @property
    def points(self) -> list[tuple]:
        return list(zip(self.lengths.tolist(), self.values.tolist(), self.stderr.tolist()))

    def subset(self, mask) -> "DecayCurve":
        mask = np.asarray(mask, dtype=bool)
        return DecayCurve(self.estimator, self.lengths[mask], self.values[mask], self.stderr[mask], self.d_C)

    def to_rows(self) -> list[dict]:
        return [{"estimator": self.estimator, "length": int(l), "survival": float(v), "stderr": float(s)} for l, v, s in self.points]


# -- per-element tables ---------------------------------------------------------


@lru_cache(maxsize=None)
def full_unitaries(n_qubits: int, leak_policy: str = "identity-on-leak", gateset: str | None = None) -> np.ndarray:
    """``u_full`` for every group element under a leak policy."""
    group = clifford_group(n_qubits)
    if leak_policy == "identity-on-leak":
        return group.u_full
    if leak_policy != "gateset-induced":
        raise ValueError(f"unknown leak policy {leak_policy!r}")
    if n_qubits != 2:
        raise ValueError("gateset-induced extension is defined for two qubits")
    gs = get_gateset(gateset)
    table = compilation_table(gs)
    layout = group.layout
    out = np.empty_like(group.u_full)
    for i, w in enumerate(table.words()):
        out[i] = layout.embed(gs.word_unitary(w), leaked_block(w, gs, layout))
    out.flags.writeable = False
    return out


def sample_sequence(ell: int, rng: np.random.Generator, group: CliffordGroup | None = None, n_qubits: int = 2):
    """``ell`` uniform Cliffords and the element that inverts them."""
    group = group or clifford_group(n_qubits)
    idx = group.sample(rng, ell)
    seq = [group[i] for i in idx]
    return seq, invert_sequence(seq, group)


def _inverse_index(group: CliffordGroup, idx: np.ndarray) -> int:
    prod = np.eye(group.u_comp.shape[-1], dtype=complex)
    for i in idx:
        prod = group.u_comp[i] @ prod
    return group.index_of(prod.conj().T)


# -- single-circuit reference path -----------------------------------------------


def simulate_circuit(
    seq,
    inverse: CliffordElement,
    q_k: int | None,
    nm: NoiseModel,
    mm: MeasurementModel,
    rho_in: DensityOperator,
    gadget: GadgetModel | None = None,
    channel: QuantumChannel | None = None,
):
    """Outcome distribution of one circuit.

    Returns ``{label: probability}``; with a gadget, keys are
    ``"outcome|pattern"`` for the joint distribution.
    """
    layout = rho_in.layout
    if mm.layout != layout or any(el.u_full.shape[0] != layout.d for el in seq):
        raise ValueError("circuit, measurement and state must share one layout")
    ch = channel or total_error_channel(nm, layout)
    s = ch.superoperator
    rho = rho_in.matrix
    for el in seq:
        rho = el.u_full @ rho @ el.u_full.conj().T
        rho = unvec(s @ vec(rho))
    u = inverse.u_full
    if q_k is not None:
        u = permutation_gate(q_k, layout).u @ u
    rho = unvec(s @ vec(u @ rho @ u.conj().T))
    if gadget is None:
        return dict(zip(mm.labels, mm.probabilities(rho)))
    for extra in gadget_channels(gadget, nm, layout):
        rho = extra(rho)
    joint = joint_outcome_gadget(rho, mm, gadget)
    pats = gadget_patterns(layout.n_qubits)
    return {f"{o}|{p}": float(joint[a, b]) for a, o in enumerate(mm.labels) for b, p in enumerate(pats)}


# -- batched dataset generation --------------------------------------------------


def _seed(cfg: RBProtocolConfig, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.rng_seed, spawn_key=tuple(int(k) for k in key)))


def _apply_channel_batch(rho: np.ndarray, s: np.ndarray) -> np.ndarray:
    return unvec(vec(rho) @ s.T)


def _length_records(cfg: RBProtocolConfig, ell: int, s: np.ndarray, mm: MeasurementModel, extras, gad) -> list:
    layout = cfg.layout
    group = clifford_group(cfg.n_qubits)
    u_all = full_unitaries(cfg.n_qubits, cfg.leak_policy, cfg.gateset)
    n = cfg.n_sequences
    idx = np.empty((n, ell), dtype=int)
    inv = np.empty(n, dtype=int)
    for j in range(n):
        idx[j] = group.sample(_seed(cfg, 0, ell, j), ell)
        inv[j] = _inverse_index(group, idx[j])
    rho0 = layout.basis_state(cfg.reference).matrix
    rho = np.broadcast_to(rho0, (n, layout.d, layout.d)).astype(complex)
    for step in range(ell):
        u = u_all[idx[:, step]]
        rho = _apply_channel_batch(u @ rho @ np.conj(np.swapaxes(u, -1, -2)), s)
    u_inv = u_all[inv]
    resp = mm.diagonal_response()
    pats = gadget_patterns(cfg.n_qubits)
    lik = gadget_likelihood(gad, layout) if gad is not None else None
    records = []
    for k in cfg.variants():
        u = permutation_gate(k, layout).u @ u_inv
        out = _apply_channel_batch(u @ rho @ np.conj(np.swapaxes(u, -1, -2)), s)
        for e in extras:
            out = _apply_channel_batch(out, e)
        pops = np.clip(np.real(np.einsum("nii->ni", out)), 0.0, None)
        for j in range(n):
            rng = _seed(cfg, 1, ell, j, k)
            if lik is None:
                p = resp @ pops[j]
                draws = rng.multinomial(cfg.n_shots, p / p.sum())
                counts = {lab: int(c) for lab, c in zip(mm.labels, draws) if c}
                gcounts = None
            else:
                joint = np.einsum("oi,gi,i->og", resp, lik, pops[j]).ravel()
                draws = rng.multinomial(cfg.n_shots, joint / joint.sum()).reshape(len(mm.labels), len(pats))
                counts = {lab: int(c) for lab, c in zip(mm.labels, draws.sum(axis=1)) if c}
                gcounts = {
                    f"{o}|{p}": int(draws[a, b]) for a, o in enumerate(mm.labels) for b, p in enumerate(pats) if draws[a, b]
                }
            records.append(
                CircuitRecord(ell, j, k if cfg.protocol == "avg-mb" else None, cfg.accepted(k), counts, gcounts)
            )
    return records


def run_protocol(cfg: RBProtocolConfig, workers: int = 1) -> RBDataset:
    """Simulate every circuit of ``cfg`` and sample shots.

    Deterministic in ``cfg.rng_seed``: each sequence draw and each shot
    sample use their own seed derived from (seed, length, sequence, variant),
    so the output does not depend on ``workers``.
    """
    layout = cfg.layout
    s = total_error_channel(cfg.noise, layout).superoperator
    mm = readout_model(cfg.noise, layout, cfg.readout)
    gad = cfg.gadget_model
    extras = [c.superoperator for c in gadget_channels(gad, cfg.noise, layout)] if gad is not None else []

    def job(ell):
        return _length_records(cfg, ell, s, mm, extras, gad)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            chunks = list(pool.map(job, cfg.lengths))
    else:
        chunks = [job(ell) for ell in cfg.lengths]
    return RBDataset(cfg, [r for c in chunks for r in c])


# -- estimators -------------------------------------------------------------------


def _pattern_ok(key: str) -> tuple[str, bool]:
    outcome, pattern = key.split("|")
    return outcome, set(pattern) <= {"0"}


def record_statistics(rec: CircuitRecord, reference: str) -> dict:
    """Success counts behind every estimator for one circuit."""
    n = rec.shots
    stats = {
        "n": n,
        "accepted": rec.counts.get(rec.accepted, 0),
        "reference": rec.counts.get(reference, 0),
        "permutation": rec.permutation,
    }
    if rec.gadget_counts is not None:
        kept = kept_acc = kept_ref = 0
        for key, c in rec.gadget_counts.items():
            outcome, ok = _pattern_ok(key)
            if ok:
                kept += c
                kept_acc += c * (outcome == rec.accepted)
                kept_ref += c * (outcome == reference)
        stats.update(kept=kept, kept_accepted=kept_acc, kept_reference=kept_ref)
    return stats


def _binomial_floor(k: float, n: float) -> float:
    p = (k + 0.5) / (n + 1.0)
    return float(np.sqrt(p * (1 - p) / max(n, 1.0)))


def _combine(per_seq: np.ndarray, pooled: float, k: float, n: float, floor: float | None = None) -> tuple[float, float]:
    """Point value and standard error across sequences.

    The error is the larger of the sample standard error of per-sequence
    values and a pooled binomial error, so identical sequences never give a
    zero weight-breaking error. ``floor`` replaces the binomial error of
    ``k`` successes in ``n`` shots.
    """
    per_seq = np.asarray(per_seq, dtype=float)
    sd = per_seq.std(ddof=1) / np.sqrt(len(per_seq)) if len(per_seq) > 1 else 0.0
    return pooled, max(sd, _binomial_floor(k, n) if floor is None else floor)


def _sum_floor(flat) -> float:
    """Binomial floor of a sum of per-variant frequencies."""
    by_k: dict = {}
    for s in flat:
        k, n = by_k.get(s["permutation"], (0, 0))
        by_k[s["permutation"]] = (k + s["reference"], n + s["n"])
    return float(np.sqrt(sum(_binomial_floor(k, n) ** 2 for k, n in by_k.values())))


def estimate_decays(ds: RBDataset, reference: str | None = None, postselect: bool = False) -> list[DecayCurve]:
    """Survival curves with standard errors for the dataset's protocol.

    Datasets that carry gadget bits also get ``p_retention``. With
    ``postselect=True`` they also get ``p_post``, the accepted-outcome
    frequency among shots the gadget flags unleaked (averaged over
    permutation variants for avg-mb).
    """
    protocol = ds.protocol
    if protocol not in PROTOCOLS:
        raise ValueError(f"cannot estimate decays for protocol {protocol!r}")
    reference = reference or ds.reference
    d_C = ds.d_C
    names = list(PROTOCOL_ESTIMATORS[protocol])
    has_gadget = protocol != "lps" and any(r.gadget_counts is not None for r in ds.records)
    if has_gadget:
        names.append("p_retention")
        if postselect:
            names.append("p_post")
    elif postselect and protocol != "lps":
        raise ValueError("post-selection needs gadget counts in the dataset")
    rows: dict = {e: ([], [], []) for e in names}

    def add(name, ell, val, err):
        rows[name][0].append(ell)
        rows[name][1].append(val)
        rows[name][2].append(err)

    for ell, seqs in sorted(ds.by_length().items()):
        stats = {sid: [record_statistics(r, reference) for r in recs] for sid, recs in seqs.items()}
        flat = [s for recs in stats.values() for s in recs]
        n_tot = sum(s["n"] for s in flat)
        if protocol in ("comp-spam", "naive"):
            name = "p_comp" if protocol == "comp-spam" else "p_naive"
            k = sum(s["accepted"] for s in flat)
            per = [sum(s["accepted"] for s in v) / sum(s["n"] for s in v) for v in stats.values()]
            add(name, ell, *_combine(per, k / n_tot, k, n_tot))
        elif protocol == "avg-mb":
            k = sum(s["accepted"] for s in flat)
            per = [np.mean([s["accepted"] / s["n"] for s in v]) for v in stats.values()]
            pooled = np.mean([s["accepted"] / s["n"] for s in flat])
            add("p_avg", ell, *_combine(per, pooled, k, n_tot))
            k_ic = sum(s["reference"] for s in flat)
            per_ic = [sum(s["reference"] / s["n"] for s in v) for v in stats.values()]
            pooled_ic = d_C * np.mean([s["reference"] / s["n"] for s in flat])
            add("p_IC", ell, *_combine(per_ic, pooled_ic, k_ic, n_tot, floor=_sum_floor(flat)))
        if has_gadget:
            kept = sum(s.get("kept", 0) for s in flat)
            per_ret = [sum(s.get("kept", 0) for s in v) / sum(s["n"] for s in v) for v in stats.values()]
            add("p_retention", ell, *_combine(per_ret, kept / n_tot, kept, n_tot))
            if postselect:
                _add_postselected(add, ell, stats, flat)
        if protocol == "lps":
            kept = sum(s["kept"] for s in flat)
            per_ret = [sum(s["kept"] for s in v) / sum(s["n"] for s in v) for v in stats.values()]
            add("p_retention", ell, *_combine(per_ret, kept / n_tot, kept, n_tot))
            k_joint = sum(s["kept_accepted"] for s in flat)
            per_joint = [sum(s["kept_accepted"] for s in v) / sum(s["n"] for s in v) for v in stats.values()]
            add("p_comp", ell, *_combine(per_joint, k_joint / n_tot, k_joint, n_tot))
            if kept == 0:
                log.warning("no retained shots at length %d; p_post point omitted", ell)
                continue
            per_post = [
                sum(s["kept_accepted"] for s in v) / sum(s["kept"] for s in v)
                for v in stats.values()
                if sum(s["kept"] for s in v) > 0
            ]
            add("p_post", ell, *_combine(per_post, k_joint / kept, k_joint, kept))
    return [DecayCurve(name, *map(np.asarray, rows[name]), d_C=d_C) for name in names]


def _add_postselected(add, ell, stats, flat):
    kept = sum(s["kept"] for s in flat)
    if kept == 0:
        log.warning("no retained shots at length %d; p_post point omitted", ell)
        return
    k = sum(s["kept_accepted"] for s in flat)
    # per sequence: mean over variants of the conditional accepted frequency
    per = [np.mean([s["kept_accepted"] / s["kept"] for s in v if s["kept"]]) for v in stats.values() if any(s["kept"] for s in v)]
    pooled = np.mean([s["kept_accepted"] / s["kept"] for s in flat if s["kept"]])
    add("p_post", ell, *_combine(per, pooled, k, kept))


def curve_dict(curves) -> dict:
    return {c.estimator: c for c in curves}


# -- exact expectations --------------------------------------------------------------


_TWIRL_CACHE: dict = {}


def twirled_noise(nm: NoiseModel, layout: SpaceLayout) -> QuantumChannel:
    key = (nm.lambda_s, nm.tau_s, nm.seepage_enabled, layout.n_qubits)
    if key not in _TWIRL_CACHE:
        _TWIRL_CACHE[key] = twirl(total_error_channel(nm, layout))
    return _TWIRL_CACHE[key]


def exact_twirled_decay(
    nm: NoiseModel,
    protocol: str,
    lengths,
    layout: SpaceLayout | None = None,
    spam: bool = False,
    readout: str | None = None,
    reference: str | None = None,
    gadget: bool | None = None,
) -> list[DecayCurve]:
    """Shot-free survival curves from the twirled channel.

    With ``spam=False`` the state is ``twirl(L)^ell (rho_in)`` and is read
    with noiseless readout, ideal ``Q_k`` and an ideal gadget without extra
    channels. With ``spam=True`` the final noisy inversion gate, readout
    flips and gadget channels are included, which is exactly the
    sequence-averaged expectation of :func:`run_protocol`.
    """
    layout = layout or build_layout(2)
    cfg = RBProtocolConfig(protocol, list(lengths), noise=nm, readout=readout, reference=reference, n_qubits=layout.n_qubits, gadget=gadget)
    bar = twirled_noise(nm, layout).superoperator
    if spam:
        final = total_error_channel(nm, layout).superoperator
        meas_nm = nm
        gad = cfg.gadget_model
        extras = [c.superoperator for c in gadget_channels(gad, nm, layout)] if gad is not None else []
    else:
        final = np.eye(layout.d**2)
        meas_nm = replace(nm, readout_flip=0.0)
        gad = GadgetModel() if cfg.gadget else None
        extras = []
    mm = readout_model(meas_nm, layout, cfg.readout)
    resp = mm.diagonal_response()
    labels = mm.labels
    rho0 = vec(layout.basis_state(cfg.reference).matrix)
    lik = gadget_likelihood(gad, layout) if gad is not None else None
    d_C = layout.d_C
    rows = {e: [] for e in PROTOCOL_ESTIMATORS[protocol]}
    for ell in cfg.lengths:
        state = matrix_power_by_squaring(bar, ell) @ rho0
        dists = []
        for k in cfg.variants():
            qs = np.kron(permutation_gate(k, layout).u.conj(), permutation_gate(k, layout).u)
            v = final @ (qs @ state)
            for e in extras:
                v = e @ v
            pops = np.clip(np.real(np.diag(unvec(v))), 0.0, None)
            dists.append(pops)
        if protocol in ("comp-spam", "naive"):
            p = resp @ dists[0]
            rows[PROTOCOL_ESTIMATORS[protocol][0]].append(p[labels.index(cfg.accepted(0))])
        elif protocol == "avg-mb":
            ps = [resp @ d for d in dists]
            rows["p_avg"].append(np.mean([p[labels.index(cfg.accepted(k))] for k, p in zip(cfg.variants(), ps)]))
            rows["p_IC"].append(sum(p[labels.index(cfg.reference)] for p in ps))
        else:
            joint = np.einsum("oi,gi,i->og", resp, lik, dists[0])
            ret = joint[:, 0].sum()
            acc = joint[labels.index(cfg.accepted(0)), 0]
            rows["p_retention"].append(ret)
            rows["p_comp"].append(acc)
            rows["p_post"].append(acc / ret if ret > 0 else np.nan)
    ells = np.array(cfg.lengths)
    return [DecayCurve(name, ells, np.array(rows[name]), np.zeros(len(ells)), d_C) for name in PROTOCOL_ESTIMATORS[protocol]]
