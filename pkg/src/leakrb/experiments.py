"""Sequence-length rules, single-cell runs, heat-map sweeps and SPAM audits."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .clifford import get_gateset, leaked_action_histogram, total_variation
from .fitting import REGIMES, EstimateReport, analyze_curves, bootstrap, report_pipeline
from .hilbert import build_layout, matrix_power_by_squaring, unvec, vec
from .noise import NoiseModel, readout_model, total_error_channel
from .simulate import PROTOCOLS, RBProtocolConfig, estimate_decays, exact_twirled_decay, run_protocol, twirled_noise
from .twirl import ChannelParameters, extract_parameters

log = logging.getLogger(__name__)

RATE_FLOOR = 1e-4
REL_QUANTITIES = ("infidelity", "one_minus_r", "tau")
CSV_COLUMNS = ("regime", "protocol", "lambda_s", "tau_s", "quantity", "truth", "estimate", "ci", "rel_diff", "rel_diff_clipped")


def space(x: float, y: float, z: int) -> list[int]:
    """``z`` evenly spaced values from ``x`` to ``y``, rounded half-up, duplicates dropped."""
    vals = np.floor(np.linspace(x, y, z) + 0.5).astype(int)
    return list(dict.fromkeys(int(v) for v in vals))


def _log_space(top: float, z: int = 6) -> list[int]:
    vals = np.floor(10.0 ** np.linspace(0.0, top, z) + 0.5).astype(int)
    return list(dict.fromkeys(int(v) for v in vals))


def sequence_lengths(regime: str, protocol: str, lambda_s: float, tau_s: float) -> list[int]:
    """Six lengths per the length-selection table of each regime.

    Rates below ``RATE_FLOOR`` are raised to it so that zero-error cells
    still get finite lengths. The naive protocol uses the comp-spam rules.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if regime == "pop-transfer" and protocol != "avg-mb":
        raise ValueError("the population-transfer regime has lengths only for avg-mb")
    lam, tau = max(lambda_s, RATE_FLOOR), max(tau_s, RATE_FLOOR)
    if regime == "short":
        return space(1, min(1 / lam, 1 / tau) / 25, 6)
    if regime == "comp-dominant":
        if protocol in ("comp-spam", "naive"):
            return space(1, max(1 / lam, 1 / (25 * tau)), 6)
        return _log_space(-math.log10(lam))
    return _log_space(-math.log10(min(lam, tau)))


def regime_noise(regime: str, lambda_s: float, tau_s: float, **kw) -> NoiseModel:
    """Noise model for a sweep cell; the no-seepage regime drops the return jumps."""
    return NoiseModel(lambda_s, tau_s, seepage_enabled=regime != "no-seepage", **kw)


@dataclass
class CellConfig:
    n_sequences: int = 30
    n_shots: int = 200
    exact: bool = False
    n_resamples: int = 0
    readout_flip: float | None = None
    scale: bool = False

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CellResult:
    lambda_s: float
    tau_s: float
    regime: str
    protocol: str
    lengths: list
    truth: ChannelParameters
    report: EstimateReport | None = None
    rel_diff: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    error: str | None = None

    def truth_values(self) -> dict:
        t = self.truth
        return {"infidelity": 1 - t.F, "one_minus_r": 1 - t.r, "tau": t.tau}

    def estimates(self) -> dict:
        if self.report is None:
            return {}
        rep = self.report
        out = {"infidelity": rep.infidelity}
        if rep.r is not None:
            out["one_minus_r"] = 1 - rep.r
        if rep.t is not None:
            out["tau"] = rep.tau
        return {k: v for k, v in out.items() if v is not None}

    def cis(self) -> dict:
        if self.report is None or not self.report.ci:
            return {}
        ci = self.report.ci
        m = {"infidelity": "infidelity", "one_minus_r": "r", "tau": "tau"}
        return {k: ci[v] for k, v in m.items() if v in ci}

    def to_json(self) -> dict:
        return {
            "lambda_s": self.lambda_s,
            "tau_s": self.tau_s,
            "regime": self.regime,
            "protocol": self.protocol,
            "lengths": list(self.lengths),
            "truth": self.truth.to_json(),
            "estimates": self.estimates(),
            "rel_diff": self.rel_diff,
            "flags": list(self.flags),
            "error": self.error,
            "report": None if self.report is None else self.report.to_json(),
        }


def relative_difference(x: float, x_s: float) -> float | None:
    """``|x - x_s| / x_s``; ``None`` when the truth is zero."""
    if x_s == 0:
        return None
    return abs(x - x_s) / abs(x_s)


def run_cell(
    lambda_s: float,
    tau_s: float,
    regime: str,
    protocol: str,
    cfg: CellConfig | None = None,
    rng: int | np.random.SeedSequence | None = 0,
    lengths: list | None = None,
) -> CellResult:
    """Simulate, estimate, fit and score one (lambda_s, tau_s) cell.

    Fit failures are recorded on the result instead of raised.
    """
    cfg = cfg or CellConfig()
    layout = build_layout(2)
    nm = regime_noise(regime, lambda_s, tau_s, readout_flip=cfg.readout_flip)
    lengths = list(lengths) if lengths is not None else sequence_lengths(regime, protocol, lambda_s, tau_s)
    truth = extract_parameters(total_error_channel(nm, layout))
    cell = CellResult(lambda_s, tau_s, regime, protocol, lengths, truth)
    seed = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
    try:
        if cfg.exact:
            curves = exact_twirled_decay(nm, protocol, lengths, layout)
            cell.report = analyze_curves(curves, protocol, regime, scale=cfg.scale)
        else:
            rcfg = RBProtocolConfig(
                protocol, lengths, n_sequences=cfg.n_sequences, n_shots=cfg.n_shots,
                rng_seed=int(seed.generate_state(1, np.uint64)[0]), noise=nm,
            )
            ds = run_protocol(rcfg)
            cell.report = analyze_curves(estimate_decays(ds), protocol, regime, scale=cfg.scale)
            if cfg.n_resamples:
                b = bootstrap(ds, report_pipeline(protocol, regime, scale=cfg.scale), cfg.n_resamples, np.random.default_rng(seed.spawn(1)[0]))
                cell.report.ci = b.sigma
                cell.report.bootstrap = {"n_resamples": cfg.n_resamples, "n_ok": b.n_ok, "n_failed": b.n_failed}
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        log.warning("cell (%g, %g) %s/%s failed: %s", lambda_s, tau_s, regime, protocol, exc)
        cell.error = str(exc)
        cell.flags.append("fit-failed")
        return cell
    truths = cell.truth_values()
    for q, est in cell.estimates().items():
        rd = relative_difference(est, truths[q])
        if rd is None:
            if "truth-zero" not in cell.flags:
                cell.flags.append("truth-zero")
            continue
        cell.rel_diff[q] = rd
    cell.flags.extend(cell.report.flags)
    return cell


@dataclass
class SweepSpec:
    regime: str
    protocols: list
    lambda_grid: list = field(default_factory=lambda: list(np.logspace(-4, -2, 7)))
    tau_grid: list = field(default_factory=lambda: list(np.logspace(-4, -2, 7)))
    cell: CellConfig = field(default_factory=CellConfig)
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if isinstance(self.protocols, str):
            self.protocols = [self.protocols]
        for p in self.protocols:
            if p not in ("comp-spam", "avg-mb", "lps"):
                raise ValueError(f"sweeps support comp-spam, avg-mb and lps, not {p!r}")
            if self.regime == "pop-transfer" and p != "avg-mb":
                raise ValueError("the population-transfer regime only supports avg-mb")
        self.lambda_grid = [float(x) for x in self.lambda_grid]
        self.tau_grid = [float(x) for x in self.tau_grid]
        for x in self.lambda_grid + self.tau_grid:
            if not 0 <= x <= 0.1:
                raise ValueError(f"grid value {x} outside [0, 0.1]")

    def to_json(self) -> dict:
        return {
            "regime": self.regime,
            "protocols": list(self.protocols),
            "lambda_grid": self.lambda_grid,
            "tau_grid": self.tau_grid,
            "cell": self.cell.to_json(),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SweepSpec":
        data = dict(data)
        cell = CellConfig(**data.pop("cell", {}))
        data.pop("schema", None)
        return cls(cell=cell, **data)


@dataclass
class SweepResult:
    spec: SweepSpec
    cells: list

    def rows(self) -> list[dict]:
        out = []
        for c in self.cells:
            truths, ests, cis = c.truth_values(), c.estimates(), c.cis()
            for q in REL_QUANTITIES:
                if q not in ests:
                    continue
                rd = c.rel_diff.get(q)
                out.append({
                    "regime": c.regime,
                    "protocol": c.protocol,
                    "lambda_s": c.lambda_s,
                    "tau_s": c.tau_s,
                    "quantity": q,
                    "truth": truths[q],
                    "estimate": ests[q],
                    "ci": cis.get(q),
                    "rel_diff": rd,
                    "rel_diff_clipped": None if rd is None else min(rd, 1.0),
                })
        return out

    def summary(self) -> dict:
        """Max and median raw relative difference per protocol and quantity."""
        out: dict = {}
        for row in self.rows():
            if row["rel_diff"] is None:
                continue
            out.setdefault(row["protocol"], {}).setdefault(row["quantity"], []).append(row["rel_diff"])
        stats = {
            p: {q: {"max": float(np.max(v)), "median": float(np.median(v)), "n": len(v)} for q, v in qs.items()}
            for p, qs in out.items()
        }
        failed = [(c.protocol, c.lambda_s, c.tau_s) for c in self.cells if c.error]
        return {"regime": self.spec.regime, "stats": stats, "n_cells": len(self.cells), "failed_cells": failed}

    def write_csv(self, path, fmt: str = "{:.12g}"):
        with open(path, "w", newline="") as fh:
            write_rows(fh, self.rows(), fmt)


def write_rows(fh, rows, fmt: str = "{:.12g}"):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow(["" if row[c] is None else (fmt.format(row[c]) if isinstance(row[c], float) else row[c]) for c in CSV_COLUMNS])


def heatmap_sweep(spec: SweepSpec, workers: int = 1) -> SweepResult:
    """Run every (lambda_s, tau_s, protocol) cell with seeds derived from the spec seed."""
    tasks = []
    for i, lam in enumerate(spec.lambda_grid):
        for j, tau in enumerate(spec.tau_grid):
            for k, proto in enumerate(spec.protocols):
                ss = np.random.SeedSequence(spec.seed, spawn_key=(i, j, k))
                tasks.append((lam, tau, proto, ss))

    def job(task):
        lam, tau, proto, ss = task
        return run_cell(lam, tau, spec.regime, proto, spec.cell, ss)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            cells = list(pool.map(job, tasks))
    else:
        cells = [job(t) for t in tasks]
    return SweepResult(spec, cells)


@dataclass
class SpamAudit:
    rows: list
    max_deviation: dict
    constant: float

    def bounded(self, c_max: float = 10.0) -> bool:
        return self.constant <= c_max

    def to_json(self) -> dict:
        return {
            "rows": self.rows,
            "max_deviation": [{"delta_rho": a, "delta_pi": b, "max_deviation": v} for (a, b), v in self.max_deviation.items()],
            "constant": self.constant,
        }


def spam_survival(nm: NoiseModel, lengths, delta_rho: float = 0.0, delta_pi: float = 0.0) -> np.ndarray:
    """Exact comp-spam survival with depolarized preparation and readout flips.

    The prepared state is ``(1 - delta_rho)|0><0| + delta_rho I_C / d_C`` and
    each qubit's readout flips with probability ``delta_pi``.
    """
    layout = build_layout(2)
    bar = twirled_noise(nm, layout).superoperator
    ref = "0" * layout.n_qubits
    rho = (1 - delta_rho) * layout.basis_state(ref).matrix
    rho[layout.comp_indices, layout.comp_indices] += delta_rho / layout.d_C
    mm = readout_model(replace(nm, readout_flip=delta_pi), layout, "computational-only")
    resp = mm.diagonal_response()[mm.labels.index(ref)]
    out = []
    for ell in lengths:
        v = matrix_power_by_squaring(bar, int(ell)) @ vec(rho)
        pops = np.real(np.diag(unvec(v)))
        out.append(float(resp @ pops))
    return np.array(out)


def spam_perturbation_audit(nm: NoiseModel, delta_rho=(0.0,), delta_pi=(1e-3,), lengths=(1, 2, 4, 8, 16, 32)) -> SpamAudit:
    """Exact ``|p_SPAM(ell) - p(ell)|`` over a grid of SPAM magnitudes.

    ``constant`` is the smallest ``c`` with every deviation at most
    ``c (delta_rho + delta_pi)``.
    """
    for x in list(delta_rho) + list(delta_pi):
        if not 0 <= x <= 1e-2:
            raise ValueError("SPAM magnitudes must lie in [0, 1e-2]")
    base = spam_survival(nm, lengths)
    rows, maxdev, c = [], {}, 0.0
    for dr in delta_rho:
        for dp in delta_pi:
            p = spam_survival(nm, lengths, dr, dp)
            dev = np.abs(p - base)
            for ell, a, b, d in zip(lengths, base, p, dev):
                rows.append({"delta_rho": dr, "delta_pi": dp, "length": int(ell), "p_ideal": float(a), "p_spam": float(b), "deviation": float(d)})
            maxdev[(dr, dp)] = float(dev.max())
            if dr + dp > 0:
                c = max(c, float(dev.max()) / (dr + dp))
    return SpamAudit(rows, maxdev, c)


def gateset_audit(gateset) -> dict:
    """Leaked-action histograms for both qubits and their TVD statistics.

    ``gateset`` is a built-in name, a JSON path or a :class:`GateSet`.
    """
    gs = get_gateset(gateset) if isinstance(gateset, (str, bytes)) or hasattr(gateset, "__fspath__") else gateset
    hists = [leaked_action_histogram(gs, q) for q in (0, 1)]
    uniform = np.full(len(hists[0]), 1.0 / len(hists[0]))
    return {
        "gateset": gs.name,
        "n_classes": len(uniform),
        "histograms": {f"qubit{q}": h.tolist() for q, h in enumerate(hists)},
        "tvd_uniform": {f"qubit{q}": total_variation(h, uniform) for q, h in enumerate(hists)},
        "tvd_between": total_variation(hists[0], hists[1]),
    }
