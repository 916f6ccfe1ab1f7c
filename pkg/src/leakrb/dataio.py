"""JSON schemas, dataset ingest/export, analysis plans and atomic output.

Numbers are written with 12 significant digits and keys are sorted, so
re-serialising an ingested file is byte-stable.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import __version__
from .fitting import REGIMES, EstimateReport, analyze_dataset, drop_longest, guard_truncation, max_length
from .simulate import PROTOCOLS, CircuitRecord, RBDataset, RBProtocolConfig

DATASET_SCHEMA_ID = "leakrb.dataset/v1"
PLAN_SCHEMA_ID = "leakrb.plan/v1"
REPORT_SCHEMA_ID = "leakrb.report/v1"
SWEEP_SPEC_SCHEMA_ID = "leakrb.sweep-spec/v1"

_BITS = {"type": "string", "pattern": "^[01]+$"}
_COUNTS = {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}}

DATASET_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "metadata", "circuits"],
    "properties": {
        "schema": {"const": DATASET_SCHEMA_ID},
        "metadata": {
            "type": "object",
            "required": ["d_C", "protocol"],
            "properties": {
                "system": {"type": "string"},
                "date": {"type": "string"},
                "d_C": {"type": "integer", "enum": [2, 4, 8]},
                "protocol": {"enum": list(PROTOCOLS)},
                "reference": _BITS,
            },
        },
        "config": {"type": ["object", "null"]},
        "circuits": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["length", "sequence_id", "accepted", "counts"],
                "properties": {
                    "length": {"type": "integer", "minimum": 1},
                    "sequence_id": {"type": "integer", "minimum": 0},
                    "permutation": {"type": ["integer", "null"], "minimum": 0},
                    "accepted": _BITS,
                    "counts": _COUNTS,
                    "gadget_counts": {
                        "type": ["object", "null"],
                        "propertyNames": {"pattern": "^[^|]+\\|[01]+$"},
                        "additionalProperties": {"type": "integer", "minimum": 0},
                    },
                    "shots": {"type": "integer", "minimum": 1},
                },
            },
        },
    },
}

PLAN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "regime"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": PLAN_SCHEMA_ID},
        "protocol": {"enum": list(PROTOCOLS)},
        "regime": {"enum": list(REGIMES)},
        "retention_for_ic": {"type": "boolean"},
        "postselect": {"type": "boolean"},
        "truncate": {
            "oneOf": [
                {"type": "null"},
                {"type": "object", "required": ["drop_longest"], "properties": {"drop_longest": {"type": "integer", "minimum": 0}}, "additionalProperties": False},
                {"type": "object", "required": ["max_length"], "properties": {"max_length": {"type": "integer", "minimum": 1}}, "additionalProperties": False},
                {"type": "object", "required": ["guard"], "properties": {"guard": {"type": "number", "exclusiveMinimum": 0}}, "additionalProperties": False},
            ]
        },
        "n_resamples": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "scale": {"type": "boolean"},
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "protocol", "regime", "d_C", "estimates", "fits", "provenance"],
    "properties": {
        "schema": {"const": REPORT_SCHEMA_ID},
        "protocol": {"enum": list(PROTOCOLS)},
        "regime": {"enum": list(REGIMES)},
        "estimates": {"type": "object", "additionalProperties": {"type": "number"}},
        "ci": {"type": "object", "additionalProperties": {"type": "number"}},
        "fits": {"type": "object"},
        "flags": {"type": "array", "items": {"type": "string"}},
        "provenance": {"type": "object"},
        "run": {"type": "object", "required": ["tool", "version", "seed", "config_hash"]},
    },
}

SWEEP_SPEC_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "regime", "protocols"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": SWEEP_SPEC_SCHEMA_ID},
        "regime": {"enum": list(REGIMES)},
        "protocols": {"type": "array", "minItems": 1, "items": {"enum": ["comp-spam", "avg-mb", "lps"]}},
        "lambda_grid": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0, "maximum": 0.1}},
        "tau_grid": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0, "maximum": 0.1}},
        "seed": {"type": "integer", "minimum": 0},
        "cell": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_sequences": {"type": "integer", "minimum": 1},
                "n_shots": {"type": "integer", "minimum": 1},
                "exact": {"type": "boolean"},
                "n_resamples": {"type": "integer", "minimum": 0},
                "readout_flip": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                "scale": {"type": "boolean"},
            },
        },
    },
}

SCHEMAS = {
    DATASET_SCHEMA_ID: DATASET_SCHEMA,
    PLAN_SCHEMA_ID: PLAN_SCHEMA,
    REPORT_SCHEMA_ID: REPORT_SCHEMA,
    SWEEP_SPEC_SCHEMA_ID: SWEEP_SPEC_SCHEMA,
}


class SchemaError(ValueError):
    """Validation failure carrying one diagnostic line per problem."""

    def __init__(self, messages: list[str]):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


# -- serialisation helpers -------------------------------------------------------


def round_sig(obj, digits: int = 12):
    """Recursively round floats to ``digits`` significant digits."""
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return float(f"{x:.{digits}g}")
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): round_sig(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [round_sig(v, digits) for v in obj]
    return obj


def canonical_dumps(obj) -> str:
    return json.dumps(round_sig(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def atomic_write(path, text: str):
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        # mkstemp creates 0600; give the output the usual umask-based mode
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write(path, canonical_dumps(obj))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_dumps(obj).encode()).hexdigest()[:16]


def run_block(seed, config) -> dict:
    """Provenance block stamped into every output file."""
    return {"tool": "leakrb", "version": __version__, "seed": seed, "config_hash": config_hash(config)}


def _load(source) -> dict:
    if isinstance(source, dict):
        return source
    text = Path(source).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError([f"{source}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from exc


def validate(data: dict, schema_id: str):
    """Raise :class:`SchemaError` listing every violation with its field path."""
    v = Draft202012Validator(SCHEMAS[schema_id])
    errors = sorted(v.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            msgs.append(f"{where}: {e.message}")
        raise SchemaError(msgs)


# -- datasets --------------------------------------------------------------------


_CIRCUIT_KEYS = {"length", "sequence_id", "permutation", "accepted", "counts", "gadget_counts", "shots"}
_TOP_KEYS = {"schema", "metadata", "config", "circuits", "run"}


@dataclass
class ExternalRBDataset:
    """RB counts from any source, with unknown fields kept verbatim."""

    metadata: dict
    circuits: list
    config: dict | None = None
    extra: dict = field(default_factory=dict)
    circuit_extra: list = field(default_factory=list)
    run: dict | None = None

    @property
    def protocol(self) -> str:
        return self.metadata["protocol"]

    @property
    def d_C(self) -> int:
        return int(self.metadata["d_C"])

    @property
    def has_gadget(self) -> bool:
        return any(c.gadget_counts is not None for c in self.circuits)

    def to_rb_dataset(self) -> RBDataset:
        cfg = RBProtocolConfig.from_json(self.config) if self.config else None
        return RBDataset(cfg, list(self.circuits), d_C=self.d_C, protocol=self.protocol, reference=self.metadata.get("reference"))


def _check_counts(i: int, c: dict) -> list[str]:
    msgs = []
    total = sum(c["counts"].values())
    if "shots" in c and total != c["shots"]:
        msgs.append(f"circuits/{i}/counts: sum {total} differs from declared shots {c['shots']}")
    g = c.get("gadget_counts")
    if g is not None:
        marg: dict = {}
        for key, n in g.items():
            o = key.split("|")[0]
            marg[o] = marg.get(o, 0) + n
        if {k: v for k, v in marg.items() if v} != {k: v for k, v in c["counts"].items() if v}:
            msgs.append(f"circuits/{i}/gadget_counts: outcome marginal does not match counts")
    return msgs


def ingest(source) -> ExternalRBDataset:
    """Validate and load a dataset file (or already-parsed dict)."""
    data = _load(source)
    validate(data, DATASET_SCHEMA_ID)
    msgs = [m for i, c in enumerate(data["circuits"]) for m in _check_counts(i, c)]
    if msgs:
        raise SchemaError(msgs)
    circuits, extras = [], []
    for c in data["circuits"]:
        circuits.append(
            CircuitRecord(
                int(c["length"]), int(c["sequence_id"]), c.get("permutation"), c["accepted"],
                dict(c["counts"]), None if c.get("gadget_counts") is None else dict(c["gadget_counts"]),
            )
        )
        extras.append({k: v for k, v in c.items() if k not in _CIRCUIT_KEYS})
    extra = {k: v for k, v in data.items() if k not in _TOP_KEYS}
    return ExternalRBDataset(dict(data["metadata"]), circuits, data.get("config"), extra, extras, data.get("run"))


def dataset_to_json(ds, metadata: dict | None = None, run: dict | None = None) -> dict:
    """Dataset dict for an :class:`RBDataset` or :class:`ExternalRBDataset`."""
    if isinstance(ds, ExternalRBDataset):
        circuits, extras = ds.circuits, ds.circuit_extra or [{}] * len(ds.circuits)
        meta = dict(ds.metadata)
        config, extra, run = ds.config, ds.extra, run or ds.run
    else:
        circuits, extras = ds.records, [{}] * len(ds.records)
        cfg = ds.config
        meta = {"d_C": ds.d_C, "protocol": ds.protocol, "system": "leakrb-simulator"}
        if cfg is not None:
            meta["reference"] = cfg.reference
        config, extra = (None if cfg is None else cfg.to_json()), {}
    if metadata:
        meta.update(metadata)
    rows = []
    for c, x in zip(circuits, extras):
        row = {
            "length": c.length,
            "sequence_id": c.sequence_id,
            "permutation": c.permutation,
            "accepted": c.accepted,
            "counts": dict(c.counts),
        }
        if c.gadget_counts is not None:
            row["gadget_counts"] = dict(c.gadget_counts)
        row.update(x)
        rows.append(row)
    out = {"schema": DATASET_SCHEMA_ID, "metadata": meta, "circuits": rows}
    if config is not None:
        out["config"] = config
    if run is not None:
        out["run"] = run
    out.update(extra)
    return out


def export(ds, path, metadata: dict | None = None, run: dict | None = None):
    write_json(path, dataset_to_json(ds, metadata, run))


# -- analysis plans ----------------------------------------------------------------


@dataclass
class AnalysisPlan:
    """How to turn a dataset into an :class:`EstimateReport`.

    ``retention_for_ic`` uses the gadget retention curve in place of the
    summed-permutation ``p_IC``. ``postselect`` builds ``p_post`` from
    gadget-clean shots, which lets an lps analysis run on data taken with a
    different protocol. ``truncate`` is ``{"drop_longest": n}``,
    ``{"max_length": L}`` or ``{"guard": threshold}``.
    """

    regime: str
    protocol: str | None = None
    retention_for_ic: bool = False
    postselect: bool = False
    truncate: dict | None = None
    n_resamples: int = 200
    seed: int = 0
    scale: bool = False

    def to_json(self) -> dict:
        out = {"schema": PLAN_SCHEMA_ID}
        out.update({k: v for k, v in self.__dict__.items() if v is not None})
        return out

    @classmethod
    def from_json(cls, source) -> "AnalysisPlan":
        data = _load(source)
        validate(data, PLAN_SCHEMA_ID)
        data = {k: v for k, v in data.items() if k != "schema"}
        return cls(**data)

    def truncation_rule(self):
        if not self.truncate:
            return None
        if "drop_longest" in self.truncate:
            return drop_longest(int(self.truncate["drop_longest"]))
        if "max_length" in self.truncate:
            return max_length(int(self.truncate["max_length"]))
        return guard_truncation(self.regime, float(self.truncate["guard"]))

    def check(self, ds: ExternalRBDataset | RBDataset):
        """Raise ``ValueError`` when the dataset lacks what the plan needs."""
        protocol = self.protocol or ds.protocol
        has_gadget = any(c.gadget_counts is not None for c in (ds.circuits if isinstance(ds, ExternalRBDataset) else ds.records))
        problems = []
        if self.regime == "pop-transfer" and protocol != "avg-mb":
            problems.append("the population-transfer regime only supports avg-mb")
        if protocol == "lps" and ds.protocol != "lps" and not self.postselect:
            problems.append(f"an lps analysis of {ds.protocol} data needs postselect=true")
        if (self.postselect or self.retention_for_ic or protocol == "lps") and not has_gadget:
            problems.append("plan needs gadget counts but the dataset has none")
        if protocol == "avg-mb" and ds.protocol != "avg-mb":
            problems.append(f"an avg-mb analysis needs avg-mb data, got {ds.protocol}")
        if protocol in ("comp-spam", "naive") and ds.protocol != protocol:
            problems.append(f"a {protocol} analysis needs {protocol} data, got {ds.protocol}")
        if self.n_resamples and self.n_resamples < 100:
            problems.append("n_resamples must be 0 or at least 100")
        if problems:
            raise ValueError("; ".join(problems))


def analyze(ds: ExternalRBDataset | RBDataset, plan: AnalysisPlan) -> EstimateReport:
    """Curves, fits, report and bootstrap errors as the plan prescribes."""
    plan.check(ds)
    rb = ds.to_rb_dataset() if isinstance(ds, ExternalRBDataset) else ds
    return analyze_dataset(
        rb,
        plan.regime,
        plan.protocol or rb.protocol,
        n_resamples=plan.n_resamples,
        rng=plan.seed,
        retention_for_ic=plan.retention_for_ic,
        scale=plan.scale,
        truncate=plan.truncation_rule(),
        postselect=plan.postselect,
    )


def report_to_json(rep: EstimateReport, run: dict | None = None) -> dict:
    out = {"schema": REPORT_SCHEMA_ID}
    out.update(rep.to_json())
    if run is not None:
        out["run"] = run
    return out
