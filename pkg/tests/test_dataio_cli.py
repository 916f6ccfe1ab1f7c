import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from leakrb.cli import main
from leakrb.dataio import (
    AnalysisPlan,
    SchemaError,
    analyze,
    canonical_dumps,
    dataset_to_json,
    export,
    ingest,
    round_sig,
    validate,
    PLAN_SCHEMA_ID,
)
from leakrb.fitting import analyze_dataset
from leakrb.noise import NoiseModel
from leakrb.simulate import RBProtocolConfig, run_protocol


def minimal():
    return {
        "schema": "leakrb.dataset/v1",
        "metadata": {"d_C": 4, "protocol": "comp-spam"},
        "circuits": [{"length": 1, "sequence_id": 0, "accepted": "00", "counts": {"00": 98, "01": 2}}],
    }


@pytest.fixture(scope="module")
def gadget_ds():
    cfg = RBProtocolConfig("avg-mb", [1, 4, 15, 60], n_sequences=6, n_shots=50, rng_seed=3, noise=NoiseModel(2e-3, 1e-3), gadget=True)
    return run_protocol(cfg)


def test_minimal_dataset():
    ds = ingest(minimal())
    assert len(ds.circuits) == 1
    assert ds.to_rb_dataset().protocol == "comp-spam"


def test_round_trip_byte_identical(tmp_path, gadget_ds):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    export(gadget_ds, a, {"note": "x"})
    export(ingest(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_unknown_fields_preserved(tmp_path):
    data = minimal()
    data["vendor"] = {"machine": "H9"}
    data["circuits"][0]["label"] = "c0"
    out = dataset_to_json(ingest(data))
    assert out["vendor"] == {"machine": "H9"}
    assert out["circuits"][0]["label"] == "c0"


@pytest.mark.parametrize(
    "mutate, needle",
    [
        (lambda d: d["metadata"].pop("d_C"), "d_C"),
        (lambda d: d["circuits"][0].update(length=0), "circuits/0/length"),
        (lambda d: d["circuits"][0].update(shots=50), "declared shots"),
        (lambda d: d["circuits"][0].update(gadget_counts={"00|00": 1}), "marginal"),
    ],
)
def test_schema_errors(mutate, needle):
    data = minimal()
    mutate(data)
    with pytest.raises(SchemaError) as exc:
        ingest(data)
    assert needle in str(exc.value)


def test_invalid_json_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"a": 1,,}')
    with pytest.raises(SchemaError, match="line 1 column"):
        ingest(p)


def test_round_sig():
    assert round_sig(1.23456789012345678) == 1.23456789012
    assert round_sig(float("nan")) is None
    assert canonical_dumps({"b": 1, "a": np.float64(0.5)}).startswith('{\n  "a": 0.5')


def test_plan_schema():
    validate(AnalysisPlan("short").to_json(), PLAN_SCHEMA_ID)
    with pytest.raises(SchemaError):
        AnalysisPlan.from_json({"schema": PLAN_SCHEMA_ID, "regime": "short", "colour": "red"})
    with pytest.raises(SchemaError):
        AnalysisPlan.from_json({"schema": PLAN_SCHEMA_ID, "regime": "sometimes"})


def test_plan_check_needs_gadget():
    ds = ingest(minimal())
    with pytest.raises(ValueError, match="gadget"):
        AnalysisPlan("short", "lps", postselect=True).check(ds)
    with pytest.raises(ValueError, match="postselect"):
        AnalysisPlan("short", "lps").check(ds)


def test_closed_loop_analysis_matches_in_process(tmp_path, gadget_ds):
    path = tmp_path / "d.json"
    export(gadget_ds, path)
    plan = AnalysisPlan("comp-dominant", "avg-mb", retention_for_ic=True, n_resamples=100, seed=2)
    a = analyze(ingest(path), plan)
    b = analyze_dataset(gadget_ds, "comp-dominant", "avg-mb", n_resamples=100, rng=2, retention_for_ic=True)
    assert a.quantities() == b.quantities()
    assert a.ci == b.ci


def test_postselected_plan(gadget_ds):
    rep = analyze(gadget_ds, AnalysisPlan("comp-dominant", "lps", postselect=True, n_resamples=0))
    assert rep.protocol == "lps"
    assert rep.infidelity > 0


def test_naive_plan_misses_leakage():
    from leakrb.noise import full_leak_assignment
    from leakrb.hilbert import build_layout

    nm = NoiseModel(0.0, 1e-3, readout_flip=0.0, leak_readout_assignment=full_leak_assignment(build_layout(2)))
    ds = run_protocol(RBProtocolConfig("naive", [1, 9, 17, 24, 32, 40], n_sequences=20, n_shots=200, noise=nm))
    rep = analyze(ds, AnalysisPlan("short", n_resamples=0))
    assert rep.infidelity < 2e-4


# -- command line -----------------------------------------------------------------


def run_cli(tmp_path, *args):
    return main([str(a) for a in args])


def test_cli_simulate_and_analyze(tmp_path, capsys):
    data = tmp_path / "d.json"
    rc = run_cli(tmp_path, "simulate", "--protocol", "comp-spam", "--regime", "no-seepage", "--lambda", "1e-3", "--tau", "1e-3",
                 "--auto-lengths", "--seed", "7", "--sequences", "5", "--shots", "50", "--out", data)
    assert rc == 0 and data.exists()
    assert ingest(data).metadata["regime"] == "no-seepage"
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps(AnalysisPlan("no-seepage", n_resamples=0).to_json()))
    out = tmp_path / "r.json"
    assert run_cli(tmp_path, "analyze", "--data", data, "--plan", plan, "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["schema"] == "leakrb.report/v1"
    assert "config_hash" in rep["run"]


def test_cli_simulate_deterministic(tmp_path):
    outs = []
    for name in ("a.json", "b.json"):
        p = tmp_path / name
        run_cli(tmp_path, "simulate", "--protocol", "lps", "--lambda", "1e-3", "--tau", "1e-3", "--lengths", "1,5",
                "--sequences", "3", "--shots", "20", "--seed", "1", "--out", p)
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_cli_fit(tmp_path):
    data = tmp_path / "d.json"
    run_cli(tmp_path, "simulate", "--protocol", "avg-mb", "--lambda", "2e-3", "--tau", "1e-3", "--lengths", "1,10,20,30",
            "--sequences", "5", "--shots", "50", "--out", data)
    out = tmp_path / "f.json"
    assert run_cli(tmp_path, "fit", "--in", data, "--model", "linear", "--estimator", "p_IC", "--out", out) == 0
    fit = json.loads(out.read_text())
    assert fit["fit"]["model"] == "linear"
    csv_path = tmp_path / "c.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["estimator", "length", "survival", "stderr"])
        w.writeheader()
        for ell in (1, 4, 16, 63, 251, 1000):
            w.writerow({"estimator": "p_retention", "length": ell, "survival": 0.999**ell, "stderr": 0.001})
    assert run_cli(tmp_path, "fit", "--in", csv_path, "--model", "retention-exponential", "--out", out) == 0
    assert json.loads(out.read_text())["fit"]["params"]["p"] == pytest.approx(0.999, abs=1e-8)


def test_cli_sweep_row_count(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({
        "schema": "leakrb.sweep-spec/v1", "regime": "short", "protocols": ["comp-spam"],
        "lambda_grid": [1e-3, 2e-3], "tau_grid": [1e-3, 2e-3, 3e-3],
        "cell": {"n_sequences": 3, "n_shots": 20}, "seed": 1,
    }))
    out_csv, out_json = tmp_path / "s.csv", tmp_path / "s.json"
    assert run_cli(tmp_path, "sweep", "--spec", spec, "--out-csv", out_csv, "--out-json", out_json) == 0
    rows = out_csv.read_text().splitlines()
    assert len(rows) == 1 + 2 * 3
    assert json.loads(out_json.read_text())["summary"]["n_cells"] == 6


def test_cli_audits(tmp_path):
    out = tmp_path / "a.json"
    assert run_cli(tmp_path, "audit", "--delta-pi", "1e-3,5e-4", "--out", out) == 0
    ratio = json.loads(out.read_text())["scaling"][0]["ratio"]
    assert ratio == pytest.approx(0.5, abs=0.01)
    out = tmp_path / "g.json"
    assert run_cli(tmp_path, "gateset-audit", "--gateset", "trapped-ion", "--out", out) == 0
    res = json.loads(out.read_text())
    assert len(res["histograms"]["qubit0"]) == 24
    assert res["tvd_uniform"]["qubit0"] < 0.15


def test_cli_exit_codes(tmp_path):
    assert run_cli(tmp_path, "frobnicate") == 2
    assert run_cli(tmp_path, "simulate", "--protocol", "lps", "--lambda", "1e-3", "--tau", "1.0", "--lengths", "1",
                   "--out", tmp_path / "x.json") == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": "leakrb.dataset/v1", "metadata": {}, "circuits": []}))
    plan = tmp_path / "p.json"
    plan.write_text(json.dumps(AnalysisPlan("short").to_json()))
    assert run_cli(tmp_path, "analyze", "--data", bad, "--plan", plan) == 2
    assert run_cli(tmp_path, "analyze", "--data", tmp_path / "missing.json", "--plan", plan) == 2


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "leakrb.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "simulate" in res.stdout
