"""Property-based checks of the invariants the analysis relies on."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from leakrb.clifford import clifford_group
from leakrb.dataio import dataset_to_json, ingest
from leakrb.hilbert import build_layout, choi_min_eigenvalue, is_trace_preserving, matrix_power_by_squaring, random_unitary, unitary_to_channel
from leakrb.noise import NoiseModel, readout_model, total_error_channel
from leakrb.simulate import RBProtocolConfig, run_protocol
from leakrb.twirl import closed_form_cc_power, computational_block, depolarizing_block, extract_parameters, fidelity_bounds, twirl

rates = st.floats(min_value=0.0, max_value=0.05)
small = st.floats(min_value=0.0, max_value=0.1)
LAYOUT = build_layout(2)


@settings(max_examples=25, deadline=None)
@given(lam=rates, tau=rates, seep=st.booleans())
def test_total_channel_is_cptp(lam, tau, seep):
    s = total_error_channel(NoiseModel(lam, tau, seep), LAYOUT).superoperator
    assert is_trace_preserving(s)
    assert choi_min_eigenvalue(s) > -1e-9


@settings(max_examples=25, deadline=None)
@given(lam=rates, tau=rates)
def test_parameters_follow_rates(lam, tau):
    p = extract_parameters(total_error_channel(NoiseModel(lam, tau), LAYOUT))
    assert abs(p.r - (1 - lam - tau)) <= 5 * (lam + tau) ** 2 + 1e-12
    assert abs(p.t - (1 - tau)) <= 5 * (lam + tau) ** 2 + 1e-12
    assert p.r <= p.t + 1e-12


@settings(max_examples=20, deadline=None)
@given(r=st.floats(0.5, 1.0), dt=st.floats(0.0, 0.5), ell=st.integers(0, 128))
def test_closed_form_power(r, dt, ell):
    t = min(1.0, r + dt)
    blk = depolarizing_block(r, t, 4)
    assert np.max(np.abs(closed_form_cc_power(r, t, ell, 4) - matrix_power_by_squaring(blk, ell))) < 1e-12


@settings(max_examples=30, deadline=None)
@given(r=st.floats(0.0, 1.0), d=st.sampled_from([2, 4]))
def test_fidelity_bounds_ordered(r, d):
    lo, hi, flo, fhi = fidelity_bounds(r, d)
    assert lo <= hi + 1e-15 and flo <= fhi + 1e-15
    for t in np.linspace(r, 1.0, 5):
        F = (d - 1) / d * r + t / d
        assert lo - 1e-12 <= F <= hi + 1e-12


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_twirl_projects_to_depolarizing(seed):
    ch = unitary_to_channel(LAYOUT, random_unitary(9, np.random.default_rng(seed)))
    tw = twirl(ch)
    p = extract_parameters(tw)
    assert np.max(np.abs(computational_block(tw) - depolarizing_block(p.r, p.t, 4))) < 1e-10


@settings(max_examples=20, deadline=None)
@given(a=st.integers(0, 23), b=st.integers(0, 23), c=st.integers(0, 23))
def test_one_qubit_group_associative(a, b, c):
    g = clifford_group(1)
    assert g.multiply(g.multiply(a, b), c) == g.multiply(a, g.multiply(b, c))


@settings(max_examples=20, deadline=None)
@given(flip=st.floats(0.0, 0.5), kind=st.sampled_from(["computational-only", "leak-assigned", "leak-resolving"]))
def test_readout_povm_complete(flip, kind):
    mm = readout_model(NoiseModel(readout_flip=flip), LAYOUT, kind)
    total = sum(mm.element(lab).matrix for lab in mm.labels)
    assert np.allclose(total, np.eye(9))
    assert all(mm.element(lab).is_effect() for lab in mm.labels)


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), protocol=st.sampled_from(["comp-spam", "avg-mb", "lps"]))
def test_dataset_json_round_trip(seed, protocol):
    cfg = RBProtocolConfig(protocol, [1, 3], n_sequences=2, n_shots=10, rng_seed=seed, noise=NoiseModel(0.01, 0.01))
    ds = run_protocol(cfg)
    data = dataset_to_json(ds)
    assert dataset_to_json(ingest(data)) == data
    for rec in ds.records:
        assert rec.shots == 10
