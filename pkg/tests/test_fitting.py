import numpy as np
import pytest

from leakrb.fitting import (
    analyze_curves,
    analyze_dataset,
    bootstrap,
    drop_longest,
    fit_comp_dominant,
    fit_curves,
    fit_double_exponential,
    fit_exponential,
    fit_linear,
    guard_truncation,
    max_length,
    report_pipeline,
    required_curves,
)
from leakrb.hilbert import build_layout
from leakrb.noise import NoiseModel
from leakrb.simulate import DecayCurve, RBProtocolConfig, exact_twirled_decay, run_protocol


def curve(name, ell, vals, err=None):
    ell = np.asarray(ell)
    return DecayCurve(name, ell, np.asarray(vals, float), np.zeros(len(ell)) if err is None else err)


def no_seepage_comp(lam, tau, ell):
    r, t = 1 - lam - tau, 1 - tau
    return 0.75 * r ** np.asarray(ell) + 0.25 * t ** np.asarray(ell)


def test_linear_exact():
    ell = np.arange(1, 41)
    res = fit_linear(curve("p_comp", ell, 1 - ell * (0.75 * 0.004 + 0.001)))
    assert res.params["slope"] == pytest.approx(-0.004, abs=1e-12)
    rep = analyze_curves([curve("p_comp", ell, 1 - ell * 0.004)], "comp-spam", "short")
    assert rep.infidelity == pytest.approx(4e-3, abs=1e-12)
    assert rep.lam is None and rep.tau is None


def test_linear_flat():
    ell = np.arange(1, 11)
    res = fit_linear(curve("p_comp", ell, np.ones(10)))
    assert res.params["slope"] == pytest.approx(0, abs=1e-14)


def test_linear_flags():
    ell = np.arange(1, 101)
    assert "short-guard" in fit_linear(curve("p_comp", ell, 1 - 0.01 * ell)).flags
    err = np.full(100, 1e-4)
    assert "increasing" in fit_linear(curve("p_comp", ell, 0.5 + 1e-3 * ell, err)).flags


def test_ic_slope_from_exact_oracle():
    layout = build_layout(2)
    ell = [1, 9, 17, 24, 32, 40]
    curves = exact_twirled_decay(NoiseModel(1e-3, 1e-3), "avg-mb", ell, layout)
    rep = analyze_curves(curves, "avg-mb", "short")
    # a straight line through t^ell over ell <= 40 underestimates tau at second order
    assert rep.tau == pytest.approx(1e-3, rel=5e-2)
    lin = fit_linear(curve("p_IC", [1, 2, 3, 4], 1 - 1e-3 * np.arange(1, 5)))
    assert -lin.params["slope"] == pytest.approx(1e-3, abs=1e-9)


def test_exponential_with_floor():
    ell = np.array([1, 3, 10, 30, 100, 300])
    res = fit_exponential(curve("p_avg", ell, 0.75 * 0.99**ell + 0.25), floor=0.25)
    assert res.params["p"] == pytest.approx(0.99, abs=1e-8)
    res = fit_exponential(curve("p_comp", ell, 0.75 * 0.99**ell + 0.25), floor="free")
    assert res.params["p"] == pytest.approx(0.99, abs=1e-8)
    assert res.params["B"] == pytest.approx(0.25, abs=1e-7)


def test_retention_exponential():
    ell = np.array([1, 4, 16, 63, 251, 1000])
    res = fit_exponential(curve("p_retention", ell, 0.999**ell), floor=0.0, amplitude=1.0)
    assert res.params["p"] == pytest.approx(0.999, abs=1e-8)


def test_flat_exponential_flags_boundary():
    ell = np.array([1, 4, 16, 63])
    res = fit_exponential(curve("p_avg", ell, np.ones(4)), floor=0.25)
    assert "flat-data" in res.flags
    assert any(f.startswith("boundary") for f in res.flags)


def test_double_exponential_exact():
    ell = np.array([1, 4, 16, 63, 251, 1000])
    res = fit_double_exponential(curve("p_comp", ell, no_seepage_comp(4e-3, 1e-3, ell)))
    assert res.params["lambda"] == pytest.approx(4e-3, abs=1e-6)
    assert res.params["tau"] == pytest.approx(1e-3, abs=1e-6)
    rt = fit_double_exponential(curve("p_comp", ell, no_seepage_comp(4e-3, 1e-3, ell)), parameterization="r-t")
    assert rt.params["r"] == pytest.approx(0.995, abs=1e-6)
    assert rt.params["t"] == pytest.approx(0.999, abs=1e-6)


def test_double_exponential_single_exponential_limit():
    ell = np.array([1, 4, 16, 63, 251, 1000])
    res = fit_double_exponential(curve("p_comp", ell, no_seepage_comp(4e-3, 0.0, ell)))
    assert res.params["tau"] <= 1e-6
    assert res.params["lambda"] == pytest.approx(4e-3, abs=1e-6)


def test_double_exponential_needs_four_lengths():
    with pytest.raises(ValueError):
        fit_double_exponential(curve("p_comp", [1, 2, 3], [1, 0.99, 0.98]))


def test_comp_dominant_exact():
    ell = np.array([1, 3, 6, 16, 40, 100])
    lam, tau = 1e-2, 1e-3
    vals = 0.75 * (1 - lam - ell * tau) * (1 - lam) ** (ell - 1) + (1 - ell * tau) / 4
    res = fit_comp_dominant(curve("p_comp", ell, vals))
    assert res.params["lambda"] == pytest.approx(lam, abs=1e-6)
    assert res.params["tau"] == pytest.approx(tau, abs=1e-6)


def test_comp_dominant_tau_zero_is_exponential():
    ell = np.array([1, 3, 6, 16, 40, 100])
    vals = 0.75 * 0.99**ell + 0.25
    res = fit_comp_dominant(curve("p_comp", ell, vals))
    assert res.params["tau"] < 1e-6
    assert res.params["lambda"] == pytest.approx(0.01, abs=1e-6)


def test_lps_ratio_reconstruction():
    ell = np.array([1, 4, 16, 63, 251, 1000])
    r, t = 0.99, 0.995
    curves = [
        curve("p_retention", ell, t**ell),
        curve("p_post", ell, 0.75 * (r / t) ** ell + 0.25),
    ]
    rep = analyze_curves(curves, "lps", "no-seepage")
    assert rep.r == pytest.approx(0.99, abs=1e-6)
    assert rep.t == pytest.approx(0.995, abs=1e-6)


def test_population_transfer_bounds():
    ell = np.array([1, 4, 16, 63, 251, 1000])
    rep = analyze_curves([curve("p_avg", ell, 0.75 * 0.99**ell + 0.25), curve("p_IC", ell, 0.999**ell)], "avg-mb", "pop-transfer")
    assert rep.F_bounds == pytest.approx((0.99, 0.9925), abs=1e-8)
    assert rep.midpoint_infidelity == pytest.approx(8.75e-3, abs=1e-8)
    assert rep.infidelity == pytest.approx(8.75e-3, abs=1e-8)


def test_required_curves_and_missing():
    assert set(required_curves("lps", "no-seepage")) == {"p_retention", "p_post"}
    with pytest.raises(ValueError):
        fit_curves([curve("p_avg", [1, 2, 3], [1, 0.99, 0.98])], "avg-mb", "short")


def test_exact_oracle_end_to_end_no_seepage():
    layout = build_layout(2)
    nm = NoiseModel(1e-3, 1e-3, seepage_enabled=False)
    ell = [1, 4, 16, 63, 251, 1000]
    for protocol in ("comp-spam", "avg-mb", "lps"):
        rep = analyze_curves(exact_twirled_decay(nm, protocol, ell, layout), protocol, "no-seepage")
        from leakrb.noise import total_error_channel
        from leakrb.twirl import extract_parameters

        truth = 1 - extract_parameters(total_error_channel(nm, layout)).F
        assert rep.infidelity == pytest.approx(truth, rel=1e-3), protocol


def test_truncation_rules():
    ell = np.array([1, 10, 100, 1000])
    c = [curve("p_IC", ell, 1 - 1e-3 * ell), curve("p_avg", ell, 1 - 1e-3 * ell)]
    assert list(drop_longest(1)(c)[0].lengths) == [1, 10, 100]
    assert list(max_length(100)(c)[1].lengths) == [1, 10, 100]
    kept = guard_truncation("comp-dominant", 0.1)(c)
    assert kept[0].lengths.max() == 100


def _small_dataset(noise, seed=0, protocol="avg-mb", n_sequences=10, gadget=None):
    return run_protocol(RBProtocolConfig(protocol, [1, 5, 10, 20], n_sequences=n_sequences, n_shots=100, rng_seed=seed, noise=noise, gadget=gadget))


def test_bootstrap_zero_noise():
    ds = _small_dataset(NoiseModel(readout_flip=0.0))
    b = bootstrap(ds, report_pipeline("avg-mb", "short"), 100, 0)
    assert b.n_failed == 0
    assert b.sigma["infidelity"] < 1e-12


def test_bootstrap_needs_hundred():
    ds = _small_dataset(NoiseModel(readout_flip=0.0))
    with pytest.raises(ValueError):
        bootstrap(ds, report_pipeline("avg-mb", "short"), 50)


def test_bootstrap_deterministic():
    ds = _small_dataset(NoiseModel(2e-3, 2e-3))
    a = bootstrap(ds, report_pipeline("avg-mb", "short"), 100, 7)
    b = bootstrap(ds, report_pipeline("avg-mb", "short"), 100, 7)
    assert a.sigma == b.sigma


def test_bootstrap_sqrt_n_scaling():
    nm = NoiseModel(2e-3, 2e-3)
    pipe = report_pipeline("avg-mb", "short")
    small = [bootstrap(_small_dataset(nm, s, n_sequences=20), pipe, 100, s).sigma["tau"] for s in range(4)]
    large = [bootstrap(_small_dataset(nm, s + 10, n_sequences=80), pipe, 100, s).sigma["tau"] for s in range(4)]
    ratio = np.mean(small) / np.mean(large)
    # quadrupling the sequences halves the CI
    assert ratio == pytest.approx(2.0, rel=0.2)


def test_analyze_dataset_with_ci():
    ds = _small_dataset(NoiseModel(2e-3, 1e-3))
    rep = analyze_dataset(ds, "short", n_resamples=100, rng=0)
    assert rep.protocol == "avg-mb"
    assert rep.ci["infidelity"] > 0
    assert rep.bootstrap["n_ok"] == 100


def test_report_json_has_quantities():
    ell = np.arange(1, 11)
    rep = analyze_curves([curve("p_comp", ell, 1 - 0.002 * ell)], "comp-spam", "short")
    out = rep.to_json()
    assert out["protocol"] == "comp-spam"
    assert out["estimates"]["infidelity"] == pytest.approx(2e-3)
