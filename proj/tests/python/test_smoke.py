import math

import numpy as np
import pytest

import ionshuttle as ish


def test_filter_inverse_round_trip():
    spec = ish.default_filter()
    assert spec.dc_gain() == pytest.approx(1.0, rel=1e-10)
    target = np.sin(np.linspace(0, 3, 160)) + 0.2
    source = ish.precompensate(spec, list(target))
    out = ish.apply_forward(spec, source, initial=target[0])
    assert np.max(np.abs(np.array(out) - target)) < 1e-10


def test_synthesize_default_config():
    r = ish.synthesize()
    d = r["diagnostics"]
    assert d["max_position_error"] < 1e-6
    assert d["slew_violations"] == 0
    assert r["forward_source"].shape == r["forward_electrode"].shape
    assert r["forward_source"].shape[1] == 13


def test_unknown_config_key_is_rejected():
    with pytest.raises(ValueError):
        ish.synthesize({"trajectory": {"lenght": 1.0}})


def test_ramsey_pipeline():
    lo = ish.simulate_ramsey(0.999994, 2, 0.959, 0.978, seed=1)
    hi = ish.simulate_ramsey(0.999994, 4000, 0.964, 0.985, seed=2)
    assert lo.trials == [100] * 19
    fit = ish.fit_ramsey(lo, 0.959, 0.978)
    assert 0.0 <= fit.amplitude <= fit.offset <= 1.0 - fit.amplitude + 1e-12
    clo = ish.profile_likelihood(lo, 0.959, 0.978, points=501)
    chi = ish.profile_likelihood(hi, 0.964, 0.985, points=501)
    f = ish.fidelity_likelihood(clo, chi, 2, 4000)
    a, b = f.interval
    assert a < f.mode < b
    assert abs(f.mode - 0.999994) < 5e-5


def test_closed_forms():
    fa, sa = ish.adjust_for_failures(0.999994, 68, 2, 4000, 6.5e-6)
    assert sa / 6.5e-6 == pytest.approx(1.0173, abs=1e-4)
    assert ish.static_decay_amplitude(4.0, 69.44e-3) == pytest.approx(0.5 * math.exp(-4 * 69.44e-3**2))
    assert ish.phase_width_from_fidelity(1.0) == 0.0
    assert ish.bias_correct(0.9, 0.8, 1.0, 1.0) == pytest.approx((0.9, 0.8))
    with pytest.raises(ArithmeticError):
        ish.bias_correct(0.9, 0.8, 0.5, 1.0)


def test_tracking_fit():
    fd = 23.5 / 4000
    out = ish.simulate_and_fit_tracking(2e-3, fd + 0.113, fd, 4000, [0, 100, 200, 300], seed=3)
    lo, hi = out["fidelity_interval"]
    assert lo <= out["fidelity"] <= hi
    assert out["slope"] == pytest.approx(0.113, rel=0.2)
