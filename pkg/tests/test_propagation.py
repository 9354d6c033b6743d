import math

import numpy as np
import pytest

from echosim.propagation import (Medium, PropagationError, echo_field,
                                 efficiency, ideal_echo_gain, slice_echo_gain,
                                 transmit_weak_pulse)


def test_beer_lambert_half_absorption():
    m = Medium(alpha_l=math.log(2.0))
    out = transmit_weak_pulse(m, 0.0, 1.0)
    assert abs(out) ** 2 == pytest.approx(0.5, abs=1e-3)
    # exact closed form to rounding
    assert abs(out) == pytest.approx(math.exp(-0.5 * math.log(2.0)), rel=1e-12)


def test_beer_lambert_identity_and_gain():
    assert transmit_weak_pulse(Medium(alpha_l=0.0), 0.0, 1.0) == pytest.approx(1.0)
    inverted = Medium(alpha_l=0.2, s_input=-1.0)
    out = transmit_weak_pulse(inverted, 0.0, 1.0)
    assert abs(out) ** 2 == pytest.approx(math.exp(0.2), rel=1e-12)


def test_profile_lookup():
    m = Medium(alpha_l=1.0, profile_detuning_hz=(-1e5, 0.0, 1e5),
               profile=(0.5, 1.0, 0.5))
    assert m.profile_at(0.0) == 1.0
    assert m.profile_at(5e4) == pytest.approx(0.75)
    assert m.profile_at(2e5) == 0.0
    out = transmit_weak_pulse(m, np.array([0.0, 1e5]), np.array([1.0, 1.0]))
    assert abs(out[1]) == pytest.approx(math.exp(-0.25), rel=1e-12)


def test_echo_field_zero_cases():
    m = Medium(alpha_l=0.0)
    assert abs(echo_field(m, 1.0)) == 0.0
    m2 = Medium(alpha_l=0.5)
    assert abs(echo_field(m2, 0.0)) == 0.0


def test_perturbative_limit():
    m = Medium(alpha_l=0.01)
    gain = slice_echo_gain(m)
    assert gain == pytest.approx(0.01 / 2.0, rel=0.02)


def test_matches_closed_form_and_converges():
    m = Medium(alpha_l=math.log(2.0), n_slices=64)
    g64 = float(np.abs(echo_field(m, 1.0)))
    g128 = float(np.abs(echo_field(m, 1.0, n_slices=128)))
    assert abs(g128 - g64) / g128 < 5e-3
    assert g128 == pytest.approx(ideal_echo_gain(math.log(2.0)), rel=1e-3)


def test_monotone_in_optical_depth():
    gains = [slice_echo_gain(Medium(alpha_l=a), check_convergence=False)
             for a in np.linspace(0.0, 1.0, 11)]
    assert all(b > a for a, b in zip(gains, gains[1:]))


def test_time_dependent_source_shape_preserved():
    t = np.linspace(-2e-6, 2e-6, 101)
    src = np.exp(-(t / 1e-6) ** 2).astype(complex)
    m = Medium(alpha_l=0.4)
    out = echo_field(m, src)
    assert np.argmax(np.abs(out)) == np.argmax(np.abs(src))
    ratio = np.abs(out) / np.abs(src)
    assert np.allclose(ratio, ratio[0], rtol=1e-12)


def test_efficiency_record_mode(ls):
    from echosim.dynamics import RelaxationSpec
    from echosim.ensemble import EnsembleSpec, run_experiment
    from echosim.levels import DetuningModel, Distribution
    from echosim.sequence import (four_level_echo_program, parse_sequence,
                                  predict_pathway)
    spec = EnsembleSpec(model=DetuningModel(optical=Distribution("gaussian", 150e3)),
                        n_classes=65, sampling="grid",
                        grid_gauss_halfwidth_sigmas=4.0)
    tl = parse_sequence(four_level_echo_program(10e-6, 0.0), system=ls)
    rec = run_experiment(tl, ls, spec, RelaxationSpec.off())
    pred = predict_pathway(tl, ls)
    eta = efficiency(record=rec, prediction=pred)
    assert eta > 0


def test_efficiency_requires_echo(ls):
    from echosim.detection import EchoBelowFloor
    from echosim.dynamics import RelaxationSpec
    from echosim.ensemble import EnsembleSpec, run_experiment
    from echosim.levels import DetuningModel, Distribution
    from echosim.sequence import (four_level_echo_program, parse_sequence,
                                  predict_pathway)
    prog = four_level_echo_program(10e-6, 0.0)
    tl_no_input = parse_sequence(
        "\n".join(l for l in prog.splitlines() if "w25" not in l), system=ls)
    spec = EnsembleSpec(model=DetuningModel(optical=Distribution("gaussian", 150e3)),
                        n_classes=33, sampling="grid")
    rec = run_experiment(tl_no_input, ls, spec, RelaxationSpec.off())
    pred = predict_pathway(parse_sequence(prog, system=ls), ls)
    with pytest.raises((EchoBelowFloor, PropagationError)):
        efficiency(record=rec, prediction=pred, gate_halfwidth=3e-6)


def test_efficiency_one_d_mode():
    m = Medium(alpha_l=math.log(2.0))
    eta = efficiency(medium=m, rephasing_amplitude=0.8)
    assert eta == pytest.approx(0.8 * ideal_echo_gain(math.log(2.0)), rel=1e-3)


def test_medium_validation():
    with pytest.raises(ValueError):
        Medium(alpha_l=-0.1)
    with pytest.raises(ValueError):
        Medium(alpha_l=1.0, n_slices=4)
    with pytest.raises(ValueError):
        Medium(alpha_l=1.0, profile_detuning_hz=(0.0,), profile=(0.5,))
