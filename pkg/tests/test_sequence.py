import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from echosim.levels import build_default_system, transition_frequency
from echosim.sequence import (GaussianEnvelope, NoRephasingPathway,
                              SequenceError, SquareEnvelope, format_sequence,
                              four_level_echo_program, parse_sequence,
                              predict_pathway, two_level_echo_program)


def test_minimal_program(ls):
    tl = parse_sequence("pulse at=0us trans=w25 area=0.01pi env=gauss(fwhm=1us)",
                        system=ls)
    assert len(tl.pulses) == 1
    p = tl.pulses[0]
    assert p.transition == (2, 5)
    assert p.area == pytest.approx(0.01 * math.pi)
    assert isinstance(p.envelope, GaussianEnvelope)
    assert p.envelope.fwhm == pytest.approx(1e-6)


def test_canonical_four_level_program(ls):
    tl = parse_sequence(four_level_echo_program(15e-6, 7e-6), system=ls)
    assert tl.lets["tau_a"] == pytest.approx(15e-6)
    assert tl.lets["tau_b"] == pytest.approx(7e-6)
    assert [p.transition for p in tl.pulses] == [(2, 5), (3, 5), (2, 4)]
    assert tl.pulses[1].t0 == pytest.approx(15e-6)
    assert tl.pulses[2].t0 == pytest.approx(22e-6)
    assert len(tl.windows) == 2


def test_negative_time_rejected(ls):
    with pytest.raises(SequenceError, match="negative time"):
        parse_sequence("pulse at=-1us trans=w25 area=1pi env=gauss(fwhm=1us)",
                       system=ls)


def test_syntax_error_carries_location(ls):
    with pytest.raises(SequenceError) as err:
        parse_sequence("pulse at=0us trans=w25 area=oops env=gauss(fwhm=1us)",
                       system=ls)
    assert err.value.line == 1
    assert "area" in str(err.value)


def test_unknown_transition_name(ls):
    with pytest.raises(SequenceError, match="transition"):
        parse_sequence("pulse at=0us trans=w99 area=1pi env=gauss(fwhm=1us)",
                       system=ls)


def test_unknown_directive(ls):
    with pytest.raises(SequenceError, match="directive"):
        parse_sequence("pluse at=0us trans=w25 area=1pi env=gauss(fwhm=1us)",
                       system=ls)


def test_same_transition_overlap_rejected(ls):
    prog = ("pulse at=0us trans=w25 area=1pi env=gauss(fwhm=1us)\n"
            "pulse at=4us trans=w25 area=1pi env=gauss(fwhm=1us)\n")
    with pytest.raises(SequenceError, match="overlap"):
        parse_sequence(prog, system=ls)


def test_different_transition_overlap_allowed(ls):
    prog = ("pulse at=5us trans=w35 area=1pi env=gauss(fwhm=0.6us)\n"
            "pulse at=5us trans=w24 area=1pi env=gauss(fwhm=1us)\n")
    tl = parse_sequence(prog, system=ls)
    assert len(tl.pulses) == 2


def test_let_expressions(ls):
    prog = ("let tau_a = 10us\n"
            "let tau_b = 2*tau_a+5us\n"
            "pulse at=tau_b trans=w25 area=0.5pi env=square(dur=1us)\n"
            "observe from=2*tau_a+tau_b-8us to=2*tau_a+tau_b+8us rate=16MHz\n")
    tl = parse_sequence(prog, system=ls)
    assert tl.lets["tau_b"] == pytest.approx(25e-6)
    assert tl.pulses[0].t0 == pytest.approx(25e-6)
    assert tl.windows[0].t_start == pytest.approx(37e-6)


def test_comments_and_blank_lines(ls):
    prog = ("# a comment\n\n"
            "pulse at=0us trans=2-5 area=0.01pi env=gauss(fwhm=1us)  # trailing\n")
    tl = parse_sequence(prog, system=ls)
    assert len(tl.pulses) == 1


def test_pulse_optional_fields(ls):
    prog = ("pulse at=0us trans=w25 area=0.5pi env=square(dur=2us) "
            "phase=0.25pi detune=-100kHz k=(1,0,1)\n")
    p = parse_sequence(prog, system=ls).pulses[0]
    assert p.phase == pytest.approx(0.25 * math.pi)
    assert p.carrier_detuning_hz == pytest.approx(-100e3)
    assert np.linalg.norm(p.k_vector) == pytest.approx(1.0)
    assert p.k_vector[0] == pytest.approx(1 / math.sqrt(2))


def test_roundtrip_canonical_printer(ls):
    for text in (four_level_echo_program(15e-6, 7e-6),
                 two_level_echo_program(41e-6),
                 "pulse at=1us trans=w24 area=0.3pi env=square(dur=0.5us) phase=1pi\n"):
        tl = parse_sequence(text, system=ls)
        printed = format_sequence(tl)
        tl2 = parse_sequence(printed, system=ls)
        assert tl2.pulses == tl.pulses
        assert tl2.windows == tl.windows
        assert format_sequence(tl2) == printed


@settings(max_examples=25, deadline=None)
@given(tau_a=st.floats(5e-6, 40e-6), tau_b=st.floats(0.0, 40e-6))
def test_roundtrip_and_prediction_property(tau_a, tau_b):
    ls = build_default_system()
    tl = parse_sequence(four_level_echo_program(tau_a, tau_b), system=ls)
    assert parse_sequence(format_sequence(tl), system=ls).pulses == tl.pulses
    pred = predict_pathway(tl, ls)
    assert pred.echo_time == pytest.approx(2 * tau_a + tau_b, rel=1e-12, abs=1e-15)
    assert pred.echo_transition == (3, 4)


def test_gaussian_truncation_area_error():
    env = GaussianEnvelope(1e-6)
    t = np.linspace(-env.support_halfwidth, env.support_halfwidth, 400001)
    area = np.trapezoid(env.rabi(t, math.pi), t)
    assert abs(area - math.pi) / math.pi < 1e-5


def test_two_level_prediction(ls):
    tl = parse_sequence(two_level_echo_program(41e-6), system=ls)
    pred = predict_pathway(tl, ls)
    assert pred.echo_time == pytest.approx(82e-6)
    assert pred.echo_transition == (2, 5)
    assert pred.phase_conjugation_count == 1


def test_four_level_prediction_cases(ls):
    tl = parse_sequence(four_level_echo_program(15e-6, 0.0), system=ls)
    pred = predict_pathway(tl, ls)
    assert pred.echo_time == pytest.approx(30e-6)
    assert pred.echo_transition == (3, 4)
    assert pred.phase_conjugation_count == 1

    tl = parse_sequence(four_level_echo_program(10e-6, 7e-6), system=ls)
    assert predict_pathway(tl, ls).echo_time == pytest.approx(27e-6)


def test_echo_wavevector_composition(ls):
    theta = 10e-3
    prog = (
        "let tau_a = 15us\n"
        "pulse at=0s trans=w25 area=0.01pi env=gauss(fwhm=1us) k=(0,0,1)\n"
        f"pulse at=tau_a trans=w35 area=1pi env=gauss(fwhm=0.6us) "
        f"k=({math.sin(theta)},0,{math.cos(theta)})\n"
        "pulse at=2*tau_a trans=w24 area=1pi env=gauss(fwhm=1us) k=(0,1,1)\n"
    )
    tl = parse_sequence(prog, system=ls)
    pred = predict_pathway(tl, ls)
    k1 = np.array([math.sin(theta), 0, math.cos(theta)])
    k2 = np.array([0, 1, 1]) / math.sqrt(2)
    k_in = np.array([0, 0, 1.0])
    assert np.allclose(pred.echo_k, k1 + k2 - k_in, atol=1e-12)


def test_two_level_wavevector(ls):
    prog = ("let tau = 20us\n"
            "pulse at=0s trans=w25 area=0.01pi env=gauss(fwhm=1us) k=(0,0,1)\n"
            "pulse at=tau trans=w25 area=1pi env=gauss(fwhm=0.6us) k=(0.01,0,1)\n")
    tl = parse_sequence(prog, system=ls)
    pred = predict_pathway(tl, ls)
    k_pi = np.array([0.01, 0, 1.0]) / np.linalg.norm([0.01, 0, 1.0])
    assert np.allclose(pred.echo_k, 2 * k_pi - np.array([0, 0, 1.0]), atol=1e-12)


def test_no_pathway_for_pi_input(ls):
    prog = ("pulse at=0us trans=w25 area=1pi env=gauss(fwhm=1us)\n"
            "pulse at=15us trans=w35 area=1pi env=gauss(fwhm=0.6us)\n")
    with pytest.raises(NoRephasingPathway):
        predict_pathway(parse_sequence(prog, system=ls), ls)


def test_no_pathway_single_pulse(ls):
    tl = parse_sequence("pulse at=0us trans=w25 area=0.01pi env=gauss(fwhm=1us)",
                        system=ls)
    with pytest.raises(NoRephasingPathway):
        predict_pathway(tl, ls)


def test_echo_frequency_isolation(ls):
    """The echo carrier differs from every bright-pulse carrier by at least
    the smaller hyperfine splitting."""
    tl = parse_sequence(four_level_echo_program(15e-6, 5e-6), system=ls)
    pred = predict_pathway(tl, ls)
    f_echo = transition_frequency(ls, *pred.echo_transition)
    min_split = min(ls.splitting_hz(2, 3), ls.splitting_hz(4, 5))
    for p in tl.pulses:
        f_pulse = transition_frequency(ls, *p.transition)
        assert abs(f_echo - f_pulse) >= min_split - 1.0


def test_system_line_loads_level_file(tmp_path, ls):
    ls.save(tmp_path / "levels.json")
    prog = ("system levels.json\n"
            "pulse at=0us trans=w25 area=0.01pi env=gauss(fwhm=1us)\n")
    tl = parse_sequence(prog, base_dir=tmp_path)
    assert tl.system_file == "levels.json"
    assert tl.system == ls
    assert "system levels.json" in format_sequence(tl)


def test_timeline_hash_stable(ls):
    tl = parse_sequence(four_level_echo_program(15e-6, 7e-6), system=ls)
    tl2 = parse_sequence(four_level_echo_program(15e-6, 7e-6), system=ls)
    assert tl.hash() == tl2.hash()
    tl3 = parse_sequence(four_level_echo_program(15e-6, 8e-6), system=ls)
    assert tl.hash() != tl3.hash()


def test_area_factor_scaling(ls):
    tl = parse_sequence(four_level_echo_program(15e-6, 7e-6), system=ls)
    scaled = tl.with_area_factor(1.1)
    assert scaled.pulses[0].area == pytest.approx(tl.pulses[0].area * 1.1)
    assert scaled.pulses[0].t0 == tl.pulses[0].t0


def test_square_envelope_peak():
    env = SquareEnvelope(2e-6)
    assert env.peak_rabi(math.pi) == pytest.approx(math.pi / 2e-6)
    assert env.rabi(0.0, math.pi) == pytest.approx(math.pi / 2e-6)
    assert env.rabi(1.1e-6, math.pi) == 0.0
