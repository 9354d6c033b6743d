import json

import numpy as np
import pytest

from echosim.levels import (AtomClass, Distribution, LevelModelError,
                            LevelSystem, build_default_system, class_detunings,
                            class_level_shifts, transition_frequency)


def test_default_material_constants(ls):
    assert ls.t2_opt_s == pytest.approx(150e-6)
    assert ls.t1_opt_s == pytest.approx(160e-6)
    assert ls.t1_spin_s == pytest.approx(100.0)


def test_default_input_echo_offset(ls):
    assert ls.input_echo_offset_hz == pytest.approx(14.8e6)
    assert ls.splitting_hz(2, 3) == pytest.approx(10.2e6)
    assert ls.splitting_hz(4, 5) == pytest.approx(4.6e6)


def test_branching_columns_normalized(ls):
    assert np.allclose(ls.branching.sum(axis=0), 1.0)


def test_transition_frequency_same_level(ls):
    assert transition_frequency(ls, 2, 2) == 0.0


def test_transition_frequency_antisymmetric(ls):
    for i in range(1, 7):
        for j in range(1, 7):
            assert transition_frequency(ls, i, j) == -transition_frequency(ls, j, i)


def test_echo_offset_from_input(ls):
    w25 = transition_frequency(ls, 2, 5)
    assert transition_frequency(ls, 3, 4) == pytest.approx(w25 - 14.8e6)


def test_transition_frequency_range_check(ls):
    with pytest.raises(LevelModelError):
        transition_frequency(ls, 0, 5)
    with pytest.raises(LevelModelError):
        transition_frequency(ls, 1, 7)


def test_class_detunings_zero_class(ls):
    det = class_detunings(ls, AtomClass(0.0, 0.0, 0.0, 1.0))
    assert all(v == 0.0 for v in det.values())


def test_class_detunings_correlation_rule(ls):
    c = AtomClass(delta_opt=1e3, delta_g=2e3, delta_e=3e3, weight=1.0)
    det = class_detunings(ls, c)
    assert det[(2, 5)] == pytest.approx(1e3)
    assert det[(3, 5)] == pytest.approx(1e3 - 2e3)
    assert det[(2, 4)] == pytest.approx(1e3 - 3e3)
    # direct arithmetic: delta - dg - de = 1 - 2 - 3 = -4 kHz
    assert det[(3, 4)] == pytest.approx(-4e3)
    assert det[(2, 3)] == pytest.approx(2e3)


def test_closure_identity_every_class(ls):
    rng = np.random.default_rng(3)
    for _ in range(50):
        c = AtomClass(*rng.normal(0, 1e5, 3), weight=1.0)
        det = class_detunings(ls, c)
        closure = det[(2, 5)] - det[(3, 5)] - det[(2, 4)] + det[(3, 4)]
        assert closure == pytest.approx(0.0, abs=1e-9)


def test_level_shifts_gauge(ls):
    c = AtomClass(5e3, -2e3, 7e3, 1.0)
    shifts = class_level_shifts(ls, c)
    assert shifts[0] == 0.0 and shifts[1] == 0.0
    det = class_detunings(ls, c)
    for (i, j), v in det.items():
        assert v == pytest.approx(shifts[j - 1] - shifts[i - 1])


def test_invalid_branching_rejected():
    bad = np.full((3, 3), 0.2)
    with pytest.raises(LevelModelError):
        build_default_system(branching=bad)


def test_lindblad_constraint_rejected():
    with pytest.raises(LevelModelError):
        build_default_system(t1_opt_s=160e-6, t2_opt_s=600e-6)


def test_dipole_normalization_rejected():
    d = [[0.0, 0.5, 0.1], [0.5, 0.5, 0.1], [0.5, 0.5, 0.1]]
    with pytest.raises(LevelModelError):
        build_default_system(dipole=d)


def test_sum_rule_validates_on_defaults_only():
    # custom splittings that break the 14.8 MHz sum are allowed when the
    # caller declares the matching offset
    ls2 = build_default_system(ground_splittings_hz=(17.3e6, 9e6),
                               excited_splittings_hz=(5e6, 4.8e6),
                               input_echo_offset_hz=14e6)
    assert ls2.input_echo_offset_hz == pytest.approx(14e6)
    with pytest.raises(LevelModelError):
        build_default_system(ground_splittings_hz=(17.3e6, 9e6))


def test_json_roundtrip(tmp_path, ls):
    path = tmp_path / "levels.json"
    ls.save(path)
    loaded = LevelSystem.load(path)
    assert loaded == ls
    doc = json.loads(path.read_text())
    assert doc["t1_opt_s"] == pytest.approx(160e-6)
    assert len(doc["ground_offsets_hz"]) == 3


def test_distribution_validation():
    with pytest.raises(LevelModelError):
        Distribution(shape="triangle")
    with pytest.raises(LevelModelError):
        Distribution(width_hz=-1.0)
    assert Distribution(width_hz=0.0).is_point
    with pytest.raises(LevelModelError):
        Distribution(shape="tabulated", nodes_hz=(1.0,), weights=())


def test_dipole_amplitude_lookup(ls):
    assert ls.dipole_amplitude(2, 5) == 1.0
    assert ls.dipole_amplitude(5, 2) == 1.0
    assert ls.dipole_amplitude(1, 4) == 0.0
    assert ls.dipole_amplitude(2, 3) == 0.0  # same manifold does not radiate
