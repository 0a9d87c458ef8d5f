"""Path loss, deployment geometry, shadow fading statistics, determinism."""

import math

import numpy as np
import pytest

from cfgnn.channel import (
    MORPHOLOGIES,
    Deployment,
    Morphology,
    RadioDefaults,
    generate_deployment,
    generate_fading,
    generate_sample_fading,
    load_overrides,
    make_scenario,
    path_loss_db,
)

BOLTZMANN = 1.380649e-23


def test_path_loss_at_one_metre_is_the_intercept():
    for morph in MORPHOLOGIES.values():
        assert path_loss_db(1.0, morph) == pytest.approx(morph.pl_intercept_db)


def test_path_loss_direct_value():
    morph = Morphology("test", radius_m=100.0, pl_exponent=3.5,
                       pl_intercept_db=30.0, shadow_sigma_db=0.0)
    assert path_loss_db(10.0, morph) == pytest.approx(65.0)


def test_path_loss_decade_slope():
    morph = Morphology("test", radius_m=100.0, pl_exponent=3.5,
                       pl_intercept_db=30.0, shadow_sigma_db=0.0)
    assert path_loss_db(100.0, morph) - path_loss_db(10.0, morph) == pytest.approx(35.0)
    rng = np.random.default_rng(0)
    for morph in MORPHOLOGIES.values():
        d = rng.uniform(1.0, 1000.0, size=20)
        slope = path_loss_db(10.0 * d, morph) - path_loss_db(d, morph)
        np.testing.assert_allclose(slope, 10.0 * morph.pl_exponent, rtol=1e-12)


def test_path_loss_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        path_loss_db(0.0, MORPHOLOGIES["urban"])
    with pytest.raises(ValueError):
        path_loss_db(np.array([1.0, -2.0]), MORPHOLOGIES["urban"])


def test_zero_shadow_zero_intercept_unit_distance_gives_beta_one():
    morph = Morphology("flat", radius_m=10.0, pl_exponent=2.0,
                       pl_intercept_db=0.0, shadow_sigma_db=0.0)
    cfg = make_scenario(1, 1, morph, min_distance_m=1.0)
    dep = Deployment(ap_positions=np.array([[0.0, 0.0]]),
                     ue_positions=np.array([[1.0, 0.0]]))
    beta = generate_fading(dep, cfg, np.random.default_rng(0))
    assert beta[0, 0] == pytest.approx(1.0)


def test_beta_decreases_with_distance_without_shadowing():
    morph = Morphology("flat", radius_m=100.0, pl_exponent=3.0,
                       pl_intercept_db=20.0, shadow_sigma_db=0.0)
    cfg = make_scenario(1, 4, morph, min_distance_m=1.0)
    dep = Deployment(ap_positions=np.array([[0.0, 0.0]]),
                     ue_positions=np.array([[2.0, 0.0], [5.0, 0.0],
                                            [20.0, 0.0], [90.0, 0.0]]))
    beta = generate_fading(dep, cfg, np.random.default_rng(0))[0]
    assert np.all(np.diff(beta) < 0)


def test_shadow_fading_empirical_mean():
    """10*log10(beta) + PL averages to 0 dB within 0.1 dB over 1e5 draws."""
    morph = MORPHOLOGIES["urban"]
    cfg = make_scenario(1, 1, morph)
    rng = np.random.default_rng(123)
    dep = Deployment(ap_positions=np.array([[0.0, 0.0]]),
                     ue_positions=np.array([[100.0, 0.0]]))
    pl = path_loss_db(100.0, morph)
    draws = np.empty(100_000)
    shadow = rng.standard_normal(draws.shape[0]) * morph.shadow_sigma_db
    betas = 10.0 ** (-(pl + shadow) / 10.0)
    residual = 10.0 * np.log10(betas) + pl
    assert abs(residual.mean()) < 0.1
    assert residual.std() == pytest.approx(morph.shadow_sigma_db, rel=0.02)


def test_deployment_positions_inside_disc():
    cfg = make_scenario(40, 25, "rural")
    rng = np.random.default_rng(7)
    for _ in range(5):
        dep = generate_deployment(cfg, rng)
        assert np.all(np.linalg.norm(dep.ap_positions, axis=1) <= cfg.morphology.radius_m)
        assert np.all(np.linalg.norm(dep.ue_positions, axis=1) <= cfg.morphology.radius_m)


def test_fading_deterministic_and_positive():
    cfg = make_scenario(6, 4, "suburban")
    a = generate_sample_fading(cfg, seed=99, index=3)
    b = generate_sample_fading(cfg, seed=99, index=3)
    np.testing.assert_array_equal(a, b)
    assert np.all(a > 0)
    c = generate_sample_fading(cfg, seed=99, index=4)
    assert not np.array_equal(a, c)


def test_min_distance_clamps_path_loss():
    morph = Morphology("flat", radius_m=100.0, pl_exponent=3.0,
                       pl_intercept_db=20.0, shadow_sigma_db=0.0)
    cfg = make_scenario(1, 1, morph, min_distance_m=5.0)
    dep = Deployment(ap_positions=np.array([[0.0, 0.0]]),
                     ue_positions=np.array([[0.0, 0.0]]))
    beta = generate_fading(dep, cfg, np.random.default_rng(0))
    expected = 10.0 ** (-path_loss_db(5.0, morph) / 10.0)
    assert beta[0, 0] == pytest.approx(expected)


def test_radio_defaults_noise_and_power_ratios():
    radio = RadioDefaults()
    expected_noise_mw = (BOLTZMANN * 290.0 * 20e6 * 10 ** (9.0 / 10.0)) * 1e3
    assert radio.noise_power_mw() == pytest.approx(expected_noise_mw)
    assert radio.rho_d() == pytest.approx(200.0 / expected_noise_mw)
    assert radio.rho_d() / radio.rho_u() == pytest.approx(2.0)


def test_make_scenario_defaults_and_validation():
    cfg = make_scenario(8, 3, "urban")
    assert cfg.tau == 3
    assert cfg.morphology.name == "urban"
    with pytest.raises(ValueError):
        make_scenario(8, 3, "desert")
    with pytest.raises(ValueError):
        make_scenario(0, 3, "urban")


def test_overrides_file_roundtrip(tmp_path):
    path = tmp_path / "radio.cfg"
    path.write_text(
        "# comment line\n"
        "urban.radius_m = 600\n"
        "bandwidth_hz = 10e6\n"
        "min_distance_m = 2.5\n",
        encoding="utf-8",
    )
    morphologies, radio, scenario = load_overrides(str(path))
    assert morphologies["urban"].radius_m == 600.0
    assert morphologies["urban"].pl_exponent == MORPHOLOGIES["urban"].pl_exponent
    assert radio.bandwidth_hz == 10e6
    assert scenario == {"min_distance_m": 2.5}


def test_overrides_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("urbn.radius_m = 600\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_overrides(str(path))
    path.write_text("frequency_ghz = 2\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_overrides(str(path))
