"""Analytic rate model and intensity optimizer."""
import dataclasses
import math

import numpy as np
import pytest

from qkdlink.core import ChannelModel
from qkdlink.photonics import run_link
from qkdlink.presets import (
    DETECTOR_PRESETS,
    INTENSITY_SCHEDULE,
    default_channel,
    default_params,
)
from qkdlink.rates import (
    SearchSpec,
    expected_rates,
    optimize_intensities,
    predict_skr,
)

SIP = DETECTOR_PRESETS["sip-polimi-10um"]
ID221 = DETECTOR_PRESETS["id221"]


def test_skr_monotone_non_increasing_in_loss():
    params = default_params()
    skrs = [predict_skr(params, default_channel(loss), SIP, SIP, n_z=10**9).skr
            for loss in (2, 4, 6, 8, 12, 16, 20)]
    assert all(a >= b for a, b in zip(skrs, skrs[1:]))
    assert skrs[0] > 0.0


def test_skr_degrades_with_dark_rate():
    params = default_params()
    ch = default_channel(10.0)
    darker = dataclasses.replace(SIP, dark_rate=SIP.dark_rate * 50)
    assert predict_skr(params, ch, darker, darker, n_z=10**9).skr < \
        predict_skr(params, ch, SIP, SIP, n_z=10**9).skr


def test_qber_x_floor_follows_visibility():
    params = default_params()
    quiet = dataclasses.replace(SIP, dark_rate=0.0, afterpulse_amplitude=0.0)
    for vis in (0.90, 0.95, 0.99):
        ch = dataclasses.replace(default_channel(3.0), visibility=vis)
        rates = expected_rates(params, ch, quiet, quiet)
        assert rates.qber_x == pytest.approx((1 - vis) / 2, rel=1e-6)


def test_noiseless_qber_z_is_intrinsic_floor():
    params = default_params()
    det = dataclasses.replace(SIP, dark_rate=0.0, afterpulse_amplitude=0.0,
                              intrinsic_error_z=0.013)
    ch = ChannelModel(channel_loss_db=0.0, receiver_loss_z_db=0.0,
                      receiver_loss_x_db=0.0, visibility=1.0)
    rates = expected_rates(params, ch, det, det)
    assert rates.qber_z == pytest.approx(0.013, rel=1e-9)
    assert rates.qber_x == pytest.approx(0.0, abs=1e-12)


def test_ingaas_reference_qber_band_at_low_loss():
    """The InGaAs reference sits in the few-percent QBER_Z band at 3 dB."""
    mu1, mu2 = INTENSITY_SCHEDULE["id221"][3]
    rates = expected_rates(default_params(mu1=mu1, mu2=mu2),
                           default_channel(3.0), ID221, ID221)
    assert 0.03 < rates.qber_z < 0.06


def test_expected_rates_match_monte_carlo_one_point():
    params = default_params()
    ch = default_channel(5.0)
    rates = expected_rates(params, ch, SIP, SIP)
    frames = 30_000_000
    result = run_link(params, ch, SIP, SIP, max_frames=frames, seed=55)
    for expect_per_slot, got in (
        (rates.n_z_per_slot, result.tallies.n_z_total),
        (rates.n_x_per_slot, result.tallies.n_x_total),
    ):
        mean = expect_per_slot * frames
        sigma = math.sqrt(frames * expect_per_slot * (1 - expect_per_slot))
        assert abs(got - mean) < 3.0 * sigma


def test_tallies_for_nz_scales_to_target():
    params = default_params()
    rates = expected_rates(params, default_channel(3.0), SIP, SIP)
    tallies, elapsed = rates.tallies_for_nz(100_000)
    assert abs(tallies.n_z_total - 100_000) <= 2  # integer rounding only
    assert elapsed > 0.0
    assert tallies.qber_z() == pytest.approx(rates.qber_z, rel=0.05)


def test_predict_skr_zero_when_noise_dominates():
    params = default_params()
    assert predict_skr(params, default_channel(50.0), ID221, ID221, n_z=10**5).skr == 0.0


def test_optimizer_singleton_box_pins_values():
    params = default_params()
    spec = SearchSpec(mu1_bounds=(0.4, 0.4), mu2_bounds=(0.1, 0.1),
                      p_mu1_bounds=(0.6, 0.6))
    res = optimize_intensities(params, default_channel(5.0), SIP, SIP,
                               spec=spec, n_z=10**7)
    assert res.params.mu1 == pytest.approx(0.4)
    assert res.params.mu2 == pytest.approx(0.1)
    assert res.params.p_mu[0] == pytest.approx(0.6)


def test_optimizer_never_worse_than_template():
    params = default_params()
    ch = default_channel(10.0)
    spec = SearchSpec(mu1_bounds=(0.1, 0.8), mu2_bounds=(0.02, 0.4),
                      p_mu1_bounds=(0.3, 0.95), grid_points=7, rounds=3)
    res = optimize_intensities(params, ch, SIP, SIP, spec=spec, n_z=10**9)
    base = predict_skr(params, ch, SIP, SIP, n_z=10**9).skr
    assert res.skr >= base - 1e-9


def test_optimizer_grid_refinement_stable():
    """Doubling the grid resolution moves the optimum by less than 2%."""
    params = default_params()
    ch = default_channel(10.0)
    coarse = optimize_intensities(
        params, ch, SIP, SIP,
        spec=SearchSpec(mu1_bounds=(0.1, 0.8), mu2_bounds=(0.02, 0.4),
                        p_mu1_bounds=(0.3, 0.95), grid_points=9, rounds=4),
        n_z=10**9)
    fine = optimize_intensities(
        params, ch, SIP, SIP,
        spec=SearchSpec(mu1_bounds=(0.1, 0.8), mu2_bounds=(0.02, 0.4),
                        p_mu1_bounds=(0.3, 0.95), grid_points=17, rounds=4),
        n_z=10**9)
    assert fine.skr > 0.0
    assert abs(fine.skr - coarse.skr) / fine.skr < 0.02


def test_optimizer_is_deterministic():
    params = default_params()
    ch = default_channel(5.0)
    spec = SearchSpec(mu1_bounds=(0.1, 0.8), mu2_bounds=(0.02, 0.4),
                      grid_points=7, rounds=2)
    a = optimize_intensities(params, ch, SIP, SIP, spec=spec, n_z=10**8)
    b = optimize_intensities(params, ch, SIP, SIP, spec=spec, n_z=10**8)
    assert a.params == b.params
    assert a.skr == b.skr


def test_search_spec_validation():
    with pytest.raises(ValueError):
        SearchSpec(mu1_bounds=(0.5, 0.2))
