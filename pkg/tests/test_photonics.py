"""Photonic Monte Carlo layer: determinism, tagging, dead time, adversary."""
import dataclasses
import math

import numpy as np
import pytest

from qkdlink.core import ChannelModel, DetectorModel
from qkdlink.photonics import (
    StopTargetUnreachable,
    run_link,
    simulate_dead_time,
)
from qkdlink.presets import DETECTOR_PRESETS, default_channel, default_params

SIP = DETECTOR_PRESETS["sip-polimi-10um"]


def test_same_seed_same_run():
    params = default_params()
    ch = default_channel(3.0)
    a = run_link(params, ch, SIP, SIP, target_nz=5_000, seed=123)
    b = run_link(params, ch, SIP, SIP, target_nz=5_000, seed=123)
    assert np.array_equal(a.tallies.n_z, b.tallies.n_z)
    assert np.array_equal(a.tallies.m_x, b.tallies.m_x)
    assert a.frames == b.frames
    assert a.truth.vacuum_z == b.truth.vacuum_z


def test_different_seeds_differ():
    params = default_params()
    ch = default_channel(3.0)
    a = run_link(params, ch, SIP, SIP, target_nz=5_000, seed=1)
    b = run_link(params, ch, SIP, SIP, target_nz=5_000, seed=2)
    assert not (np.array_equal(a.tallies.n_z, b.tallies.n_z)
                and np.array_equal(a.tallies.m_z, b.tallies.m_z))


def test_origin_tags_account_for_every_detection():
    params = default_params()
    result = run_link(params, default_channel(5.0), SIP, SIP,
                      target_nz=20_000, seed=5, record_events=True)
    # by_origin covers every accepted detection, before basis sifting
    assert sum(result.truth.by_origin.values()) == len(result.events["frame_index"])
    sifted_total = result.tallies.n_z_total + result.tallies.n_x_total
    assert sifted_total <= sum(result.truth.by_origin.values())
    assert result.truth.by_origin["signal"] > 0
    assert result.truth.vacuum_z <= result.tallies.n_z_total
    assert result.truth.single_z <= result.tallies.n_z_total


def test_event_record_is_sorted_and_consistent():
    params = default_params()
    result = run_link(params, default_channel(3.0), SIP, SIP,
                      target_nz=3_000, seed=9, record_events=True)
    ev = result.events
    assert np.all(np.diff(ev["frame_index"]) > 0)
    n = len(ev["frame_index"])
    assert all(len(col) == n for col in ev.values())
    # recorded Z errors must reproduce the tallies
    zz = (ev["alice_basis"] == ev["bob_basis"]) & (ev["bob_basis"] == 0)
    from qkdlink.photonics import Z
    zz = (ev["alice_basis"] == Z) & (ev["bob_basis"] == Z)
    assert int(zz.sum()) == result.tallies.n_z_total
    assert int(ev["error"][zz].sum()) == int(result.tallies.m_z.sum())


def test_max_frames_is_respected_exactly():
    params = default_params()
    result = run_link(params, default_channel(3.0), SIP, SIP,
                      max_frames=1_000_000, seed=3)
    assert result.frames == 1_000_000
    assert result.elapsed_protocol_time == pytest.approx(1_000_000 / params.rep_rate)


def test_target_unreachable_raises():
    params = default_params()
    dead = dataclasses.replace(SIP, efficiency=0.0, dark_rate=0.0,
                               afterpulse_amplitude=0.0)
    with pytest.raises(StopTargetUnreachable):
        run_link(params, default_channel(3.0), dead, dead, target_nz=10, seed=0)
    with pytest.raises(StopTargetUnreachable):
        run_link(params, default_channel(60.0), SIP, SIP,
                 target_nz=10_000_000, max_frames=200_000, seed=0)


def test_input_validation():
    params = default_params()
    with pytest.raises(ValueError):
        run_link(params, default_channel(3.0), SIP, SIP, seed=0)  # no stop rule
    with pytest.raises(ValueError):
        run_link(params, default_channel(3.0), SIP, SIP,
                 target_nz=10, adversary_fraction=1.5)
    with pytest.raises(ValueError):
        run_link(params, default_channel(3.0), SIP, SIP,
                 target_nz=10, chunk_frames=10)


def test_noiseless_link_error_floor_is_intrinsic_only():
    """Zero loss, no darks, perfect visibility: QBER_Z equals the jitter floor."""
    params = default_params()
    det = dataclasses.replace(SIP, dark_rate=0.0, afterpulse_amplitude=0.0,
                              intrinsic_error_z=0.01)
    ch = ChannelModel(channel_loss_db=0.0, receiver_loss_z_db=0.0,
                      receiver_loss_x_db=0.0, visibility=1.0)
    result = run_link(params, ch, det, det, target_nz=100_000, seed=77)
    n, m = result.tallies.n_z_total, int(result.tallies.m_z.sum())
    sigma = math.sqrt(n * 0.01 * 0.99)
    assert abs(m - 0.01 * n) < 4.0 * sigma
    assert int(result.tallies.m_x.sum()) == 0  # perfect interferometer
    assert result.truth.by_origin["dark"] == 0
    assert result.truth.by_origin["afterpulse"] == 0


def test_crn_counts_monotone_in_loss():
    """Common random numbers couple the sweep: more loss, never more clicks."""
    params = default_params()
    ref = default_channel(2.0)
    counts = []
    for loss in (2.0, 4.0, 8.0, 12.0):
        r = run_link(params, default_channel(loss), SIP, SIP,
                     max_frames=20_000_000, seed=31, crn_reference_channel=ref)
        counts.append(r.tallies.n_z_total + r.tallies.n_x_total)
    assert counts == sorted(counts, reverse=True)


def test_intercept_resend_quarter_error_rate():
    params = default_params()
    det = dataclasses.replace(SIP, dark_rate=0.0, afterpulse_amplitude=0.0,
                              intrinsic_error_z=0.0)
    ch = dataclasses.replace(default_channel(3.0), visibility=1.0)
    result = run_link(params, ch, det, det, target_nz=100_000, seed=13,
                      adversary_fraction=1.0)
    n, m = result.tallies.n_z_total, int(result.tallies.m_z.sum())
    q = m / n
    sigma = math.sqrt(0.25 * 0.75 / n)
    assert abs(q - 0.25) < 4.0 * sigma


def test_free_running_dead_time_law():
    det = DetectorModel(name="fr", efficiency=1.0, dark_rate=0.0,
                        mode="free_running", holdoff_time=20e-6)
    for drive in (1e4, 1e5, 1e6):
        rate, se = simulate_dead_time(drive, det, n_clicks=200_000, seed=21)
        expected = drive / (1.0 + drive * det.holdoff_time)
        assert abs(rate - expected) < 3.0 * se, (drive, rate, expected, se)


def test_gated_saturation_approaches_inverse_holdoff():
    det = DetectorModel(name="g", efficiency=1.0, dark_rate=0.0,
                        mode="gated", gate_rate=119e6, holdoff_time=1e-6)
    rate, _ = simulate_dead_time(119e6, det, n_clicks=100_000, seed=22)
    assert abs(rate - 1e6) / 1e6 < 0.05


def test_double_clicks_are_discarded():
    # force coincidences with huge dark rates on both arms
    noisy = dataclasses.replace(SIP, dark_rate=1e8, gate_on_window=1e-8,
                                holdoff_time=0.0)
    params = default_params()
    result = run_link(params, default_channel(3.0), noisy, noisy,
                      max_frames=300_000, seed=8)
    assert result.double_clicks_discarded > 0
