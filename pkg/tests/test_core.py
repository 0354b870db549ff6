"""Unit tests for the shared domain types and closed-form helpers."""
import math

import numpy as np
import pytest

from qkdlink.core import (
    ChannelModel,
    DetectorModel,
    ProtocolParams,
    TallyCounts,
    binary_entropy,
    db_to_transmittance,
    epsilon_budget,
    photon_number_prob,
    qber_from_visibility,
    visibility_from_qber,
)


def test_binary_entropy_endpoints_and_symmetry():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.5) == 1.0
    for x in (0.01, 0.1, 0.3, 0.47):
        assert binary_entropy(x) == pytest.approx(binary_entropy(1.0 - x))
        assert 0.0 < binary_entropy(x) < 1.0
    with pytest.raises(ValueError):
        binary_entropy(-0.1)
    with pytest.raises(ValueError):
        binary_entropy(1.1)


def test_db_to_transmittance():
    assert db_to_transmittance(0.0) == 1.0
    assert db_to_transmittance(10.0) == pytest.approx(0.1)
    assert db_to_transmittance(3.0) == pytest.approx(0.501187, abs=1e-6)
    with pytest.raises(ValueError):
        db_to_transmittance(-1.0)


def test_visibility_qber_roundtrip():
    for vis in (0.0, 0.5, 0.9, 0.95, 1.0):
        assert visibility_from_qber(qber_from_visibility(vis)) == pytest.approx(vis)
    assert qber_from_visibility(1.0) == 0.0
    assert qber_from_visibility(0.0) == 0.5


def test_epsilon_budget():
    assert epsilon_budget(1e-12) == pytest.approx(1e-12 / 19)
    with pytest.raises(ValueError):
        epsilon_budget(0.0)


def test_photon_number_prob_sums_to_one():
    params = ProtocolParams(mu1=0.4, mu2=0.1, p_mu=(0.6, 0.4, 0.0))
    total = sum(photon_number_prob(params, n) for n in range(30))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_protocol_params_validation():
    with pytest.raises(ValueError):
        ProtocolParams(mu1=0.1, mu2=0.4)  # ordering violated
    with pytest.raises(ValueError):
        ProtocolParams(mu1=0.4, mu2=0.1, p_mu=(0.5, 0.4, 0.0))  # does not sum to 1
    with pytest.raises(ValueError):
        ProtocolParams(mu1=0.4, mu2=0.1, p_z_alice=0.0)
    p = ProtocolParams(mu1=0.4, mu2=0.1)
    assert p.frame_period == pytest.approx(1.0 / p.rep_rate)
    assert p.with_overrides(mu1=0.5).mu1 == 0.5


def test_channel_model_transmittances():
    ch = ChannelModel(channel_loss_db=10.0, receiver_loss_z_db=1.0, receiver_loss_x_db=3.0)
    assert ch.transmittance_z() == pytest.approx(db_to_transmittance(11.0))
    assert ch.transmittance_x() == pytest.approx(db_to_transmittance(13.0))
    with pytest.raises(ValueError):
        ChannelModel(channel_loss_db=3.0, visibility=1.5)


def test_detector_holdoff_slots_at_least_ceiling():
    det = DetectorModel(name="d", efficiency=0.2, dark_rate=1e3,
                        mode="gated", gate_rate=119e6, holdoff_time=1e-6)
    slots = det.holdoff_slots(1.0 / 119e6)
    assert slots >= math.ceil(det.holdoff_time * det.gate_rate - 1e-9)
    assert slots == 119
    free = DetectorModel(name="f", efficiency=0.2, dark_rate=1e3,
                         mode="free_running", holdoff_time=20e-6)
    assert free.holdoff_slots(1e-8) == 2000
    zero = DetectorModel(name="z", efficiency=0.2, dark_rate=0.0, holdoff_time=0.0)
    assert zero.holdoff_slots(1e-8) == 0


def test_detector_dark_prob_per_slot():
    gated = DetectorModel(name="g", efficiency=0.2, dark_rate=1e4,
                          mode="gated", gate_rate=119e6, gate_on_window=1e-10)
    assert gated.dark_prob_per_slot(1e-8) == pytest.approx(1e4 * 1e-10)
    no_window = DetectorModel(name="g2", efficiency=0.2, dark_rate=1e4,
                              mode="gated", gate_rate=119e6, gate_on_window=None)
    assert no_window.dark_prob_per_slot(1e-8) == pytest.approx(1e4 / 119e6)
    free = DetectorModel(name="fr", efficiency=0.2, dark_rate=1e4, mode="free_running")
    assert free.dark_prob_per_slot(1e-8) == pytest.approx(1e4 * 1e-8)


def test_detector_validation():
    with pytest.raises(ValueError):
        DetectorModel(name="bad", efficiency=1.5, dark_rate=0.0)
    with pytest.raises(ValueError):
        DetectorModel(name="bad", efficiency=0.2, dark_rate=0.0, mode="other")
    with pytest.raises(ValueError):
        DetectorModel(name="bad", efficiency=0.2, dark_rate=0.0,
                      mode="gated", gate_rate=200e6)  # above the circuit limit
    with pytest.raises(ValueError):
        DetectorModel(name="bad", efficiency=0.2, dark_rate=0.0, intrinsic_error_z=0.6)


def test_tally_counts_validation_and_roundtrip():
    t = TallyCounts(n_z=[10, 5, 0], m_z=[1, 0, 0], n_x=[8, 4, 0], m_x=[2, 1, 0])
    assert t.n_z_total == 15
    assert t.qber_z() == pytest.approx(1 / 15)
    assert t.qber_x() == pytest.approx(3 / 12)
    back = TallyCounts.from_dict(t.to_dict())
    assert np.array_equal(back.n_z, t.n_z) and np.array_equal(back.m_x, t.m_x)
    with pytest.raises(ValueError):
        TallyCounts(n_z=[1, 0, 0], m_z=[2, 0, 0])  # errors exceed counts
    with pytest.raises(ValueError):
        TallyCounts(n_z=[-1, 0, 0])
    with pytest.raises(ValueError):
        TallyCounts.from_dict({"n_z": [0, 0, 0], "bogus": 1})


def test_tally_counts_accumulate():
    a = TallyCounts(n_z=[10, 5, 0], m_z=[1, 0, 0])
    b = TallyCounts(n_z=[3, 2, 0], m_z=[0, 1, 0])
    a += b
    assert a.n_z.tolist() == [13, 7, 0]
    assert a.m_z.tolist() == [1, 1, 0]
