"""Finite-key engine tests, certified against an extended-precision oracle."""
import math

import mpmath as mp
import numpy as np
import pytest

from qkdlink.core import EPSILON_TESTS, ProtocolParams, TallyCounts
from qkdlink.finitekey import (
    DecoyBounds,
    analyze,
    decoy_bounds,
    hoeffding_delta,
    lambda_ec_model,
    load_tallies,
    secret_key_length,
)
from qkdlink.presets import default_params


def oracle_key_length(s_z0, s_z1, phi, lambda_ec, eps_sec, eps_corr) -> int:
    """Independent key-length computation at 60 significant digits."""
    with mp.workdps(60):
        phi = mp.mpf(phi)
        if phi <= 0 or phi >= 1:
            h = mp.mpf(0)
        else:
            h = -phi * mp.log(phi, 2) - (1 - phi) * mp.log(1 - phi, 2)
        raw = (
            mp.mpf(s_z0)
            + mp.mpf(s_z1) * (1 - h)
            - mp.mpf(lambda_ec)
            - 6 * mp.log(mp.mpf(EPSILON_TESTS) / mp.mpf(eps_sec), 2)
            - mp.log(mp.mpf(2) / mp.mpf(eps_corr), 2)
        )
        return max(0, int(mp.floor(raw)))


def _engine_length(s_z0, s_z1, phi, lambda_ec, eps_sec, eps_corr) -> int:
    params = default_params().with_overrides(eps_sec=eps_sec, eps_corr=eps_corr)
    bounds = DecoyBounds(
        s_z0_lower=s_z0, s_z0_upper=s_z0 + 1.0, s_z1_lower=s_z1,
        s_x1_lower=s_z1, v_x1_upper=phi * max(s_z1, 1.0), phi_z_upper=phi,
    )
    return secret_key_length(bounds, TallyCounts(), lambda_ec, params)


def test_key_length_fixed_example_matches_oracle():
    args = (1e4, 5e5, 0.05, 1e5, 1e-12, 1e-12)
    got = _engine_length(*args)
    want = oracle_key_length(*args)
    assert got == want
    assert got > 0


def test_key_length_randomized_matches_oracle():
    rng = np.random.default_rng(20260824)
    for _ in range(20):
        s_z0 = float(rng.uniform(0.0, 1e5))
        s_z1 = float(rng.uniform(0.0, 1e6))
        phi = float(rng.uniform(0.0, 0.5))
        lam = float(rng.uniform(0.0, 5e5))
        eps_sec = 10.0 ** rng.uniform(-15, -6)
        eps_corr = 10.0 ** rng.uniform(-15, -6)
        assert _engine_length(s_z0, s_z1, phi, lam, eps_sec, eps_corr) == \
            oracle_key_length(s_z0, s_z1, phi, lam, eps_sec, eps_corr)


def test_key_length_clamps_at_zero():
    assert _engine_length(0.0, 0.0, 0.5, 1e6, 1e-12, 1e-12) == 0


def test_hoeffding_delta_basic():
    assert hoeffding_delta(0.0, 0.5) == 0.0
    d1 = hoeffding_delta(1e5, 1e-10)
    d2 = hoeffding_delta(1e5, 1e-5)
    assert d1 > d2 > 0.0
    with pytest.raises(ValueError):
        hoeffding_delta(-1.0, 0.5)
    with pytest.raises(ValueError):
        hoeffding_delta(10.0, 0.0)


def test_hoeffding_coverage_monte_carlo():
    """The one-sided deviation bound holds empirically for Binomial(1e5, 0.3)."""
    n, p, eps, trials = 100_000, 0.3, 0.01, 10_000
    rng = np.random.default_rng(7)
    draws = rng.binomial(n, p, size=trials)
    delta = hoeffding_delta(n, eps)
    upper_violations = np.mean(draws - n * p > delta)
    lower_violations = np.mean(n * p - draws > delta)
    assert upper_violations <= eps
    assert lower_violations <= eps


def test_decoy_bounds_clamping_fuzz():
    """Random tallies never crash the bounds and all clamps hold."""
    rng = np.random.default_rng(99)
    params = default_params()
    for _ in range(10_000):
        n = rng.integers(0, 10_000, size=(2, 3))
        n[:, 2] = 0
        m = (n * rng.random((2, 3))).astype(np.int64)
        t = TallyCounts(n_z=n[0], m_z=m[0], n_x=n[1], m_x=m[1])
        b = decoy_bounds(t, params)
        assert b.s_z0_lower >= 0.0
        assert b.s_z1_lower >= 0.0
        assert b.s_z0_upper >= b.s_z0_lower
        assert 0.0 <= b.phi_z_upper <= 0.5
        l = secret_key_length(b, t, 0.0, params)
        assert l >= 0


def test_more_check_errors_never_lengthen_the_key():
    params = default_params()
    base = TallyCounts(n_z=[70_000, 30_000, 0], m_z=[700, 300, 0],
                       n_x=[35_000, 15_000, 0], m_x=[700, 300, 0])
    l_prev = None
    for extra in (0, 500, 2000, 6000):
        t = TallyCounts(n_z=base.n_z.copy(), m_z=base.m_z.copy(),
                        n_x=base.n_x.copy(),
                        m_x=base.m_x + np.array([extra, 0, 0]))
        b = decoy_bounds(t, params)
        l = secret_key_length(b, t, lambda_ec_model(t.n_z_total, t.qber_z()), params)
        if l_prev is not None:
            assert l <= l_prev
        l_prev = l


def test_more_disclosure_never_lengthens_the_key():
    params = default_params()
    t = TallyCounts(n_z=[70_000, 30_000, 0], m_z=[700, 300, 0],
                    n_x=[35_000, 15_000, 0], m_x=[700, 300, 0])
    b = decoy_bounds(t, params)
    lengths = [secret_key_length(b, t, lam, params)
               for lam in (0.0, 1e3, 1e4, 5e4)]
    assert lengths == sorted(lengths, reverse=True)


def test_decoy_bounds_rejects_bad_intensities():
    t = TallyCounts(n_z=[10, 10, 0])
    with pytest.raises(ValueError):
        decoy_bounds(t, ProtocolParams(mu1=0.4, mu2=0.0, p_mu=(0.7, 0.3, 0.0)))


def test_analyze_end_to_end_report():
    params = default_params()
    t = TallyCounts(n_z=[70_000, 30_000, 0], m_z=[700, 300, 0],
                    n_x=[35_000, 15_000, 0], m_x=[700, 300, 0])
    rep = analyze(t, params, elapsed_protocol_time=2.0)
    assert rep.key_length_l > 0
    assert rep.skr == pytest.approx(rep.key_length_l / 2.0)
    assert rep.lambda_ec == pytest.approx(
        lambda_ec_model(t.n_z_total, t.qber_z()))
    # explicit disclosure overrides the model
    rep2 = analyze(t, params, lambda_ec=0.0, elapsed_protocol_time=2.0)
    assert rep2.key_length_l > rep.key_length_l


def test_load_tallies_json_and_table(tmp_path):
    t = TallyCounts(n_z=[100, 50, 0], m_z=[3, 1, 0], n_x=[40, 20, 0], m_x=[2, 1, 0])
    p = tmp_path / "counts.json"
    p.write_text(__import__("json").dumps(t.to_dict()))
    back = load_tallies(p)
    assert np.array_equal(back.n_z, t.n_z)

    q = tmp_path / "counts.csv"
    q.write_text("intensity,n_z,m_z,n_x,m_x\nmu1,100,3,40,2\nmu2,50,1,20,1\nmu3,0,0,0,0\n")
    back2 = load_tallies(q)
    assert np.array_equal(back2.n_z, t.n_z)
    assert np.array_equal(back2.m_x, t.m_x)


def test_load_tallies_rejects_errors_exceeding_counts(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("intensity,n_z,m_z,n_x,m_x\nmu1,10,20,0,0\nmu2,5,0,0,0\nmu3,0,0,0,0\n")
    with pytest.raises(ValueError):
        load_tallies(p)
