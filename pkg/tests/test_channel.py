import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from goc_fdr.channel import (
    ChannelParams,
    LinkModel,
    dbm_to_watts,
    mean_snr,
    nakagami_pdf,
    path_loss_db,
    sample_fading_gain,
    transmission_time,
)

# Frozen from a 40-digit mpmath evaluation of the path-loss / SNR / rate formulas.
PL_50_35 = 90.13459004180138
SNR_TABLE1 = 61170.35428195000
SNR_TABLE1_DB = 47.86540995819862
T_1MBIT = 0.06289083273726626


def test_path_loss_unit_inputs():
    assert path_loss_db(1.0, 1.0) == pytest.approx(18.6, abs=1e-12)


def test_path_loss_table_values():
    assert path_loss_db(50.0, 3.5) == pytest.approx(PL_50_35, rel=1e-12)


@pytest.mark.parametrize("d,fc", [(0, 3.5), (-1, 3.5), (50, 0), (50, -2)])
def test_path_loss_domain(d, fc):
    with pytest.raises(ValueError):
        path_loss_db(d, fc)


@given(st.floats(0.1, 1e3), st.floats(0.1, 1e3), st.floats(0.1, 100))
def test_path_loss_monotone(d1, d2, fc):
    if d1 < d2:
        assert path_loss_db(d1, fc) < path_loss_db(d2, fc)
        assert path_loss_db(fc, d1) < path_loss_db(fc, d2)


def test_mean_snr_table_values():
    snr = mean_snr(ChannelParams())
    assert snr == pytest.approx(SNR_TABLE1, rel=1e-10)
    assert 10 * math.log10(snr) == pytest.approx(SNR_TABLE1_DB, abs=1e-9)


def test_mean_snr_linear_in_omega():
    base = ChannelParams()
    doubled = ChannelParams(omega=2.0)
    assert mean_snr(doubled) == pytest.approx(2 * mean_snr(base), rel=1e-12)


def test_mean_snr_identity_case():
    # d=1, fc=10**(-18.6/20) makes the path loss exactly 0 dB, so h = omega = 1.
    fc = 10 ** (-18.6 / 20)
    params = ChannelParams(d=1.0, fc=fc, tx_power_dbm=-60.0, noise_dbm=-60.0)
    assert mean_snr(params) == pytest.approx(1.0, rel=1e-12)


def test_dbm_conversion():
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert dbm_to_watts(0.0) == pytest.approx(1e-3)


def test_transmission_time():
    params = ChannelParams()
    assert transmission_time(0, params) == 0.0
    assert transmission_time(1e6, params) == pytest.approx(T_1MBIT, rel=1e-10)
    half = ChannelParams(bandwidth_hz=0.5e6)
    assert transmission_time(1e6, half) == pytest.approx(2 * transmission_time(1e6, params), rel=1e-14)
    with pytest.raises(ValueError):
        transmission_time(-1, params)


@given(st.one_of(st.just(0.0), st.floats(1, 1e9)), st.floats(1e3, 1e9), st.floats(1.01, 10))
def test_transmission_time_linear_and_decreasing(bits, bw, factor):
    params = ChannelParams(bandwidth_hz=bw)
    t = transmission_time(bits, params)
    assert transmission_time(2 * bits, params) == pytest.approx(2 * t, rel=1e-12)
    if bits > 0:
        assert transmission_time(bits, ChannelParams(bandwidth_hz=bw * factor)) < t


@pytest.mark.parametrize("field", ["m", "omega", "d", "fc", "bandwidth_hz"])
def test_params_validation(field):
    with pytest.raises(ValueError):
        ChannelParams(**{field: 0.0})


def test_fading_support_and_determinism():
    params = ChannelParams()
    a = sample_fading_gain(params, np.random.default_rng(7), size=10_000)
    b = sample_fading_gain(params, np.random.default_rng(7), size=10_000)
    assert np.all(a >= 0)
    assert a.tobytes() == b.tobytes()
    assert isinstance(sample_fading_gain(params, np.random.default_rng(1)), float)


def test_fading_mean_m1():
    g = sample_fading_gain(ChannelParams(), np.random.default_rng(11), size=1_000_000)
    assert abs(g.mean() - 1.0) < 0.01


def test_fading_matches_density_histogram():
    # Independent check of the sampler against the closed-form density.
    params = ChannelParams(m=2.5, omega=1.5)
    g = sample_fading_gain(params, np.random.default_rng(3), size=400_000)
    edges = np.linspace(0.0, 4.0, 41)
    hist, _ = np.histogram(g, bins=edges)
    mids = 0.5 * (edges[1:] + edges[:-1])
    expected = nakagami_pdf(mids, 2.5, 1.5) * (edges[1] - edges[0]) * g.size
    mask = expected > 500
    assert np.all(np.abs(hist[mask] - expected[mask]) < 5 * np.sqrt(expected[mask]) + 0.02 * expected[mask])


def test_link_model_modes():
    params = ChannelParams()
    det = LinkModel(params)
    assert det.time(1e6) == transmission_time(1e6, params)
    assert det.time(0) == 0.0
    mc1 = LinkModel(params, monte_carlo=True, rng=np.random.default_rng(5))
    mc2 = LinkModel(params, monte_carlo=True, rng=np.random.default_rng(5))
    seq1 = [mc1.time(1e5) for _ in range(5)]
    assert seq1 == [mc2.time(1e5) for _ in range(5)]
    assert len(set(seq1)) > 1
    with pytest.raises(ValueError):
        LinkModel(params, monte_carlo=True)
