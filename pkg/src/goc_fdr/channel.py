"""Wireless uplink/downlink model between the camera UE and the edge server.

Nakagami-m block fading on the power gain, in-factory NLOS path loss and a
Shannon-rate transmission latency. Everything here is a pure function of the
parameters (and of the random generator for the fading sampler).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def dbm_to_watts(x_dbm: float) -> float:
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def watts_to_dbm(x_watts: float) -> float:
    return 10.0 * math.log10(x_watts) + 30.0


@dataclass(frozen=True)
class ChannelParams:
    """Channel configuration. Defaults are the simulation-setup values.

    Attributes:
        m: Nakagami shape parameter.
        omega: Nakagami scale parameter (mean power gain).
        d: UE to edge-server distance in meters.
        fc: carrier frequency in GHz.
        tx_power_dbm: transmit power in dBm.
        noise_dbm: noise power in dBm (fixed, not a density).
        bandwidth_hz: channel bandwidth in Hz.
    """

    m: float = 1.0
    omega: float = 1.0
    d: float = 50.0
    fc: float = 3.5
    tx_power_dbm: float = 24.0
    noise_dbm: float = -114.0
    bandwidth_hz: float = 1e6

    def __post_init__(self) -> None:
        for name in ("m", "omega", "d", "fc", "bandwidth_hz"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"ChannelParams.{name} must be positive and finite, got {value!r}")
        for name in ("tx_power_dbm", "noise_dbm"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"ChannelParams.{name} must be finite")


def sample_fading_gain(params: ChannelParams, rng: np.random.Generator, size=None):
    """Draw Nakagami-m power gains.

    The power gain follows Gamma(shape=m, scale=omega/m), so its mean is
    ``omega`` and its variance ``omega**2 / m``. Returns a float when ``size``
    is None, otherwise an array.
    """
    g = rng.gamma(shape=params.m, scale=params.omega / params.m, size=size)
    if size is None:
        return float(g)
    return g


def nakagami_pdf(g, m: float, omega: float):
    """Density of the power gain, used by tests as an analytic reference."""
    g = np.asarray(g, dtype=float)
    out = np.zeros_like(g)
    pos = g > 0
    logpdf = (
        (m - 1) * np.log(g[pos])
        - math.lgamma(m)
        + m * math.log(m / omega)
        - (m / omega) * g[pos]
    )
    out[pos] = np.exp(logpdf)
    return out


def path_loss_db(d: float, fc: float) -> float:
    """In-factory NLOS path loss in dB; ``d`` in meters, ``fc`` in GHz."""
    if not (d > 0 and fc > 0):
        raise ValueError(f"path loss needs d > 0 and fc > 0, got d={d!r}, fc={fc!r}")
    return 18.6 + 35.7 * math.log10(d) + 20.0 * math.log10(fc)


def channel_gain(params: ChannelParams, power_gain: float | None = None) -> float:
    """Overall linear channel gain h.

    ``power_gain`` defaults to the mean fading power gain ``omega``; pass a
    sampled gain for Monte-Carlo latency runs.
    """
    g = params.omega if power_gain is None else power_gain
    return g / 10.0 ** (path_loss_db(params.d, params.fc) / 10.0)


def mean_snr(params: ChannelParams, power_gain: float | None = None) -> float:
    h = channel_gain(params, power_gain)
    return dbm_to_watts(params.tx_power_dbm) * h / dbm_to_watts(params.noise_dbm)


def spectral_efficiency(params: ChannelParams, power_gain: float | None = None) -> float:
    """log2(1 + SNR) in bit/s/Hz."""
    return math.log2(1.0 + mean_snr(params, power_gain))


def rate_bps(params: ChannelParams, power_gain: float | None = None) -> float:
    return params.bandwidth_hz * spectral_efficiency(params, power_gain)


def transmission_time(payload_bits: float, params: ChannelParams, power_gain: float | None = None) -> float:
    """Seconds needed to push ``payload_bits`` through the link."""
    if payload_bits < 0:
        raise ValueError(f"payload_bits must be >= 0, got {payload_bits!r}")
    if payload_bits == 0:
        return 0.0
    return payload_bits / rate_bps(params, power_gain)


class LinkModel:
    """Latency oracle used by the harness.

    In the default deterministic mode every transmission sees the mean SNR.
    With ``monte_carlo=True`` each transmission draws its own fading gain from
    ``rng`` (the harness owns one stream per run).
    """

    def __init__(self, params: ChannelParams, monte_carlo: bool = False,
                 rng: np.random.Generator | None = None):
        if monte_carlo and rng is None:
            raise ValueError("monte_carlo link model needs a seeded rng")
        self.params = params
        self.monte_carlo = monte_carlo
        self._rng = rng

    def time(self, payload_bits: float) -> float:
        if payload_bits == 0:
            return 0.0
        gain = sample_fading_gain(self.params, self._rng) if self.monte_carlo else None
        return transmission_time(payload_bits, self.params, gain)
