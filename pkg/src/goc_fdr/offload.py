"""Local versus edge fault-detection latency and the adaptive offloading rule."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

from .channel import ChannelParams, rate_bps, spectral_efficiency

TASK = "task_level"
MOTION = "motion_level"
LOCAL = "local"
EDGE = "edge"

SWEEP_HEADER = ("bandwidth_hz", "t_local_task", "t_local_motion", "t_edge", "decision")


class OffloadConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TimingProfile:
    t_sg_local: float
    t_dt_local: float
    t_sg_edge: float
    t_dt_edge: float

    def __post_init__(self) -> None:
        for name in ("t_sg_local", "t_dt_local", "t_sg_edge", "t_dt_edge"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise OffloadConfigError(f"{name} must be a finite non-negative time, got {v}")


@dataclass(frozen=True)
class DataSizes:
    """Payload sizes in bits."""

    psi_sg: float
    psi_edge_points: float
    psi_full_points: float

    def __post_init__(self) -> None:
        if self.psi_sg < 0:
            raise OffloadConfigError("payload sizes must be non-negative")
        if not (self.psi_sg <= self.psi_edge_points <= self.psi_full_points):
            raise OffloadConfigError(
                f"payload sizes must satisfy sg <= edge points <= full points, got "
                f"{self.psi_sg}, {self.psi_edge_points}, {self.psi_full_points}")


@dataclass(frozen=True)
class OffloadDecision:
    task: str
    motion: str
    b1: float
    b2: float

    def __post_init__(self) -> None:
        if math.isfinite(self.b1) and math.isfinite(self.b2) and self.b1 > self.b2:
            raise ValueError("B1 must not exceed B2")

    def strategy(self, kind: str) -> str:
        return self.task if kind == TASK else self.motion

    @property
    def region(self) -> str:
        if self.task == LOCAL and self.motion == LOCAL:
            return "local"
        if self.task == LOCAL:
            return "hybrid"
        return "edge"


def detection_time_local(kind: str, profile: TimingProfile, sizes: DataSizes, channel: ChannelParams) -> float:
    """On-robot extraction followed by uplink of the compact representation."""
    r = rate_bps(channel)
    if kind == TASK:
        return profile.t_sg_local + sizes.psi_sg / r
    if kind == MOTION:
        return profile.t_sg_local + profile.t_dt_local + sizes.psi_edge_points / r
    raise ValueError(f"unknown fault kind {kind!r}")


def detection_time_edge(profile: TimingProfile, sizes: DataSizes, channel: ChannelParams) -> float:
    """Raw cloud uplink followed by extraction at the edge server."""
    return sizes.psi_full_points / rate_bps(channel) + profile.t_sg_edge + profile.t_dt_edge


def detection_time(kind: str, strategy: str, profile: TimingProfile, sizes: DataSizes,
                   channel: ChannelParams) -> float:
    if strategy == LOCAL:
        return detection_time_local(kind, profile, sizes, channel)
    if strategy == EDGE:
        return detection_time_edge(profile, sizes, channel)
    raise ValueError(f"unknown strategy {strategy!r}")


def crossover_bandwidth(psi_full: float, psi_uplink: float, eta: float, dt_compute: float) -> float:
    """Bandwidth at which local and edge detection times are equal.

    ``(psi_full - psi_uplink) / (eta * dt_compute)``, or ``inf`` when local
    compute is not slower than edge compute.
    """
    if psi_uplink >= psi_full:
        raise OffloadConfigError("uplink payload must be smaller than the full point cloud")
    if dt_compute <= 0:
        return math.inf
    return (psi_full - psi_uplink) / (eta * dt_compute)


def thresholds(profile: TimingProfile, sizes: DataSizes, channel: ChannelParams) -> tuple[float, float]:
    """``(B1, B2)``: crossover bandwidths for motion-level and task-level faults."""
    eta = spectral_efficiency(channel)
    edge = profile.t_sg_edge + profile.t_dt_edge
    b1 = crossover_bandwidth(sizes.psi_full_points, sizes.psi_edge_points, eta,
                             profile.t_sg_local + profile.t_dt_local - edge)
    b2 = crossover_bandwidth(sizes.psi_full_points, sizes.psi_sg, eta, profile.t_sg_local - edge)
    return b1, b2


def decide(bandwidth_hz: float, limits: tuple[float, float]) -> OffloadDecision:
    """Three-region rule: local below B1, hybrid up to B2, edge above."""
    if not bandwidth_hz > 0:
        raise ValueError("bandwidth must be positive")
    b1, b2 = limits
    if bandwidth_hz <= b1:
        return OffloadDecision(LOCAL, LOCAL, b1, b2)
    if bandwidth_hz <= b2:
        return OffloadDecision(LOCAL, EDGE, b1, b2)
    return OffloadDecision(EDGE, EDGE, b1, b2)


def decide_for(profile: TimingProfile, sizes: DataSizes, channel: ChannelParams) -> OffloadDecision:
    return decide(channel.bandwidth_hz, thresholds(profile, sizes, channel))


def toy_profile_for_thresholds(b1: float, b2: float, sizes: DataSizes, channel: ChannelParams,
                               t_sg_edge: float = 0.0, t_dt_edge: float = 0.0) -> TimingProfile:
    """Local compute times that place the crossovers at ``b1`` and ``b2``."""
    eta = spectral_efficiency(channel)
    d2 = (sizes.psi_full_points - sizes.psi_sg) / (eta * b2)
    d1 = (sizes.psi_full_points - sizes.psi_edge_points) / (eta * b1)
    if d1 < d2:
        raise OffloadConfigError("requested thresholds need a negative t_dt_local")
    return TimingProfile(d2 + t_sg_edge + t_dt_edge, d1 - d2, t_sg_edge, t_dt_edge)


def sweep_rows(profile: TimingProfile, sizes: DataSizes, channel: ChannelParams,
               bandwidths: Iterable[float]) -> list[tuple]:
    """One row per bandwidth: the three detection times and the decided region."""
    bws = list(bandwidths)
    if not bws:
        raise ValueError("empty bandwidth list")
    limits = thresholds(profile, sizes, channel)
    rows = []
    for b in bws:
        ch = replace(channel, bandwidth_hz=float(b))
        rows.append((float(b),
                     detection_time_local(TASK, profile, sizes, ch),
                     detection_time_local(MOTION, profile, sizes, ch),
                     detection_time_edge(profile, sizes, ch),
                     decide(b, limits).region))
    return rows
