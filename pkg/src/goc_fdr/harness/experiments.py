"""Batch experiments: suites, bandwidth sweeps and planner-profile comparisons."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..edge_points.attention import extract_edge_points
from ..offload import SWEEP_HEADER, TimingProfile, sweep_rows, thresholds
from ..scene_graph.encoder import encode_node_feature
from ..scene_graph.geometry import workspace_scene_graph
from ..world import ConfigError
from .config import ScenarioConfig
from .runner import Run, RunMetrics, run_scenario

SWEEP_CSV_HEADER = SWEEP_HEADER + ("b1_hz", "b2_hz")
COMPARE_HEADER = ("profile", "payload", "t_inf", "runs", "faults", "mean_t_fdr", "success_rate",
                  "mean_uplink_bits", "mean_fault_free_frame_bits")
DEFAULT_RUNS = 25


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else str(v) for v in row])
    return buf.getvalue()


def _run_case(args):
    cfg, stop = args
    return run_scenario(cfg, stop_at_first_fault=stop)


def run_batch(configs, workers: int = 1, stop_at_first_fault: bool = False) -> list[RunMetrics]:
    """Run independent scenarios, optionally in worker processes.

    Results come back in input order whatever the worker count.
    """
    jobs = [(c, stop_at_first_fault) for c in configs]
    if workers <= 1:
        return [_run_case(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_case, jobs))


def scenario_sizes(cfg: ScenarioConfig):
    """Payload sizes of the initial scene, as used for the offload decision."""
    return Run(cfg).initial_sizes


def sweep_bandwidth(cfg: ScenarioConfig, bandwidths) -> str:
    """Detection times and decided region per bandwidth, with B1 and B2 in every row."""
    bws = [float(b) for b in bandwidths]
    if not bws:
        raise ValueError("bandwidth list is empty")
    sizes = scenario_sizes(cfg)
    b1, b2 = thresholds(cfg.timing, sizes, cfg.channel)
    rows = [row + (b1, b2) for row in sweep_rows(cfg.timing, sizes, cfg.channel, bws)]
    return _csv(SWEEP_CSV_HEADER, rows)


def log_bandwidths(bw_min: float, bw_max: float, steps: int) -> list[float]:
    if not (0 < bw_min < bw_max) or steps < 2:
        raise ValueError("need 0 < bw_min < bw_max and at least two steps")
    return [float(b) for b in np.logspace(math.log10(bw_min), math.log10(bw_max), steps)]


@dataclass
class ProfileComparison:
    rows: list
    runs: dict = field(default_factory=dict)  # profile name -> list of RunMetrics

    def to_csv(self) -> str:
        return _csv(COMPARE_HEADER, self.rows)


def compare_profiles(cfg: ScenarioConfig, profiles, runs: int = DEFAULT_RUNS, workers: int = 1) -> ProfileComparison:
    """Same fault schedule and seeds for every profile; one summary row per profile.

    Run ``i`` uses seed ``cfg.seed + i``.
    """
    profiles = list(profiles.values()) if isinstance(profiles, dict) else list(profiles)
    if len(profiles) < 2:
        raise ConfigError("compare needs at least two profiles")
    if runs < 1:
        raise ValueError("runs must be positive")
    rows, by_name = [], {}
    for p in profiles:
        configs = [p.apply(cfg.with_seed(cfg.seed + i)) for i in range(runs)]
        results = run_batch(configs, workers)
        by_name[p.name] = results
        records = [f for m in results for f in m.faults]
        free_frames = [b for m in results for b in _fault_free_frames(m)]
        rows.append((p.name, p.payload, float(p.t_inf), runs, len(records),
                     math.fsum(f.t_fdr for f in records) / len(records) if records else 0.0,
                     sum(m.success for m in results) / runs,
                     math.fsum(m.uplink_bits for m in results) / runs,
                     math.fsum(free_frames) / len(free_frames) if free_frames else 0.0))
    return ProfileComparison(rows, by_name)


def _fault_free_frames(m: RunMetrics) -> list:
    """Per-frame uplink bits excluding the frames on which a fault was detected."""
    fault_frames = {f.frame for f in m.faults}
    return [b for frame, b in m.frame_uplink_bits if frame not in fault_frames]


def measure_timing(cfg: ScenarioConfig, repeats: int = 3, edge_speedup: float = 3.0) -> TimingProfile:
    """Wall-clock extraction times on the initial scene of ``cfg``.

    Local times are measured here; edge times are the local ones divided by
    ``edge_speedup``. The result is machine dependent, so runs that use it are
    not byte-reproducible.
    """
    r = Run(cfg)
    clouds = r.ws.synth_point_cloud(cfg.density, cfg.noise_sigma, np.random.default_rng(cfg.seed))
    objs = [c for oid, c in sorted(clouds.items()) if oid in r.ws.objects]
    t_sg, t_dt = math.inf, math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        workspace_scene_graph(r.ws, r.th)
        for c in clouds.values():
            encode_node_feature(c)
        t_sg = min(t_sg, time.perf_counter() - t0)
        t0 = time.perf_counter()
        for c in objs:
            extract_edge_points(c, k=cfg.tolerances.k)
        t_dt = min(t_dt, time.perf_counter() - t0)
    return TimingProfile(t_sg, t_dt, t_sg / edge_speedup, t_dt / edge_speedup)


def with_timing(cfg: ScenarioConfig, timing: TimingProfile) -> ScenarioConfig:
    return replace(cfg, timing=timing)
