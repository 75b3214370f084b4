"""Command-line entry point: ``goc-fdr run|sweep|extract|compare``.

A ``<scenario>`` argument is either a scenario INI file or a built-in task
name (``sorting``, ``grocery``, ``palletising``), optionally followed by
``:<fault kind>`` to inject one generated fault, e.g. ``palletising:drop``.
CSV goes to ``--out`` or to stdout.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .edge_points.attention import AttentionWeights, encode_edge_payload, extract_edge_points
from .harness.config import OFFLOAD_MODES, PLANNER_KINDS, Tolerances, load, load_profiles
from .harness.experiments import compare_profiles, log_bandwidths, measure_timing, sweep_bandwidth
from .harness.runner import metrics_csv, run_scenario
from .harness.scenarios import FAULT_KINDS, TASKS, task_config, with_fault
from .scene_graph.encoder import EncoderConfig, encode_edge_feature, encode_node_feature
from .scene_graph.gcn import load_weights, predict_scene_graph
from .scene_graph.geometry import build_scene_graph, candidate_edges
from .scene_graph.triplets import serialize_sg
from .world import ConfigError, ObjectState, read_point_clouds

MIN_HALF = 1e-3  # flat clouds still get a valid box


def resolve_scenario(spec: str, seed: int | None = None):
    """Load an INI file or build a task (``task`` or ``task:fault``); ``seed`` overrides."""
    path = Path(spec)
    if path.is_file():
        cfg = load(path)
    else:
        task, _, kind = spec.partition(":")
        if task not in TASKS:
            raise ConfigError(f"{spec!r} is neither a scenario file nor one of {', '.join(TASKS)}")
        if kind and kind not in FAULT_KINDS:
            raise ConfigError(f"unknown fault kind {kind!r}; expected one of {', '.join(FAULT_KINDS)}")
        cfg = task_config(task, 0 if seed is None else seed)
        if kind:
            cfg = with_fault(cfg, kind)
    return cfg if seed is None else cfg.with_seed(seed)


def _emit(text: str | bytes, out: str | None) -> None:
    if out is None:
        if isinstance(text, bytes):
            sys.stdout.buffer.write(text)
        else:
            sys.stdout.write(text)
        return
    p = Path(out)
    if isinstance(text, bytes):
        p.write_bytes(text)
    else:
        p.write_text(text, encoding="utf-8")


# -- subcommands ------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = resolve_scenario(args.scenario, args.seed)
    if args.planner or args.endpoint:
        cfg = replace(cfg, planner=replace(cfg.planner, kind=args.planner or cfg.planner.kind,
                                           endpoint=args.endpoint or cfg.planner.endpoint))
    if args.offload:
        cfg = replace(cfg, offload_mode=args.offload)
    if args.measure_timing:
        cfg = replace(cfg, timing=measure_timing(cfg))
    m = run_scenario(cfg)
    _emit(metrics_csv([m]), args.out)
    if args.out:
        status = "success" if m.success else f"failure: {m.failure}"
        print(f"{cfg.name} seed {cfg.seed}: {len(m.faults)} fault(s), {status}", file=sys.stderr)
    return 0 if m.success else 1


def cmd_sweep(args) -> int:
    cfg = resolve_scenario(args.scenario, args.seed)
    _emit(sweep_bandwidth(cfg, log_bandwidths(args.bw_min, args.bw_max, args.steps)), args.out)
    return 0


def cmd_compare(args) -> int:
    cfg = resolve_scenario(args.scenario, args.seed)
    result = compare_profiles(cfg, load_profiles(args.profiles), runs=args.runs, workers=args.workers)
    _emit(result.to_csv(), args.out)
    return 0


def _box(cloud, caption: str) -> ObjectState:
    lo, hi = cloud.points.min(axis=0), cloud.points.max(axis=0)
    return ObjectState(cloud.object_id, caption, (lo + hi) / 2, np.maximum((hi - lo) / 2, MIN_HALF))


def _captions(path: str | None) -> dict:
    """``<id> <caption>`` per line."""
    if path is None:
        return {}
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.lstrip().startswith("#"):
            oid, cap = line.split(maxsplit=1)
            out[int(oid)] = cap.strip()
    return out


def cmd_extract(args) -> int:
    clouds = read_point_clouds(args.cloud_file)
    if not clouds:
        raise ConfigError(f"{args.cloud_file}: no points")
    if args.mode == "edges":
        weights = AttentionWeights.load(args.weights) if args.weights else None
        sets = [extract_edge_points(c, k=args.k, weights=weights) for c in clouds.values()]
        _emit(encode_edge_payload(sets), args.out)
        return 0
    names = _captions(args.captions)
    boxes = [_box(c, names.get(oid, f"obj{oid}")) for oid, c in clouds.items()]
    tol = Tolerances()
    if args.weights:
        w = load_weights(args.weights)
        enc = EncoderConfig(node_size=w.node_size, edge_size=w.edge_size)
        index = {b.id: i for i, b in enumerate(boxes)}
        pairs = candidate_edges(boxes, tol.d_max)
        nodes = np.array([encode_node_feature(c, enc) for c in clouds.values()])
        feats = np.array([encode_edge_feature(clouds[a], clouds[b], enc) for a, b in pairs]).reshape(
            len(pairs), w.edge_size)
        sg = predict_scene_graph([b.caption for b in boxes], nodes, [(index[a], index[b]) for a, b in pairs],
                                 feats, w)
    else:
        sg = build_scene_graph(boxes, {}, tol.relation_thresholds())
    _emit(serialize_sg(sg), args.out)
    return 0


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="goc-fdr", description="Fault detection and recovery simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario and write its metrics CSV")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--planner", choices=PLANNER_KINDS)
    r.add_argument("--endpoint", help="remote planner URL (default: $GOC_PLANNER_URL)")
    r.add_argument("--offload", choices=OFFLOAD_MODES)
    r.add_argument("--measure-timing", action="store_true",
                   help="use wall-clock extraction times of this machine (not reproducible)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="offloading decision over log-spaced bandwidths")
    s.add_argument("scenario")
    s.add_argument("--seed", type=int)
    s.add_argument("--bw-min", type=float, required=True)
    s.add_argument("--bw-max", type=float, required=True)
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("extract", help="scene graph or edge-point payload from a point-cloud file")
    e.add_argument("cloud_file")
    e.add_argument("--mode", choices=("sg", "edges"), required=True)
    e.add_argument("--out")
    e.add_argument("--k", type=int, default=512)
    e.add_argument("--captions", help="file of '<id> <caption>' lines (sg mode)")
    e.add_argument("--weights", help="npz weights: GCN for sg mode, attention for edges mode")
    e.set_defaults(func=cmd_extract)

    c = sub.add_parser("compare", help="compare planner/payload profiles over seeded runs")
    c.add_argument("scenario")
    c.add_argument("--profiles", required=True)
    c.add_argument("--runs", type=int, default=25)
    c.add_argument("--seed", type=int)
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"goc-fdr: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
