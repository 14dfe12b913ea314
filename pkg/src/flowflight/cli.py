"""Command line: ``flowflight <subcommand> [--config F] [--override k=v] [--seed N]``.

Exit codes: 0 success, 1 validation error (bad config or bad input file),
2 runtime failure (including a replay mismatch).
"""

import argparse
import csv
import glob
import json
import os
import sys

import numpy as np
import yaml

from . import lidar as L, metrics as M, world as W
from .config import config_hash, dump_yaml, load_config
from .errors import ConfigError, FlowFlightError
from .flow import PointFlowPipeline
from .nn import ActorCritic, load_checkpoint
from .ppo import CURVE_FIELDS, train
from .reward import reshaped_field

__all__ = ["main", "run"]


class ValidationFailure(Exception):
    """Input rejected before any work started (exit code 1)."""


def _common(p):
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, repeatable")
    p.add_argument("--seed", type=int, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="flowflight", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario", help="validate or sample scenario files")
    p.add_argument("action", choices=("validate", "sample"))
    p.add_argument("file", help="file to validate, or output path for sample")
    _common(p)

    p = sub.add_parser("encode", help="scan -> grayscale PGM, distance map, CSV grids")
    p.add_argument("--scan", help="CSV of points (x,y,z or frame,x,y,z); default: simulate one sweep")
    p.add_argument("--scenario", help="scenario file for the simulated sweep")
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("flow", help="directory of grayscale PGM frames -> point flow CSV")
    p.add_argument("frames")
    p.add_argument("--out", required=True)
    p.add_argument("--png", action="store_true", help="also write color-coded flow images")
    _common(p)

    p = sub.add_parser("render-field", help="reshaping-coefficient field CSV + figure")
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=float, default=5.0)
    p.add_argument("--resolution", type=float, default=0.05)
    _common(p)

    p = sub.add_parser("train", help="PPO training")
    p.add_argument("--out", required=True)
    p.add_argument("--ablation", choices=("none", "no-flow", "no-dobs"), default="none")
    _common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or a baseline policy)")
    p.add_argument("--checkpoint")
    p.add_argument("--policy", choices=("checkpoint", "random", "goal-seeking"), default="checkpoint")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("bench", help="benchmarks: density | speed | latency")
    p.add_argument("kind", choices=("density", "speed", "latency"))
    p.add_argument("--checkpoint")
    p.add_argument("--policy", choices=("checkpoint", "random", "goal-seeking"), default="checkpoint")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--points", default="0,7200,14400,28800,57600")
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("replay", help="re-execute an episode log and check bitwise equality")
    p.add_argument("log")
    _common(p)
    return ap


def _provenance(cfg):
    return f"# config_hash={config_hash(cfg)} seed={cfg.seed}"


def _write_csv(path, cfg, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(_provenance(cfg) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _prepare_out(cfg, out):
    os.makedirs(out, exist_ok=True)
    dump_yaml(cfg, os.path.join(out, "config.yaml"))


def _load_scenario_file(path):
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(path, f"malformed YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("scenario", "expected a mapping")
    return W.scenario_from_dict(data)


def cmd_scenario(args, cfg):
    if args.action == "sample":
        sc = W.sample_scenario(cfg.scenario, cfg.seed)
        with open(args.file, "w") as fh:
            fh.write(f"{_provenance(cfg)}\n")
            yaml.safe_dump(W.scenario_to_dict(sc), fh, sort_keys=False)
        print(f"wrote {args.file}")
        return 0
    with open(args.file) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(args.file, f"malformed YAML: {exc}") from None
    if isinstance(data, dict) and "start" not in data:
        # a full configuration file
        load_config(args.file)
    else:
        _load_scenario_file(args.file)
    print(f"{args.file}: ok")
    return 0


def _read_scan_csv(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([float(x) for x in line.split(",")])
            except ValueError:
                continue  # header line
    if not rows:
        return {0: np.zeros((0, 3))}
    arr = np.array(rows)
    if arr.shape[1] == 3:
        return {0: arr}
    if arr.shape[1] == 4:
        return {int(f): arr[arr[:, 0] == f, 1:] for f in np.unique(arr[:, 0])}
    raise ConfigError(path, "scan CSV needs 3 (x,y,z) or 4 (frame,x,y,z) columns")


def cmd_encode(args, cfg):
    from .plotting import plot_encoding

    _prepare_out(cfg, args.out)
    if args.scan:
        frames = {k: L.ScanFrame(points=v) for k, v in _read_scan_csv(args.scan).items()}
    else:
        sc = _load_scenario_file(args.scenario) if args.scenario else W.sample_scenario(cfg.scenario, cfg.seed)
        wd = W.initial_world(sc, cfg.sim)
        frames = {0: L.scan(wd, cfg.lidar, np.random.default_rng(cfg.seed))}
    for k, fr in sorted(frames.items()):
        grid = L.encode_raycast_grid(fr, cfg.lidar)
        gray, dm = L.encode_distance_map(grid)
        tag = f"{k:04d}"
        L.write_pgm(os.path.join(args.out, f"gray_{tag}.pgm"), gray)
        L.write_pgm(os.path.join(args.out, f"distance_map_{tag}.pgm"), dm.normalized)
        _write_csv(os.path.join(args.out, f"grid_{tag}.csv"), cfg, ["m", "n", "distance"],
                   [(m + 1, n + 1, repr(float(grid.distance[m, n])))
                    for n in range(grid.distance.shape[1]) for m in range(grid.distance.shape[0])])
        _write_csv(os.path.join(args.out, f"distance_map_{tag}.csv"), cfg, ["u", "v", "distance"],
                   [(u, v, repr(float(dm.values[u, v])))
                    for v in range(dm.values.shape[1]) for u in range(dm.values.shape[0])])
        plot_encoding(gray, dm.values, os.path.join(args.out, f"encoding_{tag}.png"))
    print(f"encoded {len(frames)} frame(s) into {args.out}")
    return 0


def cmd_flow(args, cfg):
    from .plotting import plot_flow

    paths = sorted(glob.glob(os.path.join(args.frames, "*.pgm")))
    if not paths:
        raise ValidationFailure(f"{args.frames}: no .pgm frames found")
    _prepare_out(cfg, args.out)
    pipe = PointFlowPipeline(cfg.flow, 1)
    rows = []
    for k, path in enumerate(paths):
        gray = L.read_pgm(path)
        if gray.shape != (cfg.lidar.r_h, cfg.lidar.r_v):
            raise ValidationFailure(f"{path}: expected a {cfg.lidar.r_h}x{cfg.lidar.r_v} image, got {gray.shape}")
        pf = pipe.push(gray[None])[0]
        for v in range(pf.shape[2]):
            for u in range(pf.shape[1]):
                rows.append((k, u, v, repr(float(pf[0, u, v])), repr(float(pf[1, u, v]))))
        if args.png and k >= cfg.flow.warmup:
            plot_flow(pf, os.path.join(args.out, f"flow_{k:04d}.png"))
    _write_csv(os.path.join(args.out, "flow.csv"), cfg, ["frame", "u", "v", "du", "dv"], rows)
    print(f"{len(paths)} frames -> {os.path.join(args.out, 'flow.csv')}")
    return 0


def cmd_render_field(args, cfg):
    from .plotting import plot_field

    _prepare_out(cfg, args.out)
    v_quad, v_dobs = (0.0, 1.0), (1.0, 0.0)
    x, y, k, log_d = reshaped_field(args.window, args.resolution, v_quad, v_dobs)
    rows = [(repr(float(x[i])), repr(float(y[j])), repr(float(k[j, i])), repr(float(log_d[j, i])))
            for j in range(len(y)) for i in range(len(x))]
    _write_csv(os.path.join(args.out, "field.csv"), cfg, ["x", "y", "k", "log_distance"], rows)
    plot_field(x, y, k, log_d, np.zeros(2), v_dobs, v_quad, os.path.join(args.out, "field.png"))
    print(f"field grid {len(x)}x{len(y)} -> {args.out}")
    return 0


def cmd_train(args, cfg):
    from .plotting import plot_curves

    if args.ablation == "no-flow":
        cfg.train.zero_flow = True
    elif args.ablation == "no-dobs":
        cfg.train.no_dobs = True
    _prepare_out(cfg, args.out)
    meta = {"config_hash": config_hash(cfg), "ablation": args.ablation}
    _, curves = train(cfg.env_spec(), cfg.policy, cfg.train, cfg.seed, out_dir=args.out, meta=meta,
                      progress=lambda r: print(f"steps {r['env_steps']} reward {r['mean_reward']:.3f} "
                                               f"goal {r['goal_rate']:.2f}", flush=True))
    if curves:
        plot_curves(curves, os.path.join(args.out, "curves.png"))
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(dict(meta, seed=cfg.seed, curve_fields=list(CURVE_FIELDS)), fh, indent=1)
    print(f"checkpoint -> {os.path.join(args.out, 'policy.ckpt')}")
    return 0


def _policy(args, cfg):
    if args.policy == "random":
        return M.RandomPolicy(cfg.sim.a_ref, cfg.seed)
    if args.policy == "goal-seeking":
        return M.GoalSeekingPolicy(cfg.sim.a_ref, cfg.sim.v_ref * 0.8)
    if not args.checkpoint:
        raise ValidationFailure("--checkpoint is required for the checkpoint policy")
    try:
        net, meta = load_checkpoint(args.checkpoint, cfg.policy)
    except (OSError, ValueError) as exc:
        raise ValidationFailure(f"{args.checkpoint}: {exc}") from None
    # a no-flow policy never saw flow channels; evaluate it the way it was trained
    if meta.get("ablation") == "no-flow":
        cfg.train.zero_flow = True
    return M.NetworkPolicy(net, cfg.sim.a_ref)


def cmd_eval(args, cfg):
    from .plotting import plot_trajectories

    policy = _policy(args, cfg)
    _prepare_out(cfg, args.out)
    n = args.episodes or cfg.eval.episodes
    logs = M.evaluate(cfg.env_spec(), policy, n, cfg.eval.seed, cfg.eval.n_parallel, config_hash(cfg))
    M.write_logs(os.path.join(args.out, "episodes.jsonl"), logs)
    rep = M.compute_metrics(logs)
    _write_csv(os.path.join(args.out, "metrics.csv"), cfg, M.MetricsReport.columns(), [rep.row()])
    plot_trajectories(logs, os.path.join(args.out, "trajectories.png"))
    print(f"eta={rep.eta:.3f} over {rep.trials} episodes")
    return 0


def cmd_bench(args, cfg):
    from .plotting import plot_latency, plot_metric_rows

    policy = None if args.kind == "latency" else _policy(args, cfg)
    _prepare_out(cfg, args.out)
    spec = cfg.env_spec()
    trials = args.trials or cfg.eval.trials_per_cell
    h = config_hash(cfg)
    if args.kind == "latency":
        if args.checkpoint:
            net, _ = load_checkpoint(args.checkpoint, cfg.policy)
        else:
            net = ActorCritic(cfg.policy, rng=np.random.default_rng(cfg.seed))
        counts = [int(x) for x in args.points.split(",")]
        rows = M.latency_bench(counts, net, cfg.lidar, cfg.flow, seed=cfg.seed)
        _write_csv(os.path.join(args.out, "latency.csv"), cfg, ["points", "mean_ms", "p95_ms", "encode_ms"],
                   [(n, repr(a), repr(b), repr(c)) for n, a, b, c in rows])
        plot_latency(rows, os.path.join(args.out, "latency.png"))
        for n, a, b, _ in rows:
            print(f"{n:6d} points: mean {a:.2f} ms, p95 {b:.2f} ms")
        return 0
    if args.kind == "density":
        factor = cfg.eval.density_factor
        if factor < 0:
            factor = M.default_density_factor(cfg.scenario)
        res = M.benchmark(spec, policy, M.density_grid(factor), trials, cfg.eval.seed, cfg.eval.n_parallel, h)
        rows = [[label, nd, ns] + rep.row() for label, nd, ns, rep in res]
        _write_csv(os.path.join(args.out, "density.csv"), cfg, ["cell", "dynamic", "static"]
                   + M.MetricsReport.columns(), rows)
        plot_metric_rows([r[0] for r in res], [r[3].eta for r in res], os.path.join(args.out, "density.png"))
    else:
        res = M.speed_tiers(spec, policy, cfg.eval.speed_tiers, trials, cfg.eval.seed, cfg.eval.n_parallel, h)
        rows = [[f"{lo:g}-{hi:g}"] + rep.row() for (lo, hi), rep in res]
        _write_csv(os.path.join(args.out, "speed.csv"), cfg, ["tier"] + M.MetricsReport.columns(), rows)
        plot_metric_rows([r[0] for r in rows], [rep.eta for _, rep in res], os.path.join(args.out, "speed.png"))
    for r in rows:
        print(",".join(str(x) for x in r))
    return 0


def cmd_replay(args, cfg):
    try:
        logs = M.read_logs(args.log)
    except (OSError, ValueError, KeyError) as exc:
        raise ValidationFailure(f"{args.log}: {exc}") from None
    res = M.replay(logs)
    print(res.message)
    return 0 if res.ok else 2


COMMANDS = {
    "scenario": cmd_scenario,
    "encode": cmd_encode,
    "flow": cmd_flow,
    "render-field": cmd_render_field,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "replay": cmd_replay,
}


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        cfg = load_config(args.config, args.override, args.seed)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ValidationFailure as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        if getattr(exc, "filename", None) and not os.path.exists(exc.filename):
            print(f"invalid input: {exc}", file=sys.stderr)
            return 1
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FlowFlightError, Exception) as exc:  # noqa: BLE001 - runtime failure boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())
