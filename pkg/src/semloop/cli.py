"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
input, config or checkpoint mismatch), 3 numerical failure.

Relative paths are resolved against ``--dataset-root`` for commands that
take one. For ``train`` and ``ablate``, command line flags override values
from the ``--config`` file, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import cache, pipeline
from .cache import CacheError
from .config import ABLATIONS, ConfigError, TrainConfig, config_hash, load_train_config
from .evaluator import PERTURBATIONS, evaluate, write_report
from .graph import build_graph
from .ingest import ScanFormatError, list_scans, read_pairs, scan_paths
from .metrics import summarize
from .posegraph import GraphError, Trajectory, read_trajectory, write_trajectory
from .registration import DegenerateError, register, write_record
from .synth import COARSE_LIDAR, DENSE_LIDAR, synth_scenes
from .trainer import (
    ArchitectureError, GraphTable, NumericalError, load_checkpoint, predict_pairs, save_checkpoint, train,
)

log = logging.getLogger("semloop")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
LIDARS = {"coarse": COARSE_LIDAR, "dense": DENSE_LIDAR}


class DataError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolve(path, root):
    if path is None:
        return None
    path = Path(path)
    return path if root is None or path.is_absolute() else Path(root) / path


def _hash_bytes(h: str) -> bytes:
    return bytes.fromhex(h)[:16].ljust(16, b"\0")


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    root = Path(args.out)
    if args.kind == "revisit":
        lidar = LIDARS[args.lidar]
        data = synth_scenes(args.seed, args.places, n_pairs=args.pairs, lidar=lidar, seq_id=args.seq)
        pipeline.write_revisit_dataset(root, args.seq, data, lidar, kind="revisit", seed=args.seed)
        print(f"wrote {len(data.scans)} scans and {len(data.pairs)} pairs to {root / args.seq}")
    else:
        info = pipeline.write_square_dataset(root, args.seq, args.seed, args.side, args.step,
                                             render_every=args.render_every)
        print(f"wrote square loop of {info['n_scans']} frames to {root / args.seq}; "
              f"odometry endpoint drift {info['endpoint_drift']:.3f} m")
    return EXIT_OK


# ---------------------------------------------------------------------------
# build-graphs


def cmd_build_graphs(args) -> int:
    root = Path(args.dataset_root)
    out = _resolve(args.out, root)
    settings = {"max_nodes": args.max_nodes, "seed": args.seed, "subsample": "random"}
    todo, missing = [], []
    for seq in args.seq:
        meta = pipeline.read_dataset_meta(root, seq)
        indices = list_scans(root, seq)
        if not indices:
            missing.append(str(root / seq / "velodyne" / "*.bin"))
        for k in indices:
            for p in scan_paths(root, seq, k):
                if not p.exists():
                    missing.append(str(p))
        todo.append((seq, meta, indices))
    if missing:
        for m in missing:
            print(f"missing: {m}", file=sys.stderr)
        raise DataError(f"{len(missing)} input file(s) missing")
    for seq, meta, indices in todo:
        h = config_hash({**settings, "class_map": meta["class_map"]})
        counts = []
        for k in indices:
            cloud = pipeline.load_cloud(root, seq, k, meta)
            g = build_graph(cloud, max_nodes=args.max_nodes, seed=args.seed + k)
            cache.cache_graph(g, cache.graph_path(out, seq, k), _hash_bytes(h))
            counts.append(g.num_nodes)
        counts = np.array(counts)
        print(f"seq {seq}: {len(counts)} graphs -> {out / seq} (config {h})")
        print(f"  nodes min={counts.min()} mean={counts.mean():.1f} max={counts.max()}")
        edges = np.arange(0, args.max_nodes + 11, 10)
        hist, _ = np.histogram(counts, bins=edges)
        for lo, n in zip(edges[:-1], hist):
            print(f"  {lo:3d}-{lo + 9:3d} {n:5d} " + "#" * int(np.ceil(40 * n / max(len(counts), 1))))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / eval / ablate


def _train_config(args) -> TrainConfig:
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    over = {k: getattr(args, k) for k in ("seed", "epochs", "learning_rate", "batch_size")
            if getattr(args, k, None) is not None}
    return dataclasses.replace(cfg, **over) if over else cfg


def _load_pairs(paths, root=None):
    pairs = []
    for p in paths:
        p = _resolve(p, root)
        if not p.exists():
            raise DataError(f"pairs file not found: {p}")
        pairs.extend(read_pairs(p))
    if not pairs:
        raise DataError("no pairs to work on")
    return pairs


def _load_graphs(graph_root, pairs):
    graphs, missing = cache.load_graphs(graph_root, pairs)
    if missing:
        shown = ", ".join(f"{s}/{k:06d}" for s, k in missing[:5])
        more = ", ..." if len(missing) > 5 else ""
        raise DataError(f"graph cache {graph_root} lacks {len(missing)} scan(s) ({shown}{more}); "
                        "run build-graphs for these sequences first")
    return graphs


def cmd_train(args) -> int:
    cfg = _train_config(args)
    pairs = _load_pairs(args.pairs)
    graphs = _load_graphs(Path(args.graphs), pairs)
    out = Path(args.out)
    h = config_hash(cfg.to_dict())
    log_path = out.with_suffix(".log")
    ckpt = train(cfg, pairs, graphs, log_path=log_path, dump_dir=out.parent)
    save_checkpoint(ckpt, out)
    last = ckpt.history[-1]
    print(f"config_hash={h}")
    print(f"checkpoint={out}")
    print(f"epochs={len(ckpt.history)} loss={last['loss']:.6f} train_f1={last['train_f1']:.4f} threshold={ckpt.threshold:.6f}")
    if args.plot:
        from .plotting import plot_history
        plot_history(ckpt.history, args.plot, meta={"config_hash": h})
    return EXIT_OK


def _num_classes(graphs):
    return next(iter(graphs.values())).num_classes


def cmd_eval(args) -> int:
    root = args.dataset_root
    pairs = _load_pairs(args.pairs, root)
    graphs = _load_graphs(_resolve(args.graphs, root), pairs)
    ckpt = load_checkpoint(_resolve(args.checkpoint, root), num_classes=_num_classes(graphs))
    model = ckpt.build_model()
    clouds = None
    if args.perturb != "none":
        if root is None:
            raise DataError("--perturb needs --dataset-root to read the raw scans")
        keys = sorted({(p.seq_id, k) for p in pairs for k in (p.i, p.j)})
        metas = {s: pipeline.read_dataset_meta(root, s) for s in {s for s, _ in keys}}
        clouds = {(s, k): pipeline.load_cloud(root, s, k, metas[s]) for s, k in keys}
    report = evaluate(model, pairs, graphs, clouds, perturb=args.perturb, seed=args.seed,
                      perturb_both=args.perturb_both, max_nodes=ckpt.config.max_nodes)
    ck_hash = config_hash(ckpt.config.to_dict())
    h = config_hash({"checkpoint": ck_hash, "perturb": args.perturb, "seed": args.seed, "both": args.perturb_both})
    out = _resolve(args.out, root)
    write_report(report, out, h, extra={"checkpoint_hash": ck_hash})
    print(f"config_hash={h}")
    print(f"report={out}")
    print(f"n_pairs={report['n_pairs']} max_f1={report['max_f1']:.6f} auc={report['auc']:.6f}")
    if args.plot:
        from .plotting import plot_pr_curves
        plot_pr_curves({f"perturb={args.perturb}": report["curve"]}, _resolve(args.plot, root),
                       meta={"config_hash": h})
    return EXIT_OK


def cmd_ablate(args) -> int:
    base = _train_config(args)
    train_pairs = _load_pairs(args.pairs)
    test_pairs = _load_pairs(args.test_pairs)
    graphs = _load_graphs(Path(args.graphs), train_pairs + test_pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash({"base": base.to_dict(), "variants": list(ABLATIONS)})
    rows = {}
    for name, toggles in ABLATIONS.items():
        cfg = dataclasses.replace(base, model=dataclasses.replace(base.model, **toggles))
        ckpt = train(cfg, train_pairs, graphs, log_path=out / f"{name}.log")
        save_checkpoint(ckpt, out / f"{name}.npz")
        model = ckpt.build_model()
        scores = predict_pairs(model, test_pairs, GraphTable(graphs, model.dtype))
        s = summarize(scores, [p.label for p in test_pairs])
        rows[name] = s
        print(f"{name:14s} max_f1={s['max_f1']:.4f} auc={s['auc']:.4f}")
    with open(out / "ablation.csv", "w") as fh:
        fh.write(f"# config_hash={h}\n")
        fh.write("variant,diff,gat,geo,att,max_f1,auc\n")
        for name, s in rows.items():
            t = ABLATIONS[name]
            fh.write(f"{name},{int(t['diff'])},{int(t['gat'])},{int(t['geo'])},{int(t['att'])},"
                     f"{s['max_f1']!r},{s['auc']!r}\n")
    print(f"config_hash={h}")
    if args.plot:
        from .plotting import plot_bars, plot_pr_curves
        plot_bars({k: v["max_f1"] for k, v in rows.items()}, out / "ablation_f1.png", meta={"config_hash": h})
        plot_pr_curves({k: v["curve"] for k, v in rows.items()}, out / "ablation_pr.png", meta={"config_hash": h})
    return EXIT_OK


# ---------------------------------------------------------------------------
# register / loop-close


def cmd_register(args) -> int:
    root = Path(args.dataset_root)
    meta = pipeline.read_dataset_meta(root, args.seq)
    params = pipeline.registration_params(meta, fitness_threshold=args.fitness_threshold)
    src = pipeline.load_cloud(root, args.seq, args.source, meta)
    tgt = pipeline.load_cloud(root, args.seq, args.target, meta)
    res = register(src, tgt, params=params)
    h = config_hash(dataclasses.asdict(params))
    accepted = res.fitness < params.fitness_threshold and res.overlap >= params.min_overlap
    out = _resolve(args.out, root)
    write_record(res, out, config_hash=h, seq=args.seq, source=args.source, target=args.target, accepted=accepted)
    print(f"config_hash={h}")
    print(f"fitness={res.fitness:.6f} overlap={res.overlap:.3f} converged={res.converged} accepted={accepted}")
    print("translation=" + " ".join(f"{x:.6f}" for x in res.pose.translation))
    return EXIT_OK


def cmd_loop_close(args) -> int:
    root = Path(args.dataset_root)
    base = root / args.seq
    ckpt = load_checkpoint(_resolve(args.checkpoint, root))
    odo_path = base / "odometry.txt"
    if not odo_path.exists():
        odo_path = base / "poses.txt"
    if not odo_path.exists():
        raise DataError(f"{base}: neither odometry.txt nor poses.txt found")
    odometry = read_trajectory(odo_path).poses
    params = pipeline.LoopCloseParams(
        keyframe_every=args.keyframe_every, min_gap=args.min_gap,
        threshold=ckpt.threshold if args.threshold is None else args.threshold,
        fitness_threshold=args.fitness_threshold, min_overlap=args.min_overlap, max_nodes=ckpt.config.max_nodes,
    )
    frames = pipeline.keyframes(len(odometry), params.keyframe_every)
    missing = [str(p) for k in frames for p in scan_paths(root, args.seq, k) if not p.exists()]
    if missing:
        for m in missing:
            print(f"missing: {m}", file=sys.stderr)
        raise DataError(f"{len(missing)} keyframe file(s) missing")
    meta, clouds, gt, _ = pipeline.load_sequence(root, args.seq, frames)
    reg_params = pipeline.registration_params(meta, fitness_threshold=params.fitness_threshold,
                                              min_overlap=params.min_overlap)
    h = config_hash({"checkpoint": config_hash(ckpt.config.to_dict()), "loop": dataclasses.asdict(params),
                     "registration": dataclasses.asdict(reg_params), "odometry": odo_path.name})
    result = pipeline.loop_close(ckpt.build_model(), clouds, odometry, params, reg_params)
    if gt is not None and len(gt) != len(odometry):
        log.warning("ground truth has %d poses, odometry %d; skipping ATE", len(gt), len(odometry))
        gt = None
    summary = pipeline.summarize_run(result, gt)

    out = _resolve(args.out, root)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(result.trajectory, out / "trajectory.txt", header=f"config_hash={h}\n")
    with open(out / "candidates.csv", "w") as fh:
        fh.write(f"# config_hash={h}\n")
        fh.write("i,j,score,registered,fitness,overlap,accepted\n")
        for c in result.candidates:
            fh.write(f"{c.i},{c.j},{c.score!r},{int(c.registered)},{c.fitness!r},{c.overlap!r},{int(c.accepted)}\n")
    lines = [f"config_hash={h}", f"threshold={params.threshold!r}"]
    lines += [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in summary.items()]
    if not result.loops:
        lines.append("note=no loop closures accepted; trajectory equals the odometry input")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if args.plot:
        from .plotting import plot_trajectories
        trajs = {"optimized": result.trajectory.positions(), "odometry": result.odometry.positions()}
        if gt is not None:
            trajs["ground truth"] = Trajectory(gt).positions()
        plot_trajectories(trajs, out / "trajectory.png", loops=[(c.i, c.j) for c in result.loops],
                          meta={"config_hash": h})
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = Parser(prog="semloop", description="Semantic graph loop closure for labelled LiDAR scans.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("kind", choices=["revisit", "square"])
    p.add_argument("--out", required=True, help="dataset root")
    p.add_argument("--seq", default="00")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--places", type=int, default=100, help="revisit: number of places")
    p.add_argument("--pairs", type=int, default=200, help="revisit: number of labelled pairs")
    p.add_argument("--lidar", choices=sorted(LIDARS), default="coarse", help="revisit: sensor model")
    p.add_argument("--side", type=float, default=40.0, help="square: side length in m")
    p.add_argument("--step", type=float, default=2.0, help="square: distance between frames in m")
    p.add_argument("--render-every", type=int, default=1, help="square: render only every Nth scan")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-graphs", help="cache one semantic graph per scan")
    p.add_argument("--dataset-root", required=True)
    p.add_argument("--seq", required=True, action="append", help="sequence id (repeatable)")
    p.add_argument("--out", required=True, help="graph cache directory")
    p.add_argument("--max-nodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0, help="base seed for node subsampling")
    p.set_defaults(func=cmd_build_graphs)

    def train_flags(p):
        p.add_argument("--config", help="YAML training config")
        p.add_argument("--graphs", required=True, help="graph cache directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--batch-size", type=int)

    p = sub.add_parser("train", help="train encoder and comparator")
    train_flags(p)
    p.add_argument("--pairs", required=True, action="append", help="pairs CSV (repeatable)")
    p.add_argument("--out", required=True, help="checkpoint path (.npz); the epoch log goes next to it")
    p.add_argument("--plot", help="write a training-curve image here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score pairs and write a PR report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", required=True, action="append")
    p.add_argument("--graphs", required=True)
    p.add_argument("--dataset-root", help="needed for perturbations; relative paths resolve against it")
    p.add_argument("--perturb", choices=PERTURBATIONS, default="none")
    p.add_argument("--perturb-both", action="store_true", help="perturb both scans of a pair")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report file")
    p.add_argument("--plot", help="write the PR curve image here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare the five ablation variants")
    train_flags(p)
    p.add_argument("--pairs", required=True, action="append", help="training pairs CSV")
    p.add_argument("--test-pairs", required=True, action="append", help="held-out pairs CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("register", help="register two scans of a sequence")
    p.add_argument("--dataset-root", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--source", type=int, required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--fitness-threshold", type=float, default=0.3)
    p.add_argument("--out", required=True, help="JSON record")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("loop-close", help="detect loops, register them and optimize the pose graph")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset-root", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--threshold", type=float, help="classifier threshold (default: the checkpoint's)")
    p.add_argument("--keyframe-every", type=int, default=5)
    p.add_argument("--min-gap", type=int, default=30, help="minimum frame gap of a candidate pair")
    p.add_argument("--fitness-threshold", type=float, default=0.3)
    p.add_argument("--min-overlap", type=float, default=0.4)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_loop_close)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericalError, DegenerateError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ConfigError, ArchitectureError, CacheError, ScanFormatError, GraphError,
            FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
