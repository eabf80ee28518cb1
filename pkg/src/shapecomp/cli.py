"""Command-line entry point: gen-data | train | sample | render-views | eval.

Exit codes: 0 success, 1 usage error, 2 data error.  Logs go to stderr as
one JSON object per line; artifacts go under ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, dump_config, load_config, seed_sequence
from .data import make_object, read_dataset, write_dataset
from .denoiser import TinyDenoiser, load_checkpoint, save_checkpoint
from .diffusion import generate, linear_schedule
from .grid import GridSpec, OccupancyGrid, anchored_spec, condition_split, voxelize
from .mesh import grid_to_points, marching_cubes
from .metrics import evaluate
from .render import W_MIN, render_view
from .training import TrainConfig, TrainingDiverged, train

log = logging.getLogger("shapecomp")

SUBCOMMANDS = ("gen-data", "train", "sample", "render-views", "eval")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; we reserve 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


class JsonLineFormatter(logging.Formatter):
    def format(self, record):
        entry = {"ts": round(record.created, 3), "level": record.levelname.lower(), "msg": record.getMessage()}
        entry.update(getattr(record, "fields", {}))
        return json.dumps(entry, sort_keys=True)


def _setup_logging(verbose: bool):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    log.handlers[:] = [handler]
    log.setLevel(logging.DEBUG if verbose else logging.INFO)
    log.propagate = False


def _info(msg, **fields):
    log.info(msg, extra={"fields": fields})


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"path does not exist: {p}")
    return p


def _ckpt_prefix(path) -> str:
    s = str(path)
    for suffix in (".ckpt.json", ".ckpt.bin", ".ckpt"):
        if s.endswith(suffix):
            s = s[: -len(suffix)]
    if not Path(s + ".ckpt.json").exists() or not Path(s + ".ckpt.bin").exists():
        raise DataError(f"checkpoint not found: {s}.ckpt.json / {s}.ckpt.bin")
    return s


def _config(args) -> RunConfig:
    path = None if args.config is None else _existing(args.config)
    return load_config(path, seed=args.seed)


def _write_csv(path, rows):
    cols = ["id", "category", "P", "R", "F1", "EMD", "CD", "UHD", "MMD", "TMD", "tau", "seed"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], str) else repr(r[c]) for c in cols])


def _csv_row(obj_id, category, rep, tau, seed) -> dict:
    return {"id": obj_id, "category": category, "P": rep.precision, "R": rep.recall, "F1": rep.f1,
            "EMD": rep.emd, "CD": rep.chamfer, "UHD": rep.uhd, "MMD": rep.mmd, "TMD": rep.tmd,
            "tau": tau, "seed": seed}


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(phase1_epochs=cfg.phase1_epochs, phase2_epochs=cfg.phase2_epochs, batch_size=cfg.batch_size,
                       lr=cfg.lr, seed=int(cfg.stream("train").integers(2**63)), lambdas=cfg.lambdas, T=cfg.T,
                       beta0=cfg.beta0, betaT=cfg.betaT, channels=cfg.channels, emb_dim=cfg.emb_dim,
                       render_mode=cfg.render_mode, render_samples=cfg.render_samples,
                       render_pixels=cfg.render_pixels, ratio=cfg.ratio)


def object_kwargs(cfg: RunConfig) -> dict:
    return dict(n_views=cfg.n_views, image_size=cfg.image_size, dims=cfg.grid_dims, voxel_size=cfg.voxel_size,
                K=cfg.K, noise_sigma=cfg.noise_sigma, dropout_p=cfg.dropout_p, max_points=cfg.max_points,
                blur_radius=cfg.blur_radius, ratio=cfg.ratio)


# -- subcommands --------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    seeds = seed_sequence(cfg.seed, "data").spawn(cfg.n_objects)
    objects = []
    for i in range(cfg.n_objects):
        cat = cfg.categories[i % len(cfg.categories)]
        obj = make_object(f"obj_{i:04d}", cat, seeds[i], **object_kwargs(cfg))
        objects.append(obj)
        _info("object generated", id=obj.object_id, category=cat, gt_voxels=obj.gt.count())
    write_dataset(out, objects, {"config": cfg.to_dict(), "K": cfg.K, "format": 1})
    _info("dataset written", out=str(out), n_objects=len(objects))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    data = _existing(args.data)
    if not (data / "manifest.json").exists():
        raise DataError(f"{data} has no manifest.json")
    objects, _ = read_dataset(data)
    tcfg = train_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(epoch, phase, loss):
        log.debug("epoch", extra={"fields": {"epoch": epoch, "phase": phase, "loss": loss}})

    try:
        result = train(objects, tcfg, callback=progress)
        params, status = result.params, "ok"
    except TrainingDiverged as e:
        result, params, status = e.result, e.last_good, "diverged"
        log.error("training diverged; saving last good parameters", extra={"fields": {"detail": str(e)}})
    save_checkpoint(out / args.name, params, seed=cfg.seed,
                    extra={"schedule": {"T": cfg.T, "beta0": cfg.beta0, "betaT": cfg.betaT},
                           "grid": {"dims": list(cfg.grid_dims), "voxel_size": cfg.voxel_size, "K": cfg.K},
                           "status": status})
    _write_json(out / f"{args.name}.losses.json", {"losses": result.losses, "phases": result.phases})
    dump_config(cfg, out / f"{args.name}.config.json")
    _info("checkpoint written", path=str(out / args.name), epochs=len(result.losses),
          first_loss=result.losses[0] if result.losses else None,
          last_loss=result.losses[-1] if result.losses else None)
    return 0 if status == "ok" else 2


def _spec_from_header(path) -> GridSpec:
    h = io.read_grid_header(_existing(path))
    return GridSpec(tuple(h["dims"]), float(h["voxel_size"]), tuple(h["origin"]))


def complete(params, header, x0: OccupancyGrid, rng, mode: str) -> OccupancyGrid:
    sched_h = header.get("schedule", {})
    sched = linear_schedule(int(header["architecture"]["T"]), float(sched_h.get("beta0", 2e-3)),
                            float(sched_h.get("betaT", 0.4)))
    return generate(TinyDenoiser(params), x0, condition_split(x0), sched, rng, mode)


def _surface(grid: OccupancyGrid, n: int, rng) -> np.ndarray:
    if len(marching_cubes(grid)) == 0:
        return np.zeros((0, 3))
    return grid_to_points(grid, n, rng).points


def cmd_sample(args) -> int:
    cfg = _config(args)
    params, header = load_checkpoint(_ckpt_prefix(args.ckpt))
    pc = io.read_point_cloud(_existing(args.input))
    if len(pc.points) == 0:
        raise DataError(f"{args.input} holds no points")
    spec = _spec_from_header(args.grid) if args.grid else anchored_spec(pc, cfg.grid_dims, cfg.voxel_size)
    K = int(header.get("grid", {}).get("K", cfg.K))
    x0 = voxelize(pc, spec, K)
    if x0.count() == 0:
        raise DataError("input point cloud does not intersect the grid")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = cfg.stream("sample")
    for k in range(args.k):
        grid = complete(params, header, x0, rng, cfg.sampler_mode)
        io.save_grid(out / f"sample_{k}", grid, extra={"seed": cfg.seed, "sampler_mode": cfg.sampler_mode})
        io.write_ply(out / f"sample_{k}.ply", _surface(grid, cfg.eval_points, rng))
        _info("completion written", index=k, voxels=grid.count(), input_voxels=x0.count())
    return 0


def cmd_render_views(args) -> int:
    cfg = _config(args)
    grid = io.load_grid(_existing(args.grid))
    if not args.camera:
        raise UsageError("render-views needs at least one --camera")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, path in enumerate(args.camera):
        cam = io.read_camera_json(_existing(path))
        r = render_view(grid, cam, cfg.render_samples, cfg.render_mode)
        shape = (cam.height, cam.width)
        sil = r.silhouette.reshape(shape)
        depth = r.depth.reshape(shape)
        io.write_pgm(out / f"view_{k}.pgm", sil >= 0.5)
        io.write_pfm(out / f"view_{k}.pfm", depth, sil < W_MIN)
        _info("view rendered", index=k, coverage=float(np.mean(sil >= 0.5)))
    return 0


def _load_cloud(path, n, rng) -> np.ndarray:
    p = str(_existing(path))
    if p.endswith(".ply"):
        return io.read_point_cloud(p).points
    return _surface(io.load_grid(p), n, rng)


def _report(comps, gt, partial, cfg, obj_id, category) -> tuple[dict, dict]:
    comps = [c for c in comps if len(c)]
    if not comps:
        raise DataError(f"{obj_id}: every completion is empty")
    rep = evaluate(comps, gt, partial, cfg.tau, cfg.max_exact, seed=cfg.seed)
    rep.meta.update({"id": obj_id, "category": category})
    return rep.to_dict(), _csv_row(obj_id, category, rep, cfg.tau, cfg.seed)


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    rng = cfg.stream("eval")
    rows = []
    if args.data is not None:
        if args.ckpt is None:
            raise UsageError("eval --data needs --ckpt")
        params, header = load_checkpoint(_ckpt_prefix(args.ckpt))
        objects, _ = read_dataset(_existing(args.data))
        out.mkdir(parents=True, exist_ok=True)
        srng = cfg.stream("sample")
        for obj in objects:
            x0 = obj.view_grid(cfg.eval_view)
            comps = [_surface(complete(params, header, x0, srng, cfg.sampler_mode), cfg.eval_points, rng)
                     for _ in range(cfg.eval_k)]
            gt = _surface(obj.gt, cfg.eval_points, rng)
            rep, row = _report(comps, gt, obj.clouds[cfg.eval_view].points, cfg, obj.object_id, obj.category)
            _write_json(out / f"{obj.object_id}.report.json", rep)
            rows.append(row)
            _info("object evaluated", id=obj.object_id, f1=row["F1"])
    else:
        if not args.pred or args.gt is None:
            raise UsageError("eval needs --pred and --gt (or --data with --ckpt)")
        comps = [_load_cloud(p, cfg.eval_points, rng) for p in args.pred]
        gt = _load_cloud(args.gt, cfg.eval_points, rng)
        if len(gt) == 0:
            raise DataError("ground-truth cloud is empty")
        partial = None if args.partial is None else _load_cloud(args.partial, cfg.eval_points, rng)
        out.mkdir(parents=True, exist_ok=True)
        rep, row = _report(comps, gt, partial, cfg, args.id, args.category)
        _write_json(out / f"{args.id}.report.json", rep)
        rows.append(row)
        _info("evaluated", id=args.id, f1=row["F1"])
    _write_csv(out / "summary.csv", rows)
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shapecomp", description="Self-supervised voxel diffusion for shape completion.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_Parser)

    def common(p, ckpt=False):
        p.add_argument("--config", help="JSON run configuration (unknown keys are rejected)")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="master seed, overrides the config value")
        if ckpt:
            p.add_argument("--ckpt", help="checkpoint prefix (<name>.ckpt.json + <name>.ckpt.bin)")

    p = sub.add_parser("gen-data", help="simulate scanned objects and write a dataset")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the tiny denoiser on a dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory written by gen-data")
    p.add_argument("--name", default="model", help="checkpoint name inside --out (default: model)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="complete a partial point cloud")
    common(p, ckpt=True)
    p.add_argument("--input", required=True, help="partial point cloud (ASCII PLY)")
    p.add_argument("--grid", help="grid header (.grid.json) fixing the voxel frame; default anchors on the input")
    p.add_argument("-k", type=int, default=1, help="number of completions (default: 1)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("render-views", help="render silhouettes and depth maps of a grid")
    common(p)
    p.add_argument("--grid", required=True, help="occupancy grid (.grid.json)")
    p.add_argument("--camera", action="append", default=[], help="camera JSON; repeat for several views")
    p.set_defaults(func=cmd_render_views)

    p = sub.add_parser("eval", help="score completions against ground truth")
    common(p, ckpt=True)
    p.add_argument("--pred", action="append", default=[], help="completion (PLY or .grid.json); repeat for k > 1")
    p.add_argument("--gt", help="ground truth (PLY or .grid.json)")
    p.add_argument("--partial", help="partial input for UHD (default: the GT cloud)")
    p.add_argument("--data", help="dataset directory: complete and score every object (needs --ckpt)")
    p.add_argument("--id", default="object", help="object id for the report (default: object)")
    p.add_argument("--category", default="unknown", help="category for the report (default: unknown)")
    p.set_defaults(func=cmd_eval)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    _setup_logging(args.verbose)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except UsageError as e:
        print(f"shapecomp {args.command}: {e}", file=sys.stderr)
        return 1
    except (DataError, ConfigError, FileNotFoundError, ValueError) as e:
        log.error(str(e), extra={"fields": {"command": args.command, "kind": type(e).__name__}})
        return 2
    _info("done", command=args.command, seconds=round(time.perf_counter() - t0, 3))
    return code


def main():
    sys.exit(run())
