"""``dtstereo`` command line: synth, stereo, fuse, nms, pool-bench, eval.

Every flag can also come from a YAML ``--config`` file, either at the top
level or under a section named after the subcommand; flags given on the
command line win. Exit codes: 0 success, 2 usage error, 3 data error (with a
one-line JSON error record on stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from .bev_pool import BENCH_FIELDS as POOL_FIELDS
from .bev_pool import GridSpec, bench_pool, pool_v1, pool_v2, random_inputs, save_grid
from .data import FeatureMap, OffsetField
from .fusion import ON_MISSING, fuse_sequence, load_manifest, make_plan, save_manifest
from .io import read_grid, write_csv, write_grid
from .metrics import center_recall, depth_metrics
from .nms import BENCH_FIELDS as NMS_FIELDS
from .nms import NmsConfig, VARIANTS, bench_nms, read_boxes_csv, write_boxes_csv
from .stereo import DynamicTemporalStereo, StereoConfig, expected_depth, mono_distribution
from .synth import LAYOUTS, RenderConfig, TrajectoryConfig, default_scene, make_nms_corpus, render_sequence

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3

# files whose content is wall-clock time; excluded from the determinism contract
TIMING_SUFFIX = "_timing.csv"


class DataError(Exception):
    """Input files are missing, malformed or inconsistent."""


# ---------------------------------------------------------------------------
# argument parsing


def _stereo_flags(p):
    g = p.add_argument_group("stereo engine")
    for f in fields(StereoConfig):
        kind = int if f.type in ("int", int) else float
        g.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind, default=None)


def _grid_flags(p, nx=64, ny=64, cell=1.0, origin=(-32.0, 0.0)):
    g = p.add_argument_group("BEV grid")
    g.add_argument("--nx", type=int, default=nx)
    g.add_argument("--ny", type=int, default=ny)
    g.add_argument("--cell-size", type=float, default=cell)
    g.add_argument("--origin", type=float, nargs=2, default=list(origin), metavar=("X", "Y"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtstereo", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--config", type=Path, default=None, help="YAML file supplying flag defaults")
    parser.add_argument("--deterministic", action="store_true", help="canonical accumulation order")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--out-dir", type=Path, default=Path("out"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic sequence into a manifest")
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--moving", action="store_true", help="add the moving car")
    p.add_argument("--static-ego", action="store_true")
    p.add_argument("--noise", type=float, default=0.0, help="feature noise amplitude")
    p.add_argument("--mono-noise", type=float, default=RenderConfig.mono_noise)

    p = sub.add_parser("stereo", help="iteration sweep on the newest frame pair")
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--noise", type=float, default=0.0, help="extra feature noise amplitude")
    p.add_argument("--offsets", choices=("zero", "gt"), default="zero")
    p.add_argument("--dump", action="store_true", help="write mu/sigma/distribution grids")
    _stereo_flags(p)

    p = sub.add_parser("fuse", help="sliding-window fusion into a BEV grid")
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--group-size", type=int, default=2)
    p.add_argument("--interval", type=int, default=0)
    p.add_argument("--frames", type=int, default=None, help="use only the newest N frames")
    p.add_argument("--on-missing", choices=ON_MISSING, default="error")
    _grid_flags(p)
    _stereo_flags(p)

    p = sub.add_parser("nms", help="run the NMS variants on a box corpus")
    p.add_argument("--boxes", type=Path, default=None, help="box CSV; default generates --layout")
    p.add_argument("--layout", choices=LAYOUTS, default="fig-left-overlap")
    p.add_argument("--n", type=int, default=200, help="boxes for the random layouts")
    p.add_argument("--w", type=float, default=NmsConfig.w)
    p.add_argument("--radius", type=float, default=NmsConfig.radius)
    p.add_argument("--iou-threshold", type=float, default=NmsConfig.iou_threshold)
    p.add_argument("--class-agnostic", action="store_true")
    p.add_argument("--bench", action="store_true", help="also time every variant")
    p.add_argument("--repeats", type=int, default=30)

    p = sub.add_parser("pool-bench", help="time voxel pooling v1 against v2")
    p.add_argument("--sizes", nargs="+", default=["20000x32x64", "100000x32x64"], metavar="PxBxC")
    p.add_argument("--repeats", type=int, default=30)
    p.add_argument("--warmup", type=int, default=2)
    _grid_flags(p, 128, 128, 0.5, (0.0, 0.0))

    p = sub.add_parser("eval", help="depth metrics or center recall")
    p.add_argument("--pred", type=Path, help="predicted depth grid (.bin)")
    p.add_argument("--gt", type=Path, help="ground-truth depth grid (.bin)")
    p.add_argument("--mask", type=Path, default=None, help="validity grid (.bin), nonzero = use")
    p.add_argument("--pred-boxes", type=Path, default=None)
    p.add_argument("--gt-boxes", type=Path, default=None)
    p.add_argument("--thresholds", type=float, nargs="+", default=[0.5, 1.0, 2.0, 4.0])
    p.add_argument("--min-speed", type=float, default=None)
    return parser


def _config_defaults(path: Path | None, command: str) -> dict:
    if path is None:
        return {}
    try:
        doc = yaml.safe_load(path.read_text()) or {}
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except yaml.YAMLError as e:
        raise DataError(f"config file is not valid YAML: {e}") from None
    if not isinstance(doc, dict):
        raise DataError("config file must hold a mapping")
    section = doc.get(command) or {}
    flat = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    flat.update(section)
    return {k.replace("-", "_"): v for k, v in flat.items()}


_PATH_DESTS = ("out_dir", "manifest", "boxes", "pred", "gt", "mask", "pred_boxes", "gt_boxes")


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    defaults = _config_defaults(args.config, args.command)
    if defaults:
        unknown = sorted(set(defaults) - set(vars(args)))
        if unknown:
            parser.error(f"unknown keys in config file: {', '.join(unknown)}")
        top = {a.dest for a in parser._actions if a.option_strings}
        sub = parser._subparsers._group_actions[0].choices[args.command]
        parser.set_defaults(**{k: v for k, v in defaults.items() if k in top})
        sub.set_defaults(**{k: v for k, v in defaults.items() if k not in top})
        args = parser.parse_args(argv)
    for dest in _PATH_DESTS:
        if isinstance(getattr(args, dest, None), str):
            setattr(args, dest, Path(getattr(args, dest)))
    return args


# ---------------------------------------------------------------------------
# helpers


def _stereo_config(args) -> StereoConfig:
    given = {f.name: getattr(args, f.name) for f in fields(StereoConfig) if getattr(args, f.name, None) is not None}
    return StereoConfig.from_dict(given)


def _grid(args) -> GridSpec:
    return GridSpec(args.nx, args.ny, args.cell_size, tuple(args.origin))


def _manifest_path(args) -> Path:
    return args.manifest or args.out_dir / "manifest.json"


def _load_frames(args):
    path = _manifest_path(args)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    try:
        return load_manifest(path)
    except (KeyError, ValueError, OSError) as e:
        raise DataError(f"cannot read manifest {path}: {e}") from None


def _mode(args) -> str:
    return "deterministic" if args.deterministic else "parallel"


def _say(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    if args.frames < 2:
        raise DataError("--frames must be at least 2")
    scene = default_scene(args.seed, moving=args.moving)
    traj = TrajectoryConfig(n_frames=args.frames, static_ego=args.static_ego)
    rcfg = RenderConfig(noise=args.noise, mono_noise=args.mono_noise)
    frames = render_sequence(scene, traj, rcfg)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    scene.save(out / "scene.json")
    records = []
    for f in frames:
        f.record.extras.update(gt_depth=f.gt_depth, gt_du=f.gt_offsets.du, gt_dv=f.gt_offsets.dv,
                               gt_valid=f.valid.astype(np.float32))
        records.append(f.record)
    save_manifest(out, records, {"seed": args.seed, "scene": "scene.json"})
    n_valid = int(sum(f.valid.sum() for f in frames))
    _say(f"synth: frames={len(frames)} boxes={len(scene.boxes)} moving={sum(b.moving for b in scene.boxes)} "
         f"valid_pixels={n_valid} out={out}")
    return EXIT_OK


def _gt_of(frame):
    try:
        gt = frame.extras["gt_depth"]
    except KeyError:
        raise DataError("manifest frames carry no gt_depth grid") from None
    valid = frame.extras.get("gt_valid", (gt > 0).astype(np.float32)) > 0.5
    return gt.astype(np.float64), valid & (gt > 0)


def cmd_stereo(args) -> int:
    frames, _ = _load_frames(args)
    if len(frames) < 2:
        raise DataError("stereo needs at least two frames")
    base = _stereo_config(args)
    ref, src = frames[-1], frames[-2]
    if args.noise > 0:
        rng = np.random.default_rng(args.seed)
        noisy = []
        for f in (ref, src):
            vals = f.features.values + args.noise * rng.standard_normal(f.features.values.shape)
            noisy.append(type(f)(f.timestamp, f.camera, FeatureMap(vals.astype(np.float32), f.features.valid_mask),
                                 f.mono_mu, f.mono_sigma, f.ego_pose, f.extras))
        ref, src = noisy
    offsets = None
    if args.offsets == "gt":
        if "gt_du" not in ref.extras:
            raise DataError("--offsets gt needs gt_du/gt_dv grids in the manifest")
        offsets = OffsetField(ref.extras["gt_du"].astype(np.float64), ref.extras["gt_dv"].astype(np.float64))
    gt, mask = _gt_of(ref)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)

    mono = expected_depth(mono_distribution(ref.mono_mu, ref.mono_sigma, base))
    rows = [{"setting": "mono", "iterations": 0, **depth_metrics(mono, gt, mask).to_dict()}]
    for it in range(base.iterations + 1):
        cfg = StereoConfig(**{**base.to_dict(), "iterations": it})
        est = DynamicTemporalStereo.from_config(cfg).fit(ref, src, offsets)
        pred = est.predict()
        rows.append({"setting": "stereo", "iterations": it, **depth_metrics(pred, gt, mask).to_dict()})
        if args.dump:
            write_grid(out / f"depth_it{it}.bin", pred)
            write_grid(out / f"dist_it{it}.bin", est.depth_.probs)
            write_grid(out / f"weight_it{it}.bin", est.weight_)
            for r, st in enumerate(est.states_):
                write_grid(out / f"mu_it{it}_split{r}.bin", st.mu)
                write_grid(out / f"sigma_it{it}_split{r}.bin", st.sigma)
    write_csv(out / "stereo_metrics.csv", rows, list(rows[0]))
    for r in rows:
        _say(f"stereo: {r['setting']:<6} iterations={r['iterations']} abs_rel={r['abs_rel']:.6f} rmse={r['rmse']:.6f}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    frames, _ = _load_frames(args)
    if args.frames is not None:
        if not 1 <= args.frames <= len(frames):
            raise DataError(f"--frames must be in 1..{len(frames)}")
        frames = frames[-args.frames:]
    try:
        plan = make_plan(len(frames), args.group_size, args.interval, on_missing=args.on_missing)
    except ValueError as e:
        raise DataError(str(e)) from None
    cfg = _stereo_config(args)
    grid = _grid(args)
    bev = fuse_sequence(frames, plan, cfg, grid, mode="deterministic" if args.deterministic else "parallel")
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    save_grid(out / "bev.bin", bev)
    summary = {"groups": [list(g) if g is None else [g[0], list(g[1])] for g in plan.groups],
               "channels": bev.values.shape[-1], "nx": grid.nx, "ny": grid.ny,
               "dropped_points": int(bev.stats["dropped"]), "checksum": float(np.abs(bev.values).sum())}
    (out / "fuse_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    _say(f"fuse: groups={plan.n_groups} channels={summary['channels']} dropped={summary['dropped_points']}")
    return EXIT_OK


def cmd_nms(args) -> int:
    if args.boxes is not None:
        if not args.boxes.exists():
            raise DataError(f"box file not found: {args.boxes}")
        try:
            boxes = read_boxes_csv(args.boxes)
        except ValueError as e:
            raise DataError(str(e)) from None
    else:
        boxes = make_nms_corpus(args.seed, args.n, args.layout)
    try:
        cfg = NmsConfig(args.w, args.radius, args.class_agnostic, args.iou_threshold)
    except ValueError as e:
        raise DataError(str(e)) from None
    keeps = {name: set(fn(boxes, cfg)) for name, fn in VARIANTS.items()}
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_boxes_csv(out / "boxes.csv", boxes)
    rows = []
    for i, b in enumerate(boxes):
        flags = {name: int(i in k) for name, k in keeps.items()}
        rows.append({"index": i, "cx": b.cx, "cy": b.cy, "score": b.score, "class_id": b.class_id,
                     "kept_size_aware": flags["size_aware"], "kept_circle": flags["circle"],
                     "kept_rotated_iou": flags["rotated_iou"],
                     "circle_disagrees": int(flags["circle"] != flags["size_aware"])})
    fields_ = ["index", "cx", "cy", "score", "class_id", "kept_size_aware", "kept_circle", "kept_rotated_iou",
               "circle_disagrees"]
    write_csv(out / "nms_kept.csv", rows, fields_)
    if args.bench:
        write_csv(out / f"nms{TIMING_SUFFIX}", bench_nms(boxes, cfg, repeats=args.repeats), NMS_FIELDS)
    for name, k in keeps.items():
        _say(f"nms: {name:<11} kept={len(k)} suppressed={len(boxes) - len(k)}")
    _say(f"nms: circle_disagreements={sum(r['circle_disagrees'] for r in rows)}")
    return EXIT_OK


def _parse_size(text: str):
    try:
        P, B, C = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise DataError(f"size must look like PxBxC, got {text!r}") from None
    if min(P, B, C) < 1:
        raise DataError(f"size components must be positive: {text!r}")
    return P, B, C


def cmd_pool_bench(args) -> int:
    grid = _grid(args)
    sizes = [(*_parse_size(s), grid) for s in args.sizes]
    mode = _mode(args)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    # reproducible part: both variants' results on the benchmark inputs
    check = []
    for P, B, C, g in sizes:
        inputs = random_inputs(P, B, C, g, seed=args.seed)
        a = pool_v1(inputs, g, mode, n_threads=args.threads).values
        b = pool_v2(inputs, g, mode, n_threads=args.threads).values
        scale = np.maximum(np.abs(a), 1e-12)
        check.append({"P": P, "B": B, "C": C, "nx": g.nx, "ny": g.ny,
                      "max_rel_diff": float(np.max(np.abs(a - b) / scale)) if a.size else 0.0,
                      "sum_v1": float(a.sum()), "sum_v2": float(b.sum())})
    write_csv(out / "pool_check.csv", check, list(check[0]))
    rows = bench_pool(sizes, repeats=args.repeats, warmup=args.warmup, mode=mode, seed=args.seed,
                      n_threads=args.threads)
    write_csv(out / f"pool{TIMING_SUFFIX}", rows, POOL_FIELDS)
    for r in rows:
        _say(f"pool-bench: {r['variant']} P={r['P']} B={r['B']} C={r['C']} median_ms={r['median_ns'] / 1e6:.2f}")
    return EXIT_OK


def _read(path: Path, what: str) -> np.ndarray:
    if path is None:
        raise DataError(f"--{what} is required")
    if not path.exists():
        raise DataError(f"{what} file not found: {path}")
    try:
        return read_grid(path)[..., 0].astype(np.float64)
    except ValueError as e:
        raise DataError(str(e)) from None


def cmd_eval(args) -> int:
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    did = False
    if args.pred is not None or args.gt is not None:
        pred, gt = _read(args.pred, "pred"), _read(args.gt, "gt")
        mask = _read(args.mask, "mask") > 0 if args.mask is not None else gt > 0
        try:
            report = depth_metrics(pred, gt, mask)
        except ValueError as e:
            raise DataError(str(e)) from None
        report.to_csv(out / "eval_depth.csv")
        report.to_keyvalue(out / "eval_depth.yaml")
        _say("eval: " + " ".join(f"{k}={v:.6g}" for k, v in report.to_dict().items()))
        did = True
    if args.pred_boxes is not None or args.gt_boxes is not None:
        if args.pred_boxes is None or args.gt_boxes is None:
            raise DataError("--pred-boxes and --gt-boxes go together")
        for p in (args.pred_boxes, args.gt_boxes):
            if not p.exists():
                raise DataError(f"box file not found: {p}")
        try:
            rec = center_recall(read_boxes_csv(args.pred_boxes), read_boxes_csv(args.gt_boxes),
                                args.thresholds, args.min_speed)
        except ValueError as e:
            raise DataError(str(e)) from None
        rec.to_csv(out / "eval_recall.csv")
        rec.to_keyvalue(out / "eval_recall.yaml")
        _say("eval: " + " ".join(f"{k}={v}" for k, v in rec.to_dict().items()))
        did = True
    if not did:
        raise DataError("nothing to evaluate: give --pred/--gt and/or --pred-boxes/--gt-boxes")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "stereo": cmd_stereo,
    "fuse": cmd_fuse,
    "nms": cmd_nms,
    "pool-bench": cmd_pool_bench,
    "eval": cmd_eval,
}


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "code": code, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as e:
        # argparse already printed usage
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    except DataError as e:
        return _fail(EXIT_DATA, "data", str(e))
    if args.threads is not None:
        if args.threads < 1:
            return _fail(EXIT_USAGE, "usage", "--threads must be >= 1")
        import numba

        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        return COMMANDS[args.command](args)
    except DataError as e:
        return _fail(EXIT_DATA, "data", str(e))
    except ValueError as e:
        # configuration values the modules reject
        return _fail(EXIT_USAGE, "usage", str(e))


if __name__ == "__main__":
    sys.exit(main())
