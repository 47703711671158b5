"""Command-line interface: encode, decode, roundtrip, evaluate, bench, render.

Every flag can also be set from a flat ``key = value`` config file passed with
``--config``; keys are flag names without the leading dashes (``-`` and ``_``
are interchangeable). A flag given on the command line beats the config file,
which beats the built-in default.

Exit codes: 0 success, 1 missing input file, 2 invalid input or usage,
3 round-trip metrics below the requested floors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .bench import BenchParams, format_report, run_bench, write_report
from .core import Scene, SceneError, build_coco_skeleton, read_scene, scene_from_dict, write_scene
from .decoder import DecodedPose, DecoderConfig, decode
from .encoder import encode
from .fields import FieldFormatError, read_fields, write_fields
from .losses import LossConfig, RegressionKind, composite_loss
from .metrics import evaluate, oks_matrix, pck, write_metrics
from .fusion import fuse
from .render import render_pgm, render_svg, write_svg
from .synth import FieldNoise, SceneParams, UnsatisfiableSceneError, generate_scene, perturb_fields

EXIT_OK, EXIT_MISSING, EXIT_INVALID, EXIT_BELOW_FLOOR = 0, 1, 2, 3

LOSS_KINDS = {"l1": RegressionKind.VANILLA_L1, "smoothl1": RegressionKind.SMOOTH_L1, "laplace": RegressionKind.LAPLACE}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message, code)  # both in args so workers can pickle it
        self.message = message
        self.code = code

    def __str__(self):
        return self.message


# -- config file -------------------------------------------------------------


def read_config(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}", EXIT_MISSING)
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected key = value", EXIT_INVALID)
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _apply_config(parser: argparse.ArgumentParser, config: dict[str, str]) -> None:
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, raw in config.items():
        action = actions.get(key)
        if action is None or key in ("help", "config", "inputs"):
            raise CliError(f"unknown config key: {key}", EXIT_INVALID)
        try:
            if isinstance(action, argparse.BooleanOptionalAction):
                value = _parse_bool(raw)
            elif action.nargs in ("+", "*"):
                value = [action.type(v) if action.type else v for v in raw.replace(",", " ").split()]
            else:
                value = action.type(raw) if action.type else raw
        except (ValueError, TypeError) as exc:
            raise CliError(f"config key {key}: {exc}", EXIT_INVALID)
        if action.choices is not None:
            bad = [v for v in (value if isinstance(value, list) else [value]) if v not in action.choices]
            if bad:
                raise CliError(f"config key {key}: {bad[0]!r} not in {sorted(action.choices)}", EXIT_INVALID)
        defaults[action.dest] = value
    parser.set_defaults(**defaults)


# -- parser --------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file with defaults for any flag")
    p.add_argument("--stride", type=int, default=8, help="image px per field cell")
    p.add_argument("--hr-stride", type=int, default=2, help="image px per fused-map raster step")
    p.add_argument("--seed-threshold", type=float, default=0.5)
    p.add_argument("--keypoint-threshold", type=float, default=0.1)
    p.add_argument("--use-b-in-decoder", action=argparse.BooleanOptionalAction, default=True,
                   help="use the PAF spread b in association scores")
    p.add_argument("--loss", choices=sorted(LOSS_KINDS), default="laplace", help="regression loss for reports")
    p.add_argument("--k-smooth", type=float, choices=(0.2, 0.5, 1.0), default=0.5)
    p.add_argument("--max-poses", type=int, default=20)
    p.add_argument("--seed", type=int, default=None, help="RNG seed (required when CI is set)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes; output order follows input order")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fieldpose", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="scene JSON -> .fields")
    _add_common(p)
    p.add_argument("inputs", nargs="+", help="scene JSON files")
    p.add_argument("-o", "--out-dir", default=".", help="directory for <name>.fields outputs")

    p = sub.add_parser("decode", help=".fields -> COCO results JSON")
    _add_common(p)
    p.add_argument("inputs", nargs="+", help=".fields files; image_id is the input position")
    p.add_argument("-o", "--out", default="-", help="results JSON path ('-' for stdout)")

    p = sub.add_parser("roundtrip", help="generate, encode, perturb, decode and evaluate")
    _add_common(p)
    p.add_argument("--n-scenes", type=int, default=20)
    p.add_argument("--poses", type=int, nargs=2, default=(1, 5), metavar=("MIN", "MAX"))
    p.add_argument("--heights", type=float, nargs=2, default=(40.0, 200.0), metavar=("MIN", "MAX"))
    p.add_argument("--max-iou", type=float, default=0.0)
    p.add_argument("--image-size", type=int, nargs=2, default=(640, 480), metavar=("W", "H"))
    p.add_argument("--noise-c", type=float, default=0.0, help="confidence jitter sigma")
    p.add_argument("--noise-v", type=float, default=0.0, help="vector jitter sigma, cells")
    p.add_argument("--dropout", type=float, default=0.0, help="cell dropout rate")
    p.add_argument("--min-ap", type=float, default=None, help="exit 3 when AP@0.75 is below")
    p.add_argument("--min-oks", type=float, default=None, help="exit 3 when mean best OKS is below")
    p.add_argument("--dump-failures", default=None, help="directory for scenes with a gt unmatched at OKS 0.5")
    p.add_argument("-o", "--out", default=None, help="report JSON path")

    p = sub.add_parser("evaluate", help="COCO keypoint metrics of results against scenes")
    _add_common(p)
    p.add_argument("inputs", nargs="+", help="scene JSON files, in image_id order")
    p.add_argument("--results", required=True, help="results JSON from decode")
    p.add_argument("-o", "--out", default="-", help="metrics JSON path ('-' for stdout)")

    p = sub.add_parser("bench", help="decode-time benchmark")
    _add_common(p)
    p.add_argument("--grid-sizes", type=int, nargs="+", default=[34, 48, 68, 96])
    p.add_argument("--n-poses", type=int, default=5)
    p.add_argument("--n-images", type=int, default=10)
    p.add_argument("--noise-c", type=float, default=0.0)
    p.add_argument("--noise-v", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("-o", "--out", default=None, help="report JSON path")

    p = sub.add_parser("render", help="scene or results JSON -> SVG; .fields -> PGM of the fused map")
    _add_common(p)
    p.add_argument("inputs", nargs=1, help="scene JSON, results JSON or .fields file")
    p.add_argument("--image-id", type=int, default=None, help="results entries to draw (default: all)")
    p.add_argument("--size", type=int, nargs=2, default=None, metavar=("W", "H"),
                   help="canvas size for results input (default: fit the joints)")
    p.add_argument("--keypoint-type", type=int, default=None,
                   help="fused plane to dump from a .fields input (default: max over types)")
    p.add_argument("-o", "--out", required=True, help="SVG path (PGM for .fields input)")
    return parser


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = parser.parse_args(argv)
    if pre.config is None:
        return pre
    sub = parser._subparsers._group_actions[0].choices[pre.command]
    _apply_config(sub, read_config(pre.config))
    return parser.parse_args(argv)


def decoder_config(args) -> DecoderConfig:
    return DecoderConfig(seed_threshold=args.seed_threshold, keypoint_threshold=args.keypoint_threshold,
                         use_b_in_decoder=args.use_b_in_decoder, max_poses=args.max_poses,
                         hr_stride=args.hr_stride)


def loss_config(args) -> LossConfig:
    return LossConfig(regression_kind=LOSS_KINDS[args.loss], k_smooth=args.k_smooth)


def _require_seed(args) -> int:
    if args.seed is None:
        if os.environ.get("CI"):
            raise CliError("--seed is required when CI is set", EXIT_INVALID)
        return 0
    return args.seed


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _check_exists(paths):
    for p in paths:
        if not Path(p).is_file():
            raise CliError(f"file not found: {p}", EXIT_MISSING)


# -- commands --------------------------------------------------------------------

_SKELETON = build_coco_skeleton()


def _load_scene(path) -> Scene:
    try:
        scene = read_scene(path)
        scene.validate(_SKELETON)
    except SceneError as exc:
        raise CliError(f"invalid scene {path}: {exc}", EXIT_INVALID)
    return scene


@dataclass(frozen=True)
class _EncodeJob:
    path: str
    out: str
    stride: int


def _encode_one(job: _EncodeJob) -> str:
    scene = _load_scene(job.path)
    pif, paf = encode(scene, _SKELETON, stride=job.stride)
    write_fields(job.out, pif, paf)
    return job.out


def cmd_encode(args) -> int:
    _check_exists(args.inputs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [_EncodeJob(p, str(out_dir / (Path(p).stem + ".fields")), args.stride) for p in args.inputs]
    for p in args.inputs:  # validate everything before writing anything
        _load_scene(p)
    for out in _map(_encode_one, jobs, args.jobs):
        print(out)
    return EXIT_OK


def _decode_one(item) -> list[dict]:
    path, config = item
    try:
        pif, paf = read_fields(path, _SKELETON)
    except FieldFormatError as exc:
        raise CliError(f"invalid fields file {path}: {exc}", EXIT_INVALID)
    return [p.to_result() for p in decode(pif, paf, _SKELETON, config)]


def results_json(per_image: Sequence[Sequence[dict]]) -> list[dict]:
    return [{"image_id": i, "category_id": 1, **r} for i, results in enumerate(per_image) for r in results]


def _dump_json(obj, out: str) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_decode(args) -> int:
    _check_exists(args.inputs)
    config = decoder_config(args)
    per_image = _map(_decode_one, [(p, config) for p in args.inputs], args.jobs)
    _dump_json(results_json(per_image), args.out)
    return EXIT_OK


def read_results(path, n_images: int | None = None) -> list[list[DecodedPose]]:
    try:
        entries = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})", EXIT_INVALID)
    n = n_images if n_images is not None else 1 + max((e["image_id"] for e in entries), default=-1)
    out: list[list[DecodedPose]] = [[] for _ in range(n)]
    for e in entries:
        if 0 <= e["image_id"] < n:
            pose = DecodedPose.from_result(e)
            out[e["image_id"]].append(DecodedPose(pose.joints, pose.present, float(e["score"]), pose.links))
    return out


def cmd_evaluate(args) -> int:
    _check_exists(list(args.inputs) + [args.results])
    scenes = [_load_scene(p) for p in args.inputs]
    preds = read_results(args.results, len(scenes))
    metrics = evaluate(preds, scenes, _SKELETON)
    if args.out == "-":
        _dump_json({k: round(v, 6) for k, v in metrics.items()}, "-")
    else:
        write_metrics(args.out, metrics)
    return EXIT_OK


@dataclass(frozen=True)
class RoundtripJob:
    seed: int
    index: int
    params: SceneParams
    noise: FieldNoise
    stride: int
    decoder: DecoderConfig
    loss: LossConfig


def roundtrip_one(job: RoundtripJob):
    scene = generate_scene(job.seed, job.index, job.params, _SKELETON)
    target = encode(scene, _SKELETON, stride=job.stride)
    fields = perturb_fields(*target, job.noise, job.seed * 1_000_003 + job.index)
    poses = decode(*fields, _SKELETON, job.decoder)
    loss, _ = composite_loss(fields, target, job.loss, _SKELETON.connections)
    return scene, poses, loss


def run_roundtrip(seed: int, n_scenes: int, params: SceneParams, noise: FieldNoise = FieldNoise(),
                  decoder: DecoderConfig = DecoderConfig(), stride: int = 8, loss: LossConfig = LossConfig(),
                  jobs: int = 1, dump_failures: str | None = None) -> tuple[dict, list]:
    """Generate -> encode -> perturb -> decode -> evaluate.

    Returns the report (deterministic, no timings) and the per-scene
    ``(scene, poses)`` pairs. With ``dump_failures`` every scene holding a
    ground truth that no prediction reaches at OKS 0.5 is written there as
    ``scene_<seed>_<index>.json``.
    """
    work = [RoundtripJob(seed, i, params, noise, stride, decoder, loss) for i in range(n_scenes)]
    out = _map(roundtrip_one, work, jobs)
    scenes = [s for s, _, _ in out]
    preds = [p for _, p, _ in out]
    metrics = evaluate(preds, scenes, _SKELETON)
    best_oks, pcks, failures = [], [], []
    for i, (scene, poses, _) in enumerate(out):
        if not scene.poses:
            continue
        m = oks_matrix(poses, scene.poses, _SKELETON) if poses else np.zeros((0, len(scene.poses)))
        best = m.max(axis=0) if len(poses) else np.zeros(len(scene.poses))
        best_oks.extend(best.tolist())
        for j, gt in enumerate(scene.poses):
            pcks.append(pck(poses[int(m[:, j].argmax())], gt, 0.1) if len(poses) else 0.0)
        if (best < 0.5).any():
            failures.append(i)
            if dump_failures is not None:
                Path(dump_failures).mkdir(parents=True, exist_ok=True)
                write_scene(Path(dump_failures) / f"scene_{seed}_{i}.json", scene)
    report = {
        "seed": seed,
        "n_scenes": n_scenes,
        "n_ground_truth": len(best_oks),
        "n_predictions": sum(len(p) for p in preds),
        "mean_oks": float(np.mean(best_oks)) if best_oks else 0.0,
        "min_oks": float(np.min(best_oks)) if best_oks else 0.0,
        "pck@0.1": float(np.mean(pcks)) if pcks else 0.0,
        "mean_loss": float(np.mean([l for _, _, l in out])) if out else 0.0,
        "loss": loss.regression_kind.value,
        "use_b_in_decoder": decoder.use_b_in_decoder,
        "failures": failures,
        "metrics": metrics,
    }
    return report, list(zip(scenes, preds))


def _round_floats(obj):
    if isinstance(obj, float):
        return round(obj, 6)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round_floats(v) for v in obj]
    return obj


def format_roundtrip(report: dict) -> str:
    m = report["metrics"]
    return (f"roundtrip seed={report['seed']} scenes={report['n_scenes']} gts={report['n_ground_truth']} "
            f"preds={report['n_predictions']}\n"
            f"  mean OKS {report['mean_oks']:.4f}  min OKS {report['min_oks']:.4f}  PCK@0.1 {report['pck@0.1']:.4f}\n"
            f"  AP {m['AP']:.4f}  AP50 {m['AP50']:.4f}  AP75 {m['AP75']:.4f}  APM {m['APM']:.4f}  APL {m['APL']:.4f}\n"
            f"  AR {m['AR']:.4f}  AR50 {m['AR50']:.4f}  AR75 {m['AR75']:.4f}  ARM {m['ARM']:.4f}  ARL {m['ARL']:.4f}\n"
            f"  {report['loss']} loss {report['mean_loss']:.4f}  failures {len(report['failures'])}\n")


def cmd_roundtrip(args) -> int:
    seed = _require_seed(args)
    params = SceneParams(poses_per_scene=tuple(args.poses), height_range=tuple(args.heights),
                         max_iou=args.max_iou, image_size=tuple(args.image_size))
    noise = FieldNoise(args.noise_c, args.noise_v, args.dropout)
    try:
        report, _ = run_roundtrip(seed, args.n_scenes, params, noise, decoder_config(args), args.stride,
                                  loss_config(args), args.jobs, args.dump_failures)
    except UnsatisfiableSceneError as exc:
        raise CliError(str(exc), EXIT_INVALID)
    report = _round_floats(report)
    if args.out:
        _dump_json(report, args.out)
    sys.stdout.write(format_roundtrip(report))
    code = EXIT_OK
    if args.min_ap is not None and report["metrics"]["AP75"] < args.min_ap:
        print(f"AP75 {report['metrics']['AP75']:.4f} below floor {args.min_ap}", file=sys.stderr)
        code = EXIT_BELOW_FLOOR
    if args.min_oks is not None and report["mean_oks"] < args.min_oks:
        print(f"mean OKS {report['mean_oks']:.4f} below floor {args.min_oks}", file=sys.stderr)
        code = EXIT_BELOW_FLOOR
    return code


def cmd_bench(args) -> int:
    seed = _require_seed(args)
    params = BenchParams(grid_sizes=tuple(args.grid_sizes), n_poses=args.n_poses, n_images=args.n_images,
                         stride=args.stride, noise=FieldNoise(args.noise_c, args.noise_v, args.dropout))
    try:
        report = run_bench(seed, params, _SKELETON, decoder_config(args))
    except UnsatisfiableSceneError as exc:
        raise CliError(str(exc), EXIT_INVALID)
    if args.out:
        write_report(args.out, report)
    sys.stdout.write(format_report(report))
    return EXIT_OK


def _poses_from_document(doc, image_id):
    """(joints, present) pairs and an optional canvas size from scene or results JSON."""
    if isinstance(doc, dict) and "annotations" in doc:
        try:
            scene = scene_from_dict(doc)
        except SceneError as exc:
            raise CliError(f"invalid scene: {exc}", EXIT_INVALID)
        return [(p.to_array(), p.labeled_mask) for p in scene.poses], (scene.width, scene.height)
    if isinstance(doc, list):
        out = []
        for e in doc:
            if image_id is not None and e.get("image_id") != image_id:
                continue
            try:
                pose = DecodedPose.from_result(e)
            except (KeyError, ValueError) as exc:
                raise CliError(f"invalid results entry: {exc}", EXIT_INVALID)
            out.append((pose.joints, pose.present))
        return out, None
    raise CliError("render input is neither a scene nor a results list", EXIT_INVALID)


def _render_fields(args) -> int:
    try:
        pif, _ = read_fields(args.inputs[0], _SKELETON)
    except FieldFormatError as exc:
        raise CliError(f"invalid fields file {args.inputs[0]}: {exc}", EXIT_INVALID)
    if args.keypoint_type is not None and not 0 <= args.keypoint_type < pif.n_types:
        raise CliError(f"--keypoint-type must lie in [0, {pif.n_types})", EXIT_INVALID)
    highres = fuse(pif, decoder_config(args).fusion_config())
    Path(args.out).write_bytes(render_pgm(highres, args.keypoint_type))
    return EXIT_OK


def cmd_render(args) -> int:
    _check_exists(args.inputs)
    if Path(args.inputs[0]).suffix == ".fields":
        return _render_fields(args)
    try:
        doc = json.loads(Path(args.inputs[0]).read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{args.inputs[0]}: invalid JSON ({exc})", EXIT_INVALID)
    poses, size = _poses_from_document(doc, args.image_id)
    if args.size is not None:
        size = tuple(args.size)
    if size is None:
        pts = [j[m, :2] for j, m in poses if m.any()]
        ext = np.concatenate(pts).max(axis=0) if pts else np.zeros(2)
        size = (int(np.ceil(ext[0])) + 10, int(np.ceil(ext[1])) + 10)
    write_svg(args.out, render_svg(poses, _SKELETON, *size))
    return EXIT_OK


COMMANDS = {"encode": cmd_encode, "decode": cmd_decode, "roundtrip": cmd_roundtrip,
            "evaluate": cmd_evaluate, "bench": cmd_bench, "render": cmd_render}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"fieldpose: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
