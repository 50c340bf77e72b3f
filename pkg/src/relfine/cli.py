"""Command-line entry point: scene generation, triplet calibration,
refinement, evaluation, and gradient checking.

Exit codes are stable: 0 success, 2 invalid spec/config/format, 3 a
constraint or query names an unknown category, 4 mismatched scene sets,
1 gradient-check failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Sequence, TypeVar

from .errors import FormatError, SceneSetMismatchError, SceneSpecError, UnknownCategoryError
from .evaluate import (
    EvalReport,
    compare_runs,
    evaluate_scene,
    triplet_satisfied,
    write_bucket_csv,
)
from .gradcheck import DEFAULT_SIZES, run_gradcheck
from .grid import read_labels, write_labels_pgm, write_rsgf
from .logic import SpatialLossConfig, spatial_loss
from .refine import RefineConfig, refine
from .relations import (
    CalibrationOptions,
    calibrate,
    geometric_oracle,
    load_scripted_oracle,
    load_triplets,
    save_triplets,
)
from .scenes import Scene, SceneSpec, generate_scene, load_scene_bundle, save_scene_bundle, spec_from_dict
from .state import argmax_labels

T = TypeVar("T")
U = TypeVar("U")


def _write_json(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_json(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: expected a JSON object at top level")
    return doc


def _parallel_map(fn: Callable[[T], U], items: Sequence[T], jobs: int) -> list[U]:
    """Map in input order; results do not depend on the job count."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

_CONFIG_SECTIONS = {"output_dir", "scenes", "calibration", "refine", "loss"}
_REFINE_KEYS = {"alpha", "steps", "learning_rate", "adam_beta1", "adam_beta2", "adam_eps", "seed"}
_LOSS_KEYS = {"epsilon", "log_clamp", "sigmoid_bias", "sigmoid_scale", "reduction"}
_CALIBRATION_KEYS = {"drop_background", "background_name"}


def _section(doc: dict, name: str, allowed: set[str], path: str) -> dict:
    section = doc.get(name, {})
    if not isinstance(section, dict):
        raise FormatError(f"{path}: section {name!r} must be an object")
    unknown = set(section) - allowed
    if unknown:
        raise FormatError(f"{path}: section {name!r} has unknown keys {sorted(unknown)}")
    return section


class RunConfig:
    """Parsed run configuration; rejects unknown keys at every level."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        doc = _load_json(path)
        unknown = set(doc) - _CONFIG_SECTIONS
        if unknown:
            raise FormatError(f"{path}: unknown keys {sorted(unknown)}")

        self.output_dir = self.path.parent / str(doc.get("output_dir", "out"))

        self.scene_specs: list[tuple[str, SceneSpec]] = []
        entries = doc.get("scenes", [])
        if not isinstance(entries, list):
            raise FormatError(f"{path}: 'scenes' must be a list")
        for index, entry in enumerate(entries):
            if not isinstance(entry, dict):
                raise FormatError(f"{path}: scenes[{index}] must be an object")
            entry = dict(entry)
            name = str(entry.pop("name", f"scene_{index:03d}"))
            spec = spec_from_dict(entry, where=f"{path}: scenes[{index}] ({name})")
            self.scene_specs.append((name, spec))
        names = [name for name, _ in self.scene_specs]
        if len(set(names)) != len(names):
            raise FormatError(f"{path}: duplicate scene names")

        self.refine_cfg = RefineConfig(**_section(doc, "refine", _REFINE_KEYS, str(path)))
        self.loss_cfg = SpatialLossConfig(**_section(doc, "loss", _LOSS_KEYS, str(path)))
        self.calibration = CalibrationOptions(
            **_section(doc, "calibration", _CALIBRATION_KEYS, str(path))
        )


# ---------------------------------------------------------------------------
# gen-scenes
# ---------------------------------------------------------------------------


def _generate_one(task: tuple[str, SceneSpec, str]) -> dict:
    name, spec, out_root = task
    try:
        scene = generate_scene(spec)
    except SceneSpecError as exc:
        raise SceneSpecError(f"scene {name!r}: {exc}") from None
    save_scene_bundle(Path(out_root) / name, scene)
    return {"name": name, "seed": spec.seed, "path": name}


def cmd_gen_scenes(args: argparse.Namespace) -> int:
    config = RunConfig(args.config)
    out_root = Path(args.output) if args.output else config.output_dir
    out_root.mkdir(parents=True, exist_ok=True)
    tasks = [(name, spec, str(out_root)) for name, spec in config.scene_specs]
    entries = _parallel_map(_generate_one, tasks, args.jobs)
    _write_json(out_root / "manifest.json", {"scenes": entries})
    print(f"generated {len(entries)} scene bundle(s) under {out_root}")
    return 0


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def cmd_calibrate(args: argparse.Namespace) -> int:
    triplets = load_triplets(args.triplets, swap_args=args.swap_args)
    if args.oracle:
        oracle = load_scripted_oracle(args.oracle)
    else:
        if not args.labels:
            raise FormatError("--geometric needs --labels PATH")
        labels = read_labels(args.labels, len(triplets.categories))
        oracle = geometric_oracle(labels, triplets.categories)
    opts = CalibrationOptions(drop_background=not args.keep_background)
    result = calibrate(triplets, oracle, opts)

    for stage, count in result.audit.to_dict().items():
        print(f"{stage:>20}: {count}")
    if args.out_triplets:
        save_triplets(args.out_triplets, result.triplets)
    if args.out_audit:
        _write_json(args.out_audit, result.audit.to_dict())
    return 0


# ---------------------------------------------------------------------------
# refine
# ---------------------------------------------------------------------------


def _refine_one(task: tuple[str, str, str, str | None, RefineConfig, SpatialLossConfig]) -> dict:
    name, bundle_dir, out_dir, triplets_path, cfg, loss_cfg = task
    scene = load_scene_bundle(bundle_dir)
    if triplets_path is None:
        triplets = scene.gt_triplets
    else:
        triplets = load_triplets(triplets_path)

    final_state, trace = refine(scene.init_probs, triplets, cfg, loss_cfg)
    labels = argmax_labels(final_state)

    out = Path(out_dir)
    (out / "probs").mkdir(parents=True, exist_ok=True)
    write_labels_pgm(out / "labels.pgm", labels)
    for index, category in enumerate(final_state.categories):
        write_rsgf(out / "probs" / f"{category}.rsgf", final_state.probs[index])

    _, terms = spatial_loss(final_state, triplets, loss_cfg)
    constraints = [
        {
            "subject": term.triplet.subject,
            "relation": term.triplet.relation.value,
            "object": term.triplet.object,
            "loss": term.loss,
            "weight": term.weight,
            "satisfied": triplet_satisfied(labels, scene.categories, term.triplet),
        }
        for term in terms
    ]
    report = evaluate_scene(labels, scene, triplets, name=name)
    doc = {
        "scene": name,
        "baseline": cfg.alpha == 0.0,
        "config": {"refine": asdict(cfg), "loss": asdict(loss_cfg)},
        "trace": trace.to_list(),
        "constraints": constraints,
        "metrics": report.to_dict(),
    }
    _write_json(out / "report.json", doc)
    return report.to_dict()


def _scene_set(path: Path) -> list[tuple[str, Path]]:
    """Resolve a path to named bundles: one entry for a single bundle, or the
    manifest order for a generated scene set."""
    if (path / "spec.json").exists():
        return [(path.name, path)]
    manifest = path / "manifest.json"
    if not manifest.exists():
        raise FormatError(f"{path}: neither a scene bundle (spec.json) nor a scene set (manifest.json)")
    doc = _load_json(manifest)
    entries = doc.get("scenes")
    if not isinstance(entries, list):
        raise FormatError(f"{manifest}: 'scenes' must be a list")
    pairs = []
    for index, entry in enumerate(entries):
        if not isinstance(entry, dict) or "name" not in entry or "path" not in entry:
            raise FormatError(f"{manifest}: scenes[{index}] needs 'name' and 'path'")
        pairs.append((str(entry["name"]), path / str(entry["path"])))
    return pairs


def cmd_refine(args: argparse.Namespace) -> int:
    if args.triplets is None and not args.use_gt_triplets:
        raise FormatError("refine needs --triplets PATH or --use-gt-triplets")

    # Config file provides the base settings; explicit flags win over it.
    if args.config:
        config = RunConfig(args.config)
        cfg, loss_cfg = config.refine_cfg, config.loss_cfg
    else:
        cfg, loss_cfg = RefineConfig(), SpatialLossConfig()
    overrides = {
        "alpha": args.alpha,
        "steps": args.steps,
        "learning_rate": args.learning_rate,
    }
    overrides = {key: value for key, value in overrides.items() if value is not None}
    if overrides:
        cfg = RefineConfig(**{**asdict(cfg), **overrides})
    if args.reduction is not None:
        loss_cfg = SpatialLossConfig(**{**asdict(loss_cfg), "reduction": args.reduction})

    scene_root = Path(args.scene)
    pairs = _scene_set(scene_root)
    if not pairs:
        raise FormatError(f"{scene_root}: scene set is empty")
    out_root = Path(args.out)
    single = len(pairs) == 1 and (scene_root / "spec.json").exists()
    tasks = []
    for name, bundle in pairs:
        out_dir = out_root if single else out_root / name
        tasks.append((name, str(bundle), str(out_dir), args.triplets, cfg, loss_cfg))
    reports = _parallel_map(_refine_one, tasks, args.jobs)
    if not single:
        out_root.mkdir(parents=True, exist_ok=True)
        _write_json(out_root / "manifest.json", {"scenes": [{"name": n, "path": n} for n, _ in pairs]})
    tag = "baseline" if cfg.alpha == 0.0 else f"alpha={cfg.alpha}"
    mean_miou = sum(r["miou"] for r in reports) / len(reports)
    print(f"refined {len(reports)} scene(s) [{tag}], mean mIoU {mean_miou:.4f}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _evaluate_prediction(scene_name: str, scene: Scene, pred_dir: Path, threshold: float) -> EvalReport:
    labels_path = pred_dir / "labels.pgm"
    if not labels_path.exists():
        raise SceneSetMismatchError(f"no prediction for scene {scene_name!r}: {labels_path} missing")
    pred = read_labels(labels_path, len(scene.categories))
    return evaluate_scene(pred, scene, threshold=threshold, name=scene_name)


def cmd_eval(args: argparse.Namespace) -> int:
    scene_pairs = _scene_set(Path(args.scenes))
    if not scene_pairs:
        raise FormatError(f"{args.scenes}: scene set is empty")
    pred_root = Path(args.pred)
    single = len(scene_pairs) == 1 and (Path(args.scenes) / "spec.json").exists()

    def run_reports(root: Path) -> list[EvalReport]:
        reports = []
        for name, bundle in scene_pairs:
            scene = load_scene_bundle(bundle)
            pred_dir = root if single else root / name
            reports.append(_evaluate_prediction(name, scene, pred_dir, args.threshold))
        return reports

    refined = run_reports(pred_root)
    doc: dict = {
        "scenes": [r.to_dict() for r in refined],
        "aggregate": {
            "miou": sum(r.miou for r in refined) / len(refined),
            "macc": sum(r.macc for r in refined) / len(refined),
            "constraint_satisfaction": sum(r.constraint_satisfaction for r in refined) / len(refined),
        },
    }

    if args.baseline:
        baseline = run_reports(Path(args.baseline))
        deltas = compare_runs(baseline, refined, args.group_by)
        doc["baseline_aggregate"] = {
            "miou": sum(r.miou for r in baseline) / len(baseline),
            "macc": sum(r.macc for r in baseline) / len(baseline),
            "constraint_satisfaction": sum(r.constraint_satisfaction for r in baseline)
            / len(baseline),
        }
        doc["buckets"] = [
            {
                "bucket": d.bucket,
                "scenes": d.scenes,
                "baseline_miou": d.baseline_miou,
                "refined_miou": d.refined_miou,
                "delta": d.delta,
            }
            for d in deltas
        ]
        if args.csv:
            write_bucket_csv(args.csv, deltas)
        for d in deltas:
            print(
                f"bucket {d.bucket:>8} ({d.scenes:>3} scenes): "
                f"baseline {d.baseline_miou:.4f} refined {d.refined_miou:.4f} delta {d.delta:+.4f}"
            )

    print(f"mean mIoU {doc['aggregate']['miou']:.4f} over {len(refined)} scene(s)")
    if args.out:
        _write_json(args.out, doc)
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def _parse_sizes(text: str) -> list[tuple[int, int]]:
    sizes = []
    for token in text.split(","):
        try:
            h, w = token.lower().split("x")
            sizes.append((int(h), int(w)))
        except ValueError:
            raise FormatError(f"bad size {token!r}, expected HxW") from None
    return sizes


def cmd_gradcheck(args: argparse.Namespace) -> int:
    sizes = _parse_sizes(args.sizes) if args.sizes else list(DEFAULT_SIZES)
    results = run_gradcheck(
        seed=args.seed,
        sizes=sizes,
        instances=args.instances,
        alpha=args.alpha,
        tolerance=args.tolerance,
        corrupt=args.corrupt_gradient,
    )
    print("instance    size  cats  constraints  max_rel_error  status")
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(
            f"{r.instance:>8}  {r.height}x{r.width:<4} {r.n_categories:>4}  {r.n_constraints:>11}"
            f"  {r.max_rel_error:>13.3e}  {status}"
        )
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} instances within {args.tolerance:g}")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relfine", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="generate scene bundles from a run config")
    p.add_argument("config", help="run config JSON")
    p.add_argument("--output", help="override the config's output_dir")
    p.add_argument("--jobs", type=int, default=1, help="parallel scene generation")
    p.set_defaults(fn=cmd_gen_scenes)

    p = sub.add_parser("calibrate", help="augment, validate, and de-contradict a triplet set")
    p.add_argument("--triplets", required=True, help="triplet JSON file")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--oracle", help="scripted oracle JSON file")
    group.add_argument("--geometric", action="store_true", help="answer from a label map instead")
    p.add_argument("--labels", help="label map (PGM P5 or RSGF1) for --geometric")
    p.add_argument("--swap-args", action="store_true", help="input log lists object before subject")
    p.add_argument("--keep-background", action="store_true", help="keep background triplets")
    p.add_argument("--out-triplets", help="write the calibrated set here")
    p.add_argument("--out-audit", help="write per-stage audit counts here")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("refine", help="optimize a scene's maps under spatial constraints")
    p.add_argument("--scene", required=True, help="scene bundle or scene-set directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--triplets", help="calibrated triplet JSON")
    p.add_argument("--use-gt-triplets", action="store_true", help="refine with the bundle's own triplets")
    p.add_argument("--config", help="run config with refine/loss sections")
    p.add_argument("--alpha", type=float, help=f"spatial weight (default {RefineConfig().alpha})")
    p.add_argument("--steps", type=int, help=f"optimization steps (default {RefineConfig().steps})")
    p.add_argument("--learning-rate", type=float, help=f"Adam learning rate (default {RefineConfig().learning_rate})")
    p.add_argument("--reduction", choices=["sum", "mean"])
    p.add_argument("--jobs", type=int, default=1, help="parallel refinement across scenes")
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("eval", help="score predictions against scene ground truth")
    p.add_argument("--scenes", required=True, help="scene bundle or scene-set directory")
    p.add_argument("--pred", required=True, help="prediction directory (refine output)")
    p.add_argument("--baseline", help="second prediction directory for bucketed deltas")
    p.add_argument("--group-by", choices=["categories", "constraints", "ratio"], default="categories")
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--out", help="write the report JSON here")
    p.add_argument("--csv", help="write the bucket CSV here (needs --baseline)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", help="comma-separated HxW list, e.g. 4x4,8x8")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (SceneSpecError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except UnknownCategoryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SceneSetMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
