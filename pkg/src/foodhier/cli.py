"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 input error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .boxes import BoxError
from .config import ConfigError, load_config
from .dataset_io import (
    DatasetError,
    DetectionSynthSpec,
    load_detections,
    load_embeddings,
    load_ground_truth,
    split_dataset,
    synthesize_dataset,
    synthesize_detections,
    write_detections,
    write_embeddings,
    write_ground_truth,
)
from .detection_eval import nms_per_image, recognition_report, sweep_thresholds, write_report
from .hierarchy import Hierarchy, build_hierarchy
from .multitask import MultiTaskModel, evaluate_classification, init_model, train, write_train_log
from .pipeline import StageError, compare_flat_vs_hierarchical, run_full_pipeline, write_json
from .similarity import SimilarityMatrix, similarity_matrix, write_matrix_csv

log = logging.getLogger("foodhier")

EXIT_OK, EXIT_INPUT, EXIT_STAGE = 0, 1, 2


def _out(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args, cfg):
    if cfg.synthetic is None:
        raise ConfigError("synth needs a config with a 'synthetic' section (try --config synthetic)")
    out = _out(cfg)
    ds, groups = synthesize_dataset(cfg.synthetic)
    write_embeddings(ds, out / "embeddings.jsonl")
    write_json(groups, out / "groups.json")
    if cfg.synthetic_detections is not None:
        spec = DetectionSynthSpec(labels=tuple(ds.categories), seed=cfg.seed + 1, **cfg.synthetic_detections)
        dets, gts = synthesize_detections(spec)
        write_detections(dets, out / "detections.jsonl")
        write_ground_truth(gts, out / "ground_truth.jsonl")
    print(f"wrote {len(ds)} records ({ds.n_categories} categories, dim {ds.dim}) to {out}")


def cmd_split(args, cfg):
    ds = load_embeddings(args.embeddings)
    out = _out(cfg)
    parts = split_dataset(ds, cfg.split)
    for name, part in zip(("train", "val", "test"), parts):
        write_embeddings(part, out / f"{name}.jsonl")
    print("split sizes:", ", ".join(f"{n}={len(p)}" for n, p in zip(("train", "val", "test"), parts)))


def cmd_similarity(args, cfg):
    ds = load_embeddings(args.train)
    out = _out(cfg)
    sim = similarity_matrix(ds, cfg.sigma_floor, cfg.rescale or args.rescale)
    sim.save(out / "sim.json")
    write_matrix_csv(sim, out / "sim.csv")
    print(f"similarity over {len(sim)} categories -> {out / 'sim.json'}")


def cmd_hierarchy(args, cfg):
    sim = SimilarityMatrix.load(args.similarity)
    levels = args.levels if args.levels is not None else cfg.levels
    hier = build_hierarchy(sim, levels, cfg.ap)
    out = _out(cfg)
    hier.save(out / "hier.json")
    print(f"levels {hier.level_sizes}, converged={hier.params['converged']} -> {out / 'hier.json'}")


def cmd_train(args, cfg):
    train_set = load_embeddings(args.train)
    val_set = load_embeddings(args.val) if args.val else None
    hier = Hierarchy.load(args.hierarchy)
    n_levels = 1 if args.flat else hier.n_levels
    lambdas = [1.0] if args.flat else cfg.lambdas[:n_levels]
    model = init_model(train_set.dim, hier.level_sizes[:n_levels], lambdas, cfg.hidden, cfg.seed)
    model, history = train(model, train_set, val_set, hier, cfg.train)
    out = _out(cfg)
    model.save(out / "model.json")
    write_train_log(history, out / "train_log.csv")
    print(f"trained {len(history)} epochs -> {out / 'model.json'}")


def cmd_eval_classify(args, cfg):
    model = MultiTaskModel.load(args.model)
    test = load_embeddings(args.test)
    hier = Hierarchy.load(args.hierarchy)
    m = evaluate_classification(model, test, hier)
    out = _out(cfg)
    write_json(m.to_json(), out / "classify.json")
    print(f"top1={m.top1:.4f} cluster_top1={m.cluster_top1:.4f}")


def cmd_nms(args, cfg):
    dets = load_detections(args.detections)
    thr = args.iou if args.iou is not None else cfg.eval.nms_threshold
    kept = nms_per_image(dets, thr)
    out = _out(cfg)
    write_detections(kept, out / "dets_nms.jsonl")
    print(f"kept {len(kept)} of {len(dets)} detections")


def cmd_sweep(args, cfg):
    dets = load_detections(args.detections)
    gts = load_ground_truth(args.ground_truth)
    points = args.points if args.points is not None else cfg.eval.sweep_points
    table = sweep_thresholds(dets, gts, points, cfg.eval.iou_min)
    out = _out(cfg)
    table.write_csv(out / "sweep.csv")
    print(f"best threshold {table.best_threshold:.2f}")


def cmd_eval_recognition(args, cfg):
    dets = load_detections(args.detections)
    gts = load_ground_truth(args.ground_truth)
    report = recognition_report(dets, gts, cfg.eval.iou_min, args.threshold)
    out = _out(cfg)
    write_report(report, out / "recognition.json")
    print(json.dumps({k: report[k] for k in ("precision", "recall", "f_measure", "accuracy", "map")}))


def cmd_pipeline(args, cfg):
    result = run_full_pipeline(cfg)
    cls = result["metrics"]["classification"]
    print(f"top1={cls['top1']:.4f} cluster_top1={cls['cluster_top1']:.4f}")
    for note in result["manifest"]["notes"]:
        print(note)
    print(f"artifacts in {cfg.out}")


def cmd_compare(args, cfg):
    rows = compare_flat_vs_hierarchical(cfg)
    print(f"{'variant':<8}{'top1':>10}{'cluster_top1':>14}")
    for r in rows:
        print(f"{r['variant']:<8}{r['top1']:>10.4f}{r['cluster_top1']:>14.4f}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file, a run manifest, or 'synthetic' for the bundled one")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="foodhier", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    add("synth", cmd_synth, "write a synthetic embedding (and box) dataset")
    p = add("split", cmd_split, "stratified train/val/test split")
    p.add_argument("--embeddings", required=True)
    p = add("similarity", cmd_similarity, "category similarity matrix from training embeddings")
    p.add_argument("--train", required=True)
    p.add_argument("--rescale", action="store_true", help="min-max rescale off-diagonal entries")
    p = add("hierarchy", cmd_hierarchy, "affinity-propagation hierarchy from a similarity matrix")
    p.add_argument("--similarity", required=True)
    p.add_argument("--levels", type=int)
    p = add("train", cmd_train, "train the multi-task head")
    p.add_argument("--train", required=True)
    p.add_argument("--val")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--flat", action="store_true", help="category head only, lambda = (1)")
    p = add("eval-classify", cmd_eval_classify, "top-1 and cluster top-1 on a test set")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--hierarchy", required=True)
    p = add("nms", cmd_nms, "per-image non-maximum suppression")
    p.add_argument("--detections", required=True)
    p.add_argument("--iou", type=float)
    p = add("sweep", cmd_sweep, "precision/recall/F over score thresholds")
    p.add_argument("--detections", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--points", type=int)
    p = add("eval-recognition", cmd_eval_recognition, "label-aware P/R/F, accuracy and mAP")
    p.add_argument("--detections", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--threshold", type=float, help="score threshold for the P/R/F counts")
    add("pipeline", cmd_pipeline, "run every stage end to end")
    add("compare", cmd_compare, "flat vs hierarchical vs hierarchical + fine-tune")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        args.func(args, cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT if exc.input_error else EXIT_STAGE
    except (ConfigError, DatasetError, BoxError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
