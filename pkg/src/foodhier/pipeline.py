"""End-to-end orchestration: split, similarity, hierarchy, training, evaluation."""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from . import __version__
from .boxes import BoxError
from .config import ConfigError, PipelineConfig, config_to_dict
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
from .detection_eval import (
    apply_score_threshold,
    match_detections,
    nms_per_image,
    prf,
    recognition_report,
    sweep_thresholds,
    write_report,
)
from .hierarchy import build_hierarchy
from .multitask import evaluate_classification, init_model, train, write_train_log
from .similarity import similarity_matrix, write_matrix_csv

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = 1
INPUT_ERRORS = (DatasetError, ConfigError, BoxError, FileNotFoundError, KeyError)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def input_error(self) -> bool:
        return isinstance(self.cause, INPUT_ERRORS)


@contextlib.contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def prepare_inputs(cfg: PipelineConfig, out: Path):
    """Load the embeddings and optional box files, synthesizing them if configured."""
    with stage("inputs"):
        if cfg.embeddings is not None:
            ds = load_embeddings(cfg.embeddings)
        elif cfg.synthetic is not None:
            ds, groups = synthesize_dataset(cfg.synthetic)
            write_embeddings(ds, out / "embeddings.jsonl")
            write_json(groups, out / "groups.json")
        else:
            raise ConfigError("no embeddings: set inputs.embeddings or a synthetic section")

        dets = gts = None
        if cfg.detections is not None and cfg.ground_truth is not None:
            dets = load_detections(cfg.detections)
            gts = load_ground_truth(cfg.ground_truth)
        elif cfg.synthetic is not None and cfg.synthetic_detections is not None:
            spec = DetectionSynthSpec(labels=tuple(ds.categories), seed=cfg.seed + 1, **cfg.synthetic_detections)
            dets, gts = synthesize_detections(spec)
            write_detections(dets, out / "detections.jsonl")
            write_ground_truth(gts, out / "ground_truth.jsonl")
    return ds, dets, gts


def prepare_hierarchy(cfg: PipelineConfig, ds, out: Path):
    with stage("split"):
        train_set, val_set, test_set = split_dataset(ds, cfg.split)
        if len(test_set) == 0:
            raise DatasetError("test split is empty")
        for name, part in (("train", train_set), ("val", val_set), ("test", test_set)):
            write_embeddings(part, out / f"{name}.jsonl")
    with stage("similarity"):
        sim = similarity_matrix(train_set, cfg.sigma_floor, cfg.rescale)
        sim.save(out / "sim.json")
        write_matrix_csv(sim, out / "sim.csv")
    with stage("hierarchy"):
        hier = build_hierarchy(sim, cfg.levels, cfg.ap)
        hier.save(out / "hier.json")
    return (train_set, val_set, test_set), hier


def evaluate_detections(cfg: PipelineConfig, dets, gts, out: Path) -> dict:
    with stage("nms"):
        kept = nms_per_image(dets, cfg.eval.nms_threshold)
        write_detections(kept, out / "dets_nms.jsonl")
    with stage("sweep"):
        table = sweep_thresholds(kept, gts, cfg.eval.sweep_points, cfg.eval.iou_min)
        table.write_csv(out / "sweep.csv")
        loc = prf(match_detections(apply_score_threshold(kept, table.best_threshold), gts, cfg.eval.iou_min))
    with stage("recognition"):
        report = recognition_report(kept, gts, cfg.eval.iou_min, table.best_threshold)
        write_report(report, out / "recognition.json")
    return {
        "localization": {
            "best_threshold": table.best_threshold,
            "precision": loc.precision,
            "recall": loc.recall,
            "f_measure": loc.f_measure,
        },
        "recognition": report,
    }


def run_full_pipeline(cfg: PipelineConfig) -> dict:
    """Run every stage and write all artifacts plus a manifest into ``cfg.out``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    notes = []
    ds, dets, gts = prepare_inputs(cfg, out)
    (train_set, val_set, test_set), hier = prepare_hierarchy(cfg, ds, out)

    with stage("train"):
        lambdas = cfg.lambdas[: hier.n_levels]
        if len(lambdas) != hier.n_levels:
            raise ConfigError(f"need {hier.n_levels} lambdas, got {len(cfg.lambdas)}")
        model = init_model(ds.dim, hier.level_sizes, lambdas, cfg.hidden, cfg.seed)
        model, history = train(model, train_set, val_set, hier, cfg.train)
        model.save(out / "model.json")
        write_train_log(history, out / "train_log.csv")
    with stage("eval-classify"):
        cls = evaluate_classification(model, test_set, hier)
        write_json(cls.to_json(), out / "classify.json")

    metrics = {"classification": {k: v for k, v in cls.to_json().items() if k != "confusion"}}
    if dets is not None:
        metrics.update(evaluate_detections(cfg, dets, gts, out))
    else:
        notes.append("detection stage skipped: no detections/ground truth configured")
        log.info(notes[-1])
    write_json(metrics, out / "metrics.json")

    artifacts = sorted(p.name for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "package": "foodhier",
        "version": __version__,
        "numpy": np.__version__,
        "seed": cfg.seed,
        "prng": "numpy PCG64",
        "config": config_to_dict(cfg),
        "hierarchy": {"levels": hier.n_levels, "level_sizes": hier.level_sizes, "ap": hier.params},
        "artifacts": {name: _sha256(out / name) for name in artifacts},
        "notes": notes,
    }
    write_json(manifest, out / "manifest.json")
    return {"metrics": metrics, "manifest": manifest}


VARIANTS = ("FC", "HC", "HC-FT")


def compare_flat_vs_hierarchical(cfg: PipelineConfig) -> list[dict]:
    """Flat head vs hierarchical head vs hierarchical + fine-tune, same split and seed.

    The flat variant's cluster top-1 uses the same hierarchy, applied to its
    category predictions after the fact.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ds, _, _ = prepare_inputs(cfg, out)
    (train_set, val_set, test_set), hier = prepare_hierarchy(cfg, ds, out)
    base = cfg.train
    phase1 = type(base)(**{**base.__dict__, "fine_tune_epochs": 0})
    ft_epochs = base.fine_tune_epochs or base.epochs
    phase2 = type(base)(**{**base.__dict__, "epochs": 0, "fine_tune_epochs": ft_epochs})
    rows = []
    with stage("compare"):
        flat = init_model(ds.dim, [hier.level_size(1)], [1.0], cfg.hidden, cfg.seed)
        flat, _ = train(flat, train_set, val_set, hier, phase1)
        lambdas = cfg.lambdas[: hier.n_levels]
        hc = init_model(ds.dim, hier.level_sizes, lambdas, cfg.hidden, cfg.seed)
        hc, _ = train(hc, train_set, val_set, hier, phase1)
        hc_ft, _ = train(hc, train_set, val_set, hier, phase2)
        for name, model in zip(VARIANTS, (flat, hc, hc_ft)):
            m = evaluate_classification(model, test_set, hier)
            rows.append({"variant": name, "top1": m.top1, "cluster_top1": m.cluster_top1})
    with (out / "compare.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "top1", "cluster_top1"])
        for r in rows:
            w.writerow([r["variant"], f"{r['top1']:.6f}", f"{r['cluster_top1']:.6f}"])
    write_json({"rows": rows, "seed": cfg.seed}, out / "compare.json")
    return rows
