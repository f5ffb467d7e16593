"""Pipeline configuration: one JSON document, every key optional.

Schema (defaults shown)::

    {
      "seed": 0,
      "out": "runs/default",
      "inputs": {"embeddings": null, "detections": null, "ground_truth": null},
      "synthetic": null | {
          "n_categories": 20, "n_groups": 4, "dim": 32, "samples_per_category": 100,
          "within_group_spread": 0.3, "between_group_spread": 3.0, "noise_sigma": 0.5,
          "detections": null | {"n_images": 40, "max_objects": 3, "duplicates": 2,
                                "clutter": 3, "label_accuracy": 0.8, "miss_rate": 0.1}
      },
      "split": {"ratios": [0.7, 0.1, 0.2]},
      "similarity": {"sigma_floor": 1e-6, "rescale": false},
      "hierarchy": {"levels": 2, "preference": "median", "damping": 0.5,
                    "max_iter": 500, "stable_iters": 15},
      "model": {"hidden": null, "lambdas": [0.5, 0.5]},
      "train": {"epochs": 30, "batch_size": 20, "learning_rate": 0.05,
                "fine_tune_rate": 0.005, "fine_tune_epochs": 0, "shuffle": true},
      "eval": {"iou_min": 0.5, "nms_threshold": 0.7, "sweep_points": 21}
    }

The single ``seed`` drives the split, model init, training order and the
synthetic generators. Relative input paths resolve against the config
file's directory. A run manifest is also accepted: its ``config`` entry is
used verbatim.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .dataset_io import DetectionSynthSpec, SplitSpec, SyntheticSpec
from .hierarchy import APParams
from .multitask import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "seed": 0,
    "out": "runs/default",
    "inputs": {"embeddings": None, "detections": None, "ground_truth": None},
    "synthetic": None,
    "split": {"ratios": [0.7, 0.1, 0.2]},
    "similarity": {"sigma_floor": 1e-6, "rescale": False},
    "hierarchy": {"levels": 2, "preference": "median", "damping": 0.5, "max_iter": 500, "stable_iters": 15},
    "model": {"hidden": None, "lambdas": [0.5, 0.5]},
    "train": {
        "epochs": 30,
        "batch_size": 20,
        "learning_rate": 0.05,
        "fine_tune_rate": 0.005,
        "fine_tune_epochs": 0,
        "shuffle": True,
    },
    "eval": {"iou_min": 0.5, "nms_threshold": 0.7, "sweep_points": 21},
}

SYNTH_DEFAULTS = {k: v for k, v in asdict(SyntheticSpec()).items() if k != "seed"}
SYNTH_DEFAULTS["detections"] = None
DET_SYNTH_DEFAULTS = {k: v for k, v in asdict(DetectionSynthSpec()).items() if k not in ("seed", "labels")}


@dataclass(frozen=True)
class EvalParams:
    iou_min: float = 0.5
    nms_threshold: float = 0.7
    sweep_points: int = 21


@dataclass
class PipelineConfig:
    raw: dict
    seed: int
    out: Path
    embeddings: Optional[Path]
    detections: Optional[Path]
    ground_truth: Optional[Path]
    synthetic: Optional[SyntheticSpec]
    synthetic_detections: Optional[dict]
    split: SplitSpec
    sigma_floor: float
    rescale: bool
    levels: int
    ap: APParams
    hidden: Optional[int]
    lambdas: list
    train: TrainConfig
    eval: EvalParams = field(default_factory=EvalParams)


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


BUNDLED = ("synthetic",)


def read_config_file(path) -> tuple[dict, Optional[Path]]:
    """Return the raw config dict and the directory relative paths resolve from."""
    if path is None:
        return {}, None
    if str(path) in BUNDLED:
        text = resources.files("foodhier").joinpath("configs", f"{path}.json").read_text(encoding="utf-8")
        return json.loads(text), None
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    if "schema_version" in obj and "config" in obj:
        return obj["config"], None
    return obj, p.parent.resolve()


def resolve(raw: dict, base_dir: Optional[Path] = None, seed=None, out=None) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULTS, {k: v for k, v in raw.items() if k != "synthetic"}, "")
    synth_raw = raw.get("synthetic")
    if synth_raw is not None:
        synth = _merge(SYNTH_DEFAULTS, synth_raw, "synthetic.")
        if synth["detections"] is not None:
            synth["detections"] = _merge(DET_SYNTH_DEFAULTS, synth["detections"], "synthetic.detections.")
        cfg["synthetic"] = synth
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["out"] = str(out)

    def path_of(value):
        if value is None:
            return None
        p = Path(value)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        return p

    s = cfg["seed"]
    try:
        synthetic = None
        if cfg["synthetic"] is not None:
            spec = {k: v for k, v in cfg["synthetic"].items() if k != "detections"}
            synthetic = SyntheticSpec(seed=s, **spec)
        h = cfg["hierarchy"]
        return PipelineConfig(
            raw=cfg,
            seed=s,
            out=Path(cfg["out"]),
            embeddings=path_of(cfg["inputs"]["embeddings"]),
            detections=path_of(cfg["inputs"]["detections"]),
            ground_truth=path_of(cfg["inputs"]["ground_truth"]),
            synthetic=synthetic,
            synthetic_detections=None if synthetic is None else cfg["synthetic"]["detections"],
            split=SplitSpec(tuple(cfg["split"]["ratios"]), s),
            sigma_floor=float(cfg["similarity"]["sigma_floor"]),
            rescale=bool(cfg["similarity"]["rescale"]),
            levels=int(h["levels"]),
            ap=APParams(h["preference"], float(h["damping"]), int(h["max_iter"]), int(h["stable_iters"])),
            hidden=cfg["model"]["hidden"],
            lambdas=[float(v) for v in cfg["model"]["lambdas"]],
            train=TrainConfig(seed=s, **cfg["train"]),
            eval=EvalParams(**cfg["eval"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None


def load_config(path=None, seed=None, out=None) -> PipelineConfig:
    raw, base = read_config_file(path)
    return resolve(raw, base, seed=seed, out=out)


def config_to_dict(cfg: PipelineConfig) -> dict:
    """Fully defaulted config with input paths made absolute."""
    raw = copy.deepcopy(cfg.raw)
    for key in ("embeddings", "detections", "ground_truth"):
        value = getattr(cfg, key)
        raw["inputs"][key] = None if value is None else str(Path(value).resolve())
    return raw
