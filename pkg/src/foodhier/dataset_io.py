"""Embedding datasets and box sets: loading, validation, splitting, synthesis.

On-disk formats (UTF-8 JSONL, one object per line):

* embeddings   ``{"id": str, "label": str, "features": [float, ...]}``
* detections   ``{"image_id": str, "box": [x1, y1, x2, y2], "score": float, "label": str?}``
* ground truth ``{"image_id": str, "box": [x1, y1, x2, y2], "label": str}``

All randomness goes through ``numpy.random.Generator(PCG64(seed))``.
"""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .boxes import BoundingBox, BoxError, Detection, GroundTruthBox

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Raised for malformed or inconsistent input files."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class FeatureRecord:
    id: str
    label: str
    features: np.ndarray


@dataclass
class LabeledDataset:
    """Ordered embedding records with a lexicographic category index."""

    ids: list[str]
    labels: list[str]
    features: np.ndarray  # (n, dim) float64
    categories: list[str] = field(default=None)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DatasetError("features must be a 2-d array")
        n = len(self.ids)
        if len(self.labels) != n or self.features.shape[0] != n:
            raise DatasetError("ids, labels and features disagree in length")
        if n and self.features.shape[1] < 1:
            raise DatasetError("feature dimension must be >= 1")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("non-finite feature values")
        if len(set(self.ids)) != n:
            raise DatasetError("duplicate record id")
        present = sorted(set(self.labels))
        if self.categories is None:
            self.categories = present
        else:
            self.categories = sorted(self.categories)
            missing = set(present) - set(self.categories)
            if missing:
                raise DatasetError(f"labels not in category list: {sorted(missing)}")
        self._index = {c: i for i, c in enumerate(self.categories)}

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def category_index(self, label: str) -> int:
        return self._index[label]

    @property
    def y(self) -> np.ndarray:
        return np.array([self._index[l] for l in self.labels], dtype=np.int64)

    def records(self) -> Iterable[FeatureRecord]:
        for i in range(len(self)):
            yield FeatureRecord(self.ids[i], self.labels[i], self.features[i])

    def subset(self, rows: Sequence[int]) -> "LabeledDataset":
        rows = list(rows)
        return LabeledDataset(
            ids=[self.ids[r] for r in rows],
            labels=[self.labels[r] for r in rows],
            features=self.features[rows].reshape(len(rows), self.dim),
            categories=list(self.categories),
        )

    def rows_by_category(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = defaultdict(list)
        for i, lab in enumerate(self.labels):
            out[lab].append(i)
        return out


# ---------------------------------------------------------------- embeddings


def load_embeddings(path) -> LabeledDataset:
    path = Path(path)
    ids, labels, rows = [], [], []
    dim = None
    seen = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rid, lab, feats = obj["id"], obj["label"], obj["features"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record ({exc})") from None
            if not isinstance(rid, str) or not isinstance(lab, str) or not isinstance(feats, list):
                raise DatasetError(f"{path}:{lineno}: malformed record (bad field types)")
            if dim is None:
                dim = len(feats)
                if dim < 1:
                    raise DatasetError(f"{path}:{lineno}: empty feature vector")
            elif len(feats) != dim:
                raise DatasetError(
                    f"{path}:{lineno}: inconsistent dimension {len(feats)} (expected {dim})"
                )
            if rid in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {rid!r}")
            seen.add(rid)
            try:
                vec = [float(v) for v in feats]
            except (TypeError, ValueError):
                raise DatasetError(f"{path}:{lineno}: non-numeric feature") from None
            if not all(math.isfinite(v) for v in vec):
                raise DatasetError(f"{path}:{lineno}: non-finite feature value")
            ids.append(rid)
            labels.append(lab)
            rows.append(vec)
    if not ids:
        raise DatasetError(f"{path}: empty file")
    return LabeledDataset(ids, labels, np.array(rows, dtype=np.float64))


def write_embeddings(ds: LabeledDataset, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in ds.records():
            obj = {"id": rec.id, "label": rec.label, "features": rec.features.tolist()}
            fh.write(json.dumps(obj) + "\n")


# ---------------------------------------------------------------- splitting


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ValueError(f"invalid split ratios {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {sum(self.ratios)}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def split_dataset(ds: LabeledDataset, spec: SplitSpec):
    """Stratified train/val/test split.

    Categories are visited in lexicographic order; each one's rows are
    shuffled with a single PCG64 stream seeded by ``spec.seed``. Train gets
    ``floor(r_train * n)``, val ``floor(r_val * n)``, test the remainder.
    Categories with fewer than 3 records go entirely to train.
    """
    if len(ds) == 0:
        raise DatasetError("cannot split an empty dataset")
    rng = make_rng(spec.seed)
    by_cat = ds.rows_by_category()
    parts: tuple[list[int], list[int], list[int]] = ([], [], [])
    for cat in ds.categories:
        rows = np.array(by_cat.get(cat, []), dtype=np.int64)
        n = len(rows)
        if n == 0:
            continue
        if n < 3:
            log.warning("category %r has %d records; all assigned to train", cat, n)
            parts[0].extend(rows.tolist())
            continue
        rows = rows[rng.permutation(n)]
        # the 1e-9 guards against products like 0.29 * 100 = 28.999999999999996
        n_train = math.floor(spec.ratios[0] * n + 1e-9)
        n_val = math.floor(spec.ratios[1] * n + 1e-9)
        parts[0].extend(rows[:n_train].tolist())
        parts[1].extend(rows[n_train : n_train + n_val].tolist())
        parts[2].extend(rows[n_train + n_val :].tolist())
    # keep file order inside each part
    return tuple(ds.subset(sorted(p)) for p in parts)


# ---------------------------------------------------------------- boxes


def _read_jsonl(path):
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc})") from None


def load_detections(path) -> list[Detection]:
    out = []
    for lineno, obj in _read_jsonl(path):
        try:
            label = obj.get("label")
            out.append(
                Detection(
                    image_id=str(obj["image_id"]),
                    box=BoundingBox.from_seq(obj["box"]),
                    score=float(obj["score"]),
                    label=None if label is None else str(label),
                )
            )
        except (KeyError, TypeError, BoxError) as exc:
            raise DatasetError(f"{path}:{lineno}: invalid detection ({exc})") from None
    return out


def load_ground_truth(path) -> list[GroundTruthBox]:
    out = []
    for lineno, obj in _read_jsonl(path):
        try:
            out.append(
                GroundTruthBox(
                    image_id=str(obj["image_id"]),
                    box=BoundingBox.from_seq(obj["box"]),
                    label=str(obj["label"]),
                )
            )
        except (KeyError, TypeError, BoxError) as exc:
            raise DatasetError(f"{path}:{lineno}: invalid ground truth ({exc})") from None
    return out


def write_detections(dets: Iterable[Detection], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in dets:
            obj = {"image_id": d.image_id, "box": d.box.as_list(), "score": d.score}
            if d.label is not None:
                obj["label"] = d.label
            fh.write(json.dumps(obj) + "\n")


def write_ground_truth(gts: Iterable[GroundTruthBox], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for g in gts:
            obj = {"image_id": g.image_id, "box": g.box.as_list(), "label": g.label}
            fh.write(json.dumps(obj) + "\n")


def group_by_image(items) -> dict[str, list]:
    groups: dict[str, list] = {}
    for it in items:
        groups.setdefault(it.image_id, []).append(it)
    return groups


# ---------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-cluster embedding generator.

    Group centres ~ N(0, between^2), category means = centre + N(0, within^2),
    samples = category mean + N(0, noise^2), independently per dimension.
    """

    n_categories: int = 20
    n_groups: int = 4
    dim: int = 32
    samples_per_category: int = 100
    within_group_spread: float = 0.3
    between_group_spread: float = 3.0
    noise_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("n_categories", "n_groups", "dim", "samples_per_category"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_groups > self.n_categories:
            raise ValueError("n_groups must not exceed n_categories")
        if self.within_group_spread <= 0 or self.between_group_spread <= 0:
            raise ValueError("group spreads must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def category_names(n: int) -> list[str]:
    width = max(2, len(str(n - 1)))
    return [f"c{i:0{width}d}" for i in range(n)]


def synthesize_dataset(spec: SyntheticSpec):
    """Return ``(dataset, groups)`` where ``groups`` maps label -> planted group."""
    rng = make_rng(spec.seed)
    names = category_names(spec.n_categories)
    # round-robin group assignment keeps group sizes within one of each other
    group_of = {name: i % spec.n_groups for i, name in enumerate(names)}
    centres = rng.normal(0.0, spec.between_group_spread, size=(spec.n_groups, spec.dim))
    offsets = rng.normal(0.0, spec.within_group_spread, size=(spec.n_categories, spec.dim))
    means = centres[[group_of[n] for n in names]] + offsets

    m = spec.samples_per_category
    noise = rng.normal(0.0, 1.0, size=(spec.n_categories * m, spec.dim)) * spec.noise_sigma
    feats = np.repeat(means, m, axis=0) + noise
    labels = [n for n in names for _ in range(m)]
    ids = [f"{n}-{j:05d}" for n in names for j in range(m)]
    return LabeledDataset(ids, labels, feats), group_of


@dataclass(frozen=True)
class DetectionSynthSpec:
    """Scored boxes around planted ground truth, plus duplicates and clutter."""

    labels: tuple[str, ...] = ("c00", "c01", "c02")
    n_images: int = 40
    max_objects: int = 3
    image_size: float = 512.0
    duplicates: int = 2
    clutter: int = 3
    label_accuracy: float = 0.8
    miss_rate: float = 0.1
    seed: int = 0


def synthesize_detections(spec: DetectionSynthSpec):
    """Return ``(detections, ground_truth)``.

    True detections jitter their ground-truth box and score in [0.55, 1];
    duplicates overlap the first hit heavily with a lower score; clutter
    boxes are placed at random with scores in [0, 0.5).
    """
    rng = make_rng(spec.seed)
    labels = list(spec.labels)
    size = spec.image_size
    dets: list[Detection] = []
    gts: list[GroundTruthBox] = []
    for i in range(spec.n_images):
        image_id = f"img{i:05d}"
        n_obj = int(rng.integers(1, spec.max_objects + 1))
        for _ in range(n_obj):
            w, h = rng.uniform(0.15, 0.35, size=2) * size
            x1, y1 = rng.uniform(0, size - w), rng.uniform(0, size - h)
            label = labels[int(rng.integers(len(labels)))]
            gt = BoundingBox(x1, y1, x1 + w, y1 + h)
            gts.append(GroundTruthBox(image_id, gt, label))
            if rng.uniform() < spec.miss_rate:
                continue
            if rng.uniform() < spec.label_accuracy:
                pred = label
            else:
                pred = labels[int(rng.integers(len(labels)))]
            score = float(rng.uniform(0.55, 1.0))
            jitter = rng.normal(0.0, 0.03, size=4) * np.array([w, h, w, h])
            dets.append(Detection(image_id, _clip_box(gt.as_list() + jitter, size), score, pred))
            for _ in range(spec.duplicates):
                jit = rng.normal(0.0, 0.05, size=4) * np.array([w, h, w, h])
                dup_score = float(score * rng.uniform(0.5, 0.95))
                dets.append(Detection(image_id, _clip_box(gt.as_list() + jit, size), dup_score, pred))
        for _ in range(spec.clutter):
            w, h = rng.uniform(0.05, 0.3, size=2) * size
            x1, y1 = rng.uniform(0, size - w), rng.uniform(0, size - h)
            label = labels[int(rng.integers(len(labels)))]
            dets.append(
                Detection(image_id, BoundingBox(x1, y1, x1 + w, y1 + h), float(rng.uniform(0, 0.5)), label)
            )
    return dets, gts


def _clip_box(coords, size) -> BoundingBox:
    x1, y1, x2, y2 = (float(v) for v in np.clip(coords, 0.0, size))
    return BoundingBox(x1, y1, max(x2, x1 + 1.0), max(y2, y1 + 1.0))
