"""Per-dimension Gaussian fits and overlap-coefficient category similarity."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .dataset_io import DatasetError, LabeledDataset

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class GaussianFit:
    mean: float
    sigma: float

    def __post_init__(self):
        if not math.isfinite(self.mean):
            raise ValueError("mean must be finite")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError("sigma must be positive and finite")


@dataclass
class CategoryProfile:
    label: str
    means: np.ndarray
    sigmas: np.ndarray

    @property
    def fits(self) -> list[GaussianFit]:
        return [GaussianFit(float(m), float(s)) for m, s in zip(self.means, self.sigmas)]


@dataclass
class SimilarityMatrix:
    labels: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = len(self.labels)
        if self.values.shape != (n, n):
            raise ValueError(f"matrix shape {self.values.shape} does not match {n} labels")

    def __len__(self) -> int:
        return len(self.labels)

    def is_symmetric(self, atol: float = 0.0) -> bool:
        return bool(np.allclose(self.values, self.values.T, rtol=0.0, atol=atol))

    def to_json(self) -> dict:
        return {"labels": list(self.labels), "matrix": self.values.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "SimilarityMatrix":
        return cls(list(obj["labels"]), np.array(obj["matrix"], dtype=np.float64))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SimilarityMatrix":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_gaussian(samples, sigma_floor: float = SIGMA_FLOOR) -> GaussianFit:
    """Mean and population standard deviation, floored at ``sigma_floor``."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot fit a Gaussian to zero samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    return GaussianFit(float(x.mean()), max(float(x.std()), sigma_floor))


def ovl_arrays(mu1, s1, mu2, s2) -> np.ndarray:
    """Vectorised overlap of N(mu1, s1^2) and N(mu2, s2^2).

    The densities cross where their log-densities agree, a quadratic in x.
    Between the two crossings the wider density is the lower one; outside
    them the narrower one is. Equal sigmas give a single midpoint crossing.
    """
    mu1, s1, mu2, s2 = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (mu1, s1, mu2, s2))
    )
    # orient so that (m_n, s_n) is the narrower density
    swap = s1 > s2
    m_n = np.where(swap, mu2, mu1)
    s_n = np.where(swap, s2, s1)
    m_w = np.where(swap, mu1, mu2)
    s_w = np.where(swap, s1, s2)

    out = np.empty(m_n.shape, dtype=np.float64)

    equal = s_n == s_w
    if np.any(equal):
        gap = np.abs(m_n[equal] - m_w[equal])
        out[equal] = 2.0 * ndtr(-gap / (2.0 * s_n[equal]))

    ne = ~equal
    if np.any(ne):
        mn, sn, mw, sw = m_n[ne], s_n[ne], m_w[ne], s_w[ne]
        a = 0.5 / sn**2 - 0.5 / sw**2  # > 0
        b = mw / sw**2 - mn / sn**2
        c = 0.5 * mn**2 / sn**2 - 0.5 * mw**2 / sw**2 - np.log(sw / sn)
        disc = np.maximum(b * b - 4.0 * a * c, 0.0)
        q = -0.5 * (b + np.where(b >= 0, 1.0, -1.0) * np.sqrt(disc))
        with np.errstate(divide="ignore", invalid="ignore"):
            r_a = q / a
            r_b = np.where(q != 0, c / q, r_a)
        lo = np.minimum(r_a, r_b)
        hi = np.maximum(r_a, r_b)
        # narrow tails outside [lo, hi], wide body inside
        tails = ndtr((lo - mn) / sn) + ndtr(-(hi - mn) / sn)
        body = ndtr((hi - mw) / sw) - ndtr((lo - mw) / sw)
        out[ne] = tails + body
    return np.clip(out, 0.0, 1.0)


def ovl(g1: GaussianFit, g2: GaussianFit) -> float:
    if g1 == g2:
        return 1.0
    return float(ovl_arrays(g1.mean, g1.sigma, g2.mean, g2.sigma))


def category_profiles(train: LabeledDataset, sigma_floor: float = SIGMA_FLOOR) -> list[CategoryProfile]:
    by_cat = train.rows_by_category()
    profiles = []
    for cat in train.categories:
        rows = by_cat.get(cat)
        if not rows:
            raise DatasetError(f"category {cat!r} has no training records")
        x = train.features[rows]
        profiles.append(CategoryProfile(cat, x.mean(axis=0), np.maximum(x.std(axis=0), sigma_floor)))
    return profiles


def similarity_matrix(
    train: LabeledDataset,
    sigma_floor: float = SIGMA_FLOOR,
    rescale: bool = False,
) -> SimilarityMatrix:
    """Mean per-dimension OVL between every pair of categories.

    With ``rescale`` the off-diagonal entries are min-max stretched onto
    [0, 1]; the diagonal stays at 1 either way.
    """
    profiles = category_profiles(train, sigma_floor)
    n = len(profiles)
    values = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            p, q = profiles[i], profiles[j]
            per_dim = ovl_arrays(p.means, p.sigmas, q.means, q.sigmas)
            # fixed-order summation over dimensions
            values[i, j] = values[j, i] = math.fsum(per_dim) / len(per_dim)
    if rescale and n > 2:
        off = ~np.eye(n, dtype=bool)
        lo, hi = values[off].min(), values[off].max()
        if hi > lo:
            values[off] = (values[off] - lo) / (hi - lo)
    return SimilarityMatrix([p.label for p in profiles], values)


def write_matrix_csv(sim: SimilarityMatrix, path) -> None:
    """Plot-ready matrix dump: header row of labels, one row per label."""
    lines = ["label," + ",".join(sim.labels)]
    for lab, row in zip(sim.labels, sim.values):
        lines.append(lab + "," + ",".join(f"{v:.6f}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
