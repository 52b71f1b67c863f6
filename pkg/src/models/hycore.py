"""
Part-whole regularizers
Hierarchical norm ordering, the hyperbolic triplet term, the combined
objective and the triplet sampler that feeds it
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.autodiff import Tensor, as_tensor, no_grad
from src.core.hypgeo import Manifold, PoincareBall
from src.exceptions import DataError, ShapeError
from src.models.nn import ModelState, class_logits, cross_entropy, embed
from src.services.data import PointCloud, knn_part, subsample

logger = logging.getLogger(__name__)


class LossWeights(BaseModel):
    """alpha scales the triplet term, beta the norm-ordering term"""
    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(default=0.01, ge=0)
    beta: float = Field(default=0.01, ge=0)
    gamma: float = Field(default=1000.0, ge=0)
    delta: float = Field(default=4.0, ge=0)

    @property
    def regularized(self) -> bool:
        return self.alpha > 0 or self.beta > 0


class PartSampling(BaseModel):
    model_config = ConfigDict(extra="forbid")

    whole_min: int = Field(default=800, gt=0)
    whole_max: int = Field(default=1024, gt=0)
    part_min: int = Field(default=200, gt=0)
    part_max: int = Field(default=600, gt=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.whole_min > self.whole_max:
            raise ValueError("whole_min must not exceed whole_max")
        if self.part_min > self.part_max:
            raise ValueError("part_min must not exceed part_max")
        return self


@dataclass
class TripletBatch:
    """Aligned wholes, same-class parts, other-class parts; both parts share one size"""
    wholes: List[PointCloud]
    parts_pos: List[PointCloud]
    parts_neg: List[PointCloud]
    part_sizes: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        n = len(self.wholes)
        if not (len(self.parts_pos) == len(self.parts_neg) == len(self.part_sizes) == len(self.labels) == n):
            raise ShapeError("triplet batch components have different lengths")

    def __len__(self) -> int:
        return len(self.wholes)


@dataclass
class LossBreakdown:
    ce: float
    r_hier: float
    r_contr: float
    total: float

    def as_dict(self) -> Dict[str, float]:
        return {"ce": self.ce, "r_hier": self.r_hier, "r_contr": self.r_contr, "total": self.total}


def r_hier(
    z_whole,
    z_part,
    n_part,
    gamma: float = 1000.0,
    manifold: Optional[Manifold] = None,
) -> Tensor:
    """relu(-||z_whole|| + ||z_part|| + gamma / n_part) per row"""
    manifold = manifold or PoincareBall(1.0)
    n_part = np.asarray(n_part, dtype=np.float64)
    if np.any(n_part <= 0):
        raise DataError("part sizes must be positive")
    return (-manifold.norm(z_whole) + manifold.norm(z_part) + gamma / n_part).relu()


def r_contr(
    z_whole,
    z_pos,
    z_neg,
    delta: float = 4.0,
    manifold: Optional[Manifold] = None,
) -> Tensor:
    """relu(d(z_whole, z_pos) - d(z_whole, z_neg) + delta) per row"""
    manifold = manifold or PoincareBall(1.0)
    return (manifold.dist(z_whole, z_pos) - manifold.dist(z_whole, z_neg) + delta).relu()


def total_loss(
    batch: TripletBatch,
    state: ModelState,
    weights: LossWeights,
    crop_augment: bool = False,
) -> Tuple[Tensor, LossBreakdown]:
    """Mean over the batch of CE(wholes) + alpha * r_contr + beta * r_hier"""
    b = len(batch)
    if b == 0:
        raise DataError("empty triplet batch")
    manifold = state.manifold
    # 1. classify the wholes
    z_whole = embed(batch.wholes, state)
    ce = cross_entropy(class_logits(z_whole, state.head, manifold), batch.labels)

    if weights.regularized or crop_augment:
        # 2. embed both part sets in one pass, then the two hinge terms
        z_parts = embed(list(batch.parts_pos) + list(batch.parts_neg), state)
        z_pos, z_neg = z_parts[:b], z_parts[b:]
        hier = r_hier(z_whole, z_pos, batch.part_sizes, weights.gamma, manifold).mean()
        contr = r_contr(z_whole, z_pos, z_neg, weights.delta, manifold).mean()
        total = ce + hier * weights.beta + contr * weights.alpha
        # 3. optional CE on the positive parts
        if crop_augment:
            total = total + cross_entropy(class_logits(z_pos, state.head, manifold), batch.labels)
    else:
        # CE-only runs still report the regularizer values
        with no_grad():
            zw = as_tensor(z_whole.data)
            z_parts = embed(list(batch.parts_pos) + list(batch.parts_neg), state)
            hier = r_hier(zw, z_parts[:b], batch.part_sizes, weights.gamma, manifold).mean()
            contr = r_contr(zw, z_parts[:b], z_parts[b:], weights.delta, manifold).mean()
        total = ce

    breakdown = LossBreakdown(ce=ce.item(), r_hier=hier.item(), r_contr=contr.item(), total=total.item())
    return total, breakdown


def build_triplets(
    dataset: Sequence[PointCloud],
    rng: np.random.Generator,
    cfg: PartSampling,
    anchors: Optional[Sequence[int]] = None,
) -> TripletBatch:
    """Whole subsample, same-class kNN part and an other-class kNN part of equal size per anchor"""
    labels = np.array([c.label for c in dataset])
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DataError("triplet sampling needs at least two classes")
    small = [c.id for c in dataset if len(c) < cfg.whole_min]
    if small:
        raise DataError(f"{len(small)} clouds have fewer than {cfg.whole_min} points, e.g. '{small[0]}'")
    others = {int(k): np.flatnonzero(labels != k) for k in classes}

    if anchors is None:
        anchors = np.arange(len(dataset))
    wholes, pos, neg, sizes = [], [], [], []
    for i in anchors:
        cloud = dataset[int(i)]
        hi = min(cfg.whole_max, len(cloud))
        wholes.append(subsample(cloud, int(rng.integers(cfg.whole_min, hi + 1)), rng))
        n_part = int(rng.integers(cfg.part_min, cfg.part_max + 1))
        pos.append(knn_part(cloud, n_part, rng))
        candidates = others[int(cloud.label)]
        negative = dataset[int(candidates[rng.integers(len(candidates))])]
        if len(negative) < n_part:
            raise DataError(f"cloud '{negative.id}' is smaller than the sampled part size {n_part}")
        neg.append(knn_part(negative, n_part, rng))
        sizes.append(n_part)
    return TripletBatch(
        wholes=wholes,
        parts_pos=pos,
        parts_neg=neg,
        part_sizes=np.array(sizes, dtype=int),
        labels=np.array([dataset[int(i)].label for i in anchors], dtype=int),
    )
