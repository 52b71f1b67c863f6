"""
Point-cloud data
Procedural shape generator, XYZ/manifest loaders, stratified splits and the
subsample / nearest-neighbour part samplers used by training and evaluation
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.exceptions import DataError

logger = logging.getLogger(__name__)

SHAPE_KINDS = ("sphere", "cube", "cylinder", "cone", "torus", "pyramid", "table", "chair")
MIN_GENERATED_POINTS = 8
MANIFEST_NAME = "manifest.csv"
CLASSES_NAME = "classes.txt"


@dataclass
class PointCloud:
    """N 3D points with a class label and a stable identifier"""
    points: np.ndarray
    label: int = -1
    id: str = ""
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise DataError(f"cloud '{self.id}': expected an (N, 3) array, got shape {points.shape}")
        if points.shape[0] < 1:
            raise DataError(f"cloud '{self.id}' has no points")
        if not np.all(np.isfinite(points)):
            raise DataError(f"cloud '{self.id}' has non-finite coordinates")
        self.points = points

    def __len__(self) -> int:
        return self.points.shape[0]


class DatasetSpec(BaseModel):
    """Procedural dataset recipe"""
    model_config = ConfigDict(extra="forbid")

    classes: List[str] = Field(default_factory=lambda: list(SHAPE_KINDS))
    per_class_train: int = Field(default=200, gt=0)
    per_class_test: int = Field(default=50, gt=0)
    points_per_cloud: int = Field(default=1024, ge=MIN_GENERATED_POINTS)
    noise_sigma: float = Field(default=0.01, ge=0)
    # per-axis stretch drawn from U[1 - j, 1 + j] for every instance
    scale_jitter: float = Field(default=0.2, ge=0, lt=1)
    seed: int = 0

    @field_validator("classes")
    @classmethod
    def _known_classes(cls, classes: List[str]) -> List[str]:
        unknown = [c for c in classes if c not in SHAPE_KINDS]
        if unknown:
            raise ValueError(f"unknown shape kinds {unknown}; choose from {list(SHAPE_KINDS)}")
        if len(set(classes)) != len(classes):
            raise ValueError("shape kinds must be unique")
        if len(classes) < 2:
            raise ValueError("at least two classes are required")
        return classes


# ---------------------------------------------------------------------------
# Surface samplers: each returns k points uniformly distributed by area
# ---------------------------------------------------------------------------

Sampler = Callable[[np.random.Generator, int], np.ndarray]


def _sphere(center, radius: float) -> Tuple[float, Sampler]:
    def sample(rng, k):
        v = rng.normal(size=(k, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return np.asarray(center) + radius * v
    return 4.0 * np.pi * radius ** 2, sample


def _rect(origin, u, v) -> Tuple[float, Sampler]:
    origin, u, v = (np.asarray(a, dtype=np.float64) for a in (origin, u, v))

    def sample(rng, k):
        ab = rng.uniform(size=(k, 2))
        return origin + ab[:, :1] * u + ab[:, 1:] * v
    return float(np.linalg.norm(np.cross(u, v))), sample


def _triangle(a, b, c) -> Tuple[float, Sampler]:
    a, b, c = (np.asarray(p, dtype=np.float64) for p in (a, b, c))

    def sample(rng, k):
        r = rng.uniform(size=(k, 2))
        s = np.sqrt(r[:, :1])
        return (1 - s) * a + s * (1 - r[:, 1:]) * b + s * r[:, 1:] * c
    return 0.5 * float(np.linalg.norm(np.cross(b - a, c - a))), sample


def _disk(center, radius: float) -> Tuple[float, Sampler]:
    """Horizontal disk"""
    def sample(rng, k):
        r = radius * np.sqrt(rng.uniform(size=k))
        t = rng.uniform(0.0, 2.0 * np.pi, size=k)
        return np.asarray(center) + np.stack([r * np.cos(t), r * np.sin(t), np.zeros(k)], axis=1)
    return np.pi * radius ** 2, sample


def _tube(base, radius: float, height: float) -> Tuple[float, Sampler]:
    """Lateral surface of a vertical cylinder standing on base"""
    def sample(rng, k):
        t = rng.uniform(0.0, 2.0 * np.pi, size=k)
        z = rng.uniform(0.0, height, size=k)
        return np.asarray(base) + np.stack([radius * np.cos(t), radius * np.sin(t), z], axis=1)
    return 2.0 * np.pi * radius * height, sample


def _cone_side(apex, radius: float, height: float) -> Tuple[float, Sampler]:
    def sample(rng, k):
        s = np.sqrt(rng.uniform(size=k))
        t = rng.uniform(0.0, 2.0 * np.pi, size=k)
        return np.asarray(apex) + np.stack([s * radius * np.cos(t), s * radius * np.sin(t), -s * height], axis=1)
    return np.pi * radius * np.hypot(radius, height), sample


def _torus(major: float, minor: float) -> Tuple[float, Sampler]:
    def sample(rng, k):
        out = np.empty((0, 3))
        while out.shape[0] < k:
            m = 2 * (k - out.shape[0]) + 8
            theta = rng.uniform(0.0, 2.0 * np.pi, size=m)
            phi = rng.uniform(0.0, 2.0 * np.pi, size=m)
            keep = rng.uniform(size=m) < (major + minor * np.cos(phi)) / (major + minor)
            ring = major + minor * np.cos(phi[keep])
            pts = np.stack([ring * np.cos(theta[keep]), ring * np.sin(theta[keep]), minor * np.sin(phi[keep])], axis=1)
            out = np.concatenate([out, pts])
        return out[:k]
    return 4.0 * np.pi ** 2 * major * minor, sample


def _legs(corners: Sequence[Tuple[float, float]], radius: float, height: float) -> List[Tuple[float, Sampler]]:
    return [_tube((x, y, 0.0), radius, height) for x, y in corners]


def _box(size: float) -> List[Tuple[float, Sampler]]:
    h = size / 2.0
    faces = []
    for axis in range(3):
        u = np.zeros(3)
        v = np.zeros(3)
        u[(axis + 1) % 3] = size
        v[(axis + 2) % 3] = size
        for sign in (-1.0, 1.0):
            origin = -h * np.ones(3)
            origin[axis] = sign * h
            faces.append(_rect(origin, u, v))
    return faces


def _parts_for(kind: str) -> List[Tuple[float, Sampler]]:
    if kind == "sphere":
        return [_sphere((0.0, 0.0, 0.0), 1.0)]
    if kind == "cube":
        return _box(1.0)
    if kind == "cylinder":
        return [_tube((0.0, 0.0, 0.0), 0.5, 1.5), _disk((0.0, 0.0, 0.0), 0.5), _disk((0.0, 0.0, 1.5), 0.5)]
    if kind == "cone":
        return [_cone_side((0.0, 0.0, 1.4), 0.6, 1.4), _disk((0.0, 0.0, 0.0), 0.6)]
    if kind == "torus":
        return [_torus(0.7, 0.25)]
    if kind == "pyramid":
        b = [(-0.6, -0.6, 0.0), (0.6, -0.6, 0.0), (0.6, 0.6, 0.0), (-0.6, 0.6, 0.0)]
        apex = (0.0, 0.0, 1.0)
        sides = [_triangle(b[i], b[(i + 1) % 4], apex) for i in range(4)]
        return [_rect(b[0], (1.2, 0.0, 0.0), (0.0, 1.2, 0.0))] + sides
    if kind == "table":
        top = _rect((-0.7, -0.45, 0.75), (1.4, 0.0, 0.0), (0.0, 0.9, 0.0))
        corners = [(-0.62, -0.37), (0.62, -0.37), (0.62, 0.37), (-0.62, 0.37)]
        return [top] + _legs(corners, 0.04, 0.75)
    if kind == "chair":
        seat = _rect((-0.3, -0.3, 0.45), (0.6, 0.0, 0.0), (0.0, 0.6, 0.0))
        back = _rect((-0.3, 0.3, 0.45), (0.6, 0.0, 0.0), (0.0, 0.0, 0.6))
        corners = [(-0.26, -0.26), (0.26, -0.26), (0.26, 0.26), (-0.26, 0.26)]
        return [seat, back] + _legs(corners, 0.03, 0.45)
    raise DataError(f"Unknown shape kind '{kind}'. Choose from {list(SHAPE_KINDS)}")


def normalize_points(points: np.ndarray) -> np.ndarray:
    """Center on the centroid and scale the farthest point to radius 1"""
    centered = points - points.mean(axis=0, keepdims=True)
    radius = float(np.max(np.linalg.norm(centered, axis=1)))
    return centered / radius if radius > 0 else centered


def _rotate_about_z(points: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return points @ rot.T


def generate_shape(
    kind: str,
    n: int,
    rng: np.random.Generator,
    noise_sigma: float = 0.01,
    scale_jitter: float = 0.0,
    rotate: bool = True,
    normalize: bool = True,
    label: int = -1,
    cloud_id: str = "",
) -> PointCloud:
    """Sample n surface points of a parametric shape, stretch, jitter, rotate about z, normalize"""
    if n < MIN_GENERATED_POINTS:
        raise DataError(f"need at least {MIN_GENERATED_POINTS} points per shape, got {n}")
    if not 0.0 <= scale_jitter < 1.0:
        raise DataError(f"scale_jitter must lie in [0, 1), got {scale_jitter}")
    parts = _parts_for(kind)
    areas = np.array([a for a, _ in parts])
    counts = rng.multinomial(n, areas / areas.sum())
    points = np.concatenate([sampler(rng, k) for (_, sampler), k in zip(parts, counts) if k > 0])
    if scale_jitter > 0:
        points = points * rng.uniform(1.0 - scale_jitter, 1.0 + scale_jitter, size=3)
    if noise_sigma > 0:
        points = points + rng.normal(0.0, noise_sigma, size=points.shape)
    if rotate:
        points = _rotate_about_z(points, rng.uniform(0.0, 2.0 * np.pi))
    if normalize:
        points = normalize_points(points)
    return PointCloud(points, label=label, id=cloud_id or kind, meta={"kind": kind})


def generate_dataset(spec: DatasetSpec) -> Tuple[List[PointCloud], List[str]]:
    """All train+test clouds of a spec, each from its own derived seed"""
    clouds = []
    per_class = spec.per_class_train + spec.per_class_test
    for label, kind in enumerate(spec.classes):
        for i in range(per_class):
            rng = np.random.default_rng([spec.seed, label, i])
            clouds.append(generate_shape(
                kind, spec.points_per_cloud, rng,
                noise_sigma=spec.noise_sigma, scale_jitter=spec.scale_jitter,
                label=label, cloud_id=f"{kind}_{i:04d}",
            ))
    logger.info("Generated dataset", extra={"clouds": len(clouds), "classes": len(spec.classes)})
    return clouds, list(spec.classes)


def split(dataset: Sequence[PointCloud], spec: DatasetSpec) -> Tuple[List[PointCloud], List[PointCloud]]:
    """Seeded stratified split with exact per-class counts"""
    rng = np.random.default_rng(spec.seed)
    by_label: Dict[int, List[PointCloud]] = {}
    for cloud in dataset:
        by_label.setdefault(cloud.label, []).append(cloud)
    train, test = [], []
    for label in sorted(by_label):
        members = sorted(by_label[label], key=lambda c: c.id)
        needed = spec.per_class_train + spec.per_class_test
        if len(members) < needed:
            raise DataError(f"class {label} has {len(members)} clouds, {needed} requested")
        order = rng.permutation(len(members))
        train.extend(members[i] for i in order[:spec.per_class_train])
        test.extend(members[i] for i in order[spec.per_class_train:needed])
    return train, test


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def load_xyz(path: Union[str, Path], label: int = -1, cloud_id: Optional[str] = None) -> PointCloud:
    """Parse whitespace-separated 'x y z' lines into a normalized cloud"""
    path = Path(path)
    rows = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 values, got {len(fields)}")
            try:
                rows.append([float(v) for v in fields])
            except ValueError:
                raise DataError(f"{path}:{lineno}: could not parse '{line.strip()}'")
    if not rows:
        raise DataError(f"{path}: empty point file")
    points = np.array(rows)
    if not np.all(np.isfinite(points)):
        raise DataError(f"{path}: non-finite coordinates")
    return PointCloud(normalize_points(points), label=label, id=cloud_id or path.stem)


def save_xyz(cloud: PointCloud, path: Union[str, Path]) -> None:
    np.savetxt(path, cloud.points, fmt="%.17g")


def load_manifest(path: Union[str, Path]) -> Dict[str, int]:
    """'id,label' per line, no header"""
    try:
        frame = pd.read_csv(path, header=None, names=["id", "label"], dtype={"id": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read manifest {path}: {e}")
    if frame["label"].isna().any():
        raise DataError(f"manifest {path} has records without a label")
    return {str(i): int(l) for i, l in zip(frame["id"], frame["label"])}


def save_dataset_dir(clouds: Sequence[PointCloud], root: Union[str, Path], class_names: Sequence[str]) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for cloud in clouds:
        save_xyz(cloud, root / f"{cloud.id}.xyz")
    pd.DataFrame({"id": [c.id for c in clouds], "label": [c.label for c in clouds]}).to_csv(
        root / MANIFEST_NAME, header=False, index=False
    )
    (root / CLASSES_NAME).write_text("\n".join(class_names) + "\n")


def load_dataset_dir(root: Union[str, Path]) -> Tuple[List[PointCloud], List[str]]:
    """Read manifest.csv, classes.txt (optional) and one <id>.xyz per record"""
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"no {MANIFEST_NAME} in {root}")
    labels = load_manifest(manifest_path)
    clouds = []
    for cloud_id, label in labels.items():
        xyz = root / f"{cloud_id}.xyz"
        if not xyz.exists():
            raise DataError(f"manifest lists '{cloud_id}' but {xyz.name} is missing")
        clouds.append(load_xyz(xyz, label=label, cloud_id=cloud_id))
    classes_path = root / CLASSES_NAME
    if classes_path.exists():
        class_names = [line.strip() for line in classes_path.read_text().splitlines() if line.strip()]
    else:
        class_names = [str(i) for i in range(max(labels.values()) + 1)]
    if any(not 0 <= c.label < len(class_names) for c in clouds):
        raise DataError(f"labels in {manifest_path} fall outside the {len(class_names)} known classes")
    return clouds, class_names


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

def subsample(cloud: PointCloud, k: int, rng: np.random.Generator) -> PointCloud:
    """k points drawn uniformly without replacement"""
    if k < 1:
        raise DataError("subsample size must be positive")
    k = min(k, len(cloud))
    idx = rng.choice(len(cloud), size=k, replace=False)
    return PointCloud(cloud.points[idx], label=cloud.label, id=cloud.id, meta={**cloud.meta, "n_points": k})


def knn_part(
    cloud: PointCloud,
    n: int,
    rng: np.random.Generator,
    anchor: Optional[int] = None,
) -> PointCloud:
    """The n nearest neighbours (brute force, Euclidean) of a random anchor point"""
    if not 1 <= n <= len(cloud):
        raise DataError(f"part size {n} outside [1, {len(cloud)}] for cloud '{cloud.id}'")
    if anchor is None:
        anchor = int(rng.integers(len(cloud)))
    sq = np.sum((cloud.points - cloud.points[anchor]) ** 2, axis=1)
    idx = np.sort(np.argsort(sq, kind="stable")[:n])
    return PointCloud(
        cloud.points[idx],
        label=cloud.label,
        id=f"{cloud.id}#part{n}",
        meta={**cloud.meta, "source": cloud.id, "anchor": anchor, "part_size": n},
    )


def load_splits(
    spec: DatasetSpec,
    data_dir: Optional[Union[str, Path]] = None,
) -> Tuple[List[PointCloud], List[PointCloud], List[str]]:
    """Train/test clouds and class names, from a dataset directory or the generator

    A directory holding train/ and test/ sub-directories is used as-is; a flat
    directory is split with the DatasetSpec per-class counts.
    """
    if data_dir is None:
        clouds, class_names = generate_dataset(spec)
        train, test = split(clouds, spec)
        return train, test, class_names
    root = Path(data_dir)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    if (root / "train").is_dir() and (root / "test").is_dir():
        train, class_names = load_dataset_dir(root / "train")
        test, test_names = load_dataset_dir(root / "test")
        if test_names != class_names:
            raise DataError(f"train and test class lists differ in {root}")
        return train, test, class_names
    clouds, class_names = load_dataset_dir(root)
    train, test = split(clouds, spec)
    return train, test, class_names
