"""
HyCoRe model
Shared per-point encoder with max pooling, origin lift into the ball,
Möbius projection layer and a Möbius classification head
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.core.autodiff import Tensor, as_tensor, log_softmax, no_grad, segment_max
from src.core.hypgeo import Curvature, Manifold, PoincarePoint, make_manifold
from src.exceptions import DataError, ShapeError
from src.services.data import PointCloud

logger = logging.getLogger(__name__)

CloudLike = Union[PointCloud, np.ndarray]


class ModelDims(BaseModel):
    """Layer widths; m is the encoder output, f the embedding dimension"""
    model_config = ConfigDict(extra="forbid")

    hidden1: int = Field(default=32, gt=0)
    hidden2: int = Field(default=64, gt=0)
    feature_dim: int = Field(default=128, gt=0)
    embed_dim: int = Field(default=16, gt=0)
    # scales the last encoder layer's init so exp0 starts away from the boundary
    feature_gain: float = Field(default=0.1, gt=0)
    mobius_activation: Literal["none", "relu", "tanh"] = "none"


@dataclass
class EncoderParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor


@dataclass
class MobiusLayerParams:
    m: Tensor  # (f, feature_dim)
    b: Tensor  # manifold bias, (f,)


@dataclass
class HeadParams:
    w: Tensor  # (K, f)
    b: Tensor  # manifold bias, (K,)


MANIFOLD_PARAMS = ("mobius.b", "head.b")


@dataclass
class ModelState:
    """All trainable parameters plus the geometry they live in"""
    encoder: EncoderParams
    mobius: MobiusLayerParams
    head: HeadParams
    curvature: Curvature
    euclidean_mode: bool
    dims: ModelDims
    class_names: List[str] = field(default_factory=list)

    @property
    def manifold(self) -> Manifold:
        return make_manifold(self.curvature, self.euclidean_mode)

    @property
    def num_classes(self) -> int:
        return self.head.w.shape[0]

    def named_parameters(self) -> Dict[str, Tensor]:
        e = self.encoder
        return {
            "encoder.w1": e.w1, "encoder.b1": e.b1,
            "encoder.w2": e.w2, "encoder.b2": e.b2,
            "encoder.w3": e.w3, "encoder.b3": e.b3,
            "mobius.m": self.mobius.m, "mobius.b": self.mobius.b,
            "head.w": self.head.w, "head.b": self.head.b,
        }

    def is_manifold_param(self, name: str) -> bool:
        return name in MANIFOLD_PARAMS

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.zero_grad()

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def replace(self, name: str, value: Tensor) -> "ModelState":
        """Copy of the state with one parameter swapped; other tensors are shared"""
        arrays = dict(self.named_parameters())
        if name not in arrays:
            raise KeyError(f"unknown parameter '{name}'")
        arrays[name] = value
        return _assemble(arrays, self.curvature, self.euclidean_mode, self.dims, self.class_names)


def _assemble(
    params: Dict[str, Tensor],
    curvature: Curvature,
    euclidean_mode: bool,
    dims: ModelDims,
    class_names: List[str],
) -> ModelState:
    return ModelState(
        encoder=EncoderParams(
            params["encoder.w1"], params["encoder.b1"],
            params["encoder.w2"], params["encoder.b2"],
            params["encoder.w3"], params["encoder.b3"],
        ),
        mobius=MobiusLayerParams(params["mobius.m"], params["mobius.b"]),
        head=HeadParams(params["head.w"], params["head.b"]),
        curvature=curvature,
        euclidean_mode=euclidean_mode,
        dims=dims,
        class_names=list(class_names),
    )


def state_from_arrays(
    arrays: Dict[str, np.ndarray],
    curvature: Union[float, Curvature],
    euclidean_mode: bool,
    dims: ModelDims,
    class_names: Sequence[str] = (),
) -> ModelState:
    params = {name: Tensor(np.array(a, dtype=np.float64), requires_grad=True) for name, a in arrays.items()}
    if not isinstance(curvature, Curvature):
        curvature = Curvature(float(curvature))
    state = _assemble(params, curvature, euclidean_mode, dims, list(class_names))
    _check_shapes(state)
    return state


def _check_shapes(state: ModelState) -> None:
    d = state.dims
    k = state.num_classes
    expected = {
        "encoder.w1": (3, d.hidden1), "encoder.b1": (d.hidden1,),
        "encoder.w2": (d.hidden1, d.hidden2), "encoder.b2": (d.hidden2,),
        "encoder.w3": (d.hidden2, d.feature_dim), "encoder.b3": (d.feature_dim,),
        "mobius.m": (d.embed_dim, d.feature_dim), "mobius.b": (d.embed_dim,),
        "head.w": (k, d.embed_dim), "head.b": (k,),
    }
    for name, p in state.named_parameters().items():
        if p.shape != expected[name]:
            raise ShapeError(f"{name}: expected shape {expected[name]}, got {p.shape}")
        if not np.all(np.isfinite(p.data)):
            raise ShapeError(f"{name}: non-finite values")
    if not state.euclidean_mode:
        for name in MANIFOLD_PARAMS:
            PoincarePoint(state.named_parameters()[name].data, state.curvature)


def _uniform(rng: np.random.Generator, fan_in: int, shape, gain: float = 1.0) -> Tensor:
    bound = gain / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_state(
    dims: ModelDims,
    num_classes: int,
    curvature: float = 1.0,
    euclidean_mode: bool = False,
    seed: int = 0,
    class_names: Sequence[str] = (),
) -> ModelState:
    """Fan-in uniform weights, zero encoder biases, manifold biases at the origin"""
    if num_classes < 2:
        raise ShapeError("a classifier needs at least two classes")
    rng = np.random.default_rng(seed)
    d = dims
    params = {
        "encoder.w1": _uniform(rng, 3, (3, d.hidden1)),
        "encoder.b1": Tensor(np.zeros(d.hidden1), requires_grad=True),
        "encoder.w2": _uniform(rng, d.hidden1, (d.hidden1, d.hidden2)),
        "encoder.b2": Tensor(np.zeros(d.hidden2), requires_grad=True),
        "encoder.w3": _uniform(rng, d.hidden2, (d.hidden2, d.feature_dim), gain=d.feature_gain),
        "encoder.b3": Tensor(np.zeros(d.feature_dim), requires_grad=True),
        "mobius.m": _uniform(rng, d.feature_dim, (d.embed_dim, d.feature_dim)),
        "mobius.b": Tensor(np.zeros(d.embed_dim), requires_grad=True),
        "head.w": _uniform(rng, d.embed_dim, (num_classes, d.embed_dim)),
        "head.b": Tensor(np.zeros(num_classes), requires_grad=True),
    }
    names = list(class_names) or [str(i) for i in range(num_classes)]
    state = _assemble(params, Curvature(curvature), euclidean_mode, dims, names)
    logger.info(
        "Initialized model",
        extra={"num_classes": num_classes, "curvature": curvature, "euclidean_mode": euclidean_mode},
    )
    return state


def _points(cloud: CloudLike) -> np.ndarray:
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ShapeError(f"expected an (N, 3) point array, got {points.shape}")
    if points.shape[0] == 0:
        raise DataError("cannot encode an empty point cloud")
    return points


def encode(cloud: CloudLike, params: EncoderParams) -> Tensor:
    """Shared per-point map then coordinatewise max over points, shape (m,)"""
    p = Tensor(_points(cloud))
    h = (p @ params.w1 + params.b1).relu()
    h = (h @ params.w2 + params.b2).relu()
    h = h @ params.w3 + params.b3
    return h.max(axis=0)


def encode_batch(clouds: Sequence[CloudLike], params: EncoderParams) -> Tensor:
    """encode() for many clouds at once, shape (len(clouds), m)

    All points go through the shared map as one (sum N, 3) matrix; the max is
    then taken over each cloud's own block of rows.
    """
    arrays = [_points(c) for c in clouds]
    if not arrays:
        raise DataError("no clouds to encode")
    p = Tensor(np.concatenate(arrays, axis=0))
    h = (p @ params.w1 + params.b1).relu()
    h = (h @ params.w2 + params.b2).relu()
    h = h @ params.w3 + params.b3
    return segment_max(h, [a.shape[0] for a in arrays])


def _activation(name: str):
    if name == "relu":
        return lambda t: t.relu()
    if name == "tanh":
        return lambda t: t.tanh()
    return None


def embed(clouds: Union[CloudLike, Sequence[CloudLike]], state: ModelState) -> Tensor:
    """z = H(exp0(E(P))) for each cloud, one row per cloud"""
    if isinstance(clouds, (PointCloud, np.ndarray)):
        clouds = [clouds]
    manifold = state.manifold
    # 1. Euclidean encoder, lifted onto the manifold at the origin
    features = encode_batch(clouds, state.encoder)
    lifted = manifold.expmap0(features)
    # 2. Mobius layer; the bias is a Mobius translation
    y = manifold.mobius_matvec(state.mobius.m, lifted)
    act = _activation(state.dims.mobius_activation)
    if act is not None:
        y = manifold.pointwise(y, act)
    return manifold.mobius_add(y, state.mobius.b)


def embed_point(cloud: CloudLike, state: ModelState) -> PoincarePoint:
    if state.euclidean_mode:
        raise ValueError("Euclidean-mode embeddings are unconstrained vectors, not ball points")
    with no_grad():
        z = embed(cloud, state)
    return PoincarePoint(z.data[0].copy(), state.curvature)


def class_logits(z: Tensor, head: HeadParams, manifold: Manifold) -> Tensor:
    """log0(W (x) z (+) b_head); softmax is applied by the loss"""
    z = as_tensor(z)
    return manifold.logmap0(manifold.mobius_add(manifold.mobius_matvec(head.w, z), head.b))


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer labels"""
    labels = np.asarray(labels, dtype=int)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"logits {logits.shape} do not match {labels.shape[0]} labels")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    return -(log_softmax(logits) * onehot).sum(axis=-1).mean()


def logits_for(clouds: Sequence[CloudLike], state: ModelState) -> np.ndarray:
    with no_grad():
        return class_logits(embed(clouds, state), state.head, state.manifold).data


def predict(clouds: Union[CloudLike, Sequence[CloudLike]], state: ModelState, batch_size: int = 64) -> np.ndarray:
    """Argmax class per cloud; ties go to the lowest index"""
    if isinstance(clouds, (PointCloud, np.ndarray)):
        clouds = [clouds]
    out: List[np.ndarray] = []
    for start in range(0, len(clouds), batch_size):
        out.append(np.argmax(logits_for(clouds[start:start + batch_size], state), axis=-1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)
