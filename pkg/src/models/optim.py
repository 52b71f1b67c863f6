"""
Mixed Riemannian / Euclidean SGD
Ball-valued biases follow the exponential-map rule, everything else momentum SGD.
"""
import logging
import math
from typing import Dict, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.core.autodiff import no_grad
from src.core.hypgeo import Curvature, PoincarePoint, conformal_factor, exp_at, project_to_ball
from src.exceptions import GraphError, ShapeError

logger = logging.getLogger(__name__)

RIEMANNIAN = "riemannian"
EUCLIDEAN = "euclidean"


class OptimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(default=0.01, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=0.0, ge=0)
    epochs: int = Field(default=60, gt=0)
    batch_size: int = Field(default=16, gt=0)
    grad_clip: Optional[float] = Field(default=10.0, gt=0)
    schedule: Literal["cosine", "constant"] = "cosine"


def cosine_lr(base_lr: float, epoch: int, epochs: int) -> float:
    """lr * (1 + cos(pi * epoch / epochs)) / 2, epoch counted from 0"""
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))


def riemannian_sgd_step(
    p: Union[np.ndarray, PoincarePoint],
    grad_e: np.ndarray,
    lr: float,
    c: Optional[Union[float, Curvature]] = None,
) -> Union[np.ndarray, PoincarePoint]:
    """p <- proj(exp_p(-lr * grad_e / lambda_p^2)); non-finite gradients leave p untouched

    Without c, a PoincarePoint steps in its own curvature and a bare array in c=1.
    """
    if isinstance(p, PoincarePoint):
        point = p.coords
        c = p.curvature if c is None else c
    else:
        point = np.asarray(p, dtype=np.float64)
        c = 1.0 if c is None else c
    grad_e = np.asarray(grad_e, dtype=np.float64)
    if grad_e.shape != point.shape:
        raise ShapeError(f"gradient shape {grad_e.shape} does not match parameter {point.shape}")
    if not np.all(np.isfinite(grad_e)):
        logger.warning("Skipping Riemannian step with a non-finite gradient")
        return p
    with no_grad():
        lam = conformal_factor(point, c).data
        grad_r = grad_e / lam ** 2
        updated = project_to_ball(exp_at(point, -lr * grad_r, c), c).data
    if isinstance(p, PoincarePoint):
        return PoincarePoint(updated, p.curvature)
    return updated


def euclidean_sgd_step(
    w: np.ndarray,
    grad: np.ndarray,
    velocity: Optional[np.ndarray],
    cfg: OptimConfig,
    lr: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Heavy-ball momentum with L2 decay; returns (weights, velocity)"""
    lr = cfg.lr if lr is None else lr
    if grad.shape != w.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match parameter {w.shape}")
    if not np.all(np.isfinite(grad)):
        logger.warning("Skipping Euclidean step with a non-finite gradient")
        return w, velocity if velocity is not None else np.zeros_like(w)
    g = grad + cfg.weight_decay * w
    v = g if velocity is None else cfg.momentum * velocity + g
    return w - lr * v, v


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: Optional[float]) -> Tuple[Dict[str, np.ndarray], float]:
    """Rescale all gradients together when their global L2 norm exceeds max_norm"""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or not math.isfinite(total) or total <= max_norm:
        return grads, total
    scale = max_norm / total
    return {name: g * scale for name, g in grads.items()}, total


class RiemannianSGD:
    """Steps a ModelState in place, dispatching each parameter to its rule"""

    def __init__(self, cfg: OptimConfig):
        self.cfg = cfg
        self.velocities: Dict[str, np.ndarray] = {}
        self.last_grad_norm = 0.0

    def lr_at(self, epoch: int) -> float:
        if self.cfg.schedule == "cosine":
            return cosine_lr(self.cfg.lr, epoch, self.cfg.epochs)
        return self.cfg.lr

    def rule_for(self, state, name: str) -> str:
        if state.euclidean_mode or not state.is_manifold_param(name):
            return EUCLIDEAN
        return RIEMANNIAN

    def step(self, state, lr: float) -> None:
        params = state.named_parameters()
        # 1. collect gradients and clip them by their global norm
        grads = {}
        for name, p in params.items():
            if p.grad is None:
                raise GraphError(f"parameter '{name}' has no gradient; call backward first")
            grads[name] = p.grad
        grads, self.last_grad_norm = clip_gradients(grads, self.cfg.grad_clip)

        # 2. ball parameters take a retraction step, the rest take momentum SGD
        for name, p in params.items():
            rule = self.rule_for(state, name)
            logger.debug("Optimizer step", extra={"param": name, "rule": rule})
            if rule == RIEMANNIAN:
                p.data = riemannian_sgd_step(p.data, grads[name], lr, state.curvature)
            else:
                p.data, self.velocities[name] = euclidean_sgd_step(
                    p.data, grads[name], self.velocities.get(name), self.cfg, lr
                )
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: v.copy() for name, v in self.velocities.items()}

    def load_state_dict(self, velocities: Dict[str, np.ndarray]) -> None:
        self.velocities = {name: np.asarray(v, dtype=np.float64).copy() for name, v in velocities.items()}
