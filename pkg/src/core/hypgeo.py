"""
Poincaré-ball geometry
Differentiable gyrovector primitives on the ball of radius 1/sqrt(c).
Every function works row-wise along the last axis and accepts Tensors or arrays.
"""
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from src.core.autodiff import MIN_NORM, ArrayLike, Tensor, acosh_safe, as_tensor, dot
from src.exceptions import GeometryDomainError, ShapeError

BALL_EPS = 1e-5
ATANH_MAX = 1.0 - 1e-7


@dataclass(frozen=True)
class Curvature:
    """Magnitude c of the negative curvature; euclidean selects flat formulas"""
    c: float = 1.0
    euclidean: bool = False

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise GeometryDomainError(f"curvature must be a positive finite number, got {self.c}")

    @property
    def max_norm(self) -> float:
        return (1.0 - BALL_EPS) / math.sqrt(self.c)


def _curv(c: Union[float, Curvature]) -> float:
    return c.c if isinstance(c, Curvature) else float(c)


def _same_dim(x: Tensor, y: Tensor, op: str) -> None:
    if x.shape[-1] != y.shape[-1]:
        raise ShapeError(f"{op}: dimension mismatch ({x.shape[-1]} vs {y.shape[-1]})")


def _sqnorm(x: Tensor) -> Tensor:
    return dot(x, x)


def _safe_norm(x: Tensor) -> Tensor:
    return x.norm().clamp(lo=MIN_NORM)


def _artanh_of_norm(scaled_norm: Tensor) -> Tensor:
    return scaled_norm.clamp(lo=0.0, hi=ATANH_MAX).atanh()


def project_to_ball(v: ArrayLike, c: Union[float, Curvature] = 1.0) -> Tensor:
    """Radially clamp rows whose norm reaches (1 - BALL_EPS)/sqrt(c)"""
    v = as_tensor(v)
    if not np.all(np.isfinite(v.data)):
        raise GeometryDomainError("cannot project a non-finite vector into the ball")
    max_norm = (1.0 - BALL_EPS) / math.sqrt(_curv(c))
    # factor is exactly 1 below the bound, max_norm/||v|| above it
    return v * (max_norm / v.norm().clamp(lo=max_norm))


def conformal_factor(x: ArrayLike, c: Union[float, Curvature] = 1.0) -> Tensor:
    """lambda_x = 2 / (1 - c||x||^2), shape (..., 1)"""
    x = as_tensor(x)
    c = _curv(c)
    cx2 = _sqnorm(x) * c
    if np.any(cx2.data >= 1.0):
        raise GeometryDomainError("conformal factor undefined: point lies outside the ball")
    return 2.0 / (1.0 - cx2)


def mobius_add(x: ArrayLike, y: ArrayLike, c: Union[float, Curvature] = 1.0) -> Tensor:
    """Gyrovector addition x (+)_c y, projected back into the safe ball"""
    x, y = as_tensor(x), as_tensor(y)
    _same_dim(x, y, "mobius_add")
    c = _curv(c)
    xy = dot(x, y)
    x2 = _sqnorm(x)
    y2 = _sqnorm(y)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = (1.0 + 2.0 * c * xy + (c * c) * x2 * y2).clamp(lo=MIN_NORM)
    return project_to_ball(num / den, c)


def mobius_matvec(m: ArrayLike, x: ArrayLike, c: Union[float, Curvature] = 1.0) -> Tensor:
    """M^(x)_c applied to each row of x; m has shape (out, in)"""
    m, x = as_tensor(m), as_tensor(x)
    if m.ndim != 2 or m.shape[1] != x.shape[-1]:
        raise ShapeError(f"mobius_matvec: matrix {m.shape} does not act on dimension {x.shape[-1]}")
    c = _curv(c)
    sqrt_c = math.sqrt(c)
    rows = x if x.ndim == 2 else x.reshape(1, -1)
    mx = rows @ m.T
    x_norm = _safe_norm(rows)
    mx_norm = _safe_norm(mx)
    scale = (mx_norm / x_norm * _artanh_of_norm(x_norm * sqrt_c)).tanh()
    out = project_to_ball(scale * mx / (mx_norm * sqrt_c), c)
    return out if x.ndim == 2 else out.reshape(-1)


def exp0(v: ArrayLike, c: Union[float, Curvature] = 1.0) -> Tensor:
    """Exponential map at the origin"""
    v = as_tensor(v)
    c = _curv(c)
    sqrt_c = math.sqrt(c)
    v_norm = _safe_norm(v)
    return project_to_ball((v_norm * sqrt_c).tanh() * v / (v_norm * sqrt_c), c)


def log0(y: ArrayLike, c: Union[float, Curvature] = 1.0) -> Tensor:
    """Logarithmic map at the origin, inverse of exp0"""
    y = as_tensor(y)
    c = _curv(c)
    sqrt_c = math.sqrt(c)
    y_norm = _safe_norm(y)
    return _artanh_of_norm(y_norm * sqrt_c) * y / (y_norm * sqrt_c)


def exp_at(x: ArrayLike, v: ArrayLike, c: Union[float, Curvature] = 1.0) -> Tensor:
    """Exponential map at x: x (+) tanh(sqrt(c) lambda_x ||v|| / 2) v / (sqrt(c) ||v||)"""
    x, v = as_tensor(x), as_tensor(v)
    _same_dim(x, v, "exp_at")
    c = _curv(c)
    sqrt_c = math.sqrt(c)
    lam = conformal_factor(x, c)
    v_norm = _safe_norm(v)
    second = (lam * v_norm * (sqrt_c / 2.0)).tanh() * v / (v_norm * sqrt_c)
    return mobius_add(x, second, c)


def log_at(x: ArrayLike, y: ArrayLike, c: Union[float, Curvature] = 1.0) -> Tensor:
    """Logarithmic map at x, inverse of exp_at"""
    x, y = as_tensor(x), as_tensor(y)
    c = _curv(c)
    sqrt_c = math.sqrt(c)
    diff = mobius_add(-x, y, c)
    d_norm = _safe_norm(diff)
    lam = conformal_factor(x, c)
    return (2.0 / sqrt_c) / lam * _artanh_of_norm(d_norm * sqrt_c) * diff / d_norm


def mobius_add_via_maps(y: ArrayLike, b: ArrayLike, c: Union[float, Curvature] = 1.0) -> Tensor:
    """Bias addition written with maps: exp_y(lambda_0 / lambda_y * log0(b))"""
    y = as_tensor(y)
    c = _curv(c)
    transported = (2.0 / conformal_factor(y, c)) * log0(b, c)
    return exp_at(y, transported, c)


def mobius_pointwise(z: ArrayLike, fn, c: Union[float, Curvature] = 1.0) -> Tensor:
    """Pointwise nonlinearity conjugated by the origin chart: exp0(fn(log0(z)))"""
    return exp0(fn(log0(z, c)), c)


def dist(x: ArrayLike, y: ArrayLike, c: Union[float, Curvature] = 1.0) -> Tensor:
    """Geodesic distance (2/sqrt(c)) atanh(sqrt(c) ||(-x) (+) y||), shape (...,)"""
    x, y = as_tensor(x), as_tensor(y)
    _same_dim(x, y, "dist")
    c = _curv(c)
    sqrt_c = math.sqrt(c)
    diff_norm = mobius_add(-x, y, c).norm(keepdims=False)
    return _artanh_of_norm(diff_norm * sqrt_c) * (2.0 / sqrt_c)


def dist_cosh(x: ArrayLike, y: ArrayLike, c: Union[float, Curvature] = 1.0) -> Tensor:
    """Distance in the cosh^-1 form; agrees with dist"""
    x, y = as_tensor(x), as_tensor(y)
    _same_dim(x, y, "dist_cosh")
    c = _curv(c)
    diff2 = _sqnorm(x - y)
    den = (1.0 - c * _sqnorm(x)) * (1.0 - c * _sqnorm(y))
    arg = 1.0 + 2.0 * c * diff2 / den
    return acosh_safe(arg).reshape(*arg.shape[:-1]) * (1.0 / math.sqrt(c))


def hnorm(x: ArrayLike, c: Union[float, Curvature] = 1.0) -> Tensor:
    """Hyperbolic norm, the distance from the origin, shape (...,)"""
    x = as_tensor(x)
    c = _curv(c)
    sqrt_c = math.sqrt(c)
    return _artanh_of_norm(x.norm(keepdims=False) * sqrt_c) * (2.0 / sqrt_c)


def mobius_scalar_mul(r: float, x: ArrayLike, c: Union[float, Curvature] = 1.0) -> Tensor:
    """r (x)_c x, used only for geodesic interpolation"""
    x = as_tensor(x)
    c = _curv(c)
    sqrt_c = math.sqrt(c)
    x_norm = _safe_norm(x)
    out = (_artanh_of_norm(x_norm * sqrt_c) * r).tanh() * x / (x_norm * sqrt_c)
    return project_to_ball(out, c)


def geodesic(x: ArrayLike, y: ArrayLike, t: float, c: Union[float, Curvature] = 1.0) -> Tensor:
    """Point at fraction t along the geodesic from x to y"""
    x = as_tensor(x)
    return mobius_add(x, mobius_scalar_mul(t, mobius_add(-x, y, c), c), c)


@dataclass(frozen=True)
class PoincarePoint:
    """Coordinates inside the safe ball of a given curvature"""
    coords: np.ndarray
    curvature: Curvature = Curvature()

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 1:
            raise ShapeError("PoincarePoint coordinates must be a vector")
        norm = float(np.linalg.norm(coords))
        if not np.isfinite(norm) or norm > self.curvature.max_norm * (1.0 + 1e-12):
            raise GeometryDomainError(
                f"point with norm {norm:.6g} lies outside the safe ball (radius {self.curvature.max_norm:.6g})"
            )
        object.__setattr__(self, "coords", coords)

    @classmethod
    def from_vector(cls, v: ArrayLike, curvature: Curvature = Curvature()) -> "PoincarePoint":
        return cls(project_to_ball(v, curvature).data.copy(), curvature)

    @classmethod
    def origin(cls, dim: int, curvature: Curvature = Curvature()) -> "PoincarePoint":
        return cls(np.zeros(dim), curvature)

    @property
    def dim(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class TangentVector:
    """A vector in the tangent space at base"""
    coords: np.ndarray
    base: PoincarePoint

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.shape != self.base.coords.shape:
            raise ShapeError("tangent vector and base point differ in dimension")
        object.__setattr__(self, "coords", coords)


class PoincareBall:
    """The ball of curvature -c; method names shared with EuclideanSpace"""
    euclidean = False

    def __init__(self, c: Union[float, Curvature] = 1.0):
        self.curvature = c if isinstance(c, Curvature) else Curvature(float(c))
        self.c = self.curvature.c

    def __repr__(self) -> str:
        return f"PoincareBall(c={self.c})"

    def proj(self, v: ArrayLike) -> Tensor:
        return project_to_ball(v, self.c)

    def conformal_factor(self, x: ArrayLike) -> Tensor:
        return conformal_factor(x, self.c)

    def mobius_add(self, x: ArrayLike, y: ArrayLike) -> Tensor:
        return mobius_add(x, y, self.c)

    def mobius_matvec(self, m: ArrayLike, x: ArrayLike) -> Tensor:
        return mobius_matvec(m, x, self.c)

    def expmap0(self, v: ArrayLike) -> Tensor:
        return exp0(v, self.c)

    def logmap0(self, y: ArrayLike) -> Tensor:
        return log0(y, self.c)

    def expmap(self, x: ArrayLike, v: ArrayLike) -> Tensor:
        return exp_at(x, v, self.c)

    def pointwise(self, z: ArrayLike, fn) -> Tensor:
        return mobius_pointwise(z, fn, self.c)

    def dist(self, x: ArrayLike, y: ArrayLike) -> Tensor:
        return dist(x, y, self.c)

    def norm(self, x: ArrayLike) -> Tensor:
        return hnorm(x, self.c)


class EuclideanSpace:
    """Flat counterparts of the ball operations, for the Euclidean ablation"""
    euclidean = True

    def __init__(self, c: Union[float, Curvature] = 1.0):
        self.curvature = c if isinstance(c, Curvature) else Curvature(float(c))
        self.c = self.curvature.c

    def __repr__(self) -> str:
        return "EuclideanSpace()"

    def proj(self, v: ArrayLike) -> Tensor:
        return as_tensor(v)

    def conformal_factor(self, x: ArrayLike) -> Tensor:
        x = as_tensor(x)
        return Tensor(np.ones(x.shape[:-1] + (1,)))

    def mobius_add(self, x: ArrayLike, y: ArrayLike) -> Tensor:
        return as_tensor(x) + as_tensor(y)

    def mobius_matvec(self, m: ArrayLike, x: ArrayLike) -> Tensor:
        x = as_tensor(x)
        rows = x if x.ndim == 2 else x.reshape(1, -1)
        out = rows @ as_tensor(m).T
        return out if x.ndim == 2 else out.reshape(-1)

    def expmap0(self, v: ArrayLike) -> Tensor:
        return as_tensor(v)

    def logmap0(self, y: ArrayLike) -> Tensor:
        return as_tensor(y)

    def expmap(self, x: ArrayLike, v: ArrayLike) -> Tensor:
        return as_tensor(x) + as_tensor(v)

    def pointwise(self, z: ArrayLike, fn) -> Tensor:
        return fn(as_tensor(z))

    def dist(self, x: ArrayLike, y: ArrayLike) -> Tensor:
        return (as_tensor(x) - as_tensor(y)).norm(keepdims=False)

    def norm(self, x: ArrayLike) -> Tensor:
        return as_tensor(x).norm(keepdims=False)


Manifold = Union[PoincareBall, EuclideanSpace]


def make_manifold(curvature: Union[float, Curvature], euclidean_mode: bool = False) -> Manifold:
    return EuclideanSpace(curvature) if euclidean_mode else PoincareBall(curvature)
