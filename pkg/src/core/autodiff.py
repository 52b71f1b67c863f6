"""
Reverse-mode automatic differentiation over dense float64 arrays
Each primitive is a Function with a forward and a backward rule; the graph is
recorded only when an input requires grad and recording is enabled
"""
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Type, Union

import numpy as np

from src.exceptions import GeometryDomainError, GraphError, ShapeError

logger = logging.getLogger(__name__)

# Shared with hypgeo so forward and backward see the same clamped values
MIN_NORM = 1e-15
ACOSH_MIN = 1.0 + 1e-15

_grad_state = threading.local()

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current thread"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Context:
    """Values saved by a forward rule for its backward rule"""

    def __init__(self):
        self.saved: Tuple[np.ndarray, ...] = ()
        self.attrs: Dict[str, object] = {}

    def save(self, *arrays: np.ndarray) -> None:
        self.saved = arrays


@dataclass
class Node:
    """One recorded operation: tag, inputs and saved intermediates"""
    fn: Type["Function"]
    inputs: Tuple["Tensor", ...]
    ctx: Context

    @property
    def op(self) -> str:
        return self.fn.tag


class Tensor:
    """An n-dimensional float64 array that can take part in a differentiation graph"""

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self._consumed = False

    # -- basic properties --------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    @property
    def T(self) -> "Tensor":
        return Transpose.apply(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators ---------------------------------------------------------
    def __add__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        if np.isscalar(other):
            return Scale.apply(self, k=float(other))
        return Mul.apply(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return self.__mul__(other)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        if np.isscalar(other):
            return Scale.apply(self, k=1.0 / float(other))
        return Div.apply(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(other, self)

    def __neg__(self) -> "Tensor":
        return Negate.apply(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return MatMul.apply(self, other)

    def __getitem__(self, index) -> "Tensor":
        return Index.apply(self, index=index)

    # -- method forms of the primitives -----------------------------------
    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def max(self, axis: int = 0, keepdims: bool = False) -> "Tensor":
        return Max.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        return Reshape.apply(self, shape=shape)

    def tanh(self) -> "Tensor":
        return Tanh.apply(self)

    def atanh(self) -> "Tensor":
        return Atanh.apply(self)

    def sqrt(self) -> "Tensor":
        return Sqrt.apply(self)

    def square(self) -> "Tensor":
        return Square.apply(self)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def relu(self) -> "Tensor":
        return Relu.apply(self)

    def clamp(self, lo: Optional[float] = None, hi: Optional[float] = None) -> "Tensor":
        return Clamp.apply(self, lo=lo, hi=hi)

    def norm(self, keepdims: bool = True) -> "Tensor":
        return Norm.apply(self, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, tag: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{tag}: shapes {a.shape} and {b.shape} do not conform")


# ---------------------------------------------------------------------------
# Function base and registry
# ---------------------------------------------------------------------------

PRIMITIVES: Dict[str, Type["Function"]] = {}


class Function:
    """A differentiable primitive"""
    tag = ""

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if cls.tag:
            PRIMITIVES[cls.tag] = cls

    @staticmethod
    def forward(ctx: Context, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: ArrayLike, **kwargs) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        ctx = Context()
        out = Tensor(cls.forward(ctx, *(t.data for t in tensors), **kwargs))
        if is_grad_enabled() and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            out._node = Node(cls, tensors, ctx)
        return out


def forward(primitive: str, inputs: Sequence[ArrayLike], **kwargs) -> Tensor:
    """Apply a primitive by tag, recording it when any input requires grad"""
    try:
        fn = PRIMITIVES[primitive]
    except KeyError:
        raise ValueError(f"Unknown primitive '{primitive}'. Known: {sorted(PRIMITIVES)}")
    return fn.apply(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

class Add(Function):
    tag = "add"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "add")
        return a + b

    @staticmethod
    def backward(ctx, grad):
        return grad, grad


class Sub(Function):
    tag = "sub"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "sub")
        return a - b

    @staticmethod
    def backward(ctx, grad):
        return grad, -grad


class Mul(Function):
    tag = "mul"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "mul")
        ctx.save(a, b)
        return a * b

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.saved
        return grad * b, grad * a


class Div(Function):
    tag = "div"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "div")
        ctx.save(a, b)
        return a / b

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.saved
        return grad / b, -grad * a / (b * b)


class Negate(Function):
    tag = "negate"

    @staticmethod
    def forward(ctx, a):
        return -a

    @staticmethod
    def backward(ctx, grad):
        return (-grad,)


class Scale(Function):
    tag = "scale"

    @staticmethod
    def forward(ctx, a, k: float = 1.0):
        ctx.attrs["k"] = k
        return a * k

    @staticmethod
    def backward(ctx, grad):
        return (grad * ctx.attrs["k"],)


class Square(Function):
    tag = "square"

    @staticmethod
    def forward(ctx, a):
        ctx.save(a)
        return a * a

    @staticmethod
    def backward(ctx, grad):
        (a,) = ctx.saved
        return (2.0 * a * grad,)


class Sqrt(Function):
    tag = "sqrt"

    @staticmethod
    def forward(ctx, a):
        if np.any(a < 0):
            raise GeometryDomainError("sqrt of a negative value")
        out = np.sqrt(a)
        ctx.save(out)
        return out

    @staticmethod
    def backward(ctx, grad):
        (out,) = ctx.saved
        return (0.5 * grad / np.maximum(out, MIN_NORM),)


class Exp(Function):
    tag = "exp"

    @staticmethod
    def forward(ctx, a):
        out = np.exp(a)
        ctx.save(out)
        return out

    @staticmethod
    def backward(ctx, grad):
        (out,) = ctx.saved
        return (grad * out,)


class Log(Function):
    tag = "log"

    @staticmethod
    def forward(ctx, a):
        if np.any(a <= 0):
            raise GeometryDomainError("log of a non-positive value")
        ctx.save(a)
        return np.log(a)

    @staticmethod
    def backward(ctx, grad):
        (a,) = ctx.saved
        return (grad / a,)


class Tanh(Function):
    tag = "tanh"

    @staticmethod
    def forward(ctx, a):
        out = np.tanh(a)
        ctx.save(out)
        return out

    @staticmethod
    def backward(ctx, grad):
        (out,) = ctx.saved
        return (grad * (1.0 - out * out),)


class Atanh(Function):
    """Inputs must already be clamped into (-1, 1)"""
    tag = "atanh"

    @staticmethod
    def forward(ctx, a):
        if not np.all(np.isfinite(a)) or np.any(np.abs(a) >= 1.0):
            raise GeometryDomainError("atanh argument outside (-1, 1); ball invariant breached upstream")
        ctx.save(a)
        return np.arctanh(a)

    @staticmethod
    def backward(ctx, grad):
        (a,) = ctx.saved
        return (grad / (1.0 - a * a),)


class AcoshSafe(Function):
    """cosh^-1 with its argument floored just above 1"""
    tag = "acosh"

    @staticmethod
    def forward(ctx, a):
        clamped = np.maximum(a, ACOSH_MIN)
        ctx.save(a, clamped)
        return np.arccosh(clamped)

    @staticmethod
    def backward(ctx, grad):
        a, clamped = ctx.saved
        local = 1.0 / np.sqrt(clamped * clamped - 1.0)
        return (np.where(a >= ACOSH_MIN, grad * local, 0.0),)


class Relu(Function):
    tag = "relu"

    @staticmethod
    def forward(ctx, a):
        ctx.save(a)
        return np.maximum(a, 0.0)

    @staticmethod
    def backward(ctx, grad):
        (a,) = ctx.saved
        # zero at the kink, so a hinge sitting exactly at 0 propagates nothing
        return (grad * (a > 0.0),)


class Clamp(Function):
    tag = "clamp"

    @staticmethod
    def forward(ctx, a, lo: Optional[float] = None, hi: Optional[float] = None):
        ctx.save(a)
        ctx.attrs.update(lo=lo, hi=hi)
        return np.clip(a, lo, hi)

    @staticmethod
    def backward(ctx, grad):
        (a,) = ctx.saved
        lo, hi = ctx.attrs["lo"], ctx.attrs["hi"]
        mask = np.ones_like(a, dtype=bool)
        if lo is not None:
            mask &= a >= lo
        if hi is not None:
            mask &= a <= hi
        return (grad * mask,)


# ---------------------------------------------------------------------------
# Reductions and row-wise vector operations
# ---------------------------------------------------------------------------

class Sum(Function):
    tag = "sum"

    @staticmethod
    def forward(ctx, a, axis: Optional[int] = None, keepdims: bool = False):
        ctx.attrs.update(shape=a.shape, axis=axis, keepdims=keepdims)
        return np.sum(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def backward(ctx, grad):
        shape, axis, keepdims = ctx.attrs["shape"], ctx.attrs["axis"], ctx.attrs["keepdims"]
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, shape).copy(),)


class Mean(Function):
    tag = "mean"

    @staticmethod
    def forward(ctx, a, axis: Optional[int] = None, keepdims: bool = False):
        count = a.size if axis is None else a.shape[axis]
        ctx.attrs.update(shape=a.shape, axis=axis, keepdims=keepdims, count=count)
        return np.mean(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def backward(ctx, grad):
        shape, axis, keepdims = ctx.attrs["shape"], ctx.attrs["axis"], ctx.attrs["keepdims"]
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, shape) / ctx.attrs["count"],)


class Max(Function):
    """Max over one axis; the gradient goes to the first attaining index"""
    tag = "max"

    @staticmethod
    def forward(ctx, a, axis: int = 0, keepdims: bool = False):
        if a.shape[axis] == 0:
            raise ShapeError("max over an empty axis")
        index = np.argmax(a, axis=axis)
        ctx.attrs.update(shape=a.shape, axis=axis, keepdims=keepdims, index=index)
        return np.max(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def backward(ctx, grad):
        shape, axis, keepdims = ctx.attrs["shape"], ctx.attrs["axis"], ctx.attrs["keepdims"]
        index = np.expand_dims(ctx.attrs["index"], axis)
        if keepdims:
            grad = np.squeeze(grad, axis=axis)
        out = np.zeros(shape)
        np.put_along_axis(out, index, np.expand_dims(grad, axis), axis=axis)
        return (out,)


class SegmentMax(Function):
    """Column max over consecutive row blocks of a matrix, one output row per block"""
    tag = "segment_max"

    @staticmethod
    def forward(ctx, a, sizes=()):
        sizes = np.asarray(sizes, dtype=int)
        if a.ndim != 2 or sizes.ndim != 1 or sizes.size == 0:
            raise ShapeError(f"segment_max needs a matrix and block sizes, got {a.shape} and {sizes.shape}")
        if np.any(sizes <= 0) or int(sizes.sum()) != a.shape[0]:
            raise ShapeError(f"block sizes must be positive and sum to {a.shape[0]} rows")
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        out = np.maximum.reduceat(a, starts, axis=0)
        # first attaining row per block and column, as in Max
        rows = np.arange(a.shape[0])[:, None]
        hit = np.where(a == np.repeat(out, sizes, axis=0), rows, a.shape[0])
        first = np.minimum.reduceat(hit, starts, axis=0)
        first = np.where(first < a.shape[0], first, starts[:, None])
        ctx.attrs.update(shape=a.shape, first=first)
        return out

    @staticmethod
    def backward(ctx, grad):
        shape, first = ctx.attrs["shape"], ctx.attrs["first"]
        out = np.zeros(shape)
        out[first, np.arange(shape[1])[None, :]] = grad
        return (out,)


class Dot(Function):
    """Inner product along the last axis, kept as a trailing unit axis"""
    tag = "dot"

    @staticmethod
    def forward(ctx, a, b):
        if a.shape[-1] != b.shape[-1]:
            raise ShapeError(f"dot: last axes differ ({a.shape} vs {b.shape})")
        ctx.save(a, b)
        return np.sum(a * b, axis=-1, keepdims=True)

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.saved
        return grad * b, grad * a


class Norm(Function):
    """Euclidean norm along the last axis"""
    tag = "norm"

    @staticmethod
    def forward(ctx, a, keepdims: bool = True):
        out = np.sqrt(np.sum(a * a, axis=-1, keepdims=True))
        ctx.save(a, out)
        ctx.attrs["keepdims"] = keepdims
        return out if keepdims else out[..., 0]

    @staticmethod
    def backward(ctx, grad):
        a, out = ctx.saved
        if not ctx.attrs["keepdims"]:
            grad = grad[..., None]
        return (grad * a / np.maximum(out, MIN_NORM),)


class Softmax(Function):
    tag = "softmax"

    @staticmethod
    def forward(ctx, a):
        shifted = np.exp(a - np.max(a, axis=-1, keepdims=True))
        out = shifted / np.sum(shifted, axis=-1, keepdims=True)
        ctx.save(out)
        return out

    @staticmethod
    def backward(ctx, grad):
        (out,) = ctx.saved
        inner = np.sum(grad * out, axis=-1, keepdims=True)
        return (out * (grad - inner),)


class LogSoftmax(Function):
    tag = "log_softmax"

    @staticmethod
    def forward(ctx, a):
        shifted = a - np.max(a, axis=-1, keepdims=True)
        out = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
        ctx.save(out)
        return out

    @staticmethod
    def backward(ctx, grad):
        (out,) = ctx.saved
        return (grad - np.exp(out) * np.sum(grad, axis=-1, keepdims=True),)


# ---------------------------------------------------------------------------
# Linear algebra and structure
# ---------------------------------------------------------------------------

class MatMul(Function):
    tag = "matmul"

    @staticmethod
    def forward(ctx, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        ctx.save(a, b)
        return a @ b

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.saved
        return grad @ b.T, a.T @ grad


class Transpose(Function):
    tag = "transpose"

    @staticmethod
    def forward(ctx, a):
        if a.ndim != 2:
            raise ShapeError("transpose expects a matrix")
        return a.T.copy()

    @staticmethod
    def backward(ctx, grad):
        return (grad.T.copy(),)


class Reshape(Function):
    tag = "reshape"

    @staticmethod
    def forward(ctx, a, shape: Tuple[int, ...] = ()):
        ctx.attrs["shape"] = a.shape
        try:
            return a.reshape(shape)
        except ValueError:
            raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")

    @staticmethod
    def backward(ctx, grad):
        return (grad.reshape(ctx.attrs["shape"]),)


class Index(Function):
    tag = "index"

    @staticmethod
    def forward(ctx, a, index=None):
        ctx.attrs.update(shape=a.shape, index=index)
        return np.array(a[index])

    @staticmethod
    def backward(ctx, grad):
        out = np.zeros(ctx.attrs["shape"])
        np.add.at(out, ctx.attrs["index"], grad)
        return (out,)


class Concat(Function):
    tag = "concat"

    @staticmethod
    def forward(ctx, *arrays, axis: int = 0):
        try:
            out = np.concatenate(arrays, axis=axis)
        except ValueError as e:
            raise ShapeError(f"concat: {e}")
        ctx.attrs.update(axis=axis, sizes=[x.shape[axis] for x in arrays])
        return out

    @staticmethod
    def backward(ctx, grad):
        cuts = np.cumsum(ctx.attrs["sizes"])[:-1]
        return tuple(np.split(grad, cuts, axis=ctx.attrs["axis"]))


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 1-d tensors into a matrix, one row each"""
    return concat([t.reshape(1, -1) for t in tensors], axis=0)


def segment_max(a: ArrayLike, sizes: Sequence[int]) -> Tensor:
    """Max over rows 0:sizes[0], then the next sizes[1] rows, and so on"""
    return SegmentMax.apply(a, sizes=tuple(int(s) for s in sizes))


def dot(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Dot.apply(a, b)


def softmax(a: ArrayLike) -> Tensor:
    return Softmax.apply(a)


def log_softmax(a: ArrayLike) -> Tensor:
    return LogSoftmax.apply(a)


def acosh_safe(a: ArrayLike) -> Tensor:
    return AcoshSafe.apply(a)


# ---------------------------------------------------------------------------
# Graph traversal
# ---------------------------------------------------------------------------

@dataclass
class Graph:
    """Recorded operations reachable from a root, inputs before outputs"""
    nodes: List[Tensor] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "Graph":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            if tensor._node is not None:
                for parent in reversed(tensor._node.inputs):
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    def free(self) -> None:
        for tensor in self.nodes:
            tensor._node = None


def backward(loss: Tensor) -> None:
    """Populate .grad of every requires-grad leaf reachable from a scalar loss"""
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already consumed by a previous backward")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")

    graph = Graph.from_root(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for tensor in reversed(graph.nodes):
        grad = grads.pop(id(tensor), None)
        if grad is None:
            continue
        if tensor._node is None:
            tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            continue
        node = tensor._node
        for inp, inp_grad in zip(node.inputs, node.fn.backward(node.ctx, grad)):
            if inp_grad is None or not inp.requires_grad:
                continue
            inp_grad = _unbroadcast(np.asarray(inp_grad, dtype=np.float64), inp.shape)
            key = id(inp)
            grads[key] = grads[key] + inp_grad if key in grads else inp_grad

    graph.free()
    loss._consumed = True


# ---------------------------------------------------------------------------
# Finite-difference checking
# ---------------------------------------------------------------------------

OK = "ok"
FAIL = "fail"
KINK = "kink, skipped"


@dataclass
class GradCheckReport:
    """Per-coordinate comparison of reverse-mode and central differences"""
    coords: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray
    abs_errors: np.ndarray
    status: List[str]
    tol: float
    atol: float

    @property
    def checked(self) -> np.ndarray:
        return np.array([s != KINK for s in self.status], dtype=bool)

    @property
    def max_rel_error(self) -> float:
        mask = self.checked
        return float(self.rel_errors[mask].max()) if mask.any() else 0.0

    @property
    def max_abs_error(self) -> float:
        mask = self.checked
        return float(self.abs_errors[mask].max()) if mask.any() else 0.0

    @property
    def passed(self) -> bool:
        return all(s != FAIL for s in self.status)

    @property
    def kinks(self) -> int:
        return sum(s == KINK for s in self.status)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_gradients(
    f: Callable[[Tensor], Tensor],
    x: ArrayLike,
    h: float = 1e-6,
    tol: float = 1e-5,
    coords: Optional[Sequence[int]] = None,
    atol: float = 1e-8,
) -> GradCheckReport:
    """
    Compare reverse-mode gradients of a scalar function with central differences

    Args:
        f: deterministic scalar-valued function of one tensor
        x: point of evaluation
        h: finite-difference step
        tol: relative error tolerance
        coords: flat coordinate indices to check (all when None)
        atol: absolute error that also passes a coordinate, for gradients near zero
    """
    base = np.array(as_tensor(x).data, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    f(leaf).backward()
    analytic_full = np.zeros_like(base) if leaf.grad is None else leaf.grad

    def value_at(point: np.ndarray) -> float:
        with no_grad():
            return f(Tensor(point)).item()

    flat_coords = np.arange(base.size) if coords is None else np.asarray(coords, dtype=int)
    f0 = value_at(base)
    analytic, numeric, status = [], [], []
    for i in flat_coords:
        plus, minus = base.copy(), base.copy()
        plus.flat[i] += h
        minus.flat[i] -= h
        fp, fm = value_at(plus), value_at(minus)
        left, right = (f0 - fm) / h, (fp - f0) / h
        central = (fp - fm) / (2.0 * h)
        a = float(analytic_full.flat[i])
        analytic.append(a)
        numeric.append(central)
        jump = abs(right - left)
        if jump > 1e-6 and jump > 0.1 * max(abs(left), abs(right)):
            status.append(KINK)
        elif relative_error(np.array(a), np.array(central)) <= tol or abs(a - central) <= atol:
            status.append(OK)
        else:
            status.append(FAIL)

    analytic_arr, numeric_arr = np.array(analytic), np.array(numeric)
    report = GradCheckReport(
        coords=flat_coords,
        analytic=analytic_arr,
        numeric=numeric_arr,
        rel_errors=relative_error(analytic_arr, numeric_arr),
        abs_errors=np.abs(analytic_arr - numeric_arr),
        status=status,
        tol=tol,
        atol=atol,
    )
    if report.kinks:
        logger.debug("Gradient check skipped kinks", extra={"kinks": report.kinks})
    return report
