# Standard library
import threading
from collections.abc import Callable, Iterable, Mapping, Sequence

# Third party
import numpy as np
from scipy.special import logsumexp as scipy_logsumexp

# Local
try:
    from causalpima.errors import ContractViolation, DomainError, NumericalFault
except ImportError:
    from errors import ContractViolation, DomainError, NumericalFault


#########
# HELPERS
#########


_local = threading.local()

VectorJacobian = Callable[[np.ndarray], Sequence[np.ndarray | None]]


def _tape_stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []

    return _local.tapes


def active_tape() -> "GradTape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sums out the dimensions that broadcasting added or stretched."""

    if grad.shape == shape:
        return grad

    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)

    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)

    return grad


def as_tensor(value: "Tensor | np.ndarray | float | int") -> "Tensor":
    if isinstance(value, Tensor):
        return value

    return Tensor(value)


def _check_finite(op: str, data: np.ndarray, *inputs: "Tensor"):
    if np.all(np.isfinite(data)):
        return

    raise NumericalFault(
        f"{op} produced non-finite values",
        {
            "op": op,
            "non_finite": int(np.size(data) - np.count_nonzero(np.isfinite(data))),
            "input_max_abs": [float(np.max(np.abs(t.data), initial=0.0)) for t in inputs],
        },
    )


def _result(
    op: str, data: np.ndarray, parents: Sequence["Tensor"], vjp: VectorJacobian
) -> "Tensor":
    _check_finite(op, data, *parents)

    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = op
    out.requires_grad = False
    out._parents = ()
    out._vjp = None

    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        tape.record(out)

    return out


def _broadcast_shape(op: str, a: "Tensor", b: "Tensor") -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def _normalize_axes(
    op: str, axes: int | Sequence[int] | None, ndim: int
) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))

    if isinstance(axes, (int, np.integer)):
        axes = [axes]

    normalized = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise ContractViolation(f"{op}: axis {axis} is invalid for {ndim} dims")

        normalized.append(int(axis) % ndim)

    if len(set(normalized)) != len(normalized):
        raise ContractViolation(f"{op}: repeated axis in {list(axes)}")

    return tuple(sorted(normalized))


def _expand_reduced(grad: np.ndarray, axes: tuple[int, ...], keepdims: bool):
    if keepdims:
        return grad

    return np.expand_dims(grad, axes) if axes else grad


######
# MAIN
######


class Tensor:
    """Dense float64 array that records its producing operation on the active
    `GradTape` whenever one of its inputs requires a gradient.

    Arrays are never mutated in place. Parameters change by rebinding `.data`."""

    # Makes `ndarray <op> Tensor` dispatch to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(
        self,
        data: np.ndarray | Sequence | float | int,
        requires_grad: bool = False,
        name: str | None = None,
    ):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: VectorJacobian | None = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        return reshape(self, shape)

    def sum(self, axes=None, keepdims: bool = False) -> "Tensor":
        return reduce("sum", self, axes, keepdims)

    def mean(self, axes=None, keepdims: bool = False) -> "Tensor":
        return reduce("mean", self, axes, keepdims)


class GradTape:
    """Define-by-run record of the operations executed while the tape is active.

    Nodes are appended in creation order, which is a topological order of the
    recorded graph. One tape per thread."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc_info):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, tensor: Tensor):
        self.nodes.append(tensor)

    def gradient(self, loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
        grads = backward(loss, self)
        return [grads[p] for p in params]


class Gradients(Mapping):
    """Gradient map keyed by tensor. Tensors off the loss path read as zeros."""

    def __init__(self, by_id: dict[int, np.ndarray]):
        self.by_id = by_id

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        grad = self.by_id.get(id(tensor))
        if grad is None:
            return np.zeros(tensor.shape)

        return grad

    def __contains__(self, tensor) -> bool:
        return isinstance(tensor, Tensor) and id(tensor) in self.by_id

    def __iter__(self):
        return iter(self.by_id)

    def __len__(self) -> int:
        return len(self.by_id)


def backward(loss: Tensor, tape: GradTape) -> Gradients:
    if loss.size != 1:
        raise ContractViolation(f"backward: loss must be a scalar, got shape {loss.shape}")

    if not np.all(np.isfinite(loss.data)):
        raise NumericalFault("backward: loss is not finite", {"loss": float(loss.item())})

    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)

    for node in reversed(tape.nodes):
        grad = grads.get(id(node))
        if grad is None or node._vjp is None:
            continue

        for parent, parent_grad in zip(node._parents, node._vjp(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue

            parent_grad = unbroadcast(np.asarray(parent_grad), parent.shape)
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad

    return Gradients(grads)


# Elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _result("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _result(
        "mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data)
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0.0):
        raise DomainError("div", "denominator has zero entries")

    out = a.data / b.data
    return _result("div", out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def negate(a) -> Tensor:
    a = as_tensor(a)
    return _result("negate", -a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    return _result("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log", "input has nonpositive entries")

    return _result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("sqrt", "input has nonpositive entries")

    out = np.sqrt(a.data)
    return _result("sqrt", out, (a,), lambda g: (g / (2.0 * out),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0
    return _result("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    slope = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result("softplus", np.logaddexp(0.0, a.data), (a,), lambda g: (g * slope,))


def clamp_min(a, floor: float) -> Tensor:
    a = as_tensor(a)
    mask = a.data > floor
    return _result(
        "clamp_min", np.where(mask, a.data, floor), (a,), lambda g: (g * mask,)
    )


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "relu": relu,
    "square": square,
    "sqrt": sqrt,
    "negate": negate,
    "sigmoid": sigmoid,
    "softplus": softplus,
}
BINARY_KINDS = {"add", "sub", "mul", "div"}


def elementwise(kind: str, a, b=None) -> Tensor:
    if kind not in ELEMENTWISE:
        raise ContractViolation(f"elementwise: unknown kind {kind!r}")

    if kind in BINARY_KINDS:
        if b is None:
            raise ContractViolation(f"elementwise: {kind} needs two operands")

        return ELEMENTWISE[kind](a, b)

    if b is not None:
        raise ContractViolation(f"elementwise: {kind} takes one operand")

    return ELEMENTWISE[kind](a)


# Reductions


def _reduce_sum(a: Tensor, axes: tuple[int, ...], keepdims: bool) -> Tensor:
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        return (np.broadcast_to(_expand_reduced(g, axes, keepdims), a.shape),)

    return _result("sum", np.asarray(out), (a,), vjp)


def _reduce_mean(a: Tensor, axes: tuple[int, ...], keepdims: bool) -> Tensor:
    count = int(np.prod([a.shape[axis] for axis in axes])) if axes else 1
    out = a.data.sum(axis=axes, keepdims=keepdims) / count

    def vjp(g):
        return (np.broadcast_to(_expand_reduced(g, axes, keepdims), a.shape) / count,)

    return _result("mean", np.asarray(out), (a,), vjp)


def _reduce_max(a: Tensor, axes: tuple[int, ...], keepdims: bool) -> Tensor:
    peak = a.data.max(axis=axes, keepdims=True)
    mask = a.data == peak
    share = mask / mask.sum(axis=axes, keepdims=True)
    out = peak if keepdims else np.squeeze(peak, axis=axes)

    def vjp(g):
        return (_expand_reduced(g, axes, keepdims) * share,)

    return _result("max", np.asarray(out), (a,), vjp)


def _reduce_logsumexp(a: Tensor, axes: tuple[int, ...], keepdims: bool) -> Tensor:
    total = scipy_logsumexp(a.data, axis=axes, keepdims=True)
    out = total if keepdims else np.squeeze(total, axis=axes)

    def vjp(g):
        return (_expand_reduced(g, axes, keepdims) * np.exp(a.data - total),)

    return _result("logsumexp", np.asarray(out), (a,), vjp)


REDUCTIONS = {
    "sum": _reduce_sum,
    "mean": _reduce_mean,
    "max": _reduce_max,
    "logsumexp": _reduce_logsumexp,
}


def reduce(kind: str, a, axes=None, keepdims: bool = False) -> Tensor:
    if kind not in REDUCTIONS:
        raise ContractViolation(f"reduce: unknown kind {kind!r}")

    a = as_tensor(a)
    return REDUCTIONS[kind](a, _normalize_axes(kind, axes, a.ndim), keepdims)


def logsumexp(a, axes=None, keepdims: bool = False) -> Tensor:
    return reduce("logsumexp", a, axes, keepdims)


def softmax(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return exp(a - logsumexp(a, axis, keepdims=True))


# Products


def mode_contract(w, v, mode: int) -> Tensor:
    """Contracts mode `mode` of `w` against the vector `v`, dropping that mode."""

    w, v = as_tensor(w), as_tensor(v)
    if v.ndim != 1:
        raise ContractViolation(f"mode_contract: v must be a vector, got shape {v.shape}")

    if not 0 <= mode < w.ndim:
        raise ContractViolation(f"mode_contract: mode {mode} invalid for {w.ndim} dims")

    if w.shape[mode] != v.shape[0]:
        raise ContractViolation(
            f"mode_contract: mode {mode} has size {w.shape[mode]}, v has {v.shape[0]}"
        )

    out = np.tensordot(w.data, v.data, axes=([mode], [0]))
    spread = [1] * w.ndim
    spread[mode] = v.shape[0]

    def vjp(g):
        grad_w = np.expand_dims(g, mode) * v.data.reshape(spread)
        moved = np.moveaxis(w.data, mode, 0)
        grad_v = np.tensordot(moved, g, axes=(list(range(1, w.ndim)), list(range(g.ndim))))
        return grad_w, grad_v

    return _result("mode_contract", np.asarray(out), (w, v), vjp)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation(f"matmul: operands must be matrices, got {a.shape} and {b.shape}")

    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ContractViolation(f"matmul: shapes {a.shape} and {b.shape} are incompatible")

    def vjp(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _result("matmul", out, (a, b), vjp)


# Shape algebra


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ContractViolation(f"reshape: cannot reshape {a.shape} into {tuple(shape)}")

    return _result("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ContractViolation(f"transpose: {axes} is not a permutation of {a.ndim} dims")

    inverse = tuple(np.argsort(axes))
    return _result(
        "transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),)
    )


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return _result(
        "expand_dims", np.expand_dims(a.data, axis), (a,), lambda g: (g.reshape(a.shape),)
    )


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, tuple(shape))
    except ValueError:
        raise ContractViolation(f"broadcast_to: {a.shape} does not broadcast to {tuple(shape)}")

    return _result("broadcast_to", out, (a,), lambda g: (g,))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data[index])

    def vjp(g):
        grad = np.zeros(a.shape)
        np.add.at(grad, index, g)
        return (grad,)

    return _result("getitem", out, (a,), vjp)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractViolation("concat: nothing to concatenate")

    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ContractViolation(f"concat: incompatible shapes {shapes} on axis {axis}")

    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result("concat", out, tensors, lambda g: np.split(g, splits, axis=axis))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractViolation("stack: nothing to stack")

    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ContractViolation(f"stack: shapes {shapes} differ")

    def vjp(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return _result("stack", out, tensors, vjp)


def stop_gradient(a) -> Tensor:
    return Tensor(as_tensor(a).data)
