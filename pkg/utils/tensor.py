"""
Tensor arithmetic with reverse-mode differentiation for 1D convolutional networks.

Feature maps are batched as N x C x L and dense activations as N x D. Every
operation records itself on the active ComputationTape when one of its operands
requires a gradient; ``backward`` replays the tape in reverse.
"""
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

TRAINING = "training"
INFERENCE = "inference"
MODES = (TRAINING, INFERENCE)

DEFAULT_LEAKY_SLOPE = 0.01


class TensorError(Exception):
    """Base exception for tensor-core errors"""
    pass


class ShapeError(TensorError):
    """Operand shapes are incompatible"""
    pass


class GeometryError(TensorError):
    """Kernel or pool window does not fit the input"""
    pass


class TapeUsageError(TensorError):
    """Backward requested for a tensor the tape did not produce"""
    pass


class TensorValidationError(TensorError):
    """Invalid argument value (label range, probability, mode)"""
    pass


_local = threading.local()


def default_dtype():
    return getattr(_local, "dtype", np.float32)


@contextmanager
def precision(dtype):
    """Switch the dtype used for new tensors (float64 is the gradient-verification mode)."""
    previous = default_dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = previous


class Tensor:
    """Rank <= 3 float array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        array = np.asarray(data, dtype=dtype or default_dtype())
        if array.ndim > 3:
            raise ShapeError(f"Tensors are limited to rank 3, got shape {array.shape}")
        self.data = array
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"


@dataclass
class TapeEntry:
    op: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ComputationTape:
    """
    Ordered record of differentiable operations.

    Usage:
        with ComputationTape() as tape:
            loss = cross_entropy_loss(model(x), labels)
        backward(tape, loss)
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self._produced = {}

    def record(self, op: str, output: Tensor, inputs: Tuple[Tensor, ...], backward_fn):
        self._produced[id(output)] = len(self.entries)
        self.entries.append(TapeEntry(op, output, inputs, backward_fn))

    def produced(self, tensor: Tensor) -> bool:
        index = self._produced.get(id(tensor))
        return index is not None and self.entries[index].output is tensor

    def __len__(self):
        return len(self.entries)

    def __enter__(self):
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _local.tapes.pop()
        return False


def active_tape() -> Optional[ComputationTape]:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


def _emit(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn) -> Tensor:
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires_grad, dtype=data.dtype)
    tape = active_tape()
    if requires_grad and tape is not None:
        tape.record(op, out, inputs, backward_fn)
    return out


def _accumulate(tensor: Tensor, grad: np.ndarray):
    grad = np.asarray(grad, dtype=tensor.dtype).reshape(tensor.shape)
    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad


def backward(tape: ComputationTape, loss: Tensor) -> List[Tensor]:
    """
    Propagate dLoss/dLeaf to every requires_grad leaf reachable from ``loss``.

    Leaf gradients accumulate across calls until they are reset.
    Returns the leaves that received a gradient.
    """
    if not tape.produced(loss):
        raise TapeUsageError("Loss tensor was not produced on this tape")
    if loss.size != 1:
        raise TapeUsageError(f"Backward needs a scalar loss, got shape {loss.shape}")

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = []
    seen = set()
    for entry in reversed(tape.entries):
        upstream = grads.pop(id(entry.output), None)
        if upstream is None:
            continue
        for tensor, grad in zip(entry.inputs, entry.backward(upstream)):
            if grad is None or not tensor.requires_grad:
                continue
            if tape.produced(tensor):
                key = id(tensor)
                grads[key] = grads[key] + grad if key in grads else grad
            else:
                _accumulate(tensor, grad)
                if id(tensor) not in seen:
                    seen.add(id(tensor))
                    leaves.append(tensor)
    return leaves


# ---------------------------------------------------------------------------
# Structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"Cannot add shapes {a.shape} and {b.shape}")
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def reshape(x: Tensor, shape) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(str(e))
    return _emit("reshape", data, (x,), lambda g: (g.reshape(x.shape),))


def flatten(x: Tensor) -> Tensor:
    """N x C x L -> N x (C*L), channel-major."""
    return reshape(x, (x.shape[0], -1))


def sum_all(x: Tensor) -> Tensor:
    """Scalar total, accumulated in float64."""
    total = np.asarray(x.data.sum(dtype=np.float64))
    return _emit("sum", total, (x,), lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),))


def _with_batch(fn, x: Tensor, *args, **kwargs) -> Tensor:
    if x.ndim == 2:
        out = fn(reshape(x, (1,) + x.shape), *args, **kwargs)
        return reshape(out, out.shape[1:])
    if x.ndim != 3:
        raise ShapeError(f"Expected C x L or N x C x L input, got shape {x.shape}")
    return fn(x, *args, **kwargs)


# ---------------------------------------------------------------------------
# Convolution and pooling
# ---------------------------------------------------------------------------

def conv_geometry(length: int, kernel: int, stride: int, padding: str) -> Tuple[int, int, int]:
    """Return (output length, left pad, right pad)."""
    if stride < 1:
        raise GeometryError(f"Stride must be positive, got {stride}")
    if kernel < 1:
        raise GeometryError(f"Kernel must be positive, got {kernel}")
    if padding == "same":
        out_len = -(-length // stride)
        total = max((out_len - 1) * stride + kernel - length, 0)
        left = total // 2
        return out_len, left, total - left
    if padding == "valid":
        if kernel > length:
            raise GeometryError(f"Kernel {kernel} is longer than input length {length}")
        return (length - kernel) // stride + 1, 0, 0
    raise GeometryError(f"Unknown padding mode {padding!r}")


def pool_geometry(length: int, pool: int, stride: int) -> int:
    if pool < 1 or stride < 1:
        raise GeometryError(f"Pool size and stride must be positive, got {pool}/{stride}")
    if pool > length:
        raise GeometryError(f"Pool size {pool} exceeds input length {length}")
    return (length - pool) // stride + 1


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: str = "valid") -> Tensor:
    """1D cross-correlation; x is C_in x L or N x C_in x L, weight C_out x C_in x K."""
    return _with_batch(_conv1d, x, weight, bias, stride, padding)


def _conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int, padding: str) -> Tensor:
    n, c_in, length = x.shape
    if weight.ndim != 3:
        raise ShapeError(f"Convolution weight must be C_out x C_in x K, got {weight.shape}")
    c_out, w_in, kernel = weight.shape
    if w_in != c_in:
        raise ShapeError(f"Weight expects {w_in} input channels, input has {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"Bias shape {bias.shape} does not match {c_out} output channels")

    out_len, left, right = conv_geometry(length, kernel, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right))) if left or right else x.data
    span = stride * (out_len - 1) + 1
    w = weight.data

    out = np.zeros((n, c_out, out_len), dtype=x.dtype)
    for k in range(kernel):
        out += np.matmul(w[:, :, k], xp[:, :, k:k + span:stride])
    if bias is not None:
        out += bias.data[None, :, None]

    def backward_fn(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(w) if weight.requires_grad else None
        for k in range(kernel):
            if gw is not None:
                gw[:, :, k] = np.tensordot(g, xp[:, :, k:k + span:stride], axes=([0, 2], [0, 2]))
            if gxp is not None:
                gxp[:, :, k:k + span:stride] += np.matmul(w[:, :, k].T, g)
        gx = gxp[:, :, left:left + length] if gxp is not None else None
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("conv1d", out, inputs, backward_fn)


def _windows(x: Tensor, pool: int, stride: int):
    out_len = pool_geometry(x.shape[2], pool, stride)
    windows = sliding_window_view(x.data, pool, axis=2)[:, :, ::stride][:, :, :out_len]
    return windows, out_len


def maxpool1d(x: Tensor, pool: int, stride: Optional[int] = None) -> Tensor:
    return _with_batch(_maxpool1d, x, pool, stride or pool)


def _maxpool1d(x: Tensor, pool: int, stride: int) -> Tensor:
    windows, out_len = _windows(x, pool, stride)
    # argmax picks the first maximal element on ties
    arg = windows.argmax(axis=3)
    out = np.take_along_axis(windows, arg[..., None], axis=3)[..., 0]
    span = stride * (out_len - 1) + 1

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        for j in range(pool):
            gx[:, :, j:j + span:stride] += np.where(arg == j, g, 0).astype(x.dtype)
        return (gx,)

    return _emit("maxpool1d", out, (x,), backward_fn)


def avgpool1d(x: Tensor, pool: int, stride: Optional[int] = None) -> Tensor:
    return _with_batch(_avgpool1d, x, pool, stride or pool)


def _avgpool1d(x: Tensor, pool: int, stride: int) -> Tensor:
    windows, out_len = _windows(x, pool, stride)
    out = windows.mean(axis=3, dtype=x.dtype)
    span = stride * (out_len - 1) + 1

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        share = g / pool
        for j in range(pool):
            gx[:, :, j:j + span:stride] += share
        return (gx,)

    return _emit("avgpool1d", out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1
    mode: str = TRAINING

    @classmethod
    def create(cls, channels: int, epsilon: float = 1e-5, momentum: float = 0.1, name: str = "bn"):
        dtype = default_dtype()
        return cls(
            gamma=Tensor(np.ones(channels), requires_grad=True, dtype=dtype, name=f"{name}.gamma"),
            beta=Tensor(np.zeros(channels), requires_grad=True, dtype=dtype, name=f"{name}.beta"),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            epsilon=epsilon,
            momentum=momentum,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @property
    def parameter_count(self) -> int:
        return 2 * self.channels


def batchnorm1d(x: Tensor, state: BatchNormState) -> Tensor:
    return _with_batch(_batchnorm1d, x, state)


def _batchnorm1d(x: Tensor, state: BatchNormState) -> Tensor:
    n, channels, length = x.shape
    if channels != state.channels:
        raise ShapeError(f"BatchNorm has {state.channels} channels, input has {channels}")
    if state.mode not in MODES:
        raise TensorValidationError(f"Unknown mode {state.mode!r}")

    axes = (0, 2)
    gamma = state.gamma.data[None, :, None]
    beta = state.beta.data[None, :, None]

    if state.mode == TRAINING:
        count = n * length
        if count < 2:
            raise TensorValidationError("Training-mode batch normalization needs at least 2 values per channel")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var + m * var * count / (count - 1)).astype(state.running_var.dtype)
    else:
        count = None
        mean = state.running_mean
        var = state.running_var

    inv_std = (1.0 / np.sqrt(var + state.epsilon)).astype(x.dtype)[None, :, None]
    xhat = (x.data - mean[None, :, None].astype(x.dtype)) * inv_std
    out = gamma * xhat + beta

    def backward_fn(g):
        g_gamma = (g * xhat).sum(axis=axes)
        g_beta = g.sum(axis=axes)
        dxhat = g * gamma
        if count is None:
            gx = dxhat * inv_std
        else:
            gx = inv_std / count * (
                count * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        return gx, g_gamma, g_beta

    return _emit("batchnorm1d", out, (x, state.gamma, state.beta), backward_fn)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(x.dtype)
    return _emit("relu", x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return _emit("leaky_relu", x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _emit("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", out, (x,), backward_fn)


ACTIVATIONS = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "softmax": softmax,
}


def activate(x: Tensor, name: str) -> Tensor:
    if name in (None, "none"):
        return x
    try:
        return ACTIVATIONS[name](x)
    except KeyError:
        raise TensorValidationError(f"Unknown activation {name!r}")


# ---------------------------------------------------------------------------
# Dense, dropout, loss
# ---------------------------------------------------------------------------

def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map; x is D or N x D, weight M x D."""
    if x.ndim == 1:
        out = dense(reshape(x, (1, x.shape[0])), weight, bias)
        return reshape(out, (out.shape[1],))
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"Dense expects N x D input and M x D weight, got {x.shape} and {weight.shape}")
    if weight.shape[1] != x.shape[1]:
        raise ShapeError(f"Weight has {weight.shape[1]} columns, input has {x.shape[1]} features")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"Bias shape {bias.shape} does not match {weight.shape[0]} units")

    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward_fn(g):
        return g @ weight.data, g.T @ x.data, g.sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("dense", out, inputs, backward_fn)


def dropout(x: Tensor, p: float, mode: str = TRAINING, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; identity in inference mode or when p == 0."""
    if not 0.0 <= p < 1.0:
        raise TensorValidationError(f"Dropout probability must be in [0, 1), got {p}")
    if mode not in MODES:
        raise TensorValidationError(f"Unknown mode {mode!r}")
    if mode == INFERENCE or p == 0.0:
        return x
    rng = rng if rng is not None else np.random.default_rng()
    mask = ((rng.random(x.shape) >= p) / (1.0 - p)).astype(x.dtype)
    return _emit("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """
    Mean negative log-likelihood of softmax(logits) at the given class indices.

    The loss is accumulated and returned in float64; the logits gradient keeps the logits dtype.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError(f"Logits must be N x classes, got {logits.shape}")
    n, classes = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"Expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= classes):
        raise TensorValidationError(f"Labels must lie in [0, {classes})")

    z = logits.data.astype(np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = np.asarray(-log_probs[rows, labels].mean(), dtype=np.float64)
    probs = np.exp(log_probs)

    def backward_fn(g):
        grad = probs.copy()
        grad[rows, labels] -= 1.0
        return ((grad * (g / n)).astype(logits.dtype),)

    return _emit("cross_entropy", loss, (logits,), backward_fn)


# ---------------------------------------------------------------------------
# Verification helpers
# ---------------------------------------------------------------------------

def numerical_gradient(fn: Callable[[], float], tensor: Tensor, step: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of the scalar ``fn()`` with respect to ``tensor``."""
    flat = tensor.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = fn()
        flat[i] = original - step
        minus = fn()
        flat[i] = original
        grad[i] = (plus - minus) / (2.0 * step)
    return grad.reshape(tensor.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)
