"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor`. When any input requires a gradient the
output keeps references to its parents plus a closure mapping the upstream
gradient to one gradient per parent; :func:`backward` replays those closures in
reverse topological order.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

LOG_EPS = 1e-6

_state = threading.local()


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ContractError(ValueError):
    pass


class GradCheckError(ArithmeticError):
    pass


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(value)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# primitives

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return _make(A @ B, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    A, B = a.data, b.data

    def backward(g):
        return _unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)

    return _make(A * B, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def backward(g):
        return (g * c,)

    return _make(a.data * c, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), backward)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _make(out, (a,), backward)


def log(a, eps: float = LOG_EPS) -> Tensor:
    """``log(a + eps)``. ``eps=0`` disables the guard and rejects non-positive input."""
    a = as_tensor(a)
    shifted = a.data + eps
    if np.any(shifted <= 0):
        bad = np.unravel_index(int(np.argmin(shifted)), a.shape) if a.ndim else ()
        raise DomainError(f"log: non-positive argument {shifted[bad] if a.ndim else shifted} at {bad} (eps={eps})")

    def backward(g):
        return (g / shifted,)

    return _make(np.log(shifted), (a,), backward)


def row_softmax(a, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis of a rank-2 tensor.

    ``mask`` (boolean, same shape) excludes entries; excluded entries come out
    as exact zeros. Every row must keep at least one entry.
    """
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"row_softmax: expected rank-2 input, got shape {a.shape}")
    x = a.data
    if mask is not None:
        if mask.shape != x.shape:
            raise DimensionError(f"row_softmax: mask shape {mask.shape} != input shape {x.shape}")
        if not mask.any(axis=1).all():
            raise ContractError("row_softmax: a row has no unmasked entries")
        x = np.where(mask, x, -np.inf)
    z = np.exp(x - x.max(axis=1, keepdims=True))
    out = z / z.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _make(out, (a,), backward)


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"log_softmax: expected rank-2 input, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return _make(out, (a,), backward)


def layer_norm(a, gamma, beta, eps: float = 1e-10) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then ``* gamma + beta``."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    if a.ndim != 2:
        raise DimensionError(f"layer_norm: expected rank-2 input, got shape {a.shape}")
    d = a.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: affine params {gamma.shape}/{beta.shape} do not match feature dim {d}"
        )
    x = a.data
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    G = gamma.data

    def backward(g):
        gx = g * G
        dx = inv * (gx - gx.mean(axis=1, keepdims=True) - xhat * (gx * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make(xhat * G + beta.data, (a, gamma, beta), backward)


def concat_last_dim(tensors: Sequence) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat_last_dim: nothing to concatenate")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise DimensionError(f"concat_last_dim: leading shapes {lead} and {t.shape[:-1]} differ")
    widths = np.cumsum([t.shape[-1] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, widths, axis=-1))

    return _make(np.concatenate([t.data for t in tensors], axis=-1), tensors, backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected rank-2 input, got shape {a.shape}")

    def backward(g):
        return (g.T,)

    return _make(a.data.T, (a,), backward)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    old = a.shape

    def backward(g):
        return (g.reshape(old),)

    try:
        value = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {shape}") from None
    return _make(value, (a,), backward)


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis)), (a,), backward)


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    shape = a.shape

    def backward(g):
        return (np.full(shape, float(g) / n),)

    return _make(np.asarray(a.data.mean()), (a,), backward)


def frobenius_sq(a) -> Tensor:
    a = as_tensor(a)
    A = a.data

    def backward(g):
        return (2.0 * float(g) * A,)

    return _make(np.asarray(np.sum(A * A)), (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt: negative argument")
    out = np.sqrt(a.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.where(out > 0, g / (2.0 * out), 0.0),)

    return _make(out, (a,), backward)


def cosine_rows(a, eps: float = 1e-12) -> Tensor:
    """Pairwise cosine similarity between the rows of ``a`` (n x n)."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"cosine_rows: expected rank-2 input, got shape {a.shape}")
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    clipped = norms < eps
    r = np.where(clipped, eps, norms)
    unit = a.data / r
    out = unit @ unit.T

    def backward(g):
        du = (g + g.T) @ unit
        radial = np.where(clipped, 0.0, (du * unit).sum(axis=1, keepdims=True))
        return ((du - radial * unit) / r,)

    return _make(out, (a,), backward)


def _scatter_rows(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    """``out[index[e]] += values[e]`` via a sparse indicator product."""
    if values.ndim == 1:
        return np.bincount(index, weights=values, minlength=n).astype(np.float64)
    ind = sp.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))), shape=(n, len(index)))
    flat = values.reshape(len(index), -1)
    return np.asarray(ind @ flat).reshape((n,) + values.shape[1:])


def gather_rows(a, index: np.ndarray) -> Tensor:
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]

    def backward(g):
        return (_scatter_rows(g, index, n),)

    return _make(a.data[index], (a,), backward)


def segment_sum(a, segments: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets given per-row bucket ids."""
    a = as_tensor(a)
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape[0] != a.shape[0]:
        raise DimensionError(f"segment_sum: {segments.shape[0]} ids for {a.shape[0]} rows")
    out = _scatter_rows(a.data, segments, num_segments)

    def backward(g):
        return (g[segments],)

    return _make(out, (a,), backward)


def segment_softmax(logits, segments: np.ndarray, num_segments: int, weights=None) -> Tensor:
    """Weighted softmax of a flat logit vector within each segment.

    ``p_e = w_e exp(x_e) / sum_{e' in seg(e)} w_e' exp(x_e')``; with 0/1 weights
    this is a masked softmax where zero-weight entries are exactly 0. Every
    segment needs positive total weight.
    """
    logits = as_tensor(logits)
    segments = np.asarray(segments, dtype=np.int64)
    if logits.ndim != 1 or segments.shape != logits.shape:
        raise DimensionError(f"segment_softmax: logits {logits.shape} vs segments {segments.shape}")
    x = logits.data
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, segments, x)
    e = np.exp(x - seg_max[segments])
    if weights is None:
        w_t = None
        w = np.ones_like(x)
    else:
        w_t = as_tensor(weights)
        if w_t.shape != logits.shape:
            raise DimensionError(f"segment_softmax: weights {w_t.shape} vs logits {logits.shape}")
        w = w_t.data
    denom = np.bincount(segments, weights=w * e, minlength=num_segments)
    if np.any(denom[np.unique(segments)] <= 0):
        raise ContractError("segment_softmax: a segment has zero total weight")
    q = e / denom[segments]
    p = w * q

    def backward(g):
        gp = np.bincount(segments, weights=g * p, minlength=num_segments)
        centered = g - gp[segments]
        grads = (p * centered,)
        if w_t is not None:
            grads = grads + (q * centered,)
        return grads

    parents = (logits,) if w_t is None else (logits, w_t)
    return _make(p, parents, backward)


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward value ``hard``, gradient routed to ``soft`` unchanged."""
    soft = as_tensor(soft)
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise DimensionError(f"straight_through: hard {hard.shape} vs soft {soft.shape}")

    def backward(g):
        return (g,)

    return _make(hard.copy(), (soft,), backward)


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    """Standard Gumbel samples ``-log(-log(u))``; ``u`` kept strictly inside (0, 1)."""
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    u = np.minimum(u, np.nextafter(1.0, 0.0))
    return -np.log(-np.log(u))


FORWARD_PRIMITIVES: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "scale": scale,
    "relu": relu,
    "row_softmax": row_softmax,
    "layer_norm": layer_norm,
    "concat_last_dim": lambda *ts: concat_last_dim(ts),
    "log": log,
    "sigmoid": sigmoid,
    "frobenius_sq": frobenius_sq,
    "mean": mean,
    "cosine_rows": cosine_rows,
}


def forward_primitive(kind: str, *inputs, **kwargs) -> Tensor:
    try:
        fn = FORWARD_PRIMITIVES[kind]
    except KeyError:
        raise ContractError(f"unknown primitive {kind!r}; expected one of {sorted(FORWARD_PRIMITIVES)}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# reverse pass

@dataclass
class Tape:
    """Operations reachable from a loss, parents before children."""

    nodes: list[Tensor] = field(default_factory=list)
    consumed: bool = False

    @classmethod
    def from_output(cls, out: Tensor) -> Tape:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)


def backward(loss: Tensor, retain_graph: bool = False) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Returns the leaf -> gradient map. Intermediate nodes drop their closures
    afterwards unless ``retain_graph``.
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    tape = Tape.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            leaves[node] = node.grad
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if not retain_graph:
        for node in tape.nodes:
            if not node.is_leaf:
                node._parents = ()
                node._backward = None
    tape.consumed = True
    return leaves


# ---------------------------------------------------------------------------
# finite-difference checking

def grad_check(fn: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - central| / max(1, |analytic|)``."""
    x = Tensor(np.array(as_tensor(point).data, copy=True), requires_grad=True)
    return grad_check_params(lambda: fn(x), [x], eps)


def grad_check_params(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5) -> float:
    """Like :func:`grad_check` for a closure over several parameter tensors.

    Parameters are perturbed in place and restored.
    """
    if not 0 < eps <= 1e-3:
        raise ContractError(f"grad_check: eps must lie in (0, 1e-3], got {eps}")
    params = list(params)
    for p in params:
        p.requires_grad = True
        p.grad = None
    loss = loss_fn()
    if loss.size != 1:
        raise ContractError(f"grad_check: function must be scalar-valued, got shape {loss.shape}")
    backward(loss)
    worst = 0.0
    for k, p in enumerate(params):
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for idx in range(flat.size):
            a = analytic.reshape(-1)[idx]
            where = f"param {k} ({p.name or 'unnamed'}) coordinate {np.unravel_index(idx, p.shape)}"
            if not np.isfinite(a):
                raise GradCheckError(f"non-finite analytic gradient at {where}")
            orig = flat[idx]
            try:
                with no_grad():
                    flat[idx] = orig + eps
                    up = loss_fn().item()
                    flat[idx] = orig - eps
                    down = loss_fn().item()
            except DomainError as exc:
                raise GradCheckError(f"function undefined near {where}: {exc}") from exc
            finally:
                flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            if not np.isfinite(numeric):
                raise GradCheckError(f"non-finite numeric gradient at {where}")
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
