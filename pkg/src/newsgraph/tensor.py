"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array. Every differentiable operation records a
node on an implicit tape (the chain of ``_parents`` / ``_backward``
references); ``backward()`` on a scalar loss walks the recorded nodes in
reverse topological order and accumulates ``grad`` on every tensor that
requires it. The tape is consumed by the walk: calling ``backward()``
twice on the same loss raises.

The operation set is deliberately small (~20 backward rules): exactly
what the graph encoders, the hyperbolic kernels and the text CNN need.
There is no broadcasting beyond numpy's, no views, no in-place math.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError

__all__ = [
    "Tensor",
    "Parameter",
    "no_grad",
    "tensor",
    "matmul",
    "spmm",
    "concat",
    "gather_rows",
    "segment_sum",
    "weighted_bce_loss",
    "finite_difference_check",
]

_grad_enabled = True


class no_grad:
    """Context manager disabling tape recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return arr


class Tensor:
    """Dense float64 array participating in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, values, requires_grad: bool = False):
        self.data = _as_array(values)
        if not np.all(np.isfinite(self.data)):
            raise NumericError("tensor initialized with non-finite values")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._consumed = False

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad_flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- operator sugar -----------------------------------------------------

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None):
        return tensor_max(self, axis=axis)

    def reshape(self, *shape):
        return reshape(self, *shape)

    # -- backward -----------------------------------------------------------

    def backward(self):
        """Populate ``grad`` on every requires_grad ancestor of this scalar."""
        if self.data.ndim != 0 and self.data.size != 1:
            raise ShapeError(
                f"backward() needs a scalar loss, got shape {self.shape}"
            )
        if self._consumed:
            raise RuntimeError("backward() called twice on the same tape")
        if not self.requires_grad:
            raise RuntimeError("loss does not require grad; nothing recorded")

        # Reverse topological order via iterative post-order DFS.
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        grads: dict[int, np.ndarray] = {
            id(self): np.ones_like(self.data)
        }
        for node in reversed(order):
            gout = grads.pop(id(node), None)
            if gout is None:
                continue
            if node.grad is None:
                node.grad = gout.copy()
            else:
                node.grad = node.grad + gout
            if node._backward is None:
                continue
            parent_grads = node._backward(gout)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + g
                else:
                    grads[id(parent)] = g
            # Consume the tape as we go: drop closure references.
            node._backward = None
            node._parents = ()
            node._consumed = True
        self._consumed = True


class Parameter(Tensor):
    """Trainable tensor. ``manifold`` is None for Euclidean parameters or a
    ball descriptor (see newsgraph.hyperbolic.PoincareBall) for points that
    must stay inside a Poincare ball."""

    __slots__ = ("name", "manifold")

    def __init__(self, values, name: str = "", manifold=None):
        super().__init__(values, requires_grad=True)
        self.name = name
        self.manifold = manifold


def tensor(values, requires_grad: bool = False) -> Tensor:
    return Tensor(values, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# op plumbing
# ---------------------------------------------------------------------------

def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    # numpy returns scalars for 0-d operands; keep ndarray semantics.
    out.data = data if isinstance(data, np.ndarray) else np.asarray(data)
    out.grad = None
    out._consumed = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over the axes numpy broadcasting introduced."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data * b.data
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data / b.data
    ad, bd = a.data, b.data

    def backward(g):
        ga = g / bd
        gb = -g * ad / (bd * bd)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(data, (a, b), backward)


def neg(a) -> Tensor:
    a = _coerce(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """2-D matrix product with recorded backward rule."""
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    data = a.data @ b.data
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _make(data, (a, b), backward)


def spmm(a_sparse, b) -> Tensor:
    """Sparse-constant @ dense-tensor product.

    ``a_sparse`` is a scipy sparse matrix treated as a constant; gradients
    flow to ``b`` only (grad_b = A.T @ g).
    """
    b = _coerce(b)
    if a_sparse.shape[1] != b.shape[0]:
        raise ShapeError(
            f"spmm inner dimensions differ: {a_sparse.shape} x {b.shape}"
        )
    data = np.asarray(a_sparse @ b.data)
    at = a_sparse.T.tocsr()

    def backward(g):
        return (np.asarray(at @ g),)

    return _make(data, (b,), backward)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = _coerce(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gx, shape).copy(),)

    return _make(np.asarray(data), (a,), backward)


def tensor_mean(a, axis=None, keepdims=False) -> Tensor:
    a = _coerce(a)
    if axis is None:
        count = a.size
    else:
        count = a.shape[axis]
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def tensor_max(a, axis=None) -> Tensor:
    """Max reduction; gradient routes to the first attaining entry."""
    a = _coerce(a)
    if axis is None:
        data = a.data.max()
        idx = np.unravel_index(np.argmax(a.data), a.shape)

        def backward(g):
            gx = np.zeros_like(a.data)
            gx[idx] = g
            return (gx,)

        return _make(np.asarray(data), (a,), backward)

    data = a.data.max(axis=axis)
    argmax = np.expand_dims(a.data.argmax(axis=axis), axis)

    def backward_axis(g):
        gx = np.zeros_like(a.data)
        np.put_along_axis(gx, argmax, np.expand_dims(g, axis), axis)
        return (gx,)

    return _make(data, (a,), backward_axis)


def reshape(a, *shape) -> Tensor:
    a = _coerce(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.shape
    data = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(old),)

    return _make(data, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    parts = [_coerce(t) for t in tensors]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(data, tuple(parts), backward)


def gather_rows(a, indices) -> Tensor:
    """Select rows (axis 0) by an integer index array; backward scatter-adds."""
    a = _coerce(a)
    idx = np.asarray(indices)
    data = a.data[idx]
    shape = a.shape

    def backward(g):
        gx = np.zeros(shape, dtype=np.float64)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(data, (a,), backward)


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets given by segment_ids.

    The exact dual of gather_rows: backward gathers the incoming gradient
    back out at each row's segment.
    """
    a = _coerce(a)
    seg = np.asarray(segment_ids)
    out_shape = (num_segments,) + a.shape[1:]
    data = np.zeros(out_shape, dtype=np.float64)
    np.add.at(data, seg, a.data)

    def backward(g):
        return (g[seg],)

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

def relu(a) -> Tensor:
    a = _coerce(a)
    mask = a.data > 0
    data = np.where(mask, a.data, 0.0)

    def backward(g):
        return (g * mask,)

    return _make(data, (a,), backward)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _coerce(a)
    mask = a.data > 0
    data = np.where(mask, a.data, slope * a.data)

    def backward(g):
        return (g * np.where(mask, 1.0, slope),)

    return _make(data, (a,), backward)


def elu(a, alpha: float = 1.0) -> Tensor:
    a = _coerce(a)
    neg_part = alpha * np.expm1(np.minimum(a.data, 0.0))
    mask = a.data > 0
    data = np.where(mask, a.data, neg_part)

    def backward(g):
        return (g * np.where(mask, 1.0, neg_part + alpha),)

    return _make(data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    # Stable in both tails.
    data = np.where(
        a.data >= 0,
        1.0 / (1.0 + np.exp(-np.abs(a.data))),
        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))),
    )

    def backward(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), backward)


def tanh(a) -> Tensor:
    a = _coerce(a)
    data = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - data * data),)

    return _make(data, (a,), backward)


def atanh(a, clamp: float = 1.0 - 1e-7) -> Tensor:
    """Inverse hyperbolic tangent with its argument clamped to (-c, c)."""
    a = _coerce(a)
    clipped = np.clip(a.data, -clamp, clamp)
    data = np.arctanh(clipped)

    def backward(g):
        return (g / (1.0 - clipped * clipped),)

    return _make(data, (a,), backward)


def exp(a) -> Tensor:
    a = _coerce(a)
    data = np.exp(a.data)

    def backward(g):
        return (g * data,)

    return _make(data, (a,), backward)


def log(a) -> Tensor:
    a = _coerce(a)
    data = np.log(a.data)
    ad = a.data

    def backward(g):
        return (g / ad,)

    return _make(data, (a,), backward)


def sqrt(a) -> Tensor:
    a = _coerce(a)
    data = np.sqrt(a.data)

    def backward(g):
        return (g * 0.5 / data,)

    return _make(data, (a,), backward)


def square(a) -> Tensor:
    a = _coerce(a)
    ad = a.data

    def backward(g):
        return (g * 2.0 * ad,)

    return _make(ad * ad, (a,), backward)


def softplus(a) -> Tensor:
    """log(1 + exp(x)) computed without overflow in either tail."""
    a = _coerce(a)
    data = np.logaddexp(0.0, a.data)
    sig = np.where(
        a.data >= 0,
        1.0 / (1.0 + np.exp(-np.abs(a.data))),
        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))),
    )

    def backward(g):
        return (g * sig,)

    return _make(data, (a,), backward)


def clip_min(a, floor: float) -> Tensor:
    """max(a, floor); gradient is zero where the floor is active."""
    a = _coerce(a)
    mask = a.data > floor
    data = np.where(mask, a.data, floor)

    def backward(g):
        return (g * mask,)

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# composite helpers shared by the message-passing layers
# ---------------------------------------------------------------------------

def segment_softmax(scores: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Softmax of a 1-D score vector within each segment.

    The per-segment max is subtracted as a constant before exponentiation;
    softmax is shift-invariant, so this stabilizes the computation without
    changing values or gradients.
    """
    seg = np.asarray(segment_ids)
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, seg, scores.data)
    z = exp(scores - seg_max[seg])
    denom = segment_sum(z, seg, num_segments)
    return div(z, gather_rows(denom, seg))


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted elementwise dropout: active units rescaled by 1/(1-p)."""
    if not training or p <= 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, mask)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def weighted_bce_loss(logits: Tensor, labels, positive_weight: float) -> Tensor:
    """Class-weighted binary cross-entropy over sigmoid logits.

    Mean over samples of w_i * BCE(sigmoid(z_i), y_i) with
    w_i = positive_weight for y_i = 1 and 1 otherwise. Evaluated in the
    log-sum-exp form (softplus), so no intermediate probability is ever
    passed through log().
    """
    y = np.asarray(labels, dtype=np.float64)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be binary (0/1)")
    if positive_weight <= 0:
        raise ValueError("positive_weight must be positive")
    logits = _coerce(logits)
    if logits.shape != y.shape:
        raise ShapeError(f"logits {logits.shape} vs labels {y.shape}")
    weights = np.where(y == 1.0, positive_weight, 1.0)
    # BCE(sigmoid(z), y) = y*softplus(-z) + (1-y)*softplus(z)
    per_sample = mul(softplus(neg(logits)), y) + mul(softplus(logits), 1.0 - y)
    return tensor_mean(mul(per_sample, weights))


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def finite_difference_check(
    loss_fn,
    params: list[Tensor],
    h: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-7,
    max_entries: int = 64,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the forward pass from ``params`` on every
    call. Checks up to ``max_entries`` randomly chosen entries per
    parameter. Returns the worst absolute deviation ratio seen and raises
    AssertionError on a mismatch.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [None if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        if g is None:
            raise AssertionError(f"no gradient reached parameter {p!r}")
        flat = p.data.reshape(-1)
        n = flat.size
        entries = (
            np.arange(n)
            if n <= max_entries
            else rng.choice(n, size=max_entries, replace=False)
        )
        for i in entries:
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                up = loss_fn().item()
            flat[i] = orig - h
            with no_grad():
                down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = g.reshape(-1)[i]
            tol = atol + rtol * max(abs(numeric), abs(a))
            dev = abs(a - numeric)
            worst = max(worst, dev / tol if tol > 0 else 0.0)
            if dev > tol:
                raise AssertionError(
                    f"gradient mismatch at entry {i}: analytic {a:.8g} vs "
                    f"numeric {numeric:.8g} (|diff|={dev:.3g}, tol={tol:.3g})"
                )
    return worst
