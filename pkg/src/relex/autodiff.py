"""Dense tensors with reverse-mode automatic differentiation.

The numerical core of the package: the handful of primitives the
relation extractor needs (matmul, 1-d convolution, layer norm, masked
softmax, logsumexp, gathers and elementwise maps), each with a
hand-written backward rule over numpy arrays. Float64 is used by the
verification suites and float32 for training.

Non-finite values are treated as bugs: every primitive checks its
output and raises ``NonFiniteError`` instead of letting NaN or Inf
propagate silently. Softmax and logsumexp always subtract the running
maximum before exponentiating.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

LN_EPS = 1e-6  # variance guard for layer_norm


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op}: output contains NaN or Inf")


_grad_enabled = True


class no_grad:
    """Context manager that skips graph construction (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


class Tensor:
    """A dense float array plus the links reverse-mode AD needs.

    Tensors are immutable by convention once created: operations return
    new tensors that record their parents, so a forward pass builds the
    computation graph implicitly. ``backward`` fills ``grad`` (a numpy
    array of the same shape) for every tensor on the path to the loss.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _bw: Callable | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._bw = _bw
        _check_finite(name or "tensor", arr)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, op: str, parents: Sequence[Tensor],
            bw: Callable[[np.ndarray], tuple]) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, name=op,
                      _parents=tuple(parents), _bw=bw)
    return Tensor(data, name=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(out, "add", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def bw(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _result(out, "mul", (a, b), bw)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        return (-g,)

    return _result(-a.data, "neg", (a,), bw)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0)

    def bw(g):
        return (g * (a.data > 0),)

    return _result(out, "relu", (a,), bw)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching over leading dimensions."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul: operands must be at least 2-d, got "
                         f"{a.data.shape} x {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul: inner dimensions disagree: "
                         f"{a.data.shape} x {b.data.shape}")
    out = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _result(out, "matmul", (a, b), bw)


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=False),)

    return _result(out, "sum", (a,), bw)


def tmean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.data.shape).astype(a.data.dtype, copy=False),)

    return _result(out, "mean", (a,), bw)


def softmax(x, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis`` with max-subtraction.

    ``mask`` is an optional boolean array (broadcastable to ``x``) where
    True marks positions excluded from the distribution; excluded
    positions get weight exactly 0 and receive zero gradient. Rows that
    are entirely masked come out as all zeros.
    """
    x = _as_tensor(x)
    logits = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
        logits = np.where(mask, -np.inf, logits)
    m = logits.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(logits - m)
    s = e.sum(axis=axis, keepdims=True)
    y = e / np.where(s == 0, 1.0, s)

    def bw(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return ((g - inner) * y,)

    return _result(y, "softmax", (x,), bw)


def logsumexp(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """log(sum(exp(x))) along ``axis`` (all elements when None)."""
    x = _as_tensor(x)
    if x.data.size == 0:
        raise ValueError("logsumexp: empty input")
    m = x.data.max(axis=axis, keepdims=True)
    full = np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True)) + m
    out = full if keepdims else np.squeeze(full, axis=axis) if axis is not None else full.reshape(())

    def bw(g):
        soft = np.exp(x.data - full)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (soft * g,)

    return _result(out, "logsumexp", (x,), bw)


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    """Per-row normalization over the last axis, then affine gain/bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        d = x.data.shape[-1]
        red = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=red)
        dbias = g.sum(axis=red)
        dxhat = g * gain.data
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True) / d)
        return dx, dgain, dbias

    return _result(out, "layer_norm", (x, gain, bias), bw)


def conv1d(x, kernel, bias) -> Tensor:
    """Same-length 1-d convolution over a (positions, channels) input.

    ``kernel`` has shape (width, in_channels, out_channels) with odd
    width; the sequence is zero-padded so position i of the output
    depends only on inputs i-w//2 .. i+w//2.
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if kernel.data.ndim != 3:
        raise ValueError(f"conv1d: kernel must be (width, in, out), got {kernel.data.shape}")
    w, cin, cout = kernel.data.shape
    if w % 2 == 0:
        raise ValueError(f"conv1d: kernel width must be odd, got {w}")
    if x.data.ndim != 2 or x.data.shape[1] != cin:
        raise ValueError(f"conv1d: input {x.data.shape} does not match kernel {kernel.data.shape}")
    n = x.data.shape[0]
    pad = w // 2
    xp = np.zeros((n + 2 * pad, cin), dtype=x.data.dtype)
    xp[pad:pad + n] = x.data
    windows = np.stack([xp[t:t + n] for t in range(w)], axis=1)  # (n, w, cin)
    flat = windows.reshape(n, w * cin)
    kflat = kernel.data.reshape(w * cin, cout)
    out = flat @ kflat + bias.data

    def bw(g):
        dbias = g.sum(axis=0)
        dk = (flat.T @ g).reshape(w, cin, cout)
        dwin = (g @ kflat.T).reshape(n, w, cin)
        dxp = np.zeros_like(xp)
        for t in range(w):
            dxp[t:t + n] += dwin[:, t]
        return dxp[pad:pad + n], dk, dbias

    return _result(out, "conv1d", (x, kernel, bias), bw)


# ---------------------------------------------------------------------------
# shape and indexing primitives


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def bw(g):
        return (g.reshape(x.data.shape),)

    return _result(out, "reshape", (x,), bw)


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    out = x.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (g.transpose(inv),)

    return _result(out, "transpose", (x,), bw)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, "concat", parts, bw)


def gather_rows(x, idx) -> Tensor:
    """Select rows ``x[idx]`` (used for embedding lookups and cell picks)."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    out = x.data[idx]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result(out, "gather_rows", (x,), bw)


def take_per_row(x, idx) -> Tensor:
    """Pick one column per row: out[i] = x[i, idx[i]]."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if x.data.ndim != 2 or idx.shape != (x.data.shape[0],):
        raise ValueError(f"take_per_row: got {x.data.shape} and {idx.shape}")
    rows = np.arange(x.data.shape[0])
    out = x.data[rows, idx]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, idx), g)
        return (gx,)

    return _result(out, "take_per_row", (x,), bw)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Reverse-mode gradients of a scalar ``loss``.

    Fills ``t.grad`` for every requires-grad tensor reachable from the
    loss; tensors in ``params`` that the loss does not reach get an
    exact-zero gradient. Accumulation order is fixed by the graph, so
    repeated calls are bit-identical.
    """
    if loss.data.ndim != 0:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")

    order: list[Tensor] = []
    seen: set[int] = {id(loss)}
    stack: list[tuple[Tensor, Iterable]] = [(loss, iter(loss._parents))]
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            if id(parent) not in seen and parent.requires_grad:
                seen.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()

    for node in order:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)

    for node in reversed(order):
        if node._bw is None:
            continue
        grads = node._bw(node.grad)
        for parent, g in zip(node._parents, grads):
            if parent.requires_grad and g is not None:
                parent.grad += g

    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               eps: float = 1e-5, max_coords: int = 10,
               rng: np.random.Generator | None = None) -> float:
    """Worst relative error between reverse-mode and central differences.

    ``f`` rebuilds a scalar loss from ``params`` on every call; all
    parameters must be float64. Up to ``max_coords`` coordinates are
    sampled per parameter and compared as
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError("grad_check requires float64 parameters")
    loss = f()
    backward(loss, params)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else np.sort(
            rng.choice(n, size=max_coords, replace=False))
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            hi = float(f().data)
            flat[c] = orig - eps
            lo = float(f().data)
            flat[c] = orig
            numeric = (hi - lo) / (2 * eps)
            a = an.reshape(-1)[c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# parameter bookkeeping


class ParamSet:
    """Learned tensors keyed by name, iterated in insertion order."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(array, requires_grad=True, name=name)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for name, t in self._tensors.items():
            out[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        """Replace parameter values, validating names and shapes."""
        missing = set(self._tensors) - set(arrays)
        extra = set(arrays) - set(self._tensors)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)} "
                             f"extra={sorted(extra)}")
        for name, t in self._tensors.items():
            arr = np.asarray(arrays[name])
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"checkpoint {arr.shape} vs model {t.data.shape}")
            t.data = arr.astype(t.data.dtype, copy=True)
            t.grad = None
