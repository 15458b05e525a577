"""Dense float64 tensors with tape-free reverse-mode differentiation.

Every op returns a :class:`Tensor` that remembers its parents and a closure
propagating the output gradient back to them. ``backward`` walks the graph in
reverse topological order and accumulates into leaf :class:`Param` gradients.

The checkpoint format written by :func:`save_params` is::

    b"SHFT" | u32 LE version (=1) | u64 LE header length | header JSON (utf-8)
    | values: float64 little-endian, tensors concatenated in header order

Header JSON: ``{"dtype": "f64le", "tensors": [{"name", "shape"}...],
"aliases": {alias: target}}``.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import math
import struct
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DTYPE = np.float64
LN_EPS = 1e-5

_grad_enabled = True


class NumericsError(Exception):
    pass


class ShapeMismatch(NumericsError, ValueError):
    pass


class NonFiniteValue(NumericsError, FloatingPointError):
    pass


class NotScalar(NumericsError, ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def backward(self) -> None:
        backward(self)


class Param(Tensor):
    """A named trainable tensor with a persistent gradient buffer."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, requires_grad: bool = True):
        super().__init__(np.array(data, dtype=DTYPE), requires_grad=requires_grad)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteValue(f"{op} produced a non-finite value")


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str,
            check: bool = False) -> Tensor:
    # non-finite values propagate, so checking the numerically risky ops suffices
    if check:
        _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray, owned: bool = False) -> None:
    """Add ``g`` into ``t.grad``; ``owned`` arrays are fresh and may be adopted without a copy."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if owned and g.flags.writeable else np.array(g, dtype=DTYPE)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(a: tuple, b: tuple, op: str) -> None:
    try:
        np.broadcast_shapes(a, b)
    except ValueError as exc:
        raise ShapeMismatch(f"{op}: incompatible shapes {a} and {b}") from exc


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), bw, "add")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape), owned=True)
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape), owned=True)

    return _result(a.data * b.data, (a, b), bw, "mul")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: _accum(a, -g, owned=True), "neg")


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: _accum(a, g * c, owned=True), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: _accum(a, g * mask, owned=True), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    x = a.data
    x2 = x * x
    th = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + th)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        local = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner
        _accum(a, g * local, owned=True)

    return _result(out, (a,), bw, "gelu", check=True)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _result(np.asarray(out, dtype=DTYPE), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape: cannot reshape {a.shape} to {shape}") from exc
    return _result(out, (a,), lambda g: _accum(a, g.reshape(a.shape)), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: _accum(a, g.transpose(inv)), "transpose")


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            _accum(t, piece)

    return _result(out, tensors, bw, "concat")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim == 2:
        # (..., n, k) @ (k, m): fold leading dims into one GEMM
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(*lead, b.shape[-1])

        def bw(g):
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                _accum(a, (g2 @ b.data.T).reshape(a.shape), owned=True)
            if b.requires_grad:
                _accum(b, a2.T @ g2, owned=True)

        return _result(out, (a, b), bw, "matmul", check=True)

    _broadcast_shape(a.shape[:-2], b.shape[:-2], "matmul")
    out = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape), owned=True)
        if b.requires_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape), owned=True)

    return _result(out, (a, b), bw, "matmul", check=True)


# ---------------------------------------------------------------------------
# normalisation and probability
# ---------------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(x, y * (g - (g * y).sum(axis=axis, keepdims=True)), owned=True)

    return _result(y, (x,), bw, "softmax", check=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        p = np.exp(out)
        _accum(x, g - p * g.sum(axis=axis, keepdims=True), owned=True)

    return _result(out, (x,), bw, "log_softmax", check=True)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise over the last axis; a constant row maps to ``bias``."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeMismatch(f"layer_norm: gain/bias must have shape ({x.shape[-1]},)")
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).reshape(-1, n).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            dx = inv / n * (
                n * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
            _accum(x, dx, owned=True)

    return _result(out, (x, gain, bias), bw, "layer_norm", check=True)


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` over unmasked positions.

    ``logits`` has shape ``targets.shape + (V,)``; ``mask`` is 1 where a
    position counts.
    """
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    if mask is None:
        mask = np.ones(targets.shape, dtype=DTYPE)
    mask = np.asarray(mask, dtype=DTYPE)
    count = mask.sum()
    if count == 0:
        raise ValueError("cross_entropy: no unmasked positions")
    logp = log_softmax(logits, axis=-1)
    picked = np.take_along_axis(logp.data, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / count

    def bw(g):
        grad = np.zeros_like(logp.data)
        np.put_along_axis(grad, targets[..., None], (-g * mask / count)[..., None], axis=-1)
        _accum(logp, grad, owned=True)

    return _result(np.asarray(loss, dtype=DTYPE), (logp,), bw, "cross_entropy", check=True)


# ---------------------------------------------------------------------------
# lookup and regularisation
# ---------------------------------------------------------------------------


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatch(f"embedding_lookup: id out of range for table of {table.shape[0]} rows")

    def bw(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        _accum(table, grad, owned=True)

    return _result(table.data[ids], (table,), bw, "embedding_lookup", check=True)


def rng_for(seed: int, step: int, name: str) -> np.random.Generator:
    """Counter-based generator keyed by (seed, step, name)."""
    digest = hashlib.blake2b(f"{seed}:{step}:{name}".encode(), digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    if not train or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * keep, (x,), lambda g: _accum(x, g * keep, owned=True), "dropout")


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable ``Param.grad``."""
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        if not isinstance(node, Param):
            # free intermediate buffers; leaves keep theirs
            node.grad = None
            node._backward = None
            node._parents = ()


def finite_diff(
    fn: Callable[[], float],
    params: Sequence[Param],
    epsilon: float = 1e-5,
    coords: Iterable[tuple[int, int]] | None = None,
) -> list[np.ndarray]:
    """Central-difference gradient of ``fn()`` with respect to ``params``.

    ``fn`` reads the current parameter values. With ``coords`` (pairs of
    parameter index and flat element index) only those entries are filled;
    the rest stay zero.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    grads = [np.zeros_like(p.data) for p in params]
    if coords is None:
        coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    for i, j in coords:
        flat = params[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + epsilon
        up = float(fn())
        flat[j] = orig - epsilon
        down = float(fn())
        flat[j] = orig
        grads[i].reshape(-1)[j] = (up - down) / (2.0 * epsilon)
    return grads


class Adam:
    """Adam with bias correction; moments are kept per parameter name."""

    def __init__(self, params: Sequence[Param], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p in self.params:
            m, v = self.m[p.name], self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def adam_step(optimizer: Adam) -> None:
    optimizer.step()


def clip_grad_norm(params: Sequence[Param], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float((p.grad**2).sum()) for p in params))
    if total > max_norm > 0:
        factor = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= factor
    return total


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"SHFT"
_VERSION = 1


def save_params(path, params: Mapping[str, Param]) -> None:
    """Write named parameters; entries sharing storage are stored once as aliases."""
    tensors: list[Param] = []
    aliases: dict[str, str] = {}
    owner: dict[int, str] = {}
    for name, p in params.items():
        if id(p) in owner:
            aliases[name] = owner[id(p)]
            continue
        owner[id(p)] = name
        tensors.append((name, p))
    header = {
        "dtype": "f64le",
        "tensors": [{"name": n, "shape": list(p.shape)} for n, p in tensors],
        "aliases": aliases,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(blob)))
        fh.write(blob)
        for _, p in tensors:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_params(path) -> dict[str, Param]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", raw, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    start = 4 + struct.calcsize("<IQ")
    header = json.loads(raw[start:start + hlen])
    offset = start + hlen
    out: dict[str, Param] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).astype(DTYPE)
        offset += 8 * n
        out[entry["name"]] = Param(values.reshape(shape), entry["name"])
    for alias, target in header["aliases"].items():
        out[alias] = out[target]
    return out
