"""Small dense-tensor autodiff engine on top of numpy.

Every value is float64. Each op records its parents and a closure that
pushes the upstream gradient back to them; :func:`backward` walks the
graph in reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class NumericalError(RuntimeError):
    """A forward op produced NaN or Inf."""


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __radd__ = lambda self, other: add(other, self)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __rsub__ = lambda self, other: sub(other, self)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731
    __rmul__ = lambda self, other: mul(other, self)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731
    __neg__ = lambda self: mul(self, -1.0)  # noqa: E731
    __getitem__ = lambda self, idx: getitem(self, idx)  # noqa: E731


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values in op output of shape {data.shape}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), bw)


def matmul(a, b) -> Tensor:
    """``np.matmul`` semantics; the right operand may be 1-D or 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim > 2:
        raise ShapeError(f"matmul: right operand must be 1-D or 2-D, got {b.shape}")
    out = a.data @ b.data

    def bw(g):
        if b.ndim == 1:
            if a.requires_grad:
                _accumulate(a, g[..., None] * b.data)
            if b.requires_grad:
                _accumulate(b, (a.data * g[..., None]).reshape(-1, b.shape[0]).sum(axis=0))
        else:
            if a.requires_grad:
                _accumulate(a, g @ b.data.T)
            if b.requires_grad:
                a2 = a.data.reshape(-1, a.shape[-1])
                _accumulate(b, a2.T @ g.reshape(-1, b.shape[-1]))

    return _result(out, (a, b), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + ", ".join(str(t.shape) for t in ts)) from None
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def bw(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                _accumulate(t, g[tuple(sl)])

    return _result(out, ts, bw)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        _accumulate(a, g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), bw)


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)

    def bw(g):
        _accumulate(a, np.transpose(g, inv))

    return _result(np.transpose(a.data, axes), (a,), bw)


def getitem(a: Tensor, idx) -> Tensor:
    """Basic slicing / integer indexing. Repeated indices accumulate."""

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _result(np.array(a.data[idx]), (a,), bw)


def take_rows(table: Tensor, idx) -> Tensor:
    """Row lookup ``table[idx]`` for an integer index array (embedding gather)."""
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            _accumulate(table, full)

    return _result(table.data[idx], (table,), bw)


def expand_dims(a: Tensor, axis: int) -> Tensor:
    return reshape(a, np.expand_dims(a.data, axis).shape)


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    out = np.where(pos, a.data, slope * a.data)

    def bw(g):
        _accumulate(a, np.where(pos, g, slope * g))

    return _result(out, (a,), bw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)

    def bw(g):
        _accumulate(a, g * s * (1.0 - s))

    return _result(s, (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accumulate(a, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _result(s, (a,), bw)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _result(out, (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / count)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean cross-entropy of row-wise (optionally masked) softmax.

    ``logits`` is (rows, classes), ``targets`` holds one class per row and
    ``mask`` marks the admissible classes of each row. Masked cells take no
    probability mass and receive zero gradient.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be 2-D, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    rows, classes = logits.shape
    if targets.shape != (rows,):
        raise ShapeError(f"softmax_cross_entropy: targets {targets.shape} vs logits {logits.shape}")
    if mask is None:
        mask = np.ones((rows, classes), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise ShapeError(f"softmax_cross_entropy: mask {mask.shape} vs logits {logits.shape}")
    if np.any((targets < 0) | (targets >= classes)):
        raise ValueError("softmax_cross_entropy: target index out of range")
    if not np.all(mask[np.arange(rows), targets]):
        bad = np.flatnonzero(~mask[np.arange(rows), targets]).tolist()
        raise ValueError(f"softmax_cross_entropy: target falls on a masked cell in rows {bad}")
    if rows == 0:
        return Tensor(0.0)

    x = np.where(mask, logits.data, -np.inf)
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=1, keepdims=True)
    lse = (m + np.log(z))[:, 0]
    picked = logits.data[np.arange(rows), targets]
    loss = np.mean(lse - picked)
    p = e / z

    def bw(g):
        d = p.copy()
        d[np.arange(rows), targets] -= 1.0
        _accumulate(logits, g * d / rows)

    return _result(np.asarray(loss), (logits,), bw)


def binary_cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean sigmoid BCE over the cells selected by ``mask``."""
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"binary_cross_entropy: targets {y.shape} vs logits {logits.shape}")
    mask = np.ones(logits.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        return Tensor(0.0)
    x = logits.data
    # log(1 + exp(-|x|)) + max(x, 0) - x*y
    per = np.logaddexp(0.0, -np.abs(x)) + np.maximum(x, 0.0) - x * y
    loss = np.sum(per[mask]) / count
    s = _sigmoid(x)

    def bw(g):
        _accumulate(logits, g * np.where(mask, s - y, 0.0) / count)

    return _result(np.asarray(loss), (logits,), bw)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable ``requires_grad`` leaf.

    Intermediate gradients are discarded after the pass; leaf gradients add
    up across calls until zeroed.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf
            _accumulate(node, g)
            continue
        inner = {id(p): p for p in node._parents if p._backward is not None}.values()
        for p in inner:
            p.grad = None
        node._backward(g)
        for p in inner:
            if p.grad is not None:
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + p.grad
                else:
                    grads[id(p)] = p.grad
                p.grad = None


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


@dataclass
class ParamGroup:
    name: str
    tensors: list[Tensor]
    learning_rate: float

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"param group {self.name!r}: learning_rate must be > 0")


@dataclass
class Adam:
    """Adam with bias correction. Weight decay and clipping are off by default."""

    groups: list[ParamGroup]
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float | None = None
    t: int = 0
    _m: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _v: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        scale = 1.0
        if self.clip_norm is not None:
            total = np.sqrt(sum_sq(t.grad for g in self.groups for t in g.tensors if t.grad is not None))
            if total > self.clip_norm:
                scale = self.clip_norm / total
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for group in self.groups:
            for p in group.tensors:
                if p.grad is None:
                    continue
                g = p.grad * scale
                if self.weight_decay:
                    g = g + self.weight_decay * p.data
                m = self._m.setdefault(id(p), np.zeros_like(p.data))
                v = self._v.setdefault(id(p), np.zeros_like(p.data))
                with np.errstate(over="ignore", invalid="ignore"):
                    m *= b1
                    m += (1.0 - b1) * g
                    v *= b2
                    v += (1.0 - b2) * g * g
                    update = group.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
                if not np.all(np.isfinite(update)):
                    raise NumericalError(f"non-finite Adam update for {p.name or 'unnamed tensor'} at step {self.t}")
                p.data -= update
        self.zero_grad()

    def zero_grad(self) -> None:
        for group in self.groups:
            for p in group.tensors:
                p.zero_grad()


def sum_sq(arrays: Iterable[np.ndarray]) -> float:
    return float(np.sum([np.sum(a * a) for a in arrays]))


def adam_step(groups: list[ParamGroup], betas=(0.9, 0.999), eps=1e-8, state: Adam | None = None) -> Adam:
    """Functional wrapper: perform one step, returning the (reusable) optimizer state."""
    opt = state if state is not None else Adam(groups, betas=betas, eps=eps)
    opt.step()
    return opt


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckResult:
    name: str
    coords: int
    max_rel_error: float
    passed: bool
    refined: int = 0


@dataclass
class GradCheckReport:
    results: list[GradCheckResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> list[GradCheckResult]:
        return [r for r in self.results if not r.passed]

    def __str__(self) -> str:
        lines = [
            f"{'ok ' if r.passed else 'FAIL'} {r.name:<28} coords={r.coords:<4} max_rel_err={r.max_rel_error:.3e}"
            + (f" refined={r.refined}" if r.refined else "")
            for r in self.results
        ]
        return "\n".join(lines)


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    build: Callable[[], Tensor],
    params: dict[str, Tensor],
    epsilon: float = 1e-3,
    tolerance: float = 1e-4,
    coords: int = 32,
    seed: int = 0,
    refine: int = 3,
) -> GradCheckReport:
    """Compare backprop gradients against central finite differences.

    ``build`` must rebuild the scalar loss from the current parameter values
    each time it is called. At most ``coords`` coordinates per tensor are
    probed (all of them when the tensor is smaller).

    A step that straddles a kink of a piecewise-linear activation gives a
    meaningless central difference. A failing coordinate is therefore probed
    again with steps shrunk by 10x (up to ``refine`` times); a wrong analytic
    gradient fails at every step, so this only forgives kink crossings. The
    number of coordinates that needed it is reported as ``refined``.
    """
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.grad = np.zeros_like(p.data)
    loss = build()
    backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    results = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        k = min(coords, flat.size)
        picks = rng.choice(flat.size, size=k, replace=False) if k < flat.size else np.arange(flat.size)
        worst = 0.0
        refined = 0
        for c in picks:
            a = analytic[name].reshape(-1)[c]
            step = epsilon
            err = relative_error(a, _central_difference(build, flat, int(c), step))
            tries = 0
            while err > tolerance and tries < refine:
                step /= 10.0
                tries += 1
                err = relative_error(a, _central_difference(build, flat, int(c), step))
            refined += tries > 0 and err <= tolerance
            worst = max(worst, err)
        results.append(GradCheckResult(name, int(k), worst, worst <= tolerance, int(refined)))
        p.grad = np.zeros_like(p.data)
    return GradCheckReport(results)


def _central_difference(build: Callable[[], Tensor], flat: np.ndarray, c: int, step: float) -> float:
    orig = flat[c]
    flat[c] = orig + step
    up = build().item()
    flat[c] = orig - step
    down = build().item()
    flat[c] = orig
    return (up - down) / (2.0 * step)
