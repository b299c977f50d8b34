"""Dense float64 tensors with reverse-mode gradients.

Minimal by design: only the ops the models in this package need. There is no
implicit broadcasting anywhere -- every op states its exact shape rule and
raises ShapeError otherwise, which keeps each backward rule small enough to
verify by hand and by finite differences (see `finite_diff_check`).

Graphs are built define-by-run: calling an op records the node and a closure
that pushes adjoints to its parents. `backward` walks the recorded graph in
reverse topological order with a fixed left-to-right accumulation order, so
repeated runs are bit-identical.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import GraphUsageError, ShapeError, ValidationError

MASK_NEG = -1e30  # additive mask value; exp() underflows to exactly 0.0

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager: ops executed inside record no graph (values only)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """A dense float64 array plus optional autodiff bookkeeping."""

    __slots__ = ("values", "grad", "parents", "backward_fn", "name")

    def __init__(self, values, parents=(), backward_fn=None, name=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        if _grad_enabled():
            self.parents = tuple(parents)
            self.backward_fn = backward_fn
        else:
            self.parents = ()
            self.backward_fn = None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"


def constant(values) -> Tensor:
    return Tensor(values)


def parameter(values, name: str) -> Tensor:
    return Tensor(values, name=name)


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += grad


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes must match exactly, got {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise ops (identical shapes; no broadcasting)
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return Tensor(a.values + b.values, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return Tensor(a.values - b.values, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")

    def bw(g):
        _accumulate(a, g * b.values)
        _accumulate(b, g * a.values)

    return Tensor(a.values * b.values, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        _accumulate(a, g * c)

    return Tensor(a.values * c, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.values)
    pos = a.values >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.values[pos]))
    ex = np.exp(a.values[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        _accumulate(a, g * out * (1.0 - out))

    return Tensor(out, (a,), bw)


def relu(a: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, g * (a.values > 0))

    return Tensor(np.maximum(a.values, 0.0), (a,), bw)


def log(a: Tensor) -> Tensor:
    if np.any(a.values <= 0):
        raise ValidationError("log: all inputs must be strictly positive")

    def bw(g):
        _accumulate(a, g / a.values)

    return Tensor(np.log(a.values), (a,), bw)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values into [lo, hi]; gradient is 1 strictly inside, 0 outside."""
    inside = (a.values > lo) & (a.values < hi)

    def bw(g):
        _accumulate(a, g * inside)

    return Tensor(np.clip(a.values, lo, hi), (a,), bw)


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(a.values.copy())


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: requires (m,k)@(k,n), got {a.shape} vs {b.shape}")

    def bw(g):
        _accumulate(a, g @ b.values.T)
        _accumulate(b, a.values.T @ g)

    return Tensor(a.values @ b.values, (a, b), bw)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul: (B,m,k) @ (B,k,n) -> (B,m,n)."""
    if (
        a.values.ndim != 3
        or b.values.ndim != 3
        or a.shape[0] != b.shape[0]
        or a.shape[2] != b.shape[1]
    ):
        raise ShapeError(f"bmm: requires (B,m,k)@(B,k,n), got {a.shape} vs {b.shape}")

    def bw(g):
        _accumulate(a, g @ b.values.transpose(0, 2, 1))
        _accumulate(b, a.values.transpose(0, 2, 1) @ g)

    return Tensor(a.values @ b.values, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"transpose: requires a 2-D tensor, got {a.shape}")

    def bw(g):
        _accumulate(a, g.T)

    return Tensor(a.values.T.copy(), (a,), bw)


def swap_last(a: Tensor) -> Tensor:
    """(B,m,n) -> (B,n,m)."""
    if a.values.ndim != 3:
        raise ShapeError(f"swap_last: requires a 3-D tensor, got {a.shape}")

    def bw(g):
        _accumulate(a, g.transpose(0, 2, 1))

    return Tensor(a.values.transpose(0, 2, 1).copy(), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.values.size:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}")

    def bw(g):
        _accumulate(a, g.reshape(a.shape))

    return Tensor(a.values.reshape(shape), (a,), bw)


def concat(parts, axis: int) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat: need at least one tensor")
    ndim = parts[0].values.ndim
    for p in parts[1:]:
        if p.values.ndim != ndim:
            raise ShapeError(f"concat: rank mismatch, {parts[0].shape} vs {p.shape}")
        for ax in range(ndim):
            if ax != axis and p.shape[ax] != parts[0].shape[ax]:
                raise ShapeError(f"concat: shapes differ off-axis, {parts[0].shape} vs {p.shape}")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        for p, piece in zip(parts, np.split(g, offsets, axis=axis)):
            _accumulate(p, piece)

    return Tensor(np.concatenate([p.values for p in parts], axis=axis), tuple(parts), bw)


def take(a: Tensor, index: int, axis: int) -> Tensor:
    """Select one slice along `axis`, dropping that axis."""
    if not 0 <= axis < a.values.ndim:
        raise ShapeError(f"take: axis {axis} out of range for shape {a.shape}")
    if not 0 <= index < a.shape[axis]:
        raise ShapeError(f"take: index {index} out of range for shape {a.shape}")
    sel = [slice(None)] * a.values.ndim
    sel[axis] = index
    sel = tuple(sel)

    def bw(g):
        full = np.zeros_like(a.values)
        full[sel] = g
        _accumulate(a, full)

    return Tensor(a.values[sel].copy(), (a,), bw)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: table (V,d), integer ids of any shape S -> (*S, d)."""
    ids = np.asarray(ids)
    if table.values.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValidationError("embedding: ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValidationError(
            f"embedding: id out of range [0, {table.shape[0]}), got min={ids.min()} max={ids.max()}"
        )

    def bw(g):
        contrib = np.zeros_like(table.values)
        np.add.at(contrib, ids.ravel(), g.reshape(-1, table.shape[1]))
        _accumulate(table, contrib)

    return Tensor(table.values[ids], (table,), bw)


# ---------------------------------------------------------------------------
# reductions and normalizations
# ---------------------------------------------------------------------------

def mean_axis(a: Tensor, axis: int) -> Tensor:
    if not 0 <= axis < a.values.ndim:
        raise ShapeError(f"mean_axis: axis {axis} out of range for shape {a.shape}")
    n = a.shape[axis]

    def bw(g):
        _accumulate(a, np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return Tensor(a.values.mean(axis=axis), (a,), bw)


def mean_all(a: Tensor) -> Tensor:
    n = a.values.size
    if n == 0:
        raise ShapeError("mean_all: empty tensor")

    def bw(g):
        _accumulate(a, np.full_like(a.values, float(g) / n))

    return Tensor(a.values.mean(), (a,), bw)


def softmax_last(a: Tensor) -> Tensor:
    """Softmax over the last axis. Combine with an additive MASK_NEG constant
    to suppress positions: exp(MASK_NEG - max) underflows to exactly 0."""
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        _accumulate(a, out * (g - dot))

    return Tensor(out, (a,), bw)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis of a (..., d); gain and bias are (d,)."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias must be ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = a.values.mean(axis=-1, keepdims=True)
    var = ((a.values - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.values - mu) * inv

    def bw(g):
        lead = tuple(range(a.values.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=lead))
        _accumulate(bias, g.sum(axis=lead))
        dxhat = g * gain.values
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accumulate(a, inv * (dxhat - m1 - xhat * m2))

    return Tensor(gain.values * xhat + bias.values, (a, gain, bias), bw)


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """a (..., d) + b (d,): the one place a vector is applied row-wise."""
    if b.values.ndim != 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: requires (...,d)+(d,), got {a.shape} vs {b.shape}")

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g.reshape(-1, b.shape[0]).sum(axis=0))

    return Tensor(a.values + b.values, (a, b), bw)


# ---------------------------------------------------------------------------
# backward pass and gradient verification
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, parameters: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for every parameter.

    Parameters not reachable from `loss` get an exact zero gradient. The walk
    visits nodes in reverse recording order, so accumulation order is fixed.
    """
    if loss.values.size != 1:
        raise GraphUsageError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.parents and loss.backward_fn is None:
        raise GraphUsageError("backward: no recorded forward pass for this tensor")

    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)

    out = {}
    for name, p in parameters.items():
        out[name] = p.grad.copy() if p.grad is not None else np.zeros_like(p.values)
    return out


@dataclass
class FiniteDiffReport:
    tolerance: float
    entries: list[tuple[str, float]] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e for _, e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def format(self) -> str:
        lines = [f"{'parameter':<32} {'max rel err':>12}"]
        for name, err in self.entries:
            lines.append(f"{name:<32} {err:>12.3e}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: max {self.max_rel_err:.3e} vs tolerance {self.tolerance:.1e}")
        return "\n".join(lines)


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a-n| / max(1, |a|, |n|): relative above unit scale, absolute below."""
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def finite_diff_check(
    loss_fn,
    parameters: dict[str, Tensor],
    tolerance: float = 1e-4,
    rel_step: float = 1e-5,
    inject_error: float = 0.0,
) -> FiniteDiffReport:
    """Compare backward() gradients of loss_fn() against central differences.

    loss_fn must rebuild its graph from `parameters` on every call and be
    deterministic. Steps are rel_step * max(1, |theta|) per element.
    `inject_error` adds a constant to every analytic gradient: a self-test
    hook that must make the check fail.
    """
    n_params = sum(p.values.size for p in parameters.values())
    if n_params > 10_000:
        raise ValidationError(
            f"finite_diff_check: {n_params} parameters exceeds the 10^4 tractability bound"
        )

    loss = loss_fn()
    if not np.isfinite(loss.values).all():
        raise ValidationError("finite_diff_check: loss is non-finite at the base point")
    grads = backward(loss, parameters)

    report = FiniteDiffReport(tolerance=tolerance)
    for name in sorted(parameters):
        p = parameters[name]
        flat = p.values.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            h = rel_step * max(1.0, abs(orig))
            flat[i] = orig + h
            with no_grad():
                up = loss_fn().item()
            flat[i] = orig - h
            with no_grad():
                down = loss_fn().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise ValidationError(
                    f"finite_diff_check: non-finite loss perturbing '{name}'[{i}] by +-{h:g}"
                )
            numeric[i] = (up - down) / (2.0 * h)
        analytic = grads[name].reshape(-1) + inject_error
        report.entries.append((name, rel_error(analytic, numeric)))
    return report
