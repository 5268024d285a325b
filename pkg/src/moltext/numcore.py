"""Minimal reverse-mode autodiff over dense float64 matrices.

Everything on the tape is a 2-D array; vectors are stored as 1 x n rows.
A :class:`Tensor` wraps the ndarray together with an accumulated gradient
and a backward closure.  Ops link result tensors to their parents, and
``backward`` walks the graph once in reverse topological order, so each
node's closure runs exactly once per call.

The op set is deliberately small: matmul, transpose, add, bias add,
scalar scale, relu, row-wise softmax (with optional additive mask),
row/column concat, row gather, layer norm, and the padding-masked
cross-entropy used for training.  Shapes must match exactly; there is no
general broadcasting and no higher-rank support.

All public ops reject non-finite results so a NaN surfaces at the op that
produced it rather than three modules later.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "GradCheckReport",
    "matmul",
    "linear",
    "transpose",
    "add",
    "add_bias",
    "scale",
    "relu",
    "softmax",
    "softmax_rows",
    "concat_rows",
    "concat_cols",
    "gather_rows",
    "layer_norm_rows",
    "cross_entropy_rows",
    "sum_of_squares",
    "backward",
    "zero_grad",
    "init_uniform",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or infinity."""


def _as_2d(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {arr.shape}")
    return arr


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    return arr


class Tensor:
    """A 2-D float64 array plus tape bookkeeping.

    ``grad`` is lazily allocated by ``backward``; leaf tensors created with
    ``requires_grad=True`` are the trainable parameters.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_2d(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], bwd, op: str) -> Tensor:
    out = Tensor(_check_finite(data, op))
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = bwd
    return out


# ---------------------------------------------------------------- primitives


def matmul(a, b) -> Tensor:
    """Matrix product ``a @ b``."""
    a, b = _coerce(a), _coerce(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _node(out_data, (a, b), bwd, "matmul")


def linear(x, w) -> Tensor:
    """Affine-free linear map ``y = x @ w`` (alias of matmul for readability)."""
    return matmul(x, w)


def transpose(x) -> Tensor:
    x = _coerce(x)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g.T)

    return _node(x.data.T.copy(), (x,), bwd, "transpose")


def add(a, b) -> Tensor:
    """Elementwise sum of two same-shape matrices."""
    a, b = _coerce(a), _coerce(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ: {a.shape} vs {b.shape}")

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _node(a.data + b.data, (a, b), bwd, "add")


def add_bias(x, bias) -> Tensor:
    """Add a 1 x n bias row to every row of ``x``."""
    x, bias = _coerce(x), _coerce(bias)
    if bias.shape[0] != 1 or bias.shape[1] != x.shape[1]:
        raise ShapeError(f"add_bias: bias {bias.shape} does not fit rows of {x.shape}")

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g)
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0, keepdims=True))

    return _node(x.data + bias.data, (x, bias), bwd, "add_bias")


def scale(x, c: float) -> Tensor:
    x = _coerce(x)
    c = float(c)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g * c)

    return _node(x.data * c, (x,), bwd, "scale")


def relu(x) -> Tensor:
    x = _coerce(x)
    mask = x.data > 0.0

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g * mask)

    return _node(np.where(mask, x.data, 0.0), (x,), bwd, "relu")


def _softmax_kernel(z: np.ndarray) -> np.ndarray:
    # Shift by the row max so exp never overflows; the result is unchanged.
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax(v: np.ndarray) -> np.ndarray:
    """Probability vector for a plain 1-D array (not a tape op)."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"softmax expects a 1-D vector, got shape {v.shape}")
    return _check_finite(_softmax_kernel(v[None, :])[0], "softmax")


def softmax_rows(x, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax; ``mask`` is an additive constant (0 or a large
    negative number per entry) applied before normalization."""
    x = _coerce(x)
    z = x.data if mask is None else x.data + mask
    y = _softmax_kernel(z)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            dot = (g * y).sum(axis=1, keepdims=True)
            x._accumulate(y * (g - dot))

    return _node(y, (x,), bwd, "softmax_rows")


def concat_rows(parts: Sequence) -> Tensor:
    """Stack matrices with equal column counts on top of each other."""
    ts = [_coerce(p) for p in parts]
    if not ts:
        raise ShapeError("concat_rows: empty part list")
    cols = ts[0].shape[1]
    for t in ts[1:]:
        if t.shape[1] != cols:
            raise ShapeError(f"concat_rows: column counts differ: {cols} vs {t.shape[1]}")
    boundaries = np.cumsum([0] + [t.shape[0] for t in ts])

    def bwd(g: np.ndarray) -> None:
        for t, lo, hi in zip(ts, boundaries[:-1], boundaries[1:]):
            if t.requires_grad:
                t._accumulate(g[lo:hi, :])

    return _node(np.concatenate([t.data for t in ts], axis=0), tuple(ts), bwd, "concat_rows")


def concat_cols(parts: Sequence) -> Tensor:
    """Concatenate matrices with equal row counts side by side."""
    ts = [_coerce(p) for p in parts]
    if not ts:
        raise ShapeError("concat_cols: empty part list")
    rows = ts[0].shape[0]
    for t in ts[1:]:
        if t.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts differ: {rows} vs {t.shape[0]}")
    boundaries = np.cumsum([0] + [t.shape[1] for t in ts])

    def bwd(g: np.ndarray) -> None:
        for t, lo, hi in zip(ts, boundaries[:-1], boundaries[1:]):
            if t.requires_grad:
                t._accumulate(g[:, lo:hi])

    return _node(np.concatenate([t.data for t in ts], axis=1), tuple(ts), bwd, "concat_cols")


def gather_rows(table, indices: Sequence[int]) -> Tensor:
    """Select rows of ``table`` by index (embedding lookup)."""
    table = _coerce(table)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: indices must be 1-D, got shape {idx.shape}")
    if idx.size == 0:
        raise ShapeError("gather_rows: empty index list")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise IndexError(
            f"gather_rows: index out of range for table with {table.shape[0]} rows"
        )

    def bwd(g: np.ndarray) -> None:
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, idx, g)
            table._accumulate(acc)

    return _node(table.data[idx], (table,), bwd, "gather_rows")


def layer_norm_rows(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Per-row layer normalization with learnable 1 x d gain and bias."""
    x, gain, bias = _coerce(x), _coerce(gain), _coerce(bias)
    d = x.shape[1]
    if gain.shape != (1, d) or bias.shape != (1, d):
        raise ShapeError(
            f"layer_norm_rows: gain {gain.shape} / bias {bias.shape} do not fit {x.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std

    def bwd(g: np.ndarray) -> None:
        if gain.requires_grad:
            gain._accumulate((g * xhat).sum(axis=0, keepdims=True))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0, keepdims=True))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=1, keepdims=True)
            m2 = (gx * xhat).mean(axis=1, keepdims=True)
            x._accumulate(inv_std * (gx - m1 - xhat * m2))

    return _node(xhat * gain.data + bias.data, (x, gain, bias), bwd, "layer_norm_rows")


def cross_entropy_rows(logits, targets: Sequence[int], pad_id: int) -> Tensor:
    """Mean negative log-likelihood over non-padding positions.

    ``logits`` is t x C, ``targets`` is a length-t id sequence; rows whose
    target equals ``pad_id`` contribute nothing to the mean.
    """
    logits = _coerce(logits)
    tgt = np.asarray(targets, dtype=np.intp)
    if tgt.ndim != 1 or tgt.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross_entropy_rows: {logits.shape[0]} logit rows vs {tgt.shape} targets"
        )
    in_range = tgt[tgt != pad_id]
    if in_range.size and (in_range.min() < 0 or in_range.max() >= logits.shape[1]):
        raise IndexError("cross_entropy_rows: target id out of vocabulary range")
    valid = tgt != pad_id
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("cross_entropy_rows: every position is padding")

    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    log_z = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    log_p = z - log_z
    picked = log_p[np.arange(tgt.size), np.where(valid, tgt, 0)]
    loss = -(picked * valid).sum() / n_valid

    def bwd(g: np.ndarray) -> None:
        if logits.requires_grad:
            probs = np.exp(log_p)
            probs[np.arange(tgt.size), np.where(valid, tgt, 0)] -= 1.0
            probs *= valid[:, None] / n_valid
            logits._accumulate(probs * g[0, 0])

    return _node(np.array([[loss]]), (logits,), bwd, "cross_entropy_rows")


def sum_of_squares(x) -> Tensor:
    """Scalar ``sum(x ** 2)``, handy as a synthetic loss in gradient checks."""
    x = _coerce(x)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(2.0 * x.data * g[0, 0])

    return _node(np.array([[float((x.data**2).sum())]]), (x,), bwd, "sum_of_squares")


# ------------------------------------------------------------------ backward


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a 1 x 1 loss tensor."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward expects a scalar 1 x 1 tensor, got {loss.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    loss._accumulate(grads[id(loss)])
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ------------------------------------------------------------ initialization


def init_uniform(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out))."""
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


# -------------------------------------------------------------- grad checking


@dataclass
class GradCheckReport:
    """Worst relative error overall plus a per-parameter breakdown."""

    max_rel_err: float
    per_param: dict[str, float] = field(default_factory=dict)
    coords_checked: dict[str, int] = field(default_factory=dict)


def grad_check(
    build_loss: Callable[[], Tensor],
    params: dict[str, Tensor],
    *,
    samples_per_param: int = 100,
    eps: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients against central finite differences.

    ``build_loss`` must rebuild the whole graph from the current parameter
    values on every call.  For each parameter, up to ``samples_per_param``
    coordinates are sampled without replacement (all of them if the block is
    small).  Relative error is |ga - gn| / (|ga| + |gn| + 1e-12).
    """
    rng = np.random.default_rng(seed)
    zero_grad(params.values())
    loss = build_loss()
    backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    report = GradCheckReport(max_rel_err=0.0)
    for name, p in params.items():
        size = p.data.size
        n = min(samples_per_param, size)
        flat_idx = rng.choice(size, size=n, replace=False)
        worst = 0.0
        flat = p.data.reshape(-1)
        for k in flat_idx:
            orig = flat[k]
            flat[k] = orig + eps
            up = build_loss().data[0, 0]
            flat[k] = orig - eps
            down = build_loss().data[0, 0]
            flat[k] = orig
            g_num = (up - down) / (2.0 * eps)
            g_ana = analytic[name].reshape(-1)[k]
            rel = abs(g_ana - g_num) / (abs(g_ana) + abs(g_num) + 1e-12)
            worst = max(worst, rel)
        report.per_param[name] = worst
        report.coords_checked[name] = n
        report.max_rel_err = max(report.max_rel_err, worst)
    return report
