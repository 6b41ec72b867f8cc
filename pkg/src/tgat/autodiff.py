"""Minimal dense reverse-mode automatic differentiation engine.

Tensors wrap float64 numpy buffers of rank <= 2. Operations compute their
forward value eagerly and, when a tape is active and any input requires a
gradient, record a pull-back closure on that tape. The tape is rebuilt for
every forward pass (define-by-run); ``backward`` replays it in reverse and
accumulates gradients additively, so a tensor used twice receives the sum
of both path gradients.

Design choices: double precision everywhere (finite-difference checks need
the headroom), ReLU derivative at exactly 0 is 0, and broadcasting is
limited to row/column vectors against matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

GradFn = Callable[[np.ndarray], None]


class Tensor:
    """Dense float64 array (rank <= 2) that can take part in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > 2:
            raise DimensionError(f"rank-{arr.ndim} tensor not supported (shape {arr.shape})")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, delta: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += delta

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


class Tape:
    """Append-only record of one forward pass, replayed in reverse by ``backward``."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, GradFn]] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _ACTIVE.pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)


_ACTIVE: list[Tape] = []


def apply_op(out_data: np.ndarray, inputs: Sequence[Tensor], pull: GradFn) -> Tensor:
    """Create the output tensor of an operation and record its backward rule.

    ``pull`` receives the upstream gradient of the output and must accumulate
    into the inputs via ``Tensor._accumulate``. This is the extension point
    every operator below goes through; test fixtures use it to inject
    deliberately wrong rules when exercising ``grad_check``.
    """
    out = Tensor(out_data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        if _ACTIVE:
            _ACTIVE[-1]._nodes.append((out, pull))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``grad`` for every tensor reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    loss._accumulate(np.ones_like(loss.data))
    for out, pull in reversed(tape._nodes):
        if out.grad is not None:
            pull(out.grad)


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def _require_2d(*tensors: Tensor) -> None:
    for t in tensors:
        if t.data.ndim != 2:
            raise DimensionError(f"expected a matrix, got shape {t.data.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_2d(a, b)
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shapes {a.data.shape} x {b.data.shape} do not chain")
    a_data, b_data = a.data, b.data

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g @ b_data.T)
        if b.requires_grad:
            b._accumulate(a_data.T @ g)

    return apply_op(a_data @ b_data, (a, b), pull)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True)


def _broadcast_pair(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    if a.data.shape == b.data.shape:
        return a.data.shape
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"{op} shapes {a.data.shape} and {b.data.shape} do not match")
    try:
        out_shape = np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise DimensionError(f"{op} shapes {a.data.shape} and {b.data.shape} do not match") from None
    # only row/column vector broadcasting is supported
    for t in (a, b):
        if t.data.shape != out_shape and 1 not in t.data.shape:
            raise DimensionError(f"{op} shapes {a.data.shape} and {b.data.shape} do not match")
    return out_shape


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_pair(a, b, "add")

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return apply_op(a.data + b.data, (a, b), pull)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(c * g)

    return apply_op(c * a.data, (a,), pull)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product (same broadcasting rules as add)."""
    _broadcast_pair(a, b, "mul")
    a_data, b_data = a.data, b.data

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b_data, a_data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a_data, b_data.shape))

    return apply_op(a_data * b_data, (a, b), pull)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("concat_rows of an empty sequence")
    _require_2d(*parts)
    cols = parts[0].data.shape[1]
    for p in parts[1:]:
        if p.data.shape[1] != cols:
            raise DimensionError(
                f"concat_rows column mismatch: {parts[0].data.shape} vs {p.data.shape}")
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def pull(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[lo:hi])

    return apply_op(np.concatenate([p.data for p in parts], axis=0), tuple(parts), pull)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("concat_cols of an empty sequence")
    _require_2d(*parts)
    rows = parts[0].data.shape[0]
    for p in parts[1:]:
        if p.data.shape[0] != rows:
            raise DimensionError(
                f"concat_cols row mismatch: {parts[0].data.shape} vs {p.data.shape}")
    offsets = np.cumsum([0] + [p.data.shape[1] for p in parts])

    def pull(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[:, lo:hi])

    return apply_op(np.concatenate([p.data for p in parts], axis=1), tuple(parts), pull)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    _require_2d(a)
    if not (0 <= start < stop <= a.data.shape[0]):
        raise DimensionError(f"row slice [{start}:{stop}] outside shape {a.data.shape}")

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[start:stop] = g
            a._accumulate(full)

    return apply_op(a.data[start:stop].copy(), (a,), pull)


def transpose(a: Tensor) -> Tensor:
    _require_2d(a)

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g.T)

    return apply_op(a.data.T.copy(), (a,), pull)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # derivative at exactly 0 is 0

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * mask)

    return apply_op(np.where(mask, a.data, 0.0), (a,), pull)


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function on a raw array."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = sigmoid_values(a.data)

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * y * (1.0 - y))

    return apply_op(y, (a,), pull)


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) computed without overflow; backward is sigmoid(-x)."""
    y = -np.logaddexp(0.0, -a.data)
    s = sigmoid_values(a.data)

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * (1.0 - s))

    return apply_op(y, (a,), pull)


def softmax_rows(a: Tensor) -> Tensor:
    _require_2d(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            inner = (g * y).sum(axis=1, keepdims=True)
            a._accumulate(y * (g - inner))

    return apply_op(y, (a,), pull)


def sum_rows(a: Tensor) -> Tensor:
    """Sum over rows, producing a single row vector."""
    _require_2d(a)
    n_rows = a.data.shape[0]

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(np.repeat(g, n_rows, axis=0))

    return apply_op(a.data.sum(axis=0, keepdims=True), (a,), pull)


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(np.full(shape, g.flat[0]))

    return apply_op(np.array([[a.data.sum()]]), (a,), pull)


def cos(a: Tensor) -> Tensor:
    x = a.data

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(-g * np.sin(x))

    return apply_op(np.cos(x), (a,), pull)


def sin(a: Tensor) -> Tensor:
    x = a.data

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * np.cos(x))

    return apply_op(np.sin(x), (a,), pull)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    passed: bool
    checked_coords: int
    worst_param: int = -1


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    tolerance: float = 1e-4,
    rng_seed: int = 0,
    step: float = 1e-5,
    max_coords_per_param: int | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` must be deterministic given ``params`` and return a tensor; a
    non-scalar output is reduced with ``sum_all`` before differentiation.
    Coordinates are subsampled per parameter when ``max_coords_per_param``
    is set; relative error uses ``|a - n| / max(|a| + |n|, 1e-6)``.
    """
    rng = np.random.default_rng(rng_seed)
    zero_grads(params)
    with Tape() as tape:
        out = f()
        loss = out if out.data.size == 1 else sum_all(out)
    backward(tape, loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def value() -> float:
        return float(f().data.sum())

    max_rel = 0.0
    worst = -1
    checked = 0
    for pi, p in enumerate(params):
        n_coords = p.data.size
        if max_coords_per_param is not None and n_coords > max_coords_per_param:
            coords = rng.choice(n_coords, size=max_coords_per_param, replace=False)
        else:
            coords = np.arange(n_coords)
        for c in coords:
            idx = np.unravel_index(c, p.data.shape)
            orig = p.data[idx]
            p.data[idx] = orig + step
            f_plus = value()
            p.data[idx] = orig - step
            f_minus = value()
            p.data[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic[pi].reshape(-1)[c]
            rel = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-6)
            checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = pi
    return GradCheckReport(
        max_rel_error=max_rel,
        tolerance=tolerance,
        passed=max_rel < tolerance,
        checked_coords=checked,
        worst_param=worst,
    )
