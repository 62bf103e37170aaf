"""Minimal reverse-mode automatic differentiation over dense float32 tensors.

The engine is a classic Wengert list: ops executed while a :class:`Tape` is
active append a backward closure, and ``backward`` replays the closures in
exact reverse execution order. Only the operations the feature-synthesis
networks need are provided; tensors are rank 0, 1 or 2.

Every op validates its output for NaN/Inf and raises ``NonFiniteError``
instead of letting bad values propagate.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    BatchError,
    GradientContractError,
    LabelError,
    NonFiniteError,
    ParameterError,
    ShapeError,
)

DTYPE = np.float32

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "tape_stack", None)
    if stack is None:
        stack = []
        _state.tape_stack = stack
    return stack


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _active_tape() -> Optional["Tape"]:
    if not _grad_enabled():
        return None
    stack = _tape_stack()
    return stack[-1] if stack else None


class no_grad:
    """Context manager that suspends tape recording entirely."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


def _ensure_finite(data: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {where}")


class Rng:
    """Deterministic PRNG: identical seed and call sequence give identical
    streams on every platform (PCG64 underneath)."""

    def __init__(self, seed: int):
        if not isinstance(seed, (int, np.integer)) or seed < 0 or seed >= 2**64:
            raise ParameterError(f"seed must be an integer in [0, 2**64), got {seed!r}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return (self._gen.standard_normal(shape) * std).astype(DTYPE)

    def uniform(self, shape) -> np.ndarray:
        return self._gen.random(shape)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, values, k: int) -> np.ndarray:
        """k items drawn uniformly without replacement."""
        return self._gen.choice(np.asarray(values), size=k, replace=False)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self) -> "Rng":
        """Derive an independent child stream; deterministic per parent state."""
        return Rng(int(self._gen.integers(0, 2**63)))

    def clone(self) -> "Rng":
        """Copy of this generator at its current state."""
        c = Rng(self.seed)
        c._gen.bit_generator.state = self._gen.bit_generator.state
        return c


class Tensor:
    """Dense rank-<=2 float32 array with an optional gradient slot.

    ``grad`` is populated by replaying a tape; accumulation is additive, so
    callers zero it between independent backward passes.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim > 2:
            raise ShapeError(f"tensors are rank <= 2, got shape {arr.shape}")
        _ensure_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        # Internal: data already validated by the producing op.
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed ops and their backward rules.

    Use as a context manager; ops executed inside append their backward
    closures, and :meth:`backward` replays them in reverse order. A tape is
    consumed by ``backward`` and can be reused afterwards.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        assert stack and stack[-1] is self, "tapes must be exited in LIFO order"
        stack.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every requires-grad ancestor of ``loss``."""
        if loss.data.size != 1:
            raise GradientContractError(
                f"backward needs a scalar loss, got shape {loss.shape}"
            )
        if not any(out is loss for out, _ in self._records):
            raise GradientContractError("loss was not produced on this tape")
        loss.grad = np.ones_like(loss.data)
        for out, rule in reversed(self._records):
            if out.grad is not None:
                rule(out.grad)
        self._records.clear()


def backward(loss: Tensor, tape: Tape) -> None:
    """Replay ``tape`` in reverse, accumulating gradients from ``loss``."""
    tape.backward(loss)


def _emit(data: np.ndarray, where: str, inputs: Sequence[Tensor], rule_factory) -> Tensor:
    """Validate an op output, and record its backward rule if taping.

    Whether an input participates in the graph is decided here, at execution
    time: a tensor frozen during the forward pass receives no gradient even
    if it is unfrozen again before ``backward`` runs.
    """
    _ensure_finite(data, where)
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, track)
    if track:
        rule = rule_factory(out)
        inputs = tuple(inputs)
        flags = tuple(t.requires_grad for t in inputs)

        def replay(g, _rule=rule, _inputs=inputs, _flags=flags):
            current = [t.requires_grad for t in _inputs]
            for t, f in zip(_inputs, _flags):
                t.requires_grad = f
            try:
                _rule(g)
            finally:
                for t, f in zip(_inputs, current):
                    t.requires_grad = f

        tape._records.append((out, replay))
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=DTYPE)
    _ensure_finite(g, "gradient accumulation")
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    # Undo the single supported broadcast: row vector over matrix rows.
    if g.shape == shape:
        return g
    return g.sum(axis=0).reshape(shape)


def _check_broadcastable(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors with agreeing inner dimensions."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def rules(out):
        def rule(g):
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
        return rule

    return _emit(data, "matmul", (a, b), rules)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a rank-1 ``b`` broadcasts over the rows of ``a``."""
    _check_broadcastable(a, b, "add")
    data = a.data + b.data

    def rules(out):
        def rule(g):
            _accum(a, g)
            _accum(b, _reduce_to(g, b.shape))
        return rule

    return _emit(data, "add", (a, b), rules)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """``a - b`` with the same broadcast rule as :func:`add`."""
    _check_broadcastable(a, b, "sub")
    data = a.data - b.data

    def rules(out):
        def rule(g):
            _accum(a, g)
            _accum(b, -_reduce_to(g, b.shape))
        return rule

    return _emit(data, "sub", (a, b), rules)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; a rank-1 ``b`` broadcasts over rows of ``a``."""
    _check_broadcastable(a, b, "mul")
    data = a.data * b.data

    def rules(out):
        def rule(g):
            _accum(a, g * b.data)
            _accum(b, _reduce_to(g * a.data, b.shape))
        return rule

    return _emit(data, "mul", (a, b), rules)


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar."""
    s = float(s)
    data = a.data * DTYPE(s)

    def rules(out):
        def rule(g):
            _accum(a, g * DTYPE(s))
        return rule

    return _emit(data, "scale", (a,), rules)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two rank-2 tensors along columns."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(
            f"concat_cols needs rank-2 operands with equal rows, got {a.shape} and {b.shape}"
        )
    data = np.concatenate([a.data, b.data], axis=1)
    split = a.shape[1]

    def rules(out):
        def rule(g):
            _accum(a, g[:, :split])
            _accum(b, g[:, split:])
        return rule

    return _emit(data, "concat_cols", (a, b), rules)


def sum_all(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    data = np.asarray(a.data.sum(), dtype=DTYPE)

    def rules(out):
        def rule(g):
            _accum(a, np.full(a.shape, g.reshape(()), dtype=DTYPE))
        return rule

    return _emit(data, "sum_all", (a,), rules)


def mean_all(a: Tensor) -> Tensor:
    """Mean of all entries, as a scalar tensor."""
    if a.size == 0:
        raise BatchError("mean_all of an empty tensor")
    data = np.asarray(a.data.mean(), dtype=DTYPE)
    inv = DTYPE(1.0 / a.size)

    def rules(out):
        def rule(g):
            _accum(a, np.full(a.shape, g.reshape(()) * inv, dtype=DTYPE))
        return rule

    return _emit(data, "mean_all", (a,), rules)


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    """Elementwise max(x, slope*x); the subgradient at 0 takes the identity
    branch, fixed for determinism."""
    if not 0.0 < slope < 1.0:
        raise ParameterError(f"leaky_relu slope must be in (0, 1), got {slope}")
    mask = x.data >= 0
    data = np.where(mask, x.data, x.data * DTYPE(slope))

    def rules(out):
        def rule(g):
            _accum(x, _leaky_relu_bwd(g, mask, slope))
        return rule

    return _emit(data, "leaky_relu", (x,), rules)


def _leaky_relu_bwd(g: np.ndarray, mask: np.ndarray, slope: float) -> np.ndarray:
    return np.where(mask, g, g * DTYPE(slope))


def dropout(x: Tensor, p: float, training: bool, rng: Rng) -> Tensor:
    """Inverted dropout: zero entries with probability p and scale survivors
    by 1/(1-p). Identity when not training."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.uniform(x.shape) >= p).astype(DTYPE) / DTYPE(1.0 - p)
    data = x.data * keep

    def rules(out):
        def rule(g):
            _accum(x, g * keep)
        return rule

    return _emit(data, "dropout", (x,), rules)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-feature standardization over the current batch, then affine.

    No running statistics are kept: the batch at hand always defines the
    normalization, which is why a batch of at least 2 rows is required.
    """
    if x.ndim != 2:
        raise ShapeError(f"batchnorm input must be rank 2, got {x.shape}")
    b, f = x.shape
    if b < 2:
        raise BatchError(f"batchnorm needs a batch of >= 2 rows, got {b}")
    if gamma.shape != (f,) or beta.shape != (f,):
        raise ShapeError(
            f"batchnorm affine parameters must have shape ({f},), "
            f"got gamma {gamma.shape} and beta {beta.shape}"
        )
    mu = x.data.mean(axis=0)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=0)
    inv_std = 1.0 / np.sqrt(var + DTYPE(eps))
    xhat = centered * inv_std
    data = xhat * gamma.data + beta.data

    def rules(out):
        def rule(g):
            _accum(beta, g.sum(axis=0))
            _accum(gamma, (g * xhat).sum(axis=0))
            if x.requires_grad:
                dxhat = g * gamma.data
                # d/dx of (x - mu(x)) / sqrt(var(x) + eps), batch statistics included
                dx = (
                    dxhat
                    - dxhat.mean(axis=0)
                    - xhat * np.mean(dxhat * xhat, axis=0)
                ) * inv_std
                _accum(x, dx)
        return rule

    return _emit(data, "batchnorm", (x, gamma, beta), rules)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-softmax of the true class, stabilized by
    max-subtraction. Labels are class indices into the logit columns."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be rank 2, got {logits.shape}")
    b, k = logits.shape
    if b < 1:
        raise BatchError("softmax_cross_entropy needs at least one row")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise ShapeError(f"expected {b} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise LabelError(f"label {bad} outside [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    rows = np.arange(b)
    data = np.asarray(-log_probs[rows, labels].mean(), dtype=DTYPE)

    def rules(out):
        def rule(g):
            p = exp / total
            p[rows, labels] -= 1.0
            _accum(logits, p * (g.reshape(()) / DTYPE(b)))
        return rule

    return _emit(data, "softmax_cross_entropy", (logits,), rules)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array (no tape involvement)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def gaussian_sample(rng: Rng, n: int, dim: int, std: float) -> Tensor:
    """n x dim tensor of i.i.d. N(0, std^2) draws; deterministic per rng state."""
    if std <= 0:
        raise ParameterError(f"gaussian_sample std must be > 0, got {std}")
    if n < 1 or dim < 1:
        raise ParameterError(f"gaussian_sample needs n, dim >= 1, got {n}x{dim}")
    return Tensor._wrap(rng.normal((n, dim), std), False)
