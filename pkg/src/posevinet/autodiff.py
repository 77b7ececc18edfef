"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed inside ``with Tape() as tape:`` are recorded in
execution order whenever one of their inputs requires a gradient.
``tape.backward(loss)`` then replays the records in reverse, so every
record is visited after all of its consumers. Outside a tape the same
functions run as plain numpy forward passes.

Only the broadcasting the transformer needs is supported: bias vectors and
weight matrices broadcast across leading batch axes.
"""
from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import special

from .errors import ContractError
from .rng import Rng

LAYERNORM_EPS = 1e-5
PROB_FLOOR = 1e-12


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_softmax_of")

    def __init__(self, data, requires_grad: bool = False):
        data = np.array(data, dtype=np.float64)
        if data.ndim and 0 in data.shape:
            raise ContractError(f"tensor extents must be positive, got {data.shape}")
        if not np.isfinite(data).all():
            raise ContractError("tensor contains NaN or Inf")
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._softmax_of = None

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
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "active_tape", default=None)


@dataclass
class Tape:
    records: list[_Record] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], grad_fn) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append(_Record(out, tuple(inputs), grad_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor that needs it."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    if not any(rec.out is loss for rec in tape.records):
        raise ContractError("loss was not produced on this tape")
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(tape.records):
        if rec.out.grad is None:
            continue
        grads = rec.grad_fn(rec.out.grad)
        for inp, g in zip(rec.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = np.array(g, dtype=np.float64).reshape(inp.shape)
            else:
                inp.grad = inp.grad + g


# -- elementwise and structural ops ------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _record(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError("matmul operands need at least two axes")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(a.data @ b.data, (a, b), grad_fn)


def reshape(a: Tensor, shape) -> Tensor:
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a: Tensor, index) -> Tensor:
    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _record(a.data[index], (a,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                   lambda g: tuple(np.split(g, bounds, axis=axis)))


def tensor_sum(a: Tensor) -> Tensor:
    return _record(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _record(a.data.mean(), (a,), lambda g: (np.full(a.shape, g / n),))


# -- nonlinearities and normalization ----------------------------------------

def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    out = _record(y, (x,), grad_fn)
    out._softmax_of = x
    return out


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return special.ndtr(x) + x * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """x * Phi(x) with the exact normal CDF."""
    return _record(x.data * special.ndtr(x.data), (x,),
                   lambda g: (g * _gelu_grad(x.data),))


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalize the last axis with population variance, then scale and shift."""
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ContractError(f"layernorm gain/bias must have shape ({n},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def grad_fn(g):
        gx = g * gain.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _record(xhat * gain.data + bias.data, (x, gain, bias), grad_fn)


def dropout(x: Tensor, rate: float, training: bool, rng: Rng | None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) while training."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record(x.data * mask, (x,), lambda g: (g * mask,))


def cross_entropy(probabilities: Tensor, targets, fused: bool = True) -> Tensor:
    """Mean negative log-likelihood of one-hot targets.

    When ``probabilities`` came from :func:`softmax` and ``fused`` is set,
    the gradient goes straight to the logits as (p - t) / batch.
    """
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=np.float64)
    p = probabilities.data
    if p.ndim != 2 or t.shape != p.shape:
        raise ContractError(f"expected matching [batch, k] inputs, got {p.shape} and {t.shape}")
    if not (np.isin(t, (0.0, 1.0)).all() and (t.sum(axis=1) == 1.0).all()):
        raise ContractError("every target row must be one-hot")
    if np.abs(p.sum(axis=1) - 1.0).max() > 1e-6:
        raise ContractError("probability rows must sum to 1")
    batch = p.shape[0]
    clamped = np.maximum(p, PROB_FLOOR)
    loss = -np.log((clamped * t).sum(axis=1)).mean()

    logits = probabilities._softmax_of
    if fused and logits is not None:
        return _record(loss, (logits,), lambda g: (g * (p - t) / batch,))

    def grad_fn(g):
        return (np.where(p > PROB_FLOOR, -t / clamped, 0.0) * g / batch,)

    return _record(loss, (probabilities,), grad_fn)


# -- gradient checking --------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.errors.values())

    def lines(self) -> list[str]:
        return [f"{name}: max_rel_err={err:.3e} {'ok' if err < self.tol else 'FAIL'}"
                for name, err in self.errors.items()]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def finite_diff_check(f: Callable[[], Tensor], params: Mapping[str, Tensor] | Sequence[Tensor],
                      h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients of the scalar ``f()`` with central differences.

    ``f`` must read the current values of ``params`` and be deterministic.
    Parameter data is perturbed in place and restored afterwards.
    """
    if not isinstance(params, Mapping):
        params = {f"param{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        loss = f()
    tape.backward(loss)

    errors = {}
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.empty_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        errors[name] = float(relative_error(analytic, numeric).max())
    return GradCheckReport(errors, tol)
