"""Minimal fp64 tensor engine with reverse-mode automatic differentiation.

Everything downstream (layers, heads, training) is expressed through the
Tensor class below.  Forward values are checked for finiteness on creation,
so NaN/Inf never propagates silently.  The graph is recorded implicitly:
each op output keeps handles to its inputs plus a backward closure, and
``backward`` replays them once in reverse topological order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

MASK_FILL = -1e30


def _check_finite(arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError("non-finite value produced in forward pass")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents = ()
        self._backward = None

    # -- graph plumbing ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += _unbroadcast(np.asarray(g, dtype=np.float64), self.data.shape)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        # iterative topological sort; graphs from long sequences get deep
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    @staticmethod
    def _op(data, parents, backward):
        req = any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=req)
        if req:
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- elementwise ------------------------------------------------------

    @staticmethod
    def _coerce(x):
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    def _binary_shape(self, other):
        try:
            return np.broadcast_shapes(self.data.shape, other.data.shape)
        except ValueError:
            raise ValueError(
                f"shapes {self.data.shape} and {other.data.shape} are not "
                f"broadcast-compatible"
            ) from None

    def __add__(self, other):
        other = Tensor._coerce(other)
        self._binary_shape(other)
        out_data = self.data + other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(g)
            if other.requires_grad:
                other._accum(g)

        return Tensor._op(out_data, (self, other), bwd)

    __radd__ = __add__

    def __sub__(self, other):
        other = Tensor._coerce(other)
        self._binary_shape(other)
        out_data = self.data - other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(g)
            if other.requires_grad:
                other._accum(-g)

        return Tensor._op(out_data, (self, other), bwd)

    def __mul__(self, other):
        other = Tensor._coerce(other)
        self._binary_shape(other)
        out_data = self.data * other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(g * other.data)
            if other.requires_grad:
                other._accum(g * self.data)

        return Tensor._op(out_data, (self, other), bwd)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def sigmoid(self):
        x = self.data
        out_data = np.empty_like(x)
        pos = x >= 0
        out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out_data[~pos] = ex / (1.0 + ex)

        def bwd(g):
            self._accum(g * out_data * (1.0 - out_data))

        return Tensor._op(out_data, (self,), bwd)

    def tanh(self):
        out_data = np.tanh(self.data)

        def bwd(g):
            self._accum(g * (1.0 - out_data * out_data))

        return Tensor._op(out_data, (self,), bwd)

    def relu(self):
        out_data = np.maximum(self.data, 0.0)
        mask = self.data > 0

        def bwd(g):
            self._accum(g * mask)

        return Tensor._op(out_data, (self,), bwd)

    # -- shape ops --------------------------------------------------------

    def __getitem__(self, idx):
        out_data = self.data[idx]

        def bwd(g):
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            np.add.at(self.grad, idx, g)

        return Tensor._op(np.array(out_data, copy=True), (self,), bwd)

    def reshape(self, *shape):
        out_data = self.data.reshape(*shape)
        orig = self.data.shape

        def bwd(g):
            self._accum(g.reshape(orig))

        return Tensor._op(out_data, (self,), bwd)

    def transpose(self):
        if self.data.ndim != 2:
            raise ValueError(f"transpose expects rank-2, got shape {self.data.shape}")
        out_data = self.data.T.copy()

        def bwd(g):
            self._accum(g.T)

        return Tensor._op(out_data, (self,), bwd)

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accum(np.broadcast_to(gg, self.data.shape))

        return Tensor._op(out_data, (self,), bwd)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis):
        out_data = self.data.max(axis=axis)
        expanded = np.expand_dims(out_data, axis)
        mask = self.data == expanded
        # ties share the gradient evenly; irrelevant for generic inputs
        counts = mask.sum(axis=axis, keepdims=True)

        def bwd(g):
            self._accum(np.expand_dims(g, axis) * mask / counts)

        return Tensor._op(out_data, (self,), bwd)


# -- free-function ops ----------------------------------------------------


def elementwise(op_kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    unary = {"sigmoid": Tensor.sigmoid, "tanh": Tensor.tanh, "relu": Tensor.relu}
    binary = {"add": Tensor.__add__, "sub": Tensor.__sub__, "mul": Tensor.__mul__}
    if op_kind in unary:
        if b is not None:
            raise ValueError(f"{op_kind} is unary")
        return unary[op_kind](a)
    if op_kind in binary:
        if b is None:
            raise ValueError(f"{op_kind} needs two operands")
        return binary[op_kind](a, b)
    raise ValueError(f"unknown op_kind {op_kind!r}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = Tensor._coerce(a)
    b = Tensor._coerce(b)
    if b.data.ndim != 2 or a.data.ndim not in (2, 3):
        raise ValueError(
            f"matmul expects a rank 2 or 3, b rank 2; got {a.data.shape} "
            f"and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(
            f"matmul inner dimensions disagree: {a.data.shape} vs {b.data.shape}"
        )
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            if a.data.ndim == 2:
                b._accum(a.data.T @ g)
            else:
                b._accum(np.einsum("bmn,bmp->np", a.data, g))

    return Tensor._op(out_data, (a, b), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = Tensor._coerce(x)
    if not (-x.data.ndim <= axis < x.data.ndim):
        raise ValueError(f"axis {axis} invalid for shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        x._accum(out_data * (g - dot))

    return Tensor._op(out_data, (x,), bwd)


def masked_fill(x: Tensor, mask, fill: float) -> Tensor:
    x = Tensor._coerce(x)
    mask = np.asarray(mask, dtype=bool)
    try:
        np.broadcast_shapes(x.data.shape, mask.shape)
    except ValueError:
        raise ValueError(
            f"mask shape {mask.shape} incompatible with tensor shape {x.data.shape}"
        ) from None
    keep = np.broadcast_to(~mask, x.data.shape)
    out_data = np.where(keep, x.data, fill)

    def bwd(g):
        x._accum(g * keep)

    return Tensor._op(out_data, (x,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [Tensor._coerce(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return Tensor._op(out_data, tuple(tensors), bwd)


def cross_entropy_from_logits(logits: Tensor, targets) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target]."""
    logits = Tensor._coerce(logits)
    if logits.data.ndim != 2:
        raise ValueError(f"logits must be [batch, seq], got {logits.data.shape}")
    batch, seq = logits.data.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (batch,):
        raise ValueError(f"need {batch} targets, got shape {targets.shape}")
    for t in targets:
        if not 0 <= t < seq:
            raise ValueError(f"target index {t} out of range for seq length {seq}")
    m = logits.data.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits.data - m).sum(axis=1))
    picked = logits.data[np.arange(batch), targets]
    out_data = np.mean(lse - picked)
    probs = np.exp(logits.data - lse[:, None])

    def bwd(g):
        dl = probs.copy()
        dl[np.arange(batch), targets] -= 1.0
        logits._accum(float(g) * dl / batch)

    return Tensor._op(out_data, (logits,), bwd)


def backward(loss: Tensor) -> None:
    loss.backward()


# -- deterministic rng ----------------------------------------------------


class Rng:
    """Seeded PCG64 stream; identical seed gives identical values everywhere."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low, high, shape=None):
        return self._gen.uniform(low, high, shape)

    def normal(self, shape=None):
        return self._gen.standard_normal(shape)

    def permutation(self, n: int):
        return self._gen.permutation(n)

    def spawn(self, key: int) -> "Rng":
        """Derive an independent child stream; pure function of (seed, key)."""
        mixed = np.random.SeedSequence([self.seed, int(key)])
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = np.random.Generator(np.random.PCG64(mixed))
        return child


def init_uniform(rng: Rng, shape, fan_in: int, requires_grad=True) -> Tensor:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=requires_grad)


# -- adam -----------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, state: AdamState, lr: float) -> None:
    """One Adam update with bias correction over a name -> Tensor map."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        if state.m[name].shape != p.data.shape:
            raise ValueError(
                f"adam state for {name!r} has shape {state.m[name].shape}, "
                f"parameter has {p.data.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        mhat = m / (1.0 - state.beta1**t)
        vhat = v / (1.0 - state.beta2**t)
        p.data -= lr * mhat / (np.sqrt(vhat) + state.eps)


def zero_grads(params: dict) -> None:
    for p in params.values():
        p.zero_grad()


def clip_global_norm(params: dict, max_norm: float) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad**2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


# -- checkpoint io --------------------------------------------------------

CHECKPOINT_MAGIC = "squadlab-checkpoint"


def save_checkpoint(path, params: dict, seed: int, hyperparams: dict) -> None:
    """Flat JSON map name -> {shape, values}; fp64 round-trips bit-exactly."""
    blob = {
        "format": CHECKPOINT_MAGIC,
        "version": 1,
        "seed": int(seed),
        "hyperparams": hyperparams,
        "params": {
            name: {"shape": list(p.data.shape), "values": p.data.ravel().tolist()}
            for name, p in params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(blob, f)


def load_checkpoint(path):
    with open(path, "r", encoding="utf-8") as f:
        blob = json.load(f)
    if blob.get("format") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a squadlab checkpoint")
    params = {
        name: np.array(rec["values"], dtype=np.float64).reshape(rec["shape"])
        for name, rec in blob["params"].items()
    }
    return params, blob["seed"], blob["hyperparams"]
