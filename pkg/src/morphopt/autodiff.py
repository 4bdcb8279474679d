"""Minimal reverse-mode autodiff on float64 numpy arrays.

Just enough machinery for small MLPs and the composite training losses:
a single-use tape of primitive ops, flat named parameter vectors, and a
plain Adam optimizer. Everything is 64-bit and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class TapeConsumedError(RuntimeError):
    """Raised when backward() is called twice on the same tape."""


class NonFiniteGradientError(RuntimeError):
    """Raised when an optimizer step sees NaN/inf gradient entries."""


# ---------------------------------------------------------------------------
# Parameter vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayoutEntry:
    name: str
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


class ParamVector:
    """Flat float64 parameter array plus an ordered (name, offset, shape) layout.

    Layout offsets partition [0, len) with no gaps or overlaps; instances are
    treated as immutable snapshots (updates return new vectors).
    """

    def __init__(self, values: np.ndarray, layout: list[LayoutEntry]):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError(f"param values must be 1-D, got shape {values.shape}")
        expect = 0
        for entry in layout:
            if entry.offset != expect:
                raise ValueError(f"layout gap/overlap at '{entry.name}': offset {entry.offset}, expected {expect}")
            expect += entry.size
        if expect != values.size:
            raise ValueError(f"layout covers {expect} values but array has {values.size}")
        self.values = values
        self.layout = list(layout)
        self._by_name = {e.name: e for e in layout}

    def __len__(self) -> int:
        return self.values.size

    def get(self, name: str) -> np.ndarray:
        e = self._by_name[name]
        return self.values[e.offset:e.offset + e.size].reshape(e.shape)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros_like(self.values), self.layout)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def same_layout(self, other: "ParamVector") -> bool:
        return self.layout == other.layout

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


def layout_from_shapes(shapes: list[tuple[str, tuple[int, ...]]]) -> list[LayoutEntry]:
    entries, offset = [], 0
    for name, shape in shapes:
        entries.append(LayoutEntry(name, offset, tuple(shape)))
        offset += entries[-1].size
    return entries


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

class Var:
    """Handle to one tape node. Supports the usual arithmetic operators."""

    __slots__ = ("tape", "idx", "value")
    __array_priority__ = 100  # keep numpy from hijacking ndarray <op> Var

    def __init__(self, tape: "Tape", idx: int, value: np.ndarray):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.mul(self, -1.0)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)


@dataclass
class _Node:
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    aux: object = None
    param_name: str | None = None


class Tape:
    """Single-use record of a forward computation.

    Nodes are appended in topological order; backward() walks them exactly
    once in reverse and accumulates adjoints into parameter leaves.
    """

    def __init__(self, params: ParamVector | None = None):
        self.nodes: list[_Node] = []
        self.params = params
        self.consumed = False

    # -- leaves ------------------------------------------------------------

    def _push(self, op, parents, value, aux=None, param_name=None) -> Var:
        value = np.asarray(value, dtype=np.float64)
        self.nodes.append(_Node(op, parents, value, aux, param_name))
        return Var(self, len(self.nodes) - 1, value)

    def constant(self, value) -> Var:
        return self._push("const", (), value)

    def leaf(self, value) -> Var:
        """Differentiable non-parameter input (e.g. an action vector)."""
        return self._push("leaf", (), value)

    def param(self, name: str) -> Var:
        if self.params is None:
            raise ValueError("tape was created without a ParamVector")
        return self._push("param", (), self.params.get(name), param_name=name)

    def _wrap(self, x) -> Var:
        return x if isinstance(x, Var) else self.constant(x)

    # -- primitive ops -------------------------------------------------------

    def add(self, a, b) -> Var:
        a, b = self._wrap(a), self._wrap(b)
        return self._push("add", (a.idx, b.idx), a.value + b.value)

    def sub(self, a, b) -> Var:
        a, b = self._wrap(a), self._wrap(b)
        return self._push("sub", (a.idx, b.idx), a.value - b.value)

    def mul(self, a, b) -> Var:
        a, b = self._wrap(a), self._wrap(b)
        return self._push("mul", (a.idx, b.idx), a.value * b.value)

    def matmul(self, a, b) -> Var:
        a, b = self._wrap(a), self._wrap(b)
        if a.value.ndim != 2 or b.value.ndim not in (1, 2):
            raise ValueError(f"matmul expects 2-D @ 1-D/2-D, got {a.value.shape} @ {b.value.shape}")
        if a.value.shape[1] != b.value.shape[0]:
            raise ValueError(f"matmul dimension mismatch: {a.value.shape} @ {b.value.shape}")
        return self._push("matmul", (a.idx, b.idx), a.value @ b.value)

    def tanh(self, a) -> Var:
        a = self._wrap(a)
        return self._push("tanh", (a.idx,), np.tanh(a.value))

    def exp(self, a) -> Var:
        a = self._wrap(a)
        return self._push("exp", (a.idx,), np.exp(a.value))

    def log(self, a) -> Var:
        a = self._wrap(a)
        return self._push("log", (a.idx,), np.log(a.value))

    def square(self, a) -> Var:
        a = self._wrap(a)
        return self._push("square", (a.idx,), a.value * a.value)

    def sqrt(self, a) -> Var:
        a = self._wrap(a)
        return self._push("sqrt", (a.idx,), np.sqrt(a.value))

    def absolute(self, a) -> Var:
        a = self._wrap(a)
        return self._push("abs", (a.idx,), np.abs(a.value))

    def minimum(self, a, b) -> Var:
        a, b = self._wrap(a), self._wrap(b)
        return self._push("min", (a.idx, b.idx), np.minimum(a.value, b.value))

    def maximum(self, a, b) -> Var:
        a, b = self._wrap(a), self._wrap(b)
        return self._push("max", (a.idx, b.idx), np.maximum(a.value, b.value))

    def clip(self, a, lo: float, hi: float) -> Var:
        a = self._wrap(a)
        return self._push("clip", (a.idx,), np.clip(a.value, lo, hi), aux=(lo, hi))

    def sum(self, a, axis: int | None = None) -> Var:
        a = self._wrap(a)
        return self._push("sum", (a.idx,), np.sum(a.value, axis=axis), aux=axis)

    def mean(self, a, axis: int | None = None) -> Var:
        a = self._wrap(a)
        return self._push("mean", (a.idx,), np.mean(a.value, axis=axis), aux=axis)

    def concat(self, parts: list[Var]) -> Var:
        parts = [self._wrap(p) for p in parts]
        if any(p.value.ndim != parts[0].value.ndim for p in parts):
            raise ValueError("concat parts must share ndim")
        value = np.concatenate([p.value for p in parts], axis=0)
        return self._push("concat", tuple(p.idx for p in parts), value,
                          aux=[p.value.shape[0] for p in parts])

    def reshape(self, a, shape: tuple[int, ...]) -> Var:
        a = self._wrap(a)
        return self._push("reshape", (a.idx,), a.value.reshape(shape), aux=a.value.shape)

    # -- backward ------------------------------------------------------------

    def backward(self, out: Var, seed=1.0) -> ParamVector:
        """Accumulate d(out)/d(params), seeded with `seed` on the output node.

        The tape is consumed; a second call raises TapeConsumedError. Adjoints
        of `leaf` nodes remain available via `leaf_grad` afterwards.
        """
        if self.consumed:
            raise TapeConsumedError("tape already consumed by a previous backward pass")
        self.consumed = True
        seed = np.asarray(seed, dtype=np.float64)
        out_val = self.nodes[out.idx].value
        if seed.shape != out_val.shape:
            if seed.size == 1:
                seed = np.broadcast_to(seed, out_val.shape).astype(np.float64)
            else:
                raise ValueError(f"seed shape {seed.shape} does not match output shape {out_val.shape}")

        adjoints: dict[int, np.ndarray] = {out.idx: np.array(seed, dtype=np.float64)}
        self._leaf_grads: dict[int, np.ndarray] = {}
        grad = None if self.params is None else np.zeros(len(self.params), dtype=np.float64)

        def acc(idx: int, g: np.ndarray) -> None:
            node = self.nodes[idx]
            g = _unbroadcast(g, node.value.shape)
            if idx in adjoints:
                adjoints[idx] = adjoints[idx] + g
            else:
                adjoints[idx] = g

        for idx in range(out.idx, -1, -1):
            if idx not in adjoints:
                continue
            node = self.nodes[idx]
            g = adjoints[idx]
            if node.op == "const":
                continue
            if node.op == "leaf":
                self._leaf_grads[idx] = g
                continue
            if node.op == "param":
                entry = self.params._by_name[node.param_name]
                grad[entry.offset:entry.offset + entry.size] += g.ravel()
                continue
            pa = node.parents
            if node.op == "add":
                acc(pa[0], g)
                acc(pa[1], g)
            elif node.op == "sub":
                acc(pa[0], g)
                acc(pa[1], -g)
            elif node.op == "mul":
                acc(pa[0], g * self.nodes[pa[1]].value)
                acc(pa[1], g * self.nodes[pa[0]].value)
            elif node.op == "matmul":
                a, b = self.nodes[pa[0]].value, self.nodes[pa[1]].value
                if b.ndim == 1:
                    acc(pa[0], np.outer(g, b))
                    acc(pa[1], a.T @ g)
                else:
                    acc(pa[0], g @ b.T)
                    acc(pa[1], a.T @ g)
            elif node.op == "tanh":
                acc(pa[0], g * (1.0 - node.value * node.value))
            elif node.op == "exp":
                acc(pa[0], g * node.value)
            elif node.op == "log":
                acc(pa[0], g / self.nodes[pa[0]].value)
            elif node.op == "square":
                acc(pa[0], g * 2.0 * self.nodes[pa[0]].value)
            elif node.op == "sqrt":
                acc(pa[0], g * 0.5 / node.value)
            elif node.op == "abs":
                acc(pa[0], g * np.sign(self.nodes[pa[0]].value))
            elif node.op == "min":
                a, b = self.nodes[pa[0]].value, self.nodes[pa[1]].value
                take_a = a <= b
                acc(pa[0], g * take_a)
                acc(pa[1], g * ~take_a)
            elif node.op == "max":
                a, b = self.nodes[pa[0]].value, self.nodes[pa[1]].value
                take_a = a >= b
                acc(pa[0], g * take_a)
                acc(pa[1], g * ~take_a)
            elif node.op == "clip":
                lo, hi = node.aux
                x = self.nodes[pa[0]].value
                acc(pa[0], g * ((x >= lo) & (x <= hi)))
            elif node.op == "sum":
                acc(pa[0], _expand_reduced(g, self.nodes[pa[0]].value.shape, node.aux))
            elif node.op == "mean":
                src_shape = self.nodes[pa[0]].value.shape
                count = np.prod(src_shape) if node.aux is None else src_shape[node.aux]
                acc(pa[0], _expand_reduced(g, src_shape, node.aux) / count)
            elif node.op == "concat":
                start = 0
                for p_idx, length in zip(pa, node.aux):
                    acc(p_idx, g[start:start + length])
                    start += length
            elif node.op == "reshape":
                acc(pa[0], g.reshape(node.aux))
            else:
                raise AssertionError(f"unknown op {node.op}")

        if grad is None:
            return None
        return ParamVector(grad, self.params.layout)

    def leaf_grad(self, leaf: Var) -> np.ndarray:
        """Adjoint of a `leaf` node from the last backward pass (zeros if unreached)."""
        if not self.consumed:
            raise RuntimeError("backward() has not run yet")
        return self._leaf_grads.get(leaf.idx, np.zeros_like(self.nodes[leaf.idx].value))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to `shape` after bias-style broadcasting."""
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(np.sum(g))
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if g.shape[ax] != n:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _expand_reduced(g: np.ndarray, src_shape: tuple[int, ...], axis: int | None) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(np.asarray(g), src_shape)
    return np.broadcast_to(np.expand_dims(g, axis), src_shape)


# ---------------------------------------------------------------------------
# MLPs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MlpSpec:
    """Layer widths of a dense net: tanh on hidden layers, identity output."""

    layer_widths: tuple[int, ...]

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ValueError("MlpSpec needs at least input and output widths")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError(f"all widths must be >= 1, got {self.layer_widths}")

    @property
    def in_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def out_dim(self) -> int:
        return self.layer_widths[-1]

    def param_shapes(self, prefix: str = "") -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        for i, (a, b) in enumerate(zip(self.layer_widths[:-1], self.layer_widths[1:])):
            shapes.append((f"{prefix}w{i}", (b, a)))
            shapes.append((f"{prefix}b{i}", (b,)))
        return shapes

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.param_shapes())


def init_mlp_params(spec: MlpSpec, rng: np.random.Generator, prefix: str = "",
                    out_scale: float = 1.0) -> ParamVector:
    """Glorot-uniform weights, zero biases; `out_scale` shrinks the last layer."""
    layout = layout_from_shapes(spec.param_shapes(prefix))
    values = np.zeros(sum(e.size for e in layout))
    pv = ParamVector(values, layout)
    n_layers = len(spec.layer_widths) - 1
    for i, (a, b) in enumerate(zip(spec.layer_widths[:-1], spec.layer_widths[1:])):
        bound = np.sqrt(6.0 / (a + b))
        if i == n_layers - 1:
            bound *= out_scale
        w = rng.uniform(-bound, bound, size=(b, a))
        e = pv._by_name[f"{prefix}w{i}"]
        pv.values[e.offset:e.offset + e.size] = w.ravel()
    return pv


def mlp_forward(params: ParamVector, spec: MlpSpec, x, prefix: str = "",
                tape: Tape | None = None):
    """Run the MLP on a single input or a (in_dim, batch) matrix, on tape.

    Returns (output Var, tape). Raises ValueError on dimension mismatch.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_mlp_input(params, spec, x, prefix)
    if tape is None:
        tape = Tape(params)
    return _mlp_on_tape(tape, spec, tape.constant(x), prefix), tape


def mlp_forward_var(tape: Tape, spec: MlpSpec, x: Var, prefix: str = "") -> Var:
    """Like mlp_forward but the input is already a tape Var."""
    return _mlp_on_tape(tape, spec, x, prefix)


def _mlp_on_tape(tape: Tape, spec: MlpSpec, h: Var, prefix: str) -> Var:
    n_layers = len(spec.layer_widths) - 1
    batched = h.value.ndim == 2
    for i in range(n_layers):
        w = tape.param(f"{prefix}w{i}")
        b = tape.param(f"{prefix}b{i}")
        z = tape.matmul(w, h)
        if batched:
            b = tape.reshape(b, (b.value.shape[0], 1))
        z = tape.add(z, b)
        h = tape.tanh(z) if i < n_layers - 1 else z
    return h


def mlp_eval(params: ParamVector, spec: MlpSpec, x, prefix: str = "") -> np.ndarray:
    """Tape-free forward pass with the identical op order as mlp_forward."""
    x = np.asarray(x, dtype=np.float64)
    _check_mlp_input(params, spec, x, prefix)
    h = x
    n_layers = len(spec.layer_widths) - 1
    for i in range(n_layers):
        w = params.get(f"{prefix}w{i}")
        b = params.get(f"{prefix}b{i}")
        z = w @ h + (b if h.ndim == 1 else b[:, None])
        h = np.tanh(z) if i < n_layers - 1 else z
    return h


def _check_mlp_input(params: ParamVector, spec: MlpSpec, x: np.ndarray, prefix: str):
    xdim = x.shape[0] if x.ndim in (1, 2) else -1
    if x.ndim not in (1, 2) or xdim != spec.in_dim:
        raise ValueError(f"input dim {x.shape} does not match spec first width {spec.in_dim}")
    for name, shape in spec.param_shapes(prefix):
        entry = params._by_name.get(name)
        if entry is None or entry.shape != shape:
            raise ValueError(f"params missing or mis-shaped entry '{name}' (want {shape})")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), t=0)


def adam_step(params: ParamVector, grad: ParamVector, state: AdamState,
              lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> ParamVector:
    """One Adam update; mutates `state`, returns the new ParamVector."""
    if grad.values.shape != params.values.shape:
        raise ValueError(f"grad length {len(grad)} != params length {len(params)}")
    if not np.all(np.isfinite(grad.values)):
        bad = int(np.sum(~np.isfinite(grad.values)))
        raise NonFiniteGradientError(f"{bad} non-finite gradient entries; step aborted")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad.values
    state.v = beta2 * state.v + (1.0 - beta2) * grad.values * grad.values
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    new_values = params.values - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params.with_values(new_values)
