"""Minimal reverse-mode tape over numpy arrays.

Just the operations the detection network needs: matmul, elementwise
arithmetic, PReLU with a trainable slope, sigmoid, column concat, row gather,
neighbor-softmax attention over a CSR graph, and binary cross-entropy.
Reduction order is fixed everywhere so replays are bit-identical.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-accumulate gradients from this (scalar) tensor to all leaves."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _maybe(t: Tensor, g) -> None:
    if t.requires_grad:
        t._accumulate(g)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data @ b.data

    def bw(g):
        _maybe(a, g @ b.data.T)
        _maybe(b, a.data.T @ g)

    return Tensor(out_data, parents=(a, b), backward=bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bw(g):
        _maybe(a, _unbroadcast(g, a.data.shape))
        _maybe(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bw(g):
        _maybe(a, _unbroadcast(g, a.data.shape))
        _maybe(b, -_unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bw(g):
        _maybe(a, _unbroadcast(g * b.data, a.data.shape))
        _maybe(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bw)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Elementwise PReLU with a single shared trainable slope.

    The subgradient at 0 takes the negative-branch slope.
    """
    pos = x.data > 0
    a = slope.data.reshape(())
    out_data = np.where(pos, x.data, a * x.data)

    def bw(g):
        _maybe(x, np.where(pos, g, a * g))
        _maybe(slope, np.array(np.sum(g * np.where(pos, 0.0, x.data)), dtype=slope.data.dtype))

    return Tensor(out_data, parents=(x, slope), backward=bw)


def sigmoid(x: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def bw(g):
        _maybe(x, g * out_data * (1.0 - out_data))

    return Tensor(out_data, parents=(x,), backward=bw)


def concat_cols(tensors: list[Tensor]) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=1)
    widths = [t.data.shape[1] for t in tensors]

    def bw(g):
        pos = 0
        for t, w in zip(tensors, widths):
            _maybe(t, g[:, pos:pos + w])
            pos += w

    return Tensor(out_data, parents=tuple(tensors), backward=bw)


def gather_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Row lookup table[index]; backward scatter-adds into the table."""
    out_data = table.data[index]

    def bw(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, index, g)
            table._accumulate(acc)

    return Tensor(out_data, parents=(table,), backward=bw)


def csr_attention(
    q: Tensor, k: Tensor, v: Tensor, offsets: np.ndarray, neighbors: np.ndarray, scale: float = 1.0
) -> Tensor:
    """One attention head over graph neighbors.

    For each node i: softmax over j in N(i) of scale * (Q_i . K_j), then the
    alpha-weighted sum of V_j. Softmax subtracts the row max for stability.
    Every row must be nonempty (guaranteed by self-loops).
    """
    n = q.data.shape[0]
    off = offsets.astype(np.int64)
    nbr = neighbors.astype(np.int64)
    starts = off[:-1]
    counts = np.diff(off)
    src = np.repeat(np.arange(n), counts)
    logits = scale * np.einsum("ed,ed->e", q.data[src], k.data[nbr])
    rowmax = np.maximum.reduceat(logits, starts)
    expw = np.exp(logits - rowmax[src])
    rowsum = np.add.reduceat(expw, starts)
    alpha = expw / rowsum[src]
    out_data = np.add.reduceat(alpha[:, None] * v.data[nbr], starts, axis=0)

    def bw(g):
        if v.requires_grad:
            dv = np.zeros_like(v.data)
            np.add.at(dv, nbr, alpha[:, None] * g[src])
            v._accumulate(dv)
        d_alpha = np.einsum("ed,ed->e", g[src], v.data[nbr])
        row_dot = np.add.reduceat(alpha * d_alpha, starts)
        d_logits = scale * alpha * (d_alpha - row_dot[src])
        if q.requires_grad:
            q._accumulate(np.add.reduceat(d_logits[:, None] * k.data[nbr], starts, axis=0))
        if k.requires_grad:
            dk = np.zeros_like(k.data)
            np.add.at(dk, nbr, d_logits[:, None] * q.data[src])
            k._accumulate(dk)

    return Tensor(out_data, parents=(q, k, v), backward=bw)


def flatten(x: Tensor) -> Tensor:
    out_data = x.data.reshape(-1)

    def bw(g):
        _maybe(x, g.reshape(x.data.shape))

    return Tensor(out_data, parents=(x,), backward=bw)


def bce_on_subset(prob: Tensor, targets: np.ndarray, subset: np.ndarray, eps: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy over the given node subset.

    Probabilities are clamped to [eps, 1-eps]; clamped entries get zero
    gradient.
    """
    subset = np.asarray(subset, dtype=np.int64)
    if subset.size == 0:
        raise ValueError("bce subset must be nonempty")
    y = np.asarray(targets, dtype=prob.data.dtype)[subset]
    p_raw = prob.data[subset]
    p = np.clip(p_raw, eps, 1.0 - eps)
    loss = float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))

    def bw(g):
        if prob.requires_grad:
            inside = (p_raw > eps) & (p_raw < 1.0 - eps)
            dp = np.where(inside, (p - y) / (p * (1.0 - p)), 0.0) / subset.size
            full = np.zeros_like(prob.data)
            np.add.at(full, subset, g * dp)
            prob._accumulate(full)

    return Tensor(np.asarray(loss, dtype=prob.data.dtype), parents=(prob,), backward=bw)
