"""Reverse-mode autodiff over a recorded op graph. Every Tensor remembers its
parents and a closure mapping the output gradient to parent gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import GraphNotRecorded


class Tensor:
    __slots__ = ("data", "parents", "grad_fn", "requires_grad", "name")

    def __init__(self, data, parents: Sequence["Tensor"] = (), grad_fn: Callable | None = None,
                 requires_grad: bool = False, name: str | None = None):
        self.data = data
        self.parents = tuple(parents)
        self.grad_fn = grad_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def constant(x, dtype=None) -> Tensor:
    return Tensor(np.asarray(x, dtype=dtype))


def leaf(x, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(x), requires_grad=True, name=name)


def make(data, parents: Sequence[Tensor], grad_fn: Callable, name: str | None = None) -> Tensor:
    """Record an op. ``grad_fn(g)`` returns one gradient (or None) per parent.

    Nothing is recorded when no parent needs a gradient.
    """
    if any(p.requires_grad for p in parents):
        return Tensor(data, parents, grad_fn, requires_grad=True, name=name)
    return Tensor(data)


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(loss: Tensor, leaves: Sequence[Tensor], scale: float = 1.0) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. ``leaves``; unreachable leaves get exact zeros."""
    if not isinstance(loss, Tensor) or not loss.requires_grad:
        raise GraphNotRecorded("loss carries no recorded graph; run forward with bound parameters")
    if loss.data.size != 1:
        raise ValueError("backward needs a scalar loss")
    grads = {id(loss): np.full(loss.data.shape, scale, dtype=loss.data.dtype)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None) if node.grad_fn is not None else grads.get(id(node))
        if g is None or node.grad_fn is None:
            continue
        parent_grads = node.grad_fn(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [grads.get(id(t), np.zeros_like(t.data)) for t in leaves]
