"""Computation-graph tensor for reverse-mode differentiation.

A Tensor wraps a numpy array; ops in :mod:`fuzzyseg.nn.ops` link result
tensors back to their inputs with a closure that pushes the result's gradient
onto them.  ``backward()`` on a scalar runs the closures in reverse
topological order.  Graph recording is skipped entirely when no input requires
gradients or inside a :func:`no_grad` block, so inference passes stay cheap.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from ..errors import InvalidInputError

# thread-local so one worker's inference pass cannot stop another worker's
# training graph from recording
_state = threading.local()


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / metric passes)."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_backward_done")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None):
        if isinstance(data, np.ndarray):
            self.data = data
        elif isinstance(data, np.generic):
            # numpy scalar: keep its dtype instead of downcasting
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward_fn
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def accumulate_grad(self, delta: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += delta

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        """Populate ``grad`` on every tensor this scalar depends on."""
        if self.data.shape != ():
            raise InvalidInputError(
                f"backward() needs a scalar root, got shape {self.data.shape}"
            )
        if self._backward_done:
            raise RuntimeError("backward() already ran on this graph; rebuild it first")

        # Iterative DFS post-order; recursion would overflow on deep graphs.
        topo = []
        visited = set()
        stack = [(self, iter(self._parents))]
        visited.add(id(self))
        while stack:
            node, parents = stack[-1]
            advanced = False
            for parent in parents:
                if id(parent) not in visited:
                    visited.add(id(parent))
                    stack.append((parent, iter(parent._parents)))
                    advanced = True
                    break
            if not advanced:
                topo.append(node)
                stack.pop()

        self.grad = np.ones((), dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        self._backward_done = True
