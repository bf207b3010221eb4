"""Minimal dense-tensor reverse-mode autodiff engine.

Tensors wrap numpy arrays (float64 for training, float32 for inference).
Every operation that sees a grad-requiring input records a backward closure;
``Tensor.backward()`` traces the implicit graph into a ComputationTape and
replays it in reverse topological order. Broadcasting is restricted to
singleton-dimension expansion between equal-rank operands; there is no rank
promotion.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, TapeError

_ALLOWED_DTYPES = (np.float64, np.float32)


class Tensor:
    """A dense array with an optional gradient accumulator.

    Gradient accumulation is additive; within one backward pass the
    contribution order is fixed by the tape, so results are deterministic.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw arrays, not Tensors")
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in _ALLOWED_DTYPES else np.float64
        arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, grad={self.requires_grad})"

    # -- gradient machinery -----------------------------------------------

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        # Accumulation never mutates stored arrays (always rebinds), so the
        # first contribution can be kept by reference even when the closure
        # passed its upstream grad through unchanged.
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self, seed=None):
        """Run reverse-mode accumulation from this tensor.

        ``seed`` defaults to ones (required shape match); scalar outputs may
        omit it. The traced tape is single use.
        """
        ComputationTape.trace(self).backward(seed)

    # -- operator sugar (delegates to ops module) --------------------------

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def make_result(data, parents, backward, op):
    """Build an op result; skips closure capture when no parent needs grad."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    needs = any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


class ComputationTape:
    """Reverse-topological record of one forward graph.

    A tape is consumed by ``backward``; replaying it raises TapeError, which
    guards against silently double-accumulated gradients.
    """

    def __init__(self, nodes):
        self._nodes = nodes
        self._consumed = False

    @classmethod
    def trace(cls, root):
        """Iterative post-order DFS over parents; returns nodes in topological order."""
        order = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self._nodes)

    def backward(self, seed=None):
        if self._consumed:
            raise TapeError("tape already processed; rebuild the graph before backward")
        if not self._nodes:
            raise TapeError("empty tape")
        root = self._nodes[-1]
        if seed is None:
            seed = np.ones_like(root.data)
        else:
            seed = np.asarray(seed, dtype=root.data.dtype)
            if seed.shape != root.data.shape:
                raise ShapeError(f"seed shape {seed.shape} != root shape {root.data.shape}")
        root.accumulate_grad(seed)
        for node in reversed(self._nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # free intermediate grads and closures; leaves keep their grads
        for node in self._nodes:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node.grad = None
        self._consumed = True


def as_tensor(x, dtype=np.float64):
    """Wrap plain data as a constant Tensor; passes Tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))
