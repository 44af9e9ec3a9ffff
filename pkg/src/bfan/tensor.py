"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op that touches a tensor with ``requires_grad`` records a node on the
output: the parent tensors and a closure mapping the output gradient to
parent gradients. :class:`Graph` recovers the recorded computation as a
topologically ordered node list and :func:`backward` walks it in reverse.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation

_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "id", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        """Wrap an op result; record the node only if some parent needs grad."""
        out = cls.__new__(cls)
        if data.dtype != np.float64:
            data = data.astype(np.float64)
        if data.ndim == 0:
            data = data.reshape(1)
        if not np.all(np.isfinite(data)):
            raise ContractViolation(f"tensor-core.{op}", "non-finite value produced")
        out.data = data
        out.grad = None
        out.id = next(_ids)
        out.op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation("tensor-core.item", f"tensor of shape {self.shape} is not scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the heavy lifting lives in bfan.ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.scale(_lift(other), -1.0))

    def __rsub__(self, other):
        from . import ops
        return ops.add(_lift(other), ops.scale(self, -1.0))

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self):
        from . import ops
        return ops.mean(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.broadcast_to(np.float64(x), (1,)))


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    output: int
    tensor: Tensor = field(repr=False)


class Graph:
    """Ordered record of the ops that produced a tensor.

    Nodes are in topological order: every node's inputs are produced by
    earlier nodes or are leaves.
    """

    def __init__(self, nodes: list[Node]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if t.id in seen:
                continue
            seen.add(t.id)
            stack.append((t, True))
            for p in t._parents:
                if p.id not in seen:
                    stack.append((p, False))
        nodes = [
            Node(t.op, tuple(p.id for p in t._parents), t.id, t)
            for t in order
            if t._backward is not None
        ]
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        found: dict[int, Tensor] = {}
        for node in self.nodes:
            for p in node.tensor._parents:
                if p._backward is None and p.requires_grad:
                    found.setdefault(p.id, p)
        return list(found.values())


def backward(loss: Tensor, graph: Graph | None = None) -> Graph:
    """Populate ``.grad`` on every tensor that requires grad upstream of ``loss``.

    Gradients accumulate additively into existing ``.grad`` buffers, so reset
    parameter grads between steps. Returns the traversed graph.
    """
    if loss.data.size != 1:
        raise ContractViolation("tensor-core.backward", f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractViolation("tensor-core.backward", "loss is detached from any tensor requiring grad")
    if graph is None:
        graph = Graph.trace(loss)
    elif not graph.nodes or graph.nodes[-1].output != loss.id:
        raise ContractViolation("tensor-core.backward", "graph was not recorded for this loss")

    # intermediate grads live here so they are released as soon as consumed
    pending: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    if loss._backward is None:
        loss.grad = pending[loss.id] if loss.grad is None else loss.grad + pending[loss.id]
        return graph
    for node in reversed(graph.nodes):
        t = node.tensor
        g = pending.pop(t.id, None)
        if g is None:
            continue
        grads = t._backward(g)
        for p, pg in zip(t._parents, grads):
            if pg is None or not p.requires_grad:
                continue
            if p._backward is None:
                p.grad = pg.copy() if p.grad is None else p.grad + pg
            elif p.id in pending:
                pending[p.id] = pending[p.id] + pg
            else:
                pending[p.id] = pg
    return graph


@dataclass
class GradCheckResult:
    passed: bool
    max_rel_error: float
    checked: int
    excluded: int
    worst_index: tuple[int, ...] | None = None

    def __bool__(self) -> bool:
        return self.passed


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-6,
    tol: float = 1e-4,
    indices: Sequence[tuple[int, ...]] | None = None,
    kink_tol: float = 1e-2,
) -> GradCheckResult:
    """Compare the analytic gradient of scalar ``f`` at ``x`` to central differences.

    The error is ``max|a - n| / max(|a|, |n|, 1e-8)`` with both maxima taken
    over the checked entries. An entry whose forward and backward one-sided
    slopes disagree by more than ``kink_tol`` (relative) sits on a kink and is
    excluded. ``indices`` restricts the check to a subset of entries.
    """
    if step <= 0:
        raise ContractViolation("tensor-core.grad_check", "step must be positive")
    x.requires_grad = True
    x.grad = None
    out = f(x)
    backward(out)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    f0 = out.item()

    if indices is None:
        indices = list(np.ndindex(*x.shape))
    a_vals, n_vals, kept = [], [], []
    excluded = 0
    base = x.data
    for idx in indices:
        orig = base[idx]
        base[idx] = orig + step
        fp = f(x).item()
        base[idx] = orig - step
        fm = f(x).item()
        base[idx] = orig
        fwd = (fp - f0) / step
        bwd = (f0 - fm) / step
        scale = max(abs(fwd), abs(bwd), 1e-8)
        if abs(fwd - bwd) > kink_tol * scale and abs(fwd - bwd) > 1e-6:
            excluded += 1
            continue
        a_vals.append(analytic[idx])
        n_vals.append((fp - fm) / (2 * step))
        kept.append(tuple(int(i) for i in idx))
    x.grad = None
    if not a_vals:
        return GradCheckResult(True, 0.0, 0, excluded)
    a = np.asarray(a_vals)
    n = np.asarray(n_vals)
    diff = np.abs(a - n)
    denom = max(np.abs(a).max(), np.abs(n).max(), 1e-8)
    err = float(diff.max() / denom)
    return GradCheckResult(err < tol, err, len(a_vals), excluded, kept[int(diff.argmax())])
