"""Minimal reverse-mode differentiation over 2-D float64 tensors.

The op set is deliberately closed: matmul, add, subtract, scale, sum,
row_cosine, row_softmax, l1_mean, mse_mean and cross_entropy_rows are the
only operations, because that is everything the loss stack needs and a
closed set can be gradient-checked exhaustively. Ops are recorded on a
Graph (a tape); the backward pass walks the tape in exact reverse
insertion order and accumulates adjoints. Leaf gradients accumulate
across backward calls, so running backward twice without resetting
doubles every gradient.

All compute is float64 even though the embedding interchange format is
float32; finite-difference checks against the analytic gradients are an
acceptance gate and need the extra precision.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .errors import (
    ConfigError,
    DegenerateInputError,
    ShapeError,
    UsageError,
    ValidationError,
)

# epsilon added inside logarithms; softmax at high temperature ratios can
# underflow to exactly zero
LOG_EPS = 1e-12

# test-only fault injection: set to "matmul" to flip the sign of the matmul
# backward rule, used by the gradcheck mutation check
_FAULT: Optional[str] = None


class Tensor2:
    """A rows x cols matrix of float64 with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if arr.ndim != 2:
            raise ShapeError(f"Tensor2 requires a 2-D array, got ndim={arr.ndim}")
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValidationError("Tensor2 entries must be finite (no NaN/Inf)")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise UsageError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor2(shape={self.data.shape}, requires_grad={self.requires_grad})"


def scalar(value: float, requires_grad: bool = False) -> Tensor2:
    """Wrap a python float as a 1x1 tensor."""
    return Tensor2(np.array([[value]], dtype=np.float64), requires_grad)


# ---------------------------------------------------------------------------
# forward kernels (shared with code that needs the same math outside a graph,
# e.g. the constant teacher branch of the distillation loss)
# ---------------------------------------------------------------------------


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity between rows of a (n x d) and b (c x d)."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    return (a @ b.T) / np.outer(na, nb)


def softmax_rows(z: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise softmax of z / temperature, numerically stabilised."""
    t = z / temperature
    t = t - t.max(axis=1, keepdims=True)
    e = np.exp(t)
    return e / e.sum(axis=1, keepdims=True)


def _check_no_zero_rows(arr: np.ndarray, label: str) -> np.ndarray:
    norms = np.linalg.norm(arr, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateInputError(f"zero-norm row {int(zero[0])} in {label}")
    return norms


class _Node:
    __slots__ = ("op", "inputs", "out", "backward_fn")

    def __init__(self, op: str, inputs: tuple, out: Tensor2, backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn


class Graph:
    """Op tape. Nodes are appended in execution order; backward() replays
    them in exact reverse insertion order. A Graph is single-threaded."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._produced: set[int] = set()
        self._leaves: dict[int, Tensor2] = {}

    # -- plumbing -----------------------------------------------------------

    def watch(self, t: Tensor2) -> None:
        """Register a requires_grad tensor as a leaf even if no op touches
        it; backward then reports a zero gradient for it."""
        if not t.requires_grad:
            raise UsageError("watch() expects a requires_grad tensor")
        if id(t) not in self._produced:
            self._leaves[id(t)] = t

    def _register(self, op: str, inputs: tuple[Tensor2, ...], out_data: np.ndarray,
                  backward_fn: Callable) -> Tensor2:
        out = Tensor2(out_data)
        for t in inputs:
            if id(t) not in self._produced and t.requires_grad:
                self._leaves[id(t)] = t
        self._nodes.append(_Node(op, inputs, out, backward_fn))
        self._produced.add(id(out))
        return out

    # -- ops ----------------------------------------------------------------

    def matmul(self, a: Tensor2, b: Tensor2) -> Tensor2:
        if a.cols != b.rows:
            raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
        out_data = a.data @ b.data

        def bw(g, acc):
            sign = -1.0 if _FAULT == "matmul" else 1.0
            acc(a, sign * (g @ b.data.T))
            acc(b, sign * (a.data.T @ g))

        return self._register("matmul", (a, b), out_data, bw)

    def add(self, a: Tensor2, b: Tensor2) -> Tensor2:
        if a.shape != b.shape:
            raise ShapeError(f"add shapes disagree: {a.shape} vs {b.shape}")

        def bw(g, acc):
            acc(a, g)
            acc(b, g)

        return self._register("add", (a, b), a.data + b.data, bw)

    def subtract(self, a: Tensor2, b: Tensor2) -> Tensor2:
        if a.shape != b.shape:
            raise ShapeError(f"subtract shapes disagree: {a.shape} vs {b.shape}")

        def bw(g, acc):
            acc(a, g)
            acc(b, -g)

        return self._register("subtract", (a, b), a.data - b.data, bw)

    def scale(self, a: Tensor2, factor: float) -> Tensor2:
        factor = float(factor)

        def bw(g, acc):
            acc(a, factor * g)

        return self._register("scale", (a,), factor * a.data, bw)

    def sum(self, a: Tensor2) -> Tensor2:
        def bw(g, acc):
            acc(a, np.full_like(a.data, g[0, 0]))

        return self._register("sum", (a,), np.array([[a.data.sum()]]), bw)

    def row_cosine(self, a: Tensor2, b: Tensor2) -> Tensor2:
        """Entry (i, j) = cos(a_i, b_j). Differentiable w.r.t. both inputs."""
        if a.cols != b.cols:
            raise ShapeError(f"row_cosine column counts disagree: {a.shape} vs {b.shape}")
        na = _check_no_zero_rows(a.data, "first input")
        nb = _check_no_zero_rows(b.data, "second input")
        a_hat = a.data / na[:, None]
        b_hat = b.data / nb[:, None]
        # same kernel as the graph-free cosine_rows so constant teacher
        # branches and graph branches agree bit-for-bit on equal inputs
        cos = cosine_rows(a.data, b.data)

        def bw(g, acc):
            # d cos_ij / d a_i = (b_hat_j - cos_ij * a_hat_i) / |a_i|
            row_mix = (g * cos).sum(axis=1, keepdims=True)
            col_mix = (g * cos).sum(axis=0)[:, None]
            acc(a, (g @ b_hat - row_mix * a_hat) / na[:, None])
            acc(b, (g.T @ a_hat - col_mix * b_hat) / nb[:, None])

        return self._register("row_cosine", (a, b), cos, bw)

    def row_softmax(self, z: Tensor2, temperature: float) -> Tensor2:
        if not temperature > 0:
            raise ConfigError(f"softmax temperature must be positive, got {temperature}")
        s = softmax_rows(z.data, temperature)

        def bw(g, acc):
            inner = (g * s).sum(axis=1, keepdims=True)
            acc(z, (s * (g - inner)) / temperature)

        return self._register("row_softmax", (z,), s, bw)

    def l1_mean(self, a: Tensor2, b: Tensor2) -> Tensor2:
        """Mean over rows of the per-row L1 distance. Subgradient uses sign(0)=0."""
        if a.shape != b.shape:
            raise ShapeError(f"l1_mean shapes disagree: {a.shape} vs {b.shape}")
        diff = a.data - b.data
        n = a.rows
        val = np.abs(diff).sum() / n

        def bw(g, acc):
            s = np.sign(diff) * (g[0, 0] / n)
            acc(a, s)
            acc(b, -s)

        return self._register("l1_mean", (a, b), np.array([[val]]), bw)

    def mse_mean(self, a: Tensor2, b: Tensor2) -> Tensor2:
        """Mean over rows of the squared L2 distance between paired rows."""
        if a.shape != b.shape:
            raise ShapeError(f"mse_mean shapes disagree: {a.shape} vs {b.shape}")
        diff = a.data - b.data
        n = a.rows
        val = (diff * diff).sum() / n

        def bw(g, acc):
            s = diff * (2.0 * g[0, 0] / n)
            acc(a, s)
            acc(b, -s)

        return self._register("mse_mean", (a, b), np.array([[val]]), bw)

    def cross_entropy_rows(self, p_teacher: Tensor2, p_student: Tensor2) -> Tensor2:
        """Mean over rows of -sum_j p_teacher * log(p_student + eps).

        Both inputs must be row-stochastic (rows sum to 1 within 1e-9,
        entries >= 0).
        """
        if p_teacher.shape != p_student.shape:
            raise ShapeError(
                f"cross_entropy_rows shapes disagree: {p_teacher.shape} vs {p_student.shape}"
            )
        for label, t in (("teacher", p_teacher), ("student", p_student)):
            if np.any(t.data < 0):
                raise ValidationError(f"{label} distribution has negative entries")
            sums = t.data.sum(axis=1)
            bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-9)
            if bad.size:
                raise ValidationError(
                    f"{label} row {int(bad[0])} is not stochastic (sums to {sums[bad[0]]!r})"
                )
        n = p_teacher.rows
        logq = np.log(p_student.data + LOG_EPS)
        val = -(p_teacher.data * logq).sum() / n

        def bw(g, acc):
            f = g[0, 0] / n
            acc(p_teacher, -logq * f)
            acc(p_student, -(p_teacher.data / (p_student.data + LOG_EPS)) * f)

        return self._register("cross_entropy_rows", (p_teacher, p_student),
                              np.array([[val]]), bw)

    # -- backward -----------------------------------------------------------

    def backward(self, loss: Tensor2) -> dict[Tensor2, np.ndarray]:
        """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

        Returns a map keyed by leaf tensor; leaves not reachable from the
        loss get a zero gradient. Intermediate adjoints are local to the
        call, but leaf .grad fields accumulate across calls.
        """
        if loss.shape != (1, 1):
            raise UsageError(f"backward needs a scalar (1x1) loss node, got {loss.shape}")
        if id(loss) not in self._produced:
            raise UsageError("loss is not a node of this graph")

        adjoint: dict[int, np.ndarray] = {id(loss): np.array([[1.0]])}

        def acc(t: Tensor2, g: np.ndarray) -> None:
            key = id(t)
            if key in adjoint:
                adjoint[key] = adjoint[key] + g
            else:
                adjoint[key] = g

        for node in reversed(self._nodes):
            g = adjoint.get(id(node.out))
            if g is None:
                continue
            node.backward_fn(g, acc)

        result: dict[Tensor2, np.ndarray] = {}
        for leaf in self._leaves.values():
            contrib = adjoint.get(id(leaf))
            if contrib is None:
                contrib = np.zeros_like(leaf.data)
            if leaf.grad is None:
                leaf.grad = contrib.copy()
            else:
                leaf.grad = leaf.grad + contrib
            result[leaf] = leaf.grad
        return result
