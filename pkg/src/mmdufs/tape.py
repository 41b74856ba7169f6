"""Dense matrix arithmetic with a reverse-mode differentiation tape.

The tape records a fixed set of coarse matrix primitives (matmul, kernels,
normalization sandwiches, inverses, traces, gating, ...). Calling
:meth:`Tape.backward` on a scalar node returns exact gradients with respect
to every trainable leaf. Eigendecomposition is provided as an off-tape
analysis utility.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

__all__ = [
    "Tape",
    "Node",
    "DimensionError",
    "SingularMatrixError",
    "NumericalError",
    "ContractError",
    "eigh_descending",
    "PRIMITIVES",
]

_COND_LIMIT = 1e12


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class SingularMatrixError(ArithmeticError):
    """Matrix inverse requested for a numerically singular matrix."""


class NumericalError(FloatingPointError):
    """A primitive produced a non-finite value."""


class ContractError(RuntimeError):
    """An operation was called outside its contract."""


def _as_array(value) -> np.ndarray:
    out = np.asarray(value, dtype=np.float64)
    if not np.isfinite(out).all():
        raise NumericalError("input contains non-finite entries")
    return out


class Node:
    """One recorded value on the tape.

    Leaves hold data (optionally trainable); interior nodes remember the
    primitive that produced them, their inputs, and whatever the backward
    rule needs.
    """

    __slots__ = ("tape", "idx", "value", "op", "inputs", "cache", "trainable")

    def __init__(self, tape, idx, value, op, inputs, cache=None, trainable=False):
        self.tape = tape
        self.idx = idx
        self.value = value
        self.op = op
        self.inputs = inputs
        self.cache = cache
        self.trainable = trainable

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"Node(#{self.idx}, op={self.op}, shape={self.value.shape})"


class Tape:
    """Records primitives in topological order; replays gradients in reverse."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _record(self, value, op, inputs, cache=None, trainable=False) -> Node:
        value = np.asarray(value, dtype=np.float64)
        if not np.isfinite(value).all():
            raise NumericalError(f"primitive '{op}' produced non-finite values")
        node = Node(self, len(self.nodes), value, op, inputs, cache, trainable)
        self.nodes.append(node)
        return node

    # -- leaves ----------------------------------------------------------

    def leaf(self, value, trainable: bool = False) -> Node:
        return self._record(_as_array(value), "leaf", (), trainable=trainable)

    def constant(self, value) -> Node:
        return self.leaf(value, trainable=False)

    # -- primitives ------------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
            raise DimensionError(f"matmul: {a.value.shape} @ {b.value.shape}")
        return self._record(a.value @ b.value, "matmul", (a, b))

    def add(self, a: Node, b: Node) -> Node:
        if a.value.shape != b.value.shape:
            raise DimensionError(f"add: {a.value.shape} vs {b.value.shape}")
        return self._record(a.value + b.value, "add", (a, b))

    def sub(self, a: Node, b: Node) -> Node:
        if a.value.shape != b.value.shape:
            raise DimensionError(f"sub: {a.value.shape} vs {b.value.shape}")
        return self._record(a.value - b.value, "sub", (a, b))

    def scale(self, a: Node, alpha: float) -> Node:
        return self._record(a.value * float(alpha), "scale", (a,), cache=float(alpha))

    def hadamard(self, a: Node, b: Node) -> Node:
        if a.value.shape != b.value.shape:
            raise DimensionError(f"hadamard: {a.value.shape} vs {b.value.shape}")
        return self._record(a.value * b.value, "hadamard", (a, b))

    def exp(self, a: Node) -> Node:
        out = np.exp(a.value)
        return self._record(out, "exp", (a,), cache=out)

    def transpose(self, a: Node) -> Node:
        if a.value.ndim != 2:
            raise DimensionError("transpose needs a 2-D matrix")
        return self._record(a.value.T.copy(), "transpose", (a,))

    def row_sum(self, a: Node) -> Node:
        if a.value.ndim != 2:
            raise DimensionError("row_sum needs a 2-D matrix")
        return self._record(a.value.sum(axis=1), "row_sum", (a,))

    def sym_normalize(self, k: Node) -> Node:
        """D^{-1/2} K D^{-1/2} with D = diag of row sums of K."""
        kv = k.value
        if kv.ndim != 2 or kv.shape[0] != kv.shape[1]:
            raise DimensionError("sym_normalize needs a square matrix")
        d = kv.sum(axis=1)
        if np.any(d <= 0):
            raise ContractError("sym_normalize: nonpositive row sum")
        r = 1.0 / np.sqrt(d)
        out = kv * r[:, None] * r[None, :]
        return self._record(out, "sym_normalize", (k,), cache=(d, r))

    def inverse(self, a: Node) -> Node:
        av = a.value
        if av.ndim != 2 or av.shape[0] != av.shape[1]:
            raise DimensionError("inverse needs a square matrix")
        try:
            inv = np.linalg.inv(av)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError(str(exc)) from exc
        # 1-norm condition estimate; cheap relative to the factorization.
        cond = np.linalg.norm(av, 1) * np.linalg.norm(inv, 1)
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise SingularMatrixError(f"condition estimate {cond:.3e} exceeds {_COND_LIMIT:.0e}")
        return self._record(inv, "inverse", (a,), cache=inv)

    def trace(self, a: Node) -> Node:
        if a.value.ndim != 2 or a.value.shape[0] != a.value.shape[1]:
            raise DimensionError("trace needs a square matrix")
        return self._record(np.trace(a.value), "trace", (a,))

    def hard_sigmoid(self, a: Node) -> Node:
        """clamp01(0.5 + x); subgradient 1 strictly inside (0, 1), else 0."""
        shifted = 0.5 + a.value
        out = np.clip(shifted, 0.0, 1.0)
        mask = ((shifted > 0.0) & (shifted < 1.0)).astype(np.float64)
        return self._record(out, "hard_sigmoid", (a,), cache=mask)

    def col_gate(self, x: Node, z: Node) -> Node:
        """Scale column j of x by z[j]."""
        if x.value.ndim != 2 or z.value.ndim != 1 or x.value.shape[1] != z.value.shape[0]:
            raise DimensionError(f"col_gate: {x.value.shape} with gates {z.value.shape}")
        return self._record(x.value * z.value[None, :], "col_gate", (x, z))

    def sq_dists(self, x: Node) -> Node:
        """All pairwise squared Euclidean distances between rows of x."""
        if x.value.ndim != 2:
            raise DimensionError("sq_dists needs a 2-D matrix")
        sq = np.einsum("ij,ij->i", x.value, x.value)
        d = sq[:, None] + sq[None, :] - 2.0 * (x.value @ x.value.T)
        np.maximum(d, 0.0, out=d)
        np.fill_diagonal(d, 0.0)
        return self._record(d, "sq_dists", (x,))

    def open_gate_expectation(self, mu: Node, sigma: float) -> Node:
        """Sum over i of Phi((0.5 + mu_i)/sigma): expected count of open gates."""
        if mu.value.ndim != 1:
            raise DimensionError("open_gate_expectation needs a vector")
        if sigma <= 0:
            raise ContractError("gate noise scale must be positive")
        t = (0.5 + mu.value) / sigma
        val = float(ndtr(t).sum())
        return self._record(val, "open_gate_expectation", (mu,), cache=(t, float(sigma)))

    # -- generic dispatch ------------------------------------------------

    def apply(self, kind: str, *args, **kwargs) -> Node:
        if kind not in PRIMITIVES:
            raise ContractError(f"unknown primitive '{kind}'")
        return getattr(self, kind)(*args, **kwargs)

    # -- reverse pass ----------------------------------------------------

    def backward(self, loss: Node) -> dict[int, np.ndarray]:
        """Gradient of a scalar node w.r.t. every trainable leaf.

        Returns a map from leaf node index to gradient array; trainable
        leaves the loss never touches get zeros.
        """
        if loss.tape is not self:
            raise ContractError("loss node belongs to a different tape")
        if loss.value.size != 1:
            raise ContractError("backward requires a scalar node")

        grads: dict[int, np.ndarray] = {loss.idx: np.ones_like(loss.value)}
        for node in reversed(self.nodes[: loss.idx + 1]):
            g = grads.pop(node.idx, None)
            if g is None or node.op == "leaf":
                if g is not None:
                    grads[node.idx] = g  # keep leaf grads
                continue
            for inp, contrib in self._vjp(node, g):
                acc = grads.get(inp.idx)
                grads[inp.idx] = contrib if acc is None else acc + contrib

        out = {}
        for node in self.nodes:
            if node.op == "leaf" and node.trainable:
                out[node.idx] = grads.get(node.idx, np.zeros_like(node.value))
        return out

    def grad(self, loss: Node, leaf: Node) -> np.ndarray:
        return self.backward(loss)[leaf.idx]

    def _vjp(self, node: Node, g: np.ndarray):
        op = node.op
        a = node.inputs[0]
        if op == "matmul":
            b = node.inputs[1]
            yield a, g @ b.value.T
            yield b, a.value.T @ g
        elif op == "add":
            yield a, g
            yield node.inputs[1], g
        elif op == "sub":
            yield a, g
            yield node.inputs[1], -g
        elif op == "scale":
            yield a, g * node.cache
        elif op == "hadamard":
            b = node.inputs[1]
            yield a, g * b.value
            yield b, g * a.value
        elif op == "exp":
            yield a, g * node.cache
        elif op == "transpose":
            yield a, g.T
        elif op == "row_sum":
            yield a, np.broadcast_to(g[:, None], a.value.shape).copy()
        elif op == "sym_normalize":
            d, r = node.cache
            k = a.value
            gk = g * r[:, None] * r[None, :]
            coef = -0.5 * d ** -1.5
            u = coef * np.einsum("ij,ij,j->i", g, k, r)
            v = coef * np.einsum("ij,ij,i->j", g, k, r)
            # Both degree corrections attach to the row index of K: d_i is a
            # row sum, so dK_pq perturbs only d_p, hence r_p, for every q.
            yield a, gk + (u + v)[:, None]
        elif op == "inverse":
            inv = node.cache
            yield a, -inv.T @ g @ inv.T
        elif op == "trace":
            n = a.value.shape[0]
            yield a, float(g) * np.eye(n)
        elif op == "hard_sigmoid":
            yield a, g * node.cache
        elif op == "col_gate":
            x, z = node.inputs
            yield x, g * z.value[None, :]
            yield z, np.einsum("ij,ij->j", g, x.value)
        elif op == "sq_dists":
            h = g + g.T
            yield a, 2.0 * (h.sum(axis=1)[:, None] * a.value - h @ a.value)
        elif op == "open_gate_expectation":
            t, sigma = node.cache
            pdf = np.exp(-0.5 * t * t) / (np.sqrt(2.0 * np.pi) * sigma)
            yield a, float(g) * pdf
        else:  # pragma: no cover
            raise ContractError(f"no backward rule for '{op}'")


PRIMITIVES = (
    "matmul",
    "add",
    "sub",
    "scale",
    "hadamard",
    "exp",
    "transpose",
    "row_sum",
    "sym_normalize",
    "inverse",
    "trace",
    "hard_sigmoid",
    "col_gate",
    "sq_dists",
    "open_gate_expectation",
)


def eigh_descending(a: np.ndarray, sym_tol: float = 1e-8):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    The input is symmetrized as (A + A^T)/2 before decomposition. This is an
    analysis utility only; it is never recorded on a tape.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("eigendecomposition needs a square matrix")
    asym = np.abs(a - a.T).max() if a.size else 0.0
    scale = max(np.abs(a).max(), 1.0)
    if asym > sym_tol * scale:
        raise ContractError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    sym = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(sym)
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]
