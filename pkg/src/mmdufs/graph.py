"""Gaussian affinity kernels and normalized graph Laplacians.

Everything here can be built either as plain arrays or on a differentiation
tape, so that gradients flow from Laplacian-based losses back to the feature
gates that scaled the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tape import ContractError, DimensionError, Node, NumericalError, Tape

__all__ = [
    "KernelConfig",
    "GraphPair",
    "gaussian_kernel",
    "median_bandwidth",
    "normalized_laplacian",
    "kernel_on_tape",
    "laplacian_on_tape",
    "build_graph_pair",
]


@dataclass
class KernelConfig:
    """Bandwidth and normalization policy for one modality's kernel.

    bandwidth: explicit positive value, or "median" to use the median of all
    nonzero pairwise distances of the (gated) data. scale multiplies the
    resolved median (ignored for explicit bandwidths).
    """

    bandwidth: float | str = "median"
    normalize: bool = True
    scale: float = 1.0

    def __post_init__(self):
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median":
                raise ContractError(f"unknown bandwidth policy '{self.bandwidth}'")
        elif self.bandwidth <= 0:
            raise ContractError("explicit bandwidth must be positive")
        if self.scale <= 0:
            raise ContractError("bandwidth scale must be positive")

    def resolve(self, data: np.ndarray) -> float:
        if self.bandwidth == "median":
            return self.scale * median_bandwidth(data)
        return float(self.bandwidth)


@dataclass
class GraphPair:
    """Laplacians (as tape nodes) plus resolved bandwidths for both modalities."""

    l_x: Node
    l_y: Node
    degrees_x: np.ndarray
    degrees_y: np.ndarray
    bandwidth_x: float = field(default=1.0)
    bandwidth_y: float = field(default=1.0)


def median_bandwidth(data: np.ndarray) -> float:
    """Median of nonzero pairwise Euclidean distances; 1.0 if all coincide."""
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    if n < 2:
        raise ContractError("median bandwidth needs at least two rows")
    sq = np.einsum("ij,ij->i", data, data)
    d2 = sq[:, None] + sq[None, :] - 2.0 * data @ data.T
    iu = np.triu_indices(n, k=1)
    dist = np.sqrt(np.maximum(d2[iu], 0.0))
    dist = dist[dist > 0]
    if dist.size == 0:
        return 1.0
    return float(np.median(dist))


def gaussian_kernel(data: np.ndarray, bandwidth: float) -> np.ndarray:
    """K_ij = exp(-||row_i - row_j||^2 / (2 sigma^2)). Plain-array version."""
    data = np.asarray(data, dtype=np.float64)
    if not np.isfinite(data).all():
        raise NumericalError("kernel input contains non-finite entries")
    if data.shape[0] < 2:
        raise ContractError("kernel needs at least two rows")
    if bandwidth <= 0:
        raise ContractError("bandwidth must be positive")
    sq = np.einsum("ij,ij->i", data, data)
    d2 = sq[:, None] + sq[None, :] - 2.0 * data @ data.T
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    k = np.exp(-d2 / (2.0 * bandwidth**2))
    return 0.5 * (k + k.T)


def normalized_laplacian(k: np.ndarray) -> np.ndarray:
    """L = D^{-1/2} K D^{-1/2}. Plain-array version."""
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise DimensionError("normalized_laplacian needs a square kernel")
    d = k.sum(axis=1)
    if np.any(d <= 0):
        raise ContractError("kernel has a nonpositive row sum")
    r = 1.0 / np.sqrt(d)
    return k * r[:, None] * r[None, :]


def kernel_on_tape(tape: Tape, data: Node, bandwidth: float) -> Node:
    """Gaussian kernel of a (gated) data node, recorded on the tape."""
    if bandwidth <= 0:
        raise ContractError("bandwidth must be positive")
    d2 = tape.sq_dists(data)
    return tape.exp(tape.scale(d2, -1.0 / (2.0 * bandwidth**2)))


def laplacian_on_tape(tape: Tape, data: Node, bandwidth: float, normalize: bool = True) -> Node:
    k = kernel_on_tape(tape, data, bandwidth)
    return tape.sym_normalize(k) if normalize else k


def build_graph_pair(
    tape: Tape,
    gated_x: Node,
    gated_y: Node,
    cfg_x: KernelConfig,
    cfg_y: KernelConfig,
    bandwidth_x: float | None = None,
    bandwidth_y: float | None = None,
) -> GraphPair:
    """Kernels and Laplacians for both modalities from the gated data nodes.

    Bandwidths are resolved from the configs on the current gated values
    unless frozen values are passed in; either way the bandwidth is treated
    as a constant for differentiation.
    """
    if gated_x.value.shape[0] != gated_y.value.shape[0]:
        raise DimensionError("modalities must share the sample count")
    bw_x = bandwidth_x if bandwidth_x is not None else cfg_x.resolve(gated_x.value)
    bw_y = bandwidth_y if bandwidth_y is not None else cfg_y.resolve(gated_y.value)

    k_x = kernel_on_tape(tape, gated_x, bw_x)
    k_y = kernel_on_tape(tape, gated_y, bw_y)
    l_x = tape.sym_normalize(k_x) if cfg_x.normalize else k_x
    l_y = tape.sym_normalize(k_y) if cfg_y.normalize else k_y
    return GraphPair(
        l_x=l_x,
        l_y=l_y,
        degrees_x=k_x.value.sum(axis=1),
        degrees_y=k_y.value.sum(axis=1),
        bandwidth_x=bw_x,
        bandwidth_y=bw_y,
    )
