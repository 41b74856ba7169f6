"""Stochastic feature gates.

A gate for feature i is z_i = clamp01(0.5 + mu_i + eps_i) with
eps_i ~ N(0, sigma^2) during training and eps_i = 0 at evaluation time.
The expected number of open gates, sum_i Phi((0.5 + mu_i)/sigma), serves as
a differentiable sparsity regularizer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm

from .tape import ContractError

__all__ = [
    "GateState",
    "sample_gates",
    "expected_l0",
    "expected_l0_grad",
    "apply_gates",
    "select_features",
    "save_gates_csv",
    "load_gates_csv",
]

CONVERGED_TOL = 1e-6


@dataclass
class GateState:
    """Per-feature gate parameters; sigma stays fixed for the whole run."""

    mu: np.ndarray
    sigma: float = 0.5
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).copy()
        if self.sigma <= 0:
            raise ContractError("gate noise scale must be positive")
        self._rng = np.random.default_rng(self.seed)

    @classmethod
    def zeros(cls, n_features: int, sigma: float = 0.5, seed: int = 0) -> "GateState":
        return cls(mu=np.zeros(n_features), sigma=sigma, seed=seed)

    @property
    def n_features(self) -> int:
        return self.mu.size

    def draw_noise(self) -> np.ndarray:
        return self._rng.normal(0.0, self.sigma, size=self.mu.size)

    def eval_gates(self) -> np.ndarray:
        return np.clip(0.5 + self.mu, 0.0, 1.0)


def sample_gates(state: GateState, train_mode: bool) -> np.ndarray:
    """Gate values; fresh Gaussian noise per call in train mode."""
    eps = state.draw_noise() if train_mode else 0.0
    return np.clip(0.5 + state.mu + eps, 0.0, 1.0)


def expected_l0(state: GateState) -> float:
    """Exact expectation of the number of gates with z > 0."""
    return float(ndtr((0.5 + state.mu) / state.sigma).sum())


def expected_l0_grad(state: GateState) -> np.ndarray:
    """d expected_l0 / d mu, elementwise: phi((0.5+mu)/sigma)/sigma."""
    return norm.pdf((0.5 + state.mu) / state.sigma) / state.sigma


def apply_gates(data: np.ndarray, z: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if data.shape[1] != z.size:
        raise ContractError(f"{z.size} gates for {data.shape[1]} columns")
    return data * z[None, :]


def select_features(state: GateState, policy: str = "top-k", k: int | None = None) -> list[int]:
    """Selected feature indices.

    "converged": gates whose deterministic value reached 1.
    "top-k": indices of the k largest raw mu, ties broken by lower index.
    """
    if policy == "converged":
        return list(np.flatnonzero(state.eval_gates() >= 1.0 - CONVERGED_TOL))
    if policy == "top-k":
        if k is None or k < 0 or k > state.n_features:
            raise ContractError(f"top-k needs 0 <= k <= {state.n_features}, got {k}")
        # stable sort on -mu keeps lower indices first among ties
        order = np.argsort(-state.mu, kind="stable")
        return sorted(int(i) for i in order[:k])
    raise ContractError(f"unknown selection policy '{policy}'")


def save_gates_csv(state: GateState, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "mu", "eval_gate"])
        for i, (m, z) in enumerate(zip(state.mu, state.eval_gates())):
            writer.writerow([i, repr(float(m)), repr(float(z))])


def load_gates_csv(path, sigma: float = 0.5) -> GateState:
    mus = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # header
        for row in reader:
            mus.append(float(row[1]))
    return GateState(mu=np.array(mus), sigma=sigma)
