"""Training loop for gate optimization with the shared and differential losses.

Each epoch samples stochastic gates, rebuilds the kernels, Laplacians and
graph operators from the gated data on a fresh tape, evaluates the mode's
loss, and backpropagates to the gate parameters. A warm-up grid search over
the sparsity weight lambda is provided for tuning.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .gates import GateState, select_features
from .graph import KernelConfig, build_graph_pair
from .operators import differential_operator, shared_operator, zscore_columns
from .tape import ContractError, Node, Tape
from .datagen import ModalPair

__all__ = [
    "RunConfig",
    "TrainLog",
    "TrainResult",
    "TrainingDiverged",
    "shared_loss",
    "differential_loss",
    "train",
    "warmup_tune",
]


@dataclass
class RunConfig:
    """All hyperparameters of one training run."""

    mode: str = "shared"  # "shared" | "differential"
    lambda_x: float = 1e-4
    lambda_y: float = 1e-4
    c: float = 0.1
    b: float = 1.0
    learning_rate: float = 1.0
    epochs: int = 1000
    batch_size: int | None = None  # None = full batch
    optimizer: str = "sgd"  # "sgd" | "adam"
    seed: int = 0
    bandwidth_x: float | str = "median"
    bandwidth_y: float | str = "median"
    bandwidth_scale: float = 0.5
    normalize_laplacian: bool = True
    sigma_gate: float = 0.5
    recompute_bandwidth: bool = True
    standardize: bool = True
    log_every: int = 1

    def __post_init__(self):
        if self.mode not in ("shared", "differential"):
            raise ContractError(f"unknown mode '{self.mode}'")
        if self.optimizer not in ("sgd", "adam"):
            raise ContractError(f"unknown optimizer '{self.optimizer}'")
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if self.lambda_x < 0 or self.lambda_y < 0:
            raise ContractError("lambda must be nonnegative")
        if self.c <= 0 or self.b <= 0:
            raise ContractError("c and b must be positive")
        if self.learning_rate <= 0:
            raise ContractError("learning rate must be positive")
        if self.batch_size is not None and self.batch_size < 2:
            raise ContractError("batch size must be >= 2")
        if self.bandwidth_scale <= 0:
            raise ContractError("bandwidth scale must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls(**json.loads(text))


@dataclass
class TrainLog:
    """Per-epoch training records."""

    rows: list[dict] = field(default_factory=list)

    def append(self, **record):
        self.rows.append(record)

    @property
    def last(self) -> dict | None:
        return self.rows[-1] if self.rows else None

    def to_csv(self, path):
        if not self.rows:
            return
        fields = list(self.rows[0].keys())
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(self.rows)


@dataclass
class TrainResult:
    gates_x: GateState
    gates_y: GateState
    log: TrainLog
    bandwidth_x: float
    bandwidth_y: float


class TrainingDiverged(ArithmeticError):
    """Loss became non-finite; carries the epoch and last finite record."""

    def __init__(self, epoch: int, last_record: dict | None):
        self.epoch = epoch
        self.last_record = last_record
        super().__init__(f"non-finite loss at epoch {epoch}; last record: {last_record}")


def shared_loss(
    tape: Tape,
    gated_x: Node,
    gated_y: Node,
    p_shared: Node,
    mu_x: Node,
    mu_y: Node,
    lambda_x: float,
    lambda_y: float,
    sigma_gate: float,
) -> tuple[Node, Node, Node]:
    """-(1/n)Tr[X~T P X~] - (1/n)Tr[Y~T P Y~] + lam_x E|z_x|_0 + lam_y E|z_y|_0.

    Returns (loss, score_x, score_y); the score nodes are the raw traces.
    """
    n = gated_x.value.shape[0]
    score_x = tape.trace(tape.matmul(tape.transpose(gated_x), tape.matmul(p_shared, gated_x)))
    score_y = tape.trace(tape.matmul(tape.transpose(gated_y), tape.matmul(p_shared, gated_y)))
    loss = tape.add(tape.scale(score_x, -1.0 / n), tape.scale(score_y, -1.0 / n))
    loss = tape.add(loss, tape.scale(tape.open_gate_expectation(mu_x, sigma_gate), lambda_x))
    loss = tape.add(loss, tape.scale(tape.open_gate_expectation(mu_y, sigma_gate), lambda_y))
    return loss, score_x, score_y


def differential_loss(
    tape: Tape,
    gated: Node,
    q_op: Node,
    mu: Node,
    lam: float,
    sigma_gate: float,
) -> tuple[Node, Node]:
    """(1/n)(-Tr[D~T Q D~] + lam E|z|_0). Returns (loss, score).

    Unlike the shared objective, the whole differential objective — including
    the regularizer — is normalized per sample. The published regularization
    strengths for differential runs are calibrated against score terms that
    grow with the sample count; keeping the regularizer on the same per-sample
    scale preserves that balance for any n and yields gradual gate dynamics
    instead of a first-step collapse.
    """
    n = gated.value.shape[0]
    score = tape.trace(tape.matmul(tape.transpose(gated), tape.matmul(q_op, gated)))
    loss = tape.add(
        tape.scale(score, -1.0 / n),
        tape.scale(tape.open_gate_expectation(mu, sigma_gate), lam / n),
    )
    return loss, score


class _Optimizer:
    def __init__(self, kind: str, lr: float, sizes: list[int]):
        self.kind = kind
        self.lr = lr
        self.t = 0
        if kind == "adam":
            self.m = [np.zeros(s) for s in sizes]
            self.v = [np.zeros(s) for s in sizes]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        self.t += 1
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p -= self.lr * g
            return
        b1, b2, eps = 0.9, 0.999, 1e-8
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1**self.t)
            vhat = self.v[i] / (1 - b2**self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + eps)


def _f1_against(selected, truth) -> float:
    sel = set(int(i) for i in selected)
    tru = set(int(i) for i in truth)
    tp = len(sel & tru)
    fp = len(sel - tru)
    fn = len(tru - sel)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def _kernel_cfg(bandwidth, normalize, scale=1.0) -> KernelConfig:
    return KernelConfig(bandwidth=bandwidth, normalize=normalize, scale=scale)


def unit_norm_columns(data: np.ndarray) -> np.ndarray:
    """Z-score columns, then rescale so every column has unit Euclidean norm.

    This is the normalized-feature convention of the Laplacian Score: each
    feature contributes on the same scale regardless of sample count, which
    keeps the score term commensurate with the gate regularizer.
    """
    z = zscore_columns(np.asarray(data, dtype=np.float64))
    return z / np.sqrt(data.shape[0])


def _prepared(pair: ModalPair, cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm feature columns unless standardization is disabled."""
    if not cfg.standardize:
        return np.asarray(pair.x, dtype=np.float64), np.asarray(pair.y, dtype=np.float64)
    return unit_norm_columns(pair.x), unit_norm_columns(pair.y)


def train(
    pair: ModalPair,
    cfg: RunConfig,
    ground_truth: dict | None = None,
) -> TrainResult:
    """Optimize both gate vectors; deterministic for a fixed config and seed.

    ground_truth maps "x"/"y" to index arrays; when given, top-k selection F1
    (k = truth size) is logged per epoch.
    """
    n = pair.n_samples
    if cfg.batch_size is not None and cfg.batch_size > n:
        raise ContractError(f"batch size {cfg.batch_size} exceeds sample count {n}")

    data_x, data_y = _prepared(pair, cfg)

    gates_x = GateState.zeros(pair.x.shape[1], sigma=cfg.sigma_gate, seed=cfg.seed)
    gates_y = GateState.zeros(pair.y.shape[1], sigma=cfg.sigma_gate, seed=cfg.seed + 1)
    batch_rng = np.random.default_rng(cfg.seed + 2)
    opt = _Optimizer(cfg.optimizer, cfg.learning_rate, [gates_x.n_features, gates_y.n_features])

    cfg_x = _kernel_cfg(cfg.bandwidth_x, cfg.normalize_laplacian, cfg.bandwidth_scale)
    cfg_y = _kernel_cfg(cfg.bandwidth_y, cfg.normalize_laplacian, cfg.bandwidth_scale)
    frozen_bw: tuple[float, float] | None = None
    log = TrainLog()

    for epoch in range(cfg.epochs):
        if cfg.batch_size is None or cfg.batch_size >= n:
            xb, yb = data_x, data_y
        else:
            idx = batch_rng.choice(n, size=cfg.batch_size, replace=False)
            xb, yb = data_x[idx], data_y[idx]

        tape = Tape()
        mu_x = tape.leaf(gates_x.mu, trainable=True)
        mu_y = tape.leaf(gates_y.mu, trainable=True)
        z_x = tape.hard_sigmoid(tape.add(mu_x, tape.constant(gates_x.draw_noise())))
        z_y = tape.hard_sigmoid(tape.add(mu_y, tape.constant(gates_y.draw_noise())))
        gated_x = tape.col_gate(tape.constant(xb), z_x)
        gated_y = tape.col_gate(tape.constant(yb), z_y)

        graphs = build_graph_pair(
            tape,
            gated_x,
            gated_y,
            cfg_x,
            cfg_y,
            bandwidth_x=None if cfg.recompute_bandwidth else (frozen_bw[0] if frozen_bw else None),
            bandwidth_y=None if cfg.recompute_bandwidth else (frozen_bw[1] if frozen_bw else None),
        )
        frozen_bw = (graphs.bandwidth_x, graphs.bandwidth_y)

        if cfg.mode == "shared":
            p = shared_operator(tape, graphs.l_x, graphs.l_y, b=cfg.b)
            loss, s_x, s_y = shared_loss(
                tape, gated_x, gated_y, p, mu_x, mu_y, cfg.lambda_x, cfg.lambda_y, cfg.sigma_gate
            )
            grads = tape.backward(loss)
            gx, gy = grads[mu_x.idx], grads[mu_y.idx]
            loss_val = float(loss.value)
            score_x, score_y = float(s_x.value), float(s_y.value)
        else:
            q_x = differential_operator(tape, graphs.l_x, graphs.l_y, c=cfg.c, b=cfg.b)
            q_y = differential_operator(tape, graphs.l_y, graphs.l_x, c=cfg.c, b=cfg.b)
            loss_x, s_x = differential_loss(tape, gated_x, q_x, mu_x, cfg.lambda_x, cfg.sigma_gate)
            loss_y, s_y = differential_loss(tape, gated_y, q_y, mu_y, cfg.lambda_y, cfg.sigma_gate)
            # Each modality's gates follow only their own loss.
            gx = tape.backward(loss_x)[mu_x.idx]
            gy = tape.backward(loss_y)[mu_y.idx]
            loss_val = float(loss_x.value) + float(loss_y.value)
            score_x, score_y = float(s_x.value), float(s_y.value)

        if not np.isfinite(loss_val):
            raise TrainingDiverged(epoch, log.last)

        opt.step([gates_x.mu, gates_y.mu], [gx, gy])

        if epoch % cfg.log_every == 0 or epoch == cfg.epochs - 1:
            record = {
                "epoch": epoch,
                "loss": loss_val,
                "score_x": score_x,
                "score_y": score_y,
                "reg_x": float(np.sum(_open_prob(gates_x))),
                "reg_y": float(np.sum(_open_prob(gates_y))),
                "open_x": int(np.count_nonzero(gates_x.eval_gates() > 0)),
                "open_y": int(np.count_nonzero(gates_y.eval_gates() > 0)),
            }
            if ground_truth:
                for key, gates in (("x", gates_x), ("y", gates_y)):
                    truth = ground_truth.get(key)
                    if truth is not None:
                        sel = select_features(gates, "top-k", k=len(truth))
                        record[f"f1_{key}"] = _f1_against(sel, truth)
            log.append(**record)

    return TrainResult(
        gates_x=gates_x,
        gates_y=gates_y,
        log=log,
        bandwidth_x=frozen_bw[0],
        bandwidth_y=frozen_bw[1],
    )


def _open_prob(gates: GateState) -> np.ndarray:
    from scipy.special import ndtr

    return ndtr((0.5 + gates.mu) / gates.sigma)


def _eval_scores(pair: ModalPair, cfg: RunConfig, result: TrainResult) -> tuple[float, float]:
    """Raw trace scores Tr[X~T Op X~], Tr[Y~T Op Y~] at deterministic gates."""
    data_x, data_y = _prepared(pair, cfg)
    tape = Tape()
    gated_x = tape.col_gate(tape.constant(data_x), tape.constant(result.gates_x.eval_gates()))
    gated_y = tape.col_gate(tape.constant(data_y), tape.constant(result.gates_y.eval_gates()))
    graphs = build_graph_pair(
        tape,
        gated_x,
        gated_y,
        _kernel_cfg(cfg.bandwidth_x, cfg.normalize_laplacian, cfg.bandwidth_scale),
        _kernel_cfg(cfg.bandwidth_y, cfg.normalize_laplacian, cfg.bandwidth_scale),
        bandwidth_x=result.bandwidth_x,
        bandwidth_y=result.bandwidth_y,
    )
    if cfg.mode == "shared":
        op = shared_operator(tape, graphs.l_x, graphs.l_y, b=cfg.b)
        tr_x = tape.trace(tape.matmul(tape.transpose(gated_x), tape.matmul(op, gated_x)))
        tr_y = tape.trace(tape.matmul(tape.transpose(gated_y), tape.matmul(op, gated_y)))
    else:
        q_x = differential_operator(tape, graphs.l_x, graphs.l_y, c=cfg.c, b=cfg.b)
        q_y = differential_operator(tape, graphs.l_y, graphs.l_x, c=cfg.c, b=cfg.b)
        tr_x = tape.trace(tape.matmul(tape.transpose(gated_x), tape.matmul(q_x, gated_x)))
        tr_y = tape.trace(tape.matmul(tape.transpose(gated_y), tape.matmul(q_y, gated_y)))
    return float(tr_x.value), float(tr_y.value)


def warmup_tune(
    pair: ModalPair,
    cfg_template: RunConfig,
    lambda_grid,
    warmup_epochs: int = 1000,
    n_selected_x: int | None = None,
    n_selected_y: int | None = None,
) -> tuple[float, float, list[dict]]:
    """Short-run grid search over lambda maximizing the mean operator scores.

    For each grid value, trains for warmup_epochs with lambda_x = lambda_y =
    that value and evaluates the mean score per feature and sample at
    deterministic gates. Shared mode maximizes the combined mean score (one
    lambda for both modalities); differential mode picks lambda_x and
    lambda_y from their own scores. Ties resolve to the smaller lambda.

    Returns (lambda_x, lambda_y, per-grid-point records).
    """
    grid = sorted(float(v) for v in lambda_grid)
    if not grid:
        raise ContractError("lambda grid must be nonempty")
    n = pair.n_samples
    if cfg_template.mode == "shared":
        truth_x, truth_y = pair.truth_shared_x, pair.truth_shared_y
    else:
        truth_x, truth_y = pair.truth_diff_x, pair.truth_diff_y
    d_x = n_selected_x or (len(truth_x) if truth_x is not None else pair.x.shape[1])
    d_y = n_selected_y or (len(truth_y) if truth_y is not None else pair.y.shape[1])

    records = []
    for lam in grid:
        cfg = replace(cfg_template, lambda_x=lam, lambda_y=lam, epochs=warmup_epochs)
        result = train(pair, cfg)
        tr_x, tr_y = _eval_scores(pair, cfg, result)
        if cfg.mode == "shared":
            s = (tr_x / d_x + tr_y / d_y) / (2.0 * n)
            records.append({"lambda": lam, "score_shared": s})
        else:
            records.append(
                {"lambda": lam, "score_x": tr_x / (d_x * n), "score_y": tr_y / (d_y * n)}
            )

    def argmax(key):
        best = max(r[key] for r in records)
        for r in records:  # grid is sorted ascending: first hit = smallest lambda
            if r[key] == best:
                return r["lambda"]

    if cfg_template.mode == "shared":
        lam = argmax("score_shared")
        return lam, lam, records
    return argmax("score_x"), argmax("score_y"), records
