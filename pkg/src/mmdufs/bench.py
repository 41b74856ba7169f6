"""Baseline selectors, F1 evaluation, and the experiment harness.

Baselines are kernel-fusion variants of the Laplacian Score: MC scores
against the Laplacian of the column-concatenated data, mmKS against
L_x + L_y, and mmKP against L_x L_y. The harness runs (method x seed) grids
over dataset presets and reports per-modality F1.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .datagen import ModalPair, gen_gaussian_mixture, gen_tree
from .gates import select_features
from .graph import gaussian_kernel, median_bandwidth, normalized_laplacian
from .operators import score_all_features, zscore_columns
from .tape import ContractError
from .trainer import RunConfig, train

__all__ = [
    "SelectionResult",
    "f1",
    "baseline_select",
    "run_experiment",
    "format_report",
    "DATASET_PRESETS",
    "SHARED_HYPERPARAMS",
    "DIFFERENTIAL_HYPERPARAMS",
]

BASELINES = ("MC", "mmKS", "mmKP")

# Baselines build kernels once on the raw data, where adding noisy features
# inflates all pairwise distances; a fraction of the median keeps the kernel
# resolving cluster-scale structure instead of saturating toward uniformity.
BASELINE_BANDWIDTH_FACTOR = 0.3


@dataclass
class SelectionResult:
    method: str
    selected_x: list[int]
    selected_y: list[int]
    f1_x: float | None = None
    f1_y: float | None = None
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)


def f1(selected, truth) -> float:
    """Standard F1 = 2TP / (2TP + FP + FN) on index sets."""
    tru = set(int(i) for i in truth)
    if not tru:
        raise ContractError("truth set must be nonempty")
    sel = set(int(i) for i in selected)
    tp = len(sel & tru)
    fp = len(sel - tru)
    fn = len(tru - sel)
    return 2 * tp / (2 * tp + fp + fn)


def _top_k(scores: np.ndarray, k: int) -> list[int]:
    if k < 0 or k > scores.size:
        raise ContractError(f"k={k} out of range for {scores.size} features")
    order = np.argsort(-scores, kind="stable")
    return sorted(int(i) for i in order[:k])


def baseline_select(pair: ModalPair, method: str, k_x: int, k_y: int) -> SelectionResult:
    """Top-k features per modality under a kernel-fusion baseline operator."""
    if method not in BASELINES:
        raise ContractError(f"unknown baseline '{method}'")
    start = time.perf_counter()
    bw = BASELINE_BANDWIDTH_FACTOR
    if method == "MC":
        concat = np.hstack([pair.x, pair.y])
        op = normalized_laplacian(gaussian_kernel(concat, bw * median_bandwidth(concat)))
    else:
        l_x = normalized_laplacian(gaussian_kernel(pair.x, bw * median_bandwidth(pair.x)))
        l_y = normalized_laplacian(gaussian_kernel(pair.y, bw * median_bandwidth(pair.y)))
        op = l_x + l_y if method == "mmKS" else l_x @ l_y
    sel_x = _top_k(score_all_features(pair.x, op, zscore=True), k_x)
    sel_y = _top_k(score_all_features(pair.y, op, zscore=True), k_y)
    result = SelectionResult(
        method=method,
        selected_x=sel_x,
        selected_y=sel_y,
        wall_time=time.perf_counter() - start,
    )
    if pair.truth_shared_x is not None:
        result.f1_x = f1(sel_x, pair.truth_shared_x)
    if pair.truth_shared_y is not None:
        result.f1_y = f1(sel_y, pair.truth_shared_y)
    return result


DATASET_PRESETS = {
    "gaussian": lambda seed: gen_gaussian_mixture(seed, 0),
    "gaussian+10": lambda seed: gen_gaussian_mixture(seed, 10),
    "gaussian+30": lambda seed: gen_gaussian_mixture(seed, 30),
    "gaussian+50": lambda seed: gen_gaussian_mixture(seed, 50),
    "tree": lambda seed: gen_tree(seed),
}

# Desk-scale settings for the shared-operator runs. Learning rate and the
# sparsity weights follow the published recipes; epoch counts are set to where
# the gate ranking has converged under this implementation's adaptive
# bandwidth (training past that point only adds saturation jitter), and the
# kernel bandwidth uses the calibrated 0.4 x median policy.
SHARED_HYPERPARAMS = {
    "gaussian": RunConfig(mode="shared", learning_rate=2.0, epochs=1000, lambda_x=1e-4, lambda_y=1e-4, b=1.0, bandwidth_scale=0.4),
    "gaussian+10": RunConfig(mode="shared", learning_rate=2.0, epochs=1000, lambda_x=1e-4, lambda_y=1e-4, b=1.0, bandwidth_scale=0.4),
    "gaussian+30": RunConfig(mode="shared", learning_rate=2.0, epochs=1000, lambda_x=1e-4, lambda_y=1e-4, b=1.0, bandwidth_scale=0.4),
    "gaussian+50": RunConfig(mode="shared", learning_rate=2.0, epochs=1000, lambda_x=1e-3, lambda_y=1e-4, b=1.0, bandwidth_scale=0.4),
    "tree": RunConfig(mode="shared", learning_rate=2.0, epochs=2000, lambda_x=1e-4, lambda_y=1e-4, b=1.0, batch_size=250, bandwidth_scale=0.4),
}

DIFFERENTIAL_HYPERPARAMS = {
    "gaussian": RunConfig(mode="differential", learning_rate=1.0, epochs=10000, lambda_x=0.4, lambda_y=0.4, c=1e-1, b=1e-1),
    "tree": RunConfig(mode="differential", learning_rate=2.0, epochs=10000, lambda_x=4.0, lambda_y=2.0, c=1e-3, b=1e-3),
}


def _mmdufs_select(pair: ModalPair, cfg: RunConfig, k_x: int, k_y: int) -> SelectionResult:
    start = time.perf_counter()
    if cfg.mode == "shared":
        truth = {"x": pair.truth_shared_x, "y": pair.truth_shared_y}
    else:
        truth = {"x": pair.truth_diff_x, "y": pair.truth_diff_y}
    result = train(pair, cfg, ground_truth={k: v for k, v in truth.items() if v is not None})
    sel_x = select_features(result.gates_x, "top-k", k=k_x)
    sel_y = select_features(result.gates_y, "top-k", k=k_y)
    out = SelectionResult(
        method="mmDUFS",
        selected_x=sel_x,
        selected_y=sel_y,
        wall_time=time.perf_counter() - start,
        extra={"final_log": result.log.last},
    )
    if truth["x"] is not None:
        out.f1_x = f1(sel_x, truth["x"])
    if truth["y"] is not None:
        out.f1_y = f1(sel_y, truth["y"])
    return out


def run_experiment(spec: dict) -> list[dict]:
    """Run every (method x seed) cell of an experiment and collect F1 rows.

    spec keys:
      dataset: preset name, or a ModalPair factory keyed by seed via "pair"
      methods: subset of {MC, mmKS, mmKP, mmDUFS}
      seeds:   list of seeds
      mode:    "shared" (default) or "differential" (mmDUFS only)
      epochs / batch_size / learning_rate / lambda_x / lambda_y / b / c:
               optional overrides of the preset hyperparameters
    Failures are recorded per cell; the experiment continues.
    """
    dataset = spec["dataset"]
    methods = spec.get("methods", list(BASELINES) + ["mmDUFS"])
    seeds = spec.get("seeds", [0])
    mode = spec.get("mode", "shared")

    rows = []
    for seed in seeds:
        if callable(dataset):
            pair, name = dataset(seed), spec.get("name", "custom")
        elif isinstance(dataset, ModalPair):
            pair, name = dataset, spec.get("name", "custom")
        else:
            if dataset not in DATASET_PRESETS:
                raise ContractError(f"unknown dataset preset '{dataset}'")
            pair, name = DATASET_PRESETS[dataset](seed), dataset

        if mode == "shared":
            truth_x, truth_y = pair.truth_shared_x, pair.truth_shared_y
        else:
            truth_x, truth_y = pair.truth_diff_x, pair.truth_diff_y
        k_x = spec.get("k_x", len(truth_x) if truth_x is not None else pair.x.shape[1])
        k_y = spec.get("k_y", len(truth_y) if truth_y is not None else pair.y.shape[1])

        for method in methods:
            row = {"dataset": name, "method": method, "seed": seed}
            try:
                if method == "mmDUFS":
                    table = SHARED_HYPERPARAMS if mode == "shared" else DIFFERENTIAL_HYPERPARAMS
                    cfg = table.get(name if isinstance(dataset, str) else "gaussian")
                    if cfg is None:
                        cfg = RunConfig(mode=mode)
                    overrides = {
                        k: spec[k]
                        for k in ("epochs", "batch_size", "learning_rate", "lambda_x", "lambda_y", "b", "c")
                        if k in spec
                    }
                    cfg = replace(cfg, mode=mode, seed=seed, **overrides)
                    res = _mmdufs_select(pair, cfg, k_x, k_y)
                else:
                    res = baseline_select(pair, method, k_x, k_y)
                row.update(f1_x=res.f1_x, f1_y=res.f1_y, wall_time=res.wall_time)
            except Exception as exc:  # record the failure, keep going
                row.update(f1_x=None, f1_y=None, wall_time=None, error=str(exc))
            rows.append(row)
    return rows


def mean_f1(rows: list[dict]) -> dict:
    """Mean F1 per (dataset, method, modality) over seeds, skipping failures."""
    acc: dict[tuple, list] = {}
    for row in rows:
        for mod in ("x", "y"):
            v = row.get(f"f1_{mod}")
            if v is not None:
                acc.setdefault((row["dataset"], row["method"], mod), []).append(v)
    return {k: float(np.mean(v)) for k, v in acc.items()}


def write_rows_csv(rows: list[dict], path) -> None:
    fields = ["dataset", "method", "seed", "f1_x", "f1_y", "wall_time", "error"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def format_report(rows: list[dict]) -> str:
    """Fixed-width mean-F1 table, one line per (dataset, modality)."""
    means = mean_f1(rows)
    datasets = list(dict.fromkeys(r["dataset"] for r in rows))
    methods = list(dict.fromkeys(r["method"] for r in rows))
    lines = []
    header = f"{'dataset':<16}{'mod':<5}" + "".join(f"{m:>10}" for m in methods)
    lines.append(header)
    lines.append("-" * len(header))
    for ds in datasets:
        for mod in ("x", "y"):
            cells = []
            for m in methods:
                v = means.get((ds, m, mod))
                cells.append(f"{v:>10.4f}" if v is not None else f"{'-':>10}")
            lines.append(f"{ds:<16}{mod.upper():<5}" + "".join(cells))
    return "\n".join(lines)
