"""Training loop: BCE loss, Adam, batch label masking, validation checkpointing."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .evalkit import auc
from .graphbuild import ReviewGraph
from .model import (
    RISK_FRAUD,
    RISK_NORMAL,
    RISK_UNKNOWN,
    ModelConfig,
    as_tensors,
    forward,
    init_params,
    param_names,
)
from .records import TRAIN, UNKNOWN, VALID, SplitAssignment


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 256
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    early_stop_patience: int = 10
    grad_clip: float = 5.0  # global L2 norm; <= 0 disables

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def bce_loss(probabilities: np.ndarray, targets: np.ndarray, node_subset: np.ndarray) -> float:
    """Mean BCE over a node subset, probabilities clamped to [1e-7, 1-1e-7]."""
    subset = np.asarray(node_subset, dtype=np.int64)
    if subset.size == 0:
        raise ValueError("node_subset must be nonempty")
    p = np.clip(np.asarray(probabilities, dtype=np.float64)[subset], 1e-7, 1.0 - 1e-7)
    y = np.asarray(targets, dtype=np.float64)[subset]
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
            v={k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """One Adam update with bias correction, in place; advances state.t."""
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name].astype(np.float64)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        params[name] = (p.astype(np.float64) - config.lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)).astype(p.dtype)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for name in grads:
            grads[name] = grads[name] * scale
    return total


def build_risk_labels(
    split: SplitAssignment,
    labels: np.ndarray,
    batch: np.ndarray,
    mode: str,
) -> np.ndarray:
    """Per-node risk vocabulary indices for one forward pass.

    train mode: off-batch train nodes show their label; batch nodes, valid and
    test nodes are unknown. eval mode: all train nodes show their label.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    batch = np.asarray(batch, dtype=np.int64)
    is_train = split.tags == TRAIN
    if mode == "train" and batch.size and not np.all(is_train[batch]):
        raise ValueError("batch contains non-train nodes")
    risk = np.full(split.n_nodes, RISK_UNKNOWN, dtype=np.int64)
    visible = is_train & (labels != UNKNOWN)
    if mode == "train":
        in_batch = np.zeros(split.n_nodes, dtype=bool)
        in_batch[batch] = True
        visible &= ~in_batch
    risk[visible & (labels == 0)] = RISK_NORMAL
    risk[visible & (labels == 1)] = RISK_FRAUD
    return risk


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    best_params: dict[str, np.ndarray]
    best_valid_auc: float
    best_epoch: int
    log: list[dict] = field(default_factory=list)


def train(
    graph: ReviewGraph,
    x: np.ndarray,
    features: np.ndarray | None,
    split: SplitAssignment,
    model_config: ModelConfig,
    train_config: TrainConfig,
    log_path=None,
) -> TrainResult:
    """Full-graph mini-batch training with validation-AUC checkpointing.

    Per batch the sampled train nodes are label-masked, then
    forward -> BCE -> backward -> Adam. Stops early after
    ``early_stop_patience`` epochs without validation improvement. On NaN loss
    the last good parameters are retained and training aborts.
    """
    labels = graph.labels
    train_nodes = split.nodes(TRAIN)
    train_nodes = train_nodes[labels[train_nodes] != UNKNOWN]
    if train_nodes.size == 0:
        raise ValueError("no labeled train nodes")
    valid_nodes = split.nodes(VALID)
    valid_nodes = valid_nodes[labels[valid_nodes] != UNKNOWN]

    rng = np.random.default_rng(train_config.seed)
    params = init_params(model_config, train_config.seed)
    state = AdamState.init(params)
    best_params = {k: v.copy() for k, v in params.items()}
    best_auc = -np.inf
    best_epoch = -1
    stale = 0
    log_rows: list[dict] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(train_config.epochs):
            order = rng.permutation(train_nodes)
            epoch_losses = []
            diverged = False
            for start in range(0, len(order), train_config.batch_size):
                batch = order[start:start + train_config.batch_size]
                risk = build_risk_labels(split, labels, batch, "train")
                tensors = as_tensors(params)
                prob = forward(x, features, risk, graph, tensors, model_config)
                loss = ad.bce_on_subset(prob, np.maximum(labels, 0), batch)
                loss_val = float(loss.data)
                if not np.isfinite(loss_val):
                    diverged = True
                    break
                loss.backward()
                grads = {name: tensors[name].grad for name in param_names(model_config)}
                if any(g is None or not np.all(np.isfinite(g)) for g in grads.values()):
                    raise FloatingPointError("non-finite gradient")
                clip_gradients(grads, train_config.grad_clip)
                adam_step(params, grads, state, train_config)
                epoch_losses.append(loss_val)
            if diverged:
                params = best_params
                break
            valid_auc = _validation_auc(graph, x, features, split, labels, valid_nodes,
                                        params, model_config)
            row = {
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)) if epoch_losses else None,
                "valid_auc": valid_auc,
            }
            log_rows.append(row)
            if log_fh:
                log_fh.write(json.dumps(row) + "\n")
                log_fh.flush()
            if valid_auc is not None and valid_auc > best_auc:
                best_auc = valid_auc
                best_epoch = epoch
                best_params = {k: v.copy() for k, v in params.items()}
                stale = 0
            else:
                stale += 1
                if stale >= train_config.early_stop_patience:
                    break
    finally:
        if log_fh:
            log_fh.close()
    if best_epoch < 0:  # no usable validation signal: keep the final params
        best_params = {k: v.copy() for k, v in params.items()}
    return TrainResult(
        params=params,
        best_params=best_params,
        best_valid_auc=float(best_auc) if np.isfinite(best_auc) else float("nan"),
        best_epoch=best_epoch,
        log=log_rows,
    )


def _validation_auc(graph, x, features, split, labels, valid_nodes, params, model_config):
    if valid_nodes.size == 0:
        return None
    valid_labels = labels[valid_nodes]
    if len(np.unique(valid_labels)) < 2:
        return None
    risk = build_risk_labels(split, labels, np.empty(0, dtype=np.int64), "eval")
    prob = forward(x, features, risk, graph, as_tensors(params), model_config).data
    return float(auc(prob[valid_nodes], valid_labels))


def eval_scores(
    graph: ReviewGraph,
    x: np.ndarray,
    features: np.ndarray | None,
    split: SplitAssignment,
    params: dict[str, np.ndarray],
    model_config: ModelConfig,
) -> np.ndarray:
    """Spam probabilities for every node with eval-mode risk labels."""
    risk = build_risk_labels(split, graph.labels, np.empty(0, dtype=np.int64), "eval")
    return forward(x, features, risk, graph, as_tensors(params), model_config).data
