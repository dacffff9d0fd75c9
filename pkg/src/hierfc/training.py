"""Adam optimization with lr decay, early stopping, and rolling-window evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, backward
from .data import SplitSpec, TimePanel, batch_iter, make_windows
from .hierarchy import HierarchyTree
from .metrics import MetricReport, per_level_report
from .model import ModelConfig, ModelParams, WindowBatch, forward_batch, loss


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float
    decay_rate: float = 0.5
    decay_interval_epochs: int = 6
    epochs: int = 40
    batch_size: int = 512
    patience: int = 10
    seed: int = 0
    clip_norm: float = 10.0

    def __post_init__(self):
        for name in ("initial_lr", "decay_rate", "decay_interval_epochs",
                     "epochs", "batch_size", "patience", "clip_norm"):
            if getattr(self, name) <= 0:
                raise TrainingError(f"{name} must be positive")
        if self.patience > self.epochs:
            raise TrainingError(
                f"patience {self.patience} exceeds epochs {self.epochs}"
            )

    def lr_at(self, epoch: int) -> float:
        """Stepwise decay; epochs are 1-based, so with (0.5, 6) epoch 13 gets
        initial * 0.5^2."""
        return self.initial_lr * self.decay_rate ** (epoch // self.decay_interval_epochs)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def init(params: ModelParams) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(t.data) for k, t in params.tensors.items()},
            v={k: np.zeros_like(t.data) for k, t in params.tensors.items()},
        )


def adam_step(params: ModelParams, grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """In-place Adam update with bias correction."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, tensor in params.tensors.items():
        g = grads.get(name)
        if g is None:
            continue
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1**t)
        v_hat = state.v[name] / (1 - b2**t)
        tensor.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float):
    """Scale all gradients so their joint l2 norm is at most max_norm.

    Returns (norm_before, clipped_flag); scaling happens in place.
    """
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
        return total, True
    return total, False


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mean_wape: float
    lr: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord]
    best_epoch: int
    best_val_mean_wape: float
    clip_events: int
    stopped_early: bool
    representative_indices: list[int] = field(default_factory=list)

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,val_mean_wape,lr"]
        for r in self.history:
            lines.append(
                f"{r.epoch},{r.train_loss:.12g},{r.val_mean_wape:.12g},{r.lr:.12g}"
            )
        return "\n".join(lines) + "\n"


def _collect_grads(params: ModelParams) -> dict[str, np.ndarray]:
    out = {}
    for name, t in params.tensors.items():
        out[name] = t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
    return out


def _snapshot(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in params.tensors.items()}


def _restore(params: ModelParams, snap: dict[str, np.ndarray]) -> None:
    for k, t in params.tensors.items():
        t.data[:] = snap[k]


def predictions_matrix(params: ModelParams, config: ModelConfig, panel: TimePanel,
                       split: SplitSpec, z: np.ndarray | None, segment: str,
                       eval_batch: int = 2048):
    """Rolling-window predictions and truths as (windows*F, N) matrices in
    standardized space; rows are future steps in time order."""
    windows = make_windows(panel, split, config.H, config.F, segment=segment, z=z)
    preds = np.empty((len(windows), config.F))
    row = 0
    for chunk in batch_iter(windows, eval_batch, shuffle_seed=None):
        batch = WindowBatch.from_windows(chunk)
        preds[row : row + len(chunk)] = forward_batch(params, batch, config).data
        row += len(chunk)
    n_starts = len(windows) // panel.N
    # windows are time-major with all N series per start, in node order
    pred_mat = np.empty((n_starts * config.F, panel.N))
    true_mat = np.empty_like(pred_mat)
    for s in range(n_starts):
        block = slice(s * panel.N, (s + 1) * panel.N)
        pred_mat[s * config.F : (s + 1) * config.F] = preds[block].T
        true_mat[s * config.F : (s + 1) * config.F] = np.stack(
            [w.target for w in windows[block]]
        ).T
    return pred_mat, true_mat


def evaluate(params: ModelParams, config: ModelConfig, panel: TimePanel,
             split: SplitSpec, z: np.ndarray | None, segment: str,
             metric_scale: str = "rescaled") -> MetricReport:
    """Per-level WAPE/SMAPE/coherence on inverse-standardized predictions.

    metric_scale 'rescaled' reports on the mean-coherent scale the model is
    trained against; 'raw' undoes the leaf-count division so parents are sums.
    """
    if metric_scale not in ("rescaled", "raw"):
        raise TrainingError(f"unknown metric scale {metric_scale!r}")
    pred_mat, true_mat = predictions_matrix(params, config, panel, split, z, segment)
    if panel.scaler is not None:
        pred_mat = panel.scaler.inverse(pred_mat)
        true_mat = panel.scaler.inverse(true_mat)
    if metric_scale == "raw":
        sizes = np.array([len(ls) for ls in panel.tree.leaf_sets], dtype=np.float64)
        pred_mat = pred_mat * sizes[None, :]
        true_mat = true_mat * sizes[None, :]
    return per_level_report(true_mat, pred_mat, panel.tree)


def train(params: ModelParams, config: ModelConfig, train_config: TrainConfig,
          panel: TimePanel, split: SplitSpec, z: np.ndarray | None,
          tree: HierarchyTree | None = None, log=None) -> TrainResult:
    """Epoch loop: minibatch Adam on the summed-MAE-plus-regularizer loss,
    stepwise lr decay, early stopping on validation Mean WAPE, best
    checkpoint kept. Deterministic given train_config.seed."""
    tree = tree if tree is not None else panel.tree
    train_windows = make_windows(panel, split, config.H, config.F, segment="train", z=z)
    state = AdamState.init(params)
    history: list[EpochRecord] = []
    best = None  # (val, epoch, snapshot)
    clip_events = 0
    stopped_early = False

    for epoch in range(1, train_config.epochs + 1):
        lr = train_config.lr_at(epoch)
        epoch_losses = []
        for step, chunk in enumerate(
            batch_iter(train_windows, train_config.batch_size,
                       shuffle_seed=(train_config.seed, epoch))
        ):
            batch = WindowBatch.from_windows(chunk)
            with Tape() as tape:
                total = loss(params, batch, tree, config)
                value = total.item()
                if not np.isfinite(value):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch} step {step}"
                    )
                backward(tape, total)
            grads = _collect_grads(params)
            params.zero_grad()
            _, clipped = clip_global_norm(grads, train_config.clip_norm)
            clip_events += int(clipped)
            adam_step(params, grads, state, lr)
            epoch_losses.append(value)
        val_report = evaluate(params, config, panel, split, z, segment="val")
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(epoch_losses)),
            val_mean_wape=val_report.mean_wape,
            lr=lr,
        )
        history.append(record)
        if log is not None:
            log(record)
        if best is None or record.val_mean_wape < best[0]:
            best = (record.val_mean_wape, epoch, _snapshot(params))
        elif epoch - best[1] >= train_config.patience:
            stopped_early = True
            break

    _restore(params, best[2])
    return TrainResult(
        params=params,
        history=history,
        best_epoch=best[1],
        best_val_mean_wape=best[0],
        clip_events=clip_events,
        stopped_early=stopped_early,
    )
