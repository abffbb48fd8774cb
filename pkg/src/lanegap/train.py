"""Training of the recurrent classifiers.

The objective is the weighted mean per-frame cross entropy over non-ignore
frames plus an L2 penalty on every parameter tensor.  Optimization uses
Adam with global gradient-norm clipping; sequences are windowed, bucketed
by length and padded per batch (padding frames carry no loss and never
leak state into real frames).  The weights returned are the snapshot with
the best validation balanced accuracy across epochs.
"""

import logging
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .grid import CELLS_PER_PART, N_PARTS
from .kernels import lstm_scan_bwd
from .labeling import IGNORE, split_windows
from .metrics import balanced_or_plain_accuracy
from .rnn import (ModelWeights, SequenceOutput, batch_forward, batch_hidden,
                  init_weights, readout)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    window_frames: int = 100      # sequences are chopped to this length
    lookahead_frames: int = 100   # backward-layer segment length
    hidden_dim: int = 128
    embed_dim: int = 16
    learning_rate: float = 1e-3
    l2_penalty: float = 1e-3
    grad_clip: float = 5.0
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    class_weights: bool = False   # inverse-frequency frame weighting
    val_fraction: float = 0.1     # carved from the data when no val set given

    def __post_init__(self):
        if self.lookahead_frames > self.window_frames:
            raise ValueError("lookahead cannot exceed the window length")
        if self.lookahead_frames < 1 or self.window_frames < 1:
            raise ValueError("window and lookahead must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


class Window(NamedTuple):
    idx: np.ndarray     # (T, 4) grid cell indices
    labels: np.ndarray  # (T,) in {1, 0, -1}
    source_id: str


class Batch(NamedTuple):
    idx: np.ndarray     # (T, B, 4)
    labels: np.ndarray  # (T, B)
    valid: np.ndarray   # (T, B) 1.0 on real frames


def encode_windows(sequences, window_frames: int) -> list:
    """Window sequences and precompute their grid indices and labels."""
    from .grid import sequence_indices

    out = []
    for seq in split_windows(sequences, window_frames):
        out.append(Window(idx=sequence_indices(seq.contexts()),
                          labels=seq.labels(), source_id=seq.source_id))
    return out


def make_batches(windows, batch_size: int, order=None) -> list:
    """Bucket windows by descending length and pad each batch."""
    if order is None:
        order = np.arange(len(windows))
    ranked = sorted((int(i) for i in order),
                    key=lambda i: -windows[i].idx.shape[0])
    batches = []
    for start in range(0, len(ranked), batch_size):
        chunk = [windows[i] for i in ranked[start:start + batch_size]]
        t_max = chunk[0].idx.shape[0]
        b = len(chunk)
        idx = np.full((t_max, b, N_PARTS), -1, dtype=np.int64)
        labels = np.full((t_max, b), IGNORE, dtype=np.int64)
        valid = np.zeros((t_max, b))
        for j, w in enumerate(chunk):
            t = w.idx.shape[0]
            idx[:t, j] = w.idx
            labels[:t, j] = w.labels
            valid[:t, j] = 1.0
        batches.append(Batch(idx=idx, labels=labels, valid=valid))
    return batches


def class_weight_vector(windows, enabled: bool) -> np.ndarray:
    """Inverse-frequency weights over non-ignore frames (or ones)."""
    if not enabled:
        return np.ones(2)
    counts = np.zeros(2)
    for w in windows:
        lab = w.labels[w.labels >= 0]
        counts[0] += int((lab == 0).sum())
        counts[1] += int((lab == 1).sum())
    total = counts.sum()
    if total == 0:
        raise ValueError("class weights need at least one labeled frame")
    safe = np.maximum(counts, 1.0)
    return total / (2.0 * safe)


# ---------------------------------------------------------------------------
# objective and gradients

def l2_penalty_value(weights: ModelWeights, l2: float) -> float:
    return l2 * sum(float((t ** 2).sum()) for t in weights.tensors().values())


def batch_objective(weights: ModelWeights, batch: Batch, lookahead: int,
                    l2: float, cw: np.ndarray, want_grads: bool = True):
    """Loss (data term), full objective, and optionally all gradients.

    Returns None when the batch holds no weighted frames.
    """
    h_cat, caches = batch_hidden(weights, batch.idx, batch.valid, lookahead)
    margin = readout(weights, h_cat)
    counted = (batch.labels >= 0) & (batch.valid > 0)
    y = (batch.labels == 1).astype(float)
    w = np.where(counted, cw[np.clip(batch.labels, 0, 1)], 0.0)
    norm = w.sum()
    if norm == 0:
        return None
    ce = np.logaddexp(0.0, margin) - y * margin
    data_loss = float((ce * w).sum() / norm)
    objective = data_loss + l2_penalty_value(weights, l2)
    if not want_grads:
        return data_loss, objective, None

    p1 = 0.5 * (1.0 + np.tanh(0.5 * margin))
    dm = (p1 - y) * w / norm
    t_len, b_len, k = h_cat.shape
    hidden = weights.hidden_dim
    dlog = np.empty((t_len, b_len, 2))
    dlog[:, :, 0] = -dm
    dlog[:, :, 1] = dm
    h2 = h_cat.reshape(t_len * b_len, k)
    dl2 = dlog.reshape(t_len * b_len, 2)
    grads = {"out_w": h2.T @ dl2, "out_b": dl2.sum(axis=0)}
    dh_cat = (dl2 @ weights.w_out.T).reshape(t_len, b_len, k)

    e = caches["e"]
    d = e.shape[2]
    e2 = e.reshape(t_len * b_len, d)
    de2 = np.zeros((t_len * b_len, d))

    def through_cell(cell, cache, dh, reverse, reset_every, prefix):
        wh_tr = np.ascontiguousarray(cell.wh.T)
        gates, cs, hs = cache
        dex, dwh = lstm_scan_bwd(gates, cs, hs, wh_tr, batch.valid,
                                 np.ascontiguousarray(dh),
                                 np.int64(reverse), np.int64(reset_every))
        dex2 = dex.reshape(t_len * b_len, 4 * hidden)
        grads[prefix + "_wx"] = e2.T @ dex2
        grads[prefix + "_wh"] = dwh
        grads[prefix + "_b"] = dex2.sum(axis=0)
        return dex2 @ cell.wx.T

    de2 += through_cell(weights.forward_cell, caches["fwd"],
                        dh_cat[:, :, :hidden], 0, 0, "fwd")
    if weights.bidirectional:
        de2 += through_cell(weights.backward_cell, caches["bwd"],
                            dh_cat[:, :, hidden:], 1, lookahead, "bwd")

    embed_dim = weights.embedding.embed_dim
    de4 = de2.reshape(t_len, b_len, N_PARTS, embed_dim)
    grads["embed_b"] = de4.sum(axis=(0, 1, 2))
    dw_cells = np.zeros((CELLS_PER_PART, embed_dim))
    occupied = batch.idx >= 0
    np.add.at(dw_cells, batch.idx[occupied], de4[occupied])
    grads["embed_w"] = dw_cells.T

    for name, tensor in weights.tensors().items():
        grads[name] = grads[name] + 2.0 * l2 * tensor
    return data_loss, objective, grads


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    total = np.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


class AdamState:
    """First/second moment accumulators, one slot per tensor."""

    def __init__(self, weights: ModelWeights):
        self.m = {k: np.zeros_like(v) for k, v in weights.tensors().items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.tensors().items()}
        self.step = 0

    def update(self, weights: ModelWeights, grads: dict, lr: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.step += 1
        bc1 = 1.0 - beta1 ** self.step
        bc2 = 1.0 - beta2 ** self.step
        for name, tensor in weights.tensors().items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            tensor -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# evaluation over windows

def predict_batches(weights: ModelWeights, windows, lookahead: int,
                    batch_size: int = 64):
    """Predictions per window, order-aligned with the input list."""
    ranked = sorted(range(len(windows)),
                    key=lambda i: -windows[i].idx.shape[0])
    outputs = [None] * len(windows)
    for start in range(0, len(ranked), batch_size):
        members = ranked[start:start + batch_size]
        batch = make_batches([windows[i] for i in members],
                             batch_size=len(members))[0]
        out = batch_forward(weights, batch.idx, batch.valid, lookahead)
        for j, i in enumerate(members):
            t = windows[i].idx.shape[0]
            outputs[i] = SequenceOutput(out.probs[:t, j],
                                        out.classes[:t, j])
    return outputs


def window_frame_predictions(weights: ModelWeights, windows, lookahead: int):
    """(predicted, actual) class arrays over all non-ignore frames."""
    outs = predict_batches(weights, windows, lookahead)
    preds = []
    labels = []
    for w, out in zip(windows, outs):
        keep = w.labels >= 0
        preds.append(out.classes[keep])
        labels.append(w.labels[keep])
    return np.concatenate(preds), np.concatenate(labels)


# ---------------------------------------------------------------------------
# training loop

def train(data, cfg: TrainConfig, bidirectional: bool = False,
          val_data=None) -> ModelWeights:
    """Train on labeled sequences; deterministic for a fixed config.

    val_data: validation sequences; when None, cfg.val_fraction of the
    training windows is carved out.  The snapshot with the best validation
    balanced accuracy across epochs is returned (the final weights when no
    validation frames exist).
    """
    windows = encode_windows(data, cfg.window_frames)
    if not any((w.labels >= 0).any() for w in windows):
        raise ValueError("training data has no labeled frames")
    rng = np.random.default_rng(cfg.seed)
    if val_data is not None:
        train_windows = windows
        val_windows = encode_windows(val_data, cfg.window_frames)
    elif cfg.val_fraction > 0 and len(windows) >= 2:
        perm = rng.permutation(len(windows))
        n_val = max(1, int(round(cfg.val_fraction * len(windows))))
        val_windows = [windows[i] for i in perm[:n_val]]
        train_windows = [windows[i] for i in perm[n_val:]]
    else:
        train_windows = windows
        val_windows = []

    cw = class_weight_vector(train_windows, cfg.class_weights)
    weights = init_weights(cfg.seed, cfg.embed_dim, cfg.hidden_dim,
                           bidirectional)
    adam = AdamState(weights)
    best = None
    best_acc = -np.inf
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_windows))
        epoch_loss = 0.0
        n_batches = 0
        for batch in make_batches(train_windows, cfg.batch_size, order):
            got = batch_objective(weights, batch, cfg.lookahead_frames,
                                  cfg.l2_penalty, cw, want_grads=True)
            if got is None:
                continue
            data_loss, _, grads = got
            clip_grad_norm(grads, cfg.grad_clip)
            adam.update(weights, grads, cfg.learning_rate)
            epoch_loss += data_loss
            n_batches += 1
        msg = f"epoch {epoch}: loss {epoch_loss / max(1, n_batches):.4f}"
        if val_windows:
            preds, labels = window_frame_predictions(
                weights, val_windows, cfg.lookahead_frames)
            if labels.size:
                acc = balanced_or_plain_accuracy(preds, labels)
                msg += f", val acc {acc:.4f}"
                if acc > best_acc:
                    best_acc = acc
                    best = weights.clone()
        logger.info(msg)
    return best if best is not None else weights
