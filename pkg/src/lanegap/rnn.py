"""Recurrent sequence classifiers over occupancy-grid embeddings.

A single-layer LSTM (optionally bidirectional) consumes one embedded grid
per 0.1 s frame and emits per-frame suitability probabilities through a
shared affine readout and a two-way softmax.  The backward layer never
sees an unbounded future: it runs over fixed-length segments aligned to
the sequence start and clears its state at every segment boundary, so a
frame's output depends on at most one segment of lookahead.  Online, that
lookahead is spliced in from a trajectory predictor.
"""

import io
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .grid import (CELLS_PER_PART, DEFAULT_EMBED_DIM, EmbeddingParams,
                   N_PARTS, embed_indices, sequence_indices)
from .kernels import lstm_scan_fwd

N_CLASSES = 2
GATE_NAMES = ("input", "forget", "output", "candidate")
CHECKPOINT_VERSION = 1
INIT_SCALE = 0.08
FORGET_BIAS = 1.0


@dataclass
class LstmCellParams:
    """Gate parameters; columns blocked [input|forget|output|candidate]."""

    wx: np.ndarray  # (input_dim, 4*hidden)
    wh: np.ndarray  # (hidden, 4*hidden)
    b: np.ndarray   # (4*hidden,)

    @property
    def input_dim(self) -> int:
        return self.wx.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.wh.shape[0]

    def clone(self) -> "LstmCellParams":
        return LstmCellParams(self.wx.copy(), self.wh.copy(), self.b.copy())


@dataclass
class ModelWeights:
    """All learned tensors of a (bi)directional sequence classifier."""

    embedding: EmbeddingParams
    forward_cell: LstmCellParams
    backward_cell: LstmCellParams | None
    w_out: np.ndarray  # (hidden or 2*hidden, 2)
    b_out: np.ndarray  # (2,)

    @property
    def bidirectional(self) -> bool:
        return self.backward_cell is not None

    @property
    def hidden_dim(self) -> int:
        return self.forward_cell.hidden_dim

    def tensors(self) -> dict:
        out = {
            "embed_w": self.embedding.weights,
            "embed_b": self.embedding.bias,
            "fwd_wx": self.forward_cell.wx,
            "fwd_wh": self.forward_cell.wh,
            "fwd_b": self.forward_cell.b,
        }
        if self.backward_cell is not None:
            out["bwd_wx"] = self.backward_cell.wx
            out["bwd_wh"] = self.backward_cell.wh
            out["bwd_b"] = self.backward_cell.b
        out["out_w"] = self.w_out
        out["out_b"] = self.b_out
        return out

    def clone(self) -> "ModelWeights":
        return ModelWeights(
            embedding=EmbeddingParams(self.embedding.weights.copy(),
                                      self.embedding.bias.copy()),
            forward_cell=self.forward_cell.clone(),
            backward_cell=(self.backward_cell.clone()
                           if self.backward_cell else None),
            w_out=self.w_out.copy(), b_out=self.b_out.copy())


class SequenceOutput(NamedTuple):
    """Per-frame probability of the suitable class and the argmax class."""

    probs: np.ndarray
    classes: np.ndarray


def _init_cell(rng, input_dim, hidden_dim) -> LstmCellParams:
    wx = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(input_dim, 4 * hidden_dim))
    wh = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(hidden_dim, 4 * hidden_dim))
    b = np.zeros(4 * hidden_dim)
    b[hidden_dim:2 * hidden_dim] = FORGET_BIAS
    return LstmCellParams(wx=wx, wh=wh, b=b)


def init_weights(seed, embed_dim: int = DEFAULT_EMBED_DIM,
                 hidden_dim: int = 128,
                 bidirectional: bool = False) -> ModelWeights:
    """Fresh weights: uniform +-0.08 gates, +1 forget bias, zero readout."""
    rng = np.random.default_rng(seed)
    emb = EmbeddingParams(
        weights=rng.uniform(-INIT_SCALE, INIT_SCALE,
                            size=(embed_dim, CELLS_PER_PART)),
        bias=np.zeros(embed_dim))
    input_dim = N_PARTS * embed_dim
    fwd = _init_cell(rng, input_dim, hidden_dim)
    bwd = _init_cell(rng, input_dim, hidden_dim) if bidirectional else None
    readout_in = hidden_dim * (2 if bidirectional else 1)
    return ModelWeights(embedding=emb, forward_cell=fwd, backward_cell=bwd,
                        w_out=np.zeros((readout_in, N_CLASSES)),
                        b_out=np.zeros(N_CLASSES))


# ---------------------------------------------------------------------------
# forward passes

def lstm_cell(e, h_prev, c_prev, p: LstmCellParams):
    """Reference single-step cell update; returns (h, c)."""
    h = p.hidden_dim
    z = e @ p.wx + h_prev @ p.wh + p.b
    gi = 1.0 / (1.0 + np.exp(-z[..., 0:h]))
    gf = 1.0 / (1.0 + np.exp(-z[..., h:2 * h]))
    go = 1.0 / (1.0 + np.exp(-z[..., 2 * h:3 * h]))
    gg = np.tanh(z[..., 3 * h:4 * h])
    c = gf * c_prev + gi * gg
    return go * np.tanh(c), c


def _as_indices(seq) -> np.ndarray:
    if isinstance(seq, np.ndarray):
        return seq.astype(np.int64)
    return sequence_indices(seq)


def _input_proj(e, cell: LstmCellParams) -> np.ndarray:
    t, b, d = e.shape
    flat = e.reshape(t * b, d) @ cell.wx + cell.b
    return flat.reshape(t, b, 4 * cell.hidden_dim)


def _scan_layer(e, cell, mask, reverse, reset_every):
    ex = _input_proj(e, cell)
    return lstm_scan_fwd(ex, cell.wh, mask,
                         np.int64(reverse), np.int64(reset_every))


def batch_hidden(weights: ModelWeights, idx, valid, lookahead_frames):
    """Hidden trajectories for a padded (T, B, 4) index batch.

    Returns (h_cat, caches) where h_cat is (T, B, hidden * dirs) and the
    caches carry everything the training backward pass needs.
    """
    e = embed_indices(idx, weights.embedding)
    gates_f, cs_f, hs_f = _scan_layer(e, weights.forward_cell, valid, 0, 0)
    caches = {"e": e, "fwd": (gates_f, cs_f, hs_f)}
    if weights.bidirectional:
        gates_b, cs_b, hs_b = _scan_layer(e, weights.backward_cell, valid, 1,
                                          lookahead_frames)
        caches["bwd"] = (gates_b, cs_b, hs_b)
        h_cat = np.concatenate([hs_f, hs_b], axis=2)
    else:
        h_cat = hs_f
    return h_cat, caches


def readout(weights: ModelWeights, h_cat):
    """Class-1 margin per frame: logit(suitable) - logit(unsuitable)."""
    t, b, k = h_cat.shape
    logits = (h_cat.reshape(t * b, k) @ weights.w_out
              + weights.b_out).reshape(t, b, N_CLASSES)
    return logits[:, :, 1] - logits[:, :, 0]


def margin_to_output(margin) -> SequenceOutput:
    probs = 0.5 * (1.0 + np.tanh(0.5 * margin))  # stable two-way softmax
    classes = (margin > 0).astype(np.int64)
    return SequenceOutput(probs=probs, classes=classes)


def batch_forward(weights: ModelWeights, idx, valid,
                  lookahead_frames) -> SequenceOutput:
    h_cat, _ = batch_hidden(weights, idx, valid, lookahead_frames)
    return margin_to_output(readout(weights, h_cat))


def forward_unidir(seq, weights: ModelWeights) -> SequenceOutput:
    """Per-frame outputs of the one-directional model on one sequence."""
    if weights.bidirectional:
        raise ValueError("weights are bidirectional; use forward_bidir")
    idx = _as_indices(seq)[:, None, :]
    valid = np.ones(idx.shape[:2])
    out = batch_forward(weights, idx, valid, 0)
    return SequenceOutput(out.probs[:, 0], out.classes[:, 0])


def forward_bidir(seq, weights: ModelWeights,
                  lookahead_frames: int) -> SequenceOutput:
    """Per-frame outputs with segment-limited lookahead over real frames."""
    if not weights.bidirectional:
        raise ValueError("weights are one-directional; use forward_unidir")
    if lookahead_frames < 1:
        raise ValueError("lookahead_frames must be >= 1")
    idx = _as_indices(seq)[:, None, :]
    valid = np.ones(idx.shape[:2])
    out = batch_forward(weights, idx, valid, lookahead_frames)
    return SequenceOutput(out.probs[:, 0], out.classes[:, 0])


def predict_online(weights: ModelWeights, contexts, predictor,
                   lookahead_frames: int) -> SequenceOutput:
    """Causal bidirectional inference over a stream of contexts.

    For each arriving frame t the forward state advances over the real
    history while the backward state is recomputed over the remainder of
    t's lookahead segment: the current frame stays real, the rest is
    requested from ``predictor(ctx, n_steps)`` (e.g. a car-following
    rollout).  A predictor returning the true future reproduces
    :func:`forward_bidir` exactly.
    """
    if not weights.bidirectional:
        raise ValueError("predict_online needs bidirectional weights")
    emb = weights.embedding
    fwd = weights.forward_cell
    bwd = weights.backward_cell
    h = np.zeros((1, fwd.hidden_dim))
    c = np.zeros((1, fwd.hidden_dim))
    probs = []
    classes = []
    for t, ctx in enumerate(contexts):
        idx_t = sequence_indices([ctx])  # (1, 4)
        e_t = embed_indices(idx_t, emb)  # (1, D)
        h, c = lstm_cell(e_t, h, c, fwd)
        seg_end = (t // lookahead_frames + 1) * lookahead_frames
        n_future = seg_end - t - 1
        future = list(predictor(ctx, n_future))[:n_future] if n_future else []
        block = [ctx] + future
        idx_b = sequence_indices(block)[:, None, :]
        ones = np.ones(idx_b.shape[:2])
        e_b = embed_indices(idx_b, emb)
        _, _, hs_b = _scan_layer(e_b, bwd, ones, 1, 0)
        h_cat = np.concatenate([h[0], hs_b[0, 0]])
        logits = h_cat @ weights.w_out + weights.b_out
        margin = logits[1] - logits[0]
        probs.append(0.5 * (1.0 + np.tanh(0.5 * margin)))
        classes.append(1 if margin > 0 else 0)
    return SequenceOutput(np.array(probs), np.array(classes, dtype=np.int64))


def make_oracle_predictor(contexts):
    """Predictor that reveals the real future of a known sequence."""
    by_fid = {ctx.frame_id: i for i, ctx in enumerate(contexts)}

    def predictor(ctx, n_steps):
        i = by_fid[ctx.frame_id]
        return contexts[i + 1:i + 1 + n_steps]

    return predictor


# ---------------------------------------------------------------------------
# checkpoints

def _expected_shapes(meta) -> dict:
    ed = meta["embed_dim"]
    hd = meta["hidden_dim"]
    d = N_PARTS * ed
    shapes = {
        "embed_w": (ed, CELLS_PER_PART),
        "embed_b": (ed,),
        "fwd_wx": (d, 4 * hd),
        "fwd_wh": (hd, 4 * hd),
        "fwd_b": (4 * hd,),
        "out_b": (N_CLASSES,),
    }
    if meta["bidirectional"]:
        shapes["bwd_wx"] = (d, 4 * hd)
        shapes["bwd_wh"] = (hd, 4 * hd)
        shapes["bwd_b"] = (4 * hd,)
        shapes["out_w"] = (2 * hd, N_CLASSES)
    else:
        shapes["out_w"] = (hd, N_CLASSES)
    return shapes


def save_checkpoint(path, weights: ModelWeights, model_kind: str,
                    train_config=None) -> None:
    """Write a versioned container with named tensors and their recipe."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "model_kind": model_kind,
        "bidirectional": weights.bidirectional,
        "embed_dim": weights.embedding.embed_dim,
        "hidden_dim": weights.hidden_dim,
        "train_config": dict(train_config) if train_config else {},
    }
    arrays = {k: np.asarray(v) for k, v in weights.tensors().items()}
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Read a checkpoint; returns (weights, model_kind, train_config).

    Every tensor's shape is validated against the declared dimensions.
    """
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {meta.get('format_version')}")
        shapes = _expected_shapes(meta)
        arrays = {}
        for name, shape in shapes.items():
            if name not in data:
                raise ValueError(f"checkpoint is missing tensor {name!r}")
            arr = data[name]
            if tuple(arr.shape) != shape:
                raise ValueError(
                    f"tensor {name!r} has shape {tuple(arr.shape)}, "
                    f"expected {shape}")
            arrays[name] = arr.astype(float)
    emb = EmbeddingParams(weights=arrays["embed_w"], bias=arrays["embed_b"])
    fwd = LstmCellParams(arrays["fwd_wx"], arrays["fwd_wh"], arrays["fwd_b"])
    bwd = None
    if meta["bidirectional"]:
        bwd = LstmCellParams(arrays["bwd_wx"], arrays["bwd_wh"],
                             arrays["bwd_b"])
    weights = ModelWeights(embedding=emb, forward_cell=fwd, backward_cell=bwd,
                           w_out=arrays["out_w"], b_out=arrays["out_b"])
    return weights, meta["model_kind"], meta.get("train_config", {})
