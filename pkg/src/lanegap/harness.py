"""Experiment orchestration: splits, training runs, reports, timelines.

The protocol mirrors the evaluation design of the study this toolkit
reproduces: datasets are merged, labeled, and split at vehicle granularity
(every track and maneuver lands wholly in one side); recurrent models run
k-fold cross-validation while the SVMs average independent holdout runs;
10% of the training vehicles serve as validation for epoch selection and
grid search.  All randomness fans out deterministically from one seed.
"""

import csv
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import config as cfgmod
from .data import build_scenes, load_track_store
from .idm import DEFAULT_IDM, make_rollout_predictor
from .labeling import (IGNORE, augment, label_action_scheme,
                       label_automatic_scheme, split_windows)
from .metrics import average_accuracy
from .rnn import forward_bidir, forward_unidir, predict_online
from .svm import (balanced_sample_indices, grid_search_svm, idm_baseline_label,
                  sequence_feature_rows)
from .train import encode_windows, predict_batches, train

logger = logging.getLogger(__name__)

RECURRENT_MODELS = ("lstm", "bilstm", "bilstm_star")
SVM_MODELS = ("svm", "svm_star")
ALL_MODELS = SVM_MODELS + RECURRENT_MODELS + ("idm",)


# ---------------------------------------------------------------------------
# splits

@dataclass(frozen=True)
class SplitPlan:
    """Assignment of every unit (vehicle id) to a fold or side."""

    kind: str                  # "kfold" | "holdout"
    seed: int
    assignment: dict
    n_folds: int = 0

    def units(self, side) -> set:
        """Units of one side: a fold index for kfold, 'train'/'test' else."""
        if self.kind == "kfold" and isinstance(side, int):
            return {u for u, f in self.assignment.items() if f == side}
        return {u for u, s in self.assignment.items() if s == side}

    def fold_sides(self, fold: int) -> tuple:
        """(train_units, test_units) with `fold` held out."""
        test = self.units(fold)
        train_units = set(self.assignment) - test
        return train_units, test


def make_split(unit_ids, kind: str = "kfold", seed: int = 0, k: int = 5,
               train_fraction: float = 0.8) -> SplitPlan:
    """Deterministic assignment; kfold sizes stay within one unit."""
    ids = sorted(set(unit_ids))
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    if kind == "kfold":
        assignment = {u: i % k for i, u in enumerate(order)}
        return SplitPlan(kind="kfold", seed=seed, assignment=assignment,
                         n_folds=k)
    if kind == "holdout":
        n_train = int(round(train_fraction * len(order)))
        assignment = {u: ("train" if i < n_train else "test")
                      for i, u in enumerate(order)}
        return SplitPlan(kind="holdout", seed=seed, assignment=assignment)
    raise ValueError(f"unknown split kind {kind!r}")


def select_sequences(sequences, units) -> list:
    return [s for s in sequences if s.vehicle_id in units]


def carve_validation_units(units, seed: int, fraction: float = 0.1) -> tuple:
    """(train_units, val_units); at least one unit goes to validation."""
    ids = sorted(units)
    if len(ids) < 2 or fraction <= 0:
        return set(ids), set()
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_val = max(1, int(round(fraction * len(ids))))
    return set(order[n_val:]), set(order[:n_val])


# ---------------------------------------------------------------------------
# reports

@dataclass
class EvalReport:
    model: str
    dataset: str
    acc_p: float
    acc_n: float
    acc: float
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    fold_accs: tuple = ()
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if abs(self.acc - (self.acc_p + self.acc_n) / 2.0) > 0:
            raise ValueError("acc must be the exact mean of acc_p and acc_n")

    def row(self) -> dict:
        return {"model": self.model, "dataset": self.dataset,
                "acc_p": self.acc_p, "acc_n": self.acc_n, "acc": self.acc,
                "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "fold_accs": " ".join(f"{a:.6f}" for a in self.fold_accs)}


def confusion_counts(preds, labels) -> tuple:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    tp = int(((preds == 1) & (labels == 1)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    tn = int(((preds == 0) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())
    return tp, fp, tn, fn


@dataclass
class FoldOutcome:
    preds: np.ndarray
    labels: np.ndarray

    @property
    def scores(self) -> tuple:
        return average_accuracy(self.preds, self.labels)


def combine_folds(model: str, dataset: str, outcomes, config=None) -> EvalReport:
    """Average per-fold class accuracies; pool the confusion counts."""
    per_fold = [o.scores for o in outcomes]
    acc_p = float(np.mean([s[0] for s in per_fold]))
    acc_n = float(np.mean([s[1] for s in per_fold]))
    preds = np.concatenate([o.preds for o in outcomes])
    labels = np.concatenate([o.labels for o in outcomes])
    tp, fp, tn, fn = confusion_counts(preds, labels)
    return EvalReport(model=model, dataset=dataset, acc_p=acc_p, acc_n=acc_n,
                      acc=(acc_p + acc_n) / 2.0, tp=tp, fp=fp, tn=tn, fn=fn,
                      fold_accs=tuple(s[2] for s in per_fold),
                      config=dict(config or {}))


# ---------------------------------------------------------------------------
# per-model frame outputs

def recurrent_outcome(weights, windows, mode: str, lookahead: int,
                      scenes=None, idm_params=DEFAULT_IDM,
                      window_frames: int = None) -> FoldOutcome:
    """Frame predictions on test windows under one evaluation mode.

    "unidir" and "bidir_real" run the network over the stored frames;
    "bidir_online" replays each window causally, filling the lookahead
    with a car-following rollout grounded in the real scenes.
    """
    preds = []
    labels = []
    if mode in ("unidir", "bidir_real"):
        encoded = encode_windows(windows, window_frames or max(lookahead, 1))
        outs = predict_batches(weights, encoded, lookahead)
        for w, out in zip(encoded, outs):
            keep = w.labels != IGNORE
            preds.append(out.classes[keep])
            labels.append(w.labels[keep])
    elif mode == "bidir_online":
        if scenes is None:
            raise ValueError("online evaluation needs the real scenes")
        predictor = make_rollout_predictor(scenes, idm_params)
        for seq in windows:
            out = predict_online(weights, seq.contexts(), predictor, lookahead)
            lab = seq.labels()
            keep = lab != IGNORE
            preds.append(out.classes[keep])
            labels.append(lab[keep])
    else:
        raise ValueError(f"unknown evaluation mode {mode!r}")
    return FoldOutcome(preds=np.concatenate(preds),
                       labels=np.concatenate(labels))


def svm_outcome(model, test_sequences, use_future: bool) -> FoldOutcome:
    x, y, _ = sequence_feature_rows(test_sequences, use_future=use_future)
    return FoldOutcome(preds=model.predict(x), labels=y)


def idm_outcome(sequences, scenes, idm_params=DEFAULT_IDM,
                horizon_steps: int = 30, min_time_gap: float = 1.0,
                frame_stride: int = 1) -> FoldOutcome:
    predictor = make_rollout_predictor(scenes, idm_params)
    preds = []
    labels = []
    for seq in sequences:
        seq_labels = seq.labels()
        for i, ctx in enumerate(seq.contexts()):
            if i % frame_stride or seq_labels[i] == IGNORE:
                continue
            preds.append(idm_baseline_label(ctx, predictor, horizon_steps,
                                            min_time_gap))
            labels.append(seq_labels[i])
    return FoldOutcome(preds=np.array(preds), labels=np.array(labels))


# ---------------------------------------------------------------------------
# dataset preparation

def merge_stores(paths) -> tuple:
    """Load track stores into one scene space via disjoint id offsets."""
    all_tracks = []
    for i, path in enumerate(paths):
        frame_off = i * 10_000_000
        vid_off = i * 1_000_000
        for tr in load_track_store(path):
            frames = tuple(
                replace(fr, vehicle_id=fr.vehicle_id + vid_off,
                        frame_id=fr.frame_id + frame_off)
                for fr in tr.frames)
            all_tracks.append(replace(tr, vehicle_id=tr.vehicle_id + vid_off,
                                      frames=frames))
    return all_tracks, build_scenes(all_tracks)


def prepare_sequences(tracks, scenes, scheme: str, cfg: dict,
                      ego_ids=None) -> list:
    params = cfgmod.label_params(cfg)
    use = tracks if ego_ids is None else \
        [t for t in tracks if t.vehicle_id in set(ego_ids)]
    if scheme == "action":
        return label_action_scheme(use, scenes, params)
    if scheme == "auto":
        sides = cfgmod.as_tuple(cfg.get("label.sides", ("left", "right")))
        return label_automatic_scheme(use, scenes, params, sides=sides)
    raise ValueError(f"unknown labeling scheme {scheme!r}")


# ---------------------------------------------------------------------------
# experiment protocol

def _train_recurrent(train_seqs, val_seqs, cfg: dict, scheme: str, seed: int,
                     bidirectional: bool):
    tc = cfgmod.train_config(cfg, seed=seed)
    if scheme == "auto" and not tc.class_weights:
        tc = type(tc)(**{**tc.as_dict(), "class_weights": True})
    return train(train_seqs, tc, bidirectional=bidirectional,
                 val_data=val_seqs or None), tc


def _augmented(train_seqs, scenes, scheme: str, cfg: dict, seed: int):
    if scheme == "action" and cfg.get("label.augment"):
        return augment(train_seqs, scenes, seed,
                       params=cfgmod.label_params(cfg))
    return train_seqs


def evaluate_recurrent_models(sequences, scenes, cfg, scheme, models) -> dict:
    """K-fold protocol; bilstm and bilstm_star share each fold's training."""
    seed = int(cfg.get("seed", 0))
    k = int(cfg.get("run.kfold", 5))
    lookahead = int(cfg.get("train.lookahead_frames", 100))
    window = int(cfg.get("train.window_frames", 100))
    units = {s.vehicle_id for s in sequences}
    outcomes = {m: [] for m in models}
    if k > 1:
        plan = make_split(units, "kfold", seed=seed + 11, k=k)
        folds = [plan.fold_sides(f) for f in range(k)]
    else:
        plan = make_split(units, "holdout", seed=seed + 11,
                          train_fraction=float(cfg.get("run.train_fraction",
                                                       0.8)))
        folds = [(plan.units("train"), plan.units("test"))]
    for f, (train_units, test_units) in enumerate(folds):
        train_units, val_units = carve_validation_units(train_units,
                                                        seed + 100 + f)
        train_seqs = _augmented(select_sequences(sequences, train_units),
                                scenes, scheme, cfg, seed + 200 + f)
        val_seqs = select_sequences(sequences, val_units)
        test_windows = split_windows(select_sequences(sequences, test_units),
                                     window)
        if "lstm" in models:
            weights, _ = _train_recurrent(train_seqs, val_seqs, cfg, scheme,
                                          seed + 300 + f, bidirectional=False)
            outcomes["lstm"].append(
                recurrent_outcome(weights, test_windows, "unidir", lookahead,
                                  window_frames=window))
            logger.info("fold %d lstm acc %.4f", f,
                        outcomes["lstm"][-1].scores[2])
        if "bilstm" in models or "bilstm_star" in models:
            weights, _ = _train_recurrent(train_seqs, val_seqs, cfg, scheme,
                                          seed + 300 + f, bidirectional=True)
            if "bilstm_star" in models:
                outcomes["bilstm_star"].append(recurrent_outcome(
                    weights, test_windows, "bidir_real", lookahead,
                    window_frames=window))
                logger.info("fold %d bilstm_star acc %.4f", f,
                            outcomes["bilstm_star"][-1].scores[2])
            if "bilstm" in models:
                outcomes["bilstm"].append(recurrent_outcome(
                    weights, test_windows, "bidir_online", lookahead,
                    scenes=scenes, idm_params=cfgmod.idm_params(cfg)))
                logger.info("fold %d bilstm acc %.4f", f,
                            outcomes["bilstm"][-1].scores[2])
    return outcomes


def evaluate_svm_models(sequences, scenes, cfg, scheme, models) -> dict:
    """Independent holdout runs with balanced sampling and grid search."""
    seed = int(cfg.get("seed", 0))
    runs = int(cfg.get("run.holdout_runs", 5))
    stride = int(cfg.get("svm.frame_stride", 5))
    cap = int(cfg.get("svm.max_per_class", 1500))
    cs = cfgmod.as_tuple(cfg.get("svm.cs"))
    gammas = cfgmod.as_tuple(cfg.get("svm.gammas"))
    units = {s.vehicle_id for s in sequences}
    outcomes = {m: [] for m in models}
    for r in range(runs):
        plan = make_split(units, "holdout", seed=seed + 400 + r,
                          train_fraction=float(cfg.get("run.train_fraction",
                                                       0.8)))
        fit_units, val_units = carve_validation_units(plan.units("train"),
                                                      seed + 500 + r)
        fit_seqs = select_sequences(sequences, fit_units)
        val_seqs = select_sequences(sequences, val_units)
        test_seqs = select_sequences(sequences, plan.units("test"))
        rng = np.random.default_rng(seed + 600 + r)
        for model_name in models:
            use_future = model_name == "svm_star"
            x_fit, y_fit, _ = sequence_feature_rows(fit_seqs, use_future,
                                                    frame_stride=stride)
            picked = balanced_sample_indices(y_fit, rng, n_per_class=cap)
            x_val, y_val, _ = sequence_feature_rows(val_seqs, use_future,
                                                    frame_stride=stride)
            model, c, gamma, _ = grid_search_svm(x_fit[picked], y_fit[picked],
                                                 x_val, y_val, cs, gammas)
            logger.info("run %d %s chose C=%g gamma=%g", r, model_name, c,
                        gamma)
            outcomes[model_name].append(
                svm_outcome(model, test_seqs, use_future))
            logger.info("run %d %s acc %.4f", r, model_name,
                        outcomes[model_name][-1].scores[2])
    return outcomes


def run_experiment(cfg: dict, out_dir: str, tracks=None, scenes=None,
                   ego_ids=None) -> list:
    """Full protocol over every configured scheme and model.

    Data comes from the track stores named in the config unless tracks and
    scenes are handed in directly.  Writes reports and the resolved
    configuration into out_dir and returns the EvalReport list.
    """
    if tracks is None:
        paths = cfgmod.as_tuple(cfg.get("run.tracks"))
        if not paths:
            raise ValueError("run.tracks names no track stores")
        missing = [p for p in paths if not os.path.exists(p)]
        if missing:
            raise FileNotFoundError(f"missing track stores: {missing}")
        tracks, scenes = merge_stores(paths)
    elif scenes is None:
        scenes = build_scenes(tracks)
    os.makedirs(out_dir, exist_ok=True)
    cfgmod.save_config(os.path.join(out_dir, "resolved.cfg"), cfg)
    reports = []
    for scheme in cfgmod.as_tuple(cfg.get("run.schemes")):
        dataset = {"action": "action-based", "auto": "automatic"}[scheme]
        sequences = prepare_sequences(tracks, scenes, scheme, cfg, ego_ids)
        if not sequences:
            logger.warning("scheme %s produced no sequences; skipped", scheme)
            continue
        wanted = [m for m in cfgmod.as_tuple(cfg.get("run.models"))
                  if m in ALL_MODELS]
        recurrent = [m for m in wanted if m in RECURRENT_MODELS]
        svms = [m for m in wanted if m in SVM_MODELS]
        outcomes = {}
        if recurrent:
            outcomes.update(evaluate_recurrent_models(sequences, scenes, cfg,
                                                      scheme, recurrent))
        if svms:
            outcomes.update(evaluate_svm_models(sequences, scenes, cfg,
                                                scheme, svms))
        if "idm" in wanted and scheme == "auto":
            outcomes["idm"] = [idm_outcome(sequences, scenes,
                                           cfgmod.idm_params(cfg))]
        for model in wanted:
            if outcomes.get(model):
                reports.append(combine_folds(model, dataset, outcomes[model],
                                             config=cfg))
    write_reports(reports, out_dir)
    return reports


def write_reports(reports, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    columns = ["model", "dataset", "acc_p", "acc_n", "acc", "tp", "fp", "tn",
               "fn", "fold_accs"]
    with open(os.path.join(out_dir, "reports.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for rep in reports:
            writer.writerow(rep.row())
    lines = ["model        dataset       acc_p   acc_n   acc",
             "-" * 48]
    for rep in reports:
        lines.append(f"{rep.model:<12} {rep.dataset:<13} "
                     f"{rep.acc_p:6.4f}  {rep.acc_n:6.4f}  {rep.acc:6.4f}")
    with open(os.path.join(out_dir, "summary.txt"), "w",
              encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# synthetic end-to-end benchmark

BENCHMARK_MODELS = ("svm", "lstm", "bilstm", "bilstm_star")


def run_benchmark(n_episodes: int = 400, seed: int = 7, out_dir: str = None,
                  overrides: dict = None) -> dict:
    """Train and score every model on generated two-lane scenarios.

    Returns {model: EvalReport} from a single track-level holdout; the
    synthetic world is produced by the car-following generator, labeled
    with the automatic scheme toward the left lane.
    """
    from .synth import generate_tracks
    tracks, ego_ids = generate_tracks(n_episodes, seed)
    scenes = build_scenes(tracks)
    base = {
        "seed": seed,
        "run.kfold": 1,
        "run.holdout_runs": 1,
        "run.schemes": ("auto",),
        "label.sides": ("left",),
        "run.models": BENCHMARK_MODELS,
        "train.epochs": 28,
        "train.learning_rate": 1e-3,
        "train.class_weights": True,
        "svm.max_per_class": 1000,
    }
    if overrides:
        base.update(overrides)
    cfg = cfgmod.resolve(overrides=base)
    if out_dir is None:
        import tempfile
        out_dir = tempfile.mkdtemp(prefix="lanegap-benchmark-")
    reports = run_experiment(cfg, out_dir, tracks=tracks, scenes=scenes,
                             ego_ids=ego_ids)
    return {r.model: r for r in reports}


# ---------------------------------------------------------------------------
# timeline export

TIMELINE_COLUMNS = ("frame_id", "label", "svm", "p", "o")


def export_timeline(sequences, vehicle_id: int, target_side: str,
                    frame_window: tuple, weights=None, svm_model=None,
                    lookahead: int = 100) -> list:
    """Per-frame rows (frame_id, label, svm, p, o) over one frame window.

    Rows come from the stored sequences of (vehicle, side) clipped to the
    window; an empty intersection yields an empty list.  Model columns stay
    blank when the corresponding model is not supplied.
    """
    lo, hi = frame_window
    rows = []
    for seq in sequences:
        if seq.vehicle_id != vehicle_id or seq.target_side != target_side:
            continue
        contexts = seq.contexts()
        labels = seq.labels()
        keep = [i for i, ctx in enumerate(contexts) if lo <= ctx.frame_id <= hi]
        if not keep:
            continue
        sub = [contexts[i] for i in keep]
        svm_col = [""] * len(sub)
        if svm_model is not None:
            from .svm import build_svm_features
            feats = np.array([build_svm_features(c) for c in sub])
            svm_col = [int(v) for v in svm_model.predict(feats)]
        p_col = [""] * len(sub)
        o_col = [""] * len(sub)
        if weights is not None:
            if weights.bidirectional:
                out = forward_bidir(sub, weights, lookahead)
            else:
                out = forward_unidir(sub, weights)
            p_col = [float(v) for v in out.probs]
            o_col = [int(v) for v in out.classes]
        for j, i in enumerate(keep):
            rows.append({"frame_id": contexts[i].frame_id,
                         "label": int(labels[i]), "svm": svm_col[j],
                         "p": p_col[j], "o": o_col[j]})
    rows.sort(key=lambda r: r["frame_id"])
    return rows


def write_timeline(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TIMELINE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
