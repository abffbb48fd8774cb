"""Kernel SVM baselines and the car-following-only labeler.

Features are the four neighbor distances (absent = 200 m cap) and the four
relative speeds (absent = 0), optionally repeated for the situations 5 s
and 10 s ahead.  Training solves the soft-margin dual with sequential
minimal optimization over a precomputed RBF Gram matrix; inputs are
standardized per dimension and the statistics travel with the model.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from .kernels import smo_solve
from .labeling import NEGATIVE, POSITIVE
from .metrics import balanced_or_plain_accuracy

logger = logging.getLogger(__name__)

DISTANCE_CAP_M = 200.0
GRID_C = (0.1, 1.0, 10.0, 100.0, 1000.0)
GRID_GAMMA = (0.001, 0.01, 0.1, 1.0)
KKT_TOL = 1e-3
DEFAULT_MAX_SWEEPS = 4000
SVM_STORE_VERSION = 1
PLAIN_DIM = 8
FUTURE_DIM = 24
FUTURE_OFFSETS = (50, 100)  # frames: 5 s and 10 s at 10 Hz


def _feature_block(ctx) -> list:
    return [min(ctx.d_pv, DISTANCE_CAP_M), min(ctx.d_rv, DISTANCE_CAP_M),
            min(ctx.d_plv, DISTANCE_CAP_M), min(ctx.d_pfv, DISTANCE_CAP_M),
            ctx.v_pv, ctx.v_rv, ctx.v_plv, ctx.v_pfv]


def build_svm_features(ctx, future=()) -> np.ndarray:
    """8 plain features, or 24 when two future contexts are given."""
    future = tuple(future)
    if len(future) not in (0, 2):
        raise ValueError("future must be empty or hold exactly two contexts")
    vals = _feature_block(ctx)
    for f in future:
        vals.extend(_feature_block(f))
    return np.array(vals)


def fit_standardizer(features: np.ndarray):
    """Per-dimension mean and deviation; constant dimensions get std 1."""
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    sq = (np.sum(a ** 2, axis=1)[:, None] + np.sum(b ** 2, axis=1)[None, :]
          - 2.0 * (a @ b.T))
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class SvmModel:
    support_vectors: np.ndarray  # (m, d) standardized
    dual_coefs: np.ndarray       # (m,) alpha_i * y_i
    bias: float
    gamma: float
    C: float
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if self.support_vectors.shape[0] != self.dual_coefs.shape[0]:
            raise ValueError("support vector / coefficient count mismatch")
        if np.any(np.abs(self.dual_coefs) > self.C + 1e-6):
            raise ValueError("dual coefficients exceed the box constraint")

    @property
    def feature_dim(self) -> int:
        return self.support_vectors.shape[1]

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(features)
        if x.shape[1] != self.feature_dim:
            raise ValueError(f"expected {self.feature_dim} features, "
                             f"got {x.shape[1]}")
        z = (x - self.mean) / self.std
        k = rbf_kernel(z, self.support_vectors, self.gamma)
        return k @ self.dual_coefs + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        """0/1 classes; a zero decision value falls to class 0."""
        out = (self.decision_function(features) > 0.0).astype(np.int64)
        return out if np.ndim(features) > 1 else out[0]


def fit_dual(x_std: np.ndarray, y_pm: np.ndarray, c: float, gamma: float,
             tol: float = KKT_TOL, max_sweeps: int = DEFAULT_MAX_SWEEPS):
    """Low-level solve on standardized inputs: (alphas, bias, gram)."""
    gram = rbf_kernel(x_std, x_std, gamma)
    alphas, bias, sweeps = smo_solve(
        np.ascontiguousarray(gram), np.ascontiguousarray(y_pm, dtype=float),
        float(c), float(tol), int(max_sweeps))
    if sweeps >= max_sweeps:
        logger.warning("optimizer hit the sweep cap (%d)", max_sweeps)
    return alphas, bias, gram


def kkt_max_violation(gram: np.ndarray, y_pm: np.ndarray, alphas: np.ndarray,
                      bias: float, c: float) -> float:
    """Largest optimality-condition violation over the training set."""
    u = gram @ (alphas * y_pm) + bias
    margin = y_pm * u
    at_zero = alphas <= 1e-8
    at_cap = alphas >= c - 1e-8
    interior = ~at_zero & ~at_cap
    viol = np.zeros_like(alphas)
    viol[at_zero] = np.maximum(0.0, 1.0 - margin[at_zero])
    viol[interior] = np.abs(margin[interior] - 1.0)
    viol[at_cap & ~at_zero] = np.maximum(0.0, margin[at_cap & ~at_zero] - 1.0)
    return float(viol.max()) if viol.size else 0.0


def svm_train(features: np.ndarray, labels_pm: np.ndarray, c: float,
              gamma: float, tol: float = KKT_TOL,
              max_sweeps: int = DEFAULT_MAX_SWEEPS) -> SvmModel:
    """Train on (n, d) raw features with labels in {-1, +1}."""
    features = np.asarray(features, dtype=float)
    y = np.asarray(labels_pm, dtype=float)
    if features.ndim != 2 or features.shape[0] != y.shape[0]:
        raise ValueError("features must be (n, d) aligned with labels")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise ValueError("training needs both classes")
    mean, std = fit_standardizer(features)
    x_std = (features - mean) / std
    alphas, bias, _ = fit_dual(x_std, y, c, gamma, tol, max_sweeps)
    keep = alphas > 0.0
    return SvmModel(support_vectors=x_std[keep].copy(),
                    dual_coefs=(alphas * y)[keep].copy(),
                    bias=float(bias), gamma=float(gamma), C=float(c),
                    mean=mean, std=std)


def grid_search_svm(x_train, y01_train, x_val, y01_val, cs=GRID_C,
                    gammas=GRID_GAMMA, tol: float = KKT_TOL,
                    max_sweeps: int = DEFAULT_MAX_SWEEPS):
    """Pick (C, gamma) by validation balanced accuracy; first best wins."""
    y_pm = np.where(np.asarray(y01_train) == POSITIVE, 1.0, -1.0)
    best = None
    best_acc = -np.inf
    for c in cs:
        for gamma in gammas:
            model = svm_train(x_train, y_pm, c, gamma, tol, max_sweeps)
            acc = balanced_or_plain_accuracy(model.predict(x_val),
                                             np.asarray(y01_val))
            logger.info("grid C=%g gamma=%g -> val acc %.4f", c, gamma, acc)
            if acc > best_acc:
                best_acc = acc
                best = model
    return best, best.C, best.gamma, best_acc


def balanced_sample_indices(labels01, rng, n_per_class=None) -> np.ndarray:
    """Equal-count class sample (without replacement), shuffled."""
    labels01 = np.asarray(labels01)
    pos = np.flatnonzero(labels01 == POSITIVE)
    neg = np.flatnonzero(labels01 == NEGATIVE)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("balanced sampling needs both classes")
    take = min(pos.size, neg.size)
    if n_per_class is not None:
        take = min(take, int(n_per_class))
    picked = np.concatenate([rng.choice(pos, size=take, replace=False),
                             rng.choice(neg, size=take, replace=False)])
    rng.shuffle(picked)
    return picked


def sequence_feature_rows(sequences, use_future: bool = False,
                          frame_stride: int = 1, predictor=None):
    """Per-frame feature rows from labeled sequences.

    use_future adds the +5 s and +10 s neighbor situations: taken from the
    sequence itself, or from `predictor(ctx, n_steps)` when one is given.
    Frames whose in-sequence future is cut short are skipped.  Returns
    (features (n, d), labels01 (n,), meta list of (source_id, frame_id)).
    """
    rows = []
    labels = []
    meta = []
    horizon = max(FUTURE_OFFSETS)
    for seq in sequences:
        contexts = seq.contexts()
        seq_labels = seq.labels()
        for i in range(0, len(contexts), frame_stride):
            label = seq_labels[i]
            if label not in (POSITIVE, NEGATIVE):
                continue
            ctx = contexts[i]
            future = ()
            if use_future:
                if predictor is not None:
                    pred = list(predictor(ctx, horizon))
                    if len(pred) < horizon or any(c is None for c in pred):
                        continue
                    future = tuple(pred[k - 1] for k in FUTURE_OFFSETS)
                elif i + horizon < len(contexts):
                    future = tuple(contexts[i + k] for k in FUTURE_OFFSETS)
                else:
                    continue
            rows.append(build_svm_features(ctx, future))
            labels.append(int(label))
            meta.append((seq.source_id, ctx.frame_id))
    if not rows:
        raise ValueError("no usable labeled frames for feature extraction")
    return np.array(rows), np.array(labels, dtype=np.int64), meta


# ---------------------------------------------------------------------------
# persistence

def save_svm(path, model: SvmModel) -> None:
    payload = {
        "format": "lanegap-svm",
        "version": SVM_STORE_VERSION,
        "kernel": "rbf",
        "gamma": model.gamma,
        "C": model.C,
        "bias": model.bias,
        "mean": model.mean.tolist(),
        "std": model.std.tolist(),
        "support_vectors": model.support_vectors.tolist(),
        "dual_coefs": model.dual_coefs.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_svm(path) -> SvmModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "lanegap-svm":
        raise ValueError("not a recognized model file")
    if payload.get("version") != SVM_STORE_VERSION:
        raise ValueError(f"unsupported model version {payload.get('version')}")
    if payload.get("kernel") != "rbf":
        raise ValueError(f"unsupported kernel {payload.get('kernel')}")
    sv = np.array(payload["support_vectors"], dtype=float)
    if sv.size == 0:
        sv = sv.reshape(0, len(payload["mean"]))
    return SvmModel(support_vectors=sv,
                    dual_coefs=np.array(payload["dual_coefs"], dtype=float),
                    bias=float(payload["bias"]), gamma=float(payload["gamma"]),
                    C=float(payload["C"]),
                    mean=np.array(payload["mean"], dtype=float),
                    std=np.array(payload["std"], dtype=float))


# ---------------------------------------------------------------------------
# car-following-only labeler

def idm_baseline_label(ctx, predictor, horizon_steps: int = 30,
                       min_time_gap: float = 1.0) -> int:
    """Label a situation from predicted target-lane time gaps alone.

    The predictor rolls the situation forward (contexts for offsets
    1..horizon_steps); the frame is suitable when the time gaps to the
    predicted target-lane leader and follower stay at or above
    min_time_gap for every step of the horizon.
    """
    for c in list(predictor(ctx, horizon_steps))[:horizon_steps]:
        if c is None:
            continue
        if c.t_plv < min_time_gap or c.t_pfv < min_time_gap:
            return NEGATIVE
    return POSITIVE
