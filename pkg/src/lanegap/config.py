"""Flat key-value run configuration.

One text file drives every tunable: `key = value` per line, `#` comments,
dotted keys namespaced per module.  Values round-trip through simple type
inference: true/false, integers, floats, comma-separated tuples, and
strings for everything else.
"""

from dataclasses import fields

from .idm import IdmParams
from .labeling import LabelParams
from .train import TrainConfig

DEFAULTS = {
    "seed": 0,
    "label.scheme": "action",
    "label.lateral_speed_min": 0.213,
    "label.negative_window_s": 5.0,
    "label.min_label_gap_s": 1.0,
    "label.horizon_s": 3.0,
    "label.min_time_gap_s": 1.0,
    "label.target_lane_weight": 2.0,
    "label.speed_weight": 1.8,
    "label.min_relative_change": 0.35,
    "label.augment": False,
    "label.sides": ("left", "right"),
    "idm.desired_speed": 30.0,
    "idm.min_gap": 2.0,
    "idm.time_headway": 1.5,
    "idm.max_accel": 1.4,
    "idm.comfort_decel": 2.0,
    "idm.exponent": 4.0,
    "train.window_frames": 100,
    "train.lookahead_frames": 100,
    "train.hidden_dim": 128,
    "train.embed_dim": 16,
    "train.learning_rate": 1e-3,
    "train.l2_penalty": 1e-3,
    "train.grad_clip": 5.0,
    "train.epochs": 10,
    "train.batch_size": 32,
    "train.class_weights": False,
    "train.val_fraction": 0.1,
    "svm.cs": (0.1, 1.0, 10.0, 100.0, 1000.0),
    "svm.gammas": (0.001, 0.01, 0.1, 1.0),
    "svm.frame_stride": 5,
    "svm.max_per_class": 1500,
    "run.models": ("svm", "svm_star", "lstm", "bilstm", "bilstm_star", "idm"),
    "run.schemes": ("action", "auto"),
    "run.kfold": 5,
    "run.holdout_runs": 5,
    "run.train_fraction": 0.8,
    "run.out_dir": "runs",
    "run.tracks": (),
}


def parse_value(text: str):
    text = text.strip()
    if text == "":
        return ()
    if "," in text:
        parts = [p for p in (s.strip() for s in text.split(",")) if p]
        return tuple(parse_value(p) for p in parts)
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        if len(value) == 1:
            return format_value(value[0]) + ","  # keep 1-tuples tuples
        return ", ".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def loads(text: str) -> dict:
    cfg = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        cfg[key.strip()] = parse_value(value)
    return cfg


def dumps(cfg: dict) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in cfg.items())


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def save_config(path, cfg: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))


def resolve(file_cfg: dict = None, overrides: dict = None) -> dict:
    """Defaults, overlaid by the file, overlaid by explicit overrides."""
    cfg = dict(DEFAULTS)
    for layer in (file_cfg, overrides):
        if layer:
            for key, value in layer.items():
                if key not in DEFAULTS:
                    raise KeyError(f"unknown configuration key {key!r}")
                cfg[key] = value
    return cfg


def as_tuple(value) -> tuple:
    """Normalize a config value to a tuple (scalars wrap, '' empties)."""
    if isinstance(value, tuple):
        return value
    if isinstance(value, list):
        return tuple(value)
    if value == "" or value is None:
        return ()
    return (value,)


def _take(cfg: dict, prefix: str, cls):
    names = {f.name for f in fields(cls)}
    kw = {}
    for key, value in cfg.items():
        head, _, tail = key.partition(".")
        if head == prefix and tail in names:
            kw[tail] = value
    return cls(**kw)


def label_params(cfg: dict) -> LabelParams:
    return _take(cfg, "label", LabelParams)


def idm_params(cfg: dict) -> IdmParams:
    return _take(cfg, "idm", IdmParams)


def train_config(cfg: dict, seed=None) -> TrainConfig:
    tc = _take(cfg, "train", TrainConfig)
    if seed is None:
        seed = int(cfg.get("seed", 0))
    return TrainConfig(**{**tc.as_dict(), "seed": seed})
