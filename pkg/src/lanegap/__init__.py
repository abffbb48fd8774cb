"""Lane-change suitability assessment toolkit.

Ingests highway trajectory data, labels it by executed maneuvers or by
future target-lane time gaps, predicts near-future traffic with the
Intelligent Driver Model, and trains recurrent sequence classifiers
(LSTM / bidirectional LSTM over occupancy-grid embeddings) against SVM
and car-following-only baselines.
"""

__version__ = "0.1.0"

from ._accel import HAVE_NUMBA, NUMBA_ENABLED
from .data import (DEFAULT_LAYOUT, LaneLayout, NeighborContext, Scene, Track,
                   TrajectoryFrame, build_scenes, identify_neighbors,
                   load_track_store, parse_ngsim, save_track_store)
from .grid import OccupancyGrid, encode_grid
from .idm import DEFAULT_IDM, IdmParams, equilibrium_gap, idm_accel, rollout
from .labeling import (LabeledSequence, LabelParams, agreement, augment,
                       detect_lane_changes, label_action_scheme,
                       label_automatic_scheme, read_sequences,
                       split_windows, write_sequences)
from .metrics import average_accuracy
from .rnn import (ModelWeights, forward_bidir, forward_unidir,
                  init_weights, load_checkpoint, predict_online,
                  save_checkpoint)
from .svm import (SvmModel, build_svm_features, idm_baseline_label, load_svm,
                  save_svm, svm_train)
from .train import TrainConfig, train

__all__ = [
    "HAVE_NUMBA", "NUMBA_ENABLED", "DEFAULT_LAYOUT", "LaneLayout",
    "NeighborContext", "Scene", "Track", "TrajectoryFrame", "build_scenes",
    "identify_neighbors", "load_track_store", "parse_ngsim",
    "save_track_store", "OccupancyGrid", "encode_grid", "DEFAULT_IDM",
    "IdmParams", "equilibrium_gap", "idm_accel", "rollout",
    "LabeledSequence", "LabelParams", "agreement", "augment",
    "detect_lane_changes", "label_action_scheme", "label_automatic_scheme",
    "read_sequences", "split_windows", "write_sequences", "average_accuracy",
    "ModelWeights", "forward_bidir", "forward_unidir", "init_weights",
    "load_checkpoint", "predict_online", "save_checkpoint", "SvmModel",
    "build_svm_features", "idm_baseline_label", "load_svm", "save_svm",
    "svm_train", "TrainConfig", "train",
]
