"""Experiment orchestration: splits, reports, timelines, merged stores."""

import csv

import numpy as np
import pytest

from lanegap.data import build_scenes, save_track_store
from lanegap.harness import (
    EvalReport,
    FoldOutcome,
    carve_validation_units,
    combine_folds,
    confusion_counts,
    export_timeline,
    idm_outcome,
    make_split,
    merge_stores,
    prepare_sequences,
    recurrent_outcome,
    run_experiment,
    select_sequences,
    svm_outcome,
    write_reports,
    write_timeline,
)
from lanegap.labeling import (
    IGNORE,
    LabeledSequence,
    NEGATIVE,
    POSITIVE,
    label_automatic_scheme,
)
from lanegap.metrics import average_accuracy
from lanegap.rnn import init_weights
from lanegap.svm import svm_train
from lanegap import config as cfgmod

from conftest import make_ctx, straight_track


def always_class(bidirectional, cls, embed_dim=4, hidden_dim=6):
    """Weights whose output bias forces a constant prediction."""
    w = init_weights(seed=0, embed_dim=embed_dim, hidden_dim=hidden_dim,
                     bidirectional=bidirectional)
    w.b_out[:] = 0.0
    w.b_out[cls] = 50.0
    return w


def labeled_seq(vid, labels, side="left", first_fid=1):
    frames = [(make_ctx(frame_id=first_fid + k, d_pv=30.0 + k), lab)
              for k, lab in enumerate(labels)]
    return LabeledSequence(vid, side, frames, f"s:{vid}:{first_fid}")


def two_lane_world(n_frames=45):
    tracks = [straight_track(1, 2, 100.0, 20.0, n_frames),
              straight_track(2, 1, 140.0, 22.0, n_frames),
              straight_track(3, 2, 160.0, 20.0, n_frames)]
    return tracks, build_scenes(tracks)


# ---------------------------------------------------------------------------
# splits

class TestSplits:

    def test_kfold_assigns_every_unit_once(self):
        plan = make_split(range(1, 11), "kfold", seed=3, k=5)
        assert sorted(plan.assignment) == list(range(1, 11))
        for f in range(5):
            assert len(plan.units(f)) == 2

    def test_fold_sides_partition(self):
        plan = make_split(range(1, 11), "kfold", seed=3, k=5)
        for f in range(5):
            train_units, test_units = plan.fold_sides(f)
            assert train_units | test_units == set(range(1, 11))
            assert not train_units & test_units

    def test_holdout_fraction(self):
        plan = make_split(range(10), "holdout", seed=0, train_fraction=0.8)
        assert len(plan.units("train")) == 8
        assert len(plan.units("test")) == 2
        assert plan.units("train") | plan.units("test") == set(range(10))

    def test_deterministic_by_seed(self):
        a = make_split(range(20), "kfold", seed=5, k=4)
        b = make_split(range(20), "kfold", seed=5, k=4)
        c = make_split(range(20), "kfold", seed=6, k=4)
        assert a.assignment == b.assignment
        assert a.assignment != c.assignment

    def test_duplicate_ids_collapse(self):
        plan = make_split([1, 1, 2, 2, 3], "kfold", seed=0, k=3)
        assert len(plan.assignment) == 3

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            make_split(range(4), "bootstrap")

    def test_carve_validation(self):
        train_units, val_units = carve_validation_units(set(range(20)), 1)
        assert len(val_units) == 2
        assert train_units | val_units == set(range(20))
        assert not train_units & val_units

    def test_carve_validation_minimum_one(self):
        train_units, val_units = carve_validation_units({1, 2, 3}, 0,
                                                        fraction=0.1)
        assert len(val_units) == 1

    def test_carve_validation_degenerate(self):
        assert carve_validation_units({1}, 0) == ({1}, set())
        assert carve_validation_units({1, 2}, 0, fraction=0.0) == \
            ({1, 2}, set())

    def test_select_sequences(self):
        seqs = [labeled_seq(1, [1]), labeled_seq(2, [0]), labeled_seq(3, [1])]
        assert [s.vehicle_id for s in select_sequences(seqs, {1, 3})] == [1, 3]


# ---------------------------------------------------------------------------
# reports

class TestReports:

    def test_acc_must_be_exact_mean(self):
        EvalReport("svm", "automatic", acc_p=0.9, acc_n=0.6, acc=0.75)
        with pytest.raises(ValueError):
            EvalReport("svm", "automatic", acc_p=0.9, acc_n=0.6,
                       acc=0.7500000001)

    def test_confusion_counts(self):
        preds = np.array([1, 1, 0, 0, 1])
        labels = np.array([1, 0, 0, 1, 1])
        assert confusion_counts(preds, labels) == (2, 1, 1, 1)

    def test_fold_outcome_scores(self):
        out = FoldOutcome(preds=np.array([1, 1, 0, 0]),
                          labels=np.array([1, 0, 0, 0]))
        assert out.scores == average_accuracy(out.preds, out.labels)

    def test_combine_folds_averages_fold_scores(self):
        perfect = FoldOutcome(preds=np.array([1, 1, 0, 0]),
                              labels=np.array([1, 1, 0, 0]))
        half = FoldOutcome(preds=np.array([1, 0, 1, 0]),
                           labels=np.array([1, 1, 0, 0]))
        rep = combine_folds("lstm", "automatic", [perfect, half])
        assert rep.acc_p == pytest.approx(0.75, abs=1e-12)
        assert rep.acc_n == pytest.approx(0.75, abs=1e-12)
        assert rep.acc == (rep.acc_p + rep.acc_n) / 2.0
        assert (rep.tp, rep.fp, rep.tn, rep.fn) == (3, 1, 3, 1)
        assert rep.fold_accs == (1.0, 0.5)

    def test_write_reports_round_trip(self, tmp_path):
        rep = combine_folds("svm", "action-based", [FoldOutcome(
            preds=np.array([1, 0]), labels=np.array([1, 0]))])
        write_reports([rep], str(tmp_path))
        with open(tmp_path / "reports.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["model"] == "svm"
        assert float(rows[0]["acc"]) == 1.0
        assert (tmp_path / "summary.txt").read_text().count("svm") == 1


# ---------------------------------------------------------------------------
# per-model outcomes

class TestOutcomes:

    def test_recurrent_outcome_collects_non_ignore_frames(self):
        seqs = [labeled_seq(1, [POSITIVE, IGNORE, NEGATIVE, POSITIVE]),
                labeled_seq(2, [NEGATIVE, NEGATIVE])]
        w = always_class(True, 1)
        out = recurrent_outcome(w, seqs, "bidir_real", lookahead=2,
                                window_frames=4)
        assert out.labels.tolist() == [1, 0, 1, 0, 0]
        assert out.preds.tolist() == [1] * 5

    def test_recurrent_outcome_unidir(self):
        seqs = [labeled_seq(1, [POSITIVE, NEGATIVE])]
        w = always_class(False, 0)
        out = recurrent_outcome(w, seqs, "unidir", lookahead=0,
                                window_frames=2)
        assert out.preds.tolist() == [0, 0]

    def test_online_mode_needs_scenes(self):
        seqs = [labeled_seq(1, [POSITIVE])]
        with pytest.raises(ValueError):
            recurrent_outcome(always_class(True, 1), seqs, "bidir_online",
                              lookahead=1)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            recurrent_outcome(always_class(True, 1), [], "forward",
                              lookahead=1)

    def test_online_outcome_on_real_world(self):
        tracks, scenes = two_lane_world()
        seqs = label_automatic_scheme(tracks, scenes, sides=("left",))
        assert seqs
        out = recurrent_outcome(always_class(True, 1), seqs, "bidir_online",
                                lookahead=5, scenes=scenes)
        assert np.all(out.preds == 1)
        assert out.labels.size == sum(
            (s.labels() != IGNORE).sum() for s in seqs)

    def test_svm_outcome(self, rng):
        seqs = [labeled_seq(1, [POSITIVE, NEGATIVE] * 8)]
        from lanegap.svm import sequence_feature_rows

        x, y, _ = sequence_feature_rows(seqs)
        model = svm_train(x, np.where(y == 1, 1.0, -1.0), c=10.0, gamma=0.1)
        out = svm_outcome(model, seqs, use_future=False)
        assert out.labels.tolist() == y.tolist()
        assert out.preds.shape == y.shape

    def test_idm_outcome_stride(self):
        tracks, scenes = two_lane_world()
        seqs = label_automatic_scheme(tracks, scenes, sides=("left",))
        full = idm_outcome(seqs, scenes)
        strided = idm_outcome(seqs, scenes, frame_stride=3)
        assert full.labels.size > strided.labels.size > 0
        assert set(np.unique(full.preds)) <= {0, 1}


# ---------------------------------------------------------------------------
# dataset preparation

class TestPreparation:

    def test_merge_stores_offsets_ids(self, tmp_path):
        a = [straight_track(1, 2, 0.0, 20.0, 5)]
        b = [straight_track(1, 1, 50.0, 25.0, 5)]
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        save_track_store(a, pa)
        save_track_store(b, pb)
        tracks, scenes = merge_stores([pa, pb])
        assert sorted(t.vehicle_id for t in tracks) == [1, 1_000_001]
        assert 1 in scenes and 10_000_001 in scenes
        second = [t for t in tracks if t.vehicle_id == 1_000_001][0]
        assert second.frames[0].frame_id == 10_000_001
        assert second.frames[0].longitudinal_pos == 50.0

    def test_prepare_sequences_schemes(self):
        tracks, scenes = two_lane_world()
        cfg = cfgmod.resolve()
        auto = prepare_sequences(tracks, scenes, "auto", cfg)
        assert auto and all(s.target_side in ("left", "right") for s in auto)
        with pytest.raises(ValueError):
            prepare_sequences(tracks, scenes, "manual", cfg)

    def test_prepare_sequences_ego_filter(self):
        tracks, scenes = two_lane_world()
        cfg = cfgmod.resolve(overrides={"label.sides": ("left",)})
        only_one = prepare_sequences(tracks, scenes, "auto", cfg,
                                     ego_ids=[1])
        assert {s.vehicle_id for s in only_one} == {1}


# ---------------------------------------------------------------------------
# timelines

class TestTimeline:

    def make_seq(self):
        labels = [POSITIVE] * 5 + [NEGATIVE] * 5
        return labeled_seq(7, labels, side="right", first_fid=11)

    def test_window_clipping(self):
        seq = self.make_seq()
        rows = export_timeline([seq], 7, "right", (13, 16))
        assert [r["frame_id"] for r in rows] == [13, 14, 15, 16]
        assert [r["label"] for r in rows] == [1, 1, 1, 0]

    def test_disjoint_window_is_empty(self):
        assert export_timeline([self.make_seq()], 7, "right", (100, 120)) == []

    def test_other_vehicle_and_side_skipped(self):
        seq = self.make_seq()
        assert export_timeline([seq], 8, "right", (11, 20)) == []
        assert export_timeline([seq], 7, "left", (11, 20)) == []

    def test_blank_columns_without_models(self):
        rows = export_timeline([self.make_seq()], 7, "right", (11, 12))
        assert rows[0]["svm"] == "" and rows[0]["p"] == "" \
            and rows[0]["o"] == ""

    def test_model_columns_filled(self, rng):
        seq = self.make_seq()
        w = always_class(True, 1)
        x = np.array([[30.0, 200, 200, 200, 0, 0, 0, 0],
                      [35.0, 200, 200, 200, 0, 0, 0, 0]])
        svm = svm_train(np.vstack([x, x + 100.0]),
                        np.array([-1.0, -1.0, 1.0, 1.0]), c=10.0, gamma=0.1)
        rows = export_timeline([seq], 7, "right", (11, 20), weights=w,
                               svm_model=svm, lookahead=5)
        assert len(rows) == 10
        assert all(r["o"] == 1 for r in rows)
        assert all(r["p"] > 0.99 for r in rows)
        assert all(r["svm"] in (0, 1) for r in rows)

    def test_write_timeline(self, tmp_path):
        rows = export_timeline([self.make_seq()], 7, "right", (11, 13))
        path = tmp_path / "timeline.csv"
        write_timeline(rows, path)
        with open(path, newline="") as fh:
            parsed = list(csv.DictReader(fh))
        assert [p["frame_id"] for p in parsed] == ["11", "12", "13"]


# ---------------------------------------------------------------------------
# end-to-end protocol (cheap model subset)

def test_run_experiment_idm_only(tmp_path):
    # slow car in the target lane is overtaken mid-track: early frames see
    # a collapsing gap (negative), late frames an opening one (positive)
    tracks = [straight_track(1, 2, 100.0, 20.0, 60),
              straight_track(2, 1, 131.0, 5.0, 60)]
    scenes = build_scenes(tracks)
    cfg = cfgmod.resolve(overrides={
        "run.models": ("idm",),
        "run.schemes": ("auto",),
        "label.sides": ("left",),
    })
    reports = run_experiment(cfg, str(tmp_path), tracks=tracks, scenes=scenes)
    assert [r.model for r in reports] == ["idm"]
    assert reports[0].dataset == "automatic"
    assert 0.0 <= reports[0].acc <= 1.0
    assert (tmp_path / "reports.csv").exists()
    assert (tmp_path / "summary.txt").exists()
    assert (tmp_path / "resolved.cfg").exists()
    resolved = cfgmod.load_config(tmp_path / "resolved.cfg")
    assert resolved["run.models"] == ("idm",)


def test_run_experiment_requires_tracks(tmp_path):
    cfg = cfgmod.resolve(overrides={"run.tracks": ()})
    with pytest.raises(ValueError):
        run_experiment(cfg, str(tmp_path))


def test_run_experiment_missing_store(tmp_path):
    cfg = cfgmod.resolve(overrides={"run.tracks": (str(tmp_path / "no.csv"),)})
    with pytest.raises(FileNotFoundError):
        run_experiment(cfg, str(tmp_path))
