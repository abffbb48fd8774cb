"""Command-line interface for the lane-change suitability toolkit."""

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from . import config as cfgmod
from .data import (SIDES, TargetLaneError, build_scenes, identify_neighbors,
                   load_track_store, parse_ngsim, save_track_store)
from .harness import (export_timeline, merge_stores, run_experiment,
                      write_timeline)
from .idm import make_rollout_predictor
from .labeling import (IGNORE, augment, read_sequences, split_windows,
                       write_sequences)
from .metrics import average_accuracy
from .rnn import (forward_bidir, forward_unidir, load_checkpoint,
                  predict_online, save_checkpoint)
from .svm import (balanced_sample_indices, grid_search_svm, idm_baseline_label,
                  load_svm, save_svm, sequence_feature_rows)
from .train import train

logger = logging.getLogger(__name__)


def _cmd_ingest(args) -> int:
    all_tracks = []
    for i, path in enumerate(args.files):
        tracks = parse_ngsim(path, units=args.units)
        if len(args.files) > 1:
            frame_off = i * 10_000_000
            vid_off = i * 1_000_000
            tracks = [
                replace(tr, vehicle_id=tr.vehicle_id + vid_off,
                        frames=tuple(
                            replace(fr, vehicle_id=fr.vehicle_id + vid_off,
                                    frame_id=fr.frame_id + frame_off)
                            for fr in tr.frames))
                for tr in tracks]
        all_tracks.extend(tracks)
        logger.info("%s: %d tracks", path, len(tracks))
    save_track_store(all_tracks, args.out)
    print(f"wrote {len(all_tracks)} tracks to {args.out}")
    return 0


def _load_cfg(args) -> dict:
    file_cfg = cfgmod.load_config(args.config) if args.config else None
    return cfgmod.resolve(file_cfg)


def _cmd_label(args) -> int:
    cfg = _load_cfg(args)
    from .harness import prepare_sequences
    tracks, scenes = merge_stores([args.tracks])
    sequences = prepare_sequences(tracks, scenes, args.scheme, cfg)
    if args.augment:
        sequences = augment(sequences, scenes, int(cfg.get("seed", 0)),
                            params=cfgmod.label_params(cfg))
    write_sequences(sequences, args.out)
    n_frames = sum(len(s.frames) for s in sequences)
    print(f"wrote {len(sequences)} sequences ({n_frames} frames) to "
          f"{args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_cfg(args)
    sequences = read_sequences(args.data)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    if args.model in ("lstm", "bilstm"):
        tc = cfgmod.train_config(cfg, seed=seed)
        weights = train(sequences, tc, bidirectional=args.model == "bilstm")
        save_checkpoint(args.out, weights, args.model, tc.as_dict())
    elif args.model in ("svm", "svm_star"):
        use_future = args.model == "svm_star"
        stride = int(cfg.get("svm.frame_stride", 5))
        x, y, _ = sequence_feature_rows(sequences, use_future,
                                        frame_stride=stride)
        rng = np.random.default_rng(seed)
        n = y.shape[0]
        val = np.zeros(n, dtype=bool)
        val[rng.permutation(n)[:max(1, n // 10)]] = True
        picked = balanced_sample_indices(
            y[~val], rng, n_per_class=int(cfg.get("svm.max_per_class", 1500)))
        model, c, gamma, acc = grid_search_svm(
            x[~val][picked], y[~val][picked], x[val], y[val],
            cfgmod.as_tuple(cfg.get("svm.cs")),
            cfgmod.as_tuple(cfg.get("svm.gammas")))
        save_svm(args.out, model)
        print(f"selected C={c:g} gamma={gamma:g} (validation acc {acc:.4f})")
    else:
        raise SystemExit(f"unknown model {args.model!r}")
    print(f"wrote model to {args.out}")
    return 0


def _eval_frames(preds, labels) -> str:
    acc_p, acc_n, acc = average_accuracy(preds, labels)
    return (f"frames {len(labels)}\n"
            f"acc_p {acc_p:.4f}\nacc_n {acc_n:.4f}\nacc {acc:.4f}\n")


def _live_contexts(seq, scenes) -> list:
    """Re-derive full contexts from scenes; stored sequences only carry
    the numeric features, not the frames a rollout needs."""
    return [identify_neighbors(scenes[c.frame_id], seq.vehicle_id,
                               seq.target_side) for c in seq.contexts()]


def _cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    sequences = read_sequences(args.data)
    window = int(cfg.get("train.window_frames", 100))
    lookahead = int(cfg.get("train.lookahead_frames", 100))
    preds = []
    labels = []
    if args.model == "idm" or args.online:
        if not args.tracks:
            raise SystemExit("--tracks is required for rollout-based "
                             "evaluation")
        _, scenes = merge_stores([args.tracks])
        predictor = make_rollout_predictor(scenes, cfgmod.idm_params(cfg))
    if args.model == "idm":
        horizon = int(round(float(cfg.get("label.horizon_s", 3.0)) / 0.1))
        for seq in sequences:
            lab = seq.labels()
            for i, ctx in enumerate(_live_contexts(seq, scenes)):
                if lab[i] == IGNORE:
                    continue
                preds.append(idm_baseline_label(
                    ctx, predictor, horizon,
                    float(cfg.get("label.min_time_gap_s", 1.0))))
                labels.append(lab[i])
    elif args.model.endswith(".json"):
        model = load_svm(args.model)
        use_future = model.feature_dim > 8
        x, y, _ = sequence_feature_rows(sequences, use_future)
        preds = model.predict(x)
        labels = y
    else:
        weights, kind, _ = load_checkpoint(args.model)
        for seq in split_windows(sequences, window):
            if not weights.bidirectional:
                out = forward_unidir(seq.contexts(), weights)
            elif args.online:
                out = predict_online(weights, _live_contexts(seq, scenes),
                                     predictor, lookahead)
            else:
                out = forward_bidir(seq.contexts(), weights, lookahead)
            lab = seq.labels()
            keep = lab != IGNORE
            preds.extend(out.classes[keep])
            labels.extend(lab[keep])
    text = _eval_frames(np.asarray(preds), np.asarray(labels))
    print(text, end="")
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote report to {args.report}")
    return 0


def _context_runs(track, scenes, side) -> list:
    """Contiguous runs of frames that have a target lane on ``side``.

    Vehicles on an edge lane have no target lane there, and a vehicle may
    cross such a lane mid-track, so each covered stretch is scanned with
    fresh recurrent state — the same segmentation the labelers use.
    """
    runs = []
    current = []
    for fr in track.frames:
        try:
            ctx = identify_neighbors(scenes[fr.frame_id], track.vehicle_id,
                                     side)
        except TargetLaneError:
            if current:
                runs.append(current)
                current = []
            continue
        current.append(ctx)
    if current:
        runs.append(current)
    return runs


def _cmd_predict(args) -> int:
    cfg = _load_cfg(args)
    weights, kind, _ = load_checkpoint(args.model)
    tracks, scenes = merge_stores([args.tracks])
    track = next((t for t in tracks if t.vehicle_id == args.track), None)
    if track is None:
        raise SystemExit(f"vehicle {args.track} not in {args.tracks}")
    runs = _context_runs(track, scenes, args.side)
    if not runs:
        raise SystemExit(f"vehicle {args.track} never has a {args.side} "
                         "target lane")
    lookahead = int(cfg.get("train.lookahead_frames", 100))
    lines = ["frame_id,p,o"]
    n_rows = 0
    for contexts in runs:
        if not weights.bidirectional:
            out = forward_unidir(contexts, weights)
        elif args.online:
            predictor = make_rollout_predictor(scenes, cfgmod.idm_params(cfg))
            out = predict_online(weights, contexts, predictor, lookahead)
        else:
            out = forward_bidir(contexts, weights, lookahead)
        lines += [f"{ctx.frame_id},{p:.6f},{o}"
                  for ctx, p, o in zip(contexts, out.probs, out.classes)]
        n_rows += len(contexts)
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {n_rows} rows to {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_export_timeline(args) -> int:
    sequences = read_sequences(args.data)
    weights = None
    if args.model:
        weights, _, _ = load_checkpoint(args.model)
    svm_model = load_svm(args.svm) if args.svm else None
    rows = export_timeline(sequences, args.track, args.side,
                           (args.frame_from, args.frame_to), weights=weights,
                           svm_model=svm_model, lookahead=args.lookahead)
    write_timeline(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_run(args) -> int:
    file_cfg = cfgmod.load_config(args.config)
    cfg = cfgmod.resolve(file_cfg)
    reports = run_experiment(cfg, args.out)
    for rep in reports:
        print(f"{rep.model:<12} {rep.dataset:<13} acc {rep.acc:.4f}")
    print(f"reports written to {args.out}")
    return 0


def _cmd_synth(args) -> int:
    from .synth import benchmark_dataset
    sequences, scenes, tracks = benchmark_dataset(args.episodes, args.seed)
    save_track_store(tracks, args.tracks_out)
    print(f"wrote {len(tracks)} tracks to {args.tracks_out}")
    if args.seqs_out:
        write_sequences(sequences, args.seqs_out)
        print(f"wrote {len(sequences)} sequences to {args.seqs_out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanegap",
        description="Lane-change suitability assessment toolkit")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="enable progress logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse trajectory files into a store")
    p.add_argument("files", nargs="+")
    p.add_argument("--units", choices=("feet", "meters"), default="feet")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("label", help="label a track store")
    p.add_argument("--tracks", required=True)
    p.add_argument("--scheme", choices=("action", "auto"), required=True)
    p.add_argument("--config")
    p.add_argument("--augment", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_label)

    p = sub.add_parser("train", help="train a classifier on sequences")
    p.add_argument("--model", choices=("lstm", "bilstm", "svm", "svm_star"),
                   required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a model on labeled sequences")
    p.add_argument("--model", required=True,
                   help="checkpoint (.npz), SVM model (.json), or 'idm'")
    p.add_argument("--data", required=True)
    p.add_argument("--tracks", help="track store for rollout predictors")
    p.add_argument("--online", action="store_true",
                   help="bidirectional models: predict the lookahead")
    p.add_argument("--config")
    p.add_argument("--report")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="per-frame outputs for one vehicle")
    p.add_argument("--model", required=True)
    p.add_argument("--tracks", required=True)
    p.add_argument("--track", type=int, required=True)
    p.add_argument("--side", choices=SIDES, required=True)
    p.add_argument("--online", action="store_true")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("export-timeline",
                       help="frame_id/label/svm/p/o table for one window")
    p.add_argument("--data", required=True)
    p.add_argument("--track", type=int, required=True)
    p.add_argument("--side", choices=SIDES, required=True)
    p.add_argument("--frame-from", type=int, required=True)
    p.add_argument("--frame-to", type=int, required=True)
    p.add_argument("--model")
    p.add_argument("--svm")
    p.add_argument("--lookahead", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_timeline)

    p = sub.add_parser("run", help="full experiment protocol from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="runs")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("synth", help="generate car-following scenarios")
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--tracks-out", required=True)
    p.add_argument("--seqs-out")
    p.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
