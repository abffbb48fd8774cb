"""Frame labeling for lane-change suitability.

Two label sources are supported.  The action-based scheme finds executed
lane changes, marks the maneuver frames positive, a window well before the
maneuver negative, and the buffer between them ignore, then keeps only
events whose surroundings actually changed between the negative and
positive samples.  The automatic scheme marks a frame positive when the
target-lane closing times stay acceptable over the whole lookahead
horizon.  Labels: 1 = suitable, 0 = unsuitable, -1 = ignore.
"""

import logging
from dataclasses import dataclass, field
from math import inf

import numpy as np

from .data import (FRAME_DT, SIDES, LEFT, RIGHT, DEFAULT_LAYOUT,
                   NeighborContext, closing_time, identify_neighbors)

logger = logging.getLogger(__name__)

POSITIVE = 1
NEGATIVE = 0
IGNORE = -1

SEQUENCE_STORE_MAGIC = "# lanegap-sequences v1"
_SEQ_COLUMNS = ("vehicle_id", "frame_id", "target_side", "d_pv", "d_rv",
                "d_plv", "d_pfv", "v_pv", "v_rv", "v_plv", "v_pfv", "label")


class MissingNeighbor(ValueError):
    """Raised when a score needs a neighbor that is not present."""


@dataclass(frozen=True)
class LabelParams:
    """Knobs for both labeling schemes and the event filter."""

    lateral_speed_min: float = 0.213     # m/s, maneuver onset magnitude
    negative_window_s: float = 5.0       # length of the pre-maneuver negative window
    min_label_gap_s: float = 1.0         # buffer between negative and positive frames
    horizon_s: float = 3.0               # automatic-scheme lookahead
    min_time_gap_s: float = 1.0          # smallest acceptable closing time
    target_lane_weight: float = 2.0      # target-lane terms count double
    speed_weight: float = 1.8            # seconds converting speeds to distances
    min_relative_change: float = 0.35    # required relative change of the extent score


DEFAULT_LABEL_PARAMS = LabelParams()


@dataclass(frozen=True)
class LaneChangeEvent:
    """An executed lane change: maneuver onset to boundary crossing."""

    vehicle_id: int
    track_key: tuple
    direction: str
    t_start: int          # first maneuver frame
    t_cross: int          # first frame in the new lane
    source_lane: int
    target_lane: int


@dataclass
class LabeledSequence:
    """Contiguous (context, label) frames for one vehicle and side."""

    vehicle_id: int
    target_side: str
    frames: list
    source_id: str = ""

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a labeled sequence needs at least one frame")
        prev = None
        for ctx, label in self.frames:
            if label not in (POSITIVE, NEGATIVE, IGNORE):
                raise ValueError(f"bad label {label!r}")
            if prev is not None and ctx.frame_id != prev + 1:
                raise ValueError("sequence frames must be contiguous")
            prev = ctx.frame_id

    def labels(self) -> np.ndarray:
        return np.array([lab for _, lab in self.frames], dtype=np.int64)

    def contexts(self) -> list:
        return [ctx for ctx, _ in self.frames]

    @property
    def first_frame(self) -> int:
        return self.frames[0][0].frame_id

    @property
    def last_frame(self) -> int:
        return self.frames[-1][0].frame_id


# ---------------------------------------------------------------------------
# lane-change detection

def lateral_speeds(track) -> np.ndarray:
    """Per-frame lateral velocity via central differences (one-sided ends)."""
    lat = np.array([fr.lateral_pos for fr in track.frames])
    n = lat.shape[0]
    v = np.zeros(n)
    if n >= 2:
        v[1:-1] = (lat[2:] - lat[:-2]) / (2.0 * FRAME_DT)
        v[0] = (lat[1] - lat[0]) / FRAME_DT
        v[-1] = (lat[-1] - lat[-2]) / FRAME_DT
    return v

def detect_lane_changes(track, params: LabelParams = DEFAULT_LABEL_PARAMS,
                        layout=DEFAULT_LAYOUT) -> list:
    """Find executed lane changes with a resolvable maneuver onset.

    The onset is found by walking backward from the crossing while the
    lateral velocity keeps pointing toward the target lane with magnitude
    >= params.lateral_speed_min and does not change sign.  Events with an
    empty walk, or whose new lane is not a valid target, are dropped.
    """
    frames = track.frames
    if len(frames) < 2:
        return []
    lat_v = lateral_speeds(track)
    events = []
    for i in range(1, len(frames)):
        old, new = frames[i - 1].lane_id, frames[i].lane_id
        if new == old:
            continue
        if new not in layout.target_lanes:
            logger.debug("change into non-target lane %d skipped", new)
            continue
        direction = LEFT if new < old else RIGHT
        toward = -1.0 if direction == LEFT else 1.0
        j = i - 1
        start = None
        while j >= 0:
            v = lat_v[j] * toward
            if v < params.lateral_speed_min:
                break
            start = j
            j -= 1
        if start is None:
            logger.debug("change at frame %d has no maneuver onset, dropped",
                         frames[i].frame_id)
            continue
        events.append(LaneChangeEvent(
            vehicle_id=track.vehicle_id, track_key=track.key,
            direction=direction, t_start=frames[start].frame_id,
            t_cross=frames[i].frame_id, source_lane=old, target_lane=new))
    return events


# ---------------------------------------------------------------------------
# situation scores and the event filter

def situation_scores(ctx: NeighborContext,
                     params: LabelParams = DEFAULT_LABEL_PARAMS):
    """(extent, suitability) of a fully observed neighborhood.

    extent accumulates the four neighbor distances plus their absolute
    relative speeds converted to distances, with target-lane terms
    weighted by target_lane_weight; larger means more open space.
    suitability rewards pulling away from the vehicles ahead and being
    pulled away from by the vehicles behind, minus the extent.
    Raises MissingNeighbor unless all four neighbors are present.
    """
    g = params.target_lane_weight
    b = params.speed_weight
    if any(d == inf for d in ctx.distances):
        raise MissingNeighbor("all four neighbors are required")
    extent = (ctx.d_pv + g * ctx.d_plv + ctx.d_rv + g * ctx.d_pfv
              + b * (abs(ctx.v_pv) + g * abs(ctx.v_plv)
                     + abs(ctx.v_rv) + g * abs(ctx.v_pfv)))
    suitability = (ctx.v_pv + g * ctx.v_plv - ctx.v_rv - g * ctx.v_pfv
                   - extent)
    return extent, suitability


def pair_is_informative(ctx_negative: NeighborContext,
                        ctx_positive: NeighborContext,
                        params: LabelParams = DEFAULT_LABEL_PARAMS) -> bool:
    """Keep an event only if the situation changed enough between the last
    negative frame and the first positive frame: the extent must move by at
    least min_relative_change of its negative-frame value and the
    suitability must not improve already at the negative frame."""
    try:
        ext_n, suit_n = situation_scores(ctx_negative, params)
        ext_p, suit_p = situation_scores(ctx_positive, params)
    except MissingNeighbor:
        return False
    if ext_n <= 0.0:
        return False
    rel = abs(ext_n - ext_p) / ext_n
    return rel >= params.min_relative_change and suit_n >= suit_p


# ---------------------------------------------------------------------------
# action-based labeling

def label_event(event: LaneChangeEvent, scenes,
                params: LabelParams = DEFAULT_LABEL_PARAMS,
                layout=DEFAULT_LAYOUT):
    """Build the labeled window for one event, or None if disqualified.

    Layout: [negative_window | ignore buffer | maneuver positives), ending
    just before the crossing frame.  Disqualified when the window leaves
    the observed coverage, when a context cannot be built, or when the
    (last negative, first positive) pair is uninformative.
    """
    neg_len = int(round(params.negative_window_s / FRAME_DT))
    gap_len = int(round(params.min_label_gap_s / FRAME_DT))
    start = event.t_start - gap_len - neg_len
    frames = []
    for fid in range(start, event.t_cross):
        scene = scenes.get(fid)
        if scene is None or event.vehicle_id not in scene.entries:
            return None
        ego = scene.entries[event.vehicle_id]
        if ego.lane_id != event.source_lane:
            # the whole window must precede the crossing in the source lane
            return None
        ctx = identify_neighbors(scene, event.vehicle_id, event.direction,
                                 layout, target_lane=event.target_lane)
        if fid < event.t_start - gap_len:
            label = NEGATIVE
        elif fid < event.t_start:
            label = IGNORE
        else:
            label = POSITIVE
        frames.append((ctx, label))
    last_negative = frames[neg_len - 1][0]
    first_positive = frames[neg_len + gap_len][0]
    if not pair_is_informative(last_negative, first_positive, params):
        return None
    return LabeledSequence(
        vehicle_id=event.vehicle_id, target_side=event.direction,
        frames=frames,
        source_id=f"event:{event.vehicle_id}:{event.t_cross}:{event.direction}")


def label_action_scheme(tracks, scenes,
                        params: LabelParams = DEFAULT_LABEL_PARAMS,
                        layout=DEFAULT_LAYOUT) -> list:
    """Detect and label every qualifying lane change in the tracks."""
    sequences = []
    detected = 0
    for tr in tracks:
        for event in detect_lane_changes(tr, params, layout):
            detected += 1
            seq = label_event(event, scenes, params, layout)
            if seq is not None:
                sequences.append(seq)
    logger.info("action labeling: %d events detected, %d kept",
                detected, len(sequences))
    return sequences


# ---------------------------------------------------------------------------
# automatic labeling

def _gap_flag_prefix(track, scenes, lane_id, min_time_gap) -> np.ndarray:
    """Prefix sums of per-frame 'target-lane closing times acceptable'."""
    n = len(track.frames)
    pref = np.zeros(n + 1, dtype=np.int64)
    total = 0
    for j, fr in enumerate(track.frames):
        scene = scenes[fr.frame_id]
        ok = True
        ahead = scene.nearest_in_lane(lane_id, fr.longitudinal_pos, +1,
                                      (fr.vehicle_id,))
        if ahead is not None:
            d = abs(fr.longitudinal_pos - ahead.longitudinal_pos)
            if closing_time(d, fr.speed - ahead.speed) < min_time_gap:
                ok = False
        if ok:
            behind = scene.nearest_in_lane(lane_id, fr.longitudinal_pos, -1,
                                           (fr.vehicle_id,))
            if behind is not None:
                d = abs(fr.longitudinal_pos - behind.longitudinal_pos)
                if closing_time(d, behind.speed - fr.speed) < min_time_gap:
                    ok = False
        total += 1 if ok else 0
        pref[j + 1] = total
    return pref


def automatic_labels(track, scenes, target_side,
                     params: LabelParams = DEFAULT_LABEL_PARAMS,
                     layout=DEFAULT_LAYOUT) -> list:
    """Label each frame by the observed future of the target lane.

    A frame is positive iff for every future offset within the horizon the
    closing times toward the target-lane leader and follower (the lane is
    fixed at the current frame) are at least min_time_gap_s; absent
    neighbors pass.  Frames without a full horizon of future coverage, or
    without a valid target lane, get no label.  Returns (frame_id, label)
    pairs.
    """
    horizon = int(round(params.horizon_s / FRAME_DT))
    n = len(track.frames)
    prefix_by_lane = {}
    out = []
    for k in range(max(0, n - horizon)):
        fr = track.frames[k]
        lane = layout.target_lane(fr.lane_id, target_side)
        if lane is None:
            continue
        pref = prefix_by_lane.get(lane)
        if pref is None:
            pref = _gap_flag_prefix(track, scenes, lane, params.min_time_gap_s)
            prefix_by_lane[lane] = pref
        all_ok = (pref[k + 1 + horizon] - pref[k + 1]) == horizon
        out.append((fr.frame_id, POSITIVE if all_ok else NEGATIVE))
    return out


def label_automatic_scheme(tracks, scenes,
                           params: LabelParams = DEFAULT_LABEL_PARAMS,
                           layout=DEFAULT_LAYOUT, sides=SIDES) -> list:
    """Automatic labels for every track and side, as contiguous sequences."""
    sequences = []
    for tr in tracks:
        for side in sides:
            labeled = automatic_labels(tr, scenes, side, params, layout)
            run = []
            prev = None
            for fid, lab in labeled:
                if prev is not None and fid != prev + 1 and run:
                    sequences.append(_auto_sequence(tr, run, side))
                    run = []
                ctx = identify_neighbors(scenes[fid], tr.vehicle_id, side,
                                         layout)
                run.append((ctx, lab))
                prev = fid
            if run:
                sequences.append(_auto_sequence(tr, run, side))
    return sequences


def _auto_sequence(track, frames, side) -> LabeledSequence:
    return LabeledSequence(
        vehicle_id=track.vehicle_id, target_side=side, frames=list(frames),
        source_id=f"track:{track.key[0]}:{track.key[1]}:{side}")


def auto_label_at(scenes, vehicle_id, frame_id, side,
                  params: LabelParams = DEFAULT_LABEL_PARAMS,
                  layout=DEFAULT_LAYOUT):
    """Automatic label of one frame, or None where it is undefined."""
    horizon = int(round(params.horizon_s / FRAME_DT))
    scene = scenes.get(frame_id)
    ego = scene.entries.get(vehicle_id) if scene else None
    if ego is None:
        return None
    lane = layout.target_lane(ego.lane_id, side)
    if lane is None:
        return None
    future = []
    for i in range(1, horizon + 1):
        sc = scenes.get(frame_id + i)
        fr = sc.entries.get(vehicle_id) if sc else None
        if fr is None:
            return None
        future.append((sc, fr))
    for sc, fr in future:
        ahead = sc.nearest_in_lane(lane, fr.longitudinal_pos, +1, (vehicle_id,))
        if ahead is not None:
            d = abs(fr.longitudinal_pos - ahead.longitudinal_pos)
            if closing_time(d, fr.speed - ahead.speed) < params.min_time_gap_s:
                return NEGATIVE
        behind = sc.nearest_in_lane(lane, fr.longitudinal_pos, -1, (vehicle_id,))
        if behind is not None:
            d = abs(fr.longitudinal_pos - behind.longitudinal_pos)
            if closing_time(d, behind.speed - fr.speed) < params.min_time_gap_s:
                return NEGATIVE
    return POSITIVE


# ---------------------------------------------------------------------------
# agreement and augmentation

def agreement(labels_a, labels_b) -> float:
    """Fraction of frames labeled non-ignore by both schemes that agree."""
    map_a = dict(labels_a)
    map_b = dict(labels_b)
    shared = [fid for fid, lab in map_a.items()
              if lab != IGNORE and map_b.get(fid, IGNORE) != IGNORE]
    if not shared:
        raise ValueError("no frames are labeled by both schemes")
    hits = sum(1 for fid in shared if map_a[fid] == map_b[fid])
    return hits / len(shared)


def _try_context(scenes, vehicle_id, frame_id, side, layout):
    scene = scenes.get(frame_id)
    if scene is None or vehicle_id not in scene.entries:
        return None
    try:
        return identify_neighbors(scene, vehicle_id, side, layout)
    except (KeyError, ValueError):
        return None


def _window_variant(seq, new_first, new_last, scenes, params, layout):
    """Shift/extend a sequence; fresh frames get automatic labels or ignore."""
    if new_first > new_last:
        return None
    by_fid = {ctx.frame_id: (ctx, lab) for ctx, lab in seq.frames}
    lo = max(new_first, seq.first_frame)
    hi = min(new_last, seq.last_frame)
    middle = [by_fid[f] for f in range(lo, hi + 1)]
    left = []
    fid = seq.first_frame - 1
    while fid >= new_first:
        ctx = _try_context(scenes, seq.vehicle_id, fid, seq.target_side, layout)
        if ctx is None:
            break
        lab = auto_label_at(scenes, seq.vehicle_id, fid, seq.target_side,
                            params, layout)
        left.append((ctx, IGNORE if lab is None else lab))
        fid -= 1
    left.reverse()
    right = []
    fid = seq.last_frame + 1
    while fid <= new_last:
        ctx = _try_context(scenes, seq.vehicle_id, fid, seq.target_side, layout)
        if ctx is None:
            break
        lab = auto_label_at(scenes, seq.vehicle_id, fid, seq.target_side,
                            params, layout)
        right.append((ctx, IGNORE if lab is None else lab))
        fid += 1
    frames = (left + middle + right) if middle else (left or right)
    if not frames or len(frames) < 10:
        return None
    return LabeledSequence(vehicle_id=seq.vehicle_id,
                           target_side=seq.target_side, frames=frames,
                           source_id=seq.source_id + ":shift")


def _pure_window(seq, scenes, rng, want_label, params, layout,
                 reach: int = 100, min_len: int = 50):
    """A window of constant automatic label near the sequence, or None."""
    lo = seq.first_frame - reach
    hi = seq.last_frame + reach
    runs = []
    run_start = None
    for fid in range(lo, hi + 1):
        lab = auto_label_at(scenes, seq.vehicle_id, fid, seq.target_side,
                            params, layout)
        ok = lab == want_label and _try_context(
            scenes, seq.vehicle_id, fid, seq.target_side, layout) is not None
        if ok and run_start is None:
            run_start = fid
        elif not ok and run_start is not None:
            runs.append((run_start, fid - 1))
            run_start = None
    if run_start is not None:
        runs.append((run_start, hi))
    runs = [r for r in runs if r[1] - r[0] + 1 >= min_len]
    if not runs:
        return None
    start, end = runs[int(rng.integers(0, len(runs)))]
    span = end - start + 1
    size = min(span, 100)
    off = int(rng.integers(0, span - size + 1))
    frames = []
    for fid in range(start + off, start + off + size):
        ctx = _try_context(scenes, seq.vehicle_id, fid, seq.target_side, layout)
        frames.append((ctx, want_label))
    return LabeledSequence(vehicle_id=seq.vehicle_id,
                           target_side=seq.target_side, frames=frames,
                           source_id=seq.source_id + ":pure")


def augment(sequences, scenes, seed: int,
            params: LabelParams = DEFAULT_LABEL_PARAMS,
            layout=DEFAULT_LAYOUT, shift_range_s: float = 5.0) -> list:
    """Originals plus up to two variants per input, deterministic in seed.

    Each input contributes one start/end-shifted window (shifts drawn
    uniformly within +-shift_range_s, freshly covered frames labeled by the
    automatic scheme where defined, ignore otherwise) and one
    constant-label window sampled from long uniform stretches nearby
    (alternating positive/negative preference).  n inputs yield between n
    and 3n sequences.
    """
    rng = np.random.default_rng(seed)
    shift = int(round(shift_range_s / FRAME_DT))
    out = list(sequences)
    for idx, seq in enumerate(sequences):
        ds = int(rng.integers(-shift, shift + 1))
        de = int(rng.integers(-shift, shift + 1))
        var = _window_variant(seq, seq.first_frame + ds, seq.last_frame + de,
                              scenes, params, layout)
        if var is not None:
            out.append(var)
        want = POSITIVE if idx % 2 == 0 else NEGATIVE
        pure = _pure_window(seq, scenes, rng, want, params, layout)
        if pure is not None:
            out.append(pure)
    return out


# ---------------------------------------------------------------------------
# sequence files

def write_sequences(sequences, path, predicted: bool = False) -> None:
    """Write labeled sequences as line-delimited frame records.

    Rollout exports set predicted=True, which appends a 'predicted' column
    fixed at 1; measured data keeps the plain 12-column layout.
    """
    cols = _SEQ_COLUMNS + (("predicted",) if predicted else ())
    with open(path, "w") as fh:
        fh.write(SEQUENCE_STORE_MAGIC + "\n")
        fh.write(",".join(cols) + "\n")
        for seq in sequences:
            fh.write(f"# seq {seq.source_id}\n")
            for ctx, label in seq.frames:
                row = [str(seq.vehicle_id), str(ctx.frame_id), seq.target_side,
                       repr(ctx.d_pv), repr(ctx.d_rv), repr(ctx.d_plv),
                       repr(ctx.d_pfv), repr(ctx.v_pv), repr(ctx.v_rv),
                       repr(ctx.v_plv), repr(ctx.v_pfv), str(label)]
                if predicted:
                    row.append("1")
                fh.write(",".join(row) + "\n")


def _detached_context(frame_id, side, d, v) -> NeighborContext:
    return NeighborContext(
        frame_id=frame_id, target_side=side, ego=None, pv=None, rv=None,
        plv=None, pfv=None,
        d_pv=d[0], d_rv=d[1], d_plv=d[2], d_pfv=d[3],
        v_pv=v[0], v_rv=v[1], v_plv=v[2], v_pfv=v[3],
        t_pv=closing_time(d[0], v[0]), t_rv=closing_time(d[1], -v[1]),
        t_plv=closing_time(d[2], v[2]), t_pfv=closing_time(d[3], -v[3]))


def read_sequences(path) -> list:
    """Read sequences written by :func:`write_sequences`.

    Contexts come back without observed frames (distances and relative
    speeds only), which is all the frame-wise models need.
    """
    sequences = []
    current = []
    meta = {"source": ""}

    def flush():
        if current:
            seq = LabeledSequence(
                vehicle_id=current[0][0], target_side=current[0][1],
                frames=[(c, l) for _, _, c, l in current],
                source_id=meta["source"])
            sequences.append(seq)

    with open(path, "r") as fh:
        magic = fh.readline().strip()
        if magic != SEQUENCE_STORE_MAGIC:
            raise ValueError(f"not a sequence store: {magic!r}")
        header = fh.readline().strip().split(",")
        for col in _SEQ_COLUMNS:
            if col not in header:
                raise ValueError(f"missing required column {col!r}")
        prev = None
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                flush()
                current = []
                prev = None
                meta["source"] = line[5:].strip() if line.startswith("# seq") else ""
                continue
            parts = line.split(",")
            vid = int(parts[0])
            fid = int(parts[1])
            side = parts[2]
            vals = [float(x) for x in parts[3:11]]
            label = int(parts[11])
            ctx = _detached_context(fid, side, vals[0:4], vals[4:8])
            if prev is not None and (vid != prev[0] or side != prev[1]
                                     or fid != prev[2] + 1):
                flush()
                current = []
            current.append((vid, side, ctx, label))
            prev = (vid, side, fid)
        flush()
    return sequences


def split_windows(sequences, window_frames: int) -> list:
    """Chop sequences into consecutive windows of at most window_frames."""
    out = []
    for seq in sequences:
        if len(seq.frames) <= window_frames:
            out.append(seq)
            continue
        for k, start in enumerate(range(0, len(seq.frames), window_frames)):
            chunk = seq.frames[start:start + window_frames]
            if not chunk:
                continue
            out.append(LabeledSequence(
                vehicle_id=seq.vehicle_id, target_side=seq.target_side,
                frames=chunk, source_id=f"{seq.source_id}:w{k}"))
    return out
