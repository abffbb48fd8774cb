"""Trajectory ingestion and scene/neighbor queries.

Input tables follow the public NGSIM trajectory schema (one row per vehicle
per 0.1 s frame).  Everything downstream works in SI units with
``longitudinal_pos`` increasing along the travel direction and
``lateral_pos`` increasing to the right; lower lane ids are further left.
"""

import logging
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from io import StringIO
from math import inf, isfinite

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FRAME_DT = 0.1  # s between consecutive frames
FEET_TO_M = 0.3048

REQUIRED_COLUMNS = (
    "Vehicle_ID", "Frame_ID", "Local_X", "Local_Y", "v_Vel", "v_Length",
    "Lane_ID",
)

LEFT = "left"
RIGHT = "right"
SIDES = (LEFT, RIGHT)

TRACK_STORE_MAGIC = "# lanegap-track-store v1"
_TRACK_FIELDS = ("vehicle_id", "frame_id", "lane_id", "longitudinal_pos",
                 "lateral_pos", "speed", "length")


class ParseError(ValueError):
    """Raised when an input table cannot be understood."""


class EgoMissingError(KeyError):
    """Raised when the queried ego vehicle is not part of a scene."""


class TargetLaneError(ValueError):
    """Raised when the requested side has no adjacent target lane."""


# ---------------------------------------------------------------------------
# core records

@dataclass(frozen=True)
class TrajectoryFrame:
    """State of one vehicle at one 0.1 s frame, SI units."""

    vehicle_id: int
    frame_id: int
    lane_id: int
    longitudinal_pos: float
    lateral_pos: float
    speed: float
    length: float


@dataclass(frozen=True)
class Track:
    """Contiguous frames of one vehicle (frame_id steps of exactly 1)."""

    vehicle_id: int
    frames: tuple

    @property
    def first_frame(self) -> int:
        return self.frames[0].frame_id

    @property
    def last_frame(self) -> int:
        return self.frames[-1].frame_id

    @property
    def key(self) -> tuple:
        """Stable identity for split bookkeeping: (vehicle, first frame)."""
        return (self.vehicle_id, self.first_frame)

    def frame_at(self, frame_id: int):
        idx = frame_id - self.first_frame
        if 0 <= idx < len(self.frames):
            return self.frames[idx]
        return None


@dataclass(frozen=True)
class Scene:
    """All vehicles observed in a single frame, indexed for lane queries."""

    frame_id: int
    entries: dict
    _by_lane: dict = field(repr=False)

    @staticmethod
    def build(frame_id, frames) -> "Scene":
        entries = {}
        by_lane = {}
        for fr in frames:
            entries[fr.vehicle_id] = fr
            by_lane.setdefault(fr.lane_id, []).append(fr)
        for lane in by_lane:
            by_lane[lane].sort(key=lambda fr: (fr.longitudinal_pos, fr.vehicle_id))
        index = {
            lane: ([fr.longitudinal_pos for fr in rows], rows)
            for lane, rows in by_lane.items()
        }
        return Scene(frame_id=frame_id, entries=entries, _by_lane=index)

    def lane_members(self, lane_id):
        got = self._by_lane.get(lane_id)
        return got[1] if got else []

    def nearest_in_lane(self, lane_id, pos, direction, exclude=()):
        """Nearest vehicle at/ahead (+1) or at/behind (-1) of pos in a lane.

        Distance ties are broken by the lower vehicle_id.
        """
        got = self._by_lane.get(lane_id)
        if not got:
            return None
        positions, rows = got
        if direction > 0:
            i = bisect_left(positions, pos)
            while i < len(rows):
                p = positions[i]
                best = None
                while i < len(rows) and positions[i] == p:
                    fr = rows[i]
                    if fr.vehicle_id not in exclude and (
                            best is None or fr.vehicle_id < best.vehicle_id):
                        best = fr
                    i += 1
                if best is not None:
                    return best
            return None
        i = bisect_right(positions, pos) - 1
        while i >= 0:
            p = positions[i]
            j = i
            best = None
            while j >= 0 and positions[j] == p:
                fr = rows[j]
                if fr.vehicle_id not in exclude and (
                        best is None or fr.vehicle_id < best.vehicle_id):
                    best = fr
                j -= 1
            if best is not None:
                return best
            i = j
        return None


@dataclass(frozen=True)
class LaneLayout:
    """Lane adjacency: lower ids are further left, ramps are not targets."""

    target_lanes: frozenset

    def left_of(self, lane_id):
        cand = lane_id - 1
        return cand if cand in self.target_lanes else None

    def right_of(self, lane_id):
        cand = lane_id + 1
        return cand if cand in self.target_lanes else None

    def target_lane(self, lane_id, side):
        if side == LEFT:
            return self.left_of(lane_id)
        if side == RIGHT:
            return self.right_of(lane_id)
        raise ValueError(f"unknown side {side!r}")


#: Main lanes 1-6; on/off-ramp and auxiliary lanes keep their ids but are
#: never offered as change targets.
DEFAULT_LAYOUT = LaneLayout(target_lanes=frozenset(range(1, 7)))


@dataclass(frozen=True)
class NeighborContext:
    """Ego plus its four relevant neighbors for one hypothetical change.

    Distances are absolute longitudinal offsets; relative speeds are
    ``ego.speed - other.speed``; closing times divide the distance by the
    speed at which the pair is approaching (ahead: ego faster closes,
    behind: the other faster closes) and are +inf for opening pairs or
    absent neighbors.
    """

    frame_id: int
    target_side: str
    ego: TrajectoryFrame | None
    pv: TrajectoryFrame | None
    rv: TrajectoryFrame | None
    plv: TrajectoryFrame | None
    pfv: TrajectoryFrame | None
    d_pv: float
    d_rv: float
    d_plv: float
    d_pfv: float
    v_pv: float
    v_rv: float
    v_plv: float
    v_pfv: float
    t_pv: float
    t_rv: float
    t_plv: float
    t_pfv: float

    @staticmethod
    def from_frames(ego, pv, rv, plv, pfv, target_side) -> "NeighborContext":
        def rel(other):
            if other is None:
                return inf, 0.0
            return abs(ego.longitudinal_pos - other.longitudinal_pos), \
                ego.speed - other.speed

        d_pv, v_pv = rel(pv)
        d_rv, v_rv = rel(rv)
        d_plv, v_plv = rel(plv)
        d_pfv, v_pfv = rel(pfv)
        return NeighborContext(
            frame_id=ego.frame_id, target_side=target_side, ego=ego,
            pv=pv, rv=rv, plv=plv, pfv=pfv,
            d_pv=d_pv, d_rv=d_rv, d_plv=d_plv, d_pfv=d_pfv,
            v_pv=v_pv, v_rv=v_rv, v_plv=v_plv, v_pfv=v_pfv,
            t_pv=closing_time(d_pv, v_pv),
            t_rv=closing_time(d_rv, -v_rv),
            t_plv=closing_time(d_plv, v_plv),
            t_pfv=closing_time(d_pfv, -v_pfv),
        )

    @property
    def distances(self):
        return (self.d_pv, self.d_rv, self.d_plv, self.d_pfv)

    @property
    def rel_speeds(self):
        return (self.v_pv, self.v_rv, self.v_plv, self.v_pfv)


def closing_time(gap: float, closing_speed: float) -> float:
    """Time until a gap closes; +inf when it is opening or already infinite."""
    if gap == inf or closing_speed <= 0.0:
        return inf
    return gap / closing_speed


# ---------------------------------------------------------------------------
# parsing

def _read_table(source) -> pd.DataFrame:
    if hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    elif isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(source, "r") as fh:
            text = fh.read()
    if not text.strip():
        return pd.DataFrame()
    first = text.lstrip().splitlines()[0]
    sep = "," if "," in first else r"\s+"
    try:
        return pd.read_csv(StringIO(text), sep=sep, engine="python")
    except pd.errors.EmptyDataError:
        return pd.DataFrame()


def parse_ngsim(source, units: str = "feet") -> list:
    """Parse an NGSIM-style trajectory table into contiguous tracks.

    source: path, text, or file-like object; comma- or whitespace-delimited
    with a header row.  units: "feet" converts positions, speeds and
    lengths to SI; "meters" keeps values as-is.  Rows with non-finite
    values or negative speeds are dropped with a counted warning.  Frame
    gaps split a vehicle into separate tracks.
    """
    if units not in ("feet", "meters"):
        raise ValueError(f"units must be 'feet' or 'meters', got {units!r}")
    table = _read_table(source)
    if table.empty and len(table.columns) == 0:
        return []
    for col in REQUIRED_COLUMNS:
        if col not in table.columns:
            raise ParseError(f"missing required column {col!r}")
    cols = {c: pd.to_numeric(table[c], errors="coerce").to_numpy(dtype=float)
            for c in REQUIRED_COLUMNS}
    finite = np.ones(len(table), dtype=bool)
    for c in REQUIRED_COLUMNS:
        finite &= np.isfinite(cols[c])
    good = finite & (cols["v_Vel"] >= 0.0)
    dropped = int(len(table) - good.sum())
    if dropped:
        logger.warning("dropped %d malformed rows (non-finite or negative speed)",
                       dropped)
    scale = FEET_TO_M if units == "feet" else 1.0
    vid = cols["Vehicle_ID"][good].astype(np.int64)
    fid = cols["Frame_ID"][good].astype(np.int64)
    lane = cols["Lane_ID"][good].astype(np.int64)
    lon = cols["Local_Y"][good] * scale
    lat = cols["Local_X"][good] * scale
    vel = cols["v_Vel"][good] * scale
    length = cols["v_Length"][good] * scale

    order = np.lexsort((fid, vid))
    tracks = []
    run_frames: list = []
    prev_vid = None
    prev_fid = None
    dup = 0

    def flush():
        if run_frames:
            tracks.append(Track(vehicle_id=run_frames[0].vehicle_id,
                                frames=tuple(run_frames)))

    for i in order:
        v, f = int(vid[i]), int(fid[i])
        if v == prev_vid and f == prev_fid:
            dup += 1
            continue
        if v != prev_vid or (prev_fid is not None and f != prev_fid + 1):
            flush()
            run_frames = []
        run_frames.append(TrajectoryFrame(
            vehicle_id=v, frame_id=f, lane_id=int(lane[i]),
            longitudinal_pos=float(lon[i]), lateral_pos=float(lat[i]),
            speed=float(vel[i]), length=float(length[i])))
        prev_vid, prev_fid = v, f
    flush()
    if dup:
        logger.warning("dropped %d duplicate (vehicle, frame) rows", dup)
    return tracks


# ---------------------------------------------------------------------------
# track store

def save_track_store(tracks, path) -> None:
    """Write tracks as line-delimited SI records with a fixed field order."""
    with open(path, "w") as fh:
        fh.write(TRACK_STORE_MAGIC + "\n")
        fh.write(",".join(_TRACK_FIELDS) + "\n")
        for tr in tracks:
            for fr in tr.frames:
                fh.write(f"{fr.vehicle_id},{fr.frame_id},{fr.lane_id},"
                         f"{fr.longitudinal_pos!r},{fr.lateral_pos!r},"
                         f"{fr.speed!r},{fr.length!r}\n")


def load_track_store(path) -> list:
    """Read a track store written by :func:`save_track_store`."""
    with open(path, "r") as fh:
        magic = fh.readline().strip()
        if magic != TRACK_STORE_MAGIC:
            raise ParseError(f"not a track store: unexpected header {magic!r}")
        # exact float parsing so cached stores round-trip bit-identically
        table = pd.read_csv(fh, float_precision="round_trip")
    for col in _TRACK_FIELDS:
        if col not in table.columns:
            raise ParseError(f"missing required column {col!r}")
    tracks = []
    run: list = []
    prev = (None, None)
    vid = table["vehicle_id"].to_numpy(np.int64)
    fid = table["frame_id"].to_numpy(np.int64)
    lane = table["lane_id"].to_numpy(np.int64)
    lon = table["longitudinal_pos"].to_numpy(float)
    lat = table["lateral_pos"].to_numpy(float)
    vel = table["speed"].to_numpy(float)
    length = table["length"].to_numpy(float)
    order = np.lexsort((fid, vid))
    for i in order:
        v, f = int(vid[i]), int(fid[i])
        if prev[0] is None or v != prev[0] or f != prev[1] + 1:
            if run:
                tracks.append(Track(run[0].vehicle_id, tuple(run)))
            run = []
        run.append(TrajectoryFrame(v, f, int(lane[i]), float(lon[i]),
                                   float(lat[i]), float(vel[i]), float(length[i])))
        prev = (v, f)
    if run:
        tracks.append(Track(run[0].vehicle_id, tuple(run)))
    return tracks


# ---------------------------------------------------------------------------
# scenes and neighbors

def build_scenes(tracks) -> dict:
    """Group track frames into per-frame scenes."""
    buckets: dict = {}
    for tr in tracks:
        for fr in tr.frames:
            buckets.setdefault(fr.frame_id, []).append(fr)
    return {fid: Scene.build(fid, frames) for fid, frames in buckets.items()}


def lane_pair(scene, lane_id, pos, exclude=()):
    """(ahead, behind) frames nearest to pos in a lane, either may be None."""
    ahead = scene.nearest_in_lane(lane_id, pos, +1, exclude)
    behind = scene.nearest_in_lane(lane_id, pos, -1, exclude)
    return ahead, behind


def identify_neighbors(scene, ego_id, target_side, layout=DEFAULT_LAYOUT,
                       target_lane=None) -> NeighborContext:
    """Resolve PV/RV in the ego lane and PLV/PFV in the target lane.

    target_lane overrides the layout lookup (used when the hypothetical
    target lane was fixed at an earlier frame).  Raises EgoMissingError if
    ego is not in the scene and TargetLaneError if no target lane exists.
    """
    ego = scene.entries.get(ego_id)
    if ego is None:
        raise EgoMissingError(ego_id)
    if target_lane is None:
        target_lane = layout.target_lane(ego.lane_id, target_side)
        if target_lane is None:
            raise TargetLaneError(
                f"lane {ego.lane_id} has no {target_side} target lane")
    excl = (ego_id,)
    pv, rv = lane_pair(scene, ego.lane_id, ego.longitudinal_pos, excl)
    plv, pfv = lane_pair(scene, target_lane, ego.longitudinal_pos, excl)
    return NeighborContext.from_frames(ego, pv, rv, plv, pfv, target_side)


def tracks_to_frames(tracks):
    """Flatten tracks into one frame list (inverse of scene grouping)."""
    out = []
    for tr in tracks:
        out.extend(tr.frames)
    return out
