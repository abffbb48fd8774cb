"""Shared builders for unit and acceptance tests."""

import numpy as np
import pytest

from lanegap.data import (
    NeighborContext,
    Scene,
    Track,
    TrajectoryFrame,
    build_scenes,
)

# lane centers: 3.7 m lanes with lane 1 leftmost, matching the labeling
# convention that a move to a lower lane_id is a "left" change
LANE_WIDTH = 3.7


def lane_center(lane_id: int) -> float:
    return LANE_WIDTH * lane_id - LANE_WIDTH / 2.0


def make_frame(vehicle_id, frame_id, lane_id, pos, speed=20.0,
               length=4.5, lateral_pos=None) -> TrajectoryFrame:
    if lateral_pos is None:
        lateral_pos = lane_center(lane_id)
    return TrajectoryFrame(
        vehicle_id=vehicle_id, frame_id=frame_id, lane_id=lane_id,
        longitudinal_pos=float(pos), lateral_pos=float(lateral_pos),
        speed=float(speed), length=float(length))


def straight_track(vehicle_id, lane_id, pos0, speed, n_frames,
                   first_frame=1, length=4.5, lateral_pos=None) -> Track:
    """Constant-speed, constant-lane track sampled at 10 Hz."""
    frames = tuple(
        make_frame(vehicle_id, first_frame + k, lane_id,
                   pos0 + speed * 0.1 * k, speed, length, lateral_pos)
        for k in range(n_frames))
    return Track(vehicle_id=vehicle_id, frames=frames)


def make_ctx(ego_speed=20.0, ego_pos=0.0, ego_lane=2, target_side="left",
             d_pv=None, v_pv=0.0, d_rv=None, v_rv=0.0,
             d_plv=None, v_plv=0.0, d_pfv=None, v_pfv=0.0,
             frame_id=0, lengths=4.5) -> NeighborContext:
    """Context with chosen gaps/relative speeds; None distance = absent.

    Relative speeds follow the ego-minus-other sign convention, so the
    neighbor's own speed is ego_speed - v_*.
    """
    target_lane = ego_lane - 1 if target_side == "left" else ego_lane + 1
    ego = make_frame(100, frame_id, ego_lane, ego_pos, ego_speed)

    def neighbor(vid, lane, offset, rel_speed, dist):
        if dist is None:
            return None
        return make_frame(vid, frame_id, lane, ego_pos + offset * dist,
                          ego_speed - rel_speed, lengths)

    pv = neighbor(101, ego_lane, +1, v_pv, d_pv)
    rv = neighbor(102, ego_lane, -1, v_rv, d_rv)
    plv = neighbor(103, target_lane, +1, v_plv, d_plv)
    pfv = neighbor(104, target_lane, -1, v_pfv, d_pfv)
    return NeighborContext.from_frames(ego, pv, rv, plv, pfv, target_side)


def scene_of(frame_id, *frames) -> Scene:
    return Scene.build(frame_id, list(frames))


def random_world(rng, n_frames=40, n_lanes=3, n_vehicles=None):
    """Random multi-lane constant-lane tracks with wandering speeds.

    Gaps, closing speeds and lane occupancy vary enough to exercise every
    branch of the future-gap labeling rule.  Returns (tracks, scenes).
    """
    if n_vehicles is None:
        n_vehicles = int(rng.integers(3, 9))
    tracks = []
    for vid in range(1, n_vehicles + 1):
        lane = int(rng.integers(1, n_lanes + 1))
        pos = float(rng.uniform(0.0, 220.0))
        speed = float(rng.uniform(2.0, 32.0))
        frames = []
        for k in range(n_frames):
            frames.append(make_frame(vid, k + 1, lane, pos, speed))
            speed = float(np.clip(speed + rng.uniform(-2.0, 2.0), 0.0, 40.0))
            pos += speed * 0.1
        tracks.append(Track(vehicle_id=vid, frames=tuple(frames)))
    return tracks, build_scenes(tracks)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
