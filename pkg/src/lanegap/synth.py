"""Synthetic two-lane scenarios driven by the car-following model.

Each episode puts an ego vehicle (with optional leader and follower) on
lane 2 next to a three-vehicle platoon on lane 1.  The platoon head and a
few other drivers change their desired speeds at scripted random times,
so target-lane gaps open and close with realistic car-following lags;
automatic labels over those episodes form a benchmark where history and
predicted futures genuinely matter.
"""

from dataclasses import dataclass

import numpy as np

from .data import Track, TrajectoryFrame, build_scenes
from .idm import DEFAULT_IDM, VehicleStates
from .labeling import DEFAULT_LABEL_PARAMS, label_automatic_scheme

EPISODE_FRAMES = 500
EGO_LANE = 2
TARGET_LANE = 1
LANE_CENTERS = {1: 1.85, 2: 5.55}
FRAME_STRIDE = 1000  # frame-id block reserved per episode
VID_STRIDE = 10


@dataclass(frozen=True)
class EpisodeResult:
    tracks: tuple
    ego_id: int


JITTER_TAU_S = 2.0     # correlation time of the speed wobble
JITTER_SIGMA = 0.5     # stationary std of the extra acceleration (m/s^2)
MEAS_TAU_S = 0.4       # correlation time of the speed measurement error
MEAS_SIGMA = 2.5       # stationary std of recorded-speed error (m/s)
POS_TAU_S = 0.7        # correlation time of the position tracking error
POS_SIGMA = 4.0        # stationary std of recorded-position error (m)


def _simulate(states: VehicleStates, events, n_frames: int, rng=None,
              jitter: float = JITTER_SIGMA):
    """Advance frame by frame; returns (pos, vel) of shape (T, N).

    Desired-speed events apply at their scheduled frames.  With an rng, a
    correlated acceleration wobble rides on top of the car-following
    dynamics — drivers do not hold model speeds exactly, so one frame's
    closing speed is only a noisy reading of the trend a labeler's future
    actually follows.
    """
    events = sorted(events)
    n = states.pos.shape[0]
    pos_all = np.empty((n_frames, n))
    vel_all = np.empty((n_frames, n))
    pos_all[0] = states.pos
    vel_all[0] = states.vel
    alpha = np.zeros(n)
    rho = float(np.exp(-0.1 / JITTER_TAU_S))
    drive = jitter * np.sqrt(1.0 - rho * rho)
    ei = 0
    for t in range(n_frames - 1):
        while ei < len(events) and events[ei][0] <= t:
            _, idx, v0 = events[ei]
            states.params[idx, 0] = v0
            ei += 1
        pos, vel = states.advance(1)
        states.pos = pos[-1].copy()
        states.vel = vel[-1].copy()
        if rng is not None and jitter > 0.0:
            alpha = rho * alpha + drive * rng.standard_normal(n)
            states.vel = np.maximum(0.0, states.vel + alpha * 0.1)
        pos_all[t + 1] = states.pos
        vel_all[t + 1] = states.vel
    return pos_all, vel_all


def _meas_noise(rng, shape, sigma: float = MEAS_SIGMA,
                tau: float = MEAS_TAU_S):
    """Correlated speed-measurement error, one series per column."""
    n_frames, n = shape
    rho = float(np.exp(-0.1 / tau))
    w = np.empty(shape)
    w[0] = sigma * rng.standard_normal(n)
    drive = sigma * np.sqrt(1.0 - rho * rho)
    for t in range(1, n_frames):
        w[t] = rho * w[t - 1] + drive * rng.standard_normal(n)
    return w


def synth_episode(rng, frame_base: int, vid_base: int,
                  n_frames: int = EPISODE_FRAMES) -> EpisodeResult:
    """One randomized episode; the ego never leaves lane 2.

    The target lane carries a convoy the ego drifts through as the convoy
    head and the ego's own leader change their desired speeds; every
    relative pass opens and closes gaps with car-following lag.
    """
    vb = rng.uniform(23.0, 30.0)            # ego-lane pace
    drift = rng.uniform(4.0, 12.0)          # lane pace differential
    vb1 = vb + (drift if rng.random() < 0.5 else -drift)

    n1 = 5 + int(rng.integers(0, 5))
    convoy = [f"c{i}" for i in range(n1)]
    roles = ["ego"]
    if rng.random() > 0.12:
        roles.append("pv")
    if rng.random() > 0.15:
        roles.append("rv")
    roles.extend(convoy)

    x_ego = 50.0
    x = {"ego": x_ego,
         "pv": x_ego + rng.uniform(12.0, 40.0),
         "rv": x_ego - rng.uniform(10.0, 35.0)}
    n_ahead = int(rng.integers(0, n1 + 1))  # convoy vehicles ahead of ego
    pos = x_ego + rng.uniform(5.0, 28.0)
    for i in range(n_ahead - 1, -1, -1):    # walk forward from the nearest
        x[convoy[i]] = pos
        pos += rng.uniform(18.0, 40.0)
    pos = x_ego - rng.uniform(5.0, 28.0)
    for i in range(n_ahead, n1):            # walk backward behind the ego
        x[convoy[i]] = pos
        pos -= rng.uniform(18.0, 40.0)

    v = {r: (vb1 if r in convoy else vb) + rng.uniform(-1.5, 1.5)
         for r in roles}
    v0 = {"ego": vb + rng.uniform(0.0, 3.0),
          "pv": vb + rng.uniform(-1.0, 3.0),
          "rv": vb + rng.uniform(-1.0, 2.0)}
    for r in convoy:
        v0[r] = vb1 + rng.uniform(0.0, 3.0)
    lane = {r: (TARGET_LANE if r in convoy else EGO_LANE) for r in roles}

    index = {r: i for i, r in enumerate(roles)}
    n = len(roles)
    leader = np.full(n, -1, dtype=np.int64)
    for lane_id in (EGO_LANE, TARGET_LANE):
        chain = sorted((r for r in roles if lane[r] == lane_id),
                       key=lambda r: -x[r])
        for ahead, behind in zip(chain, chain[1:]):
            leader[index[behind]] = index[ahead]

    params = np.tile(DEFAULT_IDM.row(), (n, 1))
    for r in roles:
        params[index[r], 0] = max(5.0, v0[r])
    lengths = np.where(rng.random(n) < 0.15, rng.uniform(10.0, 15.0, n),
                       rng.uniform(4.2, 5.2, n))
    states = VehicleStates(
        pos=np.array([x[r] for r in roles]),
        vel=np.array([max(0.0, v[r]) for r in roles]),
        length=lengths,
        leader=leader,
        is_idm=np.ones(n, dtype=np.int64),
        params=params,
    )

    events = []
    # A slow speed wave rolls backward through the target-lane convoy.
    # Sustained acceleration phases persist for seconds, so each car's
    # future hinges on its current wave phase — a trend that the history
    # of its gaps reveals but a single frame underdetermines.
    period = rng.uniform(12.0, 26.0)     # seconds
    amp = rng.uniform(6.0, 12.0)
    phase0 = rng.uniform(0.0, 2.0 * np.pi)
    lag = rng.uniform(0.8, 2.5)          # propagation delay per car, s
    for j, r in enumerate(convoy):
        for tev in range(int(rng.integers(3, 20)), n_frames - 10, 20):
            t_s = tev * 0.1
            target = vb1 + amp * np.sin(
                phase0 + 2.0 * np.pi * (t_s - j * lag) / period)
            events.append((tev, index[r], max(4.0, target)))
    if rng.random() < 0.7:       # reverse the drift so the ego swings back
        sign = 1.0 if vb1 > vb else -1.0
        new_pace = max(4.0, vb1 + sign * drift * rng.uniform(0.6, 1.4))
        t_rev = int(rng.uniform(120, 380))
        events.append((t_rev, index["ego"], new_pace))
        if "pv" in roles:
            events.append((t_rev, index["pv"], new_pace))
    for r in ("ego", "pv"):      # own-lane pace wobble feeds closing speeds
        if r in roles and rng.random() < 0.6:
            for _ in range(1 + int(rng.integers(0, 2))):
                events.append((int(rng.uniform(20, 470)), index[r],
                               max(4.0, vb + rng.uniform(-6.0, 5.0))))

    pos_all, vel_all = _simulate(states, events, n_frames, rng)
    # Recorded values carry camera-tracking error: a wandering positional
    # offset per vehicle, and speed error with a much shorter correlation
    # (differentiation amplifies the high-frequency part).  Averaging over
    # a track history can suppress this noise; one frame cannot.
    rec_pos = pos_all + _meas_noise(rng, pos_all.shape, POS_SIGMA, POS_TAU_S)
    rec_vel = np.maximum(0.0, vel_all + _meas_noise(rng, vel_all.shape))
    tracks = []
    for r in roles:
        i = index[r]
        vid = vid_base + i
        frames = tuple(
            TrajectoryFrame(vehicle_id=vid, frame_id=frame_base + k,
                            lane_id=lane[r],
                            longitudinal_pos=float(rec_pos[k, i]),
                            lateral_pos=LANE_CENTERS[lane[r]],
                            speed=float(rec_vel[k, i]),
                            length=float(states.length[i]))
            for k in range(n_frames))
        tracks.append(Track(vehicle_id=vid, frames=frames))
    return EpisodeResult(tracks=tuple(tracks), ego_id=vid_base + index["ego"])


def generate_tracks(n_episodes: int, seed: int,
                    n_frames: int = EPISODE_FRAMES):
    """All tracks plus the designated ego vehicle ids."""
    rng = np.random.default_rng(seed)
    tracks = []
    ego_ids = []
    for e in range(n_episodes):
        ep = synth_episode(rng, frame_base=e * FRAME_STRIDE,
                           vid_base=1 + e * VID_STRIDE, n_frames=n_frames)
        tracks.extend(ep.tracks)
        ego_ids.append(ep.ego_id)
    return tracks, ego_ids


def benchmark_dataset(n_episodes: int = 400, seed: int = 7,
                      n_frames: int = EPISODE_FRAMES,
                      params=DEFAULT_LABEL_PARAMS):
    """Labeled ego sequences (one per episode) plus scenes and tracks.

    Labels follow the automatic scheme toward the left lane; scenes cover
    every vehicle so car-following predictors can look up real leaders.
    """
    tracks, ego_ids = generate_tracks(n_episodes, seed, n_frames)
    scenes = build_scenes(tracks)
    ego_set = set(ego_ids)
    ego_tracks = [t for t in tracks if t.vehicle_id in ego_set]
    sequences = label_automatic_scheme(ego_tracks, scenes, params=params,
                                       sides=("left",))
    return sequences, scenes, tracks


def label_balance(sequences) -> tuple:
    """(positive, negative, ignore) frame counts across sequences."""
    pos = neg = ign = 0
    for seq in sequences:
        lab = seq.labels()
        pos += int((lab == 1).sum())
        neg += int((lab == 0).sum())
        ign += int((lab == -1).sum())
    return pos, neg, ign
