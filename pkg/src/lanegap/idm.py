"""Intelligent Driver Model: single-vehicle response and scene rollouts.

The acceleration law combines a free-road term driven by the ratio of
current to desired speed with an interaction term driven by the ratio of
desired to actual gap.  Rollouts integrate with a semi-implicit Euler step
(speed first, then position, speeds floored at zero) on the 0.1 s frame
grid and keep the follower/leader wiring fixed for the whole horizon.
"""

from dataclasses import dataclass
from math import sqrt

import numpy as np

from .data import FRAME_DT, NeighborContext, TrajectoryFrame
from .kernels import advance_states

DT = FRAME_DT


class DegenerateGap(ValueError):
    """Raised when a follower/leader gap is not positive."""


@dataclass(frozen=True)
class IdmParams:
    """Car-following parameters (SI units)."""

    desired_speed: float = 30.0
    min_gap: float = 2.0
    time_headway: float = 1.5
    max_accel: float = 1.4
    comfort_decel: float = 2.0
    exponent: float = 4.0

    def row(self) -> np.ndarray:
        return np.array([self.desired_speed, self.min_gap, self.time_headway,
                         self.max_accel, self.comfort_decel, self.exponent])


DEFAULT_IDM = IdmParams()


def derive_desired_speed(speed: float) -> float:
    """Per-vehicle desired speed: 110% of current speed, floored at 10 m/s."""
    return max(10.0, 1.1 * max(speed, 0.1))


def idm_accel(speed: float, p: IdmParams = DEFAULT_IDM, gap: float | None = None,
              speed_diff: float = 0.0) -> float:
    """Acceleration of a follower; gap None means free road.

    speed_diff is follower speed minus leader speed.  The desired gap is
    floored at zero before squaring; a non-positive gap raises
    DegenerateGap (rollouts clamp such pairs instead).
    """
    free = (speed / p.desired_speed) ** p.exponent
    if gap is None:
        return p.max_accel * (1.0 - free)
    if gap <= 0.0:
        raise DegenerateGap(f"gap {gap} is not positive")
    desired = p.min_gap + speed * p.time_headway \
        + speed * speed_diff / (2.0 * sqrt(p.max_accel * p.comfort_decel))
    desired = max(0.0, desired)
    return p.max_accel * (1.0 - free - (desired / gap) ** 2)


def equilibrium_gap(speed: float, p: IdmParams = DEFAULT_IDM) -> float:
    """Gap at which a follower at `speed` behind an equal-speed leader
    holds exactly zero acceleration (requires speed < desired_speed)."""
    ratio = (speed / p.desired_speed) ** p.exponent
    if ratio >= 1.0:
        raise ValueError("no equilibrium at or above the desired speed")
    return (p.min_gap + speed * p.time_headway) / sqrt(1.0 - ratio)


def euler_step(pos: float, speed: float, accel: float, dt: float = DT):
    """Semi-implicit Euler: update speed (floored at 0), then position."""
    new_speed = max(0.0, speed + accel * dt)
    return pos + new_speed * dt, new_speed


# ---------------------------------------------------------------------------
# coupled-vehicle advance

@dataclass
class VehicleStates:
    """Arrays describing coupled vehicles for a rollout.

    leader[i] indexes each follower's leader (-1 = free road) and must
    point at a vehicle at or ahead of the follower.  is_idm[i] = 0 holds a
    vehicle at constant velocity.  params rows follow IdmParams.row().
    """

    pos: np.ndarray
    vel: np.ndarray
    length: np.ndarray
    leader: np.ndarray
    is_idm: np.ndarray
    params: np.ndarray

    def advance(self, n_steps: int, dt: float = DT):
        """Roll the scene forward; returns (pos, vel) of shape (n+1, N)."""
        order = np.argsort(-self.pos, kind="stable").astype(np.int64)
        return advance_states(
            self.pos.astype(float), self.vel.astype(float),
            self.length.astype(float), self.leader.astype(np.int64),
            self.is_idm.astype(np.int64), self.params.astype(float),
            order, int(n_steps), float(dt))


@dataclass(frozen=True)
class PredictedScene:
    """Rollout result: one context per future offset 1..horizon."""

    base: NeighborContext
    contexts: tuple

    def at(self, offset: int) -> NeighborContext:
        """Context `offset` frames ahead of the base frame (offset >= 1)."""
        return self.contexts[offset - 1]


def rollout(ctx: NeighborContext, pv_leader=None, plv_leader=None,
            params: IdmParams = DEFAULT_IDM, horizon_steps: int = 30,
            derive_speeds: bool = True) -> PredictedScene:
    """Predict the five-vehicle neighborhood over a fixed horizon.

    Ego follows PV, RV follows ego and PFV follows PLV, re-evaluated each
    step.  PV and PLV follow their currently observed leaders, which move
    at constant velocity for the whole horizon; absent leaders mean free
    road.  Roles are never re-identified, so overtaking is not modeled.
    With derive_speeds each vehicle's desired speed comes from
    derive_desired_speed; otherwise params.desired_speed applies to all.
    """
    if ctx.ego is None:
        raise ValueError("rollout needs a context with observed frames")
    rows = []  # (name, frame, is_idm)
    if ctx.pv is not None and pv_leader is not None:
        rows.append(("pv_leader", pv_leader, 0))
    if ctx.pv is not None:
        rows.append(("pv", ctx.pv, 1))
    rows.append(("ego", ctx.ego, 1))
    if ctx.rv is not None:
        rows.append(("rv", ctx.rv, 1))
    if ctx.plv is not None and plv_leader is not None:
        rows.append(("plv_leader", plv_leader, 0))
    if ctx.plv is not None:
        rows.append(("plv", ctx.plv, 1))
    if ctx.pfv is not None:
        rows.append(("pfv", ctx.pfv, 1))
    index = {name: i for i, (name, _, _) in enumerate(rows)}
    links = {"ego": "pv", "rv": "ego", "pfv": "plv",
             "pv": "pv_leader", "plv": "plv_leader"}
    n = len(rows)
    pos = np.array([fr.longitudinal_pos for _, fr, _ in rows])
    vel = np.array([fr.speed for _, fr, _ in rows])
    length = np.array([fr.length for _, fr, _ in rows])
    leader = np.full(n, -1, dtype=np.int64)
    is_idm = np.array([flag for _, _, flag in rows], dtype=np.int64)
    prow = params.row()
    pmat = np.tile(prow, (n, 1))
    for i, (name, fr, flag) in enumerate(rows):
        lead = links.get(name)
        if lead is not None and lead in index:
            leader[i] = index[lead]
        if flag and derive_speeds:
            pmat[i, 0] = derive_desired_speed(fr.speed)
    states = VehicleStates(pos, vel, length, leader, is_idm, pmat)
    traj_pos, traj_vel = states.advance(horizon_steps)

    def future(name, k):
        if name not in index:
            return None
        i = index[name]
        fr = rows[i][1]
        return TrajectoryFrame(
            vehicle_id=fr.vehicle_id, frame_id=fr.frame_id + k,
            lane_id=fr.lane_id, longitudinal_pos=float(traj_pos[k, i]),
            lateral_pos=fr.lateral_pos, speed=float(traj_vel[k, i]),
            length=fr.length)

    contexts = []
    for k in range(1, horizon_steps + 1):
        contexts.append(NeighborContext.from_frames(
            future("ego", k), future("pv", k), future("rv", k),
            future("plv", k), future("pfv", k), ctx.target_side))
    return PredictedScene(base=ctx, contexts=tuple(contexts))


def find_role_leaders(scene, ctx):
    """Observed leaders of PV and PLV in their own lanes (None if absent)."""
    pv_leader = None
    plv_leader = None
    if ctx.pv is not None:
        pv_leader = scene.nearest_in_lane(
            ctx.pv.lane_id, ctx.pv.longitudinal_pos, +1,
            exclude=(ctx.pv.vehicle_id, ctx.ego.vehicle_id))
    if ctx.plv is not None:
        plv_leader = scene.nearest_in_lane(
            ctx.plv.lane_id, ctx.plv.longitudinal_pos, +1,
            exclude=(ctx.plv.vehicle_id, ctx.ego.vehicle_id))
    return pv_leader, plv_leader


def make_rollout_predictor(scenes, params: IdmParams = DEFAULT_IDM):
    """Predictor closure for online inference: ctx, n_steps -> contexts."""

    def predictor(ctx: NeighborContext, n_steps: int):
        scene = scenes[ctx.frame_id]
        pv_leader, plv_leader = find_role_leaders(scene, ctx)
        scene_pred = rollout(ctx, pv_leader, plv_leader, params=params,
                             horizon_steps=n_steps)
        return list(scene_pred.contexts)

    return predictor
