"""Deterministic privileged controller used as the imitation target."""

from __future__ import annotations

import math

import numpy as np

from ..env.parkour import Physics, RobotState, wrap

CRUISE = 1.0
YAW_GAIN = 2.0
DROP = 0.5  # deeper than any step-down, shallower than a gap


def d_trigger(difficulty):
    return 0.35 + 0.2 * difficulty


def obstacle_ahead(field, s: RobotState, reach, climb=Physics.climb, res=0.01):
    """True if a rise > climb or a drop > DROP lies within ``reach`` along the heading.

    Heights are relative to the terrain under the robot, so the answer does
    not depend on how high a jump has carried it.
    """
    r = np.arange(res, reach + 1e-9, res)
    base = float(field.height(s.pos[0], s.pos[1]))
    h = field.height(s.pos[0] + r * math.cos(s.yaw), s.pos[1] + r * math.sin(s.yaw)) - base
    return bool(np.any(h > climb) or np.any(h < -DROP))


def scripted_expert(obs, state: RobotState, field, difficulty):
    """Returns (action[4], yaw) where yaw is the heading error to the target."""
    yaw_err = wrap(obs.target_yaw - state.yaw)
    act = np.zeros(4)
    act[0] = CRUISE
    act[2] = float(np.clip(YAW_GAIN * yaw_err, -1.0, 1.0))
    # the trigger is ignored by the dynamics while airborne, so it is not gated here
    if obstacle_ahead(field, state, d_trigger(difficulty)):
        act[3] = 1.0
    return act, yaw_err


class Expert:
    """Callable bound to one environment."""

    def __init__(self, env):
        self.env = env

    def __call__(self, obs):
        e = self.env
        return scripted_expert(obs, e.state, e.field, e.spec.difficulty)
