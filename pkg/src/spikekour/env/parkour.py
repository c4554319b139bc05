"""Point-body parkour environment.

The robot is a point with yaw. Actions (each clamped to [-1, 1]) are
(forward accel, lateral accel, yaw rate, jump trigger). Physics runs at
dt = 0.02 s with 5 substeps per 10 Hz policy tick.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..events.sim import DepthFrame
from .camera import CameraConfig, render_depth
from .lighting import corrupt_depth
from .terrain import Course, TerrainSpec, generate_terrain

N_ACT = 4
PROPRIO_DIM = 8
SCAN_FWD = np.linspace(0.1, 1.5, 11)
SCAN_LAT = np.linspace(-0.4, 0.4, 5)


@dataclass(frozen=True)
class Physics:
    dt: float = 0.02
    substeps: int = 5
    a_max: float = 4.0
    v_max: float = 2.0
    v_lat_max: float = 0.5
    yaw_rate_max: float = 1.5
    jump_vz: float = 3.5
    gravity: float = 9.81
    climb: float = 0.08
    friction: float = 4.0  # 1/s decay when an axis gets no command
    deadband: float = 0.05
    jump_threshold: float = 0.5
    crash_speed: float = 0.3
    fall_z: float = -0.3
    lateral_limit: float = 1.0
    mass: float = 12.0

    @property
    def tick(self):
        return self.dt * self.substeps


@dataclass
class EnvConfig:
    max_ticks: int = 60
    init_yaw: float = 0.1
    init_lateral: float = 0.1
    render: bool = False
    lighting: str = "normal"
    camera: CameraConfig = field(default_factory=CameraConfig)
    physics: Physics = field(default_factory=Physics)


@dataclass
class RobotState:
    pos: np.ndarray
    vel: np.ndarray
    yaw: float = 0.0
    airborne: bool = False

    def copy(self):
        return RobotState(self.pos.copy(), self.vel.copy(), self.yaw, self.airborne)


@dataclass
class Observation:
    proprio: np.ndarray
    scandots: np.ndarray
    target_yaw: float
    depth: DepthFrame | None = None  # what the depth sensor reports under `lighting`
    true_depth: DepthFrame | None = None  # what the event camera sees
    lighting: str = "normal"


@dataclass
class EpisodeResult:
    success: bool = False
    fall: bool = False
    progress: float = 0.0
    steps: int = 0
    motor_energy_mJ: float = 0.0
    ret: float = 0.0
    length: float = 0.0  # course length, for progress fractions


def wrap(a):
    return math.pi - (math.pi - a) % (2 * math.pi)


def target_yaw(state: RobotState, waypoints, min_ahead=0.5):
    """Heading to the first waypoint at least ``min_ahead`` away and ahead along the course."""
    p = state.pos[:2]
    wps = np.asarray(waypoints, dtype=np.float64)
    for k in range(len(wps)):
        d = wps[k] - p
        tangent = wps[min(k + 1, len(wps) - 1)] - wps[k] if k + 1 < len(wps) else wps[k] - wps[k - 1]
        if np.hypot(*d) >= min_ahead and float(np.dot(d, tangent)) > 0:
            return math.atan2(d[1], d[0])
    d = wps[-1] - p
    return math.atan2(d[1], d[0])


def scandots(field, state: RobotState):
    """Heights relative to the base on an 11x5 yaw-aligned grid ahead (forward-major)."""
    c, s = math.cos(state.yaw), math.sin(state.yaw)
    f, l = np.meshgrid(SCAN_FWD, SCAN_LAT, indexing="ij")
    wx = state.pos[0] + f * c - l * s
    wy = state.pos[1] + f * s + l * c
    return (field.height(wx, wy) - state.pos[2]).astype(np.float32).ravel()


def reward(prev: RobotState, s: RobotState, action, yaw_error=0.0, fall=False, success=False):
    a = np.asarray(action, dtype=np.float64)
    return (
        2.0 * (s.pos[0] - prev.pos[0])
        - 0.5 * abs(yaw_error)
        - 0.01 * float(a @ a)
        - 5.0 * float(fall)
        + 10.0 * float(success)
    )


def curriculum_update(levels, results, step=0.1):
    """Per env: success raises difficulty, an early fall (<25% progress) lowers it."""
    out = []
    for lvl, r in zip(levels, results):
        frac = r.progress / r.length if r.length > 0 else 0.0
        if r.success:
            lvl = min(1.0, lvl + step)
        elif r.fall and frac < 0.25:
            lvl = max(0.0, lvl - step)
        out.append(round(lvl, 10))
    return out


class StepAfterDone(RuntimeError):
    pass


class ParkourEnv:
    def __init__(self, terrain: TerrainSpec | Course, cfg: EnvConfig | None = None, rng=None, light_rng=None):
        self.cfg = cfg or EnvConfig()
        self.course = terrain if isinstance(terrain, Course) else generate_terrain(terrain)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        # separate stream so corruption never perturbs the dynamics RNG
        self.light_rng = light_rng if light_rng is not None else np.random.default_rng([self.spec.seed, 7919])
        self.state = None
        self.done = True

    @property
    def spec(self):
        return self.course.spec

    @property
    def field(self):
        return self.course.field

    def reset(self, state: RobotState | None = None):
        if state is None:
            y = float(self.rng.uniform(-1, 1)) * self.cfg.init_lateral
            yaw = float(self.rng.uniform(-1, 1)) * self.cfg.init_yaw
            z = float(self.field.height(0.0, y))
            state = RobotState(np.array([0.0, y, z]), np.zeros(3), yaw, False)
        self.state = state
        self.t = 0.0
        self.ticks = 0
        self.done = False
        self.last_action = np.zeros(N_ACT)
        self.prev_depth = None
        self.result = EpisodeResult(length=self.spec.length)
        self.log = []
        return self.observe()

    # -- observation

    def observe(self):
        s = self.state
        ty = target_yaw(s, self.course.waypoints)
        c, si = math.cos(s.yaw), math.sin(s.yaw)
        v_fwd = s.vel[0] * c + s.vel[1] * si
        v_lat = -s.vel[0] * si + s.vel[1] * c
        proprio = np.concatenate([[v_fwd, v_lat, s.vel[2], wrap(ty - s.yaw)], self.last_action]).astype(np.float32)
        obs = Observation(proprio, scandots(self.field, s), ty, lighting=self.cfg.lighting)
        if self.cfg.render:
            true = render_depth(s.pos, s.yaw, self.field, self.cfg.camera, timestamp=self.t)
            obs.true_depth = true
            obs.depth = corrupt_depth(true, self.cfg.lighting, self.light_rng, prev=self.prev_depth)
            self.prev_depth = true
        return obs

    # -- dynamics

    def step(self, action):
        if self.done:
            raise StepAfterDone("step() called on a finished episode; call reset()")
        ph = self.cfg.physics
        a = np.clip(np.nan_to_num(np.asarray(action, dtype=np.float64)), -1.0, 1.0)
        prev = self.state.copy()
        s = self.state
        fall = False
        force = np.zeros(2)
        if not s.airborne:
            c, si = math.cos(s.yaw), math.sin(s.yaw)
            cmd = np.where(np.abs(a[:2]) >= ph.deadband, a[:2], 0.0) * ph.a_max * ph.mass
            force = cmd[0] * np.array([c, si]) + cmd[1] * np.array([-si, c])
            if a[3] > ph.jump_threshold:
                s.vel[2] = ph.jump_vz
                s.airborne = True
        v_sum = np.zeros(2)
        for _ in range(ph.substeps):
            fall = self._substep(s, a, ph)
            v_sum += s.vel[:2]
            if fall:
                break
        self.t += ph.tick
        self.ticks += 1
        v_mean = v_sum / ph.substeps

        x_end = self.course.spec.length
        success = bool((not fall) and s.pos[0] >= x_end)
        timeout = self.ticks >= self.cfg.max_ticks
        ty = target_yaw(s, self.course.waypoints)
        yaw_err = wrap(ty - s.yaw)
        r = reward(prev, s, a, yaw_err, fall, success)
        energy = abs(float(force @ v_mean)) * ph.tick * 1000.0
        self.last_action = a
        self.done = bool(fall or success or timeout)

        res = self.result
        res.steps = self.ticks
        res.progress = float(max(0.0, min(s.pos[0], x_end)))
        res.fall = bool(fall)
        res.success = bool(success)
        res.motor_energy_mJ += energy
        res.ret += r
        self.log.append(
            {
                "tick": self.ticks,
                "pos": s.pos.tolist(),
                "vel": s.vel.tolist(),
                "yaw": s.yaw,
                "airborne": s.airborne,
                "action": a.tolist(),
                "reward": r,
                "force": force.tolist(),
                "velocity": v_mean.tolist(),
                "dt": ph.tick,
            }
        )
        info = {"fall": fall, "success": success, "timeout": timeout and not (fall or success), "result": res}
        return self.observe(), r, self.done, info

    def _substep(self, s: RobotState, a, ph: Physics):
        dt = ph.dt
        if not s.airborne:
            c, si = math.cos(s.yaw), math.sin(s.yaw)
            v_f = s.vel[0] * c + s.vel[1] * si
            v_l = -s.vel[0] * si + s.vel[1] * c
            decay = max(0.0, 1.0 - ph.friction * dt)
            v_f = v_f + a[0] * ph.a_max * dt if abs(a[0]) >= ph.deadband else v_f * decay
            v_l = v_l + a[1] * ph.a_max * dt if abs(a[1]) >= ph.deadband else v_l * decay
            v_f = min(max(v_f, -ph.v_max), ph.v_max)
            v_l = min(max(v_l, -ph.v_lat_max), ph.v_lat_max)
            if abs(a[2]) >= ph.deadband:
                s.yaw = wrap(s.yaw + a[2] * ph.yaw_rate_max * dt)
            c, si = math.cos(s.yaw), math.sin(s.yaw)
            s.vel[0] = v_f * c - v_l * si
            s.vel[1] = v_f * si + v_l * c
        else:
            s.vel[2] -= ph.gravity * dt

        old = s.pos.copy()
        new = old + s.vel * dt if s.airborne else np.array([old[0] + s.vel[0] * dt, old[1] + s.vel[1] * dt, old[2]])
        h_new = float(self.field.height(new[0], new[1]))
        speed = float(np.hypot(s.vel[0], s.vel[1]))

        if not s.airborne:
            if h_new > old[2] + ph.climb:
                if speed > ph.crash_speed:
                    s.pos = new
                    return True
                s.vel[:] = 0.0
                return False
            if h_new < old[2] - ph.climb:
                s.airborne = True
                s.vel[2] = 0.0
                s.pos = new
            else:
                new[2] = h_new
                s.pos = new
        else:
            if new[2] <= h_new:
                if old[2] >= h_new - 1e-9:
                    new[2] = h_new
                    s.vel[2] = 0.0
                    s.airborne = False
                elif h_new > old[2]:
                    # ran into the face of a higher column
                    if speed > ph.crash_speed:
                        s.pos = new
                        return True
                    new[0], new[1] = old[0], old[1]
                    s.vel[0] = s.vel[1] = 0.0
            s.pos = new
        return bool(s.pos[2] < ph.fall_z or abs(s.pos[1]) > ph.lateral_limit)


def motor_energy(log):
    """Sum of |F . v| dt over an episode log, in mJ."""
    total = 0.0
    for rec in log:
        total += abs(float(np.dot(rec["force"], rec["velocity"]))) * rec["dt"]
    return total * 1000.0


def write_episode_log(path, log):
    with open(path, "w") as fh:
        for rec in log:
            fh.write(json.dumps(rec) + "\n")


def env_config_dict(cfg: EnvConfig):
    return asdict(cfg)
