"""Spiking student policy and two-phase ANN -> SNN distillation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import numcore as nc
from ..env.parkour import N_ACT
from ..events.sim import MAX_RANGE, EventCamera, EventSimConfig, events_to_frame
from ..snn import SpikingNet, SpikingNetSpec, student_spec
from .teacher import DivergenceError, teacher_features

YAW_SLOT = 3  # proprio index of the heading error; the student gets its own estimate there


class EventSensor:
    """Event camera on the true depth stream; emits normalized [2, H, W] count frames."""

    channels = 2

    def __init__(self, cfg: EventSimConfig | None = None):
        self.cam = EventCamera(cfg)

    def reset(self):
        self.cam.reset()

    def __call__(self, obs):
        d = obs.true_depth
        stream = self.cam.observe(d)
        return events_to_frame(stream, w=d.width, h=d.height).as_input(normalize=True)


class DepthSensor:
    """Depth camera as reported under the current lighting; [1, H, W] scaled to [0, 1]."""

    channels = 1

    def reset(self):
        pass

    def __call__(self, obs):
        return (obs.depth.values / MAX_RANGE).astype(np.float32)[None]


def make_sensor(kind, event_cfg=None):
    if kind == "events":
        return EventSensor(event_cfg)
    if kind == "depth":
        return DepthSensor()
    raise ValueError(f"unknown sensor {kind!r}")


def student_proprio(proprio, yaw_estimate):
    p = np.array(proprio, dtype=np.float32, copy=True)
    p[..., YAW_SLOT] = yaw_estimate
    return p


class StudentNet:
    """SpikingNet whose readout is (action logits[4], yaw); action = tanh(logits)."""

    def __init__(self, spec: SpikingNetSpec | None = None, rng=None, sensor="events", store=None, init_gain=1.0, event_cfg=None):
        self.sensor_kind = sensor
        self.event_cfg = event_cfg  # EventSimConfig for the event sensor, None for defaults
        channels = 2 if sensor == "events" else 1
        self.spec = spec or student_spec(in_ch=channels)
        if self.spec.input_shape[0] != channels:
            raise ValueError(f"{sensor} input needs {channels} channels, spec has {self.spec.input_shape[0]}")
        self.net = SpikingNet(self.spec, rng, store=store, init_gain=init_gain)
        self.store = self.net.store

    def reset(self, mask=None):
        self.net.reset_state(mask)

    def mark_done(self, mask):
        self.net.mark_done(mask)

    def forward(self, frames, proprio):
        out = self.net(frames, proprio)
        return nc.tanh(nc.columns(out, 0, N_ACT)), nc.columns(out, N_ACT, N_ACT + 1)


# ------------------------------------------------------------------ losses

def masked_mse(a, target, mask=None):
    """(1/(n m)) sum over the m rows with mask=True of squared errors over n columns."""
    a = nc.as_tensor(a)
    t = np.asarray(target, np.float64).reshape(a.shape)
    mask = np.ones(a.shape[0], bool) if mask is None else np.asarray(mask, bool)
    m = int(mask.sum())
    if m == 0:
        raise ValueError("masked_mse over zero rows")
    n = a.shape[1]
    d = (a.data.astype(np.float64) - t) * mask[:, None]
    val = np.array((d * d).sum() / (n * m))

    def bw(g):
        nc.tensor._acc(a, (g * 2.0 * d / (n * m)).astype(a.data.dtype))

    return nc.custom("masked_mse", val, [a], bw)


def action_loss(teacher_actions, student_actions, mask=None):
    """Eq. (1/n)(1/m) sum_i sum_j (a_T - a_S)^2 over n action dims and m robots."""
    return masked_mse(student_actions, teacher_actions, mask)


def yaw_loss(teacher_yaw, student_yaw, mask=None):
    """(1/m) sum over robots of the wrapped yaw difference squared."""
    s = nc.as_tensor(student_yaw)
    s = nc.reshape(s, (s.shape[0], 1)) if len(s.shape) == 1 else s
    t = np.asarray(teacher_yaw, np.float64).reshape(-1, 1)
    # wrap(s - t) differs from s - t by a constant multiple of 2pi, so its gradient is the identity
    diff = nc.wrap_angle(nc.sub(s, nc.Tensor(t.astype(s.data.dtype))))
    return masked_mse(diff, np.zeros_like(t), mask)


def distill_loss(t_act, t_yaw, s_act, s_yaw, mask=None, action_weight=1.0, yaw_weight=0.5):
    return nc.add(nc.mul(action_loss(t_act, s_act, mask), action_weight), nc.mul(yaw_loss(t_yaw, s_yaw, mask), yaw_weight))


# ------------------------------------------------------------------ data

@dataclass
class Episode:
    frames: np.ndarray  # [L, C, H, W]
    proprio: np.ndarray  # [L, P], heading slot still holds the true error
    t_action: np.ndarray  # [L, 4]
    t_yaw: np.ndarray  # [L]
    result: object = None

    def __len__(self):
        return len(self.frames)


@dataclass
class RolloutBuffer:
    """FIFO of episodes; teacher labels and student inputs come from the same ticks."""

    capacity: int = 512
    episodes: list = field(default_factory=list)

    def add(self, eps):
        self.episodes.extend(eps)
        if len(self.episodes) > self.capacity:
            del self.episodes[: len(self.episodes) - self.capacity]

    def __len__(self):
        return len(self.episodes)

    def sample(self, rng, m):
        idx = rng.choice(len(self.episodes), size=min(m, len(self.episodes)), replace=False)
        return [self.episodes[i] for i in np.sort(idx)]


def collect_episodes(envs, teacher, student=None, sensor="events", event_cfg=None):
    """One episode per env in lockstep.

    ``student=None`` means the teacher drives (warmup); otherwise the student
    drives and the teacher labels every visited state.
    """
    B = len(envs)
    sensors = [make_sensor(sensor, event_cfg) for _ in range(B)]
    obs = [e.reset() for e in envs]
    recs = [{"frames": [], "proprio": [], "t_action": [], "t_yaw": []} for _ in range(B)]
    done = np.zeros(B, bool)
    yaw_est = np.zeros(B, np.float32)
    if student is not None:
        student.reset()
    C = sensors[0].channels
    H, W = envs[0].cfg.camera.height, envs[0].cfg.camera.width
    while not done.all():
        frames = np.zeros((B, C, H, W), np.float32)
        prop = np.zeros((B, obs[0].proprio.shape[0]), np.float32)
        live = np.flatnonzero(~done)
        for i in live:
            frames[i] = sensors[i](obs[i])
            prop[i] = obs[i].proprio
        ta, ty = teacher.act(teacher_features([obs[i] for i in live]))
        for k, i in enumerate(live):
            r = recs[i]
            r["frames"].append(frames[i])
            r["proprio"].append(prop[i])
            r["t_action"].append(ta[k])
            r["t_yaw"].append(ty[k])
        if student is not None:
            sa, sy = student.forward(frames, student_proprio(prop, yaw_est))
            acts = sa.data.astype(np.float64)
            yaw_est = sy.data[:, 0].astype(np.float32)
        for k, i in enumerate(live):
            a = ta[k] if student is None else acts[i]
            obs[i], _, d, _ = envs[i].step(a)
            done[i] = d
    return [
        Episode(np.stack(r["frames"]), np.stack(r["proprio"]), np.stack(r["t_action"]).astype(np.float32), np.array(r["t_yaw"], np.float32), envs[i].result)
        for i, r in enumerate(recs)
    ]


def _pad(episodes):
    L = max(len(e) for e in episodes)
    B = len(episodes)
    e0 = episodes[0]
    frames = np.zeros((L, B) + e0.frames.shape[1:], np.float32)
    prop = np.zeros((L, B, e0.proprio.shape[1]), np.float32)
    ta = np.zeros((L, B, N_ACT), np.float32)
    ty = np.zeros((L, B), np.float32)
    mask = np.zeros((L, B), bool)
    for b, e in enumerate(episodes):
        n = len(e)
        frames[:n, b], prop[:n, b], ta[:n, b], ty[:n, b], mask[:n, b] = e.frames, e.proprio, e.t_action, e.t_yaw, True
    return frames, prop, ta, ty, mask


def sequence_loss(student, episodes, action_weight=1.0, yaw_weight=0.5):
    """Mean over ticks of the per-tick distillation loss, run from a fresh student state.

    Call inside a Tape to backpropagate through time.
    """
    frames, prop, ta, ty, mask = _pad(episodes)
    student.reset()
    yaw_est = np.zeros(len(episodes), np.float32)
    total = None
    L = len(frames)
    for t in range(L):
        sa, sy = student.forward(frames[t], student_proprio(prop[t], yaw_est))
        yaw_est = sy.data[:, 0].astype(np.float32)
        lt = distill_loss(ta[t], ty[t], sa, sy, mask[t], action_weight, yaw_weight)
        total = lt if total is None else nc.add(total, lt)
    student.mark_done(np.ones(len(episodes), bool))
    return nc.mul(total, 1.0 / L)


def probe_loss(student, episodes, **w):
    """Held-out distillation loss: the sequence loss over all probe episodes as one batch."""
    return float(sequence_loss(student, episodes, **w).item())


@dataclass
class DistillConfig:
    warmup_iters: int = 60
    warmup_episodes: int = 32
    onpolicy_rounds: int = 3
    onpolicy_episodes: int = 16
    onpolicy_iters: int = 20
    batch_size: int = 8  # m: robots per gradient step
    lr: float = 1e-3
    onpolicy_lr_scale: float = 0.3  # smaller steps once the buffer is mostly student-driven
    onpolicy_lr_decay: bool = True
    action_weight: float = 1.0
    yaw_weight: float = 0.5
    max_grad_norm: float = 5.0
    buffer_capacity: int = 512

    def __post_init__(self):
        for k in ("warmup_episodes", "batch_size", "onpolicy_episodes"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive")
        if min(self.warmup_iters, self.onpolicy_iters, self.onpolicy_rounds) < 0:
            raise ValueError("iteration counts must be non-negative")
        if not self.onpolicy_lr_scale > 0:
            raise ValueError("onpolicy_lr_scale must be positive")


def train_on_buffer(student, buffer, iters, cfg: DistillConfig, rng, log=None, phase="warmup", it0=0, lr_at=None):
    """``lr_at(it)`` overrides the constant ``cfg.lr`` per local iteration."""
    for it in range(iters):
        batch = buffer.sample(rng, cfg.batch_size)
        student.store.zero_grad()
        try:
            with nc.Tape() as tape:
                loss = sequence_loss(student, batch, cfg.action_weight, cfg.yaw_weight)
                nc.backward(loss, student.store, tape)
        except FloatingPointError as e:
            raise DivergenceError(f"distillation diverged: {e}", it0 + it) from e
        nc.clip_grad_norm(student.store, cfg.max_grad_norm)
        nc.adam_step(student.store, cfg.lr if lr_at is None else lr_at(it))
        if log is not None:
            log({"phase": phase, "iteration": it0 + it, "loss": float(loss.item())})
    return student


def distill_warmup(teacher, student, make_envs, cfg: DistillConfig, rng, buffer=None, log=None):
    """Teacher-driven data, student trained by BPTT on it. Returns the buffer."""
    buffer = buffer or RolloutBuffer(cfg.buffer_capacity)
    buffer.add(collect_episodes(make_envs("warmup", 0, cfg.warmup_episodes), teacher, None, student.sensor_kind, student.event_cfg))
    train_on_buffer(student, buffer, cfg.warmup_iters, cfg, rng, log, "warmup")
    return buffer


def distill_onpolicy(teacher, student, make_envs, cfg: DistillConfig, rng, buffer, log=None):
    """Student-driven rounds labelled by the teacher, aggregated DAgger-style."""
    it0 = cfg.warmup_iters
    base, K = cfg.lr * cfg.onpolicy_lr_scale, cfg.onpolicy_rounds * cfg.onpolicy_iters
    for r in range(cfg.onpolicy_rounds):
        k0 = r * cfg.onpolicy_iters
        # linear decay to zero over all on-policy iterations
        lr_at = (lambda it, k0=k0: base * (1 - (k0 + it) / K)) if cfg.onpolicy_lr_decay else (lambda it: base)
        eps = collect_episodes(make_envs("onpolicy", r, cfg.onpolicy_episodes), teacher, student, student.sensor_kind, student.event_cfg)
        buffer.add(eps)
        if log is not None:
            log({"phase": "onpolicy", "round": r, "success_rate": float(np.mean([e.result.success for e in eps]))})
        train_on_buffer(student, buffer, cfg.onpolicy_iters, cfg, rng, log, "onpolicy", it0, lr_at)
        it0 += cfg.onpolicy_iters
    return buffer
