"""End-to-end stages shared by the CLI, scripts and acceptance tests.

Every random draw comes from ``substream(cfg.seed, <name>, ...)`` so a run is
reproducible from its config alone.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import numcore as nc
from .config import RunConfig
from .env.parkour import EnvConfig, ParkourEnv, Physics, curriculum_update
from .env.terrain import TerrainSpec
from .events.sim import EventCamera, EventSimConfig, EventStream
from .policy.evaluate import StudentPolicy, TeacherPolicy, episode_env, evaluate, success_rate
from .policy.ppo import PPOAgent, PPOConfig, train_teacher_ppo
from .policy.student import (
    DistillConfig,
    RolloutBuffer,
    StudentNet,
    collect_episodes,
    distill_onpolicy,
    distill_warmup,
    probe_loss,
)
from .policy.teacher import BCConfig, TeacherNet, collect_privileged, train_teacher_bc
from .env.vec import VecEnv
from .seeding import subseed, substream
from .snn import SpikingNetSpec, student_spec


def env_config(cfg: RunConfig, render=False, lighting="normal", **init):
    substeps = int(round(1.0 / (cfg.frame_rate_hz * Physics.dt)))
    return EnvConfig(max_ticks=cfg.max_ticks, render=render, lighting=lighting, physics=Physics(substeps=substeps), **init)


def neuron_params(cfg: RunConfig):
    p = {"beta": 1.0} if cfg.neuron == "IF" else {"beta": cfg.beta}
    if cfg.v_min is not None:
        p["v_min"] = cfg.v_min
    return p


def build_student_spec(cfg: RunConfig, sensor):
    in_ch = 2 if sensor == "events" else 1
    if cfg.student_spec:
        with open(cfg.student_spec) as fh:
            spec = SpikingNetSpec.from_json(fh.read())
        if spec.input_shape[0] != in_ch:
            raise ValueError(f"{cfg.student_spec}: {sensor} input needs {in_ch} channels")
        return spec
    return student_spec(
        in_ch=in_ch, latent=cfg.latent, hidden=cfg.gru_hidden, actor=tuple(cfg.actor), T=cfg.T, neuron=neuron_params(cfg)
    )


def make_env(cfg: RunConfig, spec: TerrainSpec, render, *key, env_cfg=None):
    return ParkourEnv(spec, env_cfg or env_config(cfg, render), rng=substream(cfg.seed, *key, "init"), light_rng=substream(cfg.seed, *key, "light"))


# ------------------------------------------------------------------ teacher

def train_teacher(cfg: RunConfig, log=None):
    """Returns (TeacherNet, history). BC follows the terrain curriculum per env slot."""
    tc = cfg.teacher
    teacher = TeacherNet(substream(cfg.seed, "teacher", "init"), hidden=tc.hidden)
    if tc.method == "ppo":
        specs = [TerrainSpec("flat" if i % 2 == 0 else "hurdle", 0.0, subseed(cfg.seed, "ppo-env", i)) for i in range(tc.ppo_envs)]
        vec = VecEnv(specs, env_config(cfg), root_seed=subseed(cfg.seed, "ppo"))
        agent = PPOAgent(teacher, substream(cfg.seed, "ppo", "value-init"), PPOConfig(lr=cfg.lr))
        try:
            hist = train_teacher_ppo(agent, vec, tc.ppo_iters, substream(cfg.seed, "ppo", "sample"), log)
        finally:
            vec.close()
        return teacher, hist

    n = tc.episodes_per_iter
    kinds = [cfg.terrains[i % len(cfg.terrains)] for i in range(n)]
    levels = [0.0] * n

    def make_envs(it):
        return [make_env(cfg, TerrainSpec(kinds[i], levels[i], subseed(cfg.seed, "bc", it, i)), False, "bc", it, i) for i in range(n)]

    held = [
        make_env(cfg, TerrainSpec(cfg.terrains[i % len(cfg.terrains)], (i % 5) / 4, subseed(cfg.seed, "bc-heldout", i)), False, "bc-heldout", i)
        for i in range(tc.heldout_episodes)
    ]
    heldout = collect_privileged(held, None)[:3]

    def advance(results):
        levels[:] = curriculum_update(levels, results)

    def logged(rec):
        if log is not None:
            log({**rec, "levels": list(levels)})

    bc = BCConfig(episodes_per_iter=n, epochs=tc.epochs, minibatch=tc.minibatch, lr=cfg.lr)
    hist = train_teacher_bc(teacher, make_envs, tc.iters, bc, substream(cfg.seed, "bc", "shuffle"), heldout, logged, advance)
    return teacher, hist


# ------------------------------------------------------------------ student

def distill_config(cfg: RunConfig):
    d = cfg.distill
    return DistillConfig(
        warmup_iters=d.warmup_iters,
        warmup_episodes=d.warmup_episodes,
        onpolicy_rounds=d.onpolicy_rounds,
        onpolicy_episodes=d.onpolicy_episodes,
        onpolicy_iters=d.onpolicy_iters,
        onpolicy_lr_scale=d.onpolicy_lr_scale,
        onpolicy_lr_decay=d.onpolicy_lr_decay,
        batch_size=d.batch_size,
        lr=cfg.lr,
        action_weight=d.action_weight,
        yaw_weight=d.yaw_weight,
    )


def distill_envs(cfg: RunConfig, sensor):
    d = cfg.distill
    ecfg = env_config(cfg, True)

    def make(phase, r, n):
        out = []
        for i in range(n):
            kind = d.terrains[i % len(d.terrains)]
            diff = d.difficulties[(i // len(d.terrains)) % len(d.difficulties)]
            key = ("distill", sensor, phase, r, i)
            out.append(make_env(cfg, TerrainSpec(kind, diff, subseed(cfg.seed, *key)), True, *key, env_cfg=ecfg))
        return out

    return make


def new_student(cfg: RunConfig, sensor=None):
    sensor = sensor or cfg.distill.sensor
    return StudentNet(
        build_student_spec(cfg, sensor),
        substream(cfg.seed, "student", sensor, "init"),
        sensor,
        init_gain=cfg.distill.init_gain,
        event_cfg=EventSimConfig(C=cfg.event_threshold),
    )


def distill(cfg: RunConfig, teacher: TeacherNet, sensor=None, log=None, student=None):
    """Warmup then on-policy distillation.

    Returns (student, info) where info holds the held-out probe losses at
    iteration 0, after warmup and after on-policy, plus the student
    parameters after warmup (for paired comparisons) and firing stats.
    """
    sensor = sensor or cfg.distill.sensor
    student = student or new_student(cfg, sensor)
    dc = distill_config(cfg)
    make = distill_envs(cfg, sensor)
    rng = substream(cfg.seed, "distill", sensor, "shuffle")
    probe = collect_episodes(make("probe", 0, cfg.distill.probe_episodes), teacher, None, sensor, student.event_cfg)
    info = {"probe_loss_init": probe_loss(student, probe, yaw_weight=dc.yaw_weight)}
    buffer = RolloutBuffer(dc.buffer_capacity)
    if dc.warmup_iters > 0 or dc.onpolicy_rounds > 0:
        buffer = distill_warmup(teacher, student, make, dc, rng, buffer, log)
    info["probe_loss_warmup"] = probe_loss(student, probe, yaw_weight=dc.yaw_weight)
    info["warmup_state"] = student.store.state()
    if dc.onpolicy_rounds > 0:
        distill_onpolicy(teacher, student, make, dc, rng, buffer, log)
    info["probe_loss_final"] = probe_loss(student, probe, yaw_weight=dc.yaw_weight)
    student.net.stats.clear()
    probe_loss(student, probe)
    info["firing_stats"] = student.net.stats.to_dict(student.spec.T)
    student.net.stats.clear()
    return student, info


def distill_efficacy(cfg: RunConfig, teacher: TeacherNet, episodes=32, sensor=None):
    """Distills one student and compares warmup-only against the final student
    on easy gaps (eval seeds, normal light). Returns a JSON-able dict."""
    student, info = distill(cfg, teacher, sensor)
    final = student.store.state()
    kw = dict(kinds=["gap"], difficulties=[0.1], lightings=["normal"], episodes=episodes)
    student.store.load_state(info["warmup_state"])
    warm = success_rate(run_eval(cfg, StudentPolicy(student), **kw))
    student.store.load_state(final)
    end = success_rate(run_eval(cfg, StudentPolicy(student), **kw))
    return {
        "seed": cfg.seed,
        "probe_loss_init": info["probe_loss_init"],
        "probe_loss_warmup": info["probe_loss_warmup"],
        "probe_loss_final": info["probe_loss_final"],
        "warmup_reduction": 1.0 - info["probe_loss_warmup"] / info["probe_loss_init"],
        "success_warmup": warm,
        "success_final": end,
    }


def lighting_contrast(cfg: RunConfig, teacher: TeacherNet, episodes=50, lightings=("overexposed", "underexposed")):
    """Distills a depth and an event student and measures each one's success
    drop from normal light to each corrupted condition on easy gaps."""
    out = {"episodes": episodes, "students": {}}
    for sensor in ("depth", "events"):
        student, _ = distill(cfg, teacher, sensor)
        rep = run_eval(cfg, StudentPolicy(student), ["gap"], [0.1], ["normal", *lightings], episodes)
        base = success_rate(rep, lighting="normal")
        row = {"normal": base}
        for light in lightings:
            row[light] = success_rate(rep, lighting=light)
            row[f"drop_{light}"] = base - row[light]
        out["students"][sensor] = row
    return out


# ------------------------------------------------------------------ checkpoints

def save_teacher(path, teacher: TeacherNet):
    state = {k: v for k, v in teacher.store.state().items() if k.startswith(teacher.prefix + ".")}
    nc.save_checkpoint(path, state, {"kind": "teacher", "hidden": list(teacher.hidden), "n_in": teacher.n_in})


def save_student(path, student: StudentNet, state=None):
    meta = {"kind": "student", "sensor": student.sensor_kind, "spec": json.loads(student.spec.to_json())}
    if student.event_cfg is not None:
        meta["event_threshold"] = student.event_cfg.C
    nc.save_checkpoint(path, state if state is not None else student.store.state(), meta)


def load_policy(path, expect=None, spec=None):
    """TeacherNet or StudentNet from a checkpoint; raises CheckpointMismatch on shape drift."""
    state, meta = nc.load_checkpoint(path)
    kind = meta.get("kind")
    if expect is not None and kind != expect:
        raise nc.CheckpointError(f"{path}: holds a {kind!r} checkpoint, expected {expect!r}")
    if kind == "teacher":
        net = TeacherNet(None, hidden=meta["hidden"], n_in=meta["n_in"])
        for k, v in state.items():
            net.store.add(k, np.zeros_like(v))
        expected = {f"{n}.{p}": None for n in net.names for p in ("W", "b")}
        if set(expected) != set(state):
            raise nc.CheckpointMismatch({k: () for k in expected}, {k: np.shape(v) for k, v in state.items()})
        net.store.load_state(state)
        return net
    if kind == "student":
        spec = spec or SpikingNetSpec.from_dict(meta["spec"])
        ev = EventSimConfig(C=meta["event_threshold"]) if "event_threshold" in meta else None
        net = StudentNet(spec, np.random.default_rng(0), meta["sensor"], event_cfg=ev)
        net.store.load_state(state)
        return net
    raise nc.CheckpointError(f"{path}: unknown checkpoint kind {kind!r}")


def policy_for(net):
    return TeacherPolicy(net) if isinstance(net, TeacherNet) else StudentPolicy(net)


def run_eval(cfg: RunConfig, policy, kinds=None, difficulties=None, lightings=None, episodes=None):
    return evaluate(
        policy,
        kinds or cfg.terrains,
        difficulties or cfg.difficulties,
        lightings or cfg.lightings,
        cfg.eval.episodes if episodes is None else episodes,
        root_seed=subseed(cfg.seed, "eval"),
        batch=cfg.eval.batch,
        env_cfg=env_config(cfg),
    )


def record_episode(cfg: RunConfig, policy, kind=None, difficulty=None):
    """Drives eval episode 0 of the first table cell under normal light.

    Returns (depth frames, event stream) as seen by an event camera at
    ``cfg.event_threshold``, for writing .dseq / .evt1 artifacts.
    """
    kind = kind or cfg.terrains[0]
    difficulty = cfg.difficulties[0] if difficulty is None else difficulty
    env = episode_env(subseed(cfg.seed, "eval"), kind, difficulty, "normal", 0, True, env_config(cfg))
    cam = EventCamera(EventSimConfig(C=cfg.event_threshold))
    policy.begin([env])
    obs = env.reset()
    frames, streams, done = [], [], False
    while True:
        frames.append(obs.true_depth)
        streams.append(cam.observe(obs.true_depth))
        if done:
            break
        obs, _, done, _ = env.step(policy.act([obs], [0])[0])
    return frames, EventStream.concat(streams)


class JsonlLog:
    """Appends one JSON record per line, flushed per record."""

    def __init__(self, path):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self.fh = open(path, "w")

    def __call__(self, rec):
        self.fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()
