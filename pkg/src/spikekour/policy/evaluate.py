"""Success-rate tables over terrain x difficulty x lighting."""

from __future__ import annotations

import json

import numpy as np

from ..env.parkour import EnvConfig, ParkourEnv
from ..env.terrain import TerrainSpec
from ..seeding import substream, subseed
from .expert import Expert
from .student import StudentNet, make_sensor, student_proprio
from .teacher import TeacherNet, teacher_features


class ExpertPolicy:
    name = "expert"
    needs_render = False

    def begin(self, envs):
        self.experts = [Expert(e) for e in envs]

    def act(self, obs, live):
        return {i: self.experts[i](obs[i])[0] for i in live}


class TeacherPolicy:
    name = "teacher"
    needs_render = False

    def __init__(self, teacher: TeacherNet):
        self.teacher = teacher

    def begin(self, envs):
        pass

    def act(self, obs, live):
        a, _ = self.teacher.act(teacher_features([obs[i] for i in live]))
        return {i: a[k] for k, i in enumerate(live)}


class StudentPolicy:
    """Runs a StudentNet over a batch of envs with per-env sensors and yaw feedback."""

    needs_render = True

    def __init__(self, student: StudentNet, name=None):
        self.student = student
        self.name = name or f"student-{student.sensor_kind}"

    def begin(self, envs):
        self.sensors = [make_sensor(self.student.sensor_kind, self.student.event_cfg) for _ in envs]
        self.yaw = np.zeros(len(envs), np.float32)
        self.student.reset()

    def act(self, obs, live):
        B = len(self.sensors)
        c = self.sensors[0].channels
        H, W = obs[live[0]].true_depth.values.shape
        frames = np.zeros((B, c, H, W), np.float32)
        prop = np.zeros((B, obs[live[0]].proprio.shape[0]), np.float32)
        for i in live:
            frames[i] = self.sensors[i](obs[i])
            prop[i] = obs[i].proprio
        a, y = self.student.forward(frames, student_proprio(prop, self.yaw))
        self.yaw = y.data[:, 0].astype(np.float32)
        return {i: a.data[i].astype(np.float64) for i in live}


def run_batch(policy, envs):
    """One episode per env in lockstep; returns EpisodeResults."""
    policy.begin(envs)
    obs = [e.reset() for e in envs]
    done = np.zeros(len(envs), bool)
    while not done.all():
        live = np.flatnonzero(~done).tolist()
        acts = policy.act(obs, live)
        for i in live:
            obs[i], _, d, _ = envs[i].step(acts[i])
            done[i] = d
    return [e.result for e in envs]


def episode_env(root_seed, kind, difficulty, lighting, k, render, env_cfg=None):
    """Env for episode k of a table cell. Terrain and start state depend only on
    (root_seed, kind, difficulty, k), so lighting conditions are paired."""
    base = env_cfg or EnvConfig()
    cfg = EnvConfig(base.max_ticks, base.init_yaw, base.init_lateral, render, lighting, base.camera, base.physics)
    key = (root_seed, "eval", kind, f"{difficulty:.3f}", k)
    spec = TerrainSpec(kind, difficulty, subseed(*key))
    return ParkourEnv(spec, cfg, rng=substream(*key, "init"), light_rng=substream(*key, "light", lighting))


def evaluate(policy, kinds, difficulties, lightings, episodes, root_seed=0, batch=16, env_cfg=None):
    """Returns {"policy", "results": [rows], "error"} with one row per cell."""
    report = {"policy": policy.name, "results": [], "error": None}
    if episodes <= 0:
        report["error"] = "no episodes requested"
        return report
    for kind in kinds:
        for d in difficulties:
            for light in lightings:
                results = []
                for s in range(0, episodes, batch):
                    envs = [
                        episode_env(root_seed, kind, d, light, k, policy.needs_render, env_cfg)
                        for k in range(s, min(episodes, s + batch))
                    ]
                    results.extend(run_batch(policy, envs))
                report["results"].append(
                    {
                        "policy": policy.name,
                        "terrain": kind,
                        "difficulty": float(d),
                        "lighting": light,
                        "episodes": len(results),
                        "successes": int(sum(r.success for r in results)),
                        "mean_progress": float(np.mean([r.progress for r in results])),
                        "mean_motor_energy_mJ": float(np.mean([r.motor_energy_mJ for r in results])),
                    }
                )
    return report


def success_rate(report, **match):
    rows = [r for r in report["results"] if all(r[k] == v for k, v in match.items())]
    n = sum(r["episodes"] for r in rows)
    return sum(r["successes"] for r in rows) / n if n else float("nan")


def format_table(report):
    lines = [f"{'terrain':<8} {'diff':>5} {'lighting':<12} {'succ':>9} {'progress':>9} {'motor mJ':>10}"]
    for r in report["results"]:
        lines.append(
            f"{r['terrain']:<8} {r['difficulty']:>5.2f} {r['lighting']:<12} "
            f"{r['successes']:>4}/{r['episodes']:<4} {r['mean_progress']:>9.2f} {r['mean_motor_energy_mJ']:>10.1f}"
        )
    if report.get("error"):
        lines.append(f"error: {report['error']}")
    return "\n".join(lines)


def dumps(report):
    return json.dumps(report, indent=2, sort_keys=True)
