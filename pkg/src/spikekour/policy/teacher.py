"""Privileged ANN teacher and its behavior-cloning trainer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import numcore as nc
from ..env.parkour import N_ACT, PROPRIO_DIM
from ..env.parkour import SCAN_FWD, SCAN_LAT
from .expert import Expert

N_SCAN = len(SCAN_FWD) * len(SCAN_LAT)
TEACHER_IN = PROPRIO_DIM + N_SCAN + 1


def teacher_features(obs):
    """[proprio | scandots | target_yaw] for one Observation or a list of them."""
    if isinstance(obs, (list, tuple)):
        return np.stack([teacher_features(o) for o in obs])
    return np.concatenate([obs.proprio, obs.scandots, [obs.target_yaw]]).astype(np.float32)


class DivergenceError(FloatingPointError):
    def __init__(self, msg, iteration=None):
        super().__init__(msg if iteration is None else f"{msg} (iteration {iteration})")
        self.iteration = iteration


class TeacherNet:
    """MLP -> (tanh action[4], yaw). Parameters live under ``teacher.*``."""

    def __init__(self, rng=None, hidden=(256, 128), n_in=TEACHER_IN, store=None, prefix="teacher"):
        self.hidden = tuple(hidden)
        self.n_in = n_in
        self.prefix = prefix
        self.store = store or nc.ParamStore()
        sizes = [n_in, *self.hidden, N_ACT + 1]
        self.names = [f"{prefix}.fc{i}" for i in range(len(sizes) - 1)]
        if rng is not None:
            for name, a, b in zip(self.names, sizes[:-1], sizes[1:]):
                gain = 1.0 if name == self.names[-1] else math.sqrt(2)
                self.store.add(f"{name}.W", nc.kaiming(rng, a, (a, b), gain=gain))
                self.store.add(f"{name}.b", np.zeros(b))

    def layers(self):
        return [(self.store[f"{n}.W"], self.store[f"{n}.b"]) for n in self.names]

    def forward(self, x):
        """x: [B, n_in] -> (action [B, 4], yaw [B, 1]) as Tensors."""
        out = nc.mlp_forward(nc.as_tensor(x), self.layers())
        return nc.tanh(nc.columns(out, 0, N_ACT)), nc.columns(out, N_ACT, N_ACT + 1)

    def act(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float32))
        a, y = self.forward(x)
        return a.data.astype(np.float64), y.data[:, 0].astype(np.float64)


def teacher_loss(teacher, x, a_target, yaw_target, yaw_weight=0.5):
    a, y = teacher.forward(x)
    return nc.mse(a, a_target) + nc.mul(nc.mse(y, np.asarray(yaw_target, np.float32).reshape(-1, 1)), yaw_weight)


@dataclass
class BCConfig:
    episodes_per_iter: int = 8
    epochs: int = 4
    minibatch: int = 256
    lr: float = 1e-3
    yaw_weight: float = 0.5
    heldout_episodes: int = 8


def collect_privileged(envs, driver, label=True):
    """Runs one episode in each env; ``driver(i, obs)`` returns an action.

    Returns (features, expert actions, expert yaws, results).
    """
    feats, acts, yaws, results = [], [], [], []
    for i, env in enumerate(envs):
        ex = Expert(env)
        obs = env.reset()
        done = False
        while not done:
            a_exp, y_exp = ex(obs)
            feats.append(teacher_features(obs))
            acts.append(a_exp)
            yaws.append(y_exp)
            a = a_exp if driver is None else driver(i, obs)
            obs, _, done, info = env.step(a)
        results.append(env.result)
    return np.array(feats, np.float32), np.array(acts, np.float32), np.array(yaws, np.float32), results


def eval_teacher_loss(teacher, data, yaw_weight=0.5):
    x, a, y = data
    return float(teacher_loss(teacher, x, a, y, yaw_weight).item())


def train_teacher_bc(
    teacher: TeacherNet, make_envs, iters, cfg: BCConfig | None = None, rng=None, heldout=None, log=None, on_results=None
):
    """DAgger-style cloning of the scripted expert.

    ``make_envs(it)`` returns a list of fresh ParkourEnv for iteration ``it``.
    Iteration 0 is expert-driven, later ones are teacher-driven with expert
    labels; all data is aggregated. ``on_results(results)`` sees each
    iteration's EpisodeResults (e.g. to move a curriculum). Returns the
    history of held-out losses.
    """
    cfg = cfg or BCConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    history = []
    if heldout is not None:
        history.append({"iteration": 0, "heldout_loss": eval_teacher_loss(teacher, heldout, cfg.yaw_weight)})
    X, A, Y = [], [], []
    for it in range(iters):
        envs = make_envs(it)
        driver = None if it == 0 else (lambda i, obs: teacher.act(teacher_features(obs))[0][0])
        x, a, y, results = collect_privileged(envs, driver)
        if on_results is not None:
            on_results(results)
        X.append(x), A.append(a), Y.append(y)
        Xc, Ac, Yc = np.concatenate(X), np.concatenate(A), np.concatenate(Y)
        losses = []
        for _ in range(cfg.epochs):
            perm = rng.permutation(len(Xc))
            for s in range(0, len(perm), cfg.minibatch):
                idx = perm[s : s + cfg.minibatch]
                teacher.store.zero_grad()
                try:
                    with nc.Tape() as tape:
                        loss = teacher_loss(teacher, Xc[idx], Ac[idx], Yc[idx], cfg.yaw_weight)
                        nc.backward(loss, teacher.store, tape)
                except FloatingPointError as e:
                    raise DivergenceError(f"teacher training diverged: {e}", it) from e
                nc.adam_step(teacher.store, cfg.lr)
                losses.append(loss.item())
        rec = {
            "iteration": it + 1,
            "train_loss": float(np.mean(losses)),
            "samples": int(len(Xc)),
            "success_rate": float(np.mean([r.success for r in results])),
        }
        if heldout is not None:
            rec["heldout_loss"] = eval_teacher_loss(teacher, heldout, cfg.yaw_weight)
        history.append(rec)
        if log is not None:
            log(rec)
    return history
