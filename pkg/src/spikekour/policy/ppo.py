"""Clipped-surrogate PPO with GAE for the teacher network."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import numcore as nc
from ..env.parkour import N_ACT
from .teacher import DivergenceError, TeacherNet, teacher_features

LOG_2PI = math.log(2 * math.pi)


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 64
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    lr: float = 1e-3
    n_steps: int = 16
    init_log_std: float = -0.5
    max_grad_norm: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.clip > 0:
            raise ValueError("clip must be > 0")


def compute_gae(rewards, values, dones, last_value, gamma, lam):
    """rewards/values/dones: [T, N]; last_value: [N]. Returns (advantages, returns)."""
    rewards = np.asarray(rewards, np.float64)
    values = np.asarray(values, np.float64)
    dones = np.asarray(dones, np.float64)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    gae = np.zeros(rewards.shape[1:])
    nxt = np.asarray(last_value, np.float64)
    for t in reversed(range(T)):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * nxt * live - values[t]
        gae = delta + gamma * lam * live * gae
        adv[t] = gae
        nxt = values[t]
    return adv, adv + values


def gaussian_logp(mu, log_std, actions):
    """Diagonal Gaussian log-density per row; mu [B, n], log_std [n]."""
    mu, log_std = nc.as_tensor(mu), nc.as_tensor(log_std)
    a = np.asarray(actions, np.float64)
    m = mu.data.astype(np.float64)
    ls = log_std.data.astype(np.float64)
    inv_var = np.exp(-2 * ls)
    z2 = (a - m) ** 2 * inv_var
    out = -0.5 * z2.sum(1) - ls.sum() - 0.5 * a.shape[1] * LOG_2PI

    def bw(g):
        g = g[:, None]
        nc.tensor._acc(mu, (g * (a - m) * inv_var).astype(mu.data.dtype))
        nc.tensor._acc(log_std, (g * (z2 - 1.0)).sum(0).astype(log_std.data.dtype))

    return nc.custom("gaussian_logp", out, [mu, log_std], bw)


def surrogate(logp, logp_old, adv, clip=None):
    """Mean PPO objective; ``clip=None`` gives the unclipped ratio * advantage."""
    logp = nc.as_tensor(logp)
    lp = logp.data.astype(np.float64)
    A = np.asarray(adv, np.float64)
    r = np.exp(lp - np.asarray(logp_old, np.float64))
    if clip is None:
        val, active = r * A, np.ones_like(r, bool)
    else:
        unc, clp = r * A, np.clip(r, 1 - clip, 1 + clip) * A
        val = np.minimum(unc, clp)
        # gradient flows only where the unclipped term is the minimum
        active = unc <= clp
    n = len(lp)

    def bw(g):
        nc.tensor._acc(logp, (g * np.where(active, r * A, 0.0) / n).astype(logp.data.dtype))

    return nc.custom("ppo_surrogate", np.array(val.mean()), [logp], bw)


class ValueNet:
    def __init__(self, rng, n_in, hidden=(128, 128), store=None, prefix="value"):
        self.store = store or nc.ParamStore()
        sizes = [n_in, *hidden, 1]
        self.names = [f"{prefix}.fc{i}" for i in range(len(sizes) - 1)]
        for name, a, b in zip(self.names, sizes[:-1], sizes[1:]):
            self.store.add(f"{name}.W", nc.kaiming(rng, a, (a, b), gain=1.0 if b == 1 else math.sqrt(2)))
            self.store.add(f"{name}.b", np.zeros(b))

    def forward(self, x):
        return nc.mlp_forward(nc.as_tensor(x), [(self.store[f"{n}.W"], self.store[f"{n}.b"]) for n in self.names])

    def __call__(self, x):
        return self.forward(np.atleast_2d(x)).data[:, 0].astype(np.float64)


class PPOAgent:
    """Gaussian policy whose mean is the teacher's tanh action head."""

    def __init__(self, teacher: TeacherNet, rng, cfg: PPOConfig):
        self.teacher = teacher
        self.cfg = cfg
        self.store = teacher.store
        if "ppo.log_std" not in self.store:
            self.store.add("ppo.log_std", np.full(N_ACT, cfg.init_log_std))
        self.value = ValueNet(rng, teacher.n_in, store=self.store)

    @property
    def log_std(self):
        return self.store["ppo.log_std"]

    def sample(self, x, rng):
        mu, _ = self.teacher.forward(np.atleast_2d(x))
        std = np.exp(self.log_std.data.astype(np.float64))
        a = mu.data.astype(np.float64) + std * rng.standard_normal(mu.shape)
        logp = gaussian_logp(mu.data, self.log_std.data, a).data
        return a, logp


def train_teacher_ppo(agent: PPOAgent, vec, iters, rng=None, log=None):
    """Runs ``iters`` PPO iterations on a VecEnv (no rendering needed).

    Returns the training curve: per iteration the mean return of episodes
    that finished during it, plus loss terms.
    """
    cfg = agent.cfg
    rng = rng if rng is not None else np.random.default_rng(0)
    N = len(vec)
    obs = vec.reset()
    ep_ret = np.zeros(N)
    curve = []
    for it in range(iters):
        X, A, LP, R, D, V = [], [], [], [], [], []
        finished = []
        for _ in range(cfg.n_steps):
            x = teacher_features(obs)
            a, lp = agent.sample(x, rng)
            v = agent.value(x)
            out = vec.step(a)
            r = np.array([o[1] for o in out])
            d = np.array([o[2] for o in out], float)
            X.append(x), A.append(a), LP.append(lp), R.append(r), D.append(d), V.append(v)
            ep_ret += r
            obs = [o[0] for o in out]
            for i in np.flatnonzero(d):
                finished.append(ep_ret[i])
                ep_ret[i] = 0.0
                obs[i] = vec.envs[i].reset()
        last_v = agent.value(teacher_features(obs))
        adv, ret = compute_gae(np.array(R), np.array(V), np.array(D), last_v, cfg.gamma, cfg.lam)
        X = np.concatenate(X)
        A = np.concatenate(A)
        LP = np.concatenate(LP)
        adv, ret = adv.reshape(-1), ret.reshape(-1)
        adv_n = (adv - adv.mean()) / (adv.std() + 1e-8)
        stats = []
        for _ in range(cfg.epochs):
            perm = rng.permutation(len(X))
            for s in range(0, len(perm), cfg.minibatch):
                idx = perm[s : s + cfg.minibatch]
                agent.store.zero_grad()
                try:
                    with nc.Tape() as tape:
                        mu, _ = agent.teacher.forward(X[idx])
                        lp = gaussian_logp(mu, agent.log_std, A[idx])
                        pg = surrogate(lp, LP[idx], adv_n[idx], cfg.clip)
                        vl = nc.mse(agent.value.forward(X[idx]), ret[idx].reshape(-1, 1).astype(np.float32))
                        ent = nc.sum_all(agent.log_std)
                        loss = nc.sub(nc.mul(vl, cfg.value_coef), nc.add(pg, nc.mul(ent, cfg.entropy_coef)))
                        nc.backward(loss, agent.store, tape)
                except FloatingPointError as e:
                    raise DivergenceError(f"PPO diverged: {e}", it) from e
                nc.clip_grad_norm(agent.store, cfg.max_grad_norm)
                nc.adam_step(agent.store, cfg.lr)
                stats.append((pg.item(), vl.item()))
        rec = {
            "iteration": it,
            "mean_return": float(np.mean(finished)) if finished else None,
            "episodes": len(finished),
            "surrogate": float(np.mean([s[0] for s in stats])),
            "value_loss": float(np.mean([s[1] for s in stats])),
        }
        curve.append(rec)
        if log is not None:
            log(rec)
    return curve
