import math

import numpy as np
import pytest

from spikekour import numcore as nc
from spikekour.env import Course, EnvConfig, Heightfield, ParkourEnv, RobotState, TerrainSpec, VecEnv
from spikekour.policy import (
    BCConfig,
    DistillConfig,
    DivergenceError,
    Expert,
    ExpertPolicy,
    PPOAgent,
    PPOConfig,
    RolloutBuffer,
    StudentNet,
    StudentPolicy,
    TeacherNet,
    TeacherPolicy,
    action_loss,
    collect_episodes,
    collect_privileged,
    compute_gae,
    distill_loss,
    distill_onpolicy,
    distill_warmup,
    evaluate,
    gaussian_logp,
    scripted_expert,
    success_rate,
    surrogate,
    teacher_features,
    train_teacher_bc,
    train_teacher_ppo,
    yaw_loss,
)
from spikekour.snn import EpisodeStateError, student_spec


def course_from(fn, length=8.0):
    x0, y0, res, nx, ny = -2.0, -3.0, 0.05, 300, 120
    xc = x0 + (np.arange(nx) + 0.5) * res
    yc = y0 + (np.arange(ny) + 0.5) * res
    h = fn(xc[:, None], yc[None, :]) * np.ones((nx, ny))
    wx = np.arange(0.0, length + 1.5 + 1e-9, 0.5)
    return Course(TerrainSpec("flat", 0.0, 0, length), Heightfield(h.astype(np.float32), x0, y0, res), np.stack([wx, 0 * wx], 1))


def at(x=0.0, y=0.0, z=0.0, yaw=0.0):
    return RobotState(np.array([x, y, z], float), np.zeros(3), yaw, False)


def tiny_student(seed=0, sensor="events"):
    spec = student_spec(in_ch=2 if sensor == "events" else 1, actor=(16, 8), conv=(4, 8), latent=8, hidden=8)
    return StudentNet(spec, rng=np.random.default_rng(seed), sensor=sensor, init_gain=3.0)


def gap_envs(n, seed=0, render=True):
    return [ParkourEnv(TerrainSpec("gap", 0.1, seed + j), EnvConfig(render=render), rng=np.random.default_rng(seed + j)) for j in range(n)]


# -------------------------------------------------------------- expert

def test_expert_flat_centerline():
    env = ParkourEnv(course_from(lambda x, y: 0 * x))
    obs = env.reset(at())
    a, yaw = Expert(env)(obs)
    np.testing.assert_array_equal(a, [1.0, 0.0, 0.0, 0.0])
    assert yaw == 0.0


def test_expert_jumps_at_gap_edge_only_inside_trigger():
    env = ParkourEnv(course_from(lambda x, y: np.where((x >= 1.0) & (x < 1.3), -1.0, 0.0)))
    obs = env.reset(at(x=0.7))
    assert Expert(env)(obs)[0][3] == 1.0  # edge 0.3 m ahead
    obs = env.reset(at(x=0.4))
    assert Expert(env)(obs)[0][3] == 0.0  # edge 0.6 m ahead
    shallow = ParkourEnv(course_from(lambda x, y: np.where(x >= 1.0, -0.3, 0.0)))
    # stepping down is walkable and needs no jump
    assert Expert(shallow)(shallow.reset(at(x=0.8)))[0][3] == 0.0


def test_expert_yaw_is_heading_error():
    env = ParkourEnv(course_from(lambda x, y: 0 * x))
    obs = env.reset(at(yaw=0.3))
    a, yaw = scripted_expert(obs, env.state, env.field, 0.0)
    assert yaw == pytest.approx(-0.3, abs=1e-9)
    assert a[2] == pytest.approx(-0.6, abs=1e-9)


def test_expert_easy_gaps():
    rep = evaluate(ExpertPolicy(), ["gap"], [0.0, 0.15, 0.3], ["normal"], 34, root_seed=3)
    assert sum(r["episodes"] for r in rep["results"]) >= 100
    assert success_rate(rep) >= 0.95
    flat = evaluate(ExpertPolicy(), ["flat"], [0.0], ["normal"], 8)
    assert success_rate(flat) == 1.0


def test_non_jumping_policy_fails_gaps():
    envs = gap_envs(4, render=False)

    def no_jump(i, obs):
        a, _ = Expert(envs[i])(obs)
        return np.r_[a[:3], 0.0]

    _, _, _, results = collect_privileged(envs, no_jump)
    assert not any(r.success for r in results)


# -------------------------------------------------------------- teacher (BC)

def bc_envs(it):
    kinds = ["gap", "step", "hurdle", "parkour"]
    return [ParkourEnv(TerrainSpec(kinds[j % 4], (j * 7 % 10) / 10, 100 + it * 100 + j), rng=np.random.default_rng(100 + it * 100 + j)) for j in range(8)]


def heldout_set():
    envs = [ParkourEnv(TerrainSpec(k, 0.2, 900 + j), rng=np.random.default_rng(900 + j)) for j, k in enumerate(["gap", "step", "hurdle", "parkour"] * 2)]
    x, a, y, _ = collect_privileged(envs, None)
    return x, a, y


def test_bc_zero_iterations_leaves_teacher_unchanged():
    t = TeacherNet(np.random.default_rng(0))
    before = {k: v.copy() for k, v in t.store.state().items()}
    hist = train_teacher_bc(t, bc_envs, 0)
    assert hist == []
    for k, v in t.store.state().items():
        np.testing.assert_array_equal(v, before[k])


def test_bc_reduces_heldout_loss():
    t = TeacherNet(np.random.default_rng(0))
    hist = train_teacher_bc(t, bc_envs, 6, BCConfig(epochs=8), heldout=heldout_set())
    assert hist[-1]["heldout_loss"] < 0.1 * hist[0]["heldout_loss"]


def test_bc_divergence_reports_iteration():
    t = TeacherNet(np.random.default_rng(0))
    t.store[t.names[0] + ".W"].data[:] = np.nan
    with pytest.raises(DivergenceError) as e:
        train_teacher_bc(t, bc_envs, 2)
    assert e.value.iteration == 0


@pytest.mark.slow
def test_teacher_matches_expert_on_easy_gaps():
    t = TeacherNet(np.random.default_rng(0))
    train_teacher_bc(t, bc_envs, 25, BCConfig(epochs=8))
    cell = (["gap"], [0.1], ["normal"], 40)
    expert = success_rate(evaluate(ExpertPolicy(), *cell, root_seed=5))
    teacher = success_rate(evaluate(TeacherPolicy(t), *cell, root_seed=5))
    assert teacher >= 0.9 * expert


# -------------------------------------------------------------- PPO

def test_gae_gamma_zero_is_immediate_reward():
    r = np.array([[1.0, -2.0], [0.5, 3.0], [2.0, 0.0]])
    v = np.array([[0.3, 0.1], [0.2, -0.4], [1.0, 2.0]])
    d = np.zeros_like(r)
    adv, ret = compute_gae(r, v, d, np.array([5.0, 5.0]), gamma=0.0, lam=0.95)
    np.testing.assert_allclose(adv, r - v)
    np.testing.assert_allclose(ret, r)


def test_gae_hand_example_with_done():
    # one env, gamma 0.5, lambda 1: plain discounted returns that stop at the done flag
    r = np.array([[1.0], [1.0], [1.0]])
    v = np.zeros((3, 1))
    d = np.array([[0.0], [1.0], [0.0]])
    adv, ret = compute_gae(r, v, d, np.array([4.0]), gamma=0.5, lam=1.0)
    np.testing.assert_allclose(ret[:, 0], [1.5, 1.0, 3.0])


def test_clip_to_infinity_matches_unclipped():
    rng = np.random.default_rng(0)
    mu = rng.standard_normal((32, 4))
    log_std = np.full(4, -0.5)
    acts = mu + 0.3 * rng.standard_normal((32, 4))
    adv = rng.standard_normal(32)
    old = gaussian_logp(mu, log_std, acts).data - 0.1 * rng.standard_normal(32)
    vals, grads = [], []
    for clip in (None, 1e9):
        m = nc.Tensor(mu, requires_grad=True)
        with nc.Tape():
            obj = surrogate(gaussian_logp(m, nc.Tensor(log_std), acts), old, adv, clip)
            nc.backward(obj, params=[m])
        vals.append(obj.item())
        grads.append(m.grad.copy())
    assert abs(vals[0] - vals[1]) < 1e-6
    np.testing.assert_allclose(grads[0], grads[1], atol=1e-6)


def test_gaussian_logp_against_closed_form():
    mu = np.array([[0.0, 1.0]])
    a = np.array([[0.5, 0.0]])
    ls = np.log(np.array([1.0, 2.0]))
    want = sum(-0.5 * ((a[0, i] - mu[0, i]) / s) ** 2 - math.log(s) - 0.5 * math.log(2 * math.pi) for i, s in enumerate([1.0, 2.0]))
    assert gaussian_logp(mu, ls, a).data[0] == pytest.approx(want)


def test_ppo_config_validation():
    with pytest.raises(ValueError):
        PPOConfig(gamma=1.0)
    with pytest.raises(ValueError):
        PPOConfig(clip=0.0)


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ppo_improves_return(seed):
    specs = [TerrainSpec("flat" if j % 2 == 0 else "hurdle", 0.0, j) for j in range(8)]
    vec = VecEnv(specs, EnvConfig(), root_seed=seed)
    rng = np.random.default_rng(seed)
    agent = PPOAgent(TeacherNet(rng), rng, PPOConfig())
    curve = train_teacher_ppo(agent, vec, 200, rng)
    vec.close()
    # iterations where no episode finished report no return
    returns = [c["mean_return"] for c in curve if c["mean_return"] is not None]
    assert len(returns) >= 20
    assert np.mean(returns[-10:]) > np.mean(returns[:10])


# -------------------------------------------------------------- distillation losses

def test_action_loss_hand_example():
    t = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert action_loss(t, nc.Tensor(np.zeros((2, 2)))).item() == pytest.approx(0.5)
    assert action_loss(t, nc.Tensor(t)).item() == 0.0


def test_yaw_loss_wraps_and_averages_over_robots():
    t = np.array([math.pi - 0.1, 0.0])
    s = nc.Tensor(np.array([[-math.pi + 0.1], [0.4]]))
    assert yaw_loss(t, s).item() == pytest.approx((0.2**2 + 0.4**2) / 2, abs=1e-6)


def test_distill_loss_weighting_and_mask():
    ta, ty = np.ones((3, 4)), np.zeros(3)
    sa, sy = nc.Tensor(np.zeros((3, 4))), nc.Tensor(np.full((3, 1), 0.2))
    assert distill_loss(ta, ty, sa, sy).item() == pytest.approx(1.0 + 0.5 * 0.04)
    mask = np.array([True, False, True])
    sa2 = nc.Tensor(np.array([[0.0] * 4, [9.0] * 4, [0.0] * 4]))
    assert distill_loss(ta, ty, sa2, sy, mask).item() == pytest.approx(1.0 + 0.5 * 0.04)


def test_matching_outputs_give_zero_gradient():
    st = tiny_student()
    frames = np.random.default_rng(0).uniform(0, 1, (3, 2, 32, 48)).astype(np.float32)
    prop = np.zeros((3, 8), np.float32)
    st.store.zero_grad()
    with nc.Tape() as tape:
        st.reset()
        sa, sy = st.forward(frames, prop)
        loss = distill_loss(sa.data, sy.data[:, 0], sa, sy)
        nc.backward(loss, st.store, tape)
    assert loss.item() == 0.0
    assert all(not np.any(p.grad) for p in st.store.values())


def test_student_state_must_be_reset_after_done():
    st = tiny_student()
    frames = np.zeros((2, 2, 32, 48), np.float32)
    st.reset()
    st.forward(frames, np.zeros((2, 8), np.float32))
    st.mark_done(np.array([True, False]))
    with pytest.raises(EpisodeStateError):
        st.forward(frames, np.zeros((2, 8), np.float32))
    st.reset(np.array([True, False]))
    st.forward(frames, np.zeros((2, 8), np.float32))


# -------------------------------------------------------------- distillation loop

@pytest.fixture(scope="module")
def teacher():
    t = TeacherNet(np.random.default_rng(0))
    train_teacher_bc(t, bc_envs, 3, BCConfig(epochs=4))
    return t


class SpyTeacher:
    def __init__(self, t):
        self.t, self.seen = t, []

    def act(self, x):
        self.seen.append(np.array(x))
        return self.t.act(x)


class SpyEnv(ParkourEnv):
    def step(self, action):
        self.features = getattr(self, "features", [])
        self.features.append(teacher_features(self.observe()))
        return super().step(action)


def test_labels_come_from_the_observed_state(teacher):
    envs = [SpyEnv(TerrainSpec("gap", 0.1, j), EnvConfig(render=True), rng=np.random.default_rng(j)) for j in range(3)]
    spy = SpyTeacher(teacher)
    eps = collect_episodes(envs, spy, tiny_student())
    rows = {i: [] for i in range(3)}
    for x in spy.seen:
        alive = [i for i in range(3) if len(rows[i]) < len(eps[i])]
        for k, i in enumerate(alive):
            rows[i].append(x[k])
    for i in range(3):
        np.testing.assert_array_equal(np.array(rows[i]), np.array(envs[i].features))
        ta, ty = teacher.act(np.array(envs[i].features))
        np.testing.assert_allclose(eps[i].t_action, ta, atol=1e-6)
        np.testing.assert_allclose(eps[i].t_yaw, ty, atol=1e-6)


def test_teacher_frozen_through_distillation(teacher):
    before = {k: v.copy() for k, v in teacher.store.state().items()}
    st = tiny_student()
    make = lambda phase, r, n: gap_envs(n, seed={"warmup": 0, "onpolicy": 50 + 10 * r}[phase])
    cfg = DistillConfig(warmup_iters=4, warmup_episodes=4, onpolicy_rounds=1, onpolicy_episodes=2, onpolicy_iters=2, batch_size=2)
    rng = np.random.default_rng(0)
    buf = distill_warmup(teacher, st, make, cfg, rng)
    distill_onpolicy(teacher, st, make, cfg, rng, buf)
    assert len(buf) == 6
    for k, v in teacher.store.state().items():
        np.testing.assert_array_equal(v, before[k])


def test_onpolicy_lr_decays_linearly_to_zero(teacher, monkeypatch):
    from spikekour.policy import student as student_mod

    seen = []
    real = student_mod.nc.adam_step
    monkeypatch.setattr(student_mod.nc, "adam_step", lambda store, lr: (seen.append(lr), real(store, lr)))
    st = tiny_student()
    make = lambda phase, r, n: gap_envs(n, seed={"warmup": 0, "onpolicy": 50 + 10 * r}[phase])
    cfg = DistillConfig(warmup_iters=2, warmup_episodes=2, onpolicy_rounds=2, onpolicy_episodes=2, onpolicy_iters=3, batch_size=2, lr=1e-3)
    rng = np.random.default_rng(0)
    buf = distill_warmup(teacher, st, make, cfg, rng)
    distill_onpolicy(teacher, st, make, cfg, rng, buf)
    np.testing.assert_allclose(seen[:2], [1e-3, 1e-3])
    np.testing.assert_allclose(seen[2:], [3e-4 * (1 - k / 6) for k in range(6)])

    seen.clear()
    flat = DistillConfig(**{**cfg.__dict__, "onpolicy_lr_decay": False, "onpolicy_rounds": 1})
    distill_onpolicy(teacher, st, make, flat, rng, buf)
    np.testing.assert_allclose(seen, [3e-4] * 3)
    with pytest.raises(ValueError):
        DistillConfig(onpolicy_lr_scale=0.0)


def test_buffer_is_fifo_and_sampling_deterministic():
    buf = RolloutBuffer(capacity=3)
    buf.add(list("abcde"))
    assert buf.episodes == ["c", "d", "e"]
    a = buf.sample(np.random.default_rng(1), 2)
    b = buf.sample(np.random.default_rng(1), 2)
    assert a == b and len(a) == 2


# -------------------------------------------------------------- evaluation

def test_evaluate_zero_episodes_flags_error():
    rep = evaluate(ExpertPolicy(), ["gap"], [0.1], ["normal"], 0)
    assert rep["results"] == [] and rep["error"]


def test_evaluate_schema_and_determinism():
    run = lambda: evaluate(StudentPolicy(tiny_student()), ["gap"], [0.1], ["normal", "overexposed"], 2, root_seed=4)
    a, b = run(), run()
    assert a == b
    keys = {"policy", "terrain", "difficulty", "lighting", "episodes", "successes", "mean_progress", "mean_motor_energy_mJ"}
    assert all(set(r) == keys for r in a["results"])
    # the event student never sees the corrupted depth stream
    assert a["results"][0]["mean_progress"] == a["results"][1]["mean_progress"]
