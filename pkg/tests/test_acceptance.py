"""Acceptance criteria 1-8. Each test is named test_criterion_<n>_<topic>;
conftest prints one PASS/FAIL line per criterion at the end of the run."""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from gradcheck import check
from spikekour import energy as en
from spikekour import numcore as nc
from spikekour import cli, snn
from spikekour.config import load_config
from spikekour.env import EpisodeResult, curriculum_update
from spikekour.events import EventSimConfig, PixelRefState, read_evt1, simulate_events
from spikekour.pipeline import distill_efficacy, lighting_contrast, train_teacher

DEFAULT = Path(__file__).resolve().parents[1] / "configs" / "default.toml"


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.1f} s, budget {self.seconds} s"


# -------------------------------------------------------------- 1

def test_criterion_1_paper_arithmetic():
    with Budget(1.0):
        rows = {"resnet": (8.00e6, 8.76e7, 2.04e8), "mlp": (7.17e6, 2.61e6, 3.31e7)}
        want_ann = {"resnet": 0.94, "mlp": 0.15}
        want_eff = {"resnet": 0.469, "mlp": 0.296}
        want_snn = {"resnet": (4.6 * 8.00e6 + 0.9 * 8.76e7) * 1e-9, "mlp": (4.6 * 7.17e6 + 0.9 * 2.61e6) * 1e-9}
        rounded = {"resnet": (0.11, 0.94, 88.29), "mlp": (0.04, 0.15, 73.33)}
        for key, (first, sops, ann) in rows.items():
            assert abs(en.ann_energy_from_flops(ann) - want_ann[key]) <= 0.005
            assert abs(en.efficiency_from_totals(first, sops, ann) - want_eff[key]) <= 0.005
            assert en.snn_energy_from_totals(first, sops) == pytest.approx(want_snn[key], rel=1e-12)
            e_snn, e_ann, sav = rounded[key]
            assert abs(en.savings_pct(e_snn, e_ann) - sav) <= 0.01
        assert en.snn_energy_from_totals(8.00e6, 8.76e7) == pytest.approx(0.11564, abs=1e-9)
        assert en.snn_energy_from_totals(7.17e6, 2.61e6) == pytest.approx(0.035331, abs=1e-9)
        assert en.paper_check()["pass"]


# -------------------------------------------------------------- 2

def if_oracle(seq, threshold=1.0):
    """Running sum that fires on reaching threshold and restarts from zero."""
    s, out = 0.0, []
    for x in seq:
        s += x
        if s >= threshold:
            out.append(1)
            s = 0.0
        else:
            out.append(0)
    return out


def test_criterion_2_neuron_oracle():
    with Budget(10.0):
        rng = np.random.default_rng(2024)
        N, L = 10_000, 24
        # dyadic inputs keep every partial sum exact in float32 and float64
        X = rng.integers(-8, 13, size=(N, L)) / 8.0
        cfg = snn.NeuronConfig(beta=1.0)
        V = np.zeros(N)
        spikes = np.zeros((N, L), int)
        Vt = nc.Tensor(np.zeros(N, np.float32))
        tape_spikes = np.zeros((N, L), int)
        for t in range(L):
            S, V = snn.lif_step(V, X[:, t], cfg)
            spikes[:, t] = S
            St, Vt = snn.lif_step_tape(Vt, nc.Tensor(X[:, t].astype(np.float32)), cfg)
            tape_spikes[:, t] = St.data
        oracle = np.array([if_oracle(row) for row in X])
        assert np.array_equal(spikes, oracle)
        assert np.array_equal(tape_spikes, oracle)

        # LIF, beta = 0.9, threshold 1, reset 0
        lif = snn.NeuronConfig(beta=0.9)
        V = np.zeros(1)
        trace = []
        for x in (0.5, 0.5, 0.5, 0.2, -0.3):
            S, V = snn.lif_step(V, np.array([x]), lif)
            trace.append((int(S[0]), float(V[0])))
        # 0.5; 0.9*0.5+0.5 = 0.95; 0.9*0.95+0.5 = 1.355 fires -> 0; 0.2; 0.9*0.2-0.3 = -0.12
        want = [(0, 0.5), (0, 0.95), (1, 0.0), (0, 0.2), (0, -0.12)]
        for (s, v), (ws, wv) in zip(trace, want):
            assert s == ws and abs(v - wv) < 1e-6
        g = snn.NeuronConfig(beta=0.9, gamma=0.5, v_reset=-0.2)
        S, V = snn.lif_step(np.array([0.6, 1.0]), np.array([0.4, 0.5]), g)
        np.testing.assert_allclose(V, [0.74, -0.2], atol=1e-6)
        np.testing.assert_array_equal(S, [0.0, 1.0])


# -------------------------------------------------------------- 3

def run_levels(levels, C):
    """levels: [K, H, W] piecewise-constant log-intensity. Returns per-step signed counts [K-1, H, W]."""
    cfg = EventSimConfig(C=C)
    state = PixelRefState(levels[0])
    H, W = levels.shape[1:]
    counts = np.zeros((len(levels) - 1, H, W), np.int64)
    for k in range(1, len(levels)):
        ev, _ = simulate_events(levels[k - 1], levels[k], 0.1 * (k - 1), 0.1 * k, cfg, state)
        np.add.at(counts[k - 1], (ev.y.astype(int), ev.x.astype(int)), ev.p.astype(np.int64))
    return counts


def test_criterion_3_event_conservation():
    with Budget(30.0):
        rng = np.random.default_rng(7)
        for trial in range(200):
            C = float(rng.choice([0.1, 0.15, 0.2, 0.3]))
            K, H, W = int(rng.integers(2, 12)), int(rng.integers(1, 6)), int(rng.integers(1, 6))
            # random holds of random heights
            jumps = rng.normal(0, 0.5, (K, H, W)) * (rng.random((K, H, W)) < 0.7)
            levels = np.cumsum(jumps, axis=0) + rng.normal(0, 1, (1, H, W))
            counts = run_levels(levels, C)
            signed = np.cumsum(counts, axis=0)
            change = levels[1:] - levels[0]
            assert np.all(np.abs(change - C * signed) < C), trial

            # threshold monotonicity: 2C never fires more events per pixel than C
            total_c = np.abs(counts).sum(0)
            total_2c = np.abs(run_levels(levels, 2 * C)).sum(0)
            assert np.all(total_2c <= total_c), trial

        # static scenes
        for C in (0.05, 0.2, 0.5):
            static = np.repeat(rng.normal(0, 1, (1, 8, 8)), 6, axis=0)
            assert not run_levels(static, C).any()


# -------------------------------------------------------------- 4

def grad_net(seed, beta):
    spec = snn.SpikingNetSpec(
        [1, 6, 6],
        [
            {"kind": "conv", "name": "c1", "in_ch": 1, "out_ch": 2, "k": 3, "stride": 2, "pad": 1},
            {"kind": "neuron", "name": "s1"},
            {"kind": "affine", "name": "f1", "in": 18, "out": 6},
            {"kind": "neuron", "name": "s2"},
            {"kind": "gru", "name": "g", "in": 6 + 2, "hidden": 4},
            {"kind": "affine", "name": "a1", "in": 4, "out": 5},
            {"kind": "neuron", "name": "s3"},
            {"kind": "readout", "name": "out", "in": 5, "out": 2},
        ],
        proprio_dim=2,
        T=3,
        # the reset is differentiated too, so the smoothed forward is exactly the chain being checked
        neuron={"beta": beta, "width": 0.5, "detach_reset": False},
    )
    return snn.SpikingNet(spec, rng=np.random.default_rng(seed), init_gain=1.5)


def test_criterion_4_gradient_correctness():
    with Budget(60.0):
        for seed, beta in ((0, 1.0), (1, 1.0), (2, 0.9)):
            with nc.precision(np.float64):
                net = grad_net(seed, beta)
                net.smooth = True
                assert net.store.num_params() <= 1000
                rng = np.random.default_rng(100 + seed)
                x = nc.Tensor(rng.uniform(0, 1, (2, 1, 6, 6)))
                prop = nc.Tensor(rng.standard_normal((2, 2)))
                target = nc.Tensor(rng.standard_normal((2, 2)))

                def build():
                    # two ticks so the persistent membranes and GRU state are on the path
                    net.reset_state()
                    net(x, prop)
                    return nc.mse(net(x, prop), target)

                check(build, list(net.store.values()), eps=1e-5, rel=1e-2, abs_floor=1e-6)


# -------------------------------------------------------------- 5

@pytest.mark.slow
def test_criterion_5_distillation_efficacy():
    with Budget(900.0):
        cfg = load_config(DEFAULT)
        teacher, _ = train_teacher(cfg)
        rows = []
        for seed in (0, 1, 2):
            cfg.seed = seed
            rows.append(distill_efficacy(cfg, teacher, episodes=32))
            print(json.dumps(rows[-1]))
        for r in rows:
            assert r["warmup_reduction"] >= 0.85, r
            assert r["probe_loss_final"] <= r["probe_loss_warmup"], r
        improved = [r["success_final"] > r["success_warmup"] for r in rows]
        assert sum(improved) >= 2, rows


# -------------------------------------------------------------- 6

@pytest.mark.slow
def test_criterion_6_lighting_contrast():
    with Budget(600.0):
        cfg = load_config(DEFAULT)
        teacher, _ = train_teacher(cfg)
        res = lighting_contrast(cfg, teacher, episodes=50)
        print(json.dumps(res))
        depth, events = res["students"]["depth"], res["students"]["events"]
        for light in ("overexposed", "underexposed"):
            assert depth[f"drop_{light}"] > events[f"drop_{light}"], (light, res)


# -------------------------------------------------------------- 7

def test_criterion_7_curriculum():
    with Budget(1.0):
        win = EpisodeResult(success=True, progress=8.0, length=8.0)
        lose = EpisodeResult(fall=True, progress=0.3, length=8.0)
        levels = [0.0, 0.35, 0.9, 1.0]
        seen = [levels]
        for _ in range(12):
            levels = curriculum_update(levels, [win] * 4)
            seen.append(levels)
        seen = np.array(seen)
        assert np.all(np.diff(seen, axis=0) >= 0)
        assert np.all(seen[-1] == 1.0)
        np.testing.assert_array_equal(seen[1], [0.1, 0.45, 1.0, 1.0])
        np.testing.assert_array_equal(seen[:11, 0], np.round(np.arange(11) * 0.1, 10))

        levels = [0.0] * 4
        for _ in range(12):
            levels = curriculum_update(levels, [lose] * 4)
            assert levels == [0.0] * 4


# -------------------------------------------------------------- 8

SHORT = [
    "--set", "teacher.iters=3",
    "--set", "teacher.episodes_per_iter=4",
    "--set", "teacher.epochs=2",
    "--set", "teacher.heldout_episodes=2",
    "--set", "distill.warmup_iters=4",
    "--set", "distill.warmup_episodes=4",
    "--set", "distill.onpolicy_rounds=1",
    "--set", "distill.onpolicy_episodes=4",
    "--set", "distill.onpolicy_iters=2",
    "--set", "distill.batch_size=4",
    "--set", "distill.probe_episodes=4",
    "--set", "eval.episodes=4",
]


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_criterion_8_determinism(tmp_path):
    with Budget(600.0):
        runs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert cli.main(["pipeline", "--config", str(DEFAULT), "--seed", "3", "--out", str(out)] + SHORT) == 0
            runs.append(_tree(out))
        a, b = runs
        assert set(a) == set(b)
        for kind in (".ckpt", ".ckpt.bin", ".evt1", ".dseq"):
            assert any(k.endswith(kind) for k in a), kind
        assert "eval_student_events.json" in a
        assert len(read_evt1(a["episode0.evt1"]).t) > 0
        for k in a:
            # config.json records out_dir, the one intended difference
            if k != "config.json":
                assert a[k] == b[k], k
        ca, cb = json.loads(a["config.json"]), json.loads(b["config.json"])
        ca.pop("out_dir"), cb.pop("out_dir")
        assert ca == cb
