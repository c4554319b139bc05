import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikekour import events as ev


def cfg(**kw):
    return ev.EventSimConfig(**kw)


def scalar_oracle(levels, C):
    """Per-pixel reference tracking by repeated subtraction, one event at a time."""
    ref, count = levels[0], 0
    for L in levels[1:]:
        while L - ref >= C - 1e-9:
            ref += C
            count += 1
        while ref - L >= C - 1e-9:
            ref -= C
            count -= 1
    return count


# -------------------------------------------------------------- intensity

def test_constant_depth_constant_intensity():
    L = ev.depth_to_intensity(ev.DepthFrame(np.full((4, 5), 2.0)), cfg())
    assert np.ptp(L) == 0
    gx, gy = ev.image_gradient(L)
    assert not gx.any() and not gy.any()


def test_intensity_hand_values():
    c = cfg(k=1.0, eps=1e-12)
    L = ev.depth_to_intensity(ev.DepthFrame(np.array([[1.0, 0.5]])), c)
    assert L[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert L[0, 1] == pytest.approx(math.log(2), abs=1e-6)


def test_halving_depth_adds_ln2():
    c = cfg(k=1.0, eps=1e-12)
    d = np.random.default_rng(0).uniform(0.3, 4.0, (6, 7))
    diff = ev.depth_to_intensity(ev.DepthFrame(d / 2), c) - ev.depth_to_intensity(ev.DepthFrame(d), c)
    np.testing.assert_allclose(diff, math.log(2), atol=1e-6)


def test_max_range_maps_to_frame_minimum():
    d = np.array([[0.5, ev.MAX_RANGE, 4.9]])
    L = ev.depth_to_intensity(ev.DepthFrame(d), cfg())
    assert L[0, 1] == L.min()


def test_config_validation():
    with pytest.raises(ValueError):
        cfg(C=0)
    with pytest.raises(ValueError):
        cfg(eps=0)
    with pytest.raises(ValueError):
        cfg(mode="sideways")


# --------------------------------------------------------------- gradient

def test_gradient_of_ramp():
    x = np.arange(8)[None, :].repeat(5, axis=0)
    gx, gy = ev.image_gradient(0.1 * x)
    np.testing.assert_allclose(gx[1:-1, 1:-1], 0.1)
    np.testing.assert_allclose(gy[1:-1, 1:-1], 0.0)


def test_gradient_transpose_swaps_components():
    L = np.random.default_rng(1).standard_normal((6, 9))
    gx, gy = ev.image_gradient(L)
    gxT, gyT = ev.image_gradient(L.T)
    np.testing.assert_allclose(gxT, gy.T)
    np.testing.assert_allclose(gyT, gx.T)


def test_delta_L_flow_cases():
    grad = (np.full((2, 2), 0.1), np.zeros((2, 2)))
    v = np.zeros((2, 2, 2))
    assert not ev.delta_L_flow(grad, v, 0.1).any()
    v[..., 0] = -2.0
    np.testing.assert_allclose(ev.delta_L_flow(grad, v, 0.1), 0.02)
    np.testing.assert_allclose(ev.delta_L_flow(grad, -v, 0.1), -0.02)
    with pytest.raises(ValueError):
        ev.delta_L_flow(grad, np.zeros((3, 2, 2)), 0.1)


# ------------------------------------------------------------- simulation

def test_static_scene_no_events():
    L = np.random.default_rng(2).standard_normal((4, 4))
    state = ev.PixelRefState(L)
    out, _ = ev.simulate_events(L, L, 0.0, 0.1, cfg(), state)
    assert len(out) == 0


def test_residual_carry_hand_example():
    c = cfg(C=0.2)
    state = ev.PixelRefState(np.zeros((1, 1)))
    out, state = ev.simulate_events(np.zeros((1, 1)), np.full((1, 1), 0.45), 0.0, 0.1, c, state)
    assert len(out) == 2 and (out.p == 1).all()
    assert state.level[0, 0] - state.ref[0, 0] == pytest.approx(0.05)
    out, state = ev.simulate_events(np.full((1, 1), 0.45), np.full((1, 1), 0.60), 0.1, 0.2, c, state)
    assert len(out) == 1 and out.p[0] == 1
    assert state.level[0, 0] - state.ref[0, 0] == pytest.approx(0.0, abs=1e-9)


def test_timestamps_interpolated_inside_interval():
    state = ev.PixelRefState(np.zeros((1, 1)))
    out, _ = ev.simulate_events(np.zeros((1, 1)), np.full((1, 1), 0.8), 1.0, 2.0, cfg(C=0.2), state)
    np.testing.assert_allclose(out.t, [1.25, 1.5, 1.75, 2.0])


def test_non_monotone_timestamps_rejected():
    state = ev.PixelRefState(np.zeros((1, 1)))
    ev.simulate_events(np.zeros((1, 1)), np.zeros((1, 1)), 0.0, 1.0, cfg(), state)
    with pytest.raises(ValueError, match="non-monotone"):
        ev.simulate_events(np.zeros((1, 1)), np.zeros((1, 1)), 0.5, 2.0, cfg(), state)
    with pytest.raises(ValueError):
        ev.simulate_events(np.zeros((1, 1)), np.zeros((1, 1)), 3.0, 3.0, cfg(), state)


def test_ordering_tie_break():
    L0 = np.zeros((2, 2))
    L1 = np.array([[0.2, -0.2], [0.2, 0.2]])
    out, _ = ev.simulate_events(L0, L1, 0.0, 1.0, cfg(C=0.2), ev.PixelRefState(L0))
    assert out.records() == [(0, 0, 1.0, 1), (1, 0, 1.0, -1), (0, 1, 1.0, 1), (1, 1, 1.0, 1)]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_frames=st.integers(2, 12), C=st.sampled_from([0.05, 0.1, 0.2, 0.3]))
def test_counts_match_scalar_oracle(seed, n_frames, C):
    rng = np.random.default_rng(seed)
    frames = np.cumsum(rng.normal(0, 0.3, (n_frames, 3, 4)), axis=0)
    state = ev.PixelRefState(frames[0])
    signed = np.zeros((3, 4), dtype=np.int64)
    last_t = -np.inf
    for i in range(1, n_frames):
        out, state = ev.simulate_events(frames[i - 1], frames[i], i - 1.0, float(i), cfg(C=C), state)
        assert (np.diff(out.t) >= 0).all() and (out.t.min(initial=np.inf) >= last_t)
        last_t = out.t.max(initial=last_t)
        np.add.at(signed, (out.y.astype(int), out.x.astype(int)), out.p.astype(int))
    for yy in range(3):
        for xx in range(4):
            assert signed[yy, xx] == scalar_oracle(frames[:, yy, xx], C)
    assert (np.abs((frames[-1] - frames[0]) - C * signed) < C + 1e-9).all()


def test_polarity_matches_sign_of_change():
    rng = np.random.default_rng(4)
    L0, L1 = rng.normal(0, 1, (5, 5)), rng.normal(0, 1, (5, 5))
    out, _ = ev.simulate_events(L0, L1, 0.0, 0.1, cfg(C=0.1), ev.PixelRefState(L0))
    change = (L1 - L0)[out.y.astype(int), out.x.astype(int)]
    assert (np.sign(change) == out.p).all()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_doubling_threshold_never_increases_counts(seed):
    rng = np.random.default_rng(seed)
    frames = np.cumsum(rng.normal(0, 0.4, (6, 4, 4)), axis=0)

    def counts(C):
        state = ev.PixelRefState(frames[0])
        total = np.zeros((4, 4), dtype=int)
        for i in range(1, 6):
            out, state = ev.simulate_events(frames[i - 1], frames[i], i - 1.0, float(i), cfg(C=C), state)
            np.add.at(total, (out.y.astype(int), out.x.astype(int)), 1)
        return total

    assert (counts(0.4) <= counts(0.2)).all()


def test_flow_and_difference_agree_on_translation():
    # smooth pattern translating at v px/s
    H, W, v, dt = 6, 32, 3.0, 0.1
    xs = np.arange(W, dtype=np.float64)
    pattern = lambda shift: np.tile(np.sin(2 * np.pi * (xs - shift) / W) * 1.5, (H, 1))
    c_diff, c_flow = cfg(C=0.1), cfg(C=0.1, mode="flow")
    s_diff, s_flow = ev.PixelRefState(pattern(0)), ev.PixelRefState(pattern(0))
    n_diff, n_flow = np.zeros((H, W), int), np.zeros((H, W), int)
    for i in range(10):
        prev, curr = pattern(v * dt * i), pattern(v * dt * (i + 1))
        out_d, s_diff = ev.simulate_events(prev, curr, i * dt, (i + 1) * dt, c_diff, s_diff)
        flow = np.zeros((H, W, 2))
        flow[..., 0] = v
        dL = ev.delta_L_flow(ev.image_gradient(prev), flow, dt)
        out_f, s_flow = ev.simulate_events(None, dL, i * dt, (i + 1) * dt, c_flow, s_flow)
        np.add.at(n_diff, (out_d.y.astype(int), out_d.x.astype(int)), out_d.p.astype(int))
        np.add.at(n_flow, (out_f.y.astype(int), out_f.x.astype(int)), out_f.p.astype(int))
    assert np.abs(n_diff - n_flow).max() <= 1


# ----------------------------------------------------------------- frames

def test_event_frame_counts():
    s = ev.EventStream(3, 3, [1, 1, 1, 0], [1, 1, 1, 0], [0.01, 0.02, 0.03, 0.04], [1, 1, 1, -1])
    f = ev.events_to_frame(s, (0.0, 0.1), 3, 3)
    assert f.counts[0, 1, 1] == 3 and f.counts[1, 0, 0] == 1
    assert f.counts.sum() == 4


def test_empty_stream_zero_frame():
    f = ev.events_to_frame(ev.EventStream(4, 2), (0.0, 0.1))
    assert f.counts.shape == (2, 2, 4) and not f.counts.any()
    assert not f.as_input().any()


def test_event_outside_grid_rejected():
    with pytest.raises(ValueError, match="outside"):
        ev.events_to_frame(ev.EventStream(2, 2, [5], [0], [0.0], [1]), (0.0, 1.0))


def test_window_is_half_open():
    s = ev.EventStream(2, 2, [0, 0, 1], [0, 0, 1], [0.0, 0.05, 0.1], [1, -1, 1])
    f = ev.events_to_frame(s, (0.0, 0.1))
    assert f.counts.sum() == 2


# --------------------------------------------------------------------- io

def _random_stream(rng, n, w=40, h=30):
    return ev.EventStream(w, h, rng.integers(0, w, n), rng.integers(0, h, n), np.sort(rng.uniform(0, 5, n)), rng.choice([-1, 1], n))


def test_empty_stream_round_trip():
    buf = ev.write_evt1(ev.EventStream(8, 6))
    assert len(buf) == 24
    s = ev.read_evt1(buf)
    assert len(s) == 0 and (s.width, s.height) == (8, 6)


def test_round_trip_1000_events():
    s = _random_stream(np.random.default_rng(5), 1000)
    buf = ev.write_evt1(s)
    assert len(buf) == 24 + 14 * 1000
    back = ev.read_evt1(buf)
    assert back.records() == s.records()
    assert ev.write_evt1(back) == buf


def test_bad_magic_names_expected():
    buf = bytearray(ev.write_evt1(_random_stream(np.random.default_rng(6), 3)))
    buf[:4] = b"NOPE"
    with pytest.raises(ev.FormatError, match="EVT1") as err:
        ev.read_evt1(bytes(buf))
    assert err.value.offset == 0


def test_truncated_record_offset():
    buf = ev.write_evt1(_random_stream(np.random.default_rng(7), 5))
    with pytest.raises(ev.FormatError) as err:
        ev.read_evt1(buf[:-3])
    assert err.value.offset == 24 + 4 * 14


def test_out_of_range_coordinate_offset():
    s = _random_stream(np.random.default_rng(8), 4, w=10, h=10)
    buf = bytearray(ev.write_evt1(s))
    buf[24 + 2 * 14 : 24 + 2 * 14 + 2] = (99).to_bytes(2, "little")
    with pytest.raises(ev.FormatError, match="outside") as err:
        ev.read_evt1(bytes(buf))
    assert err.value.offset == 24 + 2 * 14


def test_dseq_round_trip_and_errors():
    rng = np.random.default_rng(9)
    frames = [rng.uniform(0.2, 5.0, (4, 6)).astype(np.float32) for _ in range(3)]
    buf = ev.write_dseq(frames, fps=10.0)
    back, fps = ev.read_dseq(buf)
    assert fps == 10.0 and [f.timestamp for f in back] == [0.0, 0.1, 0.2]
    for a, b in zip(frames, back):
        assert a.tobytes() == b.values.tobytes()
    with pytest.raises(ev.FormatError, match="DSEQ"):
        ev.read_dseq(b"XXXX" + buf[4:])
    with pytest.raises(ev.FormatError, match="truncated frame 2") as err:
        ev.read_dseq(buf[:-5])
    assert err.value.offset == 24 + 2 * 4 * 6 * 4


def test_csv_export_header():
    s = ev.EventStream(4, 4, [1], [2], [0.5], [-1])
    assert ev.events_to_csv(s).splitlines() == ["x,y,t,p", "1,2,0.5,-1"]


def test_camera_wrapper_two_frames():
    cam = ev.EventCamera(cfg(C=0.2, k=1.0, eps=1e-9))
    d0 = np.ones((2, 2))
    d1 = d0.copy()
    d1[0, 0] = math.exp(-0.45)  # +0.45 log intensity
    assert len(cam.observe(ev.DepthFrame(d0, 0.0))) == 0
    out = cam.observe(ev.DepthFrame(d1, 0.1))
    assert len(out) == 2 and (out.p == 1).all()
