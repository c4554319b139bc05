"""Event-camera simulation from depth frames.

Each pixel keeps a running log-intensity level and the reference level at
which it last fired. When the two differ by at least the contrast threshold
C, floor(|r| / C) events are emitted and the reference advances by that many
multiples of C; the sub-threshold residual carries over.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_RANGE = 5.0
# guards floor(|r|/C) against 0.6 - 0.4 = 0.19999999999999996
_COUNT_EPS = 1e-9


@dataclass
class DepthFrame:
    values: np.ndarray  # [H, W] meters
    timestamp: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise ValueError(f"depth frame must be 2-D and non-empty, got shape {self.values.shape}")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclass
class EventSimConfig:
    C: float = 0.2
    mode: str = "difference"
    k: float = 1.0
    eps: float = 1e-3
    max_range: float = MAX_RANGE

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("contrast threshold C must be > 0")
        if self.eps <= 0:
            raise ValueError("intensity floor eps must be > 0")
        if self.mode not in ("difference", "flow"):
            raise ValueError(f"mode must be 'difference' or 'flow', got {self.mode!r}")


@dataclass
class EventStream:
    width: int
    height: int
    x: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint16))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint16))
    t: np.ndarray = field(default_factory=lambda: np.zeros(0, np.float64))
    p: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))

    def __post_init__(self):
        self.x = np.asarray(self.x, np.uint16)
        self.y = np.asarray(self.y, np.uint16)
        self.t = np.asarray(self.t, np.float64)
        self.p = np.asarray(self.p, np.int8)

    def __len__(self):
        return len(self.t)

    def records(self):
        return list(zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist()))

    @classmethod
    def concat(cls, streams, width=None, height=None):
        streams = list(streams)
        if not streams:
            return cls(width or 0, height or 0)
        return cls(
            streams[0].width,
            streams[0].height,
            np.concatenate([s.x for s in streams]),
            np.concatenate([s.y for s in streams]),
            np.concatenate([s.t for s in streams]),
            np.concatenate([s.p for s in streams]),
        )


class PixelRefState:
    """Per-pixel running level and last-fired reference level (float64)."""

    def __init__(self, initial_level):
        lvl = np.array(initial_level, dtype=np.float64)
        self.level = lvl.copy()
        self.ref = lvl.copy()
        self.last_t = -np.inf

    @property
    def shape(self):
        return self.level.shape


@dataclass
class EventFrame:
    counts: np.ndarray  # [2, H, W]: positive, negative
    window: tuple = (0.0, 0.0)

    def as_input(self, normalize=True):
        c = self.counts.astype(np.float32)
        if normalize:
            m = c.max()
            if m > 0:
                c = c / m
        return c


def depth_to_intensity(d, cfg: EventSimConfig):
    """Log-inverse-depth intensity proxy L = ln(k / (d + eps))."""
    vals = d.values if isinstance(d, DepthFrame) else np.asarray(d, dtype=np.float32)
    vals = vals.astype(np.float64)
    if not np.isfinite(vals).all() or (vals <= 0).any():
        raise ValueError("depth values must be finite and > 0")
    clipped = np.minimum(vals, cfg.max_range)
    L = np.log(cfg.k / (clipped + cfg.eps))
    # saturated returns read as the darkest level the camera can produce
    L[vals >= cfg.max_range] = np.log(cfg.k / (cfg.max_range + cfg.eps))
    return L


def image_gradient(L):
    """(dL/dx, dL/dy) per pixel; central differences inside, one-sided at borders."""
    L = np.asarray(L, dtype=np.float64)
    gy, gx = np.gradient(L)
    return gx, gy


def delta_L_flow(grad, v, dt):
    """Brightness constancy: dL = -(grad L . v) dt.

    ``grad`` is (gx, gy); ``v`` is [H, W, 2] pixel velocities (px/s).
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    gx, gy = grad
    v = np.asarray(v, dtype=np.float64)
    if v.shape != gx.shape + (2,):
        raise ValueError(f"flow field shape {v.shape} does not match gradient grid {gx.shape}")
    return -(gx * v[..., 0] + gy * v[..., 1]) * dt


def simulate_events(prev, curr_or_delta, t0, t1, cfg: EventSimConfig, state: PixelRefState):
    """Advance ``state`` over (t0, t1] and return the emitted events.

    In difference mode ``curr_or_delta`` is the new intensity frame and the
    level change is curr - prev. In flow mode it is the change map itself.
    ``state`` is updated in place and also returned.
    """
    if not t1 > t0:
        raise ValueError(f"t1 ({t1}) must be greater than t0 ({t0})")
    if t0 < state.last_t:
        raise ValueError(f"non-monotone timestamps: interval starts at {t0}, previous ended at {state.last_t}")
    if cfg.mode == "difference":
        delta = np.asarray(curr_or_delta, np.float64) - np.asarray(prev, np.float64)
    else:
        delta = np.asarray(curr_or_delta, np.float64)
    if delta.shape != state.shape:
        raise ValueError(f"frame shape {delta.shape} does not match state grid {state.shape}")
    H, W = state.shape

    start = state.level
    level = start + delta
    r = level - state.ref
    n = np.floor(np.abs(r) / cfg.C + _COUNT_EPS).astype(np.int64)
    sign = np.sign(r).astype(np.int64)

    total = int(n.sum())
    if total:
        pix = np.flatnonzero(n)
        counts = n.ravel()[pix]
        rep = np.repeat(pix, counts)
        # k = 1..n within each pixel
        k = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts) + 1
        s = sign.ravel()[rep]
        ref0 = state.ref.ravel()[rep]
        lo, hi = start.ravel()[rep], level.ravel()[rep]
        cross = ref0 + k * cfg.C * s
        span = hi - lo
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(span != 0, (cross - lo) / span, 1.0)
        frac = np.clip(frac, np.finfo(np.float64).eps, 1.0)
        t = t0 + (t1 - t0) * frac
        ys, xs = np.divmod(rep, W)
        order = np.lexsort((s, xs, ys, t))
        out = EventStream(W, H, xs[order], ys[order], t[order], s[order])
    else:
        out = EventStream(W, H)

    state.ref = state.ref + n * cfg.C * sign
    state.level = level
    state.last_t = t1
    return out, state


def events_to_frame(stream: EventStream, window=None, w=None, h=None):
    """Per-pixel polarity counts; ``window`` = (t0, t1) keeps t0 <= t < t1."""
    w = stream.width if w is None else w
    h = stream.height if h is None else h
    x, y, t, p = stream.x.astype(np.int64), stream.y.astype(np.int64), stream.t, stream.p
    if window is not None:
        keep = (t >= window[0]) & (t < window[1])
        x, y, p = x[keep], y[keep], p[keep]
    if len(x) and (x.max() >= w or y.max() >= h):
        raise ValueError(f"event outside {w}x{h} grid")
    counts = np.zeros((2, h, w), dtype=np.int32)
    np.add.at(counts, (np.where(p > 0, 0, 1), y, x), 1)
    return EventFrame(counts, tuple(window) if window is not None else (float(t.min(initial=0.0)), float(t.max(initial=0.0))))


class EventCamera:
    """Stateful wrapper: feed depth frames in time order, get event streams."""

    def __init__(self, cfg: EventSimConfig | None = None):
        self.cfg = cfg or EventSimConfig()
        self.state = None
        self.prev_L = None
        self.prev_t = None

    def reset(self):
        self.state = None
        self.prev_L = None
        self.prev_t = None

    def observe(self, depth: DepthFrame):
        L = depth_to_intensity(depth, self.cfg)
        if self.state is None:
            self.state = PixelRefState(L)
            self.prev_L, self.prev_t = L, depth.timestamp
            return EventStream(depth.width, depth.height)
        stream, _ = simulate_events(self.prev_L, L, self.prev_t, depth.timestamp, self.cfg, self.state)
        self.prev_L, self.prev_t = L, depth.timestamp
        return stream
