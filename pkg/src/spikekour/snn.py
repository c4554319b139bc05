"""Spiking neurons and spec-driven spiking networks.

A network is an ordered list of layers (conv, affine, neuron, gru, readout)
evaluated for T timesteps per control tick. Layers before an optional GRU
fusion layer form the encoder stage; the GRU consumes the encoder's rate
(spike count / T) together with the proprioceptive vector once per tick, and
the layers after it run another T steps on the fused state. The readout
integrates its input without firing and reports membrane / T.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numcore as nc


@dataclass
class NeuronConfig:
    beta: float = 1.0
    gamma: float = 1.0
    threshold: float = 1.0
    v_reset: float = 0.0
    surrogate: str = "rect"
    width: float = 0.5
    detach_reset: bool = True  # no gradient through the reset mask
    v_min: float | None = None  # optional membrane floor


    def __post_init__(self):
        if not self.v_reset < self.threshold:
            raise ValueError("v_reset must be below the firing threshold")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.surrogate != "rect" or self.width <= 0:
            raise ValueError("only the rectangular surrogate with width > 0 is supported")
        if self.v_min is not None and not self.v_min <= self.v_reset:
            raise ValueError("v_min must not exceed v_reset")


def lif_step(V, I, cfg: NeuronConfig):
    """One leaky integrate-and-fire update on plain arrays. Returns (S, V')."""
    V = np.asarray(V, dtype=np.float64)
    I = np.asarray(I, dtype=np.float64)
    if V.shape != I.shape:
        raise ValueError(f"membrane {V.shape} and input {I.shape} shapes differ")
    v_pre = cfg.beta * V + cfg.gamma * I
    S = (v_pre >= cfg.threshold).astype(np.float64)
    V_new = np.where(S > 0, cfg.v_reset, v_pre)
    if cfg.v_min is not None:
        V_new = np.maximum(V_new, cfg.v_min)
    return S, V_new


def lif_step_tape(V, I, cfg: NeuronConfig, smooth=False):
    """Same update on tensors; the spike uses the rectangular surrogate in backward."""
    v_pre = nc.add(nc.mul(V, cfg.beta), nc.mul(I, cfg.gamma)) if cfg.beta != 0 else nc.mul(I, cfg.gamma)
    S = nc.spike(v_pre, cfg.threshold, cfg.width, smooth_forward=smooth)
    keep = nc.Tensor(1.0 - S.data) if cfg.detach_reset else 1.0 - S
    V_new = nc.mul(v_pre, keep)
    if cfg.v_reset != 0:
        V_new = V_new + nc.mul(S, cfg.v_reset)
    if cfg.v_min is not None:
        V_new = nc.add(nc.relu(nc.add(V_new, -cfg.v_min)), cfg.v_min)
    return S, V_new


def surrogate_grad(v_pre, cfg: NeuronConfig):
    """dS/dV_pre under the rectangular surrogate."""
    return (np.abs(np.asarray(v_pre) - cfg.threshold) < cfg.width) / (2 * cfg.width)


# ------------------------------------------------------------------ spec

WEIGHTED = ("conv", "affine", "gru", "readout")


@dataclass
class SpikingNetSpec:
    input_shape: list  # [C, H, W] or [D]
    layers: list  # dicts with "kind" and "name"
    proprio_dim: int = 0
    T: int = 4
    neuron: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        kinds = [l["kind"] for l in self.layers]
        bad = set(kinds) - {"conv", "affine", "neuron", "gru", "readout"}
        if bad:
            raise ValueError(f"unknown layer kinds {sorted(bad)}")
        if kinds.count("readout") != 1 or kinds[-1] != "readout":
            raise ValueError("exactly one readout layer, placed last")
        if kinds.count("gru") > 1:
            raise ValueError("at most one gru-fusion layer")
        for i, k in enumerate(kinds):
            if k == "neuron" and (i == 0 or kinds[i - 1] not in ("conv", "affine")):
                raise ValueError(f"neuron layer {self.layers[i]['name']!r} must follow a conv or affine layer")
        names = [l["name"] for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")

    def neuron_config(self, layer=None):
        d = dict(self.neuron)
        if layer is not None:
            d.update(layer.get("neuron", {}))
        return NeuronConfig(**d)

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("input_shape", "layers", "proprio_dim", "T", "neuron") if k in d})

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class FiringStats:
    spikes: dict = field(default_factory=dict)  # layer -> total spikes
    slots: dict = field(default_factory=dict)  # layer -> neuron * timestep * batch slots
    samples: int = 0

    def add(self, name, S):
        self.spikes[name] = self.spikes.get(name, 0.0) + float(np.sum(S, dtype=np.float64))
        self.slots[name] = self.slots.get(name, 0) + int(S.size)

    def rates(self):
        return {k: (self.spikes[k] / self.slots[k] if self.slots[k] else 0.0) for k in self.spikes}

    def clear(self):
        self.spikes.clear()
        self.slots.clear()
        self.samples = 0

    def to_dict(self, T):
        return {"T": T, "samples": self.samples, "firing_rates": self.rates()}


class EpisodeStateError(RuntimeError):
    pass


class SpikingNet:
    """Executable network for a :class:`SpikingNetSpec` with persistent membranes."""

    def __init__(self, spec: SpikingNetSpec, rng=None, store: nc.ParamStore | None = None, init_gain=1.0):
        self.spec = spec
        self.store = store or nc.ParamStore()
        self.stats = FiringStats()
        self.smooth = False
        self._shapes = self._infer_shapes()
        if rng is not None:
            self._init_params(rng, init_gain)
        self.V = {}
        self.h = None
        self.pending = None
        self.batch = None

    # -- construction

    def _infer_shapes(self):
        shapes = {}
        cur = tuple(self.spec.input_shape)
        for l in self.spec.layers:
            k = l["kind"]
            if k == "conv":
                if len(cur) != 3 or cur[0] != l["in_ch"]:
                    raise ValueError(f"{l['name']}: expects {l['in_ch']} input channels, got shape {cur}")
                ho = nc.conv_output_size(cur[1], l["k"], l.get("stride", 1), l.get("pad", 0))
                wo = nc.conv_output_size(cur[2], l["k"], l.get("stride", 1), l.get("pad", 0))
                cur = (l["out_ch"], ho, wo)
            elif k in ("affine", "readout"):
                n_in = int(np.prod(cur))
                if k == "affine" and self.spec.proprio_dim and not self._has_gru() and l is self._first_weighted():
                    n_in += self.spec.proprio_dim
                if n_in != l["in"]:
                    raise ValueError(f"{l['name']}: expects {l['in']} inputs, got {n_in}")
                cur = (l["out"],)
            elif k == "gru":
                if int(np.prod(cur)) + self.spec.proprio_dim != l["in"]:
                    raise ValueError(f"{l['name']}: expects {l['in']} inputs, got {int(np.prod(cur))}+{self.spec.proprio_dim}")
                cur = (l["hidden"],)
            shapes[l["name"]] = cur
        return shapes

    def _has_gru(self):
        return any(l["kind"] == "gru" for l in self.spec.layers)

    def _first_weighted(self):
        return next(l for l in self.spec.layers if l["kind"] in WEIGHTED)

    def _init_params(self, rng, gain):
        for l in self.spec.layers:
            k, n = l["kind"], l["name"]
            if k == "conv":
                fan = l["in_ch"] * l["k"] ** 2
                self.store.add(f"{n}.K", nc.kaiming(rng, fan, (l["out_ch"], l["in_ch"], l["k"], l["k"]), gain=gain * np.sqrt(2)))
                self.store.add(f"{n}.b", np.full(l["out_ch"], l.get("bias_init", 0.0)))
            elif k in ("affine", "readout"):
                g = 1.0 if k == "readout" else gain * np.sqrt(2)
                self.store.add(f"{n}.W", nc.kaiming(rng, l["in"], (l["in"], l["out"]), gain=g))
                self.store.add(f"{n}.b", np.full(l["out"], l.get("bias_init", 0.0)))
            elif k == "gru":
                nc.add_gru_params(self.store, n, l["in"], l["hidden"], rng)

    def output_shape(self, name):
        return self._shapes[name]

    # -- state

    def reset_state(self, mask=None, clear_stats=False):
        """Membranes back to V_reset (all rows, or rows where ``mask`` is True)."""
        if mask is None or self.batch is None:
            self.V, self.h, self.pending, self.batch = {}, None, None, None
        else:
            mask = np.asarray(mask, bool)
            for name, V in self.V.items():
                cfg = self.spec.neuron_config(self._layer(name))
                d = V.data.copy()
                d[mask] = cfg.v_reset
                self.V[name] = nc.Tensor(d)
            if self.h is not None:
                d = self.h.data.copy()
                d[mask] = 0.0
                self.h = nc.Tensor(d)
            self.pending[mask] = False
        if clear_stats:
            self.stats.clear()

    def mark_done(self, mask):
        """Flags rows whose episode ended; they must be reset before the next forward."""
        if self.pending is not None:
            self.pending |= np.asarray(mask, bool)

    def detach_state(self):
        self.V = {k: nc.detach(v) for k, v in self.V.items()}
        if self.h is not None:
            self.h = nc.detach(self.h)

    def _layer(self, name):
        return next(l for l in self.spec.layers if l["name"] == name)

    def state_arrays(self):
        return {k: v.data.copy() for k, v in self.V.items()}

    # -- forward

    def _apply(self, l, x):
        n = l["name"]
        s = self.store
        if l["kind"] == "conv":
            return nc.conv2d(x, s[f"{n}.K"], s[f"{n}.b"], stride=l.get("stride", 1), pad=l.get("pad", 0))
        if x.data.ndim > 2:
            x = nc.flatten(x)
        return nc.affine(x, s[f"{n}.W"], s[f"{n}.b"])

    def _run_stage(self, layers, x0, T, readout_acc):
        """Runs ``layers`` for T steps with constant input x0. Returns (rate of last neuron layer, readout sum)."""
        static = {}
        last_spikes = []
        for _ in range(T):
            x, is_static = x0, True
            for l in layers:
                k, name = l["kind"], l["name"]
                if k in ("conv", "affine", "readout"):
                    if is_static and name in static:
                        x = static[name]
                    else:
                        x = self._apply(l, x)
                        if is_static:
                            static[name] = x
                    if k == "readout":
                        readout_acc = x if readout_acc is None else readout_acc + x
                elif k == "neuron":
                    is_static = False
                    cfg = self.spec.neuron_config(l)
                    V = self.V.get(name)
                    if V is None:
                        V = nc.Tensor(np.full(x.shape, cfg.v_reset))
                    S, V = lif_step_tape(V, x, cfg, smooth=self.smooth)
                    self.V[name] = V
                    self.stats.add(name, S.data)
                    x = S
            if layers and layers[-1]["kind"] == "neuron":
                last_spikes.append(x)
        rate = None
        if last_spikes:
            rate = last_spikes[0]
            for S in last_spikes[1:]:
                rate = rate + S
            rate = nc.mul(rate, 1.0 / T)
        return rate, readout_acc

    def forward(self, frame, proprio=None, T=None):
        """Returns the readout (membrane / T) as a Tensor [B, out]."""
        T = T or self.spec.T
        x0 = nc.as_tensor(frame)
        B = x0.shape[0]
        if tuple(x0.shape[1:]) != tuple(self.spec.input_shape):
            raise nc.ShapeError(f"input shape {x0.shape[1:]} does not match spec {self.spec.input_shape}")
        if self.batch is None:
            self.batch = B
            self.pending = np.zeros(B, bool)
        elif self.batch != B:
            raise EpisodeStateError(f"batch size changed from {self.batch} to {B} without reset_state()")
        if self.pending.any():
            raise EpisodeStateError(f"rows {np.flatnonzero(self.pending).tolist()} finished an episode and were not reset")
        P = self.spec.proprio_dim
        prop = None
        if P:
            prop = nc.as_tensor(np.zeros((B, P)) if proprio is None else proprio)
            if prop.shape != (B, P):
                raise nc.ShapeError(f"proprio shape {prop.shape}, expected {(B, P)}")
        self.stats.samples += B

        layers = self.spec.layers
        gi = next((i for i, l in enumerate(layers) if l["kind"] == "gru"), None)
        if gi is None:
            if prop is not None:
                x0 = nc.concat([nc.flatten(x0) if x0.data.ndim > 2 else x0, prop])
            _, acc = self._run_stage(layers, x0, T, None)
        else:
            rate, acc = self._run_stage(layers[:gi], x0, T, None)
            if rate is None:
                raise ValueError("encoder stage before the gru layer must end in a neuron layer")
            g = layers[gi]
            xin = nc.flatten(rate) if rate.data.ndim > 2 else rate
            if prop is not None:
                xin = nc.concat([xin, prop])
            if self.h is None:
                self.h = nc.Tensor(np.zeros((B, g["hidden"])))
            params = {k: self.store[f"{g['name']}.{k}"] for k in ("Wx", "Uzr", "Un", "b")}
            self.h = nc.gru_cell(xin, self.h, params)
            _, acc = self._run_stage(layers[gi + 1 :], self.h, T, acc)
        return nc.mul(acc, 1.0 / T), acc

    def __call__(self, frame, proprio=None, T=None):
        return self.forward(frame, proprio, T)[0]


def spiking_forward(net: SpikingNet, event_frame, proprio=None, T=None):
    """(readout average over T, firing rates) for a batch of frames."""
    out, _ = net.forward(event_frame, proprio, T)
    return out, net.stats.rates()


def student_encoder_layers(in_ch=2, latent=64, conv=(16, 32), height=32, width=48):
    layers = []
    c, h, w = in_ch, height, width
    for i, f in enumerate(conv, 1):
        layers.append({"kind": "conv", "name": f"conv{i}", "in_ch": c, "out_ch": f, "k": 3, "stride": 2, "pad": 1})
        layers.append({"kind": "neuron", "name": f"sn_conv{i}"})
        c, h, w = f, nc.conv_output_size(h, 3, 2, 1), nc.conv_output_size(w, 3, 2, 1)
    layers.append({"kind": "affine", "name": "enc_fc", "in": c * h * w, "out": latent})
    layers.append({"kind": "neuron", "name": "sn_enc"})
    return layers


def student_spec(
    in_ch=2, height=32, width=48, proprio_dim=8, n_out=5, latent=64, hidden=64, actor=(512, 256, 128), conv=(16, 32), T=4, neuron=None
):
    layers = student_encoder_layers(in_ch, latent, conv, height, width)
    layers.append({"kind": "gru", "name": "fuse", "in": latent + proprio_dim, "hidden": hidden})
    prev = hidden
    for i, n in enumerate(actor, 1):
        layers.append({"kind": "affine", "name": f"actor{i}", "in": prev, "out": n})
        layers.append({"kind": "neuron", "name": f"sn_actor{i}"})
        prev = n
    layers.append({"kind": "readout", "name": "head", "in": prev, "out": n_out})
    return SpikingNetSpec([in_ch, height, width], layers, proprio_dim=proprio_dim, T=T, neuron=neuron or {})
