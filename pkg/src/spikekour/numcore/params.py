"""Named parameter storage, initialisers and the Adam update."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .tensor import Tensor, default_dtype


class GradientMissing(RuntimeError):
    pass


class ParamStore:
    """Ordered name -> Tensor map plus Adam moments."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Tensor(value, requires_grad=True, name=name)
        self._params[name] = p
        self.m[name] = np.zeros_like(p.data)
        self.v[name] = np.zeros_like(p.data)
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def num_params(self):
        return int(sum(p.size for p in self._params.values()))

    def state(self):
        return OrderedDict((k, p.data.copy()) for k, p in self._params.items())

    def load_state(self, state):
        from .checkpoint import CheckpointMismatch

        mine = {k: p.shape for k, p in self._params.items()}
        theirs = {k: tuple(np.shape(v)) for k, v in state.items()}
        if mine != theirs:
            raise CheckpointMismatch(mine, theirs)
        for k, v in state.items():
            self._params[k].data = np.array(v, dtype=default_dtype())

    def flat(self):
        return np.concatenate([p.data.ravel() for p in self._params.values()])


def adam_step(store: ParamStore, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    b1, b2 = betas
    for name, p in store.items():
        if p.grad is None:
            raise GradientMissing(f"no gradient for parameter {name!r}; run backward() first")
    store.t += 1
    c1 = 1.0 - b1**store.t
    c2 = 1.0 - b2**store.t
    for name, p in store.items():
        g = p.grad.astype(np.float64)
        m = store.m[name] = (b1 * store.m[name] + (1 - b1) * g).astype(p.data.dtype)
        v = store.v[name] = (b2 * store.v[name] + (1 - b2) * g * g).astype(p.data.dtype)
        mhat = m.astype(np.float64) / c1
        vhat = v.astype(np.float64) / c2
        p.data = (p.data - lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)


def clip_grad_norm(store: ParamStore, max_norm):
    total = np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in store.values() if p.grad is not None))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in store.values():
            if p.grad is not None:
                p.grad = (p.grad * scale).astype(p.data.dtype)
    return total


def kaiming(rng, fan_in, shape, gain=np.sqrt(2.0)):
    return (rng.standard_normal(shape) * gain / np.sqrt(fan_in)).astype(default_dtype())


def uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(default_dtype())
