"""N independently owned environments stepped in a thread pool."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..seeding import substream
from .parkour import EnvConfig, ParkourEnv
from .terrain import TerrainSpec


def default_threads():
    return max(1, int(os.environ.get("SPIKEKOUR_THREADS", "1")))


class VecEnv:
    """Steps a list of ParkourEnv instances; finished envs are left alone until reset.

    Each env owns its RNG, derived from ``(root_seed, "env", i)``, so results do
    not depend on the thread count.
    """

    def __init__(self, specs, cfg: EnvConfig | None = None, root_seed=0, threads=None):
        self.cfg = cfg or EnvConfig()
        self.root_seed = root_seed
        self.envs = [self._make(i, s) for i, s in enumerate(specs)]
        self.threads = threads or default_threads()
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def _make(self, i, spec):
        return ParkourEnv(
            spec,
            self.cfg,
            rng=substream(self.root_seed, "env", i, spec.seed),
            light_rng=substream(self.root_seed, "light", i, spec.seed),
        )

    def __len__(self):
        return len(self.envs)

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(x) for x in items]
        return list(self._pool.map(fn, items))

    def set_terrain(self, i, spec: TerrainSpec):
        self.envs[i] = self._make(i, spec)

    def reset(self, idx=None):
        idx = range(len(self.envs)) if idx is None else idx
        return self._map(lambda i: self.envs[i].reset(), list(idx))

    def step(self, actions, active=None):
        """Steps envs whose ``active`` flag is set; returns a list of step tuples or None."""
        n = len(self.envs)
        active = np.ones(n, bool) if active is None else np.asarray(active, bool)

        def one(i):
            return self.envs[i].step(actions[i]) if active[i] else None

        return self._map(one, range(n))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None
