"""Procedural parkour courses on a 2.5-D heightfield.

Courses run along +x from x=0 to ``length``; +y is the robot's right-hand
side when facing down the course. Obstacles span the full runway, which is
2 m wide and bounded by ditches so its edges show up in depth.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

KINDS = ("gap", "step", "hurdle", "parkour")
GAP_DEPTH = -1.0
RES = 0.05
HALF_WIDTH = 1.2
RUNWAY_HALF = 1.0  # beyond this the course drops into side ditches
START_FLAT = 2.5
WALL_THICKNESS = 0.1


def gap_width(difficulty):
    return 0.2 + 0.6 * difficulty


def step_height(difficulty):
    return 0.1 + 0.3 * difficulty


def hurdle_height(difficulty):
    return 0.1 + 0.25 * difficulty


@dataclass(frozen=True)
class TerrainSpec:
    kind: str = "gap"
    difficulty: float = 0.0
    seed: int = 0
    length: float = 8.0

    def __post_init__(self):
        if self.kind not in KINDS + ("flat",):
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        if not 0.0 <= self.difficulty <= 1.0:
            raise ValueError("difficulty must lie in [0, 1]")


@dataclass
class Heightfield:
    heights: np.ndarray  # [nx, ny]
    x0: float
    y0: float
    res: float = RES

    def height(self, x, y):
        """Height under (x, y); queries outside the grid return the boundary cell."""
        nx, ny = self.heights.shape
        ix = np.floor((np.asarray(x) - self.x0) * (1.0 / self.res))
        iy = np.floor((np.asarray(y) - self.y0) * (1.0 / self.res))
        ix = np.clip(ix, 0, nx - 1, out=ix if ix.ndim else None).astype(np.intp)
        iy = np.clip(iy, 0, ny - 1, out=iy if iy.ndim else None).astype(np.intp)
        return self.heights[ix, iy]

    def cell_x(self, i):
        return self.x0 + i * self.res

    @property
    def max_height(self):
        return float(self.heights.max())


@dataclass
class Course:
    spec: TerrainSpec
    field: Heightfield
    waypoints: np.ndarray  # [K, 2]
    obstacles: list = field(default_factory=list)

    def to_json(self):
        hf = self.field
        return json.dumps(
            {
                "kind": self.spec.kind,
                "difficulty": self.spec.difficulty,
                "seed": self.spec.seed,
                "length": self.spec.length,
                "grid": {"x0": hf.x0, "y0": hf.y0, "res": hf.res, "nx": hf.heights.shape[0], "ny": hf.heights.shape[1]},
                "heights_b64": base64.b64encode(hf.heights.astype("<f4").tobytes()).decode(),
                "waypoints": self.waypoints.tolist(),
                "obstacles": self.obstacles,
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        g = d["grid"]
        heights = np.frombuffer(base64.b64decode(d["heights_b64"]), "<f4").reshape(g["nx"], g["ny"]).astype(np.float32)
        spec = TerrainSpec(d["kind"], d["difficulty"], d["seed"], d["length"])
        return cls(spec, Heightfield(heights, g["x0"], g["y0"], g["res"]), np.array(d["waypoints"]), d["obstacles"])


def _cells(x_from, x_to, x0, res):
    """Index range of cells whose centre lies in [x_from, x_to)."""
    lo = int(np.ceil((x_from - x0) / res - 0.5 - 1e-9))
    hi = int(np.ceil((x_to - x0) / res - 0.5 - 1e-9))
    return lo, hi


def generate_terrain(spec: TerrainSpec) -> Course:
    rng = np.random.default_rng([spec.seed, KINDS.index(spec.kind) if spec.kind in KINDS else 9, int(round(spec.difficulty * 1000))])
    x0, y0 = -1.0, -HALF_WIDTH
    nx = int(round((spec.length + 3.0 - x0) / RES))
    ny = int(round(2 * HALF_WIDTH / RES))
    h = np.zeros((nx, ny), dtype=np.float32)
    obstacles = []
    d = spec.difficulty

    x = START_FLAT + RES * rng.integers(0, 10)
    while spec.kind != "flat" and x < spec.length - 1.0:
        kind = spec.kind if spec.kind != "parkour" else ("gap", "step", "hurdle")[rng.integers(0, 3)]
        x = round(x / RES) * RES  # obstacles start on cell boundaries
        if kind == "gap":
            w = gap_width(d)
            lo, hi = _cells(x, x + w, x0, RES)
            h[lo:hi] = GAP_DEPTH
            obstacles.append({"type": "gap", "x_start": x, "x_end": x + w, "width": w})
            x += w
        elif kind == "hurdle":
            hh = hurdle_height(d)
            lo, hi = _cells(x, x + WALL_THICKNESS, x0, RES)
            h[lo:hi] = hh
            obstacles.append({"type": "hurdle", "x_start": x, "x_end": x + WALL_THICKNESS, "height": hh})
            x += WALL_THICKNESS
        else:
            sh = step_height(d)
            top = float(rng.uniform(1.2, 1.8))
            lo, hi = _cells(x, x + top, x0, RES)
            h[lo:hi] = sh
            obstacles.append({"type": "step", "x_start": x, "x_end": x + top, "height": sh})
            x += top
        x += float(rng.uniform(1.5, 2.5))

    yc = y0 + (np.arange(ny) + 0.5) * RES
    h[:, np.abs(yc) > RUNWAY_HALF] = GAP_DEPTH

    wx = np.arange(0.0, spec.length + 1.5 + 1e-9, 0.5)
    waypoints = np.stack([wx, np.zeros_like(wx)], axis=1)
    return Course(spec, Heightfield(h, x0, y0, RES), waypoints, obstacles)
