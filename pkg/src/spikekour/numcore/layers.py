"""Composite layers built from the primitive ops."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import ParamStore, uniform_init


def add_gru_params(store: ParamStore, prefix, n_in, n_hidden, rng):
    """Registers ``{prefix}.Wx`` [I,3H], ``{prefix}.Uzr`` [H,2H], ``{prefix}.Un`` [H,H], ``{prefix}.b`` [3H]."""
    H = n_hidden
    store.add(f"{prefix}.Wx", uniform_init(rng, H, (n_in, 3 * H)))
    store.add(f"{prefix}.Uzr", uniform_init(rng, H, (H, 2 * H)))
    store.add(f"{prefix}.Un", uniform_init(rng, H, (H, H)))
    store.add(f"{prefix}.b", np.zeros(3 * H))
    return {k: store[f"{prefix}.{k}"] for k in ("Wx", "Uzr", "Un", "b")}


def gru_cell(x, h, params):
    """One GRU update.

    z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
    n = tanh(x Wn + (r*h) Un + bn), h' = (1 - z) * n + z * h
    """
    Wx, Uzr, Un, b = params["Wx"], params["Uzr"], params["Un"], params["b"]
    H = h.shape[1]
    if x.shape[0] != h.shape[0] or Wx.shape[0] != x.shape[1] or Uzr.shape != (H, 2 * H):
        raise T.ShapeError(f"gru_cell: x {x.shape}, h {h.shape}, Wx {Wx.shape}, Uzr {Uzr.shape}")
    gx = T.affine(x, Wx, b)
    gh = T.matmul(h, Uzr)
    z = T.sigmoid(T.columns(gx, 0, H) + T.columns(gh, 0, H))
    r = T.sigmoid(T.columns(gx, H, 2 * H) + T.columns(gh, H, 2 * H))
    n = T.tanh(T.columns(gx, 2 * H, 3 * H) + T.matmul(r * h, Un))
    return (1.0 - z) * n + z * h


def mlp_forward(x, layers, act=T.relu, final=None):
    """``layers`` is a list of (W, b); ``act`` applies between layers."""
    for i, (W, b) in enumerate(layers):
        x = T.affine(x, W, b)
        if i < len(layers) - 1:
            x = act(x)
    return final(x) if final is not None else x
