"""Theoretical MAC/AC energy accounting for ANN and SNN variants.

FLOPs follow the multiply-accumulate convention (one MAC = one FLOP), and
SOPs(l) = fr * T * FLOPs(l). The first weighted layer of a spiking section
receives real-valued input and is charged at E_MAC; the rest at E_AC.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .env.parkour import motor_energy  # noqa: F401  (re-exported)

PJ_TO_MJ = 1e-9


class EnergySpecError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyConfig:
    e_mac_pj: float = 4.6
    e_ac_pj: float = 0.9

    def __post_init__(self):
        if self.e_mac_pj <= 0 or self.e_ac_pj <= 0:
            raise EnergySpecError("per-operation energies must be positive")


@dataclass(frozen=True)
class LayerCostSpec:
    """conv dims: (cin, cout, k, hout, wout); fc dims: (in, out)."""

    kind: str
    dims: tuple
    first: bool = False
    name: str = ""

    def __post_init__(self):
        want = {"conv": 5, "fc": 2}.get(self.kind)
        if want is None:
            raise EnergySpecError(f"unknown layer kind {self.kind!r}")
        if len(self.dims) != want or any(int(d) <= 0 for d in self.dims):
            raise EnergySpecError(f"{self.kind} layer {self.name!r} needs {want} positive dims, got {self.dims}")


def count_flops(layer: LayerCostSpec):
    if layer.kind == "fc":
        a, b = layer.dims
        return a * b
    cin, cout, k, ho, wo = layer.dims
    return k * k * cin * ho * wo * cout


def count_sops(layer: LayerCostSpec, fr, T):
    if not 0.0 <= fr <= 1.0:
        raise EnergySpecError(f"firing rate {fr} outside [0, 1]")
    if T < 1:
        raise EnergySpecError("T must be >= 1")
    return fr * T * count_flops(layer)


# totals-level helpers (Table 2 -> Table 3 arithmetic)

def ann_energy_from_flops(flops, cfg: EnergyConfig = EnergyConfig()):
    return cfg.e_mac_pj * flops * PJ_TO_MJ


def snn_energy_from_totals(first_flops, sops, cfg: EnergyConfig = EnergyConfig()):
    return (cfg.e_mac_pj * first_flops + cfg.e_ac_pj * sops) * PJ_TO_MJ


def efficiency_from_totals(flops_snn, sops_snn, flops_ann):
    if flops_ann <= 0:
        raise EnergySpecError("ANN FLOPs must be positive")
    return (flops_snn + sops_snn) / flops_ann


def savings_pct(e_snn, e_ann):
    return 100.0 * (1.0 - e_snn / e_ann)


# layer-level

def ann_energy(layers, cfg: EnergyConfig = EnergyConfig()):
    return ann_energy_from_flops(sum(count_flops(l) for l in layers), cfg)


def _split(layers):
    firsts = [l for l in layers if l.first]
    if len(firsts) != 1:
        raise EnergySpecError(f"a spiking section needs exactly one first layer, found {len(firsts)}")
    return firsts[0], [l for l in layers if not l.first]


def _rate(rates, layer):
    if layer.name not in rates:
        raise EnergySpecError(f"no firing rate for layer {layer.name!r}")
    return rates[layer.name]


def snn_totals(layers, rates, T):
    """(first-layer FLOPs, SOPs of the rest); ``rates`` maps layer name -> input firing rate."""
    first, rest = _split(layers)
    return count_flops(first), sum(count_sops(l, _rate(rates, l), T) for l in rest)


def snn_energy(layers, rates, T, cfg: EnergyConfig = EnergyConfig()):
    f, s = snn_totals(layers, rates, T)
    return snn_energy_from_totals(f, s, cfg)


def efficiency(snn_layers, rates, T, ann_layers):
    f, s = snn_totals(snn_layers, rates, T)
    return efficiency_from_totals(f, s, sum(count_flops(l) for l in ann_layers))


# spiking network specs

def sections_from_spec(spec):
    """Splits a SpikingNetSpec into spiking sections of LayerCostSpec.

    A section starts at the network input or right after the gru; its first
    weighted layer sees real values. Returns (sections, input_of, gru) where
    input_of maps each non-first layer to the neuron layer feeding it. The gru
    is returned separately as a non-spiking MAC cost.
    """
    shape = tuple(spec.input_shape)
    sections, cur, gru, input_of = [], [], [], {}
    last_neuron = None
    for l in spec.layers:
        k, name = l["kind"], l["name"]
        if k == "neuron":
            last_neuron = name
        elif k == "gru":
            H = l["hidden"]
            gru.append(LayerCostSpec("fc", (l["in"] + H, 3 * H), False, name))
            sections.append(cur)
            cur, last_neuron, shape = [], None, (H,)
        else:
            first = not cur
            if k == "conv":
                s, p = l.get("stride", 1), l.get("pad", 0)
                ho = (shape[1] + 2 * p - l["k"]) // s + 1
                wo = (shape[2] + 2 * p - l["k"]) // s + 1
                cur.append(LayerCostSpec("conv", (l["in_ch"], l["out_ch"], l["k"], ho, wo), first, name))
                shape = (l["out_ch"], ho, wo)
            else:
                cur.append(LayerCostSpec("fc", (l["in"], l["out"]), first, name))
                shape = (l["out"],)
            if not first:
                if last_neuron is None:
                    raise EnergySpecError(f"layer {name!r} is not fed by a spiking layer")
                input_of[name] = last_neuron
    sections.append(cur)
    return [s for s in sections if s], input_of, gru


def energy_report(spec, stats, cfg: EnergyConfig = EnergyConfig(), T=None):
    """EnergyReport dict for a SpikingNetSpec and firing stats {"T", "firing_rates"}."""
    T = int(T or stats.get("T", spec.T))
    fr_by_neuron = stats.get("firing_rates")
    if not isinstance(fr_by_neuron, dict):
        raise EnergySpecError("stats need a 'firing_rates' mapping")
    sections, input_of, gru = sections_from_spec(spec)
    per_layer = []
    flops_ann = flops_first = sops = 0.0
    for sec in sections:
        for l in sec:
            f = count_flops(l)
            flops_ann += f
            if l.first:
                flops_first += f
                per_layer.append({"name": l.name, "kind": l.kind, "first": True, "flops": f, "fr": None, "T": T, "sops": None})
                continue
            src = input_of[l.name]
            if src not in fr_by_neuron:
                raise EnergySpecError(f"missing firing rate for spiking layer {src!r}")
            fr = float(fr_by_neuron[src])
            s = count_sops(l, fr, T)
            sops += s
            per_layer.append({"name": l.name, "kind": l.kind, "first": False, "flops": f, "fr": fr, "T": T, "sops": s})
    e_ann = ann_energy_from_flops(flops_ann, cfg)
    e_snn = snn_energy_from_totals(flops_first, sops, cfg)
    flops_snn = flops_first
    gru_flops = sum(count_flops(l) for l in gru)
    return {
        "flops_ann": flops_ann,
        "flops_snn_first": flops_snn,
        "sops_total": sops,
        "e_ann_mJ": e_ann,
        "e_snn_mJ": e_snn,
        "efficiency": efficiency_from_totals(flops_snn, sops, flops_ann),
        "savings_pct": savings_pct(e_snn, e_ann),
        "per_layer": per_layer,
        "nonspiking": {"flops": gru_flops, "e_mJ": ann_energy_from_flops(gru_flops, cfg), "layers": [l.name for l in gru]},
        "config": {"e_mac_pj": cfg.e_mac_pj, "e_ac_pj": cfg.e_ac_pj, "T": T},
    }


# published operation counts: (first-layer FLOPs, SOPs, ANN FLOPs)
PAPER_TABLE2 = {"resnet": (8.00e6, 8.76e7, 2.04e8), "mlp": (7.17e6, 2.61e6, 3.31e7)}
PAPER_TABLE3 = {"resnet": (0.94, 0.11, 88.29), "mlp": (0.15, 0.04, 73.33)}


def paper_check(cfg: EnergyConfig = EnergyConfig()):
    """Recomputes the published power table from the published operation counts."""
    rows = {}
    ok = True
    for key, (first, sops, ann) in PAPER_TABLE2.items():
        p_ann, p_snn, p_sav = PAPER_TABLE3[key]
        e_ann = ann_energy_from_flops(ann, cfg)
        e_snn = snn_energy_from_totals(first, sops, cfg)
        eff = efficiency_from_totals(first, sops, ann)
        sav_rounded = savings_pct(p_snn, p_ann)
        checks = {
            "e_ann": abs(e_ann - p_ann) <= 0.005,
            "e_snn_rounded": round(e_snn, 2) == p_snn or abs(e_snn - p_snn) <= 0.0075,
            # published savings truncate the value computed from the rounded powers
            "savings": abs(sav_rounded - p_sav) <= 0.01,
        }
        ok &= all(checks.values())
        rows[key] = {
            "e_ann_mJ": e_ann,
            "e_snn_mJ": e_snn,
            "efficiency": eff,
            "savings_pct_exact": savings_pct(e_snn, e_ann),
            "savings_pct_from_rounded": sav_rounded,
            "published": {"e_ann_mJ": p_ann, "e_snn_mJ": p_snn, "savings_pct": p_sav},
            "checks": checks,
        }
    return {"pass": bool(ok), "rows": rows}


def dumps(report):
    return json.dumps(report, indent=2, sort_keys=True)
