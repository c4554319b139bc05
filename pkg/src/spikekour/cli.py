"""Command-line entry point.

Exit codes: 0 ok, 1 usage, 2 input I/O, 3 training divergence,
4 checkpoint mismatch, 5 spec/stats error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import energy as en
from . import numcore as nc
from .config import ConfigError, load_config
from .events import EventSimConfig, FormatError, read_dseq, write_evt1
from .events.sim import PixelRefState, delta_L_flow, depth_to_intensity, image_gradient, simulate_events, EventStream
from .policy.evaluate import ExpertPolicy, dumps as dump_report, format_table, success_rate
from .policy.teacher import DivergenceError
from .snn import SpikingNetSpec

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED, EXIT_CKPT, EXIT_SPEC = 0, 1, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot read {path}: {e.strerror}") from e


def _write_bytes(path, data):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _write_json(path, obj):
    _write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _config(args):
    try:
        cfg = load_config(args.config, args.set or ())
    except FileNotFoundError as e:
        raise CliError(EXIT_IO, f"config not found: {e.filename}") from e
    except ConfigError as e:
        raise CliError(EXIT_USAGE, f"bad config: {e}") from e
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


# ------------------------------------------------------------------ events

def cmd_events(args):
    frames, fps = _parse(read_dseq, _read_bytes(args.input), args.input)
    if not frames:
        raise CliError(EXIT_IO, f"{args.input}: no frames")
    mode = {"diff": "difference", "flow": "flow"}[args.mode]
    cfg = EventSimConfig(C=args.threshold, mode=mode)
    flow = None
    if mode == "flow":
        if not args.flow:
            raise CliError(EXIT_USAGE, "--mode flow needs --flow FILE.npy with per-interval pixel velocities [N-1, H, W, 2]")
        try:
            flow = np.load(args.flow)
        except OSError as e:
            raise CliError(EXIT_IO, f"cannot read {args.flow}: {e}") from e
        want = (len(frames) - 1,) + frames[0].values.shape + (2,)
        if flow.shape != want:
            raise CliError(EXIT_USAGE, f"flow shape {flow.shape}, expected {want}")
    L = [depth_to_intensity(f, cfg) for f in frames]
    h, w = frames[0].values.shape
    state = PixelRefState(L[0])
    streams = []
    for i in range(1, len(frames)):
        t0, t1 = frames[i - 1].timestamp, frames[i].timestamp
        cur = L[i] if mode == "difference" else delta_L_flow(image_gradient(L[i - 1]), flow[i - 1], t1 - t0)
        s, _ = simulate_events(L[i - 1], cur, t0, t1, cfg, state)
        streams.append(s)
    stream = EventStream.concat(streams) if streams else EventStream(w, h)
    _write_bytes(args.output, write_evt1(stream))
    if args.csv:
        from .events import events_to_csv

        _write_bytes(args.csv, events_to_csv(stream).encode())
    n = len(stream.t)
    print(f"frames={len(frames)} events={n} events_per_pixel={n / (w * h):.4f}")
    return EXIT_OK


def _parse(fn, buf, path):
    try:
        return fn(buf)
    except FormatError as e:
        raise CliError(EXIT_IO, f"{path}: {e}") from e


# ------------------------------------------------------------------ training

def cmd_train_teacher(args):
    from .pipeline import JsonlLog, save_teacher, train_teacher

    cfg = _config(args)
    if args.method:
        cfg.teacher.method = args.method
    if args.iters is not None:
        cfg.teacher.iters = cfg.teacher.ppo_iters = args.iters
    os.makedirs(cfg.out_dir, exist_ok=True)
    log = JsonlLog(os.path.join(cfg.out_dir, "teacher_metrics.jsonl"))
    try:
        teacher, hist = train_teacher(cfg, log)
    except DivergenceError as e:
        raise CliError(EXIT_DIVERGED, str(e)) from e
    finally:
        log.close()
    path = os.path.join(cfg.out_dir, "teacher.ckpt")
    save_teacher(path, teacher)
    last = hist[-1] if hist else {}
    print(f"teacher ({cfg.teacher.method}) saved to {path}; last record: {json.dumps(last, sort_keys=True)}")
    return EXIT_OK


def _load(path, expect=None):
    from .pipeline import load_policy

    try:
        return load_policy(path, expect)
    except nc.CheckpointMismatch as e:
        raise CliError(EXIT_CKPT, f"checkpoint mismatch in {path}:\n{e}") from e
    except nc.CheckpointError as e:
        code = EXIT_IO if "not found" in str(e) or "cannot read" in str(e) else EXIT_CKPT
        raise CliError(code, str(e)) from e
    except FileNotFoundError as e:
        raise CliError(EXIT_IO, f"checkpoint not found: {e.filename}") from e


def cmd_distill(args):
    from .pipeline import JsonlLog, distill, new_student, save_student

    cfg = _config(args)
    if args.sensor:
        cfg.distill.sensor = args.sensor
    teacher = _load(args.teacher, "teacher")
    student = None
    if args.init:
        student = _load(args.init, "student")
    elif cfg.student_spec:
        try:
            student = new_student(cfg)
        except (ValueError, KeyError, json.JSONDecodeError) as e:
            raise CliError(EXIT_SPEC, f"bad student spec: {e}") from e
    os.makedirs(cfg.out_dir, exist_ok=True)
    name = f"student_{cfg.distill.sensor}"
    log = JsonlLog(os.path.join(cfg.out_dir, f"{name}_metrics.jsonl"))
    try:
        student, info = distill(cfg, teacher, log=log, student=student)
    except DivergenceError as e:
        raise CliError(EXIT_DIVERGED, str(e)) from e
    finally:
        log.close()
    path = os.path.join(cfg.out_dir, f"{name}.ckpt")
    save_student(path, student)
    save_student(os.path.join(cfg.out_dir, f"{name}_warmup.ckpt"), student, info["warmup_state"])
    _write_json(os.path.join(cfg.out_dir, f"{name}_stats.json"), info["firing_stats"])
    _write_bytes(os.path.join(cfg.out_dir, f"{name}_spec.json"), student.spec.to_json().encode())
    summary = {k: info[k] for k in ("probe_loss_init", "probe_loss_warmup", "probe_loss_final")}
    _write_json(os.path.join(cfg.out_dir, f"{name}_summary.json"), summary)
    print(f"student saved to {path}; " + " ".join(f"{k}={v:.5f}" for k, v in summary.items()))
    return EXIT_OK


# ------------------------------------------------------------------ eval

def cmd_eval(args):
    from .pipeline import policy_for, run_eval

    cfg = _config(args)
    if args.expert:
        policy = ExpertPolicy()
    elif args.checkpoint:
        policy = policy_for(_load(args.checkpoint))
        if args.name:
            policy.name = args.name
    else:
        raise CliError(EXIT_USAGE, "eval needs --checkpoint PATH or --expert")
    split = lambda s: [x for x in s.split(",") if x] if s else None
    try:
        diffs = [float(x) for x in split(args.difficulties)] if args.difficulties else None
    except ValueError as e:
        raise CliError(EXIT_USAGE, f"bad --difficulties: {e}") from e
    try:
        report = run_eval(cfg, policy, split(args.terrains), diffs, split(args.lightings), args.episodes)
    except ValueError as e:
        raise CliError(EXIT_USAGE, str(e)) from e
    out = args.output or os.path.join(cfg.out_dir, f"eval_{policy.name}.json")
    _write_bytes(out, (dump_report(report) + "\n").encode())
    print(format_table(report))
    print(f"report written to {out}")
    return EXIT_OK


# ------------------------------------------------------------------ energy

def cmd_energy(args):
    if args.paper_check:
        res = en.paper_check()
        for key, r in res["rows"].items():
            print(
                f"{key}: E_ANN={r['e_ann_mJ']:.2f} mJ  E_SNN={r['e_snn_mJ']:.5f} mJ  "
                f"efficiency={r['efficiency']:.4f}  savings(rounded inputs)={r['savings_pct_from_rounded']:.2f}%"
            )
        print("PASS" if res["pass"] else "FAIL")
        if args.output:
            _write_json(args.output, res)
        return EXIT_OK if res["pass"] else EXIT_SPEC
    if not (args.spec and args.stats):
        raise CliError(EXIT_USAGE, "energy needs --spec and --stats (or --paper-check)")
    spec_text = _read_bytes(args.spec).decode(errors="replace")
    stats_text = _read_bytes(args.stats).decode(errors="replace")
    try:
        spec = SpikingNetSpec.from_json(spec_text)
    except json.JSONDecodeError as e:
        raise CliError(EXIT_SPEC, f"{args.spec}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    except (ValueError, KeyError, TypeError) as e:
        raise CliError(EXIT_SPEC, f"{args.spec}: invalid spec: {e}") from e
    try:
        stats = json.loads(stats_text)
    except json.JSONDecodeError as e:
        raise CliError(EXIT_SPEC, f"{args.stats}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    cfg = en.EnergyConfig(args.e_mac, args.e_ac)
    try:
        report = en.energy_report(spec, stats, cfg, T=args.T)
    except en.EnergySpecError as e:
        raise CliError(EXIT_SPEC, str(e)) from e
    text = en.dumps(report)
    if args.output:
        _write_bytes(args.output, (text + "\n").encode())
    print(text)
    return EXIT_OK


# ------------------------------------------------------------------ pipeline

def cmd_pipeline(args):
    """teacher -> distill -> eval -> energy, all under one output directory."""
    from .events import write_dseq
    from .pipeline import JsonlLog, distill, policy_for, record_episode, run_eval, save_student, save_teacher, train_teacher

    cfg = _config(args)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "config.json"), cfg.to_dict())
    log = JsonlLog(os.path.join(out, "metrics.jsonl"))
    try:
        teacher, _ = train_teacher(cfg, lambda r: log({"stage": "teacher", **r}))
        save_teacher(os.path.join(out, "teacher.ckpt"), teacher)
        student, info = distill(cfg, teacher, log=lambda r: log({"stage": "distill", **r}))
    except DivergenceError as e:
        raise CliError(EXIT_DIVERGED, str(e)) from e
    finally:
        log.close()
    name = f"student_{cfg.distill.sensor}"
    save_student(os.path.join(out, f"{name}.ckpt"), student)
    _write_json(os.path.join(out, f"{name}_stats.json"), info["firing_stats"])
    report = run_eval(cfg, policy_for(student))
    _write_bytes(os.path.join(out, f"eval_{name}.json"), (dump_report(report) + "\n").encode())
    frames, stream = record_episode(cfg, policy_for(student))
    _write_bytes(os.path.join(out, "episode0.dseq"), write_dseq(frames, cfg.frame_rate_hz))
    _write_bytes(os.path.join(out, "episode0.evt1"), write_evt1(stream))
    e = en.energy_report(student.spec, info["firing_stats"])
    _write_bytes(os.path.join(out, "energy.json"), (en.dumps(e) + "\n").encode())
    print(format_table(report))
    print(f"artifacts in {out}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser():
    p = argparse.ArgumentParser(prog="spikekour", description="Event-camera spiking parkour policies at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="TOML or JSON run config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (overrides out_dir)")

    e = sub.add_parser("events", help="DSEQ depth frames -> EVT1 events")
    e.add_argument("input")
    e.add_argument("output")
    e.add_argument("--threshold", type=float, default=0.2)
    e.add_argument("--mode", choices=["diff", "flow"], default="diff")
    e.add_argument("--flow", help="npy pixel-velocity fields for flow mode")
    e.add_argument("--csv", help="also write events as CSV")
    e.set_defaults(fn=cmd_events)

    t = sub.add_parser("train-teacher", help="train the privileged teacher")
    with_config(t)
    t.add_argument("--method", choices=["bc", "ppo"])
    t.add_argument("--iters", type=int)
    t.set_defaults(fn=cmd_train_teacher)

    d = sub.add_parser("distill", help="warmup + on-policy distillation into the spiking student")
    with_config(d)
    d.add_argument("--teacher", required=True, help="teacher checkpoint")
    d.add_argument("--init", help="start from this student checkpoint")
    d.add_argument("--sensor", choices=["events", "depth"])
    d.set_defaults(fn=cmd_distill)

    v = sub.add_parser("eval", help="success-rate table")
    with_config(v)
    v.add_argument("--checkpoint")
    v.add_argument("--expert", action="store_true", help="evaluate the scripted expert")
    v.add_argument("--name", help="policy name in the report")
    v.add_argument("--terrains")
    v.add_argument("--difficulties")
    v.add_argument("--lightings")
    v.add_argument("--episodes", type=int)
    v.add_argument("--output")
    v.set_defaults(fn=cmd_eval)

    g = sub.add_parser("energy", help="theoretical energy report")
    g.add_argument("--spec")
    g.add_argument("--stats")
    g.add_argument("--T", type=int)
    g.add_argument("--e-mac", type=float, default=4.6)
    g.add_argument("--e-ac", type=float, default=0.9)
    g.add_argument("--paper-check", action="store_true")
    g.add_argument("--output")
    g.set_defaults(fn=cmd_energy)

    pl = sub.add_parser("pipeline", help="teacher, distillation, evaluation and energy in one go")
    with_config(pl)
    pl.set_defaults(fn=cmd_pipeline)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
