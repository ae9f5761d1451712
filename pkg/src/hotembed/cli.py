"""Command-line entry point: ``hotembed run|resume|bench|theory``."""
import argparse
import csv
import json
import os
import sys

from .bounds import optimal_c, theorem1_bound, theorem3_bound
from .errors import HotEmbedError
from .evaluation import throughput_bench
from .experiments import PRESETS, load_config, resume_experiment, run_experiment


def _list(conv):
    def parse(s):
        return [conv(x) for x in s.replace(",", " ").split()]
    return parse


def _threads():
    n = os.environ.get("HOTEMBED_THREADS")
    if n:
        import numba
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def _progress(quiet):
    if quiet:
        return None
    return lambda done, total: print(f"\r{done}/{total} units", end="", file=sys.stderr, flush=True)


def _report(finished, summary, exp, checkpoint):
    if sys.stderr.isatty():
        print(file=sys.stderr)
    if not finished:
        print(f"stopped at unit {exp.next_unit}/{exp.runner.units}; checkpoint: "
              f"{checkpoint or exp.default_checkpoint()}")
        return 0
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_run(args):
    cfg = load_config(args.config, args.set)
    finished, summary, exp = run_experiment(cfg, stop_after=args.stop_after, checkpoint=args.checkpoint,
                                            out_dir=args.output, progress=_progress(args.quiet))
    return _report(finished, summary, exp, args.checkpoint)


def cmd_resume(args):
    expect = load_config(args.config, args.set) if args.config else None
    finished, summary, exp = resume_experiment(args.checkpoint, expect, stop_after=args.stop_after,
                                               out_dir=args.output, progress=_progress(args.quiet))
    return _report(finished, summary, exp, args.checkpoint)


def cmd_bench(args):
    rows = throughput_bench(args.c, args.w, ops=args.ops, seed=args.seed, repeats=args.repeats)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["c", "w", "ops", "insert_ops_per_s", "query_ops_per_s"])
    for r in rows:
        w.writerow([r.c, r.w, r.ops, f"{r.insert_ops_per_s:.0f}", f"{r.query_ops_per_s:.0f}"])
    return 0


def cmd_theory(args):
    w = csv.writer(sys.stdout, lineterminator="\n")
    if args.what == "optimal-c":
        w.writerow(["z", "c_star", "floor", "ceil"])
        for z in args.z:
            o = optimal_c(z)
            w.writerow([z, repr(o.c_star), o.floor, o.ceil])
        return 0
    w.writerow(["gamma", "z", "w", "c", "theorem3_bound", "theorem1_bound"])
    for g in args.gamma:
        for z in args.z:
            for ww in args.w:
                for c in args.c:
                    w.writerow([g, z, ww, c, repr(theorem3_bound(g, z, ww, c)), repr(theorem1_bound(g, ww, c))])
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="hotembed", description="HotSketch embedding compression experiments")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config file or preset",
                       epilog="presets: " + ", ".join(PRESETS))
    r.add_argument("config", help="INI file path or preset name")
    r.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config field (repeatable)")
    r.add_argument("--output", help="output directory (default from config)")
    r.add_argument("--checkpoint", help="checkpoint file to keep updated while running")
    r.add_argument("--stop-after", type=int, help="stop after this many units and save a checkpoint")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("resume", help="continue from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--config", help="require the checkpoint to match this config")
    s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    s.add_argument("--output")
    s.add_argument("--stop-after", type=int)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_resume)

    b = sub.add_parser("bench", help="micro-benchmarks")
    b.add_argument("what", choices=["throughput"])
    b.add_argument("--c", type=_list(int), default=[4, 8, 16, 32])
    b.add_argument("--w", type=_list(int), default=[1000])
    b.add_argument("--ops", type=int, default=1_000_000)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("theory", help="evaluate retention bounds")
    t.add_argument("what", choices=["grid", "optimal-c"])
    t.add_argument("--gamma", type=_list(float), default=[0.1, 0.3, 0.5])
    t.add_argument("--z", type=_list(float), default=[1.05, 1.1, 1.2])
    t.add_argument("--w", type=_list(int), default=[10000])
    t.add_argument("--c", type=_list(int), default=[4])
    t.set_defaults(func=cmd_theory)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    _threads()
    try:
        return args.func(args)
    except HotEmbedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
