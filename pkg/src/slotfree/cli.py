"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid
configuration or input schema.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, attention, case_task, continual, io, metrics
from ._rng import make_rng
from .errors import InsufficientDataError, IntegrityError, InvalidConfigError
from .patterns import mean_pairwise_similarity, random_patterns, tgcrp_generate

log = logging.getLogger("slotfree")

EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3


def _cue_list(text):
    try:
        levels = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad cue level list {text!r}") from None
    return levels


class Output:
    """Collects written files and emits the manifest last."""

    def __init__(self, out_dir, command, args):
        self.dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.command = command
        self.args = args
        self.files = []
        self.extra = {}
        self.start = time.time()

    def path(self, name):
        p = os.path.join(self.dir, name)
        self.files.append(p)
        return p

    def finish(self, argv):
        config = {k: v for k, v in vars(self.args).items() if k not in ("func", "config")}
        manifest = {
            "command": self.command,
            "argv": list(argv),
            "config": config,
            "version": __version__,
            "wall_clock_s": round(time.time() - self.start, 3),
            "outputs": {os.path.basename(p): io.sha256_file(p) for p in self.files},
            **self.extra,
        }
        io.write_json(os.path.join(self.dir, "manifest.json"), manifest)


# --- subcommands -----------------------------------------------------------------

def cmd_presets(args, argv):
    print("memory models (n_v=1000, s_v=0.1):")
    print(f"  {'name':<11} {'epsilon':>7} {'f':>5} {'n_h':>5} {'k_h':>4}")
    for name, cfg in continual.PRESETS.items():
        print(f"  {name:<11} {cfg.epsilon:>7g} {cfg.f:>5g} {cfg.n_h:>5} {cfg.k_h:>4}")
    print("attention models (L=C=4, B=64, 5000 iterations):")
    print(f"  {'name':<11} {'N':>3} {'n_h':>4} {'eta_Q':>7} {'eta_K':>7} {'eta_V':>7}")
    for name in attention.VARIANTS:
        c = attention.train_preset(name)
        n_h = "-" if name == "baseline" else c.n_h
        print(f"  {name:<11} {c.N:>3} {n_h:>4} {c.eta_Q:>7g} {c.eta_K:>7g} {c.eta_V:>7g}")
    return 0


def cmd_gen_data(args, argv):
    out = Output(args.out_dir, "gen-data", args)
    rng = make_rng(args.seed)
    if args.kind == "case":
        batch = case_task.gen_batch(args.letters, args.context, args.count, rng,
                                    allow_repeats=args.allow_repeats)
        case_task.dump_csv(batch, out.path("case_batch.csv"))
    elif args.kind == "random":
        io.write_patterns(out.path("patterns.txt"),
                          random_patterns(args.count, args.n_v, args.s_v, rng))
    else:
        b = continual.parse_data_source(args.kind)
        tree = tgcrp_generate(args.count, args.n_v, args.s_v, b, rng)
        io.write_patterns(out.path("patterns.txt"), tree.patterns)
        io.write_tree_edges(out.path("tree_edges.txt"), tree)
        leaves = tree.leaf_patterns()
        out.extra["n_leaves"] = int(leaves.shape[0])
        if leaves.shape[0] > 1:
            out.extra["mean_leaf_similarity"] = mean_pairwise_similarity(leaves)
    out.finish(argv)
    return 0


def _experiment(args, flips):
    return continual.ExperimentConfig(
        seq_len=args.seq_len, window=args.window, cue_levels=args.cue_levels,
        n_samples=args.dprime_samples, runs_per_sample=args.runs, seed=args.seed,
        flips=flips, tree_nodes=args.tree_nodes,
        uniform_baseline=getattr(args, "uniform_baseline", False))


def _run_memory(args, argv, flips, command):
    exp = _experiment(args, flips)
    models = [args.preset] + ([args.compare] if args.compare else [])
    cfgs = {m: continual.preset(m) for m in models}
    out = Output(args.out_dir, command, args)
    curves = {}
    for m in models:
        log.info("running %s: %d runs", m, exp.n_runs)
        results = continual.run_many(cfgs[m], exp, jobs=args.jobs)
        curves[m] = continual.aggregate(results, exp)
        if exp.uniform_baseline:
            curves[m + "-uniform"] = continual.aggregate(results, exp, pseudo="uniform")
    if args.compare:
        for ca, cb in zip(curves[args.preset], curves[args.compare]):
            continual.compare(ca, cb)
    summary = {}
    for name, per_cue in curves.items():
        for curve in per_cue:
            tag = f"{name}_c{curve.cue_level:g}"
            io.write_curve(out.path(f"curve_{tag}.csv"), curve)
            entry = {"n_excluded_dprime_samples": curve.n_excluded,
                     "mean_pseudo_rho": float(curve.rho_pseudo.mean())}
            try:
                entry["decay_fit"] = curve.fit_decay(args.max_age).as_dict()
            except InsufficientDataError as exc:
                entry["decay_fit"] = {"error": str(exc)}
            if curve.sig_flags is not None:
                entry["segments"] = metrics.segments(curve.sig_flags)
                entry["first_reliable_age"] = metrics.first_reliable_age(curve.sig_flags)
            summary[tag] = entry
    io.write_json(out.path("summary.json"), summary)
    out.extra["models"] = {m: dataclasses.asdict(c) for m, c in cfgs.items()}
    out.extra["seeds"] = {"seed": args.seed, "runs": exp.n_runs}
    out.finish(argv)
    return 0


def cmd_run_memory(args, argv):
    return _run_memory(args, argv, continual.parse_data_source(args.data), "run-memory")


def cmd_run_structured(args, argv):
    return _run_memory(args, argv, args.flips, "run-structured")


def cmd_run_attention(args, argv):
    projection = args.proj == "on"
    overrides = {"iterations": args.iterations}
    cfg = attention.train_preset(args.variant, projection, **overrides)
    out = Output(args.out_dir, "run-attention", args)
    runs = []
    for r in range(args.runs):
        seed = int(np.random.SeedSequence([args.seed, r]).generate_state(1)[0])
        trace, slow = attention.train(cfg, seed=seed)
        io.write_rows(out.path(f"trace_run{r}.csv"), ["iter", "acc", "loss"],
                      [(i, float(a), float(l)) for i, (a, l) in enumerate(zip(trace.acc, trace.loss))])
        stat_names = list(trace.snapshots[0][1].stats())
        io.write_rows(out.path(f"structure_run{r}.csv"), ["iter"] + stat_names,
                      [[it] + [rep.stats()[k] for k in stat_names] for it, rep in trace.snapshots])
        runs.append({"seed": seed, "end_accuracy": trace.end_accuracy(min(1000, cfg.iterations)),
                     "first_above_95": trace.first_crossing(),
                     "final": attention.probe_structure(slow, cfg.L).stats(),
                     "crossing": trace.crossing})
    stats = {}
    for k in runs[0]["final"]:
        vals = np.array([r["final"][k] for r in runs])
        stats[k] = {"mean": float(vals.mean()), "min": float(vals.min()), "max": float(vals.max())}
    acc = np.array([r["end_accuracy"] for r in runs])
    summary = {"config": dataclasses.asdict(cfg), "runs": runs, "structure": stats,
               "end_accuracy": {"mean": float(acc.mean()), "min": float(acc.min()),
                                "max": float(acc.max())}}
    io.write_json(out.path("summary.json"), summary)
    out.finish(argv)
    return 0


def cmd_analyze(args, argv):
    report = {}
    if args.write_theory:
        n_v, s_v, n_h, c = args.theory
        ages = np.arange(1, args.ages + 1)
        rd = metrics.mhn_theory_rd(int(n_v), s_v, int(n_h), c, ages)
        base = metrics.mhn_theory_baseline(int(n_v), s_v, int(n_h), c)
        curve = continual.RetentionCurve(
            cue_level=c, rho_real=rd + base, rho_pseudo=np.full(ages.size, base), rd=rd,
            rd_se=np.zeros(ages.size), dprime=np.full(ages.size, np.nan),
            dprime_se=np.full(ages.size, np.nan), dprime_samples=None, rd_samples=None)
        io.write_curve(args.write_theory, curve)
        report["theory_file"] = args.write_theory
    for path in args.curves:
        data = io.read_curve(path)
        entry = {}
        if args.fit_decay:
            fit = metrics.exp_regression(data["rd_mean"], max_age=args.max_age, ages=data["age"])
            entry["decay_fit"] = fit.as_dict()
            if args.theory:
                n_v, s_v, n_h, c = args.theory
                C, beta = metrics.mhn_theory_constants(int(n_v), s_v, int(n_h), c)
                entry["theory"] = {"C": C, "beta": beta,
                                   "delta_C": fit.C - C, "delta_beta": fit.beta - beta}
        flags = data["sig_flag"]
        entry["segments"] = metrics.segments(flags, first_age=int(data["age"][0]))
        entry["first_reliable_age"] = metrics.first_reliable_age(flags, min_run=args.min_run)
        report[path] = entry
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


# --- parser --------------------------------------------------------------------

def _memory_flags(p):
    p.add_argument("--preset", default="kw-f005", choices=sorted(continual.PRESETS))
    p.add_argument("--compare", choices=sorted(continual.PRESETS),
                   help="second preset; adds per-age d' significance flags")
    p.add_argument("--runs", type=int, default=20, help="runs per d' sample")
    p.add_argument("--dprime-samples", type=int, default=10)
    p.add_argument("--seq-len", type=int, default=4000)
    p.add_argument("--window", type=int, default=1000)
    p.add_argument("--cue-levels", type=_cue_list, default=(1.0, 0.5))
    p.add_argument("--tree-nodes", type=int, default=14000)
    p.add_argument("--max-age", type=int, default=200, help="last age used in decay fits")


def _common(p, out=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    p.add_argument("--config", help="JSON file of option values; command-line flags win")
    if out:
        p.add_argument("--out-dir", default="out")


def build_parser():
    parser = argparse.ArgumentParser(prog="slotfree", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("presets", help="list model presets")
    p.set_defaults(func=cmd_presets)

    p = sub.add_parser("gen-data", help="write random, tree-structured or case-task data")
    _common(p)
    p.add_argument("--kind", default="random", help="random | tgcrp:<b> | case")
    p.add_argument("--count", type=int, default=4000,
                   help="patterns, tree nodes, or case sequences")
    p.add_argument("--n-v", type=int, default=1000)
    p.add_argument("--s-v", type=float, default=0.1)
    p.add_argument("--letters", type=int, default=4)
    p.add_argument("--context", type=int, default=4)
    p.add_argument("--allow-repeats", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run-memory", help="continual-learning retention experiment")
    _common(p)
    _memory_flags(p)
    p.add_argument("--data", default="random", help="random | tgcrp:<b>")
    p.set_defaults(func=cmd_run_memory)

    p = sub.add_parser("run-structured", help="retention on tree-structured patterns")
    _common(p)
    _memory_flags(p)
    p.add_argument("--flips", type=int, required=True, help="bit flips per tree edge")
    p.add_argument("--uniform-baseline", action="store_true",
                   help="also score against uniform random pseudo patterns")
    p.set_defaults(func=cmd_run_structured)

    p = sub.add_parser("run-attention", help="train attention models on the case task")
    _common(p)
    p.add_argument("--variant", default="baseline", choices=attention.VARIANTS)
    p.add_argument("--proj", default="off", choices=("on", "off"))
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--iterations", type=int, default=5000)
    p.set_defaults(func=cmd_run_attention)

    p = sub.add_parser("analyze", help="decay fits, theory comparison and flag tables")
    p.add_argument("curves", nargs="*", help="retention curve CSV files")
    p.add_argument("--fit-decay", action="store_true")
    p.add_argument("--max-age", type=int, default=200)
    p.add_argument("--min-run", type=int, default=5,
                   help="flags in a row needed for a reliable advantage")
    p.add_argument("--theory", type=float, nargs=4, metavar=("N_V", "S_V", "N_H", "C"),
                   help="compare fits with the 1-winner theory at these parameters")
    p.add_argument("--write-theory", metavar="CSV",
                   help="write the theory curve for --theory parameters")
    p.add_argument("--ages", type=int, default=1000)
    p.add_argument("--out", help="also write the JSON report here")
    p.add_argument("--config", help="JSON file of option values; command-line flags win")
    p.set_defaults(func=cmd_analyze)
    return parser, sub


def _apply_config(parser, sub, argv):
    """Parse twice: once to find --config, then with its values as defaults."""
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if not path:
        return args
    with open(path) as fh:
        values = json.load(fh)
    if not isinstance(values, dict):
        raise InvalidConfigError(f"{path}: config must be a JSON object")
    sp = sub.choices[args.command]
    known = {a.dest for a in sp._actions}
    unknown = set(k.replace("-", "_") for k in values) - known
    if unknown:
        raise InvalidConfigError(f"{path}: unknown options {sorted(unknown)}")
    defaults = {k.replace("-", "_"): v for k, v in values.items()}
    if "cue_levels" in defaults and not isinstance(defaults["cue_levels"], str):
        defaults["cue_levels"] = tuple(defaults["cue_levels"])
    elif "cue_levels" in defaults:
        defaults["cue_levels"] = _cue_list(defaults["cue_levels"])
    sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, sub = build_parser()
    try:
        args = _apply_config(parser, sub, argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    except (InvalidConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except (InvalidConfigError, IntegrityError, InsufficientDataError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report any failure as a runtime error
        print(f"error: runtime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
