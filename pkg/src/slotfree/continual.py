"""Continual-learning harness for associative memories.

A run trains a fresh network on a sequence of patterns, one pass each, then
freezes it and scores retrieval of the most recent patterns (real) and of
never-seen patterns (pseudo) from full and partial cues. Runs are
independent given ``(seed, run_index)`` and are grouped into samples for d'.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from ._rng import DATA_STREAM, MODEL_STREAM, TEST_STREAM, make_rng
from .errors import IntegrityError, InvalidConfigError
from .network import KWinnerConfig, KWinnerMHN
from .patterns import partial_cues, random_patterns, tgcrp_generate

log = logging.getLogger(__name__)

PRESETS = {
    "kw-f005": KWinnerConfig(n_h=2000, k_h=50, f=0.05, epsilon=0.3),
    "kw-f01": KWinnerConfig(n_h=1000, k_h=50, f=0.1, epsilon=0.3),
    "mhn": KWinnerConfig(n_h=100, k_h=1, f=1.0, epsilon=1.0),
    "mhn-graded": KWinnerConfig(n_h=100, k_h=1, f=1.0, epsilon=0.3),
    "kw-lr02": KWinnerConfig(n_h=2000, k_h=50, f=0.05, epsilon=0.2),
}


def preset(name):
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise InvalidConfigError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def parse_data_source(text):
    """``"random"`` -> None; ``"tgcrp:b"`` -> b."""
    if text == "random":
        return None
    kind, _, b = text.partition(":")
    if kind != "tgcrp" or not b.isdigit():
        raise InvalidConfigError(f"data source must be 'random' or 'tgcrp:<b>', got {text!r}")
    return int(b)


@dataclass(frozen=True)
class ExperimentConfig:
    seq_len: int = 4000
    window: int = 1000
    cue_levels: tuple = (1.0, 0.5)
    n_samples: int = 10
    runs_per_sample: int = 20
    seed: int = 0
    flips: int = None             # None: uniform random data, else TGCRP bit flips
    tree_nodes: int = 14000
    uniform_baseline: bool = False  # structured runs: also score uniform pseudo patterns

    def __post_init__(self):
        if self.seq_len < 1:
            raise InvalidConfigError("sequence length must be >= 1")
        if not 0 <= self.window <= self.seq_len:
            raise InvalidConfigError(
                f"test window {self.window} outside [0, seq_len={self.seq_len}]")
        if self.n_samples < 1 or self.runs_per_sample < 1:
            raise InvalidConfigError("run counts must be >= 1")
        if not self.cue_levels or any(not 0 < c <= 1 for c in self.cue_levels):
            raise InvalidConfigError(f"cue levels must lie in (0, 1]: {self.cue_levels}")
        if self.flips is not None and self.flips < 0:
            raise InvalidConfigError("bit flip count must be >= 0")

    @property
    def n_runs(self):
        return self.n_samples * self.runs_per_sample

    @property
    def structured(self):
        return self.flips is not None


@dataclass
class RunResult:
    """Scores of one run. Arrays are ``(n_cue_levels, window)``; column
    ``a - 1`` holds age ``a`` for real patterns (pseudo columns are just
    matched draws)."""

    run_index: int
    cue_levels: tuple
    real: np.ndarray
    pseudo: np.ndarray
    pseudo_uniform: np.ndarray = None
    n_learn: int = 0

    @property
    def window(self):
        return self.real.shape[1]


def _score(net, patterns, cue_levels, rng):
    """rho of the network's output against each full pattern, per cue level."""
    k_v = net.config.k_v
    out = np.empty((len(cue_levels), patterns.shape[0]))
    for ci, c in enumerate(cue_levels):
        cues = partial_cues(patterns, c, rng)
        x_out, _ = net.retrieve_batch(cues)
        out[ci] = metrics.rho(x_out, patterns, k_v)
    return out


def _evaluate(net, trained, pseudo, exp, run_index, uniform=None):
    net.freeze()
    n_learn = net.n_learn
    window = exp.window
    # newest first, so column a-1 is age a
    real_pats = trained[::-1][:window]
    rng = make_rng(exp.seed, run_index, TEST_STREAM)
    real = _score(net, real_pats, exp.cue_levels, rng)
    fake = _score(net, pseudo, exp.cue_levels, rng)
    fake_u = _score(net, uniform, exp.cue_levels, rng) if uniform is not None else None
    if net.n_learn != n_learn:
        raise IntegrityError("network was modified during testing")
    return RunResult(run_index, tuple(exp.cue_levels), real, fake, fake_u, n_learn)


def run_single(model, exp, run_index):
    """One run on uniform random patterns."""
    cfg = model
    data_rng = make_rng(exp.seed, run_index, DATA_STREAM)
    trained = random_patterns(exp.seq_len, cfg.n_v, cfg.s_v, data_rng)
    pseudo = random_patterns(exp.window, cfg.n_v, cfg.s_v, data_rng)
    net = KWinnerMHN.init(cfg, make_rng(exp.seed, run_index, MODEL_STREAM))
    net.learn_sequence(trained)
    return _evaluate(net, trained, pseudo, exp, run_index)


def structured_patterns(model, exp, rng):
    """Leaves of a fresh TGCRP tree, shuffled: ``(trained, pseudo)``.

    The tree is regrown with more nodes until it has enough leaves for the
    training sequence plus the pseudo set.
    """
    need = exp.seq_len + exp.window
    nodes = exp.tree_nodes
    while True:
        tree = tgcrp_generate(nodes, model.n_v, model.s_v, exp.flips, rng)
        leaves = tree.leaves()
        if leaves.size >= need:
            break
        log.info("tree with %d nodes has only %d leaves; regrowing", nodes, leaves.size)
        nodes = int(nodes * need / max(leaves.size, 1)) + 1000
    leaves = rng.permutation(leaves)[:need]
    pats = tree.patterns[leaves]
    return pats[:exp.seq_len], pats[exp.seq_len:]


def run_structured(model, exp, run_index):
    """One run on leaves of a freshly grown TGCRP tree; held-out leaves are
    the pseudo patterns."""
    if not exp.structured:
        raise InvalidConfigError("structured runs need a bit flip count")
    data_rng = make_rng(exp.seed, run_index, DATA_STREAM)
    trained, pseudo = structured_patterns(model, exp, data_rng)
    uniform = None
    if exp.uniform_baseline:
        uniform = random_patterns(exp.window, model.n_v, model.s_v, data_rng)
    net = KWinnerMHN.init(model, make_rng(exp.seed, run_index, MODEL_STREAM))
    net.learn_sequence(trained)
    return _evaluate(net, trained, pseudo, exp, run_index, uniform)


def _run_one(args):
    model, exp, run_index = args
    fn = run_structured if exp.structured else run_single
    return fn(model, exp, run_index)


def default_jobs():
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1


def run_many(model, exp, jobs=None, runs=None):
    """All runs of an experiment, sorted by run index.

    ``jobs`` worker processes (default: available cores); the result is the
    same for any value.
    """
    runs = range(exp.n_runs) if runs is None else runs
    tasks = [(model, exp, r) for r in runs]
    jobs = default_jobs() if jobs is None else jobs
    if jobs <= 1 or len(tasks) <= 1:
        results = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return sorted(results, key=lambda r: r.run_index)


@dataclass
class RetentionCurve:
    cue_level: float
    rho_real: np.ndarray
    rho_pseudo: np.ndarray
    rd: np.ndarray
    rd_se: np.ndarray
    dprime: np.ndarray
    dprime_se: np.ndarray
    dprime_samples: np.ndarray = field(repr=False)
    rd_samples: np.ndarray = field(repr=False)
    sig_flags: np.ndarray = None
    n_excluded: int = 0

    @property
    def ages(self):
        return np.arange(1, self.rho_real.size + 1)

    def fit_decay(self, max_age=200):
        return metrics.exp_regression(self.rd, max_age=max_age)


def _stack(results, attr, exp):
    if not results:
        raise IntegrityError("no run results to aggregate")
    shapes = {getattr(r, attr).shape for r in results}
    if len(shapes) != 1:
        raise IntegrityError(f"run results disagree on shape: {sorted(shapes)}")
    levels = {r.cue_levels for r in results}
    if len(levels) != 1:
        raise IntegrityError("run results disagree on cue levels")
    idx = [r.run_index for r in results]
    if len(set(idx)) != len(idx):
        raise IntegrityError("duplicate run indices")
    ordered = sorted(results, key=lambda r: r.run_index)
    data = np.stack([getattr(r, attr) for r in ordered])   # (runs, cues, window)
    n = len(ordered)
    per = exp.runs_per_sample
    if n % per:
        raise IntegrityError(f"{n} runs do not split into samples of {per}")
    return data.reshape(n // per, per, *data.shape[1:])


def aggregate(results, exp, pseudo="same"):
    """One RetentionCurve per cue level, from runs grouped into samples of
    ``exp.runs_per_sample`` consecutive run indices.

    ``pseudo="uniform"`` scores against the uniform pseudo baseline of
    structured runs instead of held-out leaves.
    """
    real = _stack(results, "real", exp)
    attr = {"same": "pseudo", "uniform": "pseudo_uniform"}[pseudo]
    if any(getattr(r, attr) is None for r in results):
        raise IntegrityError(f"runs carry no {pseudo} pseudo scores")
    fake = _stack(results, attr, exp)
    curves = []
    for ci, c in enumerate(results[0].cue_levels):
        r, f = real[:, :, ci], fake[:, :, ci]
        rd, rd_se, rd_samples = metrics.raw_difference(r, f)
        dp = metrics.d_prime(r - f)
        curves.append(RetentionCurve(
            cue_level=c,
            rho_real=r.mean(axis=(0, 1)), rho_pseudo=f.mean(axis=(0, 1)),
            rd=rd, rd_se=rd_se, dprime=dp.mean, dprime_se=dp.se,
            dprime_samples=dp.samples, rd_samples=rd_samples,
            n_excluded=dp.n_excluded))
    return curves


def compare(curve_a, curve_b, alpha=0.01, paired=False):
    """Flag ages where model A's d' is significantly above (+1) or below (-1)
    model B's; stores the flags on both curves (B's with the sign flipped)."""
    if curve_a.dprime_samples.shape != curve_b.dprime_samples.shape:
        raise IntegrityError("curves differ in sample or age counts")
    flags = metrics.significance_segments(curve_a.dprime_samples, curve_b.dprime_samples,
                                          alpha=alpha, paired=paired)
    curve_a.sig_flags = flags
    curve_b.sig_flags = -flags
    return flags

