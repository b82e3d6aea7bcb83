"""Monte-Carlo trials, error-rate estimation and parameter sweeps.

A trial simulates one engine for ``q_max`` rounds and runs the detector on
the players' feedback. Every random choice in trial ``k`` comes from streams
keyed by ``(master_seed, k, tag)``, so a trial's outcome depends only on its
configuration and index, never on scheduling or worker count.

Sweeps group work by simulation: values of detector-only parameters
(``q_max``, ``f_tilde``, ``c``, ``variant``, ``tau``) reuse one simulated log
per trial, and objective-engine trials are shared by every value of the
bias-only parameters (``gamma``, ``A``, ``ad_strategy``).
"""

import csv
import dataclasses
import functools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from ._validation import check_positive_int, check_probability
from .detector import DetectorParams, basic_average_test, run_biad
from .engine import (
    AdStrategy,
    EngineKind,
    RecommendationEngine,
    seed_initial_feedback,
    select_ad_pool,
)
from .exceptions import ConfigurationError, ExhaustionError
from .learners import make_learner
from .ratings import REFERENCE_ETA, SyntheticSpec, generate_synthetic, load_matrix
from .rng import stream
from .thresholds import ThresholdVariant

__all__ = [
    "ErrorRates",
    "SWEEP_PARAMS",
    "SweepResult",
    "TrialConfig",
    "TrialOutcome",
    "baseline_rates",
    "estimate_error_rates",
    "evaluate_configs",
    "resolve_matrix",
    "run_sweep",
    "run_trial",
    "select_tau",
    "simulate_trial",
    "tune_tau",
    "wilson_interval",
]

logger = logging.getLogger(__name__)

SWEEP_PARAMS = ("q_max", "n_players", "m", "A", "gamma", "f_tilde", "tau", "explore_prob")
_DETECTOR_ONLY = {"q_max", "f_tilde", "c", "variant", "tau"}
_BIAS_ONLY = {"gamma", "A", "ad_strategy", "bias_before_explore", "ad_ineffective_share"}

DESK_SYNTHETIC = {"m": 2000, "n_users": 500, "target_effective_mean": 150.0, "seed": 0}


@dataclass(frozen=True)
class TrialConfig:
    """Everything needed to reproduce a batch of trials.

    ``synthetic`` holds :class:`~biad.ratings.SyntheticSpec` keyword
    arguments and is ignored when ``matrix_path`` is set. ``m`` below the
    matrix width subsamples items; ``f_tilde=None`` uses the true mean
    effective count of the (subsampled) matrix.
    """

    synthetic: dict = field(default_factory=lambda: dict(DESK_SYNTHETIC))
    matrix_path: str = None
    eta: float = REFERENCE_ETA
    m: int = None
    learner: str = "mf"
    learner_params: dict = field(default_factory=dict)
    engine: str = "biased"
    ad_strategy: str = "uniform"
    A: int = 8
    gamma: float = 0.45
    explore_prob: float = 0.1
    update_period: int = 5
    bias_before_explore: bool = False
    ad_ineffective_share: float = 0.8
    n_players: int = 100
    q_max: int = 40
    variant: str = "full"
    f_tilde: float = None
    c: float = 0.5
    tau: float = 3.0
    master_seed: int = 0
    num_trials: int = 50

    def __post_init__(self):
        check_positive_int(self.n_players, "n_players")
        check_positive_int(self.q_max, "q_max")
        check_positive_int(self.A, "A")
        check_positive_int(self.update_period, "update_period")
        check_positive_int(self.num_trials, "num_trials")
        check_probability(self.gamma, "gamma")
        check_probability(self.explore_prob, "explore_prob")
        check_probability(self.ad_ineffective_share, "ad_ineffective_share")
        if self.m is not None:
            check_positive_int(self.m, "m", minimum=2)
        if isinstance(self.master_seed, bool) or int(self.master_seed) < 0:
            raise ConfigurationError(f"master_seed must be a nonnegative integer")
        EngineKind.coerce(self.engine)
        AdStrategy.coerce(self.ad_strategy)
        ThresholdVariant.coerce(self.variant)
        make_learner(self.learner)
        if self.f_tilde is not None and not self.f_tilde > 0:
            raise ConfigurationError("f_tilde must be positive")
        if not math.isfinite(float(self.eta)):
            raise ConfigurationError("eta must be finite")

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigurationError(f"unknown config key {unknown[0]!r}")
        kwargs = dict(data)
        if "synthetic" in kwargs:
            synth = dict(DESK_SYNTHETIC)
            synth.update(kwargs["synthetic"])
            kwargs["synthetic"] = synth
        try:
            return cls(**kwargs)
        except ConfigurationError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(str(exc)) from None

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def detector_params(self, matrix, f_tilde=None):
        return DetectorParams(
            q_max=self.q_max,
            f_tilde=f_tilde if f_tilde is not None else self.resolved_f_tilde(matrix),
            n_players=self.n_players, m=matrix.num_items, c=self.c, variant=self.variant,
        )

    def resolved_f_tilde(self, matrix):
        return self.f_tilde if self.f_tilde is not None else matrix.mean_effective(self.eta)


def _freeze(value):
    if isinstance(value, dict):
        return tuple(sorted((k, _freeze(v)) for k, v in value.items()))
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    return value


@functools.lru_cache(maxsize=8)
def _matrix_cached(source_key, m, master_seed):
    kind, payload = source_key
    if kind == "path":
        matrix = load_matrix(payload)
    else:
        matrix = generate_synthetic(SyntheticSpec(**dict(payload)))
    if m is not None and m < matrix.num_items:
        matrix = matrix.subsample_items(m, stream(master_seed, "matrix-subsample"))
    elif m is not None and m > matrix.num_items:
        raise ConfigurationError(f"m={m} exceeds the matrix's {matrix.num_items} items")
    return matrix


def resolve_matrix(config):
    """Ground-truth matrix of ``config`` (cached per process)."""
    if config.matrix_path is not None:
        key = ("path", str(config.matrix_path))
    else:
        key = ("synthetic", _freeze(config.synthetic))
    return _matrix_cached(key, config.m, int(config.master_seed))


def _sim_key(config, kind, rounds):
    data = config.to_dict()
    for name in _DETECTOR_ONLY:
        data.pop(name, None)
    data.pop("num_trials")
    data["engine"] = kind.value
    if kind is EngineKind.OBJECTIVE:
        for name in _BIAS_ONLY:
            data.pop(name, None)
    data["rounds"] = rounds
    return _freeze(data)


def simulate_trial(config, trial_index, kind=None, rounds=None):
    """Simulate one engine; return ``(log, matrix)``."""
    kind = EngineKind.coerce(config.engine if kind is None else kind)
    rounds = config.q_max if rounds is None else rounds
    matrix = resolve_matrix(config)
    seed = int(config.master_seed)
    if config.n_players > matrix.num_users:
        raise ConfigurationError(
            f"n_players ({config.n_players}) exceeds the {matrix.num_users} users"
        )
    observed = seed_initial_feedback(matrix, stream(seed, trial_index, "seed-feedback"))
    players = stream(seed, trial_index, "players").permutation(matrix.num_users)
    players = np.sort(players[:config.n_players])
    ad_pool, gamma = (), 0.0
    if kind is EngineKind.BIASED:
        ad_pool = select_ad_pool(matrix, config.eta, config.A,
                                 stream(seed, trial_index, "ad-pool"),
                                 config.ad_ineffective_share)
        gamma = config.gamma
    learner_seed = int(stream(seed, trial_index, "learner").integers(2 ** 32))
    learner = make_learner(config.learner, seed=learner_seed, **config.learner_params)
    if rounds > matrix.num_items:
        raise ConfigurationError(f"cannot run {rounds} rounds over {matrix.num_items} items")
    engine = RecommendationEngine(
        matrix, config.eta, players, learner, observed, kind=kind, ad_pool=ad_pool,
        gamma=gamma, ad_strategy=config.ad_strategy, explore_prob=config.explore_prob,
        update_period=config.update_period, bias_before_explore=config.bias_before_explore,
        rng_coins=stream(seed, trial_index, "coins"),
        rng_ties=stream(seed, trial_index, "ties"),
    )
    try:
        log = engine.run(rounds)
    except ExhaustionError as exc:
        raise ConfigurationError(f"item exhaustion: {exc}") from exc
    return log, matrix


@dataclass
class TrialOutcome:
    verdict: object
    s_trace: list
    t_trace: list
    mean_rating: float
    log: object = None

    @property
    def biased(self):
        return self.verdict.biased

    @property
    def detection_round(self):
        return self.verdict.round if self.verdict.biased else None


def run_trial(config, trial_index):
    """Simulate the configured engine and run the detector on its log."""
    log, matrix = simulate_trial(config, trial_index)
    result = run_biad(log, config.detector_params(matrix))
    _, mean = basic_average_test(log, config.tau)
    return TrialOutcome(result.verdict, result.s_trace, result.t_trace, mean, log)


def wilson_interval(successes, trials, confidence=0.95):
    """Wilson score interval ``(low, high)`` for a binomial proportion."""
    ci = binomtest(int(successes), int(trials)).proportion_ci(
        confidence_level=confidence, method="wilson"
    )
    return float(ci.low), float(ci.high)


def _half_width(successes, trials):
    low, high = wilson_interval(successes, trials)
    return 0.5 * (high - low)


@dataclass(frozen=True)
class _DetectorSpec:
    q_max: int
    variant: str
    f_tilde: float
    c: float


def _detector_spec(config):
    return _DetectorSpec(config.q_max, ThresholdVariant.coerce(config.variant).value,
                         config.f_tilde, config.c)


def _trial_task(args):
    config, trial_index, kind, rounds, specs = args
    log, matrix = simulate_trial(config, trial_index, kind, rounds)
    ratings = log.rating
    out = {}
    for spec in specs:
        f_tilde = spec.f_tilde if spec.f_tilde is not None else matrix.mean_effective(config.eta)
        params = DetectorParams(q_max=spec.q_max, f_tilde=f_tilde, n_players=config.n_players,
                                m=matrix.num_items, c=spec.c, variant=spec.variant)
        result = run_biad(log.head(spec.q_max), params)
        head = ratings[log.round <= spec.q_max]
        out[spec] = (result.verdict.biased, result.verdict.round, float(head.mean()),
                     tuple(result.s_trace), tuple(result.t_trace))
    return out


def _default_workers():
    return os.cpu_count() or 1


def _execute(tasks, workers):
    workers = _default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(tasks) <= 1:
        return [_trial_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_trial_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


@dataclass
class ErrorRates:
    type_i: float
    type_ii: float
    ci_i: float
    ci_ii: float
    mean_detect_round: float
    trials: int
    objective_outcomes: list = field(default_factory=list, repr=False)
    biased_outcomes: list = field(default_factory=list, repr=False)

    @property
    def total(self):
        return self.type_i + self.type_ii


def _rates(obj, bia, trials):
    false_pos = sum(1 for o in obj if o[0])
    misses = sum(1 for o in bia if not o[0])
    rounds = [o[1] for o in bia if o[0]]
    return ErrorRates(
        type_i=false_pos / trials, type_ii=misses / trials,
        ci_i=_half_width(false_pos, trials), ci_ii=_half_width(misses, trials),
        mean_detect_round=float(np.mean(rounds)) if rounds else float("nan"),
        trials=trials, objective_outcomes=list(obj), biased_outcomes=list(bia),
    )


def _baseline_rates(obj, bia, trials, tau):
    false_pos = sum(1 for o in obj if o[2] < tau)
    misses = sum(1 for o in bia if not o[2] < tau)
    return ErrorRates(
        type_i=false_pos / trials, type_ii=misses / trials,
        ci_i=_half_width(false_pos, trials), ci_ii=_half_width(misses, trials),
        mean_detect_round=float("nan"), trials=trials,
        objective_outcomes=list(obj), biased_outcomes=list(bia),
    )


def _plan(configs, num_trials):
    """Deduplicate simulations across configs; return tasks and a lookup."""
    rounds = max(c.q_max for c in configs)
    jobs = {}
    for cfg in configs:
        for kind in (EngineKind.OBJECTIVE, EngineKind.BIASED):
            for k in range(num_trials):
                key = (_sim_key(cfg, kind, rounds), k)
                entry = jobs.setdefault(key, [cfg, k, kind, rounds, []])
                spec = _detector_spec(cfg)
                if spec not in entry[4]:
                    entry[4].append(spec)
    keys = list(jobs)
    tasks = [tuple(jobs[key][:4]) + (tuple(jobs[key][4]),) for key in keys]
    return rounds, keys, tasks


def _run_configs(configs, num_trials, workers):
    rounds, keys, tasks = _plan(configs, num_trials)
    logger.info("running %d simulations over %d rounds", len(tasks), rounds)
    results = dict(zip(keys, _execute(tasks, workers)))
    per_config = []
    for cfg in configs:
        spec = _detector_spec(cfg)
        obj = [results[(_sim_key(cfg, EngineKind.OBJECTIVE, rounds), k)][spec]
               for k in range(num_trials)]
        bia = [results[(_sim_key(cfg, EngineKind.BIASED, rounds), k)][spec]
               for k in range(num_trials)]
        per_config.append((obj, bia))
    return per_config


def evaluate_configs(configs, num_trials=50, workers=1):
    """:class:`ErrorRates` for several configs, sharing simulations between them."""
    configs = list(configs)
    if not configs:
        raise ConfigurationError("no configs to evaluate")
    check_positive_int(num_trials, "num_trials", minimum=10)
    return [_rates(obj, bia, num_trials) for obj, bia in _run_configs(configs, num_trials, workers)]


def baseline_rates(rates, tau):
    """Average-rating test error rates on the trials already held by ``rates``."""
    return _baseline_rates(rates.objective_outcomes, rates.biased_outcomes, rates.trials, tau)


def estimate_error_rates(config, num_trials=None, workers=1):
    """Type I rate on objective trials and Type II rate on biased trials."""
    num_trials = config.num_trials if num_trials is None else num_trials
    check_positive_int(num_trials, "num_trials", minimum=10)
    (obj, bia), = _run_configs([config], num_trials, workers)
    return _rates(obj, bia, num_trials)


@dataclass
class SweepResult:
    param: str
    values: list
    rates: list

    HEADER = ("param", "value", "type_i", "type_ii", "ci_i", "ci_ii",
              "mean_detect_round", "trials")

    def rows(self):
        for value, r in zip(self.values, self.rates):
            yield (self.param, value, r.type_i, r.type_ii, r.ci_i, r.ci_ii,
                   r.mean_detect_round, r.trials)

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.HEADER)
            for row in self.rows():
                writer.writerow([row[0], _fmt(row[1])] + [_fmt(x) for x in row[2:]])
        return path

    def column(self, name):
        return [getattr(r, name) for r in self.rates]


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _coerce_value(param, value):
    if param in ("q_max", "n_players", "m", "A"):
        if float(value) != int(float(value)):
            raise ConfigurationError(f"{param} values must be integers, got {value!r}")
        return int(float(value))
    return float(value)


def run_sweep(config, param, values, num_trials=None, workers=1, trace_dir=None):
    """Error rates of the detector (or, for ``tau``, of the baseline) per value."""
    if param not in SWEEP_PARAMS:
        raise ConfigurationError(
            f"unknown sweep parameter {param!r}; valid: {', '.join(SWEEP_PARAMS)}"
        )
    values = [_coerce_value(param, v) for v in values]
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    num_trials = config.num_trials if num_trials is None else num_trials
    check_positive_int(num_trials, "num_trials", minimum=10)
    if param == "tau":
        (obj, bia), = _run_configs([config], num_trials, workers)
        rates = [_baseline_rates(obj, bia, num_trials, tau) for tau in values]
    else:
        configs = [config.replace(**{param: v}) for v in values]
        per_config = _run_configs(configs, num_trials, workers)
        rates = [_rates(obj, bia, num_trials) for obj, bia in per_config]
    result = SweepResult(param, values, rates)
    if trace_dir is not None:
        _dump_traces(result, Path(trace_dir))
    return result


def _dump_traces(result, directory):
    directory.mkdir(parents=True, exist_ok=True)
    for value, rates in zip(result.values, result.rates):
        for label, outcomes in (("objective", rates.objective_outcomes),
                                ("biased", rates.biased_outcomes)):
            for k, o in enumerate(outcomes):
                path = directory / f"{result.param}={_fmt(value)}_{label}_{k:04d}.csv"
                with path.open("w", newline="", encoding="utf-8") as fh:
                    writer = csv.writer(fh, lineterminator="\n")
                    writer.writerow(["round", "S", "T", "triggered"])
                    last = len(o[3])
                    for t, (s, thr) in enumerate(zip(o[3], o[4]), start=1):
                        writer.writerow([t, int(s), repr(float(thr)), int(o[0] and t == last)])


def select_tau(sweep):
    """Threshold of a ``tau`` sweep with the lowest Type I + Type II rate.

    Among equally good thresholds the largest wins, i.e. the one that
    flags an engine soonest.
    """
    totals = [r.total for r in sweep.rates]
    best = min(totals)
    return max(v for v, tot in zip(sweep.values, totals) if tot == best)


def tune_tau(config, taus, num_trials=None, workers=1):
    """Run a ``tau`` sweep and return ``(best_tau, sweep)``; see :func:`select_tau`."""
    sweep = run_sweep(config, "tau", taus, num_trials=num_trials, workers=workers)
    return select_tau(sweep), sweep
