"""Sequential bias detector on binary feedback, plus the average-rating baseline.

After every round the detector counts, per item, how many players found it
ineffective, sums the ``t`` largest counts and compares that statistic with
the adaptive threshold of round ``t``. It stops at the first round where the
statistic reaches the threshold, or gives up after ``q_max`` rounds.
"""

import csv
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, clone

from ._validation import check_is_fitted, check_positive_int, check_positive_real
from .exceptions import ConfigurationError, IncompleteLogError, ProtocolError
from .thresholds import ThresholdVariant, approx_p, build_threshold

__all__ = [
    "AverageRatingTest",
    "BiadResult",
    "BiasDetector",
    "DetectorParams",
    "DetectorState",
    "Verdict",
    "basic_average_test",
    "ingest_round",
    "run_biad",
    "top_k_sum",
    "write_trace_csv",
]


def top_k_sum(counts, k):
    """Sum of the ``k`` largest entries of ``counts``."""
    counts = np.asarray(counts)
    if not 0 <= k <= counts.size:
        raise ConfigurationError(f"k={k} must lie in [0, {counts.size}]")
    if k == 0:
        return 0
    if k == counts.size:
        return int(counts.sum())
    return int(np.partition(counts, counts.size - k)[counts.size - k:].sum())


@dataclass(frozen=True)
class Verdict:
    biased: bool
    round: int

    def __str__(self):
        if self.biased:
            return f"BIASED round={self.round}"
        return f"NOT_BIASED after={self.round}"


@dataclass(frozen=True)
class DetectorParams:
    """Detector configuration.

    ``p_function``, when given, replaces the scalar effective-item
    approximation: it is called as ``p_function(t, a_hat)`` and must return
    the expected-hit bound for that round.
    """

    q_max: int
    f_tilde: float
    n_players: int
    m: int
    c: float = 0.5
    variant: ThresholdVariant = ThresholdVariant.FULL_T
    p_function: object = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "variant", ThresholdVariant.coerce(self.variant))
        check_positive_int(self.q_max, "q_max")
        check_positive_int(self.n_players, "n_players")
        check_positive_int(self.m, "m", minimum=2)
        check_positive_real(self.c, "c")
        if self.p_function is None:
            check_positive_real(self.f_tilde, "f_tilde")
            if self.q_max > self.f_tilde:
                raise ConfigurationError(
                    f"q_max ({self.q_max}) must not exceed f_tilde ({self.f_tilde})"
                )
        if self.q_max > self.m:
            raise ConfigurationError(f"q_max ({self.q_max}) exceeds m ({self.m})")

    def p(self, t):
        if self.p_function is not None:
            return float(self.p_function(t, t))
        return approx_p(t, t, self.n_players, self.f_tilde)

    def threshold(self, t):
        if self.p_function is not None:
            return build_threshold(t, t, self.p(t), self.m, self.c, self.variant).threshold
        return _cached_threshold(t, self.n_players, float(self.f_tilde), self.m,
                                 float(self.c), self.variant)


@functools.lru_cache(maxsize=65536)
def _cached_threshold(t, n, f_tilde, m, c, variant):
    p = approx_p(t, t, n, f_tilde)
    return build_threshold(t, t, p, m, c, variant).threshold


@dataclass
class DetectorState:
    """Running counts of one detector. Only :func:`ingest_round` mutates it."""

    m: int
    b_counts: np.ndarray = None
    round: int = 0
    s_trace: list = field(default_factory=list)
    t_trace: list = field(default_factory=list)
    verdict: Verdict = None
    _pairs: set = field(default_factory=set, repr=False)
    _players: set = field(default_factory=set, repr=False)

    def __post_init__(self):
        if self.b_counts is None:
            self.b_counts = np.zeros(self.m, dtype=np.int64)


def ingest_round(state, records, params):
    """Fold one round of feedback into ``state``.

    Returns ``(state, verdict)``; ``verdict`` is None while the test is
    still running.
    """
    if state.verdict is not None:
        raise ProtocolError(f"detector already stopped with {state.verdict}")
    t = state.round + 1
    if len(records) and np.any(records.round != t):
        bad = int(records.round[records.round != t][0])
        raise ProtocolError(f"record for round {bad} delivered while expecting round {t}")
    players = records.player.tolist()
    if len(set(players)) != len(players):
        raise ProtocolError(f"a player has more than one record in round {t}")
    items = records.item
    if len(items) and (items.min() < 0 or items.max() >= params.m):
        raise ProtocolError(f"item index outside [0, {params.m}) in round {t}")
    keys = (records.player * params.m + items).tolist()
    fresh = set(keys)
    if not fresh.isdisjoint(state._pairs):
        dup = next(k for k in keys if k in state._pairs)
        raise ProtocolError(
            f"duplicate recommendation of item {dup % params.m} to player "
            f"{dup // params.m} in round {t}"
        )
    state._players.update(players)
    if len(state._players) > params.n_players:
        raise ProtocolError(
            f"log has {len(state._players)} players but n_players={params.n_players}"
        )
    state._pairs |= fresh

    np.add.at(state.b_counts, items[~records.effective], 1)
    state.round = t
    s = top_k_sum(state.b_counts, min(t, params.m))
    threshold = params.threshold(t)
    state.s_trace.append(s)
    state.t_trace.append(threshold)
    if s >= threshold:
        state.verdict = Verdict(True, t)
    elif t >= params.q_max:
        state.verdict = Verdict(False, params.q_max)
    return state, state.verdict


@dataclass
class BiadResult:
    verdict: Verdict
    s_trace: list
    t_trace: list
    b_counts: np.ndarray

    @property
    def detection_round(self):
        return self.verdict.round if self.verdict.biased else None


def run_biad(log, params):
    """Run the sequential test over a complete log."""
    state = DetectorState(params.m)
    rounds = dict(log.by_round())
    empty = log.head(0)
    for t in range(1, params.q_max + 1):
        if t > log.n_rounds:
            raise IncompleteLogError(
                f"log ends after round {log.n_rounds} without a verdict "
                f"(q_max={params.q_max})"
            )
        _, verdict = ingest_round(state, rounds.get(t, empty), params)
        if verdict is not None:
            break
    return BiadResult(state.verdict, list(state.s_trace), list(state.t_trace),
                      state.b_counts.copy())


def write_trace_csv(result, path):
    """Write ``round,S,T,triggered`` rows for each evaluated round."""
    path = Path(path)
    last = len(result.s_trace)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "S", "T", "triggered"])
        for k, (s, thr) in enumerate(zip(result.s_trace, result.t_trace), start=1):
            hit = int(result.verdict.biased and k == last)
            writer.writerow([k, int(s), repr(float(thr)), hit])
    return path


def basic_average_test(ratings, tau):
    """Declare bias when the mean rating of served items falls below ``tau``."""
    ratings = np.asarray(getattr(ratings, "rating", ratings), dtype=float)
    if ratings.size == 0:
        raise ConfigurationError("basic average test needs at least one rating")
    mean = float(ratings.mean())
    return Verdict(mean < tau, 0), mean


class BiasDetector(BaseEstimator):
    """Sequential bias detector with an estimator-style interface.

    ``fit`` consumes a whole :class:`~biad.engine.FeedbackLog`;
    ``partial_fit`` consumes one round at a time. ``f_tilde`` is the
    estimated mean number of effective items per user.

    Attributes set by fitting: ``verdict_``, ``detection_round_``,
    ``s_trace_``, ``t_trace_``, ``b_counts_``.
    """

    def __init__(self, q_max=40, f_tilde=None, n_players=None, m=None, c=0.5,
                 variant="full"):
        self.q_max = q_max
        self.f_tilde = f_tilde
        self.n_players = n_players
        self.m = m
        self.c = c
        self.variant = variant

    def _params(self, log=None):
        n = self.n_players
        if n is None:
            if log is None:
                raise ConfigurationError("n_players must be set for streaming use")
            n = int(np.unique(log.player).size)
        if self.m is None or self.f_tilde is None:
            raise ConfigurationError("m and f_tilde must be set")
        return DetectorParams(q_max=self.q_max, f_tilde=self.f_tilde, n_players=n,
                              m=self.m, c=self.c, variant=self.variant)

    def _publish(self, state):
        self.s_trace_ = list(state.s_trace)
        self.t_trace_ = list(state.t_trace)
        self.b_counts_ = state.b_counts.copy()
        self.verdict_ = state.verdict
        self.detection_round_ = (state.verdict.round
                                 if state.verdict is not None and state.verdict.biased
                                 else None)

    def fit(self, log, y=None):
        params = self._params(log)
        result = run_biad(log, params)
        state = DetectorState(params.m, result.b_counts, len(result.s_trace),
                              result.s_trace, result.t_trace, result.verdict)
        self.params_ = params
        self._publish(state)
        return self

    def partial_fit(self, records, y=None):
        if not hasattr(self, "state_"):
            self.params_ = self._params()
            self.state_ = DetectorState(self.params_.m)
        ingest_round(self.state_, records, self.params_)
        self._publish(self.state_)
        return self

    def predict(self, logs):
        """1 for every log on which the detector declares bias, else 0."""
        return np.array([int(clone(self).fit(log).verdict_.biased) for log in logs])

    def result(self):
        check_is_fitted(self, "verdict_")
        return BiadResult(self.verdict_, self.s_trace_, self.t_trace_, self.b_counts_)


class AverageRatingTest(BaseEstimator):
    """Baseline: flag an engine whose served items average below ``tau``."""

    def __init__(self, tau=3.0):
        self.tau = tau

    def fit(self, log, y=None):
        tau = float(self.tau)
        if not math.isfinite(tau):
            raise ConfigurationError(f"tau must be finite, got {self.tau}")
        self.verdict_, self.mean_rating_ = basic_average_test(log, tau)
        return self

    def predict(self, logs):
        return np.array([int(clone(self).fit(log).verdict_.biased) for log in logs])
