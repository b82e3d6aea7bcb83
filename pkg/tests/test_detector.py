import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from biad.detector import (
    AverageRatingTest,
    BiasDetector,
    DetectorParams,
    DetectorState,
    Verdict,
    basic_average_test,
    ingest_round,
    run_biad,
    top_k_sum,
    write_trace_csv,
)
from biad.engine import FeedbackLog
from biad.exceptions import ConfigurationError, IncompleteLogError, ProtocolError


def make_log(rounds):
    """``rounds`` is a list of per-round lists of (player, item, effective)."""
    rows = [(t, u, i, e) for t, recs in enumerate(rounds, start=1) for u, i, e in recs]
    if not rows:
        return FeedbackLog.empty()
    r, u, i, e = zip(*rows)
    return FeedbackLog(r, u, i, e)


def random_log(rng, n, m, rounds, p_bad):
    out = []
    for u in range(n):
        items = rng.permutation(m)[:rounds]
        out.append(items)
    return make_log([[(u, int(out[u][t]), bool(rng.random() >= p_bad)) for u in range(n)]
                     for t in range(rounds)])


def test_top_k_sum_examples():
    assert top_k_sum([3, 1, 4, 1, 5], 2) == 9
    assert top_k_sum([3, 1, 4], 0) == 0
    assert top_k_sum([3, 1, 4], 3) == 8
    with pytest.raises(ConfigurationError):
        top_k_sum([1, 2], 3)


@given(st.lists(st.integers(0, 50), min_size=1, max_size=12), st.data())
def test_top_k_sum_matches_brute_force(counts, data):
    k = data.draw(st.integers(0, min(6, len(counts))))
    brute = max((sum(c) for c in combinations(counts, k)), default=0)
    assert top_k_sum(counts, k) == brute


def test_verdict_text():
    assert str(Verdict(True, 7)) == "BIASED round=7"
    assert str(Verdict(False, 40)) == "NOT_BIASED after=40"


def test_all_effective_is_not_biased():
    params = DetectorParams(q_max=5, f_tilde=20, n_players=3, m=10)
    log = make_log([[(u, t, True) for u in range(3)] for t in range(5)])
    result = run_biad(log, params)
    assert result.verdict == Verdict(False, 5)
    assert result.s_trace == [0] * 5 and all(x > 0 for x in result.t_trace)


def test_round_one_prime_example():
    n, f_tilde, m = 100, 150, 2000
    params = DetectorParams(q_max=40, f_tilde=f_tilde, n_players=n, m=m, variant="prime")
    state = DetectorState(m)
    records = make_log([[(u, 0, False) for u in range(n)]])
    state, verdict = ingest_round(state, records, params)
    assert state.s_trace == [100]
    # independent evaluation of the first lifting step
    p = n / f_tilde
    beta = 1.5 * math.log(m) / p - 1
    y = brentq(lambda y: y * (math.log(y) - 1) - beta, 1.0, 1e3, xtol=1e-14)
    assert state.t_trace[0] == pytest.approx(y * p, rel=1e-9)
    assert y * p < 100
    assert verdict == Verdict(True, 1)


def straddling_log(n, first, k):
    # round 1: ``first`` players flag item 3; round 2: ``k`` players flag item 0
    round1 = [(u, 3, False) if u < first else (u, 2, True) for u in range(n)]
    round2 = [(u, 0, False) if u < k else (u, 1, True) for u in range(n)]
    return make_log([round1, round2])


def test_threshold_straddling_two_round_log():
    n, m = 60, 5
    params = DetectorParams(q_max=2, f_tilde=10.0, n_players=n, m=m)
    t1, t2 = params.threshold(1), params.threshold(2)
    first = math.floor(t1)
    assert first < t1
    k = math.ceil(t2) - first
    assert 0 < k <= n and math.ceil(t2) != t2
    hit = run_biad(straddling_log(n, first, k), params)
    miss = run_biad(straddling_log(n, first, k - 1), params)
    assert hit.s_trace == [first, first + k] and hit.verdict == Verdict(True, 2)
    assert miss.s_trace == [first, first + k - 1] and miss.verdict == Verdict(False, 2)


def test_protocol_errors():
    params = DetectorParams(q_max=3, f_tilde=10, n_players=2, m=5)
    state = DetectorState(5)
    ingest_round(state, make_log([[(0, 1, False), (1, 1, True)]]), params)
    dup = make_log([[], [(0, 1, False)]]).head(2)
    with pytest.raises(ProtocolError, match="duplicate"):
        ingest_round(state, dup, params)
    with pytest.raises(ProtocolError, match="round"):
        ingest_round(DetectorState(5), make_log([[], [(0, 1, False)]]), params)
    with pytest.raises(ProtocolError):
        ingest_round(DetectorState(5), make_log([[(0, 1, False), (0, 2, False)]]), params)
    with pytest.raises(ProtocolError):
        ingest_round(DetectorState(5), make_log([[(0, 9, False)]]), params)
    with pytest.raises(ProtocolError):
        ingest_round(DetectorState(5), make_log([[(0, 1, False), (1, 1, False),
                                                  (2, 1, False)]]), params)


def test_incomplete_log():
    params = DetectorParams(q_max=5, f_tilde=10, n_players=2, m=5)
    with pytest.raises(IncompleteLogError):
        run_biad(make_log([[(0, 1, True)]]), params)


def test_params_validation():
    with pytest.raises(ConfigurationError):
        DetectorParams(q_max=41, f_tilde=40, n_players=10, m=100)
    with pytest.raises(ConfigurationError):
        DetectorParams(q_max=10, f_tilde=40, n_players=10, m=5)
    with pytest.raises(ConfigurationError):
        DetectorParams(q_max=10, f_tilde=40, n_players=10, m=100, variant="x")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 1.0))
def test_trace_invariants_and_replay(seed, p_bad):
    rng = np.random.default_rng(seed)
    n, m, q = 8, 12, 6
    log = random_log(rng, n, m, q, p_bad)
    full = DetectorParams(q_max=q, f_tilde=10, n_players=n, m=m)
    prime = DetectorParams(q_max=q, f_tilde=10, n_players=n, m=m, variant="prime")
    a, b = run_biad(log, full), run_biad(log, full)
    assert a.verdict == b.verdict and a.s_trace == b.s_trace and a.t_trace == b.t_trace
    assert all(x <= y for x, y in zip(a.s_trace, a.s_trace[1:]))
    assert a.b_counts.sum() <= n * len(a.s_trace)
    p = run_biad(log, prime)
    for tf, tp in zip(a.t_trace, p.t_trace):
        assert tf >= tp
    if a.verdict.biased:
        assert p.verdict.biased and p.verdict.round <= a.verdict.round

    # streaming equals batch
    state = DetectorState(m)
    for _, records in log.by_round():
        _, verdict = ingest_round(state, records, full)
        if verdict is not None:
            break
    assert state.verdict == a.verdict and state.s_trace == a.s_trace


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_overestimating_f_tilde_never_triggers_earlier(seed):
    rng = np.random.default_rng(seed)
    log = random_log(rng, 10, 10, 6, 0.9)
    rounds = []
    for f in (6.0, 9.0, 15.0, 40.0):
        v = run_biad(log, DetectorParams(q_max=6, f_tilde=f, n_players=10, m=10)).verdict
        rounds.append(v.round if v.biased else math.inf)
    assert all(x <= y for x, y in zip(rounds, rounds[1:]))


def test_threshold_with_custom_p_function():
    params = DetectorParams(q_max=3, f_tilde=None, n_players=4, m=10,
                            p_function=lambda t, a: 0.5 * t)
    assert params.p(2) == 1.0
    assert params.threshold(2) > 1.0


def test_basic_average_test():
    assert basic_average_test([5, 6, 7], 3) == (Verdict(False, 0), 6.0)
    assert basic_average_test([1, 2, 3], 3)[0].biased
    with pytest.raises(ConfigurationError):
        basic_average_test([], 3)
    log = FeedbackLog([1, 1], [0, 1], [0, 0], [True, False], [2.0, 3.0])
    assert AverageRatingTest(tau=3).fit(log).verdict_.biased


def test_estimator_matches_function(tmp_path):
    rng = np.random.default_rng(1)
    log = random_log(rng, 6, 10, 5, 0.8)
    det = BiasDetector(q_max=5, f_tilde=8, n_players=6, m=10).fit(log)
    ref = run_biad(log, DetectorParams(q_max=5, f_tilde=8, n_players=6, m=10))
    assert det.verdict_ == ref.verdict and det.s_trace_ == ref.s_trace
    stream = BiasDetector(q_max=5, f_tilde=8, n_players=6, m=10)
    for _, records in log.by_round():
        stream.partial_fit(records)
        if stream.verdict_ is not None:
            break
    assert stream.verdict_ == ref.verdict
    assert det.predict([log, log]).tolist() == [int(ref.verdict.biased)] * 2
    path = write_trace_csv(det.result(), tmp_path / "trace.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "round,S,T,triggered"
    assert len(lines) == 1 + len(ref.s_trace)
