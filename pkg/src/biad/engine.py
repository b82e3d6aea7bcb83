"""Simulated objective and biased recommendation engines.

An engine serves one item per player per round. Each recommendation is, in
order: a uniform explore pick with probability ``explore_prob``; for a
biased engine, an ad from the pool with probability ``gamma``; otherwise the
unshown item with the highest estimated rating. Players' true ratings of the
served items are fed back to the learner, which is refit every
``update_period`` rounds.
"""

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_positive_int, check_probability
from .exceptions import ConfigurationError, ExhaustionError, ParseError
from .learners import ObservedRatings

__all__ = [
    "AdStrategy",
    "EngineKind",
    "FeedbackLog",
    "RecommendationEngine",
    "feedback_for",
    "recommend_round",
    "seed_initial_feedback",
    "select_ad_pool",
    "topk_policy_frequencies",
]


class EngineKind(enum.Enum):
    OBJECTIVE = "objective"
    BIASED = "biased"

    @classmethod
    def coerce(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(
                f"unknown engine kind {value!r}; expected 'objective' or 'biased'"
            ) from None


class AdStrategy(enum.Enum):
    UNIFORM_RANDOM = "uniform"
    TOP_RANKED = "top"

    @classmethod
    def coerce(cls, value):
        if isinstance(value, cls):
            return value
        lookup = {"uniform": cls.UNIFORM_RANDOM, "a1": cls.UNIFORM_RANDOM,
                  "uniform_random": cls.UNIFORM_RANDOM,
                  "top": cls.TOP_RANKED, "a2": cls.TOP_RANKED, "top_ranked": cls.TOP_RANKED}
        try:
            return lookup[str(value).lower()]
        except KeyError:
            raise ConfigurationError(
                f"unknown ad strategy {value!r}; expected 'uniform' (A1) or 'top' (A2)"
            ) from None


def feedback_for(truth, eta, player, item):
    """True iff ``player`` finds ``item`` effective (rating at or above eta)."""
    return bool(truth.ratings[player, item] >= eta)


def seed_initial_feedback(truth, rng):
    """Power-law initial observations: Pareto(scale 3, shape 3) entries per user.

    Counts are rounded and clamped to ``[1, m]``; items are drawn uniformly
    without replacement and carry their true ratings.
    """
    n_users, m = truth.shape
    counts = np.rint(3.0 * (1.0 + rng.pareto(3.0, size=n_users))).astype(np.int64)
    counts = np.clip(counts, 1, m)
    observed = ObservedRatings(n_users, m)
    users = np.repeat(np.arange(n_users), counts)
    items = np.concatenate([rng.choice(m, size=k, replace=False) for k in counts])
    observed.add(users, items, truth.ratings[users, items])
    return observed


def select_ad_pool(truth, eta, size, rng, min_ineffective_share=0.8):
    """Draw ``size`` ad items among those ineffective for most users."""
    size = check_positive_int(size, "A")
    share = (truth.ratings < eta).mean(axis=0)
    candidates = np.flatnonzero(share >= min_ineffective_share)
    if candidates.size < size:
        raise ConfigurationError(
            f"only {candidates.size} items are ineffective for "
            f"{min_ineffective_share:.0%} of users; cannot build an ad pool of {size}"
        )
    return np.sort(rng.choice(candidates, size=size, replace=False))


@dataclass
class FeedbackLog:
    """Per-round binary feedback of the players.

    ``rating`` optionally carries the numeric true rating of each served
    item, which the average-rating baseline needs.
    """

    round: np.ndarray
    player: np.ndarray
    item: np.ndarray
    effective: np.ndarray
    rating: np.ndarray = None

    def __post_init__(self):
        self.round = np.asarray(self.round, dtype=np.int64)
        self.player = np.asarray(self.player, dtype=np.int64)
        self.item = np.asarray(self.item, dtype=np.int64)
        self.effective = np.asarray(self.effective, dtype=bool)
        if self.rating is not None:
            self.rating = np.asarray(self.rating, dtype=float)
        n = len(self.round)
        lengths = {len(self.player), len(self.item), len(self.effective)}
        if self.rating is not None:
            lengths.add(len(self.rating))
        if lengths != {n}:
            raise ConfigurationError("FeedbackLog columns must have equal length")

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            return cls.empty()
        with_rating = all(p.rating is not None for p in parts)
        return cls(
            np.concatenate([p.round for p in parts]),
            np.concatenate([p.player for p in parts]),
            np.concatenate([p.item for p in parts]),
            np.concatenate([p.effective for p in parts]),
            np.concatenate([p.rating for p in parts]) if with_rating else None,
        )

    @classmethod
    def empty(cls):
        z = np.empty(0, dtype=np.int64)
        return cls(z, z, z, np.empty(0, dtype=bool), np.empty(0))

    def __len__(self):
        return len(self.round)

    @property
    def n_rounds(self):
        return int(self.round.max()) if len(self) else 0

    def head(self, n_rounds):
        """Records of rounds ``1 .. n_rounds`` only."""
        keep = self.round <= n_rounds
        return FeedbackLog(self.round[keep], self.player[keep], self.item[keep],
                           self.effective[keep],
                           None if self.rating is None else self.rating[keep])

    def by_round(self):
        """Yield ``(t, records)`` for t = 1 .. n_rounds, in order."""
        order = np.argsort(self.round, kind="stable")
        rounds = self.round[order]
        bounds = np.searchsorted(rounds, np.arange(1, self.n_rounds + 2))
        for t in range(1, self.n_rounds + 1):
            idx = order[bounds[t - 1]:bounds[t]]
            yield t, FeedbackLog(self.round[idx], self.player[idx], self.item[idx],
                                 self.effective[idx],
                                 None if self.rating is None else self.rating[idx])

    def to_csv(self, path, with_ratings=False):
        if with_ratings and self.rating is None:
            raise ConfigurationError("log carries no ratings")
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            header = ["round", "player", "item", "effective"]
            writer.writerow(header + (["rating"] if with_ratings else []))
            for k in range(len(self)):
                row = [int(self.round[k]), int(self.player[k]), int(self.item[k]),
                       int(self.effective[k])]
                if with_ratings:
                    row.append(repr(float(self.rating[k])))
                writer.writerow(row)
        return path

    @classmethod
    def from_csv(cls, path):
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            base = ["round", "player", "item", "effective"]
            if header not in (base, base + ["rating"]):
                raise ParseError(f"unexpected header {header!r}", row=1)
            has_rating = len(header) == 5
            cols = [[] for _ in header]
            for line_no, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise ParseError(
                        f"expected {len(header)} fields, found {len(row)}", row=line_no
                    )
                try:
                    values = [int(x) for x in row[:4]]
                except ValueError:
                    raise ParseError("non-integer field", row=line_no) from None
                if values[3] not in (0, 1):
                    raise ParseError("effective must be 0 or 1", row=line_no, column=4)
                if values[0] < 1 or values[1] < 0 or values[2] < 0:
                    raise ParseError("round must be >= 1 and indices >= 0", row=line_no)
                for c, v in enumerate(values):
                    cols[c].append(v)
                if has_rating:
                    try:
                        cols[4].append(float(row[4]))
                    except ValueError:
                        raise ParseError("non-numeric rating", row=line_no, column=5) from None
        return cls(cols[0], cols[1], cols[2], cols[3], cols[4] if has_rating else None)


class RecommendationEngine:
    """Mutable simulation state of one engine serving a fixed set of players.

    Parameters
    ----------
    truth : RatingMatrix
        Ground-truth ratings; feedback is generated from it.
    eta : float
        Efficacy threshold.
    players : array of int
        User indices that receive recommendations.
    learner : estimator
        Object with ``fit(ObservedRatings)`` and ``predict(users)``.
    observed : ObservedRatings
        Initial observations; extended in place with every served item.
    rng_coins, rng_ties : numpy Generator
        Streams for per-recommendation coin flips and for breaking ties in
        the estimated ranking. Each round consumes a fixed number of draws
        so runs that differ only in ``gamma`` stay coupled.
    """

    def __init__(self, truth, eta, players, learner, observed, *, kind="objective",
                 ad_pool=(), gamma=0.0, ad_strategy="uniform", explore_prob=0.1,
                 update_period=5, bias_before_explore=False, rng_coins, rng_ties):
        self.truth = truth
        self.eta = float(eta)
        self.players = np.asarray(players, dtype=np.int64)
        self.learner = learner
        self.observed = observed
        self.kind = EngineKind.coerce(kind)
        self.ad_pool = np.asarray(sorted(set(int(a) for a in ad_pool)), dtype=np.int64)
        self.gamma = check_probability(gamma, "gamma")
        self.ad_strategy = AdStrategy.coerce(ad_strategy)
        self.explore_prob = check_probability(explore_prob, "explore_prob")
        self.update_period = check_positive_int(update_period, "update_period")
        self.bias_before_explore = bool(bias_before_explore)
        self.rng_coins = rng_coins
        self.rng_ties = rng_ties

        if self.kind is EngineKind.OBJECTIVE and (self.ad_pool.size or self.gamma):
            raise ConfigurationError("an objective engine has no ad pool and gamma = 0")
        if self.kind is EngineKind.BIASED and self.ad_pool.size < 1:
            raise ConfigurationError("a biased engine needs a nonempty ad pool")
        if self.ad_pool.size and self.ad_pool.max() >= truth.num_items:
            raise ConfigurationError("ad pool references unknown items")
        if self.players.size and self.players.max() >= truth.num_users:
            raise ConfigurationError("player index out of range")

        n, m = len(self.players), truth.num_items
        self.shown = np.zeros((n, m), dtype=bool)
        self.round = 0
        self.estimate = None
        self._tie_keys = None
        self.refit()

    def refit(self):
        """Refit the learner and redraw the keys that break rating ties."""
        self.learner.fit(self.observed)
        self.estimate = self.learner.predict(self.players)
        # random keys break ties so equally rated items get equal weight
        self._tie_keys = self.rng_ties.random(self.estimate.shape)

    def _best(self, rows, candidates):
        """Highest-estimate item per row among ``candidates`` (bool mask)."""
        est = np.where(candidates, self.estimate[rows], -np.inf)
        top = est == est.max(axis=1, keepdims=True)
        return np.argmax(np.where(top & candidates, self._tie_keys[rows], -1.0), axis=1)

    def _greedy(self, rows):
        return self._best(rows, ~self.shown[rows])

    def _explore(self, rows, draws):
        out = np.empty(len(rows), dtype=np.int64)
        for k, (r, u) in enumerate(zip(rows, draws)):
            free = np.flatnonzero(~self.shown[r])
            out[k] = free[int(u * free.size)]
        return out

    def _ads(self, rows, draws):
        out = np.full(len(rows), -1, dtype=np.int64)
        for k, (r, u) in enumerate(zip(rows, draws)):
            free = self.ad_pool[~self.shown[r, self.ad_pool]]
            if free.size == 0:
                continue
            if self.ad_strategy is AdStrategy.UNIFORM_RANDOM:
                out[k] = free[int(u * free.size)]
            else:
                mask = np.zeros((1, self.shown.shape[1]), dtype=bool)
                mask[0, free] = True
                out[k] = self._best(np.array([r]), mask)[0]
        return out

    def step(self, round_no=None):
        """Serve one round; return the round's :class:`FeedbackLog`."""
        round_no = self.round + 1 if round_no is None else int(round_no)
        if round_no != self.round + 1:
            raise ConfigurationError(f"expected round {self.round + 1}, got {round_no}")
        n, m = self.shown.shape
        exhausted = self.shown.all(axis=1)
        if exhausted.any():
            who = int(self.players[np.argmax(exhausted)])
            raise ExhaustionError(f"player {who} has been shown all {m} items")
        if round_no % self.update_period == 0:
            self.refit()

        explore_coin, bias_coin, explore_draw, ad_draw = self.rng_coins.random((4, n))
        explore = explore_coin < self.explore_prob
        ad = np.zeros(n, dtype=bool)
        if self.kind is EngineKind.BIASED:
            ad = bias_coin < self.gamma
            if self.bias_before_explore:
                explore &= ~ad
            else:
                ad &= ~explore

        items = self._greedy(np.arange(n))
        rows = np.flatnonzero(explore)
        if rows.size:
            items[rows] = self._explore(rows, explore_draw[rows])
        rows = np.flatnonzero(ad)
        if rows.size:
            picks = self._ads(rows, ad_draw[rows])
            # players who have seen every ad fall back to the objective choice
            served = picks >= 0
            items[rows[served]] = picks[served]

        self.shown[np.arange(n), items] = True
        self.round = round_no
        ratings = self.truth.ratings[self.players, items]
        fresh = ~self.observed.seen[self.players, items]
        self.observed.add(self.players[fresh], items[fresh], ratings[fresh])
        return FeedbackLog(
            np.full(n, round_no), self.players.copy(), items, ratings >= self.eta, ratings
        )

    def run(self, n_rounds):
        return FeedbackLog.concat(self.step() for _ in range(n_rounds))


def recommend_round(engine, round_no):
    """Advance ``engine`` by one round; returns the served item per player."""
    return engine.step(round_no).item


def topk_policy_frequencies(row, t, k, draws, rng):
    """Empirical probability that each item is served at round ``t``.

    Simulates ``draws`` independent users whose engine knows ``row``
    exactly and serves an item uniformly from the ``k`` best unshown items
    (``k = 1`` is the greedy policy). Ties in ``row`` are ordered by index.
    """
    row = np.asarray(row, dtype=float)
    m = row.size
    t = check_positive_int(t, "t")
    k = check_positive_int(k, "k")
    if t > m:
        raise ConfigurationError(f"t={t} exceeds the number of items {m}")
    order = np.lexsort((np.arange(m), -row))
    shown = np.zeros((draws, m), dtype=bool)
    chosen = None
    for step in range(t):
        available = min(k, m - step)
        j = np.floor(rng.random(draws) * available).astype(np.int64)
        free_rank = np.cumsum(~shown, axis=1)
        slot = np.argmax((free_rank > j[:, None]) & ~shown, axis=1)
        shown[np.arange(draws), slot] = True
        chosen = slot
    counts = np.bincount(order[chosen], minlength=m)
    return counts / draws
