"""Ground-truth rating matrices, effective-item counting and matrix I/O."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import (
    check_positive_int,
    check_positive_real,
    check_ratings_array,
)
from .exceptions import ConfigurationError, ParseError
from .rng import stream

__all__ = [
    "REFERENCE_ETA",
    "RatingMatrix",
    "SyntheticSpec",
    "count_at_least",
    "effective_count",
    "eta_for_mean_effective",
    "generate_synthetic",
    "item_ranks",
    "load_matrix",
    "save_matrix",
]

#: Efficacy threshold the synthetic generator calibrates against.
REFERENCE_ETA = 8.0

RATING_MIN = 0.0
RATING_MAX = 10.0


class RatingMatrix:
    """Dense user x item ratings on the closed interval [0, 10].

    The underlying array is copied on construction and marked read-only, so
    instances can be shared freely between workers.
    """

    __slots__ = ("_ratings",)

    def __init__(self, ratings):
        arr = check_ratings_array(ratings)
        arr.setflags(write=False)
        self._ratings = arr

    @property
    def ratings(self):
        return self._ratings

    @property
    def num_users(self):
        return self._ratings.shape[0]

    @property
    def num_items(self):
        return self._ratings.shape[1]

    @property
    def shape(self):
        return self._ratings.shape

    def row(self, user):
        if not 0 <= user < self.num_users:
            raise IndexError(f"user {user} out of range [0, {self.num_users})")
        return self._ratings[user]

    def effective_counts(self, eta):
        """Number of effective items per user at threshold ``eta``."""
        return np.count_nonzero(self._ratings >= eta, axis=1)

    def mean_effective(self, eta):
        return float(self.effective_counts(eta).mean())

    def subsample_items(self, m, rng):
        """Return a new matrix on ``m`` items drawn without replacement."""
        m = check_positive_int(m, "m")
        if m > self.num_items:
            raise ConfigurationError(
                f"cannot subsample {m} items from a matrix with {self.num_items}"
            )
        cols = np.sort(rng.choice(self.num_items, size=m, replace=False))
        return RatingMatrix(self._ratings[:, cols])

    def __eq__(self, other):
        if not isinstance(other, RatingMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(
            self._ratings, other._ratings
        )

    def __hash__(self):
        return hash((self.shape, self._ratings.tobytes()))

    def __repr__(self):
        return f"RatingMatrix(num_users={self.num_users}, num_items={self.num_items})"


def count_at_least(r, row):
    """Number of entries of ``row`` that are >= ``r``."""
    row = np.asarray(row, dtype=float)
    if row.size == 0:
        raise ConfigurationError("row must be nonempty")
    if not np.isfinite(r):
        raise ConfigurationError(f"r must be finite, got {r}")
    return int(np.count_nonzero(row >= r))


def effective_count(matrix, user, eta):
    return count_at_least(eta, matrix.row(user))


def item_ranks(ratings):
    """Rank of every entry within its row, ties counted inclusively.

    ``ranks[u, i] == count_at_least(ratings[u, i], ratings[u])``, so the best
    item has rank 1 and tied items share the larger rank.
    """
    ratings = np.atleast_2d(np.asarray(ratings, dtype=float))
    m = ratings.shape[1]
    ordered = np.sort(ratings, axis=1)
    ranks = np.empty(ratings.shape, dtype=np.int64)
    for u in range(ratings.shape[0]):
        ranks[u] = m - np.searchsorted(ordered[u], ratings[u], side="left")
    return ranks


def eta_for_mean_effective(matrix, target):
    """Smallest threshold whose mean effective count does not exceed ``target``."""
    target = check_positive_real(target, "target")
    values = np.unique(matrix.ratings)
    counts = np.array([matrix.mean_effective(v) for v in values])
    ok = np.nonzero(counts <= target)[0]
    if ok.size == 0:
        return float(np.nextafter(values[-1], np.inf))
    return float(values[ok[0]])


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic ground-truth generator.

    Scores mix a shared item-quality term with a low-rank user taste term and
    idiosyncratic noise of standard deviation ``rating_noise_spread``. Each
    user receives a Binomial(m, target_effective_mean / m) number of
    effective items: those with the highest scores, mapped to ratings at or
    above :data:`REFERENCE_ETA`.
    """

    m: int
    n_users: int
    target_effective_mean: float
    rating_noise_spread: float = 0.3
    seed: int = 0
    taste_rank: int = 5
    quality_weight: float = 1.0
    taste_weight: float = 0.6

    def validate(self):
        check_positive_int(self.m, "m")
        check_positive_int(self.n_users, "n_users")
        check_positive_int(self.taste_rank, "taste_rank")
        check_positive_real(self.target_effective_mean, "target_effective_mean")
        check_positive_real(self.rating_noise_spread, "rating_noise_spread", strict=False)
        check_positive_real(self.quality_weight, "quality_weight", strict=False)
        check_positive_real(self.taste_weight, "taste_weight", strict=False)
        if isinstance(self.seed, bool) or int(self.seed) != self.seed or self.seed < 0:
            raise ConfigurationError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if self.target_effective_mean >= self.m:
            raise ConfigurationError(
                f"target_effective_mean ({self.target_effective_mean}) must be "
                f"smaller than m ({self.m})"
            )
        return self


def _scores_to_ratings(scores, k_eff, eta):
    n_users, m = scores.shape
    ordered = -np.sort(-scores, axis=1)
    idx = np.arange(n_users)
    # cut sits halfway between the k-th and (k+1)-th best scores
    cut = 0.5 * (ordered[idx, np.clip(k_eff - 1, 0, m - 1)]
                 + ordered[idx, np.clip(k_eff, 0, m - 1)])
    cut = np.where(k_eff <= 0, ordered[:, 0] + 1.0, cut)
    cut = np.where(k_eff >= m, ordered[:, -1] - 1.0, cut)

    gap = scores - cut[:, None]
    spread = scores.std() or 1.0
    above = eta + (RATING_MAX - eta) * -np.expm1(-gap / (0.5 * spread))
    below = eta * np.exp(gap / spread)
    # exp() may round up to exactly eta for tiny negative gaps
    below = np.minimum(below, np.nextafter(eta, -np.inf))
    return np.where(gap > 0, above, below)


def generate_synthetic(spec):
    """Draw a ground-truth matrix from ``spec``; deterministic in ``spec.seed``."""
    spec.validate()
    rng = stream(int(spec.seed), "synthetic-ratings")
    m, n = spec.m, spec.n_users
    quality = rng.standard_normal(m)
    item_taste = rng.standard_normal((m, spec.taste_rank))
    user_taste = rng.standard_normal((n, spec.taste_rank)) / np.sqrt(spec.taste_rank)
    scores = (
        spec.quality_weight * quality[None, :]
        + spec.taste_weight * user_taste @ item_taste.T
        + spec.rating_noise_spread * rng.standard_normal((n, m))
    )
    k_eff = rng.binomial(m, spec.target_effective_mean / m, size=n)
    return RatingMatrix(_scores_to_ratings(scores, k_eff, REFERENCE_ETA))


def save_matrix(matrix, path):
    """Write ``matrix`` as dense CSV: a ``users,items`` count line, then rows."""
    path = Path(path)
    lines = [f"{matrix.num_users},{matrix.num_items}"]
    for row in matrix.ratings:
        lines.append(",".join(repr(float(x)) for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_matrix(path):
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", row=1)
    header = lines[0].split(",")
    try:
        n_users, n_items = (int(x) for x in header)
    except ValueError:
        raise ParseError(
            f"header must be 'users,items' counts, got {lines[0]!r}", row=1
        ) from None
    if n_users < 1 or n_items < 1:
        raise ParseError("header counts must be positive", row=1)
    body = lines[1:]
    if len(body) != n_users:
        raise ParseError(
            f"expected {n_users} rating rows, found {len(body)}", row=len(lines) + 1
        )
    out = np.empty((n_users, n_items))
    for u, line in enumerate(body):
        file_row = u + 2
        cells = line.split(",")
        if len(cells) != n_items:
            raise ParseError(
                f"expected {n_items} values, found {len(cells)}", row=file_row
            )
        for i, cell in enumerate(cells):
            try:
                value = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r}", row=file_row, column=i + 1) from None
            if not RATING_MIN <= value <= RATING_MAX:
                raise ParseError(
                    f"value {cell} outside [0, 10]", row=file_row, column=i + 1
                )
            out[u, i] = value
    return RatingMatrix(out)
