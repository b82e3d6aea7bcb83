"""Numeric machinery behind the detector's adaptive threshold.

The threshold at round ``t`` is built in two Chernoff steps. Starting from an
upper bound ``p`` on the expected number of ineffective recommendations that
an objective engine can pile onto any ``a_hat`` items, we solve

    y * (ln y - 1) = (a_hat + c) * ln(m) / p - 1

for the multiplier ``y = p_hat / p``, then repeat with ``p_hat`` in place of
``p`` to obtain ``T / p_hat``. Each solve is a principal-branch Lambert-W
evaluation: ``y = exp(1 + W0(beta / e))``.
"""

import enum
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .exceptions import ConfigurationError, DomainError
from .ratings import item_ranks

__all__ = [
    "ThresholdChain",
    "ThresholdVariant",
    "approx_p",
    "brute_force_p_noiseless",
    "build_threshold",
    "chernoff_tail_bound",
    "exact_p_noiseless",
    "lambert_w0",
]

_BRANCH_POINT = -1.0 / math.e
_MAX_ITER = 64


def lambert_w0(z):
    """Principal branch of the Lambert-W function for real ``z >= -1/e``.

    Halley iteration, seeded with ``log1p(z)`` for nonnegative arguments and
    with the branch-point series below zero. Stops once
    ``|w * exp(w) - z| <= 1e-12 * max(1, |z|)``.
    """
    z = float(z)
    if math.isnan(z) or z < _BRANCH_POINT:
        raise DomainError(f"lambert_w0 is undefined for z={z!r} < -1/e")
    if z == 0.0:
        return 0.0
    if math.isinf(z):
        return math.inf
    if z >= 0.0:
        w = math.log1p(z)
    else:
        q = math.sqrt(max(2.0 * (math.e * z + 1.0), 0.0))
        if q == 0.0:
            return -1.0
        w = -1.0 + q - q * q / 3.0 + 11.0 / 72.0 * q ** 3
    tol = 1e-12 * max(1.0, abs(z))
    converged = False
    for _ in range(_MAX_ITER):
        ew = math.exp(w)
        f = w * ew - z
        wp1 = w + 1.0
        if f == 0.0 or wp1 == 0.0:
            break
        w_next = max(w - f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1)), -1.0)
        if w_next == w or converged:
            w = w_next
            break
        # one extra step past the residual test buys full relative precision
        converged = abs(f) <= tol
        w = w_next
    return w


def approx_p(t, a_hat, n, f_tilde):
    """Bound on expected ineffective hits assuming ``f_tilde`` effective items.

    Returns ``sum_{l=1..t} n * a_hat / (f_tilde - l + 1)``.
    """
    if t < 1:
        raise ConfigurationError(f"round t must be >= 1, got {t}")
    if not f_tilde > t - 1:
        raise ConfigurationError(
            f"round budget exceeds estimated effective items: t={t}, f_tilde={f_tilde}"
        )
    denominators = f_tilde - np.arange(1, t + 1) + 1.0
    return float(np.sum(n * a_hat / denominators))


def _per_item_contributions(t, matrix, eta, n_players):
    ratings = np.asarray(matrix.ratings[:n_players], dtype=float)
    ranks = item_ranks(ratings)
    ineffective = ratings < eta
    totals = np.zeros(ratings.shape[1])
    for l in range(1, t + 1):
        denom = ranks - l + 1
        # a probability never exceeds one, even past the bound's validity range
        term = np.where(denom > 1, 1.0 / np.maximum(denom, 1), 1.0)
        totals += np.sum(np.where(ineffective, term, 0.0), axis=0)
    return totals


def exact_p_noiseless(t, a_hat, matrix, eta, n_players):
    """Exact expected-hit bound when the engine's estimates equal the truth.

    Players are users ``0 .. n_players - 1``. Because the bound is additive
    over items, the maximizing item subset is simply the ``a_hat`` items
    with the largest individual contributions.
    """
    m = matrix.num_items
    if not 0 <= a_hat <= m:
        raise ConfigurationError(f"a_hat={a_hat} must lie in [0, {m}]")
    if not 1 <= n_players <= matrix.num_users:
        raise ConfigurationError(f"n_players={n_players} out of range")
    totals = _per_item_contributions(t, matrix, eta, n_players)
    if a_hat == 0:
        return 0.0
    return float(np.sort(totals)[-a_hat:].sum())


def brute_force_p_noiseless(t, a_hat, matrix, eta, n_players):
    """Reference evaluation of :func:`exact_p_noiseless` by subset enumeration.

    Exponential in ``a_hat``; meant for validating the fast path on tiny
    instances only.
    """
    ratings = matrix.ratings
    m = matrix.num_items
    best = 0.0
    for subset in combinations(range(m), a_hat):
        total = 0.0
        for u in range(n_players):
            row = ratings[u]
            for l in range(1, t + 1):
                for i in subset:
                    if row[i] >= eta:
                        continue
                    rank = sum(1 for x in row if x >= row[i])
                    denom = rank - l + 1
                    total += 1.0 if denom <= 1 else 1.0 / denom
        best = max(best, total)
    return best


class ThresholdVariant(enum.Enum):
    FULL_T = "full"
    PRIME_T = "prime"

    @classmethod
    def coerce(cls, value):
        if isinstance(value, cls):
            return value
        lookup = {"full": cls.FULL_T, "full_t": cls.FULL_T,
                  "prime": cls.PRIME_T, "prime_t": cls.PRIME_T}
        try:
            return lookup[str(value).lower()]
        except KeyError:
            raise ConfigurationError(
                f"unknown threshold variant {value!r}; expected 'full' or 'prime'"
            ) from None


@dataclass(frozen=True)
class ThresholdChain:
    t: int
    a_hat: int
    m: int
    c: float
    p: float
    beta: float
    p_hat: float
    beta_hat: float
    threshold: float
    variant: ThresholdVariant


def _lift(a_hat, c, m, p):
    beta = (a_hat + c) * math.log(m) / p - 1.0
    return beta, math.exp(1.0 + lambert_w0(beta / math.e)) * p


def build_threshold(t, a_hat, p, m, c=0.5, variant=ThresholdVariant.FULL_T):
    """Evaluate the two-stage threshold for round ``t``.

    ``beta`` never drops below -1 because its first term is positive, so
    both Lambert-W arguments stay on the principal branch's domain and both
    multipliers lie in ``(1, inf)``.
    """
    variant = ThresholdVariant.coerce(variant)
    if not p > 0 or not math.isfinite(p):
        raise DomainError(f"p must be finite and positive, got {p}")
    if m < 2:
        raise ConfigurationError(f"m must be >= 2, got {m}")
    if a_hat < 1:
        raise ConfigurationError(f"a_hat must be >= 1, got {a_hat}")
    if not c > 0:
        raise ConfigurationError(f"c must be positive, got {c}")
    beta, p_hat = _lift(a_hat, c, m, p)
    beta_hat, full = _lift(a_hat, c, m, p_hat)
    threshold = p_hat if variant is ThresholdVariant.PRIME_T else full
    return ThresholdChain(
        t=t, a_hat=a_hat, m=m, c=c, p=p, beta=beta, p_hat=p_hat,
        beta_hat=beta_hat, threshold=threshold, variant=variant,
    )


def chernoff_tail_bound(p, threshold):
    """Upper bound on P[sum of Bernoullis >= threshold] given total mean <= p."""
    if not p > 0:
        raise DomainError(f"p must be positive, got {p}")
    if not threshold > p:
        raise DomainError(f"threshold ({threshold}) must exceed p ({p})")
    return math.exp(-threshold * math.log(threshold / p) + threshold - p)
