"""Preference learners the simulated engines refit between rounds.

Both learners follow the scikit-learn estimator protocol: hyperparameters go
to ``__init__``, ``fit`` consumes an :class:`ObservedRatings` table, and
``predict`` returns a dense block of estimated ratings for the requested
users, clipped to the rating scale.
"""

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator

from ._validation import check_is_fitted, check_positive_int, check_positive_real
from .exceptions import ConfigurationError
from .rng import stream

__all__ = ["MatrixFactorization", "ObservedRatings", "UserKNNPearson", "make_learner"]

_FALLBACK_MEAN = 5.0


class ObservedRatings:
    """Sparse (user, item, rating) entries an engine has seen so far.

    Each (user, item) pair may be recorded once; re-adding a pair raises.
    """

    def __init__(self, n_users, n_items):
        self.n_users = check_positive_int(n_users, "n_users")
        self.n_items = check_positive_int(n_items, "n_items")
        self._users = []
        self._items = []
        self._ratings = []
        self._seen = np.zeros((n_users, n_items), dtype=bool)

    def __len__(self):
        return int(sum(len(chunk) for chunk in self._users))

    def add(self, users, items, ratings):
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        ratings = np.atleast_1d(np.asarray(ratings, dtype=float))
        if not users.shape == items.shape == ratings.shape:
            raise ConfigurationError("users, items and ratings must align")
        if users.size == 0:
            return
        if users.min() < 0 or users.max() >= self.n_users:
            raise IndexError("user index out of range")
        if items.min() < 0 or items.max() >= self.n_items:
            raise IndexError("item index out of range")
        flat = users * self.n_items + items
        if np.unique(flat).size != flat.size or self._seen[users, items].any():
            raise ConfigurationError("duplicate (user, item) observation")
        self._seen[users, items] = True
        self._users.append(users)
        self._items.append(items)
        self._ratings.append(ratings)

    def contains(self, user, item):
        return bool(self._seen[user, item])

    @property
    def seen(self):
        return self._seen

    def arrays(self):
        if not self._users:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty.copy(), np.empty(0)
        return (np.concatenate(self._users), np.concatenate(self._items),
                np.concatenate(self._ratings))

    def counts_per_user(self):
        return self._seen.sum(axis=1)

    def to_csr(self, values=None):
        users, items, ratings = self.arrays()
        data = ratings if values is None else values
        return sp.csr_matrix((data, (users, items)), shape=(self.n_users, self.n_items))


def _clip(estimate):
    return np.clip(estimate, 0.0, 10.0)


class MatrixFactorization(BaseEstimator):
    """Bias-augmented matrix factorization trained by alternating least squares.

    Models ``r_ui ~ mu + b_u + c_i + p_u . q_i`` and alternates exact ridge
    solves for the user block ``[b_u, p_u]`` and the item block
    ``[c_i, q_i]``, so the regularized loss never increases between sweeps.
    """

    def __init__(self, rank=5, epochs=10, reg=1.0, seed=0, warm_start=False):
        self.rank = rank
        self.epochs = epochs
        self.reg = reg
        self.seed = seed
        self.warm_start = warm_start

    def _solve_block(self, rows, cols, target, other, n_rows, reg):
        # rows index the block being solved, cols index the fixed side
        k1 = other.shape[1]
        x = other[cols]
        outer = (x[:, :, None] * x[:, None, :]).reshape(len(cols), k1 * k1)
        sel = sp.csr_matrix(
            (np.ones(len(rows)), (rows, np.arange(len(rows)))), shape=(n_rows, len(rows))
        )
        gram = np.asarray(sel @ outer).reshape(n_rows, k1, k1)
        rhs = np.asarray(sel @ (x * target[:, None]))
        # rows without observations solve to zero under the ridge penalty
        live = np.unique(rows)
        out = np.zeros((n_rows, k1))
        out[live] = np.linalg.solve(gram[live] + reg * np.eye(k1), rhs[live, :, None])[..., 0]
        return out

    def _loss(self, users, items, ratings):
        resid = ratings - self._raw(users, items)
        penalty = (np.sum(self.user_bias_ ** 2) + np.sum(self.item_bias_ ** 2)
                   + np.sum(self.user_factors_ ** 2) + np.sum(self.item_factors_ ** 2))
        return float(resid @ resid + self.reg * penalty), float(np.sqrt(np.mean(resid ** 2)))

    def _raw(self, users, items):
        return (self.global_mean_ + self.user_bias_[users] + self.item_bias_[items]
                + np.einsum("ij,ij->i", self.user_factors_[users], self.item_factors_[items]))

    def fit(self, observed):
        rank = check_positive_int(self.rank, "rank")
        epochs = check_positive_int(self.epochs, "epochs", minimum=0)
        reg = check_positive_real(self.reg, "reg")
        users, items, ratings = observed.arrays()
        n_users, n_items = observed.n_users, observed.n_items
        rng = stream(int(self.seed), "als-init")

        warm = (self.warm_start and getattr(self, "item_factors_", None) is not None
                and self.item_factors_.shape == (n_items, rank)
                and self.user_factors_.shape[0] == n_users)
        self.global_mean_ = float(ratings.mean()) if ratings.size else _FALLBACK_MEAN
        if not warm:
            self.user_bias_ = np.zeros(n_users)
            self.item_bias_ = np.zeros(n_items)
            self.user_factors_ = np.zeros((n_users, rank))
            self.item_factors_ = rng.normal(0.0, 0.1, size=(n_items, rank))
        self.loss_history_ = []
        self.rmse_history_ = []
        if ratings.size == 0:
            self.item_factors_[:] = 0.0
            return self

        centered = ratings - self.global_mean_
        for _ in range(epochs):
            item_side = np.hstack([np.ones((n_items, 1)), self.item_factors_])
            theta = self._solve_block(users, items, centered - self.item_bias_[items],
                                      item_side, n_users, reg)
            self.user_bias_, self.user_factors_ = theta[:, 0], theta[:, 1:]

            user_side = np.hstack([np.ones((n_users, 1)), self.user_factors_])
            theta = self._solve_block(items, users, centered - self.user_bias_[users],
                                      user_side, n_items, reg)
            self.item_bias_, self.item_factors_ = theta[:, 0], theta[:, 1:]

            loss, rmse = self._loss(users, items, ratings)
            self.loss_history_.append(loss)
            self.rmse_history_.append(rmse)
        return self

    def predict(self, users=None):
        check_is_fitted(self, "item_factors_")
        if users is None:
            users = np.arange(len(self.user_bias_))
        users = np.asarray(users, dtype=np.int64)
        est = (self.global_mean_ + self.user_bias_[users, None] + self.item_bias_[None, :]
               + self.user_factors_[users] @ self.item_factors_.T)
        return _clip(est)


class UserKNNPearson(BaseEstimator):
    """User-based collaborative filtering with Pearson similarity.

    Similarity is the Pearson correlation over co-rated items; pairs with
    fewer than ``min_overlap`` co-rated items or a constant vector on the
    overlap get similarity zero. Each user keeps the ``neighbors`` most
    similar other users by absolute similarity, and predicts

        mean_u + sum_v sim(u, v) (r_vi - mean_v) / sum_v |sim(u, v)|

    over those neighbours who rated item i. Without any such neighbour the
    prediction falls back to the user's mean rating, then the global mean.
    """

    def __init__(self, neighbors=30, min_overlap=2):
        self.neighbors = neighbors
        self.min_overlap = min_overlap

    def fit(self, observed):
        check_positive_int(self.neighbors, "neighbors")
        check_positive_int(self.min_overlap, "min_overlap")
        users, items, ratings = observed.arrays()
        counts = np.bincount(users, minlength=observed.n_users)
        sums = np.bincount(users, weights=ratings, minlength=observed.n_users)
        self.global_mean_ = float(ratings.mean()) if ratings.size else _FALLBACK_MEAN
        self.user_mean_ = np.where(counts > 0, sums / np.maximum(counts, 1), self.global_mean_)
        self.ratings_ = observed.to_csr()
        self.mask_ = observed.to_csr(np.ones(len(ratings)))
        self.squares_ = observed.to_csr(ratings ** 2)
        self.deviations_ = observed.to_csr(ratings - self.user_mean_[users])
        return self

    def similarity(self, users):
        """Pearson similarities of ``users`` (rows) against every user."""
        check_is_fitted(self, "ratings_")
        users = np.asarray(users, dtype=np.int64)
        r, msk, sq = self.ratings_, self.mask_, self.squares_
        rq, mq, sqq = r[users], msk[users], sq[users]

        def dense(a, b):
            return (a @ b.T).toarray()

        n = dense(mq, msk)
        su, sv = dense(rq, msk), dense(mq, r)
        suu, svv, suv = dense(sqq, msk), dense(mq, sq), dense(rq, r)
        with np.errstate(divide="ignore", invalid="ignore"):
            cov = suv - su * sv / n
            var_u = suu - su * su / n
            var_v = svv - sv * sv / n
            ok = ((n >= self.min_overlap) & (var_u > 1e-12 * np.maximum(suu, 1.0))
                  & (var_v > 1e-12 * np.maximum(svv, 1.0)))
            sim = np.where(ok, cov / np.sqrt(np.where(ok, var_u * var_v, 1.0)), 0.0)
        sim[np.arange(len(users)), users] = 0.0
        return np.clip(sim, -1.0, 1.0)

    def predict(self, users=None):
        check_is_fitted(self, "ratings_")
        if users is None:
            users = np.arange(self.ratings_.shape[0])
        users = np.asarray(users, dtype=np.int64)
        sim = self.similarity(users)
        k = min(self.neighbors, sim.shape[1])
        if k < sim.shape[1]:
            # stable ordering keeps neighbour choice deterministic under ties
            order = np.argsort(-np.abs(sim), axis=1, kind="stable")[:, k:]
            np.put_along_axis(sim, order, 0.0, axis=1)
        weights = sp.csr_matrix(sim)
        num = (weights @ self.deviations_).toarray()
        den = (abs(weights) @ self.mask_).toarray()
        base = self.user_mean_[users][:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            est = np.where(den > 0, base + num / np.where(den > 0, den, 1.0), base)
        return _clip(est)


def make_learner(kind, seed=0, **params):
    """Build a learner from its short name: ``"mf"`` (L1) or ``"user_cf"`` (L2).

    Engines refit the factorization every few rounds, so the simulation
    default warm-starts it and runs fewer sweeps per refit.
    """
    key = str(kind).lower()
    if key in ("mf", "l1", "matrix_factorization"):
        params = {"epochs": 4, "warm_start": True, **params}
        return MatrixFactorization(seed=seed, **params)
    if key in ("user_cf", "l2", "user_cf_pearson", "cf"):
        return UserKNNPearson(**params)
    raise ConfigurationError(f"unknown learner {kind!r}; expected 'mf' or 'user_cf'")
