"""scikit-learn style wrappers around the release mechanisms.

``fit`` only looks at the number of queries (columns) and builds whatever
depends on it; ``transform`` releases noisy answers for each row of true
answers. Row ``r`` of a call uses noise stream ``r`` of ``random_state``, so
the same input gives the same output.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .accounting import PrivacyBudget, build_schedule, get_constants
from .mechanisms import (
    Workload,
    expected_error_answer,
    gaussian_mechanism,
    high_prob_answer,
    iterative_svc,
    laplace_split_baseline,
)
from .noise import RANDOM, ZERO, NoiseSource

__all__ = [
    "IterativeCorrectionRelease",
    "HighProbabilityRelease",
    "ExpectedErrorRelease",
    "GaussianRelease",
    "LaplaceSplitRelease",
]


class _ReleaseMechanism(TransformerMixin, BaseEstimator):
    def __init__(self, epsilon=1.0, delta=2.0**-20, profile="paper", random_state=0, zero_noise=False):
        self.epsilon = epsilon
        self.delta = delta
        self.profile = profile
        self.random_state = random_state
        self.zero_noise = zero_noise

    def _release(self, q, source):
        raise NotImplementedError

    def _prepare(self, k):
        pass

    def fit(self, X, y=None):
        X = check_array(X, ensure_2d=False, dtype=float)
        self.n_features_in_ = X.shape[-1]
        self.budget_ = PrivacyBudget(self.epsilon, self.delta)
        self.constants_ = get_constants(self.profile)
        self._prepare(self.n_features_in_)
        return self

    def transform(self, X):
        check_is_fitted(self, "budget_")
        X = check_array(X, ensure_2d=False, dtype=float)
        rows = X.reshape(1, -1) if X.ndim == 1 else X
        if rows.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {rows.shape[1]} queries, fitted with {self.n_features_in_}")
        mode = ZERO if self.zero_noise else RANDOM
        seed = 0 if self.random_state is None else self.random_state
        out = np.empty_like(rows)
        self.budget_spent_ = []
        for r, q in enumerate(rows):
            res = self._release(Workload(q), NoiseSource(seed, mode, (r,)))
            out[r] = res.answers
            self.budget_spent_.append(res.budget_spent)
        return out[0] if X.ndim == 1 else out


class IterativeCorrectionRelease(_ReleaseMechanism):
    """Iterative sparse-vector correction; ``schedule_`` is fixed at fit time."""

    def _prepare(self, k):
        self.schedule_ = build_schedule(k, self.budget_, self.constants_)

    def _release(self, q, source):
        return iterative_svc(q, self.budget_, self.schedule_, source)


class HighProbabilityRelease(_ReleaseMechanism):
    def _release(self, q, source):
        return high_prob_answer(q, self.budget_, source, self.constants_)


class ExpectedErrorRelease(_ReleaseMechanism):
    def _release(self, q, source):
        return expected_error_answer(q, self.budget_, source, self.constants_)


class GaussianRelease(_ReleaseMechanism):
    def _release(self, q, source):
        return gaussian_mechanism(q, self.budget_, source)


class LaplaceSplitRelease(_ReleaseMechanism):
    def _release(self, q, source):
        return laplace_split_baseline(q, self.budget_, source)
