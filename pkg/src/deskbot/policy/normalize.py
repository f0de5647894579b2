"""Per-dimension min/max normalization to [-1, 1]."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ..errors import EmptyDataset

CONSTANT_EPS = 1e-12


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Maps each dimension to [-1, 1] from its observed range.

    Dimensions whose range is <= CONSTANT_EPS are flagged constant and passed
    through untouched in both directions; everything else round-trips.
    """

    def __init__(self, constant_eps: float = CONSTANT_EPS):
        self.constant_eps = constant_eps

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.size == 0:
            raise EmptyDataset("cannot fit normalizer on empty data")
        flat = X.reshape(-1, X.shape[-1])
        self.min_ = flat.min(axis=0)
        self.max_ = flat.max(axis=0)
        self.constant_ = (self.max_ - self.min_) <= self.constant_eps
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        span = self.max_ - self.min_
        safe = np.where(self.constant_, 1.0, span)
        out = 2.0 * (X - self.min_) / safe - 1.0
        return np.where(self.constant_, X, out)

    def inverse_transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        span = self.max_ - self.min_
        out = (X + 1.0) * 0.5 * span + self.min_
        return np.where(self.constant_, X, out)

    def to_json(self) -> dict:
        return {
            "min": [float(v) for v in self.min_],
            "max": [float(v) for v in self.max_],
            "constant": [bool(v) for v in self.constant_],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MinMaxNormalizer":
        norm = cls()
        norm.min_ = np.asarray(obj["min"], dtype=np.float64)
        norm.max_ = np.asarray(obj["max"], dtype=np.float64)
        norm.constant_ = np.asarray(obj["constant"], dtype=bool)
        return norm
