"""Permutation-invariant pooling and its reductions to sum pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .pointcloud import PointCloud

POOL_KINDS = ("max", "mean", "median", "sum")


@dataclass(frozen=True)
class PooledFeature:
    values: np.ndarray
    pooling_kind: str

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self) -> int:
        return len(self.values)


def _matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise DataError(f"pooling needs a non-empty N x K matrix, got shape {X.shape}")
    return X


def pool_values(X, kind: str) -> np.ndarray:
    """Column-wise reduction; median of an even count averages the middle pair."""
    X = _matrix(X)
    if kind == "max":
        return X.max(axis=0)
    if kind == "mean":
        return X.mean(axis=0)
    if kind == "median":
        return np.median(X, axis=0)
    if kind == "sum":
        return X.sum(axis=0)
    raise ConfigError(f"unknown pooling {kind!r}; expected one of {POOL_KINDS}")


def pool(X, kind: str) -> PooledFeature:
    return PooledFeature(pool_values(X, kind), kind)


def mean_as_sum(X) -> PooledFeature:
    """Mean pooling as a sum over rows rescaled by ``1/N``."""
    X = _matrix(X)
    return PooledFeature((X / X.shape[0]).sum(axis=0), "mean")


def max_mask(X) -> np.ndarray:
    """Zero every entry except the first maximum of each column."""
    X = _matrix(X)
    keep = np.zeros_like(X, dtype=bool)
    keep[X.argmax(axis=0), np.arange(X.shape[1])] = True
    return np.where(keep, X, 0.0)


def max_as_masked_sum(X) -> PooledFeature:
    return PooledFeature(max_mask(X).sum(axis=0), "max")


def relu_mean_parameters(X) -> tuple[np.ndarray, float]:
    """Subtrahend ``b`` and common divisor ``c`` turning max into ReLU-mean.

    ``c`` is half the smallest normalized top-two gap ``(m - n) / (N m)`` and
    ``b = m (1 - c N)``, which lies strictly between each column's largest
    value ``m`` and runner-up ``n``.
    """
    X = _matrix(X)
    N = X.shape[0]
    top = np.sort(X, axis=0)
    m = top[-1]
    if np.any(m <= 0):
        raise DataError("max-as-ReLU-mean needs every column maximum to be positive")
    if N == 1:
        # no runner-up: any b < m works; pick b = 0 so ReLU((x - 0) / 1) = x
        return np.zeros_like(m), 1.0
    n = top[-2]
    gap = (m - n) / (N * m)
    if np.any(gap <= 0):
        raise DataError("max-as-ReLU-mean needs a unique maximum in every column")
    c = 0.5 * float(gap.min())
    return m * (1.0 - c * N), c


def max_as_relu_mean(X) -> tuple[PooledFeature, np.ndarray, float]:
    X = _matrix(X)
    b, c = relu_mean_parameters(X)
    values = np.maximum((X - b) / c, 0.0).mean(axis=0)
    return PooledFeature(values, "max"), b, c


def linear_ppe_mean_collapse(A, b, pc: PointCloud) -> tuple[PooledFeature, PooledFeature]:
    """Mean-pooled linear embedding ``{A x_i + b}`` next to ``A centroid + b``."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    pooled = pool(pc.points @ A.T + b, "mean")
    return pooled, PooledFeature(A @ pc.centroid + b, "mean")
