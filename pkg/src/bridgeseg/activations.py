"""Elementwise activations and the cluster-indexed ELU/ReLU assignment.

A "cluster" is one numbered unit of two conv-BN-activation blocks; the dual
U-net exposes 18 of them. An ActivationScheme picks, per cluster, whether
the block activations are ReLU or ELU.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

TOTAL_CLUSTERS = 18


def relu_forward(x: np.ndarray):
    y = np.maximum(x, 0.0)
    # derivative at exactly 0 is defined as 0
    return y, x > 0


def relu_backward(cache, gy: np.ndarray) -> np.ndarray:
    return gy * cache


def elu_forward(x: np.ndarray, alpha: float = 1.0):
    if alpha <= 0:
        raise ConfigError(f"elu alpha must be positive, got {alpha}")
    neg = x <= 0
    expm1 = np.expm1(np.minimum(x, 0.0))
    y = np.where(neg, alpha * expm1, x)
    # d/dx [alpha*(exp(x)-1)] = alpha*exp(x) = alpha*expm1 + alpha
    dx = np.where(neg, alpha * expm1 + alpha, 1.0)
    return y.astype(x.dtype, copy=False), dx.astype(x.dtype, copy=False)


def elu_backward(cache, gy: np.ndarray) -> np.ndarray:
    return gy * cache


def sigmoid_forward(x: np.ndarray):
    # split by sign so exp never overflows
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return y, y


def sigmoid_backward(cache, gy: np.ndarray) -> np.ndarray:
    y = cache
    return gy * y * (1.0 - y)


def saturation_stats(pre_activations: np.ndarray, threshold: float = -5.0) -> float:
    """Fraction of pre-activation entries below the saturation threshold.

    At the default threshold of -5 a unit-alpha ELU sits within 0.7% of its
    negative asymptote, which is what "saturated" means operationally here.
    """
    arr = np.asarray(pre_activations)
    if arr.size == 0:
        return 0.0
    return float(np.count_nonzero(arr < threshold) / arr.size)


@dataclass(frozen=True)
class ActivationScheme:
    """Per-cluster choice of activation: listed clusters use ReLU, the rest ELU."""

    relu_clusters: frozenset[int] = frozenset()
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "relu_clusters", frozenset(self.relu_clusters))
        for idx in self.relu_clusters:
            if not 1 <= idx <= TOTAL_CLUSTERS:
                raise ConfigError(
                    f"relu cluster index {idx} outside [1, {TOTAL_CLUSTERS}]"
                )
        if self.alpha <= 0:
            raise ConfigError(f"elu alpha must be positive, got {self.alpha}")

    def kind_for(self, cluster: int) -> str:
        return "relu" if cluster in self.relu_clusters else "elu"


ALL_ELU = ActivationScheme(frozenset())
ALL_RELU = ActivationScheme(frozenset(range(1, TOTAL_CLUSTERS + 1)))
CLUSTER1 = ActivationScheme(frozenset({3, 7, 12, 16}))
CLUSTER2 = ActivationScheme(frozenset({5, 9, 10, 14}))
CLUSTER3 = ActivationScheme(frozenset({4, 5, 13, 14}))

SCHEME_PRESETS: dict[str, ActivationScheme] = {
    "all-elu": ALL_ELU,
    "all-relu": ALL_RELU,
    "cluster1": CLUSTER1,
    "cluster2": CLUSTER2,
    "cluster3": CLUSTER3,
}


def scheme_from_name(name: str) -> ActivationScheme:
    try:
        return SCHEME_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown activation scheme {name!r}; choose from {sorted(SCHEME_PRESETS)}"
        ) from None


def scheme_from_indices(indices) -> ActivationScheme:
    """Build a scheme from an explicit iterable (or comma string) of cluster indices."""
    if isinstance(indices, str):
        parts = [p for p in indices.replace(" ", "").split(",") if p]
        try:
            indices = [int(p) for p in parts]
        except ValueError as exc:
            raise ConfigError(f"bad cluster index list {indices!r}") from exc
    return ActivationScheme(frozenset(indices))
