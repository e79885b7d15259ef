"""Unnormalized Gibbs prior over graphs and the temperature schedule."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graph import dag_penalty


@dataclass(frozen=True)
class PriorConfig:
    lambda_sparse: float = 0.01
    temp_min: float = 10.0
    temp_max: float = 1000.0
    total_epochs: int = 30000

    def __post_init__(self):
        if self.lambda_sparse < 0:
            raise ValueError("lambda_sparse must be nonnegative")
        if not 0 < self.temp_min <= self.temp_max:
            raise ValueError("need 0 < temp_min <= temp_max")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be positive")

    def to_config(self) -> dict:
        return asdict(self)


def log_prior_unnormalized(A, lambda_t: float, config: PriorConfig) -> float:
    """``-lambda_t * g(A) - lambda_sparse * |A|_1``; the normalizer is never needed."""
    A = np.asarray(A)
    return -lambda_t * dag_penalty(A) - config.lambda_sparse * float(A.sum())


def temperature_schedule(epoch: int, config: PriorConfig) -> float:
    """Exponential annealing of the acyclicity temperature, saturating at
    ``temp_max`` once ``epoch >= total_epochs / 1.1``."""
    k = config.total_epochs
    exponent = -2.0 * max(0.0, k - 1.1 * epoch) / k
    return config.temp_min + 10.0**exponent * (config.temp_max - config.temp_min)


class PriorScorer:
    """Caches the acyclicity penalty per graph; the temperature varies per call."""

    def __init__(self, config: PriorConfig):
        self.config = config
        self._penalty: dict[bytes, float] = {}

    def penalty(self, A) -> float:
        A = np.ascontiguousarray(A, dtype=np.int8)
        key = A.tobytes()
        value = self._penalty.get(key)
        if value is None:
            value = dag_penalty(A)
            self._penalty[key] = value
        return value

    def log_prior_batch(self, graphs, lambda_t: float) -> np.ndarray:
        graphs = np.asarray(graphs)
        g = np.array([self.penalty(A) for A in graphs])
        edges = graphs.reshape(graphs.shape[0], -1).sum(axis=1)
        return -lambda_t * g - self.config.lambda_sparse * edges
