"""Synthetic linear-Gaussian SCMs: Erdos-Renyi DAGs, edge weights,
ancestral simulation, sufficient statistics and file I/O."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import graph


@dataclass(frozen=True)
class WeightedScm:
    graph: np.ndarray
    weights: np.ndarray
    noise_variance: np.ndarray

    def __post_init__(self):
        A = graph.validate(self.graph)
        W = np.asarray(self.weights, dtype=float)
        if W.shape != A.shape:
            raise ValueError("weights and graph shapes differ")
        if np.any((W != 0) & (A == 0)):
            raise ValueError("nonzero weight on a missing edge")
        if not graph.is_acyclic(A):
            raise graph.CyclicGraph("SCM graph must be acyclic")
        var = np.broadcast_to(np.asarray(self.noise_variance, dtype=float), (A.shape[0],)).copy()
        if np.any(var < 0):
            raise ValueError("noise variance must be nonnegative")
        object.__setattr__(self, "graph", A)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "noise_variance", var)

    @property
    def d(self) -> int:
        return self.graph.shape[0]

    def to_dict(self) -> dict:
        rows, cols = np.nonzero(self.graph)
        return {
            "d": self.d,
            "edges": [[int(i), int(j), float(self.weights[i, j])] for i, j in zip(rows, cols)],
            "noise_variance": self.noise_variance.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "WeightedScm":
        d = int(obj["d"])
        A = np.zeros((d, d), dtype=np.int8)
        W = np.zeros((d, d))
        for i, j, w in obj["edges"]:
            A[int(i), int(j)] = 1
            W[int(i), int(j)] = float(w)
        return cls(A, W, np.asarray(obj["noise_variance"], dtype=float))


@dataclass(frozen=True)
class SufficientStats:
    """Sample size, mean and unnormalized scatter matrix of a dataset."""

    n: int
    mean: np.ndarray
    scatter: np.ndarray

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def empty(cls, d: int) -> "SufficientStats":
        return cls(0, np.zeros(d), np.zeros((d, d)))

    def restrict(self, subset) -> "SufficientStats":
        idx = np.asarray(sorted(subset), dtype=int)
        return SufficientStats(self.n, self.mean[idx], self.scatter[np.ix_(idx, idx)])


def sample_er_dag(d: int, expected_edges: float, rng: np.random.Generator) -> np.ndarray:
    """Erdos-Renyi DAG: a random node order, then each forward pair is an edge
    with probability ``expected_edges / (d(d-1)/2)``."""
    max_edges = d * (d - 1) / 2
    if d < 2:
        raise ValueError("need at least two nodes")
    if not 0 < expected_edges <= max_edges:
        raise ValueError(f"expected_edges must be in (0, {max_edges}] for d={d}")
    p = expected_edges / max_edges
    lower = np.tril(rng.random((d, d)) < p, k=-1)
    perm = rng.permutation(d)
    # lower[i, j] with i > j is the edge j -> i in the latent order
    A = lower.T[np.ix_(perm, perm)].astype(np.int8)
    return A


def sample_er_dag_nontrivial_mec(d: int, expected_edges: float, rng: np.random.Generator,
                                 max_tries: int = 1000) -> np.ndarray:
    """Resample ER DAGs until one has a Markov-equivalent alternative."""
    for _ in range(max_tries):
        A = sample_er_dag(d, expected_edges, rng)
        if graph.has_equivalent_reversal(A):
            return A
    raise RuntimeError(f"no DAG with equivalence class size > 1 in {max_tries} draws")


def sample_weights(A, rng: np.random.Generator, mean: float = 2.0, std: float = 1.0,
                   noise_variance: float = 1.0) -> WeightedScm:
    A = graph.validate(A)
    if not graph.is_acyclic(A):
        raise graph.CyclicGraph("cannot weight a cyclic graph")
    W = np.where(A == 1, rng.normal(mean, std, size=A.shape), 0.0)
    return WeightedScm(A, W, np.full(A.shape[0], noise_variance))


def propagate(scm: WeightedScm, noise) -> np.ndarray:
    """Push per-node noise columns through the structural equations."""
    noise = np.asarray(noise, dtype=float)
    X = np.zeros_like(noise)
    for j in graph.topological_order(scm.graph):
        X[:, j] = X @ scm.weights[:, j] + noise[:, j]
    return X


def simulate(scm: WeightedScm, n: int, rng: np.random.Generator) -> np.ndarray:
    """Ancestral sampling of ``n`` observations."""
    if n < 1:
        raise ValueError("n must be >= 1")
    noise = rng.standard_normal((n, scm.d)) * np.sqrt(scm.noise_variance)
    return propagate(scm, noise)


def sufficient_stats(X) -> SufficientStats:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("dataset must be a non-empty n x d array")
    mean = X.mean(axis=0)
    centered = X - mean
    scatter = centered.T @ centered
    return SufficientStats(X.shape[0], mean, (scatter + scatter.T) / 2)


def write_csv(X, path) -> None:
    X = np.asarray(X, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"X{j + 1}" for j in range(X.shape[1])])
        for row in X:
            w.writerow([repr(float(v)) for v in row])


def read_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    d = len(header)
    if header != [f"X{j + 1}" for j in range(d)]:
        raise ValueError(f"{path}: header must be X1,...,Xd")
    if not body:
        raise ValueError(f"{path}: no observations")
    for lineno, r in enumerate(body, 2):
        if len(r) != d:
            raise ValueError(f"{path}:{lineno}: expected {d} values, got {len(r)}")
    try:
        X = np.array(body, dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric value") from exc
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{path}: non-finite value")
    return X


def save_scm(scm: WeightedScm, path) -> None:
    Path(path).write_text(json.dumps(scm.to_dict(), indent=2))


def load_scm(path) -> WeightedScm:
    return WeightedScm.from_dict(json.loads(Path(path).read_text()))
