"""Exact posterior by enumeration (d <= 4) and evaluation metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp
from scipy.stats import rankdata

from . import graph
from .bge import BgeHyperparams, BgeScorer
from .data import SufficientStats
from .prior import PriorConfig

MAX_ENUM_D = 4


class UndefinedAuroc(ValueError):
    """Ground truth has no positives or no negatives."""


def _check_enumerable(d: int) -> None:
    if d > MAX_ENUM_D:
        raise ValueError(f"enumeration is limited to d <= {MAX_ENUM_D}, got d={d}")


@lru_cache(maxsize=None)
def _enumeration(d: int):
    """All graphs with their acyclicity penalties and edge counts."""
    _check_enumerable(d)
    graphs = graph.all_graphs(d)
    penalty = np.array([graph.dag_penalty(A) for A in graphs])
    acyclic = np.array([graph.is_acyclic(A) for A in graphs])
    edges = graphs.reshape(len(graphs), -1).sum(axis=1)
    for arr in (graphs, penalty, acyclic, edges):
        arr.flags.writeable = False
    return graphs, penalty, acyclic, edges


@dataclass(frozen=True)
class GraphDistribution:
    """Probabilities of every directed graph on ``d`` nodes, indexed by graph index."""

    d: int
    probs: np.ndarray

    def __post_init__(self):
        _check_enumerable(self.d)
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (2 ** graph.num_entries(self.d),):
            raise ValueError("probability table has the wrong length")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-8:
            raise ValueError("probability table must be nonnegative and sum to one")
        object.__setattr__(self, "probs", probs)

    def graphs(self) -> np.ndarray:
        return _enumeration(self.d)[0]

    def acyclic_mask(self) -> np.ndarray:
        return _enumeration(self.d)[2]

    def edge_marginals(self) -> np.ndarray:
        return np.tensordot(self.probs, self.graphs().astype(float), axes=1)

    def write_csv(self, path, ground_truth=None) -> None:
        graphs, _, acyclic, _ = _enumeration(self.d)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "probability", "is_acyclic", "shd_to_gt"])
            for k, (p, A, ok) in enumerate(zip(self.probs, graphs, acyclic)):
                dist = "" if ground_truth is None else graph.shd(A, ground_truth)
                w.writerow([k, repr(float(p)), int(ok), dist])


def log_joint_table(stats: SufficientStats, hyper: BgeHyperparams, lambda_t: float,
                    prior_config: PriorConfig) -> np.ndarray:
    """``log p(D|G) + log p~(G)`` for every graph, in graph-index order."""
    graphs, penalty, _, edges = _enumeration(stats.d)
    loglik = BgeScorer(stats, hyper).score_batch(graphs)
    return loglik - lambda_t * penalty - prior_config.lambda_sparse * edges


def enumerate_posterior(stats: SufficientStats, hyper: BgeHyperparams, lambda_t: float,
                        prior_config: PriorConfig) -> tuple[GraphDistribution, float]:
    """Exact posterior over all directed graphs and its log normalizer.

    The prior is unnormalized, so the returned log normalizer equals
    ``log p(D) + log Z`` where ``Z`` is the Gibbs partition function.
    """
    _check_enumerable(stats.d)
    joint = log_joint_table(stats, hyper, lambda_t, prior_config)
    log_z = float(logsumexp(joint))
    probs = np.exp(joint - log_z)
    return GraphDistribution(stats.d, probs / probs.sum()), log_z


def model_distribution(model, d: int | None = None) -> GraphDistribution:
    d = model.d if d is None else d
    _check_enumerable(d)
    probs = np.exp(model.log_prob_bits(graph.all_bits(d)))
    return GraphDistribution(d, probs / probs.sum())


def hellinger(p: GraphDistribution, q: GraphDistribution) -> float:
    if p.d != q.d:
        raise ValueError(f"dimension mismatch: {p.d} vs {q.d}")
    diff = np.sqrt(p.probs) - np.sqrt(q.probs)
    return float(min(1.0, np.sqrt(0.5 * np.dot(diff, diff))))


def exact_elbo(model, stats: SufficientStats, hyper: BgeHyperparams, lambda_t: float,
               prior_config: PriorConfig) -> float:
    """``sum_G q(G) [log p(D|G) + log p~(G) - log q(G)]`` by enumeration."""
    joint = log_joint_table(stats, hyper, lambda_t, prior_config)
    logq = model.log_prob_bits(graph.all_bits(stats.d))
    q = np.exp(logq)
    mask = q > 0
    return float(np.sum(q[mask] * (joint[mask] - logq[mask])))


def exact_elbo_gradient(model, stats: SufficientStats, hyper: BgeHyperparams, lambda_t: float,
                        prior_config: PriorConfig, baseline: float = 0.0) -> np.ndarray:
    """``sum_G q(G) (signal(G) - b) grad log q(G)``; independent of ``b``."""
    joint = log_joint_table(stats, hyper, lambda_t, prior_config)
    bits = graph.all_bits(stats.d)
    logq = model.log_prob_bits(bits)
    q = np.exp(logq)
    return model.grad_log_prob_weighted(bits, q * (joint - logq - baseline))


def expected_shd(model, ground_truth, num_samples: int, rng: np.random.Generator) -> float:
    """Monte Carlo mean SHD between model samples and the ground truth."""
    return float(shd_samples(model, ground_truth, num_samples, rng).mean())


def shd_samples(model, ground_truth, num_samples: int, rng: np.random.Generator) -> np.ndarray:
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    graphs, _ = model.sample(rng, num_samples)
    gt = np.asarray(ground_truth, dtype=bool)
    diff = graphs.astype(bool) != gt
    pair = diff | diff.transpose(0, 2, 1)
    return np.triu(pair, k=1).sum(axis=(1, 2)).astype(float)


def exact_expected_shd(dist: GraphDistribution, ground_truth) -> float:
    dists = np.array([graph.shd(A, ground_truth) for A in dist.graphs()], dtype=float)
    return float(dist.probs @ dists)


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    true_positive_rate: float
    false_positive_rate: float


def _offdiag_scores(marginals, ground_truth):
    marginals = np.asarray(marginals, dtype=float)
    gt = graph.validate(ground_truth)
    if marginals.shape != gt.shape:
        raise ValueError("marginals and ground truth shapes differ")
    rows, cols = graph.offdiag_positions(gt.shape[0])
    labels = gt[rows, cols].astype(bool)
    if labels.all() or not labels.any():
        raise UndefinedAuroc("AUROC needs both edges and non-edges in the ground truth")
    return marginals[rows, cols], labels


def roc_curve(marginals, ground_truth) -> list[RocPoint]:
    """ROC points from the highest threshold down; tied scores share one point."""
    scores, labels = _offdiag_scores(marginals, ground_truth)
    pos, neg = labels.sum(), (~labels).sum()
    points = [RocPoint(float("inf"), 0.0, 0.0)]
    for thr in np.unique(scores)[::-1]:
        pred = scores >= thr
        points.append(RocPoint(float(thr), float((pred & labels).sum() / pos),
                               float((pred & ~labels).sum() / neg)))
    return points


def auroc(marginals, ground_truth) -> float:
    """Rank-based AUROC of edge beliefs, ties counted as one half."""
    scores, labels = _offdiag_scores(marginals, ground_truth)
    ranks = rankdata(scores)
    pos, neg = labels.sum(), (~labels).sum()
    return float((ranks[labels].sum() - pos * (pos + 1) / 2) / (pos * neg))


def trapezoid_auroc(points: list[RocPoint]) -> float:
    fpr = np.array([p.false_positive_rate for p in points])
    tpr = np.array([p.true_positive_rate for p in points])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
