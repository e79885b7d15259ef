"""Seeded end-to-end experiments shared by ``scripts/`` and the acceptance suite."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import data, evaluate, family, trainer
from .bge import BgeHyperparams


def synthetic_problem(d: int, n: int, seed: int, nontrivial_mec: bool = True):
    """Ground-truth graph and data for one seed: ER with ``d`` expected edges,
    weights N(2, 1), unit noise."""
    rng = np.random.default_rng(seed)
    sampler = data.sample_er_dag_nontrivial_mec if nontrivial_mec else data.sample_er_dag
    scm = data.sample_weights(sampler(d, d, rng), rng)
    return scm, data.simulate(scm, n, rng)


def initial_model(config: trainer.TrainConfig, d: int) -> family.TrainableModel:
    """The model :func:`dagvi.trainer.train` starts from under ``config``."""
    init_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[0])
    return family.make_model(config.family, d, init_rng, config.hidden_size, config.embed_size)


@dataclass(frozen=True)
class RecoveryResult:
    seed: int
    untrained: float
    autoregressive: float
    factorized: float


def posterior_recovery(seed: int, d: int = 3, n: int = 100,
                       config: trainer.TrainConfig | None = None) -> RecoveryResult:
    """Hellinger distance to the enumerated posterior (at the final temperature)
    for the untrained and trained autoregressive model and the trained
    factorized model, all fit to the same data."""
    config = dataclasses.replace(config or trainer.TrainConfig.desk(), seed=seed)
    _, X = synthetic_problem(d, n, seed)
    stats = data.sufficient_stats(X)
    hyper = BgeHyperparams.from_config(d, config.bge)
    post, _ = evaluate.enumerate_posterior(stats, hyper, config.prior.temp_max, config.prior)

    def distance(model):
        return evaluate.hellinger(post, evaluate.model_distribution(model))

    ar_config = dataclasses.replace(config, family="autoregressive")
    untrained = distance(initial_model(ar_config, d))
    ar, _ = trainer.train(stats, ar_config, hyper)
    fac, _ = trainer.train(stats, dataclasses.replace(config, family="factorized"), hyper)
    return RecoveryResult(seed, untrained, distance(ar), distance(fac))


@dataclass(frozen=True)
class MetricResult:
    seed: int
    n: int
    family: str
    expected_shd: float
    auroc: float | None


def metric_point(seed: int, d: int, n: int, config: trainer.TrainConfig | None = None,
                 shd_samples: int = 1000, marginal_samples: int = 10_000) -> MetricResult:
    """Train on one synthetic dataset and report expected SHD and edge AUROC."""
    config = dataclasses.replace(config or trainer.TrainConfig.desk(), seed=seed)
    scm, X = synthetic_problem(d, n, seed)
    model, _ = trainer.train(X, config)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])
    shd = evaluate.expected_shd(model, scm.graph, shd_samples, rng)
    try:
        auc = evaluate.auroc(model.edge_marginals(marginal_samples, rng), scm.graph)
    except evaluate.UndefinedAuroc:
        auc = None
    return MetricResult(seed, n, config.family, shd, auc)
