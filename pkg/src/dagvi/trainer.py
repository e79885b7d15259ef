"""ELBO maximization with score-function gradients.

Each step draws ``L`` graphs from ``q``, scores each with

    signal(A) = log p(D | A) + log p~(A) - log q(A),

and ascends ``(1/L) sum (signal(A) - b) grad log q(A)`` with Adam, where ``b``
is an exponential moving average of past mean signals. The unnormalized
prior only shifts the ELBO by a constant.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import graph
from .bge import BgeHyperparams, BgeScorer
from .data import SufficientStats, sufficient_stats
from .family import TrainableModel, make_model
from .prior import PriorConfig, PriorScorer, temperature_schedule

HISTORY_COLUMNS = ("epoch", "elbo", "loglik", "kl_est", "lambda_t", "baseline", "grad_norm")


class TrainingError(RuntimeError):
    """Training aborted; ``history`` holds the records completed so far."""

    def __init__(self, message: str, history: "TrainHistory | None" = None):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30000
    batch_size: int = 1000
    learning_rate: float = 1e-2
    baseline_decay: float = 0.99
    seed: int = 0
    family: str = "autoregressive"
    hidden_size: int = 48
    embed_size: int = 8
    prior: PriorConfig = field(default_factory=PriorConfig)
    bge: dict = field(default_factory=dict)
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    early_stop: bool = False
    early_stop_window: int = 500
    early_stop_rtol: float = 1e-5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0 <= self.baseline_decay < 1:
            raise ValueError("baseline_decay must be in [0, 1)")
        if self.family not in ("autoregressive", "factorized"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.prior.total_epochs != self.epochs:
            object.__setattr__(self, "prior", dataclasses.replace(self.prior, total_epochs=self.epochs))

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Small preset for laptop-scale runs and the test suite."""
        base = dict(epochs=3000, batch_size=64, hidden_size=48)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["adam_betas"] = list(self.adam_betas)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        prior = obj.pop("prior", {}) or {}
        if "adam_betas" in obj:
            obj["adam_betas"] = tuple(obj["adam_betas"])
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        prior_cfg = PriorConfig(**{k: v for k, v in prior.items() if k != "total_epochs"})
        return cls(prior=prior_cfg, **obj)


@dataclass
class TrainState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    baseline: float | None = None
    epoch: int = 0

    @classmethod
    def fresh(cls, params: np.ndarray) -> "TrainState":
        params = np.array(params, dtype=float)
        return cls(params, np.zeros_like(params), np.zeros_like(params))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    elbo: float
    loglik: float
    kl_est: float
    lambda_t: float
    baseline: float
    grad_norm: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in HISTORY_COLUMNS[1:]])


class Objective:
    """Log-likelihood and log-prior terms of the learning signal for one dataset."""

    def __init__(self, stats: SufficientStats, hyper: BgeHyperparams, prior: PriorConfig):
        self.stats = stats
        self.hyper = hyper
        self.prior = prior
        self.scorer = BgeScorer(stats, hyper)
        self.prior_scorer = PriorScorer(prior)

    @property
    def d(self) -> int:
        return self.stats.d

    def log_joint(self, graphs, lambda_t: float) -> tuple[np.ndarray, np.ndarray]:
        """``(log p(D|A), log p~(A))`` for a stack of graphs."""
        return self.scorer.score_batch(graphs), self.prior_scorer.log_prior_batch(graphs, lambda_t)

    def signals(self, graphs, log_q, lambda_t: float) -> np.ndarray:
        loglik, logprior = self.log_joint(graphs, lambda_t)
        return loglik + logprior - np.asarray(log_q)


def per_sample_signal(A, stats: SufficientStats, hyper: BgeHyperparams, lambda_t: float,
                      prior: PriorConfig, model) -> float:
    obj = Objective(stats, hyper, prior)
    A = graph.validate(A)
    return float(obj.signals(A[None], [model.log_prob(A)], lambda_t)[0])


def elbo_estimate(model, objective: Objective, lambda_t: float, num_samples: int,
                  rng: np.random.Generator) -> float:
    """Monte Carlo ELBO, the mean learning signal over ``num_samples`` draws."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    graphs, logq = model.sample(rng, num_samples)
    return float(objective.signals(graphs, logq, lambda_t).mean())


def adam_update(state: TrainState, grad: np.ndarray, lr: float, betas=(0.9, 0.999),
                eps: float = 1e-8) -> TrainState:
    """One Adam ascent step on ``grad``."""
    b1, b2 = betas
    step = state.step + 1
    m = b1 * state.m + (1 - b1) * grad
    v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**step)
    v_hat = v / (1 - b2**step)
    params = state.params + lr * m_hat / (np.sqrt(v_hat) + eps)
    return dataclasses.replace(state, params=params, m=m, v=v, step=step)


def score_function_gradient(model: TrainableModel, objective: Objective, lambda_t: float,
                            num_samples: int, baseline: float | None,
                            rng: np.random.Generator):
    """Draw a batch and return ``(grad, signals, loglik, logprior, baseline_used)``.

    A ``None`` baseline is replaced by the batch mean signal.
    """
    bits, logq, trace = model.sample_with_grad_state(rng, num_samples)
    graphs = graph.delinearize(bits, model.d)
    loglik, logprior = objective.log_joint(graphs, lambda_t)
    signals = loglik + logprior - logq
    b = float(signals.mean()) if baseline is None else baseline
    grad = model.grad_from_state(trace, (signals - b) / num_samples)
    return grad, signals, loglik, logprior, b


def grad_step(state: TrainState, model: TrainableModel, objective: Objective, lambda_t: float,
              config: TrainConfig, rng: np.random.Generator) -> tuple[TrainState, EpochRecord]:
    current = model.with_params(state.params)
    grad, signals, loglik, logprior, b = score_function_gradient(
        current, objective, lambda_t, config.batch_size, state.baseline, rng)
    gnorm = float(np.linalg.norm(grad))
    if not math.isfinite(gnorm):
        raise TrainingError(
            f"non-finite gradient at epoch {state.epoch} (lambda_t={lambda_t:.4g}, "
            f"signal range [{signals.min():.4g}, {signals.max():.4g}])")
    mean_signal = float(signals.mean())
    new_baseline = config.baseline_decay * b + (1 - config.baseline_decay) * mean_signal
    new_state = adam_update(state, grad, config.learning_rate, config.adam_betas, config.adam_eps)
    new_state.baseline = new_baseline
    new_state.epoch = state.epoch + 1
    record = EpochRecord(
        epoch=state.epoch,
        elbo=mean_signal,
        loglik=float(loglik.mean()),
        kl_est=float((loglik - signals).mean()),
        lambda_t=lambda_t,
        baseline=new_baseline,
        grad_norm=gnorm,
    )
    return new_state, record


def _plateaued(history: TrainHistory, window: int, rtol: float) -> bool:
    if len(history) < 2 * window:
        return False
    elbo = history.column("elbo")
    recent, previous = elbo[-window:].mean(), elbo[-2 * window:-window].mean()
    return abs(recent - previous) <= rtol * max(abs(previous), 1e-12)


def train(data, config: TrainConfig, hyper: BgeHyperparams | None = None,
          model: TrainableModel | None = None) -> tuple[TrainableModel, TrainHistory]:
    """Fit a variational model to ``data`` (an n x d array or :class:`SufficientStats`)."""
    stats = data if isinstance(data, SufficientStats) else sufficient_stats(data)
    if hyper is None:
        hyper = BgeHyperparams.from_config(stats.d, config.bge)
    objective = Objective(stats, hyper, config.prior)
    init_rng, sample_rng = (np.random.default_rng(s)
                            for s in np.random.SeedSequence(config.seed).spawn(2))
    if model is None:
        model = make_model(config.family, stats.d, init_rng, config.hidden_size, config.embed_size)
    state = TrainState.fresh(model.params)
    history = TrainHistory()
    try:
        for epoch in range(config.epochs):
            lambda_t = temperature_schedule(epoch, config.prior)
            state, record = grad_step(state, model, objective, lambda_t, config, sample_rng)
            history.records.append(record)
            if config.early_stop and _plateaued(history, config.early_stop_window,
                                                config.early_stop_rtol):
                break
    except TrainingError as exc:
        exc.history = history
        raise
    return model.with_params(state.params), history
