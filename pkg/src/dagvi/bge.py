"""BGe marginal likelihood under a Gaussian-Wishart parameter prior.

The prior on the mean/precision pair is

    W ~ Wishart(alpha_w, T^{-1}),    mu | W ~ N(gamma, (alpha_mu W)^{-1}),

so ``T`` is the inverse scale of the Wishart and the covariance ``W^{-1}`` is
inverse-Wishart with scale ``T``. Restricting to a subset ``Y`` of ``l``
coordinates leaves a prior of the same family with ``alpha_w - d + l``
degrees of freedom and scale ``T[Y, Y]``; the evidence of each subset is
closed form, and a node's local score is the ratio of the evidences of its
family and of its parents.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import multigammaln

from .data import SufficientStats


class NotPositiveDefinite(ValueError):
    """A scale submatrix failed Cholesky factorization."""


@dataclass(frozen=True)
class BgeHyperparams:
    alpha_mu: float
    alpha_w: float
    gamma: np.ndarray
    t_scale: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        T = np.asarray(self.t_scale, dtype=float)
        d = gamma.shape[0]
        if T.shape != (d, d):
            raise ValueError("t_scale must be d x d")
        if self.alpha_mu <= 0:
            raise ValueError("alpha_mu must be positive")
        if self.alpha_w <= d - 1:
            raise ValueError(f"alpha_w must exceed d - 1 = {d - 1}")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "t_scale", T)

    @property
    def d(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def default(cls, d: int, alpha_mu: float = 1.0, alpha_w: float | None = None,
                gamma: float = 2.0) -> "BgeHyperparams":
        if alpha_w is None:
            alpha_w = 10.0 if d <= 5 else 1000.0
        scale = alpha_mu * (alpha_w - d - 1) / (alpha_mu + 1)
        if scale <= 0:
            raise ValueError(f"alpha_w={alpha_w} too small for the default T at d={d}")
        return cls(alpha_mu, alpha_w, np.full(d, gamma), scale * np.eye(d))

    @classmethod
    def from_config(cls, d: int, cfg: dict | None) -> "BgeHyperparams":
        """Build from the ``"bge"`` block of an experiment config.

        ``t_scale_mode`` is ``"default"`` (the formula above) or ``"identity"``.
        """
        cfg = dict(cfg or {})
        hp = cls.default(d, alpha_mu=float(cfg.get("alpha_mu", 1.0)),
                         alpha_w=cfg.get("alpha_w"), gamma=float(cfg.get("gamma_scalar", 2.0)))
        mode = cfg.get("t_scale_mode", "default")
        if mode == "identity":
            hp = cls(hp.alpha_mu, hp.alpha_w, hp.gamma, np.eye(d))
        elif mode != "default":
            raise ValueError(f"unknown t_scale_mode {mode!r}")
        return hp

    def to_config(self) -> dict:
        return {"alpha_mu": self.alpha_mu, "alpha_w": self.alpha_w,
                "gamma_scalar": float(self.gamma[0]) if self.d else 2.0}

    def restrict(self, subset) -> "BgeHyperparams":
        """Marginal prior hyperparameters of the coordinates in ``subset``."""
        idx = np.asarray(sorted(subset), dtype=int)
        return BgeHyperparams(self.alpha_mu, self.alpha_w - self.d + len(idx),
                              self.gamma[idx], self.t_scale[np.ix_(idx, idx)])


@dataclass(frozen=True)
class PosteriorParams:
    gamma_post: np.ndarray
    precision_scale: float
    alpha_w_post: float
    t_post: np.ndarray


def posterior_update(stats: SufficientStats, hyper: BgeHyperparams) -> PosteriorParams:
    n, am = stats.n, hyper.alpha_mu
    gamma_post = (am * hyper.gamma + n * stats.mean) / (am + n)
    diff = hyper.gamma - stats.mean
    t_post = hyper.t_scale + stats.scatter + (am * n / (am + n)) * np.outer(diff, diff)
    return PosteriorParams(gamma_post, am + n, hyper.alpha_w + n, t_post)


def _logdet_spd(M: np.ndarray) -> float:
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("scale submatrix is not positive definite") from exc
    return 2.0 * float(np.log(np.diag(L)).sum())


class BgeScorer:
    """Subset evidences and local scores for one dataset, memoized.

    Subset evidences are cached by node bitmask and local scores by
    ``(node, parent bitmask)``; cached values are the same floats a fresh
    computation returns.
    """

    def __init__(self, stats: SufficientStats, hyper: BgeHyperparams):
        if stats.d != hyper.d:
            raise ValueError(f"data has d={stats.d} but hyperparameters d={hyper.d}")
        self.stats = stats
        self.hyper = hyper
        self.post = posterior_update(stats, hyper)
        self._subset: dict[int, float] = {0: 0.0}
        self._local: dict[tuple[int, int], float] = {}

    @property
    def d(self) -> int:
        return self.stats.d

    def log_marginal_subset(self, subset) -> float:
        mask = subset if isinstance(subset, (int, np.integer)) else _mask(subset)
        mask = int(mask)
        value = self._subset.get(mask)
        if value is None:
            value = self._compute_subset(mask)
            self._subset[mask] = value
        return value

    def _compute_subset(self, mask: int) -> float:
        idx = [i for i in range(self.d) if mask >> i & 1]
        l, n, d = len(idx), self.stats.n, self.d
        am = self.hyper.alpha_mu
        nu = self.hyper.alpha_w - d + l
        ix = np.ix_(idx, idx)
        return (
            -0.5 * l * n * math.log(math.pi)
            + 0.5 * l * math.log(am / (am + n))
            + multigammaln(0.5 * (nu + n), l)
            - multigammaln(0.5 * nu, l)
            + 0.5 * nu * _logdet_spd(self.hyper.t_scale[ix])
            - 0.5 * (nu + n) * _logdet_spd(self.post.t_post[ix])
        )

    def local_score(self, node: int, parents) -> float:
        pmask = parents if isinstance(parents, (int, np.integer)) else _mask(parents)
        pmask = int(pmask)
        if pmask >> node & 1:
            raise ValueError(f"node {node} cannot be its own parent")
        key = (node, pmask)
        value = self._local.get(key)
        if value is None:
            value = self.log_marginal_subset(pmask | 1 << node) - self.log_marginal_subset(pmask)
            self._local[key] = value
        return value

    def log_marginal_likelihood(self, A) -> float:
        """Sum of local scores over nodes; cyclic graphs are scored the same way."""
        masks = parent_masks(A)
        return float(sum(self.local_score(j, int(m)) for j, m in enumerate(masks)))

    def score_batch(self, graphs) -> np.ndarray:
        """Scores for a stack of adjacency matrices of shape (B, d, d)."""
        graphs = np.asarray(graphs)
        masks = graphs.astype(np.int64).transpose(0, 2, 1) @ (1 << np.arange(self.d, dtype=np.int64))
        out = np.empty(graphs.shape[0])
        local = self.local_score
        for b, row in enumerate(masks.tolist()):
            out[b] = sum(local(j, m) for j, m in enumerate(row))
        return out


def _mask(nodes) -> int:
    m = 0
    for i in nodes:
        m |= 1 << int(i)
    return m


def parent_masks(A) -> np.ndarray:
    """Bitmask of the parents of each node (column ``j`` of ``A``)."""
    A = np.asarray(A, dtype=np.int64)
    return A.T @ (1 << np.arange(A.shape[0], dtype=np.int64))


def log_marginal_subset(stats: SufficientStats, subset, hyper: BgeHyperparams) -> float:
    return BgeScorer(stats, hyper).log_marginal_subset(subset)


def local_score(node: int, parents, stats: SufficientStats, hyper: BgeHyperparams,
                cache: BgeScorer | None = None) -> float:
    scorer = cache if cache is not None else BgeScorer(stats, hyper)
    return scorer.local_score(node, parents)


def log_marginal_likelihood(A, stats: SufficientStats, hyper: BgeHyperparams,
                            cache: BgeScorer | None = None) -> float:
    scorer = cache if cache is not None else BgeScorer(stats, hyper)
    return scorer.log_marginal_likelihood(A)
