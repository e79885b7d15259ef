"""Distributions over the off-diagonal entries of an adjacency matrix.

Three families share one interface:

* :class:`AutoregressiveModel` -- an LSTM reads the previously sampled entry
  and a learned embedding of the step index, and emits the Bernoulli logit of
  the next entry.
* :class:`FactorizedModel` -- independent Bernoulli entries.
* :class:`TableModel` -- an explicit probability table over all graphs
  (small ``d`` only, not trainable).

Entries are visited in :func:`dagvi.graph.linearize` order and the diagonal
is never part of the sequence. Graph batches are handled as bit arrays of
shape ``(B, d(d-1))``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import graph

CHECKPOINT_VERSION = 1
START = 2  # input symbol fed at the first step


def bernoulli_log_mass(bits, logits) -> np.ndarray:
    """``log sigmoid(z)`` for a one and ``log sigmoid(-z)`` for a zero, without overflow."""
    return -np.logaddexp(0.0, (1.0 - 2.0 * bits) * logits)


class GraphModel:
    d: int
    family: str = ""

    @property
    def num_entries(self) -> int:
        return graph.num_entries(self.d)

    def sample_bits(self, rng: np.random.Generator, num: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def log_prob_bits(self, bits) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, num: int | None = None):
        """Draw graphs. Without ``num`` returns one ``(A, log_prob)`` pair,
        otherwise a stack of ``num`` matrices and their log-probabilities."""
        bits, logp = self.sample_bits(rng, 1 if num is None else num)
        graphs = graph.delinearize(bits, self.d)
        if num is None:
            return graphs[0], float(logp[0])
        return graphs, logp

    def log_prob(self, A) -> float:
        bits = graph.linearize(graph.validate(A))
        return float(self.log_prob_bits(bits[None])[0])

    def edge_marginals(self, num_samples: int, rng: np.random.Generator,
                       chunk: int = 4096) -> np.ndarray:
        """Monte Carlo edge frequencies."""
        if num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        total = np.zeros(self.num_entries)
        left = num_samples
        while left:
            b = min(chunk, left)
            bits, _ = self.sample_bits(rng, b)
            total += bits.sum(axis=0)
            left -= b
        return graph.delinearize(total / num_samples, self.d).astype(float)


class TrainableModel(GraphModel):
    params: np.ndarray

    def grad_log_prob_weighted(self, bits, weights) -> np.ndarray:
        """Gradient of ``sum_b weights[b] * log q(bits[b])`` w.r.t. the flat parameters."""
        raise NotImplementedError

    def grad_log_prob(self, A) -> np.ndarray:
        bits = graph.linearize(graph.validate(A))
        return self.grad_log_prob_weighted(bits[None], np.ones(1))

    def sample_with_grad_state(self, rng: np.random.Generator, num: int):
        """Sample and keep whatever the backward pass needs.

        Returns ``(bits, log_probs, state)``; ``state`` goes to
        :meth:`grad_from_state`.
        """
        bits, logp = self.sample_bits(rng, num)
        return bits, logp, bits

    def grad_from_state(self, state, weights) -> np.ndarray:
        return self.grad_log_prob_weighted(state, weights)

    def with_params(self, params) -> "TrainableModel":
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class FactorizedModel(TrainableModel):
    family = "factorized"

    def __init__(self, d: int, logits=None):
        self.d = d
        m = graph.num_entries(d)
        self.params = np.zeros(m) if logits is None else np.asarray(logits, dtype=float).copy()
        if self.params.shape != (m,):
            raise ValueError(f"expected {m} logits for d={d}")

    @property
    def logits(self) -> np.ndarray:
        return self.params

    def sample_bits(self, rng, num):
        p = expit(self.params)
        bits = (rng.random((num, self.num_entries)) < p).astype(np.int8)
        return bits, self.log_prob_bits(bits)

    def log_prob_bits(self, bits):
        bits = np.asarray(bits, dtype=float)
        return bernoulli_log_mass(bits, self.params).sum(axis=-1)

    def grad_log_prob_weighted(self, bits, weights):
        bits = np.asarray(bits, dtype=float)
        return np.asarray(weights, dtype=float) @ (bits - expit(self.params))

    def edge_marginals(self, num_samples=1, rng=None, chunk=4096):
        return graph.delinearize(expit(self.params), self.d).astype(float)

    def with_params(self, params):
        return FactorizedModel(self.d, params)

    def to_dict(self):
        return {"version": CHECKPOINT_VERSION, "family": self.family, "d": self.d,
                "params": self.params.tolist()}


@dataclass
class _Trace:
    """Forward-pass intermediates for backpropagation through time."""

    bits: np.ndarray
    symbols: np.ndarray      # (m, B) input symbol per step
    h: list                  # hidden state after each step
    c: list
    gates: list              # (i, f, g, o) per step
    tanh_c: list
    logits: np.ndarray       # (m, B)


class AutoregressiveModel(TrainableModel):
    """Single-layer LSTM over the linearized adjacency entries.

    Step ``t`` consumes ``x_t = [onehot(prev symbol, 3), emb[t]]`` where the
    previous symbol is the last sampled bit (or a start token at ``t = 0``).
    Gates are ordered input, forget, cell, output. The next entry has logit
    ``w_out . h_t + b_out``.

    Flat parameter layout, each block row-major:
    ``W_in (4H, 3+E) | W_hh (4H, H) | b (4H) | emb (m, E) | w_out (H) | b_out (1)``.
    """

    family = "autoregressive"

    def __init__(self, d: int, hidden_size: int = 48, embed_size: int = 8, params=None):
        if hidden_size < 1 or embed_size < 0:
            raise ValueError("hidden_size must be >= 1 and embed_size >= 0")
        self.d = d
        self.hidden_size = H = hidden_size
        self.embed_size = E = embed_size
        m = graph.num_entries(d)
        self._shapes = [("W_in", (4 * H, 3 + E)), ("W_hh", (4 * H, H)), ("b", (4 * H,)),
                        ("emb", (m, E)), ("w_out", (H,)), ("b_out", (1,))]
        size = sum(int(np.prod(s)) for _, s in self._shapes)
        self.params = np.zeros(size) if params is None else np.array(params, dtype=float)
        if self.params.shape != (size,):
            raise ValueError(f"expected {size} parameters, got {self.params.shape}")
        self._bind_views()

    def _split(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        views, offset = {}, 0
        for name, shape in self._shapes:
            size = int(np.prod(shape))
            views[name] = flat[offset:offset + size].reshape(shape)
            offset += size
        return views

    def _bind_views(self):
        for name, view in self._split(self.params).items():
            setattr(self, name, view)

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, hidden_size: int = 48,
             embed_size: int = 8, scale: float = 0.1) -> "AutoregressiveModel":
        model = cls(d, hidden_size, embed_size)
        model.params[:] = rng.uniform(-scale, scale, size=model.params.shape)
        model.b_out[:] = 0.0
        return model

    def with_params(self, params):
        return AutoregressiveModel(self.d, self.hidden_size, self.embed_size, params)

    def param_blocks(self) -> dict[str, np.ndarray]:
        return self._split(self.params)

    # forward -----------------------------------------------------------

    def _forward(self, num: int, bits=None, rng=None) -> _Trace:
        """Teacher-forced when ``bits`` is given, otherwise samples with ``rng``."""
        H, m = self.hidden_size, self.num_entries
        W_sym = self.W_in[:, :3].T                  # (3, 4H)
        pos_in = self.emb @ self.W_in[:, 3:].T + self.b  # (m, 4H)
        W_hhT = self.W_hh.T
        w_out, b_out = self.w_out, self.b_out[0]

        sampling = bits is None
        out_bits = np.empty((num, m), dtype=np.int8) if sampling else np.asarray(bits, dtype=np.int8)
        if sampling:
            uniforms = rng.random((m, num))
        symbols = np.empty((m, num), dtype=np.intp)
        logits = np.empty((m, num))
        h = np.zeros((num, H))
        c = np.zeros((num, H))
        hs, cs, gates, tanhs = [], [], [], []
        prev = np.full(num, START, dtype=np.intp)
        for t in range(m):
            symbols[t] = prev
            pre = W_sym[prev] + pos_in[t] + h @ W_hhT
            i = expit(pre[:, :H])
            f = expit(pre[:, H:2 * H])
            g = np.tanh(pre[:, 2 * H:3 * H])
            o = expit(pre[:, 3 * H:])
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            z = h @ w_out + b_out
            logits[t] = z
            if sampling:
                out_bits[:, t] = uniforms[t] < expit(z)
            prev = out_bits[:, t].astype(np.intp)
            hs.append(h)
            cs.append(c)
            gates.append((i, f, g, o))
            tanhs.append(tc)
        return _Trace(out_bits, symbols, hs, cs, gates, tanhs, logits)

    @staticmethod
    def _log_prob_from_trace(tr: _Trace) -> np.ndarray:
        return bernoulli_log_mass(tr.bits.T.astype(float), tr.logits).sum(axis=0)

    def sample_bits(self, rng, num):
        tr = self._forward(num, rng=rng)
        return tr.bits, self._log_prob_from_trace(tr)

    def log_prob_bits(self, bits):
        bits = np.atleast_2d(bits)
        tr = self._forward(bits.shape[0], bits=bits)
        return self._log_prob_from_trace(tr)

    def sample_with_grad_state(self, rng, num):
        tr = self._forward(num, rng=rng)
        return tr.bits, self._log_prob_from_trace(tr), tr

    def grad_from_state(self, state, weights):
        return self._backward(state, np.asarray(weights, dtype=float))

    def grad_log_prob_weighted(self, bits, weights):
        bits = np.atleast_2d(bits)
        tr = self._forward(bits.shape[0], bits=bits)
        return self._backward(tr, np.asarray(weights, dtype=float))

    # backward ----------------------------------------------------------

    def _backward(self, tr: _Trace, weights: np.ndarray) -> np.ndarray:
        H, m = self.hidden_size, self.num_entries
        num = tr.bits.shape[0]
        grad = np.zeros_like(self.params)
        g = self._split(grad)
        dW_sym = np.zeros((3, 4 * H))
        dpos = np.zeros((m, 4 * H))

        # d/dz of a weighted Bernoulli log-mass is w * (a - sigmoid(z))
        dz = weights * (tr.bits.T - expit(tr.logits))   # (m, B)
        dh_next = np.zeros((num, H))
        dc_next = np.zeros((num, H))
        zeros = np.zeros((num, H))
        onehot = np.eye(3)
        for t in range(m - 1, -1, -1):
            h_t = tr.h[t]
            h_prev = tr.h[t - 1] if t > 0 else zeros
            c_prev = tr.c[t - 1] if t > 0 else zeros
            i, f, gg, o = tr.gates[t]
            tc = tr.tanh_c[t]

            g["w_out"][:] += dz[t] @ h_t
            g["b_out"][0] += dz[t].sum()
            dh = dh_next + np.outer(dz[t], self.w_out)
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dpre = np.concatenate([
                dc * gg * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - gg * gg),
                dh * tc * o * (1.0 - o),
            ], axis=1)
            g["W_hh"][:] += dpre.T @ h_prev
            dW_sym += onehot[tr.symbols[t]].T @ dpre
            dpos[t] = dpre.sum(axis=0)
            dh_next = dpre @ self.W_hh
            dc_next = dc * f

        g["W_in"][:, :3] = dW_sym.T
        g["W_in"][:, 3:] = dpos.T @ self.emb
        g["emb"][:] = dpos @ self.W_in[:, 3:]
        g["b"][:] = dpos.sum(axis=0)
        return grad

    def to_dict(self):
        return {"version": CHECKPOINT_VERSION, "family": self.family, "d": self.d,
                "hidden_size": self.hidden_size, "embed_size": self.embed_size,
                "params": self.params.tolist()}


class TableModel(GraphModel):
    """Explicit distribution over graph indices (see :func:`dagvi.graph.graph_index`)."""

    family = "table"

    def __init__(self, d: int, probs):
        self.d = d
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (2 ** graph.num_entries(d),):
            raise ValueError("table must have one entry per graph")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-10:
            raise ValueError("table must be a probability vector")
        self.probs = probs
        self._weights = 1 << np.arange(graph.num_entries(d), dtype=np.int64)

    def codes(self, bits) -> np.ndarray:
        return np.asarray(bits, dtype=np.int64) @ self._weights

    def sample_bits(self, rng, num):
        codes = rng.choice(self.probs.size, size=num, p=self.probs)
        bits = ((codes[:, None] >> np.arange(self.num_entries)) & 1).astype(np.int8)
        return bits, self.log_prob_bits(bits)

    def log_prob_bits(self, bits):
        with np.errstate(divide="ignore"):
            return np.log(self.probs[self.codes(np.atleast_2d(bits))])


def init_model(d: int, hidden_size: int, rng: np.random.Generator,
               embed_size: int = 8) -> AutoregressiveModel:
    return AutoregressiveModel.init(d, rng, hidden_size=hidden_size, embed_size=embed_size)


def make_model(family: str, d: int, rng: np.random.Generator, hidden_size: int = 48,
               embed_size: int = 8) -> TrainableModel:
    if family == "autoregressive":
        return init_model(d, hidden_size, rng, embed_size)
    if family == "factorized":
        return FactorizedModel(d)
    raise ValueError(f"unknown family {family!r}")


def model_from_dict(obj: dict) -> TrainableModel:
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')!r}")
    family, d = obj["family"], int(obj["d"])
    if family == "autoregressive":
        return AutoregressiveModel(d, int(obj["hidden_size"]), int(obj["embed_size"]), obj["params"])
    if family == "factorized":
        return FactorizedModel(d, obj["params"])
    raise ValueError(f"unknown family {family!r}")


def save_checkpoint(model: TrainableModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_checkpoint(path) -> TrainableModel:
    return model_from_dict(json.loads(Path(path).read_text()))


# module-level spellings of the model methods

def sample(model: GraphModel, rng: np.random.Generator):
    return model.sample(rng)


def log_prob(model: GraphModel, A) -> float:
    return model.log_prob(A)


def grad_log_prob(model: TrainableModel, A) -> np.ndarray:
    return model.grad_log_prob(A)


def edge_marginals(model: GraphModel, num_samples: int, rng: np.random.Generator) -> np.ndarray:
    return model.edge_marginals(num_samples, rng)
