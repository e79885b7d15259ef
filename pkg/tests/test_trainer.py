import dataclasses

import numpy as np
import pytest

from dagvi import data, evaluate, family, graph, trainer
from dagvi.bge import BgeHyperparams
from dagvi.prior import PriorConfig, temperature_schedule
from dagvi.trainer import Objective, TrainConfig, TrainState

from oracles import random_models


def chain_data(n, seed):
    rng = np.random.default_rng(seed)
    A = np.array([[0, 1], [0, 0]])
    return data.simulate(data.WeightedScm(A, 2.0 * A, 1.0), n, rng)


@pytest.fixture(scope="module")
def setup_d2():
    stats = data.sufficient_stats(chain_data(30, 0))
    hyper = BgeHyperparams.default(2)
    prior = PriorConfig()
    return stats, hyper, prior, Objective(stats, hyper, prior)


def batch_gradients(model, objective, lam, baseline, batches, L, seed):
    rng = np.random.default_rng(seed)
    return np.array([trainer.score_function_gradient(model, objective, lam, L, baseline, rng)[0]
                     for _ in range(batches)])


class TestSignal:
    def test_enumerated_mean_is_exact_elbo(self, setup_d2):
        stats, hyper, prior, objective = setup_d2
        model = random_models("autoregressive", 2, 1, seed=1)[0]
        signals = [trainer.per_sample_signal(A, stats, hyper, 50.0, prior, model)
                   for A in graph.all_graphs(2)]
        q = np.exp(model.log_prob_bits(graph.all_bits(2)))
        assert q @ signals == pytest.approx(evaluate.exact_elbo(model, stats, hyper, 50.0, prior),
                                            abs=1e-10)

    def test_cyclic_signal_finite(self, setup_d2):
        stats, hyper, prior, _ = setup_d2
        value = trainer.per_sample_signal(np.array([[0, 1], [1, 0]]), stats, hyper, 1000.0, prior,
                                          family.FactorizedModel(2))
        assert np.isfinite(value)

    def test_estimate_within_3se(self, setup_d2):
        stats, hyper, prior, objective = setup_d2
        model = random_models("autoregressive", 2, 1, seed=2)[0]
        rng = np.random.default_rng(0)
        graphs, logq = model.sample(rng, 100_000)
        s = objective.signals(graphs, logq, 50.0)
        exact = evaluate.exact_elbo(model, stats, hyper, 50.0, prior)
        assert abs(s.mean() - exact) < 3 * s.std() / np.sqrt(s.size)

    def test_single_sample_unbiased(self, setup_d2):
        *_, objective = setup_d2
        model = random_models("factorized", 2, 1, seed=3)[0]
        rng = np.random.default_rng(1)
        singles = np.array([trainer.elbo_estimate(model, objective, 50.0, 1, rng) for _ in range(10_000)])
        big = trainer.elbo_estimate(model, objective, 50.0, 10_000, rng)
        assert abs(singles.mean() - big) < 3 * singles.std() * np.sqrt(2 / 10_000)


class TestBound:
    @pytest.mark.parametrize("d", [2, 3])
    def test_elbo_below_evidence(self, d):
        rng = np.random.default_rng(d)
        X = data.simulate(data.sample_weights(data.sample_er_dag(d, 1, rng), rng), 20, rng)
        stats, hyper, prior = data.sufficient_stats(X), BgeHyperparams.default(d), PriorConfig()
        _, log_z = evaluate.enumerate_posterior(stats, hyper, 100.0, prior)
        models = random_models("autoregressive", d, 10, 5) + random_models("factorized", d, 10, 6)
        for model in models:
            assert evaluate.exact_elbo(model, stats, hyper, 100.0, prior) <= log_z + 1e-8

    def test_equality_at_posterior(self, setup_d2):
        stats, hyper, prior, _ = setup_d2
        post, log_z = evaluate.enumerate_posterior(stats, hyper, 100.0, prior)
        table = family.TableModel(2, post.probs)
        assert evaluate.exact_elbo(table, stats, hyper, 100.0, prior) == pytest.approx(log_z, abs=1e-8)


class TestEstimator:
    def test_unbiased(self, setup_d2):
        stats, hyper, prior, objective = setup_d2
        model = random_models("autoregressive", 2, 1, seed=7)[0]
        exact = evaluate.exact_elbo_gradient(model, stats, hyper, 50.0, prior)
        # a fixed baseline at the ELBO, where the moving average settles
        b = evaluate.exact_elbo(model, stats, hyper, 50.0, prior)
        grads = batch_gradients(model, objective, 50.0, b, 200, 500, seed=0)
        mean = grads.mean(axis=0)
        cos = mean @ exact / (np.linalg.norm(mean) * np.linalg.norm(exact))
        assert cos > 0.99

    def test_exact_gradient_baseline_free(self, setup_d2):
        stats, hyper, prior, _ = setup_d2
        model = random_models("autoregressive", 2, 1, seed=8)[0]
        g0 = evaluate.exact_elbo_gradient(model, stats, hyper, 50.0, prior)
        g1 = evaluate.exact_elbo_gradient(model, stats, hyper, 50.0, prior, baseline=100.0)
        np.testing.assert_allclose(g0, g1, atol=1e-8 * np.abs(g0).max())

    def test_baseline_does_not_shift_mean(self, setup_d2):
        stats, hyper, prior, objective = setup_d2
        model = random_models("autoregressive", 2, 1, seed=9)[0]
        g0 = batch_gradients(model, objective, 50.0, 0.0, 200, 500, seed=1)
        g1 = batch_gradients(model, objective, 50.0, 100.0, 200, 500, seed=1)
        # same draws, so the paired difference is 100 * mean(grad log q)
        direction = evaluate.exact_elbo_gradient(model, stats, hyper, 50.0, prior)
        for v in (direction, np.eye(direction.size)[0]):
            diff = (g1 - g0) @ v
            assert abs(diff.mean()) < 3 * diff.std(ddof=1) / np.sqrt(diff.size)


class TestStep:
    def test_zero_learning_rate(self, setup_d2):
        *_, objective = setup_d2
        model = random_models("autoregressive", 2, 1, seed=10)[0]
        cfg = TrainConfig.desk(learning_rate=0.0)
        state = TrainState.fresh(model.params)
        new, rec = trainer.grad_step(state, model, objective, 20.0, cfg, np.random.default_rng(0))
        assert np.array_equal(new.params, state.params)
        assert new.baseline is not None and new.baseline == rec.baseline
        assert new.epoch == 1

    def test_baseline_ema(self, setup_d2):
        *_, objective = setup_d2
        model = family.FactorizedModel(2)
        cfg = TrainConfig.desk(baseline_decay=0.5)
        state = dataclasses.replace(TrainState.fresh(model.params), baseline=10.0)
        new, rec = trainer.grad_step(state, model, objective, 20.0, cfg, np.random.default_rng(0))
        assert new.baseline == pytest.approx(0.5 * 10.0 + 0.5 * rec.elbo)

    def test_adam_first_step_is_sign(self):
        state = TrainState.fresh(np.zeros(3))
        new = trainer.adam_update(state, np.array([2.0, -0.5, 0.0]), lr=0.1)
        np.testing.assert_allclose(new.params, [0.1, -0.1, 0.0], atol=1e-8)

    def test_non_finite_aborts(self, setup_d2):
        stats, *_ = setup_d2
        model = family.FactorizedModel(2, [np.nan, 0.0])
        with np.errstate(invalid="ignore"), pytest.raises(trainer.TrainingError) as info:
            trainer.train(stats, TrainConfig.desk(epochs=5), model=model)
        assert info.value.history is not None and len(info.value.history) == 0


class TestTrain:
    def test_history_complete(self):
        cfg = TrainConfig.desk(epochs=40, batch_size=16, hidden_size=8)
        _, hist = trainer.train(chain_data(50, 1), cfg)
        assert len(hist) == 40
        assert hist.column("epoch").tolist() == list(range(40))
        expected = [temperature_schedule(i, cfg.prior) for i in range(40)]
        assert hist.column("lambda_t").tolist() == expected

    def test_deterministic(self):
        cfg = TrainConfig.desk(epochs=30, batch_size=16, hidden_size=8, seed=3)
        X = chain_data(50, 2)
        m1, h1 = trainer.train(X, cfg)
        m2, h2 = trainer.train(X, cfg)
        assert np.array_equal(m1.params, m2.params)
        assert h1.records == h2.records

    def test_seed_matters(self):
        X = chain_data(50, 2)
        _, h1 = trainer.train(X, TrainConfig.desk(epochs=5, batch_size=16, hidden_size=8, seed=1))
        _, h2 = trainer.train(X, TrainConfig.desk(epochs=5, batch_size=16, hidden_size=8, seed=2))
        assert h1.records != h2.records

    def test_history_csv(self, tmp_path):
        _, hist = trainer.train(chain_data(20, 3), TrainConfig.desk(epochs=3, batch_size=8, hidden_size=4))
        hist.write_csv(tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "epoch,elbo,loglik,kl_est,lambda_t,baseline,grad_norm"
        assert len(lines) == 4

    def test_early_stop(self):
        cfg = TrainConfig.desk(epochs=400, batch_size=8, family="factorized", early_stop=True,
                               early_stop_window=20, early_stop_rtol=1.0)
        _, hist = trainer.train(chain_data(20, 4), cfg)
        assert len(hist) == 40

    def test_config_roundtrip(self):
        cfg = TrainConfig.desk(learning_rate=3e-3, prior=PriorConfig(lambda_sparse=0.1))
        back = TrainConfig.from_dict(cfg.to_dict())
        assert back == cfg
        assert back.prior.total_epochs == 3000

    def test_unknown_config_key(self):
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"epoch": 3})

    def test_training_beats_init_d2(self):
        X = chain_data(100, 5)
        stats, hyper, prior = data.sufficient_stats(X), BgeHyperparams.default(2), PriorConfig()
        post, _ = evaluate.enumerate_posterior(stats, hyper, prior.temp_max, prior)
        cfg = TrainConfig.desk(seed=0)
        init_rng = np.random.default_rng(np.random.SeedSequence(0).spawn(2)[0])
        init = family.init_model(2, cfg.hidden_size, init_rng)
        model, _ = trainer.train(X, cfg)
        before = evaluate.hellinger(post, evaluate.model_distribution(init))
        after = evaluate.hellinger(post, evaluate.model_distribution(model))
        assert after < before
