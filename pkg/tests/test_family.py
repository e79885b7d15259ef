import numpy as np
import pytest

from dagvi import family, graph
from dagvi.family import AutoregressiveModel, FactorizedModel, TableModel, bernoulli_log_mass

from oracles import brute_force_probs, finite_difference_grad, random_models, relative_errors

FAMILIES = ["factorized", "autoregressive"]


class TestBernoulliMass:
    def test_saturated_logits(self):
        assert bernoulli_log_mass(1.0, 20.0) == pytest.approx(0.0, abs=1e-8)
        assert bernoulli_log_mass(0.0, -20.0) == pytest.approx(0.0, abs=1e-8)

    def test_extreme_logits_finite(self):
        assert np.isfinite(bernoulli_log_mass(1.0, -800.0))
        assert bernoulli_log_mass(1.0, -800.0) == pytest.approx(-800.0)

    def test_zero_logit(self):
        assert bernoulli_log_mass(np.array([0.0, 1.0]), 0.0) == pytest.approx([-np.log(2)] * 2)


class TestNormalization:
    @pytest.mark.parametrize("name", FAMILIES)
    @pytest.mark.parametrize("d", [2, 3])
    def test_sums_to_one(self, name, d):
        for model in random_models(name, d, 10, seed=d):
            total = np.exp(model.log_prob_bits(graph.all_bits(d))).sum()
            assert abs(total - 1.0) < 1e-8

    def test_batch_matches_per_graph(self):
        model = random_models("autoregressive", 3, 1, seed=0)[0]
        batch = np.exp(model.log_prob_bits(graph.all_bits(3)))
        np.testing.assert_allclose(batch, brute_force_probs(model), rtol=1e-12)

    def test_zero_models_uniform(self):
        for model in (FactorizedModel(2), AutoregressiveModel(2)):
            np.testing.assert_allclose(np.exp(model.log_prob_bits(graph.all_bits(2))), 0.25)


class TestGradients:
    @pytest.mark.parametrize("name", FAMILIES)
    @pytest.mark.parametrize("d", [2, 3])
    def test_finite_differences(self, name, d):
        model = random_models(name, d, 1, seed=10 + d)[0]
        rng = np.random.default_rng(d)
        for _ in range(2):
            A, _ = model.sample(rng)
            err = relative_errors(model.grad_log_prob(A), finite_difference_grad(model, A))
            assert err.max() < 1e-4

    def test_factorized_closed_form(self):
        A = np.array([[0, 1], [0, 0]])
        assert FactorizedModel(2).grad_log_prob(A).tolist() == [0.5, -0.5]

    @pytest.mark.parametrize("name", FAMILIES)
    def test_score_identity(self, name):
        model = random_models(name, 2, 1, seed=3)[0]
        bits = graph.all_bits(2)
        q = np.exp(model.log_prob_bits(bits))
        assert np.abs(model.grad_log_prob_weighted(bits, q)).max() < 1e-8

    def test_weighted_is_sum_of_singles(self):
        model = random_models("autoregressive", 3, 1, seed=4)[0]
        rng = np.random.default_rng(0)
        bits, _ = model.sample_bits(rng, 5)
        w = rng.normal(size=5)
        singles = sum(wk * model.grad_log_prob(graph.delinearize(b, 3)) for wk, b in zip(w, bits))
        np.testing.assert_allclose(model.grad_log_prob_weighted(bits, w), singles, atol=1e-12)

    def test_trace_gradient_matches_teacher_forcing(self):
        model = random_models("autoregressive", 3, 1, seed=5)[0]
        bits, logp, state = model.sample_with_grad_state(np.random.default_rng(1), 7)
        w = np.linspace(-1, 1, 7)
        np.testing.assert_allclose(model.grad_from_state(state, w),
                                   model.grad_log_prob_weighted(bits, w), atol=1e-12)
        np.testing.assert_allclose(logp, model.log_prob_bits(bits), atol=1e-12)


class TestSampling:
    @pytest.mark.parametrize("name", FAMILIES)
    def test_log_prob_consistent(self, name):
        model = random_models(name, 3, 1, seed=6)[0]
        graphs, logp = model.sample(np.random.default_rng(2), 50)
        assert graphs.shape == (50, 3, 3)
        for A, lp in zip(graphs, logp):
            assert lp == pytest.approx(model.log_prob(A), abs=1e-12)

    def test_diagonal_zero(self):
        graphs, _ = random_models("autoregressive", 4, 1, seed=7)[0].sample(np.random.default_rng(0), 100)
        assert np.all(np.diagonal(graphs, axis1=1, axis2=2) == 0)

    def test_frequencies_match_probabilities(self):
        model = random_models("autoregressive", 2, 1, seed=8)[0]
        graphs, _ = model.sample(np.random.default_rng(3), 40_000)
        codes = [graph.graph_index(A) for A in graphs]
        freq = np.bincount(codes, minlength=4) / len(codes)
        q = np.exp(model.log_prob_bits(graph.all_bits(2)))
        se = np.sqrt(q * (1 - q) / len(codes))
        assert np.all(np.abs(freq - q) < 4 * se + 1e-12)

    def test_zero_recurrent_marginals(self):
        marg = AutoregressiveModel(3).edge_marginals(100_000, np.random.default_rng(0))
        off = marg[~np.eye(3, dtype=bool)]
        assert np.all(np.abs(off - 0.5) < 0.01)
        assert np.all(np.diag(marg) == 0)

    def test_factorized_marginals_exact(self):
        model = FactorizedModel(2, [0.0, 3.0])
        np.testing.assert_allclose(model.edge_marginals(1, None),
                                   [[0, 0.5], [1 / (1 + np.exp(-3.0)), 0]])

    def test_point_mass_marginals(self):
        target = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]])
        model = FactorizedModel(3, 40.0 * (2 * graph.linearize(target) - 1))
        assert np.abs(model.edge_marginals(1, None) - target).max() < 1e-3

    def test_table_model(self):
        probs = np.zeros(4)
        probs[[1, 2]] = 0.5
        model = TableModel(2, probs)
        graphs, logp = model.sample(np.random.default_rng(0), 100)
        assert set(graph.graph_index(A) for A in graphs) <= {1, 2}
        np.testing.assert_allclose(logp, np.log(0.5))


class TestInit:
    def test_initial_marginals_near_half(self):
        model = family.init_model(3, 48, np.random.default_rng(0))
        marg = model.edge_marginals(20_000, np.random.default_rng(1))
        off = marg[~np.eye(3, dtype=bool)]
        assert np.all((off >= 0.4) & (off <= 0.6))

    def test_seeded(self):
        a = family.init_model(3, 16, np.random.default_rng(5))
        b = family.init_model(3, 16, np.random.default_rng(5))
        c = family.init_model(3, 16, np.random.default_rng(6))
        assert np.array_equal(a.params, b.params)
        assert not np.array_equal(a.params, c.params)

    def test_ranges(self):
        model = family.init_model(3, 16, np.random.default_rng(0))
        assert np.abs(model.params).max() <= 0.1
        assert model.b_out[0] == 0.0

    def test_bad_hidden(self):
        with pytest.raises(ValueError):
            family.init_model(3, 0, np.random.default_rng(0))

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            family.make_model("flow", 3, np.random.default_rng(0))


class TestCheckpoint:
    @pytest.mark.parametrize("name", FAMILIES)
    def test_roundtrip(self, name, tmp_path):
        model = random_models(name, 3, 1, seed=9)[0]
        family.save_checkpoint(model, tmp_path / "m.json")
        back = family.load_checkpoint(tmp_path / "m.json")
        assert type(back) is type(model)
        assert np.array_equal(back.params, model.params)
        bits = graph.all_bits(3)
        assert np.array_equal(back.log_prob_bits(bits), model.log_prob_bits(bits))

    def test_version_checked(self):
        obj = FactorizedModel(2).to_dict()
        obj["version"] = 99
        with pytest.raises(ValueError):
            family.model_from_dict(obj)


def fit_forward_kl(model, target, steps, lr):
    """Maximize ``sum_G p(G) log q(G)`` by exact enumeration with Adam."""
    bits = graph.all_bits(model.d)
    params = model.params.copy()
    m, v = np.zeros_like(params), np.zeros_like(params)
    for t in range(1, steps + 1):
        g = model.with_params(params).grad_log_prob_weighted(bits, target)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        params += lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    return model.with_params(params)


def forward_kl(target, q):
    mask = target > 0
    return float(np.sum(target[mask] * np.log(target[mask] / q[mask])))


class TestExpressiveness:
    def test_two_mode_target(self):
        target = np.zeros(4)
        target[[1, 2]] = 0.5  # {1->2} and {2->1}
        model = fit_forward_kl(family.init_model(2, 8, np.random.default_rng(0)), target, 600, 0.05)
        q = np.exp(model.log_prob_bits(graph.all_bits(2)))
        assert q[1] >= 0.45 and q[2] >= 0.45
        assert q[0] <= 0.05 and q[3] <= 0.05

        # best factorized fit, exhaustively over a logit grid
        grid = np.linspace(-8, 8, 161)
        best = min(forward_kl(target, np.exp(FactorizedModel(2, [a, b]).log_prob_bits(graph.all_bits(2))))
                   for a in grid for b in grid)
        assert best == pytest.approx(np.log(2), abs=1e-9)
        assert forward_kl(target, q) < best - 0.5
