import numpy as np
import pytest

from tadt import tensor as T
from tadt.config import RouterConfig, full_config
from tadt.router import Router, modulate, normalize_scale, sample_routes
from tadt.tensor import ContractError, Tensor


def logit(p):
    return np.log(p / (1 - p))


@pytest.fixture
def router():
    with T.default_dtype(np.float64):
        return Router(8, RouterConfig(), np.random.default_rng(3))


class TestImageBranch:
    def test_output_length_full_config(self, router):
        assert router.image(Tensor(np.random.default_rng(0).random((1, 3, 16, 16)))).shape == (1, 32)

    def test_distinct_images_distinct_logits(self, router, rng):
        e1 = router.image(Tensor(rng.random((1, 3, 12, 12)))).data
        e2 = router.image(Tensor(rng.random((1, 3, 12, 12)))).data
        assert np.linalg.norm(e1 - e2) > 0

    def test_gradcheck_f32(self, rng):
        r32 = Router(2, RouterConfig(hidden=4), np.random.default_rng(1))
        img = Tensor(rng.random((1, 3, 6, 6)), dtype=np.float32)
        w = rng.standard_normal((1, 8))
        T.tsum(r32.image(img) * Tensor(w)).backward()
        params = r32.image.named_parameters()
        analytic = {k: p.grad.astype(np.float64).ravel() for k, p in params.items()}
        r32.to(np.float64)
        img64 = Tensor(img.data, dtype=np.float64)
        for k, p in params.items():
            idx = np.arange(min(p.size, 6))
            _, est = T.numeric_grad(lambda: T.tsum(r32.image(img64) * Tensor(w, dtype=np.float64)), p, 1e-6, idx)
            assert T.relative_error(analytic[k][idx], est) <= 1e-3, k


class TestScaleBranch:
    @pytest.mark.parametrize("s", [1.5, 2, 3, 4, 8, 12])
    def test_beta_in_open_unit_interval(self, router, s):
        beta = router.scale(s).item()
        assert 0 < beta < 1

    def test_zero_final_layer_gives_half(self, router):
        router.scale.fc3.weight.data[...] = 0
        router.scale.fc3.bias.data[...] = 0
        np.testing.assert_array_equal(router.scale([1.5, 2, 4, 12]).data, np.full((4, 1), 0.5))

    def test_scale_below_one_rejected(self, router):
        with pytest.raises(ContractError):
            router.scale(0.5)

    def test_normalization(self):
        np.testing.assert_array_equal(normalize_scale([1.0, 4.0]), [0.0, 1.0])


class TestModulate:
    @pytest.mark.parametrize("c", [-3.0, 0.0, 2.5])
    def test_uniform_logits_give_beta(self, c):
        e = Tensor(np.full((1, 8), c), dtype=np.float64)
        p = modulate(e, Tensor([[0.37]], dtype=np.float64), 2)
        np.testing.assert_array_equal(p.data, np.full((1, 8), 0.37))

    def test_clamp_example(self):
        e = Tensor([logit(np.array([0.8, 0.1, 0.1, 0.1]))], dtype=np.float64)
        p = modulate(e, Tensor([[0.6]], dtype=np.float64), 1).data[0]
        # scalar oracle: sum of sigmoids 1.1, p_j = min(0.6 * 4 * sigma_j / 1.1, 1)
        oracle = [min(0.6 * 4 * s / 1.1, 1.0) for s in (0.8, 0.1, 0.1, 0.1)]
        assert oracle[0] == 1.0
        np.testing.assert_allclose(p, oracle, atol=1e-12)
        np.testing.assert_allclose(p, [1.0, 0.2182, 0.2182, 0.2182], atol=1e-4)

    def test_vanishing_beta(self, rng):
        e = Tensor(rng.standard_normal((1, 8)), dtype=np.float64)
        p = modulate(e, Tensor([[1e-9]], dtype=np.float64), 2).data
        assert p.max() < 1e-8

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            modulate(Tensor(np.zeros((1, 5))), Tensor([[0.5]]), 2)

    def test_gradient_through_clamp_is_zero(self):
        e = Tensor([logit(np.array([0.8, 0.1, 0.1, 0.1]))], requires_grad=True, dtype=np.float64)
        beta = Tensor([[0.6]], requires_grad=True, dtype=np.float64)
        p = modulate(e, beta, 1)
        (p * Tensor([[1.0, 0.0, 0.0, 0.0]], dtype=np.float64)).sum().backward()
        assert beta.grad[0, 0] == 0.0  # p_1 is clamped


class TestSampling:
    def test_degenerate_probabilities(self, rng):
        p = Tensor([[1.0, 0.0] * 50], dtype=np.float64)
        for _ in range(20):
            r = sample_routes(p, "train", rng).data
            np.testing.assert_array_equal(r, p.data)

    def test_monte_carlo_mean(self):
        p = Tensor(np.full((1, 100000), 0.3), dtype=np.float64)
        mean = sample_routes(p, "train", np.random.default_rng(2024)).data.mean()
        assert 0.295 <= mean <= 0.305

    def test_straight_through_gradient(self, rng):
        p = Tensor(rng.uniform(0, 1, (1, 32)), requires_grad=True, dtype=np.float64)
        c = rng.standard_normal((1, 32))
        r = sample_routes(p, "train", rng)
        T.tsum(r * Tensor(c, dtype=np.float64)).backward()
        np.testing.assert_array_equal(p.grad, c)

    def test_eval_threshold(self):
        p = Tensor([[0.49, 0.5, 0.51, 0.0]], dtype=np.float64)
        np.testing.assert_array_equal(sample_routes(p, "eval").data, [[0, 1, 1, 0]])

    def test_seed_reproducible(self):
        p = Tensor(np.random.default_rng(0).random((4, 32)))
        a = sample_routes(p, "train", np.random.default_rng(9)).data
        b = sample_routes(p, "train", np.random.default_rng(9)).data
        assert a.tobytes() == b.tobytes()

    def test_out_of_range_rejected(self):
        with pytest.raises(ContractError):
            sample_routes(Tensor([[1.2]]), "eval")
        with pytest.raises(ContractError):
            sample_routes(Tensor([[np.nan]]), "eval")

    def test_needs_rng(self):
        with pytest.raises(ContractError):
            sample_routes(Tensor([[0.5]]), "train")


class TestRouter:
    def test_decision_fields(self, router, rng):
        dec = router(Tensor(rng.random((2, 3, 12, 12))), 2.5, "eval")
        assert dec.logits.shape == dec.probs.shape == dec.routes.shape == (2, 32)
        assert dec.beta.shape == (2, 1)
        assert set(np.unique(dec.routes.data)) <= {0.0, 1.0}

    def test_eval_is_deterministic(self, router, rng):
        img = Tensor(rng.random((1, 3, 12, 12)))
        a, b = router(img, 3.0, "eval"), router(img, 3.0, "eval")
        assert a.routes.data.tobytes() == b.routes.data.tobytes()

    def test_all_on(self, router, rng):
        dec = router(Tensor(rng.random((1, 3, 8, 8))), 2.0, "all-on")
        assert dec.routes.data.sum() == 32

    def test_per_sample_scale(self, router, rng):
        img = Tensor(np.repeat(rng.random((1, 3, 8, 8)), 2, axis=0))
        dec = router(img, np.array([1.5, 4.0]), "eval")
        assert dec.beta.data[0, 0] != dec.beta.data[1, 0]

    def test_parameter_budget(self):
        cfg = full_config()
        assert Router(8, cfg.router, np.random.default_rng(0)).num_parameters() < 50_000
