import numpy as np
import pytest

from tadt import tensor as T
from tadt.config import UpsamplerConfig
from tadt.tensor import ContractError, Tensor
from tadt.upsampler import LIIF, ensemble_plan, make_coord_grid, pixel_centers

from conftest import weighted_sum


def liif(c=4, dtype=np.float64, **kw):
    with T.default_dtype(dtype):
        return LIIF(c, UpsamplerConfig(hidden=16, **kw), np.random.default_rng(5))


class TestGrid:
    def test_two_pixels(self):
        np.testing.assert_array_equal(pixel_centers(2), [-0.5, 0.5])

    def test_one_pixel(self):
        np.testing.assert_array_equal(pixel_centers(1), [0.0])

    def test_cell(self):
        g = make_coord_grid(96, 40)
        np.testing.assert_array_equal(g.cell[0], [2 / 96, 2 / 40])
        assert g.coords.shape == (96 * 40, 2)

    def test_row_major_order(self):
        g = make_coord_grid(2, 3)
        np.testing.assert_array_equal(g.coords[:3, 0], [-0.5, -0.5, -0.5])
        np.testing.assert_allclose(g.coords[:3, 1], [-2 / 3, 0, 2 / 3])


class TestEnsemble:
    def test_weights_sum_to_one(self, rng):
        coords = rng.uniform(-1, 1, (2, 50, 2))
        _, weights = ensemble_plan(coords, 5, 7)
        np.testing.assert_allclose(weights.sum(axis=0), 1.0, atol=1e-6)
        assert weights.shape == (4, 2, 50)

    def test_indices_in_range_at_borders(self):
        coords = np.array([[[-1.0, -1.0], [1.0, 1.0], [0.999, -0.999]]])
        members, _ = ensemble_plan(coords, 4, 3)
        for flat, _ in members:
            assert flat.min() >= 0 and flat.max() < 12

    def test_nearest_code_at_center(self):
        coords = np.array([[[pixel_centers(4)[2], pixel_centers(3)[1]]]])
        (flat, rel), = ensemble_plan(coords, 4, 3, local_ensemble=False)[0]
        assert flat[0, 0] == 2 * 3 + 1
        np.testing.assert_allclose(rel, 0.0, atol=1e-12)


class TestQuery:
    def test_center_query_decodes_single_code(self, rng):
        up = liif(feat_unfold=False, local_ensemble=False)
        feat = Tensor(rng.standard_normal((1, 4, 3, 3)), dtype=np.float64)
        coords = np.array([[[pixel_centers(3)[1], pixel_centers(3)[2]]]])
        cell = np.array([[[2 / 6, 2 / 6]]])
        out = up(feat, coords, cell).data
        code = feat.data[0, :, 1, 2]
        x = np.concatenate([code, [0.0, 0.0], cell[0, 0] * 3])
        np.testing.assert_allclose(out[0, 0], up.mlp(Tensor(x[None], dtype=np.float64)).data[0], rtol=1e-12)

    def test_gradcheck_f32(self, rng):
        up = liif(dtype=np.float32)
        feat = Tensor(rng.standard_normal((1, 4, 3, 3)), requires_grad=True, dtype=np.float32)
        coords = rng.uniform(-0.95, 0.95, (1, 5, 2))
        cell = np.full((1, 5, 2), 2 / 7)
        weighted_sum(up(feat, coords, cell)).backward()
        params = {"feature": feat, **up.named_parameters()}
        analytic = {k: p.grad.astype(np.float64).ravel() for k, p in params.items()}
        up.to(np.float64)
        f64 = Tensor(feat.data, requires_grad=True, dtype=np.float64)
        params["feature"] = f64
        fn = lambda: weighted_sum(up(f64, coords, cell))  # noqa: E731
        a, n = [], []
        for k, p in params.items():
            idx = np.random.default_rng(0).choice(p.size, min(p.size, 8), replace=False)
            _, est = T.numeric_grad(fn, p, 1e-6, idx)
            a.append(analytic[k][idx])
            n.append(est)
        assert T.relative_error(np.concatenate(a), np.concatenate(n)) <= 1e-3

    def test_out_of_domain_coordinates(self, rng):
        up = liif()
        with pytest.raises(ContractError):
            up(Tensor(rng.random((1, 4, 3, 3))), np.array([[[1.5, 0.0]]]), np.array([[[0.1, 0.1]]]))

    @pytest.mark.parametrize("toggles", [dict(local_ensemble=False), dict(feat_unfold=False),
                                         dict(cell_decode=False)])
    def test_ablation_toggles(self, rng, toggles):
        up = liif(**toggles)
        out = up(Tensor(rng.random((2, 4, 5, 5))), rng.uniform(-1, 1, (2, 9, 2)), np.full((2, 9, 2), 0.1))
        assert out.shape == (2, 9, 3)


class TestUpsample:
    def test_scale_two_size(self, rng):
        up = liif(dtype=np.float32)
        with T.no_grad():
            out = up.upsample(Tensor(rng.random((1, 4, 48, 48))), 2.0)
        assert out.shape == (1, 3, 96, 96)

    def test_unit_scale_size(self, rng):
        up = liif()
        assert up.upsample(Tensor(rng.random((1, 4, 5, 7))), 1.0).shape == (1, 3, 5, 7)

    def test_non_integer_scale_rounds(self, rng):
        up = liif()
        assert up.upsample(Tensor(rng.random((1, 4, 5, 7))), 2.5).shape == (1, 3, 12, 18)

    def test_chunked_equals_unchunked_f64(self, rng):
        up = liif()
        feat = Tensor(rng.random((1, 4, 6, 6)), dtype=np.float64)
        whole = up.upsample(feat, 3.0, chunk=10 ** 6).data
        for chunk in (7, 50, 100):
            assert up.upsample(feat, 3.0, chunk=chunk).data.tobytes() == whole.tobytes()

    def test_scale_below_one_rejected(self, rng):
        with pytest.raises(ContractError):
            liif().upsample(Tensor(rng.random((1, 4, 4, 4))), 0.5)
