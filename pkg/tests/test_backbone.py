import numpy as np
import pytest

from tadt import tensor as T
from tadt.backbone import MSTB, MSTG, Backbone, param_count, sliceable_projection
from tadt.config import BackboneConfig, full_config, tiny_config
from tadt.router import Router
from tadt.tensor import ContractError, Tensor

TINY = tiny_config().backbone


def make(cls, cfg=TINY, seed=0, dtype=np.float64):
    with T.default_dtype(dtype):
        return cls(cfg, np.random.default_rng(seed))


def tokens(rng, b=1, h=8, w=8, c=16, dtype=np.float64):
    return Tensor(rng.standard_normal((b, h * w, c)), dtype=dtype)


class TestSliceableProjection:
    def test_worked_example(self, rng):
        o = [rng.standard_normal((64, 4)) for _ in range(4)]
        w = rng.standard_normal((16, 16))
        blocks = [Tensor(o[0]), None, Tensor(o[2]), None]
        out = sliceable_projection(blocks, Tensor(w), [1, 0, 1, 0]).data
        ref = np.concatenate([o[0], o[2]], axis=1) @ np.concatenate([w[0:4], w[8:12]], axis=0)
        np.testing.assert_allclose(out, ref, rtol=1e-5, atol=1e-6)

    def test_all_on_bitwise_f64(self, rng):
        o = [Tensor(rng.standard_normal((64, 4)), dtype=np.float64) for _ in range(4)]
        w = Tensor(rng.standard_normal((16, 16)), dtype=np.float64)
        dense = T.matmul(T.concat(o, axis=-1), w).data
        np.testing.assert_array_equal(sliceable_projection(o, w, [1, 1, 1, 1]).data, dense)

    def test_all_off_returns_none(self, rng):
        assert sliceable_projection([None] * 4, Tensor(np.zeros((16, 16))), [0, 0, 0, 0]) is None

    def test_inconsistent_blocks_rejected(self, rng):
        with pytest.raises(ContractError):
            sliceable_projection([Tensor(np.zeros((4, 4))), None, None, None], Tensor(np.zeros((16, 16))),
                                 [0, 1, 0, 0])

    def test_non_binary_routes_rejected(self):
        with pytest.raises(ContractError):
            sliceable_projection([None] * 4, Tensor(np.zeros((16, 16))), [0, 2, 0, 0])


class TestMSTB:
    def test_all_on_equals_ungated(self, rng):
        blk = make(MSTB)
        x = tokens(rng)
        np.testing.assert_array_equal(blk(x, 8, 8, [1, 1, 1, 1]).data, blk(x, 8, 8).data)

    def test_all_off_is_mlp_only(self, rng):
        blk = make(MSTB)
        x = tokens(rng)
        expected = x + blk.mlp(blk.norm2(x))
        np.testing.assert_array_equal(blk(x, 8, 8, [0, 0, 0, 0]).data, expected.data)

    def test_partial_routing_matches_dense_oracle_f32(self, rng):
        blk = make(MSTB, dtype=np.float32)
        x = tokens(rng, dtype=np.float32)
        sliced = blk(x, 8, 8, [1, 0, 1, 0]).data
        dense = blk(x, 8, 8, [1, 0, 1, 0], dense=True).data
        assert np.abs(sliced - dense).max() <= 1e-6

    def test_gated_branches_never_run(self, rng):
        blk = make(MSTB)
        x = Tensor(tokens(rng).data, requires_grad=True)
        blk(x, 8, 8, [1, 0, 1, 0]).sum().backward()
        assert blk.branches[1].qkv.weight.grad is None
        assert blk.branches[3].qkv.weight.grad is None
        assert blk.branches[0].qkv.weight.grad is not None

    def test_shape_preserved(self, rng):
        blk = make(MSTB)
        assert blk(tokens(rng, b=2, h=6, w=10), 6, 10, [0, 1, 1, 1]).shape == (2, 60, 16)

    def test_gsa_disabled_bypasses_fourth_branch(self, rng):
        cfg = BackboneConfig(**{**TINY.__dict__, "gsa_enabled": False})
        blk = make(MSTB, cfg)
        x = tokens(rng)
        assert len(blk.branches) == 3
        np.testing.assert_array_equal(blk(x, 8, 8, [1, 1, 1, 1]).data, blk(x, 8, 8, [1, 1, 1, 0]).data)


class TestMSTG:
    def test_all_on_equals_ungated(self, rng):
        grp = make(MSTG)
        x = tokens(rng)
        np.testing.assert_array_equal(grp(x, 8, 8, [1, 1, 1, 1]).data, grp(x, 8, 8).data)

    def test_shape_preserved(self, rng):
        grp = make(MSTG)
        assert grp(tokens(rng, h=5, w=7), 5, 7, [1, 0, 0, 1]).shape == (1, 35, 16)

    def test_both_blocks_see_same_routes(self, rng, monkeypatch):
        grp = make(MSTG)
        seen = []
        for blk in grp.blocks:
            orig = blk.attend
            monkeypatch.setattr(blk, "attend", lambda *a, _o=orig, **k: (seen.append(tuple(a[3])), _o(*a, **k))[1])
        grp(tokens(rng), 8, 8, np.array([0, 1, 1, 0]))
        assert seen == [(0, 1, 1, 0), (0, 1, 1, 0)]


class TestBackbone:
    def test_output_shape(self, rng):
        bb = make(Backbone)
        img = Tensor(rng.random((2, 3, 12, 10)), dtype=np.float64)
        assert bb(img).shape == (2, TINY.out_channels, 12, 10)

    def test_full_config_out_channels(self):
        assert full_config().backbone.out_channels == 64

    def test_all_on_equals_baseline_bitwise(self, rng):
        bb = make(Backbone)
        img = Tensor(rng.random((1, 3, 16, 16)), dtype=np.float64)
        np.testing.assert_array_equal(bb(img, np.ones(8, dtype=int)).data, bb(img).data)

    def test_routed_equals_dense_bitwise(self, rng):
        bb = make(Backbone)
        img = Tensor(rng.random((1, 3, 16, 16)), dtype=np.float64)
        for _ in range(3):
            r = rng.integers(0, 2, 8)
            np.testing.assert_array_equal(bb(img, r).data, bb(img, r, dense=True).data)

    def test_per_sample_routing_matches_individual_runs(self, rng):
        bb = make(Backbone)
        img = Tensor(rng.random((3, 3, 8, 8)), dtype=np.float64)
        routes = np.array([[1, 0, 1, 0, 1, 1, 1, 1], [0, 1, 1, 0, 0, 0, 1, 1], [1, 0, 1, 0, 1, 1, 1, 1]])
        out = bb(img, routes).data
        for i in range(3):
            single = bb(Tensor(img.data[i:i + 1]), routes[i]).data
            np.testing.assert_allclose(out[i:i + 1], single, rtol=1e-12, atol=1e-12)

    def test_wrong_routing_length(self, rng):
        bb = make(Backbone)
        with pytest.raises(ContractError):
            bb(Tensor(rng.random((1, 3, 8, 8))), np.ones(5))

    def test_gates_carry_gradient_to_router_probabilities(self, rng):
        bb = make(Backbone)
        gates = Tensor(np.array([[1.0, 0, 1, 1, 0, 1, 1, 1]]), requires_grad=True, dtype=np.float64)
        bb(Tensor(rng.random((1, 3, 8, 8)), dtype=np.float64), gates).sum().backward()
        assert gates.grad is not None
        # inactive branches did not execute, so their gate receives nothing
        assert gates.grad[0, 1] == 0 and gates.grad[0, 4] == 0
        assert np.all(gates.grad[0, [0, 2, 3, 5, 6, 7]] != 0)


class TestParamCount:
    def test_hand_count_small_config(self):
        cfg = BackboneConfig(n_groups=1, channels=8, local_windows=(2, 4, 8), global_window=8, pool_size=4,
                             heads=1, mlp_ratio=2, out_channels=64)
        # per MSTB: LN 16 + qkv 4*(2*6) = 48 + proj 64 + LN 16 + MLP (8*16+16) + (16*8+8) = 280  -> 424
        # per MSTG: 2*424 + conv 9*8*8+8 = 584                                                    -> 1432
        # shallow 9*3*8+8 = 224, body 584, head 9*8*64+64 = 4672
        expected = 224 + 1432 + 584 + 4672
        assert param_count(cfg) == expected == 6912
        assert make(Backbone, cfg).num_parameters() == expected

    def test_tiny_closed_form_matches_module(self):
        assert make(Backbone).num_parameters() == param_count(TINY)

    def test_full_config_band(self):
        n = param_count(full_config().backbone)
        assert 8.25e6 <= n <= 10.1e6

    def test_router_delta_small(self):
        cfg = full_config()
        router = Router(cfg.backbone.n_groups, cfg.router, np.random.default_rng(0))
        assert router.num_parameters() < 0.05e6

    def test_count_independent_of_routing(self, rng):
        bb = make(Backbone)
        before = bb.num_parameters()
        bb(Tensor(rng.random((1, 3, 8, 8))), rng.integers(0, 2, 8))
        assert bb.num_parameters() == before == param_count(TINY)

    def test_relative_bias_counted(self):
        cfg = BackboneConfig(**{**TINY.__dict__, "relative_bias": True})
        assert make(Backbone, cfg).num_parameters() == param_count(cfg)
