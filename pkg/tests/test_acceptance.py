"""Acceptance criteria, one test (and one PASS/FAIL line) per criterion.

The lines are printed as the tests run and repeated in the terminal summary
under "acceptance criteria".  Criterion 9 trains both stages on the toy set
and takes several minutes on one CPU core.
"""
import time

import numpy as np
import pytest

from tadt import tensor as T
from tadt.backbone import param_count, sliceable_projection
from tadt.config import full_config, tiny_config, toy_config
from tadt.flops import count_flops, measure_flops, projection_macs
from tadt.model import SRNetwork
from tadt.router import Router, modulate, sample_routes
from tadt.tensor import Tensor
from tadt.toolkit import checkpoint as ckpt_io
from tadt.training.data import toy_dataset
from tadt.training.evaluate import evaluate
from tadt.training.loss import LAMBDA, intensity_threshold, total_loss
from tadt.training.train import train
from tadt.verification import end_to_end_check, op_checks


@pytest.fixture
def report(acceptance_log):
    def emit(n: int, title: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {n:2d}  {title}" + (f"  [{detail}]" if detail else "")
        print(line, flush=True)
        acceptance_log.append(line)
        assert ok, line
    return emit


def test_01_sliced_projection(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst32, bitwise64 = 0.0, True
    for _ in range(100):
        r = rng.integers(0, 2, 4)
        o = [rng.standard_normal((64, 4)) for _ in range(4)]
        w = rng.standard_normal((16, 16))
        for dtype in (np.float32, np.float64):
            oj = [x.astype(dtype) for x in o]
            oracle = np.concatenate([oj[j] * dtype(r[j]) for j in range(4)], axis=1) @ w.astype(dtype)
            blocks = [Tensor(oj[j], dtype=dtype) if r[j] else None for j in range(4)]
            out = sliceable_projection(blocks, Tensor(w, dtype=dtype), r)
            got = np.zeros_like(oracle) if out is None else out.data
            if dtype == np.float64:
                bitwise64 &= np.array_equal(got, oracle)
            else:
                worst32 = max(worst32, float(np.abs(got - oracle).max()))
    elapsed = time.perf_counter() - t0
    ok = worst32 <= 1e-5 and bitwise64 and elapsed < 5
    report(1, "sliced projection equals zero-block dense oracle", ok,
           f"f32 max diff {worst32:.2e}, f64 bitwise {bitwise64}, {elapsed:.2f}s")


def test_02_gating_equivalence(report):
    t0 = time.perf_counter()
    cfg = tiny_config()
    assert (cfg.backbone.n_groups, cfg.backbone.channels) == (2, 16)
    rng = np.random.default_rng(202)
    with T.default_dtype(np.float64):
        net = SRNetwork(cfg, seed=2, with_router=True)
    img = Tensor(rng.random((1, 3, 16, 16)), dtype=np.float64)
    coords = rng.uniform(-1, 1, (1, 50, 2))
    cell = np.full((1, 50, 2), 2 / 32)

    def forward(routes, dense=False):
        return net.upsampler(net.backbone(img, routes, dense=dense), coords, cell).data

    routed_ok = True
    for _ in range(4):
        r = rng.integers(0, 2, cfg.backbone.routing_length)
        routed_ok &= np.array_equal(forward(r), forward(r, dense=True))
    all_on_ok = np.array_equal(forward(np.ones(cfg.backbone.routing_length, dtype=int)), forward(None))
    elapsed = time.perf_counter() - t0
    report(2, "routed forward equals zeroed-branch dense forward; all-on equals baseline",
           routed_ok and all_on_ok and elapsed < 30,
           f"routed bitwise {routed_ok}, all-on bitwise {all_on_ok}, {elapsed:.1f}s")


def test_03_gradient_suite(report):
    t0 = time.perf_counter()
    ops = op_checks(seed=0)
    e64, r64, zero64 = end_to_end_check(dtype=np.float64)
    e32, r32, zero32 = end_to_end_check(dtype=np.float32)
    elapsed = time.perf_counter() - t0
    op_worst = max(c.error for c in ops)
    per_op_ok = all(c.passed and c.tol <= 1e-5 for c in ops)
    # the f32 end-to-end bound is the pinned 1e-3
    e2e_ok = e64.passed and r64.passed and e32.error <= 1e-3 and r32.error <= 1e-3
    ok = per_op_ok and e2e_ok and zero64 and zero32 and elapsed < 300
    report(3, "finite-difference gradient suite", ok,
           f"{len(ops)} ops worst {op_worst:.1e}; end-to-end f64 {e64.error:.1e}, f32 {e32.error:.1e}; "
           f"gated-off zero grad {zero64 and zero32}; {elapsed:.0f}s")


def test_04_straight_through(report):
    rng = np.random.default_rng(404)
    p = Tensor(rng.uniform(0, 1, (2, 32)), requires_grad=True, dtype=np.float64)
    c = rng.standard_normal((2, 32))
    r = sample_routes(p, "train", np.random.default_rng(5))
    T.tsum(r * Tensor(c, dtype=np.float64)).backward()
    grad_ok = np.array_equal(p.grad, c)
    mean = float(sample_routes(Tensor(np.full((1, 100_000), 0.3), dtype=np.float64), "train",
                               np.random.default_rng(2024)).data.mean())
    q = Tensor(np.random.default_rng(0).random((4, 32)))
    repro = (sample_routes(q, "train", np.random.default_rng(9)).data.tobytes()
             == sample_routes(q, "train", np.random.default_rng(9)).data.tobytes())
    report(4, "straight-through gradient, Bernoulli mean, seeded reproducibility",
           grad_ok and abs(mean - 0.3) <= 0.005 and repro,
           f"dL/dp == c {grad_ok}, mean {mean:.4f}, reproducible {repro}")


def test_05_modulation(report):
    uniform_ok = True
    for c in (-2.0, 0.0, 1.7):
        p = modulate(Tensor(np.full((1, 8), c), dtype=np.float64), Tensor([[0.37]], dtype=np.float64), 2)
        uniform_ok &= np.array_equal(p.data, np.full((1, 8), 0.37))
    sig = np.array([0.8, 0.1, 0.1, 0.1])
    e = Tensor([np.log(sig / (1 - sig))], dtype=np.float64)
    got = modulate(e, Tensor([[0.6]], dtype=np.float64), 1).data[0]
    oracle = np.minimum(0.6 * 4 * sig / sig.sum(), 1.0)
    err = float(np.abs(got - oracle).max())
    published = float(np.abs(got - [1.0, 0.2182, 0.2182, 0.2182]).max())
    report(5, "intensity modulation of routing probabilities", uniform_ok and err <= 1e-4 and published <= 1e-4,
           f"uniform logits give beta {uniform_ok}, clamp example {np.round(got, 4).tolist()}")


def test_06_loss_constants(report):
    t4 = float(intensity_threshold(4.0))
    pred = Tensor(np.zeros((1, 5, 3)), dtype=np.float64)
    grads = {}
    for beta0 in (0.9, 0.3):  # above and below t(4)
        beta = Tensor([[beta0]], requires_grad=True, dtype=np.float64)
        total_loss(pred, np.ones((1, 5, 3)), beta, np.array([4.0])).total.backward()
        grads[beta0] = float(beta.grad[0, 0])
    ok = t4 == 0.75 and LAMBDA == 2e-4 and grads[0.9] == pytest.approx(LAMBDA * 1.0, rel=1e-12) \
        and grads[0.3] == 0.0
    report(6, "intensity threshold and loss gradient constants", ok,
           f"t(4) = {t4}, dL/dbeta = {grads[0.9]:.1e} (M=1), {grads[0.3]} (M=0)")


def test_07_flops_accounting(report):
    rng = np.random.default_rng(707)
    agree = True
    for _ in range(5):
        cfg = tiny_config()
        cfg.backbone.n_groups = int(rng.integers(1, 3))
        cfg.backbone.channels = int(rng.choice([8, 16]))
        cfg.backbone.pool_size = int(rng.choice([2, 4]))
        cfg.upsampler.local_ensemble = bool(rng.integers(2))
        r = rng.integers(0, 2, cfg.backbone.routing_length)
        h, w = (int(v) for v in rng.integers(6, 13, 2))
        counted = count_flops(cfg, r, h, w, 2.0, include_router=True).matmul_conv_flops()
        agree &= measure_flops(cfg, r, h, w, 2.0, include_router=True) == counted
    full = projection_macs(full_config(), [1] * 4, 64, 48)
    scaling = all(4 * projection_macs(full_config(), [1] * k + [0] * (4 - k), 64, 48) == k * full
                  for k in range(5))
    bounded = all(count_flops(tiny_config(), rng.integers(0, 2, 8), 24, 20, 3.0).dynamic_for_r
                  <= count_flops(tiny_config(), np.ones(8), 24, 20, 3.0).static_all_on for _ in range(50))
    ref = count_flops(full_config(), np.ones(32), 1020, 768, 2.0).static_all_on / 1e9
    report(7, "FLOPs count matches instrumented measurement", agree and scaling and bounded,
           f"measured == counted {agree}, k/4 scaling {scaling}, dynamic <= static {bounded}; "
           f"full config 1020x768 x2: {ref:.0f} GFLOPs (published reference 6986.92 G, other convention)")


def test_08_parameter_count(report):
    cfg = full_config()
    assert cfg.backbone.mlp_ratio == 2
    net = SRNetwork(cfg)
    baseline = net.num_parameters()
    router = Router(cfg.backbone.n_groups, cfg.router, np.random.default_rng(0)).num_parameters()
    tiny = SRNetwork(tiny_config())
    tiny_ok = tiny.backbone.num_parameters() == param_count(tiny_config().backbone)
    ok = abs(baseline - 9.17e6) <= 0.1 * 9.17e6 and router < 0.05e6 and tiny_ok
    report(8, "parameter counts", ok,
           f"baseline {baseline / 1e6:.3f}M (reference 9.17M), router delta {router / 1e6:.4f}M, "
           f"tiny closed form {tiny_ok}")


@pytest.fixture(scope="module")
def toy_runs():
    cfg = toy_config()
    assert (cfg.backbone.n_groups, cfg.backbone.channels) == (2, 32)
    images = toy_dataset(cfg.train.toy_images, cfg.train.toy_min_size, cfg.train.toy_max_size)
    held_out = toy_dataset(cfg.train.val_images, cfg.train.toy_min_size, cfg.train.toy_max_size, seed=777)
    t0 = time.perf_counter()
    base = train("baseline", cfg, images=images)
    base_time = time.perf_counter() - t0
    tadt_start = train("tadt", cfg, images=images, baseline=base.model, stop_after=0)
    tadt = train("tadt", cfg, images=images, baseline=base.model)
    return {
        "cfg": cfg, "tadt_start": tadt_start,
        "base": base, "base_time": base_time, "tadt": tadt, "images": images,
        "base_eval": evaluate(base.model, held_out, 2.0, "baseline"),
        "tadt_eval": {s: evaluate(tadt.model, held_out, s, "threshold") for s in (2.0, 4.0)},
    }


def test_09_toy_end_to_end(report, toy_runs):
    base, tadt_eval = toy_runs["base_eval"], toy_runs["tadt_eval"][2.0]
    gain = base["psnr"] - base["bicubic_psnr"]
    drop = base["psnr"] - tadt_eval["psnr"]
    cheaper = tadt_eval["mean_dynamic_flops"] < tadt_eval["mean_static_flops"]
    steps = toy_runs["base"].step
    ok = gain >= 0.3 and steps <= 10_000 and toy_runs["base_time"] < 15 * 60 and drop <= 0.2 and cheaper
    beta2, beta4 = tadt_eval["mean_beta"], toy_runs["tadt_eval"][4.0]["mean_beta"]
    print(f"observation: mean beta x4 {beta4:.4f} vs x2 {beta2:.4f} "
          f"({'rises' if beta4 >= beta2 else 'does not rise'} with scale)")
    report(9, "toy training: baseline beats bicubic, routed model keeps quality at lower cost", ok,
           f"baseline {base['psnr']:.2f} dB vs bicubic {base['bicubic_psnr']:.2f} (+{gain:.2f}) in {steps} steps "
           f"/ {toy_runs['base_time']:.0f}s; routed {tadt_eval['psnr']:.2f} dB; dynamic/static FLOPs "
           f"{tadt_eval['mean_dynamic_flops'] / tadt_eval['mean_static_flops']:.3f}; "
           f"beta x2 {beta2:.3f}, x4 {beta4:.3f}")


def fixed_batch_loss(model, cfg, images, n_batches=16, seed=4242):
    """Mean total loss on a fixed set of batches with a fixed routing seed."""
    from tadt.training.data import make_batch
    tc, rng = cfg.train, np.random.default_rng(seed)
    total = 0.0
    with T.no_grad():
        for _ in range(n_batches):
            b = make_batch(images, rng, tc.batch_size, tc.patch, (tc.scale_min, tc.scale_max))
            pred, dec = model(Tensor(b.lr), b.coords, b.cell, s=b.scale, routing="sample", rng=rng)
            total += total_loss(pred, b.rgb, dec.beta, b.scale, tc.lam).total.item()
    return total / n_batches


def test_routed_stage_loss_decreases(toy_runs):
    # per-step losses are dominated by batch-to-batch variance, so compare the
    # stage's start and end models on identical batches and routing draws
    cfg, images = toy_runs["cfg"].for_stage("tadt"), toy_runs["images"]
    start = fixed_batch_loss(toy_runs["tadt_start"].model, cfg, images)
    end = fixed_batch_loss(toy_runs["tadt"].model, cfg, images)
    print(f"routed stage fixed-batch loss: step 0 {start:.5f} -> step {toy_runs['tadt'].step} {end:.5f}")
    assert toy_runs["tadt"].step == 500
    assert end < start


def _small_run_cfg():
    cfg = tiny_config()
    cfg.train.patch, cfg.train.batch_size, cfg.train.scale_max = 8, 2, 3.0
    return cfg


def test_10_determinism_and_persistence(report, tmp_path):
    images = toy_dataset(6, 32, 40)
    logs = []
    for i in range(2):
        path = tmp_path / f"run{i}.jsonl"
        train("baseline", _small_run_cfg(), images=images, steps=6, seed=3, log_path=str(path))
        logs.append(path.read_bytes())
    logs_equal = logs[0] == logs[1] and len(logs[0]) > 0

    base = train("baseline", _small_run_cfg(), images=images, steps=3, seed=3)
    whole = train("tadt", _small_run_cfg(), images=images, steps=6, seed=4, baseline=base.model)
    half = train("tadt", _small_run_cfg(), images=images, steps=6, seed=4, baseline=base.model, stop_after=3,
                 checkpoint_path=str(tmp_path / "half.ckpt"))
    blob = (tmp_path / "half.ckpt").read_bytes()
    ck = ckpt_io.from_bytes(blob)
    round_trip = ckpt_io.to_bytes(ck) == blob and all(
        ck.tensors[k].data.tobytes() == v.data.tobytes() for k, v in half.model.state_dict().items())
    rest = train("tadt", _small_run_cfg(), images=images, resume=ck)
    resumed_ok = half.history + rest.history == whole.history and all(
        rest.model.state_dict()[k].data.tobytes() == v.data.tobytes() for k, v in whole.model.state_dict().items())
    report(10, "determinism, checkpoint round-trip, resume", logs_equal and round_trip and resumed_ok,
           f"identical logs {logs_equal}, bitwise checkpoint {round_trip}, resume step-for-step {resumed_ok}")
