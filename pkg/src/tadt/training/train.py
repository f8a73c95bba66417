"""Two-stage training: Baseline (all branches, L1 only) then routed TADT fine-tuning."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..config import RunConfig
from ..model import SRNetwork
from ..tensor import Tensor
from ..toolkit import checkpoint as ckpt_io
from .data import Batch, make_batch, toy_dataset
from .evaluate import evaluate
from .loss import total_loss
from .optim import Adam

log = logging.getLogger(__name__)

STAGES = ("baseline", "tadt")


class StartupError(RuntimeError):
    pass


@dataclass
class TrainState:
    stage: str
    model: SRNetwork
    optimizer: Adam
    rng: np.random.Generator
    step: int = 0
    history: list = field(default_factory=list)


def lr_at(step: int, total: int, base: float) -> float:
    """Step decay: halve every quarter of the run."""
    quarter = max(total // 4, 1)
    return base * 0.5 ** (step // quarter)


def to_checkpoint(state: TrainState, cfg: RunConfig) -> ckpt_io.Checkpoint:
    text = cfg.to_text() + f"meta.stage = {state.stage}\nmeta.step = {state.step}\n"
    opt = state.optimizer
    return ckpt_io.Checkpoint(
        config_text=text,
        tensors={k: v.data for k, v in state.model.state_dict().items()},
        optimizer_step=opt.state["t"],
        optimizer=opt.state_tensors(),
        rng_state=ckpt_io.rng_to_bytes(state.rng),
    )


def model_from_checkpoint(ck: ckpt_io.Checkpoint) -> tuple[SRNetwork, RunConfig, str]:
    cfg = RunConfig.from_text(ck.run_config_text())
    stage = ck.meta().get("stage", "baseline")
    model = SRNetwork(cfg, with_router=(stage == "tadt"))
    model.load_state_dict(ck.tensors)
    return model, cfg, stage


def _new_state(stage: str, cfg: RunConfig, seed: int, baseline) -> TrainState:
    tc = cfg.train
    if stage not in STAGES:
        raise StartupError(f"unknown stage {stage!r}")
    model = SRNetwork(cfg, seed=seed)
    if stage == "tadt":
        if baseline is None:
            raise StartupError("the tadt stage needs a baseline checkpoint")
        if isinstance(baseline, str):
            try:
                baseline = ckpt_io.load(baseline)
            except ckpt_io.CheckpointError as exc:
                raise StartupError(str(exc)) from exc
        tensors = baseline.tensors if isinstance(baseline, ckpt_io.Checkpoint) else \
            {k: v.data for k, v in baseline.state_dict().items()}
        model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("router.")})
        model.add_router(seed)
    params = model.named_parameters()
    return TrainState(stage, model, Adam(params, tc.lr, tc.betas, tc.eps), np.random.default_rng(seed))


def _resume_state(resume) -> tuple[TrainState, RunConfig]:
    ck = ckpt_io.load(resume) if isinstance(resume, str) else resume
    model, cfg, stage = model_from_checkpoint(ck)
    tc = cfg.train
    opt = Adam(model.named_parameters(), tc.lr, tc.betas, tc.eps)
    opt.load_state_tensors(ck.optimizer_step or 0, ck.optimizer or {})
    st = TrainState(stage, model, opt, ckpt_io.rng_from_bytes(ck.rng_state), int(ck.meta().get("step", 0)))
    return st, cfg


def train_step(state: TrainState, batch: Batch, cfg: RunConfig) -> dict:
    tc = cfg.train
    model = state.model
    dtype = T.get_default_dtype()
    img = Tensor(batch.lr, dtype=dtype)
    state.optimizer.zero_grad()
    if state.stage == "baseline":
        pred, dec = model(img, batch.coords, batch.cell, routing="baseline")
        losses = total_loss(pred, batch.rgb, lam=0.0)
    else:
        pred, dec = model(img, batch.coords, batch.cell, s=batch.scale, routing="sample", rng=state.rng)
        losses = total_loss(pred, batch.rgb, dec.beta, batch.scale, tc.lam, (tc.alpha1, tc.alpha2, tc.alpha3))
    losses.total.backward()
    state.optimizer.step(lr_at(state.step, tc.steps, tc.lr))
    state.step += 1
    rec = {
        "step": state.step,
        "l1": float(losses.l1.item()),
        "l_beta": float(losses.l_beta.item()) if losses.l_beta is not None else 0.0,
        "beta": float(dec.beta.data.mean()) if dec is not None else None,
        "active_branches": (float(dec.routes.data.sum(axis=1).mean()) if dec is not None
                            else float(4 * cfg.backbone.n_groups)),
    }
    return rec


def train(stage: str, cfg: RunConfig, images: list | None = None, steps: int | None = None,
          seed: int | None = None, baseline=None, resume=None, log_path: str | None = None,
          val_images: list | None = None, stop_after: int | None = None,
          checkpoint_path: str | None = None) -> TrainState:
    """Run (or continue) one training stage.

    ``stop_after`` ends the run early after that many total steps (the
    schedule still assumes ``cfg.train.steps``); the returned state can be
    checkpointed and resumed.
    """
    if resume is not None:
        state, cfg = _resume_state(resume)
    else:
        cfg = cfg.for_stage(stage)
        if steps is not None:
            cfg.train.steps = steps
        if seed is not None:
            cfg.train.seed = seed
        state = _new_state(stage, cfg, cfg.train.seed, baseline)
    tc = cfg.train
    if images is None:
        images = toy_dataset(tc.toy_images, tc.toy_min_size, tc.toy_max_size)
    end = tc.steps if stop_after is None else min(stop_after, tc.steps)
    fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        while state.step < end:
            batch = make_batch(images, state.rng, tc.batch_size, tc.patch, (tc.scale_min, tc.scale_max))
            rec = train_step(state, batch, cfg)
            if val_images and tc.val_every and state.step % tc.val_every == 0:
                rec["psnr"] = evaluate(state.model, val_images, 2.0,
                                       "threshold" if state.stage == "tadt" else "baseline")["psnr"]
            state.history.append(rec)
            if fh and state.step % max(tc.log_every, 1) == 0:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if state.step % 100 == 0:
                log.info("%s step %d l1=%.5f", state.stage, state.step, rec["l1"])
    finally:
        if fh:
            fh.close()
    if checkpoint_path:
        ckpt_io.save(checkpoint_path, to_checkpoint(state, cfg))
    return state
