"""Training loop with deterministic batching and bit-exact resume.

The batch drawn at step k depends only on (seed, k), never on loop
state, so a run that stops at step m and resumes from its checkpoint
replays exactly the steps a straight run would have taken.  One metrics
row per step goes to the csv log: step,lr,seg_loss,sim,total.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import load_into_model, save_checkpoint
from .errors import FpanError, TrainingDiverged
from .losses import make_target_map, seg_loss, sim_loss, total_loss
from .optim import decayed_lr, make_optimizer

METRICS_HEADER = "step,lr,seg_loss,sim,total"


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 8
    optimizer: str = "rmsprop"
    lr: float = 0.03
    lr_decay: float = 0.9
    lr_interval: int = 500
    sim_weight: float = 0.1
    weight_decay: float = 1e-4
    seed: int = 0
    stop_loss: float | None = None
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise FpanError("steps and batch_size must be positive")
        if self.seed < 0:
            raise FpanError("seed must be non-negative")
        if self.lr_interval < 1:
            raise FpanError("lr_interval must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainResult:
    steps_run: int
    final_loss: float
    history: list = field(default_factory=list)


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Stateless draw for one step: with-replacement uniform indices."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, step]))
    return rng.integers(0, n, size=batch_size)


def _snapshot(model, opt, completed):
    return ({k: t.data.copy() for k, t in model.named_params().items()},
            opt.state_dict(), completed)


def _restore(model, opt, snap):
    data, state, completed = snap
    for k, t in model.named_params().items():
        t.data = data[k].copy()
        t.grad = None
    opt.load_state(state)
    return completed


def train_model(model, samples, cfg: TrainConfig, ckpt_path=None,
                metrics_path=None, resume=None, log=None) -> TrainResult:
    """Optimize the model on a list of scene samples.

    samples: sequence with .image, .query (numpy arrays in [0, 1]) and
    .gt_box.  Writes the final checkpoint plus a json sidecar holding
    the model config next to it, and per-step metric rows when asked.
    On a non-finite loss the last good state is written out and
    TrainingDiverged raised.
    """
    if not samples:
        raise FpanError("cannot train on an empty sample list")
    size = model.cfg.input_size
    targets = [make_target_map(s.gt_box, size) for s in samples]

    params = model.named_params()
    opt = make_optimizer(cfg.optimizer, params)
    start = 0
    if resume is not None:
        start, opt_state = load_into_model(resume, model)
        opt.load_state(opt_state)
        if start >= cfg.steps:
            raise FpanError(f"checkpoint already has {start} steps, config wants {cfg.steps}")

    mfh = None
    if metrics_path is not None:
        mode = "a" if (resume is not None and start > 0) else "w"
        mfh = open(metrics_path, mode)
        if mode == "w":
            mfh.write("# " + json.dumps(cfg.to_dict(), sort_keys=True) + "\n")
            mfh.write(METRICS_HEADER + "\n")

    def save(completed):
        if ckpt_path is not None:
            save_checkpoint(ckpt_path, model.named_params(), step=completed,
                            opt_state=opt.state_dict())
            with open(str(ckpt_path) + ".json", "w") as fh:
                json.dump({"network": model.cfg.to_dict(),
                           "train": cfg.to_dict()}, fh, sort_keys=True, indent=1)

    history = []
    last_good = _snapshot(model, opt, start)
    final_loss = float("nan")
    completed = start
    try:
        for step in range(start, cfg.steps):
            idx = batch_indices(len(samples), cfg.batch_size, cfg.seed, step)
            seg_terms, sim_terms = [], []
            for i in idx:
                s = samples[i]
                fwd = model.forward(s.image, s.query)
                fg = model.localization_map(fwd)
                seg_terms.append(seg_loss(fg, targets[i]))
                sim_terms.append(sim_loss(fwd.top_features, fwd.top_attention,
                                          fwd.query_top, model.sim_head))
            total, mseg, msim = total_loss(seg_terms, sim_terms, params.values(),
                                           cfg.sim_weight, cfg.weight_decay)
            loss_val = total.item()
            seg_val, sim_val = mseg.item(), msim.item()
            if not np.isfinite(loss_val):
                completed = _restore(model, opt, last_good)
                save(completed)
                raise TrainingDiverged(
                    f"non-finite loss at step {step}; kept state from step {completed}")
            opt.zero_grad()
            total.backward()
            lr = decayed_lr(cfg.lr, step, cfg.lr_decay, cfg.lr_interval)
            opt.step(lr)
            opt.zero_grad()
            if not all(np.isfinite(t.data).all() for t in params.values()):
                completed = _restore(model, opt, last_good)
                save(completed)
                raise TrainingDiverged(
                    f"parameters overflowed at step {step}; kept state from step {completed}")

            completed = step + 1
            final_loss = loss_val
            last_good = _snapshot(model, opt, completed)
            row = {"step": step, "lr": lr, "seg_loss": seg_val,
                   "sim": sim_val, "total": loss_val}
            history.append(row)
            if mfh is not None:
                mfh.write(f"{step},{lr:.8g},{seg_val:.8g},{sim_val:.8g},{loss_val:.8g}\n")
                mfh.flush()
            if log is not None and (step % cfg.log_every == 0 or step == cfg.steps - 1):
                log(f"step {step:5d}  lr {lr:.5f}  seg {seg_val:.4f}  "
                    f"sim {sim_val:+.4f}  total {loss_val:.4f}")
            if cfg.stop_loss is not None and loss_val < cfg.stop_loss:
                if log is not None:
                    log(f"stop: loss {loss_val:.4f} under {cfg.stop_loss} at step {step}")
                break
    finally:
        if mfh is not None:
            mfh.close()

    save(completed)
    return TrainResult(steps_run=completed, final_loss=final_loss, history=history)
