"""Training loop for the bridge noise estimator."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .. import bridge
from .adam import AdamState, optimizer_step
from .network import ArchDescriptor, DenoiserParams, init_params, loss_and_grad


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 6000
    batch_size: int = 4
    micro_batch: int = 4
    learning_rate: float = 5e-5
    seed: int = 0
    ema_decay: float | None = None

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1 or self.micro_batch < 1:
            raise ValueError("iterations and batch sizes must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.ema_decay is not None and not (0.0 < self.ema_decay < 1.0):
            raise ValueError("ema_decay must lie in (0, 1)")


@dataclass
class TrainResult:
    params: DenoiserParams
    loss_curve: list            # [(iteration, loss)]
    opt_state: AdamState
    ema_params: DenoiserParams | None = None
    seconds: float = 0.0


def _iteration_batch(dataset, sched, cfg: TrainConfig, iteration: int):
    """Draws for one iteration, derived from (seed, iteration) only.

    Independence from the loop history makes training resumable without
    replaying the RNG.
    """
    rng = np.random.default_rng((cfg.seed, iteration))
    idx = rng.integers(0, len(dataset), size=cfg.batch_size)
    ks = rng.integers(1, sched.K + 1, size=cfg.batch_size)
    noise_seeds = rng.integers(0, 2**62, size=cfg.batch_size)
    return [(dataset[i].x0, dataset[i].x1, int(k), int(s))
            for i, k, s in zip(idx, ks, noise_seeds)]


def accumulate_loss_and_grad(params, batch, sched, micro_batch: int):
    """Gradient of the batch-mean loss, accumulated over micro-batches.

    Chunk gradients are combined in float64 with per-chunk weights so the
    result matches a single full-batch call.
    """
    n = len(batch)
    total_loss = 0.0
    total = None
    for lo in range(0, n, micro_batch):
        chunk = batch[lo:lo + micro_batch]
        loss, grads = loss_and_grad(params, chunk, sched)
        w = len(chunk) / n
        total_loss += w * loss
        if total is None:
            total = {k: w * g.astype(np.float64) for k, g in grads.items()}
        else:
            for k, g in grads.items():
                total[k] += w * g.astype(np.float64)
    return total_loss, total


def train(dataset, sched: bridge.Schedule, cfg: TrainConfig,
          arch: ArchDescriptor | None = None,
          params: DenoiserParams | None = None,
          opt_state: AdamState | None = None,
          start_iteration: int = 0,
          on_log=None, log_every: int = 100,
          on_checkpoint=None, checkpoint_every: int = 1000) -> TrainResult:
    """Train the noise estimator on paired images.

    Each iteration samples (pair, timestep, noise seed) triples keyed on the
    config seed, evaluates the bridge regression loss and takes one Adam
    step. Deterministic for a fixed seed; resumable from (params, opt_state,
    start_iteration).
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    if params is None:
        params = init_params(arch or ArchDescriptor(), seed=cfg.seed)
    if opt_state is None:
        opt_state = AdamState.initial(params)
    ema = params.copy() if cfg.ema_decay is not None else None

    t0 = time.perf_counter()
    curve = []
    for it in range(start_iteration, cfg.iterations):
        batch = _iteration_batch(dataset, sched, cfg, it)
        loss, grads = accumulate_loss_and_grad(params, batch, sched, cfg.micro_batch)
        params, opt_state = optimizer_step(params, grads, opt_state, cfg.learning_rate)
        if ema is not None:
            d = cfg.ema_decay
            for k in ema.tensors:
                ema.tensors[k] = d * ema.tensors[k] + (1.0 - d) * params.tensors[k]
        curve.append((it, loss))
        if on_log is not None and (it % log_every == 0 or it == cfg.iterations - 1):
            on_log(it, loss)
        if on_checkpoint is not None and ((it + 1) % checkpoint_every == 0
                                          or it == cfg.iterations - 1):
            on_checkpoint(it + 1, params, opt_state, ema)
    return TrainResult(params=params, loss_curve=curve, opt_state=opt_state,
                       ema_params=ema, seconds=time.perf_counter() - t0)
