"""Adam, cosine annealing with warm restarts, and the training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DomainError, NumericsError, ShapeError, StateError
from .evaluation import nmse_db, ssim
from .nn.models import Model, save_checkpoint
from .nn.ops import mse_loss
from .transforms import QuantileTransform, encode_map


@dataclass(frozen=True)
class ScheduleConfig:
    lr_max: float = 1e-4
    lr_min: float = 1e-7
    restart_iterations: tuple = (10_000, 20_000, 40_000)
    total_iterations: int = 50_000
    restart_weights: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "restart_iterations", tuple(int(r) for r in self.restart_iterations))
        object.__setattr__(self, "restart_weights", tuple(float(w) for w in self.restart_weights))
        r = self.restart_iterations
        if self.total_iterations < 0:
            raise ConfigError("total_iterations must be >= 0", "total_iterations")
        if any(b <= a for a, b in zip(r, r[1:])) or (r and (r[0] <= 0 or r[-1] >= self.total_iterations)):
            raise ConfigError(f"restarts {r} must be strictly increasing inside (0, total)",
                              "restart_iterations")
        if len(self.restart_weights) != len(r):
            raise ConfigError("one restart weight per restart iteration", "restart_weights")
        if not 0 <= self.lr_min < self.lr_max:
            raise ConfigError(f"need 0 <= lr_min < lr_max, got {self.lr_min}, {self.lr_max}", "lr_min")

    def scaled(self, total_iterations: int) -> "ScheduleConfig":
        """Same period structure, stretched or shrunk to ``total_iterations``."""
        f = total_iterations / self.total_iterations
        return replace(self, total_iterations=total_iterations,
                       restart_iterations=tuple(round(r * f) for r in self.restart_iterations))

    def period(self, t: int):
        """``(start, length, weight)`` of the period containing iteration ``t``."""
        bounds = (0,) + self.restart_iterations + (self.total_iterations,)
        k = int(np.searchsorted(bounds, t, side="right")) - 1
        weight = 1.0 if k == 0 else self.restart_weights[k - 1]
        return bounds[k], bounds[k + 1] - bounds[k], weight


def annealed_lr(lr_max, lr_min, t_cur, t_i, weight=1.0) -> float:
    """Cosine decay from ``weight * lr_max`` at ``t_cur = 0`` to ``lr_min`` at ``t_cur = t_i``."""
    return lr_min + (weight * lr_max - lr_min) * (1.0 + math.cos(math.pi * t_cur / t_i)) / 2.0


def cosine_lr(schedule: ScheduleConfig, t: int) -> float:
    if not 0 <= t < schedule.total_iterations:
        raise DomainError(f"iteration {t} outside [0, {schedule.total_iterations})")
    start, length, weight = schedule.period(t)
    return annealed_lr(schedule.lr_max, schedule.lr_min, t - start, length, weight)


@dataclass
class OptimState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw) -> "OptimState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params, grads, state: OptimState, lr: float) -> OptimState:
    """Bias-corrected Adam; updates ``params`` and the moment buffers in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer buffers differ in count")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ShapeError(f"parameter {i}: shape {p.shape}, gradient {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter {i} at optimizer step {state.t + 1}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** state.t, 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


@dataclass(frozen=True)
class TrainConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    batch_size: int = 16
    seed: int = 0
    validation_interval: int = 500
    checkpoint_path: str = None
    log_path: str = None
    max_validation_pairs: int = 256

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", "batch_size")
        if self.validation_interval < 1:
            raise ConfigError("validation_interval must be >= 1", "validation_interval")


@dataclass
class LogRecord:
    iteration: int
    lr: float
    train_loss: float
    val_ssim: float
    val_nmse_db: float

    def line(self) -> str:
        return (f"{self.iteration}, {self.lr:.6e}, {self.train_loss:.6e}, "
                f"{self.val_ssim:.6f}, {self.val_nmse_db:.4f}")


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    best_iteration: int = -1
    best_val_ssim: float = -math.inf


def batch_indices(n: int, batch_size: int, seed: int):
    """Endless stream of index batches; each epoch is a fresh seeded permutation."""
    rng = np.random.default_rng(seed)
    order, pos = rng.permutation(n), 0
    while True:
        batch = []
        while len(batch) < batch_size:
            if pos == n:
                order, pos = rng.permutation(n), 0
            take = min(batch_size - len(batch), n - pos)
            batch.extend(order[pos:pos + take])
            pos += take
        yield np.asarray(batch)


def encode_pairs(pairs, transform):
    """Stack transformed LR inputs and HR targets as (N, 1, H, W) arrays."""
    xs = [encode_map(transform, p.lr.values)[0] for p in pairs]
    ys = [encode_map(transform, p.hr.values)[0] for p in pairs]
    return np.stack(xs)[:, None], np.stack(ys)[:, None]


def validate(model: Model, transform, pairs, batch_size=32):
    """Mean transformed-domain SSIM and mean physical NMSE (dB) over ``pairs``."""
    ssims, nmses = [], []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        enc_lr = [encode_map(transform, p.lr.values) for p in chunk]
        pred = np.clip(model.forward(np.stack([e[0] for e in enc_lr])[:, None])[:, 0], 0.0, 1.0)
        for p, y, (_, inv) in zip(chunk, pred, enc_lr):
            target, _ = encode_map(transform, p.hr.values)
            ssims.append(ssim(y, target))
            nmses.append(nmse_db(p.hr, inv.inverse(y)))
    return float(np.mean(ssims)), float(np.mean(nmses))


def train(model: Model, split, transform, cfg: TrainConfig, restore_best=True) -> TrainLog:
    """Minimise transformed-domain MSE on ``split.train`` in place; returns the log.

    Every ``validation_interval`` iterations (and after the last one) the model
    is scored on up to ``max_validation_pairs`` validation pairs; the parameters
    with the best validation SSIM are written to ``checkpoint_path`` and, with
    ``restore_best``, loaded back into ``model`` at the end.
    """
    if isinstance(transform, QuantileTransform) and not transform.fitted:
        raise StateError("fit the quantile transform on HR training data before training")
    sched = cfg.schedule
    log = TrainLog()
    if not split.train:
        raise DomainError("training split is empty")
    x_all, y_all = encode_pairs(split.train, transform)
    val_pairs = split.validation[:cfg.max_validation_pairs]
    params = model.parameters()
    state = OptimState.for_params([p.value for p in params])
    batches = batch_indices(len(split.train), cfg.batch_size, cfg.seed)
    best_state = None
    log_fh = open(cfg.log_path, "a", encoding="utf-8") if cfg.log_path else None
    try:
        interval_losses = []
        for t in range(sched.total_iterations):
            lr = cosine_lr(sched, t)
            idx = next(batches)
            model.zero_grad()
            pred = model.forward(x_all[idx])
            loss, grad = mse_loss(pred, y_all[idx])
            if not math.isfinite(loss):
                raise NumericsError(f"non-finite training loss at iteration {t}")
            model.backward(grad)
            adam_step([p.value for p in params], [p.grad for p in params], state, lr)
            log.losses.append(loss)
            interval_losses.append(loss)
            done = t + 1
            if done % cfg.validation_interval and done != sched.total_iterations:
                continue
            val_ssim, val_nmse = validate(model, transform, val_pairs) if val_pairs else (math.nan, math.nan)
            rec = LogRecord(done, lr, float(np.mean(interval_losses)), val_ssim, val_nmse)
            interval_losses = []
            log.records.append(rec)
            if log_fh:
                log_fh.write(rec.line() + "\n")
                log_fh.flush()
            if val_pairs and val_ssim > log.best_val_ssim:
                log.best_val_ssim, log.best_iteration = val_ssim, done
                best_state = model.state()
                if cfg.checkpoint_path:
                    save_checkpoint(model, cfg.checkpoint_path)
    finally:
        if log_fh:
            log_fh.close()
    if best_state is None and cfg.checkpoint_path:
        save_checkpoint(model, cfg.checkpoint_path)
    if restore_best and best_state is not None:
        model.load_state(best_state)
    return log
