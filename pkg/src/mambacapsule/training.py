"""Losses, schedules, Adam, and the training loop."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .config import LossConfig, ScheduleConfig, TrainConfig
from .errors import DimensionError, NumericError
from .metrics import confusion, per_class_metrics
from .tensor import Tape, Tensor, mse, relu

# training log: one line per epoch, space-separated key=value pairs in this order
LOG_KEYS = ("epoch", "step", "lr", "m_plus", "margin_loss", "recon_loss", "total_loss",
            "test_acc", "test_macro_acc", "test_macro_f1")


def margin_loss(norms: Tensor, labels, m_plus: float, cfg: LossConfig) -> Tensor:
    """Batch mean of sum_k T_k max(0, m+ - |v_k|)^2 + lam (1 - T_k) max(0, |v_k| - m-)^2."""
    b, k = norms.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != b:
        raise DimensionError(f"{labels.shape[0]} labels for batch of {b}")
    if np.any((labels < 0) | (labels >= k)):
        raise IndexError(f"labels must lie in [0, {k})")
    t = np.zeros((b, k))
    t[np.arange(b), labels] = 1.0
    pos = relu(m_plus - norms) ** 2
    neg = relu(norms - cfg.m_minus) ** 2
    return (pos * t + neg * (cfg.lam * (1.0 - t))).sum(axis=1).mean()


def center_window(x: np.ndarray | Tensor, length: int):
    L = x.shape[-1]
    if length > L:
        raise DimensionError(f"window of {length} samples exceeds signal length {L}")
    start = (L - length) // 2
    return x[..., start:start + length]


def reconstruction_loss(recon: Tensor, x) -> Tensor:
    """MSE between the reconstruction and the centred window of the original beat."""
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    target = center_window(x, recon.shape[-1])
    return mse(recon, Tensor(target))


def total_loss(margin: Tensor, recon: Tensor, recon_weight: float) -> Tensor:
    return margin + recon * recon_weight


def lr_at(step: int, s: ScheduleConfig) -> float:
    if step <= s.warmup_steps:
        return s.lr_peak * step / s.warmup_steps
    progress = min(1.0, (step - s.warmup_steps) / (s.total_steps - s.warmup_steps))
    return s.lr_min + 0.5 * (s.lr_peak - s.lr_min) * (1.0 + math.cos(math.pi * progress))


def m_plus_at(step: int, s: ScheduleConfig) -> float:
    progress = min(1.0, max(0.0, step / s.total_steps))
    return s.m_plus_start + (s.m_plus_end - s.m_plus_start) * 0.5 * (1.0 - math.cos(math.pi * progress))


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads, lr: float):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.data = p.data - lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


def resolved_recon_weight(cfg: LossConfig, recon_len: int) -> float:
    return 0.0005 * recon_len if cfg.recon_weight is None else cfg.recon_weight


def batch_loss(model, x, y, m_plus: float, lcfg: LossConfig, recon_weight: float,
               training: bool = False, rng=None):
    """(total, margin, recon) for one batch; reconstruction uses the true-label capsule."""
    out = model(x, training=training, rng=rng)
    margin = margin_loss(out.norms, y, m_plus, lcfg)
    recon = reconstruction_loss(model.reconstruct(out, y), x)
    return total_loss(margin, recon, recon_weight), margin, recon


def shard_gradients(model, x, y, m_plus, lcfg, recon_weight, weight, rng):
    params = model.parameters()
    with Tape() as tape:
        total, margin, recon = batch_loss(model, x, y, m_plus, lcfg, recon_weight, True, rng)
        if not np.isfinite(total.data):
            where = tape.first_nonfinite()
            what = f"op '{where[0]}' output of shape {where[1]}" if where else "the loss"
            raise NumericError(f"non-finite loss; first non-finite tensor: {what}")
    tape.backward(total, accumulate=False)
    grads = [tape.grad_of(p) * weight for p in params]
    return grads, margin.item() * weight, recon.item() * weight


def evaluate(model, x, y, n_classes: int, names=()):
    preds = model.predict(x)
    return confusion(preds, y, n_classes, tuple(names))


@dataclass
class TrainResult:
    model: object
    log: list = field(default_factory=list)


def format_log(record: dict) -> str:
    parts = []
    for key in LOG_KEYS:
        v = record[key]
        parts.append(f"{key}={v}" if isinstance(v, (int, np.integer)) else f"{key}={v:.10g}")
    return " ".join(parts)


def train(model, train_xy, test_xy, tcfg: TrainConfig, names=(), out_dir=None, log_fn=None,
          meta: dict | None = None) -> TrainResult:
    """Minibatch Adam with warmup-cosine learning rate and a rising positive margin.

    Data-parallel shards (``tcfg.workers``) each run on their own tape and the
    weighted gradients are summed before the update. Dropout streams are
    seeded from (seed, step, shard), so a run is reproducible from its seed.
    """
    tcfg.validate()
    x_tr, y_tr = (np.asarray(a) for a in train_xy)
    x_te, y_te = (np.asarray(a) for a in test_xy)
    n = len(x_tr)
    k = model.cfg.n_classes
    lcfg = tcfg.loss
    recon_w = resolved_recon_weight(lcfg, model.cfg.recon_len)
    per_epoch = math.ceil(n / tcfg.batch_size)
    sched = tcfg.schedule(tcfg.epochs * per_epoch)
    params = model.parameters()
    opt = Adam(params, tcfg.beta1, tcfg.beta2, tcfg.adam_eps)
    rng = np.random.default_rng(tcfg.seed)
    pool = ThreadPoolExecutor(tcfg.workers) if tcfg.workers > 1 else None
    result = TrainResult(model)
    step = 0
    try:
        for epoch in range(tcfg.epochs):
            t0 = time.perf_counter()
            order = rng.permutation(n)
            sums = np.zeros(2)
            for b in range(per_epoch):
                idx = order[b * tcfg.batch_size:(b + 1) * tcfg.batch_size]
                mp = m_plus_at(step, sched)
                step += 1
                lr = lr_at(step, sched)
                shards = [s for s in np.array_split(idx, min(tcfg.workers, len(idx))) if len(s)]
                jobs = [(model, x_tr[s], y_tr[s], mp, lcfg, recon_w, len(s) / len(idx),
                         np.random.default_rng([tcfg.seed, step, j])) for j, s in enumerate(shards)]
                results = list(pool.map(lambda a: shard_gradients(*a), jobs)) if pool else \
                    [shard_gradients(*a) for a in jobs]
                grads = [sum(r[0][i] for r in results) for i in range(len(params))]
                opt.step(grads, lr)
                sums += [sum(r[1] for r in results) * len(idx), sum(r[2] for r in results) * len(idx)]
            margin_avg, recon_avg = sums / n
            record = {"epoch": epoch, "step": step, "lr": lr, "m_plus": mp,
                      "margin_loss": margin_avg, "recon_loss": recon_avg,
                      "total_loss": margin_avg + recon_w * recon_avg}
            if len(x_te):
                rep = per_class_metrics(evaluate(model, x_te, y_te, k, names))
                record.update(test_acc=rep.overall_accuracy, test_macro_acc=rep.macro["acc"],
                              test_macro_f1=rep.macro["f1_acc_sen"])
            else:
                record.update(test_acc=float("nan"), test_macro_acc=float("nan"), test_macro_f1=float("nan"))
            record["seconds"] = time.perf_counter() - t0
            result.log.append(record)
            if log_fn is not None:
                log_fn(format_log(record))
            if out_dir is not None:
                checkpoint.save(f"{out_dir}/model.ckpt", model, meta)
    finally:
        if pool is not None:
            pool.shutdown()
    return result
