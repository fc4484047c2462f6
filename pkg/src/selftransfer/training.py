"""Training loops: supervised with mean teacher, pseudo-labeling, adaptation training.

All loops are deterministic functions of (architecture, data, config.seed):
initialization, batch order and input noise draw from generators derived from
the config seed, so identical configs reproduce identical metrics.
"""

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import (
    Dataset,
    PROVENANCE_REAL,
    PROVENANCE_PSEUDO,
    ROLE_PSEUDO,
    TimeSeriesSample,
    denormalize_values,
    normalize_values,
)
from .mmd import MkMmdConfig
from .networks import (
    DanTrArch,
    DanTrNet,
    SurrogateArch,
    SurrogateNet,
    clone_module,
    dantr_loss,
    make_dantr,
    make_surrogate,
)
from .seeding import derive_seed

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    n_steps: int = 1000
    batch_size: int = 16
    base_lr: float = 1e-3
    lr_min: float = 1e-4
    ema_alpha: float = 0.999
    consistency_weight_max: float = 1.0
    consistency_ramp_fraction: float = 0.3
    input_noise_std: float = 0.01
    labeled_upweight: float = 1.0
    eval_interval: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 1 or self.batch_size < 1:
            raise ValueError("n_steps and batch_size must be >= 1")
        if not 0 <= self.ema_alpha < 1:
            raise ValueError("ema_alpha must be in [0, 1)")
        if not 0 < self.consistency_ramp_fraction <= 1:
            raise ValueError("consistency_ramp_fraction must be in (0, 1]")
        if self.consistency_weight_max < 0 or self.input_noise_std < 0:
            raise ValueError("consistency weight and noise std must be >= 0")
        if self.base_lr <= 0 or self.lr_min <= 0 or self.lr_min > self.base_lr:
            raise ValueError("need 0 < lr_min <= base_lr")
        if self.labeled_upweight <= 0:
            raise ValueError("labeled_upweight must be positive")


def cosine_lr(step: int, config: TrainConfig) -> float:
    """Cosine decay from base_lr at step 0 to lr_min at the last step."""
    progress = min(step, config.n_steps) / config.n_steps
    return config.lr_min + 0.5 * (config.base_lr - config.lr_min) * (
        1.0 + math.cos(math.pi * progress)
    )


def consistency_weight(step: int, config: TrainConfig) -> float:
    ramp_steps = config.consistency_ramp_fraction * config.n_steps
    return config.consistency_weight_max * min(1.0, step / ramp_steps)


class _Batcher:
    """Cycles through shuffled index batches; reshuffles whenever exhausted."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.gen = torch.Generator().manual_seed(seed)
        self._queue = []

    def next(self) -> torch.Tensor:
        if not self._queue:
            perm = torch.randperm(self.n, generator=self.gen)
            self._queue = list(torch.split(perm, self.batch_size))
        return self._queue.pop(0)


def dataset_tensors(dataset: Dataset, need_output: bool = True):
    """Normalized (n, T, 1) input/output tensors of a dataset (requires fitted norm)."""
    if dataset.norm is None:
        raise ValueError(f"dataset with role {dataset.role!r} has no normalization params")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    norm = dataset.norm
    x = normalize_values(dataset.input_matrix(), norm.input_min, norm.input_max)
    x_t = torch.from_numpy(x).unsqueeze(-1)
    if not need_output:
        return x_t, None
    y = normalize_values(dataset.output_matrix(), norm.output_min, norm.output_max)
    return x_t, torch.from_numpy(y).unsqueeze(-1)


def _stack_training_data(datasets, labeled_upweight: float):
    datasets = [datasets] if isinstance(datasets, Dataset) else list(datasets)
    if not datasets:
        raise ValueError("no training datasets given")
    norm = datasets[0].norm
    for ds in datasets[1:]:
        if ds.norm != norm:
            raise ValueError("all training datasets must share the same normalization params")
    xs, ys, ws = [], [], []
    for ds in datasets:
        x, y = dataset_tensors(ds)
        xs.append(x)
        ys.append(y)
        w = labeled_upweight if ds.samples[0].provenance == PROVENANCE_REAL else 1.0
        ws.append(torch.full((len(ds),), w, dtype=torch.float64))
    return torch.cat(xs), torch.cat(ys), torch.cat(ws)


@torch.no_grad()
def _eval_tensors(model, x: torch.Tensor, y: torch.Tensor, chunk: int = 128) -> float:
    total = 0.0
    for i in range(0, x.shape[0], chunk):
        pred = model(x[i:i + chunk])
        total += float(((pred - y[i:i + chunk]) ** 2).mean(dim=(1, 2)).sum())
    return total / x.shape[0]


def model_fn_of(model):
    """Evaluation callable of a model: the target branch for adaptation nets."""
    return model.forward_target if isinstance(model, DanTrNet) else model


def evaluate_mse(model, dataset: Dataset) -> float:
    """Mean over samples of the per-sample MSE in normalized coordinates."""
    if any(s.provenance != PROVENANCE_REAL for s in dataset.samples):
        raise ValueError("evaluation needs real-labeled samples")
    x, y = dataset_tensors(dataset)
    return _eval_tensors(model_fn_of(model), x, y)


class _MetricsLog:
    def __init__(self, path):
        self.path = None if path is None else Path(path)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def append(self, record: dict):
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record) + "\n")


@torch.no_grad()
def ema_update(teacher, student, alpha: float) -> None:
    """theta_T <- alpha * theta_T + (1 - alpha) * theta_S, entry-wise."""
    t_params = list(teacher.parameters())
    s_params = list(student.parameters())
    if len(t_params) != len(s_params) or any(
        tp.shape != sp.shape for tp, sp in zip(t_params, s_params)
    ):
        raise ValueError("teacher/student parameter shapes do not match")
    for tp, sp in zip(t_params, s_params):
        tp.mul_(alpha).add_(sp, alpha=1.0 - alpha)


@dataclass
class SupervisedResult:
    student: SurrogateNet
    teacher: SurrogateNet
    history: list
    student_val_mse: float
    teacher_val_mse: float


def train_supervised(
    arch: SurrogateArch,
    train_data,
    config: TrainConfig,
    val: Dataset,
    log_path=None,
) -> SupervisedResult:
    """Minibatch MSE training with a mean-teacher consistency term.

    `train_data` is one dataset or a sequence of datasets sharing one
    normalization (e.g. a pseudo-labeled set plus the real labeled set);
    real-labeled samples can be upweighted via the config.
    """
    x, y, w = _stack_training_data(train_data, config.labeled_upweight)
    x_val, y_val = dataset_tensors(val)
    student = make_surrogate(arch, derive_seed(config.seed, "init"))
    teacher = clone_module(student)
    for p in teacher.parameters():
        p.requires_grad_(False)

    opt = torch.optim.Adam(
        student.parameters(), lr=config.base_lr, betas=ADAM_BETAS, eps=ADAM_EPS
    )
    batcher = _Batcher(x.shape[0], config.batch_size, derive_seed(config.seed, "batch"))
    g_noise = torch.Generator().manual_seed(derive_seed(config.seed, "noise"))
    log = _MetricsLog(log_path)
    history = []
    t_start = time.time()

    for step in range(config.n_steps):
        lr = cosine_lr(step, config)
        for group in opt.param_groups:
            group["lr"] = lr
        idx = batcher.next()
        xb, yb, wb = x[idx], y[idx], w[idx]

        opt.zero_grad()
        pred = student(xb)
        per_sample = ((pred - yb) ** 2).mean(dim=(1, 2))
        loss = (per_sample * wb).sum() / wb.sum()
        w_cons = consistency_weight(step, config)
        if w_cons > 0:
            noisy = xb
            if config.input_noise_std > 0:
                noisy = xb + config.input_noise_std * torch.randn(
                    xb.shape, generator=g_noise, dtype=torch.float64
                )
            with torch.no_grad():
                target_pred = teacher(xb)
            loss = loss + w_cons * torch.mean((student(noisy) - target_pred) ** 2)
        if not torch.isfinite(loss):
            raise RuntimeError(
                f"non-finite training loss at step {step} (lr={lr:.3g}); aborting"
            )
        loss.backward()
        opt.step()
        ema_update(teacher, student, config.ema_alpha)

        if step % config.eval_interval == 0 or step == config.n_steps - 1:
            record = {
                "step": step,
                "train_loss": loss.item(),
                "val_mse": _eval_tensors(student, x_val, y_val),
                "teacher_val_mse": _eval_tensors(teacher, x_val, y_val),
                "lr": lr,
                "consistency_weight": w_cons,
                "wall_time": time.time() - t_start,
            }
            history.append(record)
            log.append(record)

    return SupervisedResult(
        student=student,
        teacher=teacher,
        history=history,
        student_val_mse=history[-1]["val_mse"],
        teacher_val_mse=history[-1]["teacher_val_mse"],
    )


def pseudo_label(model, pool: Dataset, count: int, seed: int) -> Dataset:
    """Label `count` pool samples (chosen uniformly without replacement) with
    the model's predictions, producing a pseudo-source dataset in raw units."""
    if count > len(pool):
        raise ValueError(f"requested {count} pseudo samples from a pool of {len(pool)}")
    if pool.norm is None:
        raise ValueError("pool has no normalization params")
    chosen = sorted(np.random.default_rng(seed).choice(len(pool), size=count, replace=False))
    norm = pool.norm
    fn = model_fn_of(model)
    samples = []
    with torch.no_grad():
        for lo in range(0, len(chosen), 256):
            batch_idx = chosen[lo:lo + 256]
            inputs = np.stack([pool.samples[i].input for i in batch_idx])
            x = torch.from_numpy(
                normalize_values(inputs, norm.input_min, norm.input_max)
            ).unsqueeze(-1)
            pred = fn(x).squeeze(-1).numpy()
            outputs = denormalize_values(pred, norm.output_min, norm.output_max)
            for row, i in enumerate(batch_idx):
                parent = pool.samples[i]
                samples.append(
                    TimeSeriesSample(parent.id, parent.input, outputs[row], PROVENANCE_PSEUDO)
                )
    return Dataset(samples=tuple(samples), role=ROLE_PSEUDO, dt=pool.dt, norm=pool.norm)


@dataclass
class DanTrResult:
    net: DanTrNet
    history: list
    trace: dict = field(default_factory=dict)  # per-step reg / mmd / lambda lists
    val_mse: float = math.nan


def train_dantr(
    arch: DanTrArch,
    source: Dataset,
    target: Dataset,
    config: TrainConfig,
    mmd_config: MkMmdConfig,
    val: Dataset,
    log_path=None,
    detach_adaptation_mmd: bool = False,
    apply_consistency: bool = False,
    symmetric_head_init: bool = True,
) -> DanTrResult:
    """Adaptation training: per-step source and target minibatches, composite loss.

    The tiny target set is recycled with reshuffling. The MMD weight follows
    the sigmoid schedule in the training step. Consistency regularization is
    off by default here (it belongs to the pseudo-label phase); when enabled
    it perturbs the target branch input.

    `target` is one real-labeled dataset, optionally followed by high-quality
    pseudo-labeled extensions (pass a sequence).
    """
    targets = [target] if isinstance(target, Dataset) else list(target)
    if len(source) == 0 or any(len(t) == 0 for t in targets) or not targets:
        raise ValueError("source and target datasets must be non-empty")
    if any(s.provenance != PROVENANCE_REAL for s in targets[0].samples):
        raise ValueError("target dataset must carry real labels")
    x_s, y_s = dataset_tensors(source)
    x_t, y_t, _ = _stack_training_data(targets, 1.0)
    x_val, y_val = dataset_tensors(val)

    net = make_dantr(arch, derive_seed(config.seed, "init"), symmetric_heads=symmetric_head_init)
    opt = torch.optim.Adam(net.parameters(), lr=config.base_lr, betas=ADAM_BETAS, eps=ADAM_EPS)
    batch_s = _Batcher(x_s.shape[0], config.batch_size, derive_seed(config.seed, "batch-source"))
    batch_t = _Batcher(x_t.shape[0], config.batch_size, derive_seed(config.seed, "batch-target"))
    g_noise = torch.Generator().manual_seed(derive_seed(config.seed, "noise"))
    log = _MetricsLog(log_path)
    history = []
    trace = {"step": [], "reg": [], "mmd": [], "lam": []}
    t_start = time.time()

    for step in range(config.n_steps):
        lr = cosine_lr(step, config)
        for group in opt.param_groups:
            group["lr"] = lr
        ids, idt = batch_s.next(), batch_t.next()

        opt.zero_grad()
        bundle = net(x_s[ids], x_t[idt], representation=mmd_config.representation)
        parts = dantr_loss(
            bundle, y_s[ids], y_t[idt], step, config.n_steps, mmd_config,
            detach_adaptation_mmd=detach_adaptation_mmd,
        )
        loss = parts.total
        if apply_consistency:
            w_cons = consistency_weight(step, config)
            if w_cons > 0:
                noisy = x_t[idt] + config.input_noise_std * torch.randn(
                    x_t[idt].shape, generator=g_noise, dtype=torch.float64
                )
                loss = loss + w_cons * torch.mean(
                    (net.forward_target(noisy) - bundle.y_hat_t.detach()) ** 2
                )
        if not torch.isfinite(loss):
            raise RuntimeError(
                f"non-finite adaptation loss at step {step} "
                f"(reg={parts.reg.item():.3g}, mmd={parts.mmd.item():.3g}); aborting"
            )
        loss.backward()
        opt.step()

        trace["step"].append(step)
        trace["reg"].append(parts.reg.item())
        trace["mmd"].append(parts.mmd.item())
        trace["lam"].append(parts.lam)

        if step % config.eval_interval == 0 or step == config.n_steps - 1:
            record = {
                "step": step,
                "reg": parts.reg.item(),
                "mmd": parts.mmd.item(),
                "lam": parts.lam,
                "val_mse": _eval_tensors(net.forward_target, x_val, y_val),
                "lr": lr,
                "wall_time": time.time() - t_start,
            }
            history.append(record)
            log.append(record)

    return DanTrResult(
        net=net, history=history, trace=trace, val_mse=history[-1]["val_mse"]
    )
