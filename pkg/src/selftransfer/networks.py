"""Sequence surrogate networks and the three-branch adaptation network.

The plain surrogate is a stack of LSTM layers plus a per-timestep dense head
(one real output per step). The adaptation network has a shared LSTM encoder
and two structurally identical tailored heads; its adaptation branch runs the
*source* head on *target* inputs, so it owns no parameters of its own, and
its regression output is excluded from the regression loss by construction.

Everything runs in double precision.
"""

import copy
import hashlib
import json
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .mmd import MkMmdConfig, layer_mmd_sum, mmd_weight


def _fingerprint(obj) -> str:
    payload = json.dumps(
        {"class": type(obj).__name__, **asdict(obj)}, sort_keys=True, default=str
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SurrogateArch:
    """Plain sequence-to-sequence surrogate: LSTM stack + per-step dense head."""

    n_recurrent_layers: int = 3
    n_dense_layers: int = 2   # including the linear output layer
    hidden_dim: int = 200

    def __post_init__(self):
        if self.hidden_dim < 1 or self.n_recurrent_layers < 1 or self.n_dense_layers < 1:
            raise ValueError(f"invalid architecture {self}")

    def fingerprint(self) -> str:
        return _fingerprint(self)


@dataclass(frozen=True)
class DanTrArch:
    """Shared encoder + two tailored heads (source / target), all equal width."""

    shared_recurrent_layers: int = 2
    tailored_recurrent_layers: int = 2
    tailored_dense_layers: int = 2   # including the linear output layer
    hidden_dim: int = 128

    def __post_init__(self):
        if (
            self.hidden_dim < 1
            or self.shared_recurrent_layers < 1
            or self.tailored_recurrent_layers < 1
            or self.tailored_dense_layers < 1
        ):
            raise ValueError(f"invalid architecture {self}")

    def fingerprint(self) -> str:
        return _fingerprint(self)

    def target_branch_arch(self) -> SurrogateArch:
        """Architecture of the (shared + target head) path seen as a plain surrogate."""
        return SurrogateArch(
            n_recurrent_layers=self.shared_recurrent_layers + self.tailored_recurrent_layers,
            n_dense_layers=self.tailored_dense_layers,
            hidden_dim=self.hidden_dim,
        )


def _lstm_stack(input_dim: int, hidden_dim: int, n_layers: int) -> nn.ModuleList:
    layers = []
    for i in range(n_layers):
        layers.append(
            nn.LSTM(input_dim if i == 0 else hidden_dim, hidden_dim, batch_first=True).double()
        )
    return nn.ModuleList(layers)


def _dense_stack(hidden_dim: int, n_layers: int) -> nn.ModuleList:
    layers = []
    for i in range(n_layers):
        out_dim = 1 if i == n_layers - 1 else hidden_dim
        layers.append(nn.Linear(hidden_dim, out_dim).double())
    return nn.ModuleList(layers)


def _run_lstms(layers: nn.ModuleList, x: torch.Tensor, collect: bool):
    outputs = []
    h = x
    for layer in layers:
        h, _ = layer(h)
        if collect:
            outputs.append(h)
    return h, outputs


def _run_dense(layers: nn.ModuleList, x: torch.Tensor, collect: bool):
    outputs = []
    h = x
    for i, layer in enumerate(layers):
        h = layer(h)
        if i < len(layers) - 1:
            h = torch.relu(h)
        if collect:
            outputs.append(h)
    return h, outputs


def check_finite(pred: torch.Tensor, what: str) -> torch.Tensor:
    """Raise with the first offending timestep if the prediction blew up."""
    if torch.isfinite(pred).all():
        return pred
    bad = (~torch.isfinite(pred)).any(dim=-1).any(dim=0).nonzero()
    step = int(bad[0]) if len(bad) else -1
    raise RuntimeError(f"non-finite activations in {what} at step {step}")


class SurrogateNet(nn.Module):
    """Causal sequence-to-sequence regressor, (B, T, 1) -> (B, T, 1)."""

    def __init__(self, arch: SurrogateArch):
        super().__init__()
        self.arch = arch
        self.lstm_layers = _lstm_stack(1, arch.hidden_dim, arch.n_recurrent_layers)
        self.dense_layers = _dense_stack(arch.hidden_dim, arch.n_dense_layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, _ = _run_lstms(self.lstm_layers, x, collect=False)
        y, _ = _run_dense(self.dense_layers, h, collect=False)
        return check_finite(y, "surrogate forward")


class TailoredHead(nn.Module):
    """LSTM + dense head on top of shared features; can expose per-layer states."""

    def __init__(self, arch: DanTrArch):
        super().__init__()
        self.lstm_layers = _lstm_stack(
            arch.hidden_dim, arch.hidden_dim, arch.tailored_recurrent_layers
        )
        self.dense_layers = _dense_stack(arch.hidden_dim, arch.tailored_dense_layers)
        self.n_recurrent = arch.tailored_recurrent_layers

    def forward(self, x: torch.Tensor, collect: bool = False):
        h, lstm_seqs = _run_lstms(self.lstm_layers, x, collect)
        y, dense_seqs = _run_dense(self.dense_layers, h, collect)
        return y, lstm_seqs + dense_seqs


def summarize_hidden(seqs, n_recurrent: int, representation: str):
    """Reduce per-layer (B, T, d) activation sequences to one vector per sample.

    `final-step` keeps the last hidden state of recurrent layers and the
    time-mean of per-step dense activations; `mean-over-time` averages every
    layer over time.
    """
    summaries = []
    for idx, h in enumerate(seqs):
        if representation == "final-step" and idx < n_recurrent:
            summaries.append(h[:, -1, :])
        else:
            summaries.append(h.mean(dim=1))
    return summaries


@dataclass
class ForwardBundle:
    """Branch outputs and per-layer tailored-head states of one adaptation forward."""

    y_hat_s: torch.Tensor
    y_hat_t: torch.Tensor
    y_hat_st: torch.Tensor | None
    hidden_adapt: list | None
    hidden_target: list


class DanTrNet(nn.Module):
    """Three-branch network; the adaptation branch aliases the source head."""

    def __init__(self, arch: DanTrArch):
        super().__init__()
        self.arch = arch
        self.shared = _lstm_stack(1, arch.hidden_dim, arch.shared_recurrent_layers)
        self.source_head = TailoredHead(arch)
        self.target_head = TailoredHead(arch)

    def forward(
        self,
        x_s: torch.Tensor,
        x_t: torch.Tensor,
        representation: str = "final-step",
        compute_adaptation: bool = True,
    ) -> ForwardBundle:
        enc_s, _ = _run_lstms(self.shared, x_s, collect=False)
        enc_t, _ = _run_lstms(self.shared, x_t, collect=False)
        y_s, _ = self.source_head(enc_s)
        y_t, target_seqs = self.target_head(enc_t, collect=True)
        check_finite(y_s, "source branch")
        check_finite(y_t, "target branch")
        hidden_target = summarize_hidden(
            target_seqs, self.target_head.n_recurrent, representation
        )
        y_st = None
        hidden_adapt = None
        if compute_adaptation:
            y_st, adapt_seqs = self.source_head(enc_t, collect=True)
            check_finite(y_st, "adaptation branch")
            hidden_adapt = summarize_hidden(
                adapt_seqs, self.source_head.n_recurrent, representation
            )
        return ForwardBundle(y_s, y_t, y_st, hidden_adapt, hidden_target)

    def forward_target(self, x: torch.Tensor) -> torch.Tensor:
        """Target-branch prediction (shared encoder + target head), used for evaluation."""
        enc, _ = _run_lstms(self.shared, x, collect=False)
        y, _ = self.target_head(enc)
        return check_finite(y, "target branch")

    def branch_parameters(self) -> dict:
        """Parameter storage of each branch; the adaptation entries alias the source head."""
        shared = list(self.shared.parameters())
        source = list(self.source_head.parameters())
        target = list(self.target_head.parameters())
        return {
            "source": {"shared": shared, "tailored": source},
            "target": {"shared": shared, "tailored": target},
            "adaptation": {"shared": shared, "tailored": source},
        }


@dataclass
class LossTerms:
    total: torch.Tensor
    reg: torch.Tensor
    mmd: torch.Tensor
    lam: float


def dantr_loss(
    bundle: ForwardBundle,
    y_s: torch.Tensor,
    y_t: torch.Tensor,
    step: int,
    total_steps: int,
    mmd_config: MkMmdConfig,
    detach_adaptation_mmd: bool = False,
) -> LossTerms:
    """Composite loss: per-branch MSE plus the weighted layer-wise MMD.

    The adaptation output never enters the regression term; the MMD term
    backpropagates into both the adaptation path (shared + source head) and
    the target path unless `detach_adaptation_mmd` cuts the former.
    """
    if bundle.y_hat_s.shape != y_s.shape or bundle.y_hat_t.shape != y_t.shape:
        raise ValueError(
            f"prediction/target shape mismatch: {tuple(bundle.y_hat_s.shape)} vs "
            f"{tuple(y_s.shape)}, {tuple(bundle.y_hat_t.shape)} vs {tuple(y_t.shape)}"
        )
    reg = torch.mean((bundle.y_hat_s - y_s) ** 2) + torch.mean((bundle.y_hat_t - y_t) ** 2)
    lam = mmd_weight(step, total_steps)
    if bundle.hidden_adapt is None:
        mmd_val = torch.zeros((), dtype=torch.float64)
    else:
        hidden_adapt = bundle.hidden_adapt
        if detach_adaptation_mmd:
            hidden_adapt = [h.detach() for h in hidden_adapt]
        mmd_val = layer_mmd_sum(hidden_adapt, bundle.hidden_target, mmd_config)
    return LossTerms(total=reg + lam * mmd_val, reg=reg, mmd=mmd_val, lam=lam)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def init_params(module: nn.Module, seed: int) -> nn.Module:
    """Uniform fan-in-scaled weights, zero biases, forget-gate bias 1; deterministic."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if "weight" in name:
                bound = 1.0 / p.shape[-1] ** 0.5
                p.copy_((torch.rand(p.shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound)
            else:
                p.zero_()
                if "bias_ih" in name:
                    h = p.shape[0] // 4
                    p[h:2 * h] = 1.0  # forget gate
    return module


def make_surrogate(arch: SurrogateArch, seed: int) -> SurrogateNet:
    return init_params(SurrogateNet(arch), seed)


def make_dantr(arch: DanTrArch, seed: int, symmetric_heads: bool = True) -> DanTrNet:
    """Build and initialize the three-branch network.

    With `symmetric_heads` the target head starts as a copy of the source
    head, so the branches coincide at step 0 (zero initial MMD) and only
    diverge as their data pulls them apart; this shortens adaptation
    training considerably on small step budgets.
    """
    net = init_params(DanTrNet(arch), seed)
    if symmetric_heads:
        net.target_head.load_state_dict(net.source_head.state_dict())
    return net


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def extract_target_surrogate(net: DanTrNet) -> SurrogateNet:
    """Copy the (shared + target head) path into a standalone surrogate network."""
    surrogate = SurrogateNet(net.arch.target_branch_arch())
    with torch.no_grad():
        lstm_sources = list(net.shared) + list(net.target_head.lstm_layers)
        for dst, src in zip(surrogate.lstm_layers, lstm_sources):
            dst.load_state_dict(src.state_dict())
        for dst, src in zip(surrogate.dense_layers, net.target_head.dense_layers):
            dst.load_state_dict(src.state_dict())
    return surrogate


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(
    path,
    kind: str,
    surrogate_arch: SurrogateArch,
    student: nn.Module,
    teacher: nn.Module | None = None,
    dantr_arch: DanTrArch | None = None,
    dantr_net: DanTrNet | None = None,
    optimizer: torch.optim.Optimizer | None = None,
    rng_state: torch.Tensor | None = None,
    meta: dict | None = None,
) -> None:
    """Write a self-describing checkpoint; `student` is the model used for evaluation
    and pseudo-labeling (for adaptation runs, the extracted target branch)."""
    payload = {
        "kind": kind,
        "surrogate_arch": asdict(surrogate_arch),
        "fingerprint": surrogate_arch.fingerprint(),
        "student_state": student.state_dict(),
        "teacher_state": None if teacher is None else teacher.state_dict(),
        "dantr_arch": None if dantr_arch is None else asdict(dantr_arch),
        "dantr_fingerprint": None if dantr_arch is None else dantr_arch.fingerprint(),
        "dantr_state": None if dantr_net is None else dantr_net.state_dict(),
        "optimizer_state": None if optimizer is None else optimizer.state_dict(),
        "rng_state": rng_state,
        "meta": meta or {},
    }
    torch.save(payload, path)


@dataclass
class Checkpoint:
    kind: str
    surrogate_arch: SurrogateArch
    student_state: dict
    teacher_state: dict | None
    dantr_arch: DanTrArch | None
    dantr_state: dict | None
    optimizer_state: dict | None
    rng_state: object
    meta: dict

    def make_student(self) -> SurrogateNet:
        net = SurrogateNet(self.surrogate_arch)
        net.load_state_dict(self.student_state)
        return net

    def make_teacher(self) -> SurrogateNet | None:
        if self.teacher_state is None:
            return None
        net = SurrogateNet(self.surrogate_arch)
        net.load_state_dict(self.teacher_state)
        return net

    def make_dantr(self) -> DanTrNet | None:
        if self.dantr_state is None:
            return None
        net = DanTrNet(self.dantr_arch)
        net.load_state_dict(self.dantr_state)
        return net


def load_checkpoint(path, expected_arch: SurrogateArch | None = None) -> Checkpoint:
    """Load a checkpoint, refusing architecture-fingerprint mismatches."""
    payload = torch.load(path, weights_only=False)
    arch = SurrogateArch(**payload["surrogate_arch"])
    if arch.fingerprint() != payload["fingerprint"]:
        raise ValueError(f"{path}: stored fingerprint does not match stored architecture")
    if expected_arch is not None and expected_arch.fingerprint() != payload["fingerprint"]:
        raise ValueError(
            f"{path}: checkpoint architecture {arch} does not match expected {expected_arch}"
        )
    dantr_arch = None if payload["dantr_arch"] is None else DanTrArch(**payload["dantr_arch"])
    return Checkpoint(
        kind=payload["kind"],
        surrogate_arch=arch,
        student_state=payload["student_state"],
        teacher_state=payload["teacher_state"],
        dantr_arch=dantr_arch,
        dantr_state=payload["dantr_state"],
        optimizer_state=payload["optimizer_state"],
        rng_state=payload["rng_state"],
        meta=payload["meta"],
    )


def clone_module(module: nn.Module) -> nn.Module:
    return copy.deepcopy(module)
