"""Multi-kernel maximum mean discrepancy.

The MMD^2 between two sample sets is estimated under an average of Gaussian
kernels whose bandwidths sit on a geometric ladder around the median pairwise
distance of the pooled sets. Everything is differentiable w.r.t. the sample
coordinates; bandwidths are treated as constants during differentiation
(no gradient flows through the median).
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch

ESTIMATORS = ("biased", "unbiased")
BANDWIDTH_MODES = ("median-ladder", "fixed")
REPRESENTATIONS = ("final-step", "mean-over-time")


@dataclass(frozen=True)
class MkMmdConfig:
    """Kernel family, estimator variant and which tailored-net layers participate."""

    n_kernels: int = 5
    bandwidth_mode: str = "median-ladder"
    ladder_factor: float = 2.0
    fixed_sigmas: tuple | None = None
    estimator: str = "biased"
    layer_range: tuple = (0, 2)        # inclusive indices into tailored-net layers
    representation: str = "final-step"

    def __post_init__(self):
        if self.n_kernels < 1:
            raise ValueError("n_kernels must be >= 1")
        if self.bandwidth_mode not in BANDWIDTH_MODES:
            raise ValueError(f"bandwidth_mode must be one of {BANDWIDTH_MODES}")
        if self.ladder_factor <= 1:
            raise ValueError("ladder_factor must be > 1")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"representation must be one of {REPRESENTATIONS}")
        l1, l2 = self.layer_range
        if not (0 <= l1 <= l2):
            raise ValueError(f"layer_range must satisfy 0 <= l1 <= l2, got ({l1}, {l2})")
        if self.bandwidth_mode == "fixed":
            if not self.fixed_sigmas:
                raise ValueError("fixed bandwidth mode needs fixed_sigmas")
            if len(self.fixed_sigmas) != self.n_kernels:
                raise ValueError(
                    f"n_kernels {self.n_kernels} != len(fixed_sigmas) {len(self.fixed_sigmas)}"
                )
            if any(s <= 0 for s in self.fixed_sigmas):
                raise ValueError("fixed sigmas must all be positive")

    @classmethod
    def with_fixed(cls, sigmas, **kwargs) -> "MkMmdConfig":
        sigmas = tuple(float(s) for s in sigmas)
        return cls(
            n_kernels=len(sigmas), bandwidth_mode="fixed", fixed_sigmas=sigmas, **kwargs
        )


def gaussian_kernel(x, y, sigma: float) -> float:
    """k(x, y) = exp(-||x - y||^2 / (2 sigma^2)) for a single pair of vectors."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    sq = float(np.sum((x - y) ** 2))
    return math.exp(-sq / (2.0 * sigma * sigma))


def _as_matrix(values, name: str) -> torch.Tensor:
    t = torch.as_tensor(values, dtype=torch.float64)
    if t.ndim == 1:
        t = t.view(-1, 1)
    if t.ndim != 2:
        raise ValueError(f"{name} must be a set of vectors (n, d), got shape {tuple(t.shape)}")
    return t


def median_bandwidth(x_set, y_set) -> float:
    """Median pairwise Euclidean distance over the pooled set.

    Self-distances are excluded. If every pairwise distance is zero the
    bandwidth degenerates; we return 1.0 and issue a warning.
    """
    xs = _as_matrix(x_set, "x_set")
    ys = _as_matrix(y_set, "y_set")
    pooled = torch.cat([xs, ys], dim=0).detach()
    if pooled.shape[0] < 2:
        raise ValueError(f"need >= 2 pooled points, got {pooled.shape[0]}")
    dists = torch.pdist(pooled)
    median = float(np.median(dists.numpy()))  # torch.median picks the lower middle value
    if median <= 0.0:
        warnings.warn(
            "all pairwise distances are zero; falling back to bandwidth 1.0",
            RuntimeWarning,
            stacklevel=2,
        )
        return 1.0
    return median


def _bandwidths(hs: torch.Tensor, ht: torch.Tensor, config: MkMmdConfig) -> list:
    if config.bandwidth_mode == "fixed":
        return list(config.fixed_sigmas)
    base = median_bandwidth(hs, ht)
    center = math.ceil(config.n_kernels / 2)
    return [base * config.ladder_factor ** (m - center) for m in range(1, config.n_kernels + 1)]


def _sq_dists(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    # explicit broadcasting keeps the result exactly symmetric and differentiable
    diff = a.unsqueeze(1) - b.unsqueeze(0)
    return diff.pow(2).sum(-1)


def mk_mmd(hs, ht, config: MkMmdConfig) -> torch.Tensor:
    """MMD^2 estimate between two sample sets under the averaged multi-kernel.

    Returns a 0-dim double tensor; gradients flow into `hs`/`ht` when they are
    tensors that require grad. The biased variant is the V-statistic (full
    Gram means, always >= 0); the unbiased variant uses off-diagonal means for
    the within-set terms and needs >= 2 samples per set.
    """
    hs = _as_matrix(hs, "hs")
    ht = _as_matrix(ht, "ht")
    if hs.shape[0] == 0 or ht.shape[0] == 0:
        raise ValueError("sample sets must be non-empty")
    if hs.shape[1] != ht.shape[1]:
        raise ValueError(f"dimension mismatch: {hs.shape[1]} vs {ht.shape[1]}")
    n, m = hs.shape[0], ht.shape[0]
    if config.estimator == "unbiased" and (n < 2 or m < 2):
        raise ValueError("unbiased estimator needs >= 2 samples in each set")

    sigmas = _bandwidths(hs, ht, config)
    d_ss = _sq_dists(hs, hs)
    d_tt = _sq_dists(ht, ht)
    d_st = _sq_dists(hs, ht)
    k_ss = sum(torch.exp(-d_ss / (2.0 * s * s)) for s in sigmas) / len(sigmas)
    k_tt = sum(torch.exp(-d_tt / (2.0 * s * s)) for s in sigmas) / len(sigmas)
    k_st = sum(torch.exp(-d_st / (2.0 * s * s)) for s in sigmas) / len(sigmas)

    if config.estimator == "biased":
        return k_ss.mean() + k_tt.mean() - 2.0 * k_st.mean()
    within_s = (k_ss.sum() - k_ss.diagonal().sum()) / (n * (n - 1))
    within_t = (k_tt.sum() - k_tt.diagonal().sum()) / (m * (m - 1))
    return within_s + within_t - 2.0 * k_st.mean()


def layer_mmd_sum(hidden_s, hidden_t, config: MkMmdConfig) -> torch.Tensor:
    """Sum of per-layer MMD^2 terms over the configured layer range.

    `hidden_s` / `hidden_t` are per-layer lists of (batch, features) sets;
    each layer gets its own median bandwidth.
    """
    l1, l2 = config.layer_range
    if l2 >= len(hidden_s) or l2 >= len(hidden_t):
        raise ValueError(
            f"layer_range ({l1}, {l2}) not covered by hidden lists of lengths "
            f"{len(hidden_s)} and {len(hidden_t)}"
        )
    total = None
    for layer in range(l1, l2 + 1):
        term = mk_mmd(hidden_s[layer], hidden_t[layer], config)
        total = term if total is None else total + term
    return total


def mmd_weight(n_b: int, total_steps: int) -> float:
    """Progress-dependent loss weight 2 / (1 + exp(-10 n_b / N)) - 1 in [0, 1)."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= n_b <= total_steps:
        raise ValueError(f"step {n_b} outside [0, {total_steps}]")
    return 2.0 / (1.0 + math.exp(-10.0 * n_b / total_steps)) - 1.0
