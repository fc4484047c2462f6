"""Synthetic dataset factory.

Displacement inputs are superpositions of sine waves; reaction-force labels
come from a Bouc-Wen hysteretic oracle integrated with RK4. The unlabeled
pool is grown by slicing, splicing and weighted averaging of cheap base
sequences. `build_case_study` assembles the whole desk-scale experiment.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    DatasetBundle,
    PROVENANCE_REAL,
    PROVENANCE_UNLABELED,
    ROLE_TARGET,
    ROLE_UNLABELED,
    TimeSeriesSample,
    fit_normalization,
    split_dataset,
    write_dataset,
)
from .seeding import derive_seed


@dataclass(frozen=True)
class SineMixConfig:
    """Superposition of `n_components` sines with random periods, amplitudes, phases."""

    n_components: int = 4
    period_range: tuple = (0.5, 4.0)       # seconds
    amplitude_range: tuple = (0.3, 1.2)    # length units
    length: int = 256
    dt: float = 0.02                       # seconds
    target_peak: float | None = None       # rescale max|u| to this value

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        for name in ("period_range", "amplitude_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must be positive and ordered, got ({lo}, {hi})")
        if self.length < 2 or self.dt <= 0:
            raise ValueError("length must be >= 2 and dt > 0")
        if self.length * self.dt < self.period_range[1]:
            raise ValueError(
                f"series duration {self.length * self.dt:.3g}s does not cover the "
                f"longest period {self.period_range[1]:.3g}s"
            )
        if self.target_peak is not None and self.target_peak <= 0:
            raise ValueError("target_peak must be positive")


def gen_sine_mix(config: SineMixConfig, seed: int) -> np.ndarray:
    """Sample one displacement series u(t) = sum_i a_i sin(2 pi t / T_i + phi_i)."""
    rng = np.random.default_rng(seed)
    periods = rng.uniform(*config.period_range, config.n_components)
    amps = rng.uniform(*config.amplitude_range, config.n_components)
    phases = rng.uniform(0.0, 2.0 * np.pi, config.n_components)
    t = np.arange(config.length) * config.dt
    u = np.zeros(config.length)
    for a, period, phi in zip(amps, periods, phases):
        u += a * np.sin(2.0 * np.pi * t / period + phi)
    if config.target_peak is not None:
        u *= config.target_peak / np.abs(u).max()
    return u


@dataclass(frozen=True)
class BoucWenParams:
    """Bouc-Wen hysteresis parameters: r = alpha*k*u + (1-alpha)*k*z.

    With beta = gamma = 0 and A = 1 the model degenerates to linear elasticity
    r = k*u. `dt_sub` is the inner RK4 step; None means dt/10 of the driving
    series.
    """

    k: float = 100.0          # elastic stiffness, force per length unit
    alpha: float = 0.1        # post-yield stiffness ratio
    A: float = 1.0
    beta: float = 0.5
    gamma: float = 0.5
    n_exp: float = 1.0
    dt_sub: float | None = None

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("k must be positive")
        if not (0 < self.alpha <= 1):
            raise ValueError("alpha must be in (0, 1]")
        if self.n_exp < 1:
            raise ValueError("n_exp must be >= 1")
        if self.dt_sub is not None and self.dt_sub <= 0:
            raise ValueError("dt_sub must be positive")

    def z_ultimate(self) -> float:
        """Bound of |z| under monotonic loading, (A / (beta + gamma))^(1/n)."""
        if self.beta + self.gamma <= 0:
            raise ValueError("z is unbounded when beta + gamma <= 0")
        return (self.A / (self.beta + self.gamma)) ** (1.0 / self.n_exp)


def _z_rate(z: float, du: float, p: BoucWenParams) -> float:
    abs_z = abs(z)
    return (
        p.A * du
        - p.beta * abs(du) * abs_z ** (p.n_exp - 1.0) * z
        - p.gamma * du * abs_z ** p.n_exp
    )


def boucwen_response(u, dt: float, params: BoucWenParams) -> np.ndarray:
    """Reaction-force history of the Bouc-Wen oracle for a displacement series.

    The series is shifted to start at rest (u(0) = 0). The internal variable z
    follows dz/dt = A*du - beta*|du|*|z|^(n-1)*z - gamma*du*|z|^n, integrated
    with classical RK4 at `dt_sub`; du comes from linear interpolation of u,
    i.e. it is constant inside each sampling interval.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1 or u.size < 2:
        raise ValueError("input series must be 1-D with length >= 2")
    if not np.all(np.isfinite(u)):
        raise ValueError("input series contains non-finite values")
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = u - u[0]
    dt_sub = params.dt_sub if params.dt_sub is not None else dt / 10.0
    if dt_sub > dt:
        raise ValueError(f"dt_sub {dt_sub} exceeds series dt {dt}")
    n_sub = max(1, round(dt / dt_sub))
    h = dt / n_sub

    z = 0.0
    z_series = np.zeros_like(u)
    for step in range(u.size - 1):
        du = (u[step + 1] - u[step]) / dt
        for _ in range(n_sub):
            k1 = _z_rate(z, du, params)
            k2 = _z_rate(z + 0.5 * h * k1, du, params)
            k3 = _z_rate(z + 0.5 * h * k2, du, params)
            k4 = _z_rate(z + h * k3, du, params)
            z = z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not math.isfinite(z):
            raise ValueError(f"Bouc-Wen integration diverged at step {step + 1}")
        z_series[step + 1] = z
    return params.alpha * params.k * u + (1.0 - params.alpha) * params.k * z_series


# ---------------------------------------------------------------------------
# unlabeled-pool augmentation
# ---------------------------------------------------------------------------

AUGMENT_OPS = ("slice", "splice", "weighted-average")


@dataclass(frozen=True)
class AugmentConfig:
    ops_enabled: tuple = AUGMENT_OPS
    count: int = 0
    seed: int = 0
    min_slice_fraction: float = 0.25

    def __post_init__(self):
        unknown = [op for op in self.ops_enabled if op not in AUGMENT_OPS]
        if unknown:
            raise ValueError(f"unknown augmentation ops {unknown}; choose from {AUGMENT_OPS}")
        if not self.ops_enabled:
            raise ValueError("at least one augmentation op must be enabled")
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if not (0 < self.min_slice_fraction < 1):
            raise ValueError("min_slice_fraction must be in (0, 1)")


def slice_series(u: np.ndarray, start: int, window: int) -> np.ndarray:
    """Contiguous window moved to t=0, zero-padded at the tail to the original length."""
    out = np.zeros_like(u)
    out[:window] = u[start:start + window]
    return out


def splice_series(u1: np.ndarray, u2: np.ndarray, cut: int) -> np.ndarray:
    """First `cut` steps from u1, the rest from u2."""
    return np.concatenate([u1[:cut], u2[cut:]])


def average_series(u1: np.ndarray, u2: np.ndarray, w: float) -> np.ndarray:
    return w * u1 + (1.0 - w) * u2


def augment_unlabeled(pool: Dataset, config: AugmentConfig) -> Dataset:
    """Produce `config.count` new unlabeled samples from a pool of equal-length parents."""
    if len(pool) < 2:
        raise ValueError(f"augmentation needs a pool of >= 2 samples, got {len(pool)}")
    inputs = pool.input_matrix()  # raises on incompatible lengths
    n, length = inputs.shape
    rng = np.random.default_rng(config.seed)
    min_window = max(1, math.ceil(config.min_slice_fraction * length))
    samples = []
    for j in range(config.count):
        op = config.ops_enabled[rng.integers(len(config.ops_enabled))]
        if op == "slice":
            parent = inputs[rng.integers(n)]
            window = int(rng.integers(min_window, length + 1))
            start = int(rng.integers(0, length - window + 1))
            series = slice_series(parent, start, window)
        elif op == "splice":
            i1, i2 = rng.choice(n, size=2, replace=False)
            cut = int(rng.integers(1, length))
            series = splice_series(inputs[i1], inputs[i2], cut)
        else:
            i1, i2 = rng.choice(n, size=2, replace=False)
            series = average_series(inputs[i1], inputs[i2], rng.uniform())
        samples.append(
            TimeSeriesSample(f"aug-{j:05d}", series, None, PROVENANCE_UNLABELED)
        )
    return Dataset(samples=tuple(samples), role=ROLE_UNLABELED, dt=pool.dt, norm=pool.norm)


# ---------------------------------------------------------------------------
# end-to-end case study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CaseStudyConfig:
    """Everything needed to manufacture one reproducible case study."""

    n_labeled: int = 400
    splits: tuple = (0.8, 0.1, 0.1)
    n_train_subset: int | None = None     # e.g. 10 -> small-data scenario
    n_unlabeled: int = 2000
    n_unlabeled_base: int = 200            # fresh sine mixes feeding augmentation
    peak_range: tuple | None = (3.0, 3.5)  # per-sample target peak, length units
    sine: SineMixConfig = field(default_factory=SineMixConfig)
    boucwen: BoucWenParams = field(default_factory=BoucWenParams)
    augment_ops: tuple = AUGMENT_OPS
    min_slice_fraction: float = 0.25
    joint_normalization: bool = False      # fit bounds on all labeled data, not just train
    master_seed: int = 0

    def __post_init__(self):
        if self.n_labeled < 3:
            raise ValueError("n_labeled must be >= 3 to allow a split")
        if self.n_unlabeled_base < 2:
            raise ValueError("n_unlabeled_base must be >= 2 for augmentation")
        if self.n_train_subset is not None and self.n_train_subset < 1:
            raise ValueError("n_train_subset must be >= 1")
        if self.peak_range is not None:
            lo, hi = self.peak_range
            if not (0 < lo <= hi):
                raise ValueError(f"peak_range must be positive and ordered, got {self.peak_range}")


def _labeled_input(cfg: CaseStudyConfig, kind: str, index: int) -> np.ndarray:
    u = gen_sine_mix(cfg.sine, derive_seed(cfg.master_seed, kind, index))
    u = u - u[0]  # every loading history starts at rest
    if cfg.peak_range is not None:
        peak = np.random.default_rng(derive_seed(cfg.master_seed, kind, index, "peak")).uniform(
            *cfg.peak_range
        )
        u *= peak / np.abs(u).max()
    return u


def build_case_study(config: CaseStudyConfig, out_dir=None) -> DatasetBundle:
    """Generate, label, normalize, split and (optionally) persist the case study.

    Returns a bundle of (train, val, test, pool); the same `master_seed`
    regenerates a byte-identical dataset directory.
    """
    labeled = []
    for i in range(config.n_labeled):
        u = _labeled_input(config, "labeled", i)
        y = boucwen_response(u, config.sine.dt, config.boucwen)
        labeled.append(TimeSeriesSample(f"lab-{i:04d}", u, y, PROVENANCE_REAL))
    full = Dataset(samples=tuple(labeled), role=ROLE_TARGET, dt=config.sine.dt)

    train, val, test = split_dataset(
        full, config.splits, derive_seed(config.master_seed, "split")
    )
    if config.n_train_subset is not None:
        if config.n_train_subset > len(train):
            raise ValueError(
                f"n_train_subset {config.n_train_subset} exceeds train split size {len(train)}"
            )
        rng = np.random.default_rng(derive_seed(config.master_seed, "subset"))
        keep = sorted(rng.choice(len(train), size=config.n_train_subset, replace=False))
        train = train.subset([train.samples[i].id for i in keep])

    norm = fit_normalization(full if config.joint_normalization else train)
    train, val, test = train.with_norm(norm), val.with_norm(norm), test.with_norm(norm)

    base = Dataset(
        samples=tuple(
            TimeSeriesSample(
                f"base-{i:04d}", _labeled_input(config, "unlabeled-base", i), None,
                PROVENANCE_UNLABELED,
            )
            for i in range(config.n_unlabeled_base)
        ),
        role=ROLE_UNLABELED,
        dt=config.sine.dt,
    )
    pool = augment_unlabeled(
        base,
        AugmentConfig(
            ops_enabled=config.augment_ops,
            count=config.n_unlabeled,
            seed=derive_seed(config.master_seed, "augment"),
            min_slice_fraction=config.min_slice_fraction,
        ),
    ).with_norm(norm)

    bundle = DatasetBundle(train=train, val=val, test=test, pool=pool, norm=norm)
    if out_dir is not None:
        write_case_study(bundle, config, out_dir)
    return bundle


def _peak_histogram(dataset: Dataset, bins: int = 10) -> dict:
    peaks = np.array([np.abs(s.input).max() for s in dataset.samples])
    counts, edges = np.histogram(peaks, bins=bins)
    return {"counts": counts.tolist(), "edges": [f"{e:.17g}" for e in edges]}


def write_case_study(bundle: DatasetBundle, config: CaseStudyConfig, out_dir) -> None:
    """Persist the four datasets plus a generation report under one directory."""
    out_dir = Path(out_dir)
    write_dataset(bundle.train, out_dir / "train")
    write_dataset(bundle.val, out_dir / "val")
    write_dataset(bundle.test, out_dir / "test")
    write_dataset(bundle.pool, out_dir / "pool")
    output_peaks = np.array([np.abs(s.output).max() for s in bundle.train.samples])
    report = {
        "master_seed": config.master_seed,
        "counts": {
            "train": len(bundle.train),
            "val": len(bundle.val),
            "test": len(bundle.test),
            "pool": len(bundle.pool),
        },
        "dt": f"{config.sine.dt:.17g}",
        "input_peak_histograms": {
            "train": _peak_histogram(bundle.train),
            "pool": _peak_histogram(bundle.pool),
        },
        "train_output_peak_range": [
            f"{output_peaks.min():.17g}",
            f"{output_peaks.max():.17g}",
        ],
    }
    with open(out_dir / "generation-report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_case_study(path) -> DatasetBundle:
    from .data import read_dataset

    path = Path(path)
    train = read_dataset(path / "train")
    return DatasetBundle(
        train=train,
        val=read_dataset(path / "val"),
        test=read_dataset(path / "test"),
        pool=read_dataset(path / "pool"),
        norm=train.norm,
    )
