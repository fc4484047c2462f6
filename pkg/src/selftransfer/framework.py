"""Iterative self-transfer orchestration.

One run walks the schedule: supervised training on the small labeled set,
then blocks of pseudo-label iterations capped by one adaptation iteration,
a relative-improvement stopping rule, and a final training on the last
(pseudo + labeled) dataset with a single touch of the held-out test set.

Every iteration trains `n_inits` models from seeds derived as
hash(master_seed, iteration_index, init_index); reported performance is the
average validation MSE and the checkpoint that seeds the next iteration is
the best one. All records, dataset snapshots and checkpoints persist under
one run directory, which is enough to resume an interrupted run and land on
the identical result.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset, DatasetBundle, read_dataset, write_dataset
from .mmd import MkMmdConfig
from .networks import (
    DanTrArch,
    SurrogateArch,
    extract_target_surrogate,
    load_checkpoint,
    save_checkpoint,
)
from .seeding import derive_seed
from .training import (
    TrainConfig,
    evaluate_mse,
    pseudo_label,
    train_dantr,
    train_supervised,
)

KIND_DIRECT = "direct"
KIND_PL = "pl"
KIND_DANTR = "dantr"
KIND_FINAL = "final"


@dataclass(frozen=True)
class IterationRecord:
    """Outcome of one scheduled iteration (all floats in normalized MSE units)."""

    index: int
    kind: str
    seeds: tuple
    per_seed_val_mse: tuple
    avg_val_mse: float
    relative_reduction: float | None
    chosen_checkpoint: str
    source_dataset_ref: str | None
    target_dataset_ref: str | None
    test_mse: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(self.seeds))
        object.__setattr__(self, "per_seed_val_mse", tuple(self.per_seed_val_mse))
        mean = sum(self.per_seed_val_mse) / len(self.per_seed_val_mse)
        if abs(mean - self.avg_val_mse) > 1e-12 * max(1.0, abs(mean)):
            raise ValueError("avg_val_mse does not match the per-seed mean")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRecord":
        return cls(**d)


@dataclass(frozen=True)
class RunRecord:
    """Full history of one framework run."""

    master_seed: int
    iterations: tuple
    final_test_mse: float | None

    def to_json(self) -> str:
        payload = {
            "master_seed": self.master_seed,
            "iterations": [r.to_dict() for r in self.iterations],
            "final_test_mse": self.final_test_mse,
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        payload = json.loads(text)
        return cls(
            master_seed=payload["master_seed"],
            iterations=tuple(IterationRecord.from_dict(d) for d in payload["iterations"]),
            final_test_mse=payload["final_test_mse"],
        )


@dataclass(frozen=True)
class FrameworkConfig:
    n_inits: int = 3
    pl_per_block: int = 2
    max_iterations: int = 7
    stop_epsilon: float = 0.02
    stop_patience: int = 2
    pseudo_count_per_iter: int = 500
    final_arch: str = "surrogate-default"
    master_seed: int = 0
    accumulate_pseudo: bool = False
    use_teacher_for_pseudo: bool = True
    enlarge_target_fraction: float = 0.0
    detach_adaptation_mmd: bool = False
    dantr_consistency: bool = False
    surrogate_arch: SurrogateArch = field(default_factory=SurrogateArch)
    dantr_arch: DanTrArch = field(default_factory=DanTrArch)
    mmd: MkMmdConfig = field(default_factory=MkMmdConfig)
    pl_train: TrainConfig = field(default_factory=TrainConfig)
    dantr_train: TrainConfig = field(default_factory=TrainConfig)
    final_train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.n_inits < 1:
            raise ValueError("n_inits must be >= 1")
        if self.pl_per_block < 1:
            raise ValueError("pl_per_block must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.pseudo_count_per_iter < 1:
            raise ValueError(
                "pseudo_count_per_iter must be >= 1 (with 0 pseudo samples an iteration "
                "would just repeat direct training; lower max_iterations instead)"
            )
        if self.stop_epsilon <= 0 or self.stop_patience < 1:
            raise ValueError("stop_epsilon must be > 0 and stop_patience >= 1")
        if not 0 <= self.enlarge_target_fraction < 1:
            raise ValueError("enlarge_target_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


# pluggable final-training architectures; values map a FrameworkConfig to an arch
_FINAL_ARCHS = {"surrogate-default": lambda cfg: cfg.surrogate_arch}


def register_final_arch(name: str, factory) -> None:
    """Register an architecture factory selectable via FrameworkConfig.final_arch."""
    _FINAL_ARCHS[name] = factory


def resolve_final_arch(cfg: FrameworkConfig) -> SurrogateArch:
    try:
        factory = _FINAL_ARCHS[cfg.final_arch]
    except KeyError:
        raise ValueError(
            f"unknown final_arch {cfg.final_arch!r}; registered: {sorted(_FINAL_ARCHS)} "
            f"(use register_final_arch to plug in a custom architecture)"
        ) from None
    return factory(cfg)


def hash_dataset(dataset: Dataset) -> str:
    """Content hash used to verify that a resumed run sees the same inputs."""
    h = hashlib.sha256()
    h.update(f"{dataset.role}|{dataset.dt!r}|{len(dataset)}".encode())
    for s in dataset.samples:
        h.update(s.id.encode())
        h.update(np.ascontiguousarray(s.input).tobytes())
        if s.output is not None:
            h.update(np.ascontiguousarray(s.output).tobytes())
    return h.hexdigest()


class FrameworkState:
    """Run-directory bookkeeping shared by the iteration operations."""

    def __init__(self, cfg: FrameworkConfig, bundle: DatasetBundle, run_dir, resume: bool = False):
        self.cfg = cfg
        self.bundle = bundle
        self.run_dir = Path(run_dir)
        self.records: list[IterationRecord] = []
        self.chosen_checkpoint: str | None = None
        self.latest_pseudo_ref: str | None = None
        self.pseudo_refs: list[str] = []
        self.test_access_count = 0

        for sub in ("checkpoints", "snapshots", "metrics"):
            (self.run_dir / sub).mkdir(parents=True, exist_ok=True)
        frozen = {
            "config": cfg.to_dict(),
            "dataset_hashes": {
                "train": hash_dataset(bundle.train),
                "val": hash_dataset(bundle.val),
                "test": hash_dataset(bundle.test),
                "pool": hash_dataset(bundle.pool),
            },
        }
        frozen_path = self.run_dir / "config-frozen.json"
        if frozen_path.exists():
            existing = json.loads(frozen_path.read_text())
            if not resume:
                raise ValueError(
                    f"{self.run_dir} already holds a run; pass resume=True to continue it"
                )
            if existing != json.loads(json.dumps(frozen)):
                raise ValueError(
                    "resume refused: config or input datasets differ from the frozen run"
                )
        else:
            frozen_path.write_text(json.dumps(frozen, indent=2, sort_keys=True) + "\n")
        target_dir = self.run_dir / "snapshots" / "target"
        if not (target_dir / "manifest.json").exists():
            write_dataset(bundle.train, target_dir)
            write_dataset(bundle.val, self.run_dir / "snapshots" / "val")

        if resume:
            self._load_records()

    # -- persistence ---------------------------------------------------------

    @property
    def records_path(self) -> Path:
        return self.run_dir / "records.jsonl"

    def _load_records(self) -> None:
        if not self.records_path.exists():
            return
        for line in self.records_path.read_text().splitlines():
            if not line.strip():
                continue
            record = IterationRecord.from_dict(json.loads(line))
            self.records.append(record)
            self.chosen_checkpoint = record.chosen_checkpoint
            if record.kind == KIND_PL:
                self.latest_pseudo_ref = record.source_dataset_ref
                self.pseudo_refs.append(record.source_dataset_ref)
            if record.kind == KIND_FINAL:
                self.test_access_count = 1

    def append_record(self, record: IterationRecord) -> None:
        self.records.append(record)
        with open(self.records_path, "a") as fh:
            fh.write(json.dumps(record.to_dict()) + "\n")

    def use_test(self) -> Dataset:
        """Hand out the held-out test set; allowed exactly once per run."""
        if self.test_access_count > 0:
            raise RuntimeError("test set already consumed in this run")
        self.test_access_count += 1
        return self.bundle.test

    # -- helpers -------------------------------------------------------------

    def reduction_vs_previous(self, avg: float) -> float | None:
        if not self.records:
            return None
        prev = self.records[-1].avg_val_mse
        return 1.0 - avg / prev

    def metrics_path(self, index: int, init: int) -> Path:
        return self.run_dir / "metrics" / f"iter{index:03d}-init{init}.jsonl"

    def checkpoint_ref(self, index: int, init: int) -> str:
        return f"checkpoints/iter{index:03d}-init{init}.pt"


def _record_from_phase(state: FrameworkState, index, kind, seeds, mses, refs, test_mse=None):
    best = int(np.argmin(mses))
    chosen = state.checkpoint_ref(index, best)
    state.chosen_checkpoint = chosen
    avg = sum(mses) / len(mses)
    record = IterationRecord(
        index=index,
        kind=kind,
        seeds=tuple(seeds),
        per_seed_val_mse=tuple(mses),
        avg_val_mse=avg,
        relative_reduction=state.reduction_vs_previous(avg) if index > 0 else None,
        chosen_checkpoint=chosen,
        source_dataset_ref=refs[0],
        target_dataset_ref=refs[1],
        test_mse=test_mse,
    )
    state.append_record(record)
    return record


def _train_surrogate_phase(state: FrameworkState, index: int, kind: str, arch, train_data, base_config):
    cfg = state.cfg
    seeds, mses, results = [], [], []
    for i in range(cfg.n_inits):
        seed = derive_seed(cfg.master_seed, index, i)
        seeds.append(seed)
        res = train_supervised(
            arch,
            train_data,
            replace(base_config, seed=seed),
            state.bundle.val,
            log_path=state.metrics_path(index, i),
        )
        save_checkpoint(
            state.run_dir / state.checkpoint_ref(index, i),
            kind="supervised",
            surrogate_arch=arch,
            student=res.student,
            teacher=res.teacher,
            meta={"iteration": index, "kind": kind, "init": i, "seed": seed},
        )
        mses.append(res.student_val_mse)
        results.append(res)
    return seeds, mses, results


def run_direct(cfg: FrameworkConfig, state: FrameworkState) -> IterationRecord:
    """Step 1: train the initial models on the labeled target data alone."""
    if state.records:
        raise RuntimeError("direct training must be the first iteration")
    seeds, mses, _ = _train_surrogate_phase(
        state, 0, KIND_DIRECT, cfg.surrogate_arch, state.bundle.train, cfg.pl_train
    )
    return _record_from_phase(state, 0, KIND_DIRECT, seeds, mses, (None, "snapshots/target"))


def run_pl_iteration(cfg: FrameworkConfig, state: FrameworkState) -> IterationRecord:
    """Step 2: pseudo-label a fresh slice of the pool, retrain on it plus the labels."""
    if state.chosen_checkpoint is None:
        raise RuntimeError("no checkpoint to pseudo-label from; run direct training first")
    index = len(state.records)
    ckpt = load_checkpoint(state.run_dir / state.chosen_checkpoint)
    model = None
    if cfg.use_teacher_for_pseudo:
        model = ckpt.make_teacher()
    if model is None:
        model = ckpt.make_student()
    pseudo = pseudo_label(
        model, state.bundle.pool, cfg.pseudo_count_per_iter,
        derive_seed(cfg.master_seed, index, "pseudo"),
    )
    ref = f"snapshots/iter{index:03d}-pseudo"
    write_dataset(pseudo, state.run_dir / ref)
    state.latest_pseudo_ref = ref
    state.pseudo_refs.append(ref)

    seeds, mses, _ = _train_surrogate_phase(
        state, index, KIND_PL, cfg.surrogate_arch, [pseudo, state.bundle.train], cfg.pl_train
    )
    return _record_from_phase(state, index, KIND_PL, seeds, mses, (ref, "snapshots/target"))


def _enlarged_target(cfg: FrameworkConfig, state: FrameworkState, source: Dataset):
    """Optionally extend the adaptation target with the pseudo samples whose
    teacher/student labels agree best (fraction configured, off by default)."""
    targets = [state.bundle.train]
    if cfg.enlarge_target_fraction <= 0:
        return targets
    ckpt = load_checkpoint(state.run_dir / state.chosen_checkpoint)
    student, teacher = ckpt.make_student(), ckpt.make_teacher()
    if teacher is None:
        return targets
    keep = max(1, int(cfg.enlarge_target_fraction * len(source)))
    disagreements = []
    s_labels = pseudo_label(student, source, len(source), seed=0)
    t_labels = pseudo_label(teacher, source, len(source), seed=0)
    for s_s, s_t in zip(s_labels.samples, t_labels.samples):
        disagreements.append(float(np.mean((s_s.output - s_t.output) ** 2)))
    order = np.argsort(disagreements, kind="stable")[:keep]
    chosen_ids = [s_labels.samples[i].id for i in sorted(order)]
    targets.append(source.subset(chosen_ids))
    return targets


def run_dantr_iteration(cfg: FrameworkConfig, state: FrameworkState) -> IterationRecord:
    """Step 3: adaptation training between the latest pseudo set and the labels."""
    if state.latest_pseudo_ref is None:
        raise RuntimeError("no pseudo-labeled dataset yet; run a pl iteration first")
    index = len(state.records)
    source = read_dataset(state.run_dir / state.latest_pseudo_ref)
    targets = _enlarged_target(cfg, state, source)

    seeds, mses = [], []
    for i in range(cfg.n_inits):
        seed = derive_seed(cfg.master_seed, index, i)
        seeds.append(seed)
        res = train_dantr(
            cfg.dantr_arch,
            source,
            targets,
            replace(cfg.dantr_train, seed=seed),
            cfg.mmd,
            state.bundle.val,
            log_path=state.metrics_path(index, i),
            detach_adaptation_mmd=cfg.detach_adaptation_mmd,
            apply_consistency=cfg.dantr_consistency,
        )
        extracted = extract_target_surrogate(res.net)
        save_checkpoint(
            state.run_dir / state.checkpoint_ref(index, i),
            kind="dantr",
            surrogate_arch=extracted.arch,
            student=extracted,
            teacher=None,
            dantr_arch=cfg.dantr_arch,
            dantr_net=res.net,
            meta={"iteration": index, "kind": KIND_DANTR, "init": i, "seed": seed},
        )
        mses.append(res.val_mse)
    return _record_from_phase(
        state, index, KIND_DANTR, seeds, mses, (state.latest_pseudo_ref, "snapshots/target")
    )


def run_final(cfg: FrameworkConfig, state: FrameworkState) -> IterationRecord:
    """Step 5: train on the final dataset, pick the best model, touch the test set once."""
    if not state.records:
        raise RuntimeError("final training needs at least one completed iteration")
    index = len(state.records)
    refs = list(state.pseudo_refs) if cfg.accumulate_pseudo else (
        [state.latest_pseudo_ref] if state.latest_pseudo_ref else []
    )
    train_data = [read_dataset(state.run_dir / r) for r in refs] + [state.bundle.train]
    arch = resolve_final_arch(cfg)
    seeds, mses, results = _train_surrogate_phase(
        state, index, KIND_FINAL, arch, train_data, cfg.final_train
    )
    best = int(np.argmin(mses))
    test_mse = evaluate_mse(results[best].student, state.use_test())
    return _record_from_phase(
        state, index, KIND_FINAL, seeds, mses,
        (refs[-1] if refs else None, "snapshots/target"), test_mse=test_mse,
    )


def should_stop(history, cfg: FrameworkConfig) -> bool:
    """True once `stop_patience` consecutive reductions fall below `stop_epsilon`,
    or the iteration cap is reached."""
    if not history:
        raise ValueError("empty history")
    if len(history) >= cfg.max_iterations:
        return True
    reductions = [r.relative_reduction for r in history if r.relative_reduction is not None]
    if len(reductions) < cfg.stop_patience:
        return False
    return all(r < cfg.stop_epsilon for r in reductions[-cfg.stop_patience:])


def next_kind(history, cfg: FrameworkConfig) -> str:
    """Block schedule: `pl_per_block` pseudo-label iterations, then one adaptation."""
    if not history:
        return KIND_DIRECT
    position = (len(history) - 1) % (cfg.pl_per_block + 1)
    return KIND_PL if position < cfg.pl_per_block else KIND_DANTR


def run_framework(
    cfg: FrameworkConfig, bundle: DatasetBundle, run_dir, resume: bool = False
) -> RunRecord:
    """Execute (or resume) the full schedule and persist everything under run_dir."""
    state = FrameworkState(cfg, bundle, run_dir, resume=resume)
    finished = bool(state.records) and state.records[-1].kind == KIND_FINAL
    if not finished:
        if not state.records:
            run_direct(cfg, state)
        while not should_stop(state.records, cfg):
            if next_kind(state.records, cfg) == KIND_PL:
                run_pl_iteration(cfg, state)
            else:
                run_dantr_iteration(cfg, state)
        run_final(cfg, state)
    final_record = state.records[-1]
    run_record = RunRecord(
        master_seed=cfg.master_seed,
        iterations=tuple(state.records),
        final_test_mse=final_record.test_mse,
    )
    (state.run_dir / "run-record.json").write_text(run_record.to_json() + "\n")
    return run_record
