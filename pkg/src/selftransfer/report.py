"""Post-run analysis: summary tables, reduction plots and prediction overlays.

Everything here is read-only over a run directory; all reported numbers are
recomputable from the persisted records, checkpoints and snapshots.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from .data import Dataset, denormalize_values
from .framework import IterationRecord, RunRecord
from .networks import load_checkpoint
from .training import dataset_tensors


def load_records(run_dir) -> list:
    path = Path(run_dir) / "records.jsonl"
    if not path.exists():
        raise ValueError(f"no records.jsonl under {run_dir}")
    records = []
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(IterationRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{line_no}: corrupt record ({exc})") from exc
    return records


@dataclass(frozen=True)
class ReductionSeries:
    """Per-iteration averages and their iteration-over-iteration reductions."""

    indices: tuple
    kinds: tuple
    avg_val_mse: tuple
    relative_reductions: tuple  # None for the first iteration

    @classmethod
    def from_records(cls, records) -> "ReductionSeries":
        if not records:
            raise ValueError("no records")
        reductions = [None]
        for prev, cur in zip(records, records[1:]):
            recomputed = 1.0 - cur.avg_val_mse / prev.avg_val_mse
            stored = cur.relative_reduction
            if stored is None or abs(stored - recomputed) > 1e-12 * max(1.0, abs(recomputed)):
                raise ValueError(
                    f"iteration {cur.index}: stored reduction {stored} does not match "
                    f"recomputed {recomputed}"
                )
            reductions.append(recomputed)
        return cls(
            indices=tuple(r.index for r in records),
            kinds=tuple(r.kind for r in records),
            avg_val_mse=tuple(r.avg_val_mse for r in records),
            relative_reductions=tuple(reductions),
        )


def summarize_run(run_dir, out_path=None) -> str:
    """Emit a tab-separated table: one row per iteration plus a test-MSE line.

    Returns the table text and writes it to `out_path`
    (default `<run_dir>/summary.tsv`).
    """
    run_dir = Path(run_dir)
    records = load_records(run_dir)
    ReductionSeries.from_records(records)  # validates stored reductions
    n_inits = max(len(r.per_seed_val_mse) for r in records)
    header = ["iteration", "kind"] + [f"mse_{i + 1}" for i in range(n_inits)] + [
        "average", "reduction_pct",
    ]
    lines = ["\t".join(header)]
    for r in records:
        per_seed = [f"{v:.6e}" for v in r.per_seed_val_mse]
        per_seed += [""] * (n_inits - len(per_seed))
        reduction = "" if r.relative_reduction is None else f"{100 * r.relative_reduction:.2f}"
        lines.append(
            "\t".join([str(r.index), r.kind] + per_seed + [f"{r.avg_val_mse:.6e}", reduction])
        )
    final = [r for r in records if r.test_mse is not None]
    if final:
        lines.append(f"test\t{final[-1].test_mse:.6e}")
    table = "\n".join(lines) + "\n"
    out_path = Path(out_path) if out_path is not None else run_dir / "summary.tsv"
    out_path.write_text(table)
    return table


def plot_reductions(run_dir, out_path=None) -> Path:
    """Bar chart of the relative MSE reduction per iteration, colored by kind."""
    run_dir = Path(run_dir)
    series = ReductionSeries.from_records(load_records(run_dir))
    colors = {"pl": "tab:green", "dantr": "tab:red", "final": "tab:blue", "direct": "tab:gray"}
    fig, ax = plt.subplots(figsize=(7, 4))
    xs, ys, cs = [], [], []
    for idx, kind, red in zip(series.indices, series.kinds, series.relative_reductions):
        if red is None:
            continue
        xs.append(idx)
        ys.append(100 * red)
        cs.append(colors.get(kind, "tab:gray"))
    ax.bar(xs, ys, color=cs)
    ax.set_xlabel("iteration")
    ax.set_ylabel("relative reduction of avg val MSE [%]")
    handles = [plt.Rectangle((0, 0), 1, 1, color=c) for k, c in colors.items() if k != "direct"]
    ax.legend(handles, [k for k in colors if k != "direct"])
    fig.tight_layout()
    out_path = Path(out_path) if out_path is not None else run_dir / "reductions.png"
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_predictions(checkpoint_path, dataset: Dataset, sample_ids, out_dir) -> list:
    """One truth-vs-prediction overlay per sample id, in physical units.

    The caption carries the per-sample MSE in normalized coordinates (the
    same metric the tables report). Returns the written file paths.
    """
    sample_ids = list(sample_ids)
    if not sample_ids:
        return []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    subset = dataset.subset(sample_ids)  # raises on unknown ids
    model = load_checkpoint(checkpoint_path).make_student()
    x, y = dataset_tensors(subset)
    with torch.no_grad():
        pred = model(x)
    norm = dataset.norm
    written = []
    for i, sid in enumerate(sample_ids):
        truth_n = y[i, :, 0].numpy()
        pred_n = pred[i, :, 0].numpy()
        mse = float(np.mean((pred_n - truth_n) ** 2))
        t = np.arange(truth_n.size) * dataset.dt
        fig, ax = plt.subplots(figsize=(8, 3.2))
        ax.plot(t, denormalize_values(truth_n, norm.output_min, norm.output_max),
                color="tab:blue", label="ground truth")
        ax.plot(t, denormalize_values(pred_n, norm.output_min, norm.output_max),
                color="tab:orange", label="prediction")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("reaction force")
        ax.set_title(f"{sid}  (MSE: {mse:.3e})")
        ax.legend(loc="upper right")
        fig.tight_layout()
        path = out_dir / f"prediction-{sid}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def run_record_from_dir(run_dir) -> RunRecord:
    path = Path(run_dir) / "run-record.json"
    if not path.exists():
        raise ValueError(f"no run-record.json under {run_dir} (run still in progress?)")
    return RunRecord.from_json(path.read_text())
