"""Sample/dataset types, min-max normalization, deterministic splits and file I/O.

All values held in memory and on disk are in raw physical units; the fitted
`NormalizationParams` travel on the dataset (`Dataset.norm`) and are applied
by whoever needs the [-1, 1] view (the training code does this internally).
"""

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

PROVENANCE_REAL = "real-label"
PROVENANCE_PSEUDO = "pseudo-label"
PROVENANCE_UNLABELED = "unlabeled"

ROLE_TARGET = "target-labeled"
ROLE_UNLABELED = "unlabeled-pool"
ROLE_PSEUDO = "pseudo-source"
ROLE_VALIDATION = "validation"
ROLE_TEST = "test"

# every role admits exactly one provenance
ROLE_PROVENANCE = {
    ROLE_TARGET: PROVENANCE_REAL,
    ROLE_VALIDATION: PROVENANCE_REAL,
    ROLE_TEST: PROVENANCE_REAL,
    ROLE_UNLABELED: PROVENANCE_UNLABELED,
    ROLE_PSEUDO: PROVENANCE_PSEUDO,
}

_ID_PATTERN = re.compile(r"^[A-Za-z0-9._-]+$")


def _as_series(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D sequence, got shape {arr.shape}")
    if arr.size < 2:
        raise ValueError(f"{name} must have length >= 2, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class TimeSeriesSample:
    """One displacement input series with an optional force output series."""

    id: str
    input: np.ndarray
    output: np.ndarray | None
    provenance: str

    def __post_init__(self):
        object.__setattr__(self, "input", _as_series(self.input, f"sample {self.id!r} input"))
        if self.output is not None:
            out = _as_series(self.output, f"sample {self.id!r} output")
            if out.size != self.input.size:
                raise ValueError(
                    f"sample {self.id!r}: output length {out.size} != input length {self.input.size}"
                )
            object.__setattr__(self, "output", out)
        if self.provenance not in (PROVENANCE_REAL, PROVENANCE_PSEUDO, PROVENANCE_UNLABELED):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if (self.provenance == PROVENANCE_UNLABELED) != (self.output is None):
            raise ValueError(
                f"sample {self.id!r}: provenance {self.provenance!r} inconsistent with "
                f"output {'absent' if self.output is None else 'present'}"
            )

    @property
    def length(self) -> int:
        return int(self.input.size)


@dataclass(frozen=True)
class NormalizationParams:
    """Per-channel min/max bounds, in the physical units of the raw data."""

    input_min: float
    input_max: float
    output_min: float
    output_max: float

    def __post_init__(self):
        for channel in ("input", "output"):
            lo = getattr(self, f"{channel}_min")
            hi = getattr(self, f"{channel}_max")
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ValueError(f"non-finite {channel} bounds ({lo}, {hi})")
            if not lo < hi:
                raise ValueError(f"degenerate {channel} channel: min {lo} >= max {hi}")


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of samples sharing a role, a time step and (optionally) fitted bounds."""

    samples: tuple
    role: str
    dt: float
    norm: NormalizationParams | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.role not in ROLE_PROVENANCE:
            raise ValueError(f"unknown role {self.role!r}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        expected = ROLE_PROVENANCE[self.role]
        seen = set()
        for s in self.samples:
            if s.provenance != expected:
                raise ValueError(
                    f"sample {s.id!r} has provenance {s.provenance!r}, but role "
                    f"{self.role!r} requires {expected!r}"
                )
            if s.id in seen:
                raise ValueError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def is_rectangular(self) -> bool:
        return len({s.length for s in self.samples}) <= 1

    def input_matrix(self) -> np.ndarray:
        """Stack all inputs into an (n, T) array; requires equal lengths."""
        if not self.is_rectangular():
            raise ValueError("dataset has samples of different lengths")
        return np.stack([s.input for s in self.samples])

    def output_matrix(self) -> np.ndarray:
        if any(s.output is None for s in self.samples):
            raise ValueError("dataset has unlabeled samples, no output matrix")
        if not self.is_rectangular():
            raise ValueError("dataset has samples of different lengths")
        return np.stack([s.output for s in self.samples])

    def with_norm(self, norm: NormalizationParams) -> "Dataset":
        return replace(self, norm=norm)

    def subset(self, ids) -> "Dataset":
        wanted = list(ids)
        by_id = {s.id: s for s in self.samples}
        missing = [i for i in wanted if i not in by_id]
        if missing:
            raise ValueError(f"unknown sample ids: {missing}")
        return replace(self, samples=tuple(by_id[i] for i in wanted))


@dataclass(frozen=True)
class DatasetBundle:
    """The four datasets one framework run consumes."""

    train: Dataset
    val: Dataset
    test: Dataset
    pool: Dataset
    norm: NormalizationParams | None = None


def fit_normalization(dataset: Dataset) -> NormalizationParams:
    """Fit global per-channel min/max bounds over a labeled dataset."""
    if len(dataset) == 0:
        raise ValueError("cannot fit normalization on an empty dataset")
    inputs = np.concatenate([s.input for s in dataset])
    outputs = [s.output for s in dataset if s.output is not None]
    if not outputs:
        raise ValueError("cannot fit output bounds: dataset has no labeled samples")
    outputs = np.concatenate(outputs)
    in_lo, in_hi = float(inputs.min()), float(inputs.max())
    out_lo, out_hi = float(outputs.min()), float(outputs.max())
    if in_lo == in_hi:
        raise ValueError(f"degenerate input channel: all values equal {in_lo}")
    if out_lo == out_hi:
        raise ValueError(f"degenerate output channel: all values equal {out_lo}")
    return NormalizationParams(in_lo, in_hi, out_lo, out_hi)


def normalize_values(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Affine map [lo, hi] -> [-1, 1]; values outside the bounds pass through unclipped."""
    return 2.0 * (np.asarray(values, dtype=np.float64) - lo) / (hi - lo) - 1.0


def denormalize_values(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) + 1.0) * (hi - lo) / 2.0 + lo


def normalize(sample: TimeSeriesSample, params: NormalizationParams) -> TimeSeriesSample:
    """Map a sample into normalized coordinates; lengths and provenance are preserved."""
    out = None
    if sample.output is not None:
        out = normalize_values(sample.output, params.output_min, params.output_max)
    return TimeSeriesSample(
        id=sample.id,
        input=normalize_values(sample.input, params.input_min, params.input_max),
        output=out,
        provenance=sample.provenance,
    )


def denormalize(sample: TimeSeriesSample, params: NormalizationParams) -> TimeSeriesSample:
    out = None
    if sample.output is not None:
        out = denormalize_values(sample.output, params.output_min, params.output_max)
    return TimeSeriesSample(
        id=sample.id,
        input=denormalize_values(sample.input, params.input_min, params.input_max),
        output=out,
        provenance=sample.provenance,
    )


def split_dataset(dataset: Dataset, fractions, seed: int):
    """Randomly partition into (train, val, test) datasets.

    Sizes are round(fraction * n) for val and test, with the remainder going
    to the training split. Deterministic for a given seed.
    """
    f_train, f_val, f_test = fractions
    if min(f_train, f_val, f_test) <= 0:
        raise ValueError(f"fractions must be positive, got {fractions}")
    if abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    n = len(dataset)
    if n < 3:
        raise ValueError(f"need at least 3 samples to split, got {n}")
    n_val = round(f_val * n)
    n_test = round(f_test * n)
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(
            f"split of {n} samples at fractions {fractions} leaves an empty part "
            f"({n_train}/{n_val}/{n_test})"
        )
    order = np.random.default_rng(seed).permutation(n)
    samples = dataset.samples
    train_s = [samples[i] for i in order[:n_train]]
    val_s = [samples[i] for i in order[n_train:n_train + n_val]]
    test_s = [samples[i] for i in order[n_train + n_val:]]
    mk = lambda s, role: Dataset(samples=tuple(s), role=role, dt=dataset.dt, norm=dataset.norm)
    return mk(train_s, dataset.role), mk(val_s, ROLE_VALIDATION), mk(test_s, ROLE_TEST)


# ---------------------------------------------------------------------------
# directory format: manifest.json + one two-column text file per channel
# ---------------------------------------------------------------------------

_MANIFEST_NAME = "manifest.json"


def _float_field(value: float) -> str:
    # 17 significant digits round-trip any double exactly
    return f"{value:.17g}"


def write_dataset(dataset: Dataset, path) -> None:
    """Write a dataset directory: manifest.json plus `<id>.input.txt` / `<id>.output.txt`.

    Series rows are `t_index value` with values printed to 17 significant
    digits, so reading the directory back reproduces every double exactly.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in dataset.samples:
        if not _ID_PATTERN.match(s.id):
            raise ValueError(f"sample id {s.id!r} is not filesystem-safe")
        entries.append({"id": s.id, "length": s.length, "labeled": s.output is not None})
    manifest = {
        "format_version": 1,
        "n_samples": len(dataset),
        "role": dataset.role,
        "dt": _float_field(dataset.dt),
        "norm": None
        if dataset.norm is None
        else {
            "input_min": _float_field(dataset.norm.input_min),
            "input_max": _float_field(dataset.norm.input_max),
            "output_min": _float_field(dataset.norm.output_min),
            "output_max": _float_field(dataset.norm.output_max),
        },
        "samples": entries,
    }
    with open(path / _MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for s in dataset.samples:
        _write_series(path / f"{s.id}.input.txt", s.input)
        if s.output is not None:
            _write_series(path / f"{s.id}.output.txt", s.output)


def _write_series(path: Path, values: np.ndarray) -> None:
    with open(path, "w") as fh:
        for i, v in enumerate(values):
            fh.write(f"{i} {v:.17g}\n")


def _read_series(path: Path, expected_length: int) -> np.ndarray:
    if not path.exists():
        raise ValueError(f"missing series file {path}")
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns `t_index value`, got {data.shape[1]}")
    if data.shape[0] != expected_length:
        raise ValueError(
            f"{path}: declared length {expected_length} but file has {data.shape[0]} rows"
        )
    return np.ascontiguousarray(data[:, 1])


def read_dataset(path) -> Dataset:
    """Read a dataset directory written by `write_dataset`."""
    path = Path(path)
    manifest_path = path / _MANIFEST_NAME
    if not manifest_path.exists():
        raise ValueError(f"missing required metadata file {manifest_path}")
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed manifest {manifest_path}: {exc}") from exc
    for key in ("role", "dt", "samples"):
        if key not in manifest:
            raise ValueError(f"{manifest_path}: missing required key {key!r}")
    role = manifest["role"]
    if role not in ROLE_PROVENANCE:
        raise ValueError(f"{manifest_path}: unknown role {role!r}")
    provenance = ROLE_PROVENANCE[role]
    norm = None
    if manifest.get("norm") is not None:
        m = manifest["norm"]
        norm = NormalizationParams(
            float(m["input_min"]), float(m["input_max"]),
            float(m["output_min"]), float(m["output_max"]),
        )
    samples = []
    for entry in manifest["samples"]:
        sid, length = entry["id"], int(entry["length"])
        series_in = _read_series(path / f"{sid}.input.txt", length)
        series_out = None
        if entry["labeled"]:
            series_out = _read_series(path / f"{sid}.output.txt", length)
        samples.append(TimeSeriesSample(sid, series_in, series_out, provenance))
    ds = Dataset(samples=tuple(samples), role=role, dt=float(manifest["dt"]), norm=norm)
    declared = int(manifest["n_samples"])
    if declared != len(ds):
        raise ValueError(f"{manifest_path}: declares {declared} samples, found {len(ds)}")
    return ds


# ---------------------------------------------------------------------------
# generic column-file importer for externally supplied records
# ---------------------------------------------------------------------------

def import_series_column(path, column: int = -1) -> np.ndarray:
    """Read one numeric column from any whitespace- or comma-delimited record file.

    Lines that do not parse as numbers (headers, comments) are skipped, so
    typical exported accelerograms and displacement records load directly.
    """
    values = []
    with open(path) as fh:
        for line in fh:
            parts = line.replace(",", " ").split()
            if not parts:
                continue
            try:
                row = [float(p) for p in parts]
            except ValueError:
                continue
            try:
                values.append(row[column])
            except IndexError:
                raise ValueError(
                    f"{path}: column {column} out of range for row with {len(row)} fields"
                )
    if len(values) < 2:
        raise ValueError(f"{path}: found {len(values)} numeric rows, need at least 2")
    return np.asarray(values, dtype=np.float64)


def pool_from_files(paths, dt: float, column: int = -1) -> Dataset:
    """Build an unlabeled pool from local record files (one sample per file)."""
    samples = []
    for p in paths:
        p = Path(p)
        sid = re.sub(r"[^A-Za-z0-9._-]", "_", p.stem)
        samples.append(
            TimeSeriesSample(sid, import_series_column(p, column), None, PROVENANCE_UNLABELED)
        )
    return Dataset(samples=tuple(samples), role=ROLE_UNLABELED, dt=dt)
