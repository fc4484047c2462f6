"""Command-line entry points.

Subcommands: `gen-data` (manufacture a case study), `iterate` (full framework
run), `train` (one supervised or adaptation training), `evaluate` (MSE of a
checkpoint on a dataset) and `report` (summary table and plots of a run).

Run configs are JSON documents; every section maps onto one config dataclass
and unknown or ill-typed keys are rejected with the offending path.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .data import read_dataset
from .framework import FrameworkConfig, run_framework
from .generate import (
    BoucWenParams,
    CaseStudyConfig,
    SineMixConfig,
    build_case_study,
    read_case_study,
)
from .mmd import MkMmdConfig
from .networks import DanTrArch, SurrogateArch, load_checkpoint, save_checkpoint
from .report import plot_predictions, plot_reductions, summarize_run
from .training import TrainConfig, evaluate_mse, train_dantr, train_supervised

_NESTED = {
    "sine": SineMixConfig,
    "boucwen": BoucWenParams,
    "surrogate_arch": SurrogateArch,
    "dantr_arch": DanTrArch,
    "mmd": MkMmdConfig,
    "pl_train": TrainConfig,
    "dantr_train": TrainConfig,
    "final_train": TrainConfig,
}


def build_config(cls, payload: dict, context: str):
    """Instantiate a config dataclass from a plain dict, naming bad keys."""
    if not isinstance(payload, dict):
        raise ValueError(f"{context}: expected an object, got {type(payload).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ValueError(f"{context}: unknown keys {unknown}; valid keys: {sorted(known)}")
    kwargs = {}
    for key, value in payload.items():
        if key in _NESTED and isinstance(value, dict):
            value = build_config(_NESTED[key], value, f"{context}.{key}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{context}: {exc}") from exc


def load_run_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ValueError(f"config file {path} does not exist")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise ValueError(f"{path}: top level must be an object")
    return payload


def _case_study_config(payload: dict, seed_override) -> CaseStudyConfig:
    if seed_override is not None:
        payload = {**payload, "master_seed": seed_override}
    return build_config(CaseStudyConfig, payload, "data.generate")


def _resolve_bundle(payload: dict, out_dir: Path, seed_override):
    data = payload.get("data", {})
    if "dir" in data:
        return read_case_study(data["dir"])
    if "generate" in data:
        gen_cfg = _case_study_config(data["generate"], seed_override)
        data_dir = out_dir / "data"
        return build_case_study(gen_cfg, out_dir=data_dir)
    raise ValueError("config needs data.dir or data.generate")


def cmd_gen_data(args) -> int:
    payload = load_run_config(args.config)
    gen = payload.get("data", {}).get("generate", payload if "n_labeled" in payload else None)
    if gen is None:
        raise ValueError("config needs a data.generate section (or bare case-study keys)")
    cfg = _case_study_config(gen, args.seed)
    bundle = build_case_study(cfg, out_dir=args.out)
    print(
        f"wrote case study to {args.out}: {len(bundle.train)} train / {len(bundle.val)} val / "
        f"{len(bundle.test)} test / {len(bundle.pool)} pool"
    )
    return 0


def cmd_iterate(args) -> int:
    payload = load_run_config(args.config)
    out_dir = Path(args.out)
    framework_payload = payload.get("framework", {})
    if args.seed is not None:
        framework_payload = {**framework_payload, "master_seed": args.seed}
    cfg = build_config(FrameworkConfig, framework_payload, "framework")
    bundle = _resolve_bundle(payload, out_dir, args.seed)
    record = run_framework(cfg, bundle, out_dir / "run", resume=args.resume)
    print(f"run complete: {len(record.iterations)} iterations, "
          f"final test MSE {record.final_test_mse:.6e}")
    print(summarize_run(out_dir / "run"))
    return 0


def cmd_train(args) -> int:
    payload = load_run_config(args.config)
    bundle = read_case_study(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fw = payload.get("framework", {})
    if args.mode == "supervised":
        arch = build_config(SurrogateArch, fw.get("surrogate_arch", {}), "framework.surrogate_arch")
        tc = build_config(TrainConfig, fw.get("pl_train", {}), "framework.pl_train")
        if args.seed is not None:
            tc = dataclasses.replace(tc, seed=args.seed)
        res = train_supervised(arch, bundle.train, tc, bundle.val,
                               log_path=out_dir / "metrics.jsonl")
        save_checkpoint(out_dir / "checkpoint.pt", kind="supervised", surrogate_arch=arch,
                        student=res.student, teacher=res.teacher, meta={"seed": tc.seed})
        print(f"val MSE (student) {res.student_val_mse:.6e}, "
              f"(teacher) {res.teacher_val_mse:.6e}")
    else:
        if args.source is None:
            raise ValueError("--mode dantr needs --source <pseudo dataset dir>")
        source = read_dataset(args.source)
        arch = build_config(DanTrArch, fw.get("dantr_arch", {}), "framework.dantr_arch")
        mmd_cfg = build_config(MkMmdConfig, fw.get("mmd", {}), "framework.mmd")
        tc = build_config(TrainConfig, fw.get("dantr_train", {}), "framework.dantr_train")
        if args.seed is not None:
            tc = dataclasses.replace(tc, seed=args.seed)
        res = train_dantr(arch, source, bundle.train, tc, mmd_cfg, bundle.val,
                          log_path=out_dir / "metrics.jsonl")
        from .networks import extract_target_surrogate

        extracted = extract_target_surrogate(res.net)
        save_checkpoint(out_dir / "checkpoint.pt", kind="dantr",
                        surrogate_arch=extracted.arch, student=extracted,
                        dantr_arch=arch, dantr_net=res.net, meta={"seed": tc.seed})
        print(f"val MSE (target branch) {res.val_mse:.6e}")
    return 0


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.checkpoint).make_student()
    dataset = read_dataset(args.dataset)
    print(f"{evaluate_mse(model, dataset):.6e}")
    return 0


def cmd_report(args) -> int:
    print(summarize_run(args.run), end="")
    if args.plots:
        path = plot_reductions(args.run)
        print(f"wrote {path}")
        if args.checkpoint and args.dataset and args.samples:
            files = plot_predictions(
                args.checkpoint, read_dataset(args.dataset), args.samples.split(","),
                Path(args.run) / "plots",
            )
            for f in files:
                print(f"wrote {f}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selftransfer",
        description="Iterative self-transfer training of hysteretic-response surrogates",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic case study")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("iterate", help="run the full iterative framework")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(fn=cmd_iterate)

    p = sub.add_parser("train", help="one supervised or adaptation training run")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="case-study directory")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("supervised", "dantr"), default="supervised")
    p.add_argument("--source", default=None, help="pseudo dataset dir (dantr mode)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="MSE of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("report", help="summary table and plots of a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--plots", action="store_true")
    p.add_argument("--checkpoint", default=None, help="checkpoint for prediction overlays")
    p.add_argument("--dataset", default=None, help="dataset dir for prediction overlays")
    p.add_argument("--samples", default=None, help="comma-separated sample ids to plot")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
