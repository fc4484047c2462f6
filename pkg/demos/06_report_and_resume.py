"""Resume an interrupted framework run and post-process it.

Starts the same run twice: the first attempt is killed after two iterations,
the second call picks it up from the run directory and finishes it. The
resumed result is identical to an uninterrupted run with the same seed.
"""

import shutil
from pathlib import Path

import selftransfer.framework as fw
from selftransfer import (
    BoucWenParams,
    CaseStudyConfig,
    DanTrArch,
    FrameworkConfig,
    MkMmdConfig,
    SineMixConfig,
    SurrogateArch,
    TrainConfig,
    build_case_study,
    run_framework,
)
from selftransfer.report import summarize_run

OUT = Path(__file__).parent / "out"
RUN = OUT / "resumable-run"
if RUN.exists():
    shutil.rmtree(RUN)

bundle = build_case_study(CaseStudyConfig(
    n_labeled=40, splits=(0.6, 0.2, 0.2), n_unlabeled=60, n_unlabeled_base=10,
    sine=SineMixConfig(n_components=2, period_range=(0.4, 2.0),
                       amplitude_range=(0.5, 1.5), length=64, dt=0.02),
    peak_range=(0.5, 3.5), boucwen=BoucWenParams(alpha=0.05, n_exp=2.0), master_seed=3,
))

train = TrainConfig(n_steps=60, batch_size=8, base_lr=3e-3, lr_min=3e-4,
                    ema_alpha=0.95, consistency_weight_max=0.0, eval_interval=30)
config = FrameworkConfig(
    n_inits=2, pl_per_block=1, max_iterations=3, pseudo_count_per_iter=30, master_seed=5,
    surrogate_arch=SurrogateArch(1, 2, 8),
    dantr_arch=DanTrArch(1, 1, 2, 8),
    mmd=MkMmdConfig(layer_range=(0, 1)),
    pl_train=train, dantr_train=train, final_train=train,
)

# simulate a crash after the first two iterations
original = fw.run_pl_iteration
calls = {"n": 0}

def crashing_pl(cfg, state):
    record = original(cfg, state)
    calls["n"] += 1
    if calls["n"] == 1:
        raise KeyboardInterrupt("simulated crash")
    return record

fw.run_pl_iteration = crashing_pl
try:
    run_framework(config, bundle, RUN)
except KeyboardInterrupt:
    done = len((RUN / "records.jsonl").read_text().splitlines())
    print(f"crashed after {done} persisted iterations, resuming...")
finally:
    fw.run_pl_iteration = original

record = run_framework(config, bundle, RUN, resume=True)
print(f"resumed run finished with {len(record.iterations)} iterations\n")
print(summarize_run(RUN))
