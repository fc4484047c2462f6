"""Run the whole iterative self-transfer framework on a reduced case study.

Schedule: direct training, then blocks of two pseudo-label iterations plus
one adaptation iteration, then final training with a single test-set touch.
Takes a few minutes; prints the summary table and writes reduction plots.
"""

from pathlib import Path

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
from selftransfer.report import plot_reductions, summarize_run

OUT = Path(__file__).parent / "out" / "framework-run"

bundle = build_case_study(CaseStudyConfig(
    n_labeled=80, splits=(0.6, 0.2, 0.2), n_train_subset=8,
    n_unlabeled=300, n_unlabeled_base=40,
    sine=SineMixConfig(n_components=2, period_range=(0.4, 2.5),
                       amplitude_range=(0.5, 1.5), length=96, dt=0.02),
    peak_range=(0.5, 3.5),
    boucwen=BoucWenParams(alpha=0.05, n_exp=2.0),
    master_seed=11,
))

train = TrainConfig(n_steps=200, batch_size=8, base_lr=2e-3, lr_min=2e-4,
                    ema_alpha=0.97, consistency_weight_max=0.0, eval_interval=50)
config = FrameworkConfig(
    n_inits=2,
    pl_per_block=2,
    max_iterations=4,
    pseudo_count_per_iter=100,
    master_seed=1,
    surrogate_arch=SurrogateArch(n_recurrent_layers=2, n_dense_layers=2, hidden_dim=16),
    dantr_arch=DanTrArch(shared_recurrent_layers=2, tailored_recurrent_layers=1,
                         tailored_dense_layers=2, hidden_dim=16),
    mmd=MkMmdConfig(layer_range=(0, 1)),
    pl_train=train,
    dantr_train=train,
    final_train=train,
)

record = run_framework(config, bundle, OUT)
print(summarize_run(OUT))
print("reduction plot:", plot_reductions(OUT))
print(f"final test MSE: {record.final_test_mse:.4e}")
