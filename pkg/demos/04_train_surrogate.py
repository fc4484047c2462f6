"""Train one supervised surrogate with a mean teacher and plot its predictions.

Uses a reduced copy of the case study (shorter series, fewer samples) so the
demo finishes in about a minute on a laptop CPU.
"""

from pathlib import Path

from selftransfer import (
    CaseStudyConfig,
    SineMixConfig,
    SurrogateArch,
    TrainConfig,
    build_case_study,
    evaluate_mse,
    save_checkpoint,
    train_supervised,
)
from selftransfer.report import plot_predictions

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

bundle = build_case_study(CaseStudyConfig(
    n_labeled=60, splits=(0.7, 0.15, 0.15), n_unlabeled=4, n_unlabeled_base=2,
    sine=SineMixConfig(n_components=2, period_range=(0.4, 2.5),
                       amplitude_range=(0.5, 1.5), length=128, dt=0.02),
    peak_range=(0.5, 3.5), master_seed=7,
))

arch = SurrogateArch(n_recurrent_layers=2, n_dense_layers=2, hidden_dim=24)
config = TrainConfig(n_steps=400, batch_size=16, base_lr=2e-3, lr_min=2e-4,
                     ema_alpha=0.98, consistency_weight_max=0.3,
                     input_noise_std=0.01, eval_interval=50, seed=0)

result = train_supervised(arch, bundle.train, config, bundle.val,
                          log_path=OUT / "metrics.jsonl")
print(f"student val MSE {result.student_val_mse:.4e}, "
      f"teacher val MSE {result.teacher_val_mse:.4e}")
print(f"test MSE {evaluate_mse(result.student, bundle.test):.4e}")

ckpt = OUT / "surrogate.pt"
save_checkpoint(ckpt, kind="supervised", surrogate_arch=arch,
                student=result.student, teacher=result.teacher)
files = plot_predictions(ckpt, bundle.test, bundle.test.ids()[:3], OUT / "overlays")
print("wrote", *files, sep="\n  ")
