"""Iterative self-transfer learning for sequence surrogates of hysteretic response.

The toolkit trains sequence-to-sequence surrogate models from very small
labeled datasets by alternating pseudo-label (mean-teacher) training with
multi-kernel-MMD adaptation training on a three-branch network, orchestrated
over a reproducible synthetic case study.
"""

from .data import (
    Dataset,
    DatasetBundle,
    NormalizationParams,
    TimeSeriesSample,
    denormalize,
    fit_normalization,
    import_series_column,
    normalize,
    pool_from_files,
    read_dataset,
    split_dataset,
    write_dataset,
)
from .framework import (
    FrameworkConfig,
    FrameworkState,
    IterationRecord,
    RunRecord,
    register_final_arch,
    run_dantr_iteration,
    run_direct,
    run_final,
    run_framework,
    run_pl_iteration,
    should_stop,
)
from .generate import (
    AugmentConfig,
    BoucWenParams,
    CaseStudyConfig,
    SineMixConfig,
    augment_unlabeled,
    boucwen_response,
    build_case_study,
    gen_sine_mix,
    read_case_study,
)
from .mmd import MkMmdConfig, gaussian_kernel, layer_mmd_sum, median_bandwidth, mk_mmd, mmd_weight
from .networks import (
    DanTrArch,
    DanTrNet,
    SurrogateArch,
    SurrogateNet,
    dantr_loss,
    extract_target_surrogate,
    load_checkpoint,
    make_dantr,
    make_surrogate,
    save_checkpoint,
)
from .report import ReductionSeries, plot_predictions, plot_reductions, summarize_run
from .training import (
    TrainConfig,
    ema_update,
    evaluate_mse,
    pseudo_label,
    train_dantr,
    train_supervised,
)

__version__ = "0.1.0"
