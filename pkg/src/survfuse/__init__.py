"""Two-branch survival fusion at desk scale.

Cox partial-likelihood training over a genomic branch (SNN on cnv/mutation
features plus a frozen encoder -> MLP-A path for bulk rna) and an image
branch, with contribution-ratio gradient modulation and mixup-based latent
smoothing, plus synthetic data generation and a cross-validation harness.
"""

from importlib.metadata import PackageNotFoundError
from importlib.metadata import version as _pkg_version

try:
    __version__ = _pkg_version("survfuse")
except PackageNotFoundError:   # running from a source tree without install
    __version__ = "0+unknown"

from .errors import (ConcordanceUndefinedError, ConfigError, NumericalError,
                     ShapeError, StateError, SurvfuseError, ValidationError)
from .nnet import (DenseLayer, ParamGroup, layer_group, load_checkpoint,
                   make_mlp, mlp_backward, mlp_forward, mse_loss,
                   save_checkpoint, sgd_step, step_decay_eta)
from .survival import (CoxBatch, SurvivalRecord, build_risk_sets,
                       concordance_index, cox_gradient, cox_loss,
                       fit_linear_cox, probe_c_index)
from .modulation import (ContributionReport, ModulationConfig, apply_modulation,
                         branch_scores, contribution_ratio, modulation_factor)
from .smoothing import (CellCorpusSpec, CellProfile, FrozenEncoder, MixupSample,
                        Stage1Config, Stage1Result, default_encoder,
                        generate_cells, interpolation_gap, load_cells,
                        load_stage1, mix_samples, pretrain_mlp_a, save_cells,
                        save_stage1)
from .fusion import (FusionModel, FusionSpec, GenomicInput, TrainConfig,
                     build_model, evaluate, fused_hazard, genomic_branch,
                     kronecker_fusion, load_model, predict_theta, save_model,
                     train_survival)
from .cohort import (CohortSpec, FoldPlan, default_hazard_coef, fold_split,
                     generate_cohort, load_cohort, modality_spans, save_cohort,
                     split_folds)

__all__ = [
    "__version__",
    "SurvfuseError", "ShapeError", "StateError", "ValidationError",
    "NumericalError", "ConcordanceUndefinedError", "ConfigError",
    "DenseLayer", "ParamGroup", "layer_group", "make_mlp", "mlp_forward",
    "mlp_backward", "sgd_step", "step_decay_eta", "mse_loss",
    "save_checkpoint", "load_checkpoint",
    "SurvivalRecord", "CoxBatch", "build_risk_sets", "cox_loss",
    "cox_gradient", "concordance_index", "fit_linear_cox", "probe_c_index",
    "ModulationConfig", "ContributionReport", "branch_scores",
    "contribution_ratio", "modulation_factor", "apply_modulation",
    "CellProfile", "MixupSample", "mix_samples", "FrozenEncoder",
    "default_encoder", "CellCorpusSpec", "generate_cells", "save_cells",
    "load_cells", "Stage1Config", "Stage1Result", "pretrain_mlp_a",
    "interpolation_gap", "save_stage1", "load_stage1",
    "FusionSpec", "FusionModel", "GenomicInput", "build_model",
    "genomic_branch", "fused_hazard", "kronecker_fusion", "TrainConfig",
    "train_survival", "evaluate", "predict_theta", "save_model", "load_model",
    "CohortSpec", "generate_cohort", "FoldPlan", "split_folds", "fold_split",
    "save_cohort", "load_cohort", "modality_spans", "default_hazard_coef",
]
