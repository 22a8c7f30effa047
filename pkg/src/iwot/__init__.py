"""Instance-weighted optimal transport for unsupervised domain adaptation.

The package trains a small feature extractor, classifier and instance-weight
head so that a labeled source domain aligns with an unlabeled target domain
under cosine-cost optimal transport. Learned instance weights serve as
transport marginals, which lets one objective cover four label-space
relationships (UniDA, PDA, OSDA, CSDA) by switching which marginals are
learned and which auxiliary losses run.

Layer map: `ot` and `reference` solve and certify transport problems;
`losses` builds the training objective and its hand-derived gradients;
`nets` is the no-autograd network stack; `settings` encodes the per-setting
plans; `data` synthesizes and serializes dataset pairs; `train`, `evaluate`
and `cli` wire everything into runs.
"""

from .data import DomainDataset, LabelSplit, ShiftSpec, generate_pair, load_dataset, save_dataset
from .errors import ConfigError, DataFormatError, DegenerateInputError, NumericalError
from .evaluation import EvalReport, Prediction, evaluate, h_score, infer, score_predictions
from .losses import (
    LossGrads,
    TransportTerm,
    WeightAssignment,
    iot_loss,
    loss_backward,
    normalize_weights,
    partial_coupling,
    sa_loss,
    total_loss,
    wot_loss,
)
from .nets import Mlp, SgdMomentum, cross_entropy, load_checkpoint, save_checkpoint
from .ot import (
    CouplingReport,
    SinkhornResult,
    cosine_cost,
    coupling_cost,
    solve_exact,
    solve_sinkhorn,
    validate_coupling,
)
from .settings import Setting, SettingPlan, parse_setting, plan_for_setting
from .training import TrainConfig, TrainHistory, TrainedModel, load_history_csv, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CouplingReport",
    "DataFormatError",
    "DegenerateInputError",
    "DomainDataset",
    "EvalReport",
    "LabelSplit",
    "LossGrads",
    "Mlp",
    "NumericalError",
    "Prediction",
    "Setting",
    "SettingPlan",
    "SgdMomentum",
    "ShiftSpec",
    "SinkhornResult",
    "TrainConfig",
    "TrainHistory",
    "TrainedModel",
    "TransportTerm",
    "WeightAssignment",
    "cosine_cost",
    "coupling_cost",
    "cross_entropy",
    "evaluate",
    "generate_pair",
    "h_score",
    "infer",
    "iot_loss",
    "load_checkpoint",
    "load_dataset",
    "load_history_csv",
    "loss_backward",
    "normalize_weights",
    "parse_setting",
    "partial_coupling",
    "plan_for_setting",
    "sa_loss",
    "save_checkpoint",
    "save_dataset",
    "score_predictions",
    "solve_exact",
    "solve_sinkhorn",
    "total_loss",
    "train",
    "validate_coupling",
    "wot_loss",
    "__version__",
]
