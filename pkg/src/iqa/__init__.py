from .tasks import (
    PredictionBatch,
    PredictorModel,
    TaskSpec,
    accuracy,
    build_predictor,
    dice,
    performance,
    predict,
    train_step,
)
from .reward import RewardConfig, RewardState, clip, shaped_reward, unclipped_reward
from .controller import (
    ActionBatch,
    ControllerModel,
    PolicyUpdateConfig,
    build_controller,
    load_controller,
    log_policy,
    policy_update,
    sample_actions,
    save_controller,
    score,
)
from .trace import EpisodeTrace, StepRecord
from .models import RunManifest
from .trainer import TrainerConfig, run_episode, train_iqa, train_non_selective, train_shaped
from .evaluation import (
    ContingencyTable,
    QuadrantReport,
    RejectionCurve,
    cohens_kappa,
    contingency,
    detection_auc,
    paired_ttest,
    quadrant_report,
    reject_lowest,
    rejection_sweep,
    spearman,
)
