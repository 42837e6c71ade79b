from .config import ExperimentConfig, load_config
from .runner import evaluate_command, generate_command, train_command
from .study import StudyCell, StudyPlan, build_plan, study_command
from .report import RunStore, build_report
from .cli import main, run
