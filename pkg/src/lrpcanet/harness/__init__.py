from .ablation import AblationEntry, ablation_grid
from .checkpoint import (
    Checkpoint, CheckpointError, CheckpointVersionError, ConfigMismatchError,
    load_checkpoint, save_checkpoint,
)
from .config import ConfigError, RunConfig, apply_pairs, parse_config_text, read_config_file
from .evaluation import (
    decompose, evaluate, evaluate_baseline, robustness_sweep, score_samples, threshold_sweep,
)
from .training import NumericalError, TrainResult, build_datasets, train

__all__ = [
    "AblationEntry", "Checkpoint", "CheckpointError", "CheckpointVersionError",
    "ConfigError", "ConfigMismatchError", "NumericalError", "RunConfig", "TrainResult",
    "ablation_grid", "apply_pairs", "build_datasets", "decompose", "evaluate",
    "evaluate_baseline", "load_checkpoint", "parse_config_text", "read_config_file",
    "robustness_sweep", "save_checkpoint", "score_samples", "threshold_sweep", "train",
]
