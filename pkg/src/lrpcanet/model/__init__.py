from .config import SE_KINDS, ModelConfig
from .lipschitz import LipschitzEstimate, estimate_lipschitz, lipschitz_lower_bound
from .network import (
    LRPCANet, Stage, StageRecord, conv_group, count_parameters, model_forward,
    se_parameter_count, sebem_forward, seirm_forward, senrm_forward, setem_forward,
)

__all__ = [
    "SE_KINDS", "LRPCANet", "LipschitzEstimate", "ModelConfig", "Stage",
    "StageRecord", "conv_group", "count_parameters", "estimate_lipschitz",
    "lipschitz_lower_bound", "model_forward", "se_parameter_count",
    "sebem_forward", "seirm_forward", "senrm_forward", "setem_forward",
]
