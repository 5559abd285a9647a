"""Enumerable experiment grids for the ablation studies."""

from dataclasses import dataclass, replace

from ..metrics import LossConfig
from ..model import ModelConfig

# (background, target, noise, reconstruction) attention flags, cumulative
SE_ROWS = (
    ("none", (False, False, False, False)),
    ("background", (True, False, False, False)),
    ("background+target", (True, True, False, False)),
    ("background+target+noise", (True, True, True, False)),
    ("all", (True, True, True, True)),
)
STAGE_COUNTS = tuple(range(1, 8))
CHANNEL_GRID = ((4, 32), (8, 32), (16, 32), (4, 40), (4, 48), (4, 56), (4, 64))
ETA_GRID = (0.005, 0.01, 0.015, 0.2)
GRIDS = ("se", "stages", "channels", "eta")


@dataclass(frozen=True)
class AblationEntry:
    grid: str
    label: str
    model: ModelConfig
    loss: LossConfig


def ablation_grid(name, base_model=None, base_loss=None):
    m = base_model or ModelConfig()
    loss = base_loss or LossConfig()
    if name == "se":
        return [AblationEntry(name, label, replace(m, se_enabled=flags), loss) for label, flags in SE_ROWS]
    if name == "stages":
        return [AblationEntry(name, f"K={k}", replace(m, K=k), loss) for k in STAGE_COUNTS]
    if name == "channels":
        return [AblationEntry(name, f"BC={bc},C={c}", replace(m, BC=bc, C=c), loss) for bc, c in CHANNEL_GRID]
    if name == "eta":
        return [AblationEntry(name, f"eta={e}", m, replace(loss, eta=e)) for e in ETA_GRID]
    raise ValueError(f"unknown grid {name!r}; choose from {GRIDS}")
