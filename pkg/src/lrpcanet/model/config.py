import hashlib
import json
from dataclasses import asdict, dataclass, fields

SE_KINDS = ("background", "target", "noise", "reconstruction")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of the unfolded network.

    ``se_enabled`` toggles the SE block of the background, target, noise and
    reconstruction modules (in that order).  ``n_fill`` is the number of extra
    C->C conv layers inside the background/target/noise conv groups.
    """

    K: int = 6
    BC: int = 4
    C: int = 32
    l_D: int = 3
    se_ratio: int = 4
    se_enabled: tuple = (True, True, True, True)
    n_fill: int = 0
    eps_init: float = 0.5
    sigma_init: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "se_enabled", tuple(bool(b) for b in self.se_enabled))
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if not 1 <= self.BC <= self.C:
            raise ValueError(f"need 1 <= BC <= C, got BC={self.BC}, C={self.C}")
        if self.se_ratio < 1 or self.C % self.se_ratio:
            raise ValueError(f"se_ratio {self.se_ratio} must divide C={self.C}")
        if len(self.se_enabled) != 4:
            raise ValueError("se_enabled needs one flag per module kind (4)")
        if self.l_D < 0 or self.n_fill < 0:
            raise ValueError("layer counts must be non-negative")

    def to_dict(self):
        d = asdict(self)
        d["se_enabled"] = list(self.se_enabled)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: (tuple(v) if k == "se_enabled" else v) for k, v in d.items() if k in known})

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()
