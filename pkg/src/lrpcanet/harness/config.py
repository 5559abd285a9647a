"""Run configuration and the flat ``key=value`` config-file format.

Recognised keys (all optional)::

    mode            train | eval | decompose | sweep | synth | gradcheck | baseline
    seed            integer
    out             output directory
    K BC C l_D se_ratio n_fill      model shape
    se_background se_target se_noise se_reconstruction   true/false
    eta threshold                  loss / binarisation
    lr batch_size epochs val_every checkpoint_every lipschitz_probes
    lr_schedule     cosine (lr decays to 0 over the run) | constant
    data            dataset root (images/ + masks/); omit for synthetic data
    n_scenes height width rank background_scale
    amp_lo amp_hi sigma_lo sigma_hi targets_min targets_max
    train_fraction  eval_split (val | all)
    train_noise     none | gaussian:<variance> | salt_pepper:<salt prob>
                    (noise applied to training images; evaluation noise is
                    controlled by the sweep command)
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..metrics import LossConfig
from ..model import ModelConfig
from ..scenes import NoiseSpec, SceneConfig

LR_SCHEDULES = ("cosine", "constant")
MODES = ("train", "eval", "decompose", "sweep", "synth", "gradcheck", "baseline")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "train"
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = 1e-4  # initial rate
    lr_schedule: str = "cosine"
    batch_size: int = 8
    epochs: int = 50
    val_every: int = 5
    checkpoint_every: int = 5
    lipschitz_probes: int = 8
    data: str = None
    scene: SceneConfig = field(default_factory=SceneConfig)
    n_scenes: int = 200
    target_count_range: tuple = (1, 3)
    train_fraction: float = 0.8
    eval_split: str = "val"
    train_noise: str = "none"
    seed: int = 0
    output_dir: str = "runs/default"

    def validate(self):
        parse_noise(self.train_noise)
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("lr must be positive, batch_size >= 1, epochs >= 0")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if self.val_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("val_every and checkpoint_every must be >= 1")
        if self.eval_split not in ("val", "all"):
            raise ConfigError("eval_split must be 'val' or 'all'")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError("train_fraction must lie in (0, 1]")
        return self


def parse_noise(text, pepper=0.04):
    """``none`` -> None; ``gaussian:V`` / ``salt_pepper:P`` -> NoiseSpec."""
    if text in (None, "", "none"):
        return None
    kind, _, level = text.partition(":")
    try:
        value = float(level)
        if kind == "gaussian":
            return NoiseSpec("gaussian", gaussian_variance=value)
        if kind == "salt_pepper":
            return NoiseSpec("salt_pepper", salt_prob=value, pepper_prob=pepper)
    except ValueError as exc:
        raise ConfigError(f"bad train_noise {text!r}: {exc}") from exc
    raise ConfigError(f"train_noise must be none, gaussian:<var> or salt_pepper:<p>, got {text!r}")


_MODEL_KEYS = {"K": int, "BC": int, "C": int, "l_D": int, "se_ratio": int, "n_fill": int}
_SE_KEYS = ("se_background", "se_target", "se_noise", "se_reconstruction")
_RUN_KEYS = {"mode": str, "lr": float, "lr_schedule": str, "batch_size": int, "epochs": int,
             "val_every": int,
             "checkpoint_every": int, "lipschitz_probes": int, "data": str, "n_scenes": int,
             "train_fraction": float, "eval_split": str, "train_noise": str, "seed": int,
             "out": str}
_SCENE_KEYS = {"height": int, "width": int, "rank": int, "background_scale": float}


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config_text(text):
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[key] = value
    return pairs


def read_config_file(path):
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def apply_pairs(cfg, pairs):
    """Return a copy of ``cfg`` with string ``key=value`` pairs applied."""
    model = cfg.model.to_dict()
    scene = cfg.scene
    loss = cfg.loss
    run = {}
    tmin, tmax = cfg.target_count_range
    for key, value in pairs.items():
        try:
            if key in _MODEL_KEYS:
                model[key] = _MODEL_KEYS[key](value)
            elif key in _SE_KEYS:
                flags = list(model["se_enabled"])
                flags[_SE_KEYS.index(key)] = _bool(value)
                model["se_enabled"] = flags
            elif key == "eta":
                loss = replace(loss, eta=float(value))
            elif key == "threshold":
                loss = replace(loss, binarize_threshold=float(value))
            elif key in _RUN_KEYS:
                run["output_dir" if key == "out" else key] = _RUN_KEYS[key](value)
            elif key in _SCENE_KEYS:
                name = "background_rank" if key == "rank" else key
                scene = replace(scene, **{name: _SCENE_KEYS[key](value)})
            elif key in ("amp_lo", "amp_hi"):
                lo, hi = scene.target_amplitude_range
                scene = replace(scene, target_amplitude_range=(float(value), hi) if key == "amp_lo" else (lo, float(value)))
            elif key in ("sigma_lo", "sigma_hi"):
                lo, hi = scene.target_sigma_range
                scene = replace(scene, target_sigma_range=(float(value), hi) if key == "sigma_lo" else (lo, float(value)))
            elif key == "targets_min":
                tmin = int(value)
            elif key == "targets_max":
                tmax = int(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc
    try:
        new_model = ModelConfig.from_dict(model)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    valid = {f.name for f in fields(RunConfig)}
    run = {k: v for k, v in run.items() if k in valid}
    return replace(cfg, model=new_model, loss=loss, scene=scene,
                   target_count_range=(tmin, tmax), **run).validate()


def to_pairs(cfg):
    """Inverse of :func:`apply_pairs` (used to record a run's configuration)."""
    m = cfg.model
    s = cfg.scene
    pairs = {
        "mode": cfg.mode, "seed": cfg.seed, "out": cfg.output_dir,
        "K": m.K, "BC": m.BC, "C": m.C, "l_D": m.l_D, "se_ratio": m.se_ratio, "n_fill": m.n_fill,
        "eta": cfg.loss.eta, "threshold": cfg.loss.binarize_threshold,
        "lr": cfg.lr, "lr_schedule": cfg.lr_schedule, "batch_size": cfg.batch_size,
        "epochs": cfg.epochs,
        "val_every": cfg.val_every, "checkpoint_every": cfg.checkpoint_every,
        "lipschitz_probes": cfg.lipschitz_probes,
        "n_scenes": cfg.n_scenes, "height": s.height, "width": s.width,
        "rank": s.background_rank, "background_scale": s.background_scale,
        "amp_lo": s.target_amplitude_range[0], "amp_hi": s.target_amplitude_range[1],
        "sigma_lo": s.target_sigma_range[0], "sigma_hi": s.target_sigma_range[1],
        "targets_min": cfg.target_count_range[0], "targets_max": cfg.target_count_range[1],
        "train_fraction": cfg.train_fraction, "eval_split": cfg.eval_split,
        "train_noise": cfg.train_noise,
    }
    for key, flag in zip(_SE_KEYS, m.se_enabled):
        pairs[key] = str(flag).lower()
    if cfg.data is not None:
        pairs["data"] = cfg.data
    return pairs


def format_config(cfg):
    return "".join(f"{k}={v}\n" for k, v in to_pairs(cfg).items())
