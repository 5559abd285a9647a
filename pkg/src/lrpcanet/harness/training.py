"""Mini-batch training loop with validation, Lipschitz logging and resumable
checkpoints."""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..metrics import pixel_metrics, total_loss
from ..model import LRPCANet, estimate_lipschitz
from ..model.lipschitz import MODULE_KINDS
from ..nn import Adam, sigmoid
from ..scenes import DatasetError, Sample, add_noise, load_dataset, split, synthetic_dataset
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, format_config, parse_noise

log = logging.getLogger(__name__)

TRAIN_LOG = "train_log.csv"
LIPSCHITZ_LOG = "lipschitz_log.csv"
TRAIN_COLUMNS = ("epoch", "seg_loss", "fidelity_loss", "total_loss", "val_miou")
LIPSCHITZ_COLUMNS = ("epoch", "module", "stage", "estimate")
LAST_CKPT = "last.ckpt"
BEST_CKPT = "best.ckpt"


class NumericalError(RuntimeError):
    """Non-finite value during training; names the first offending stage."""


@dataclass
class TrainResult:
    model: LRPCANet
    checkpoint: Checkpoint
    train_rows: list
    lipschitz_rows: list
    train_set: list
    val_set: list
    output_dir: Path


def build_datasets(cfg):
    """Return ``(train, val)`` for the configured data source."""
    if cfg.data is not None:
        samples = load_dataset(cfg.data)
    else:
        samples = synthetic_dataset(cfg.n_scenes, cfg.scene, cfg.seed, cfg.target_count_range)
    if not samples:
        raise DatasetError("dataset is empty")
    check_shapes(samples)
    return split(samples, cfg.seed, cfg.train_fraction)


def check_shapes(samples):
    """All images and masks must share one 2-D shape of at least 3x3."""
    for i, s in enumerate(samples):
        if s.image.ndim != 2 or s.image.shape != s.mask.shape:
            raise DatasetError(f"sample {i}: image {s.image.shape} and mask {s.mask.shape} do not match")
    shapes = {s.image.shape for s in samples}
    if len(shapes) > 1:
        raise DatasetError(f"all images must share one shape for batching, got {sorted(shapes)}")
    if shapes and min(next(iter(shapes))) < 3:
        raise DatasetError(f"images must be at least 3x3, got {next(iter(shapes))}")


def with_train_noise(samples, cfg):
    spec = parse_noise(cfg.train_noise)
    if spec is None:
        return samples
    # per-sample seeds in a stream separate from the evaluation sweeps
    return [Sample(add_noise(s.image, spec, seed=cfg.seed * 100003 + i), s.mask, s.meta)
            for i, s in enumerate(samples)]


def _ensure_writable(out):
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc


def stack(samples, dtype=np.float32):
    x = np.stack([s.image for s in samples])[:, None].astype(dtype)
    y = np.stack([s.mask for s in samples])[:, None].astype(dtype)
    return x, y


def predict(model, images, batch_size=8):
    """Eval-mode target probabilities ``sigmoid(T_K)`` for an (n,1,H,W) stack."""
    model.eval()
    out = [sigmoid(model.forward(images[i:i + batch_size])[0]) for i in range(0, len(images), batch_size)]
    return np.concatenate(out) if out else np.zeros_like(images)


def mean_miou(model, samples, threshold=0.5, batch_size=8):
    if not samples:
        return float("nan")
    x, y = stack(samples, model.dtype)
    p = predict(model, x, batch_size)
    return float(np.mean([pixel_metrics(p[i, 0], y[i, 0], threshold)[0] for i in range(len(p))]))


def learning_rate(cfg, epoch):
    """Rate used throughout ``epoch`` (1-based): ``cfg.lr`` at epoch 1, then a
    half-cosine towards 0 at ``epochs + 1`` unless the schedule is constant."""
    if cfg.lr_schedule == "constant" or cfg.epochs < 1:
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * (epoch - 1) / cfg.epochs))


def _first_nonfinite(trace):
    for k, rec in enumerate(trace):
        for name in ("B", "T", "N", "D"):
            if not np.all(np.isfinite(getattr(rec, name))):
                return k, name
    return None


def train_step(model, opt, x, y, loss_cfg):
    model.train()
    T, D = model.forward(x, keep_trace=True)
    p = sigmoid(T)
    (total, seg, fid), (dp, dD) = total_loss(p, y, D, x, loss_cfg, return_grad=True)
    if not np.isfinite(total):
        where = _first_nonfinite(model.last_trace)
        stage = f"stage {where[0] + 1} ({where[1]})" if where else "the loss head"
        raise NumericalError(f"non-finite loss {total}; first non-finite output in {stage}")
    dT = (dp * p * (1 - p)).astype(model.dtype)
    opt.zero_grad()
    model.backward((dT, dD.astype(model.dtype)))
    opt.step()
    return total, seg, fid


def _fmt(v):
    return "" if v is None else repr(float(v))


def _write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return [r for r in csv.reader(f)][1:]


def lipschitz_rows(model, epoch, probes, seed):
    rows = []
    for k in range(model.config.K):
        for kind in MODULE_KINDS:
            est = estimate_lipschitz(model, kind, k, probes, seed=seed)
            rows.append([str(epoch), kind, str(k + 1), repr(est.estimate)])
    return rows


def train(cfg, resume=False, datasets=None, progress=None):
    """Train per ``cfg``; artifacts go to ``cfg.output_dir``.

    ``resume=True`` continues from ``last.ckpt`` if present; logs are cut back to
    the checkpoint's epoch so the continued run matches an uninterrupted one.
    """
    out = Path(cfg.output_dir)
    _ensure_writable(out)
    train_set, val_set = datasets if datasets is not None else build_datasets(cfg)
    if not train_set:
        raise DatasetError("training split is empty")
    check_shapes(list(train_set) + list(val_set))
    x_all, y_all = stack(with_train_noise(train_set, cfg))

    model = LRPCANet(cfg.model, seed=cfg.seed)
    opt = Adam(model, lr=cfg.lr)
    start, best = 0, -np.inf
    train_rows, lip_rows = [], []
    if resume and (out / LAST_CKPT).exists():
        ck = load_checkpoint(out / LAST_CKPT, cfg.model)
        ck.restore_model(model)
        opt.state = ck.adam_state()
        start = ck.epoch
        stored = ck.extra.get("best_val_miou")
        best = -np.inf if stored is None else stored
        train_rows = [r for r in _read_csv(out / TRAIN_LOG) if int(r[0]) <= start]
        lip_rows = [r for r in _read_csv(out / LIPSCHITZ_LOG) if int(r[0]) <= start]
        log.info("resuming from epoch %d", start)
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    _write_csv(out / TRAIN_LOG, TRAIN_COLUMNS, train_rows)
    _write_csv(out / LIPSCHITZ_LOG, LIPSCHITZ_COLUMNS, lip_rows)

    ck = None
    n = len(x_all)
    for epoch in range(start + 1, cfg.epochs + 1):
        opt.state.lr = learning_rate(cfg, epoch)
        order = np.random.default_rng([cfg.seed, epoch, 7]).permutation(n)
        sums = np.zeros(3)
        batches = 0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            sums += train_step(model, opt, x_all[idx], y_all[idx], cfg.loss)
            batches += 1
        total, seg, fid = sums / batches
        val = None
        if epoch % cfg.val_every == 0 or epoch == cfg.epochs:
            val = mean_miou(model, val_set, cfg.loss.binarize_threshold, cfg.batch_size)
            lip_rows += lipschitz_rows(model, epoch, cfg.lipschitz_probes, cfg.seed)
        train_rows.append([str(epoch), _fmt(seg), _fmt(fid), _fmt(total), _fmt(val)])
        _write_csv(out / TRAIN_LOG, TRAIN_COLUMNS, train_rows)
        _write_csv(out / LIPSCHITZ_LOG, LIPSCHITZ_COLUMNS, lip_rows)
        improved = val is not None and val > best
        if improved:
            best = val
        if improved or epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
            extra = {"best_val_miou": float(best) if np.isfinite(best) else None}
            ck = Checkpoint.capture(model, opt.state, epoch, {"seed": cfg.seed, "next_epoch": epoch + 1}, extra)
            if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
                save_checkpoint(ck, out / LAST_CKPT)
            if improved:
                save_checkpoint(ck, out / BEST_CKPT)
        log.info("epoch %d total=%.5f seg=%.5f fid=%.6f val=%s", epoch, total, seg, fid, val)
        if progress is not None:
            progress(epoch, total, val)
    if ck is None:
        ck = Checkpoint.capture(model, opt.state, start, {"seed": cfg.seed, "next_epoch": start + 1},
                                {"best_val_miou": float(best) if np.isfinite(best) else None})
        save_checkpoint(ck, out / LAST_CKPT)
    return TrainResult(model, ck, train_rows, lip_rows, train_set, val_set, out)


def moving_average(values, window=5):
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v[:0]
    return np.convolve(v, np.ones(window) / window, mode="valid")
